//! Dense GEMM with f32 accumulation, over any storage precision.

use crate::precision::{as_f32_slice_mut, widen, Scalar};

/// `c = a * b + beta * c` for row-major `a: m x k`, `b: k x n`, `c: m x n`.
pub fn sgemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], beta: f32) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: bounds checked above; strides describe dense row-major operands.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out = rows(a) * w` where `a` holds `rows x c_in` elements of any storage
/// precision and `out` receives `rows x c_out` elements of the same precision.
pub fn matmul_rows<T: Scalar>(a: &[T], rows: usize, w: &[f32], c_in: usize, c_out: usize, out: &mut [T]) {
    let a = widen(&a[..rows * c_in]);
    let out = &mut out[..rows * c_out];
    match as_f32_slice_mut(out) {
        Some(o) => sgemm(rows, c_in, c_out, &a, w, o, 0.0),
        None => {
            let mut tmp = vec![0.0f32; rows * c_out];
            sgemm(rows, c_in, c_out, &a, w, &mut tmp, 0.0);
            out.iter_mut().zip(&tmp).for_each(|(o, &v)| *o = T::from_f32(v));
        }
    }
}
