#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparseconv::{Coords, Features, Lattice, Matrix, SparseTensor, Weights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random set of unique cells of a `b^3` box, each kept with probability `p`.
pub fn random_coords(rng: &mut ChaCha8Rng, b: u32, p: f64) -> (Coords, Lattice) {
    let lat = Lattice::new(1, &[b, b, b]).unwrap();
    let mut rows = Vec::new();
    for x in 0..b {
        for y in 0..b {
            for z in 0..b {
                if rng.gen_bool(p) {
                    rows.push([0, x, y, z]);
                }
            }
        }
    }
    if rows.is_empty() {
        rows.push([0, rng.gen_range(0..b), rng.gen_range(0..b), rng.gen_range(0..b)]);
    }
    (Coords::from_rows(3, &rows).unwrap(), lat)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f32> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, b: u32, p: f64, c: usize) -> SparseTensor {
    let (coords, lat) = random_coords(rng, b, p);
    let n = coords.len();
    SparseTensor::new(coords, Features::F32(random_matrix(rng, n, c)), 1, lat).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, k: usize, c_in: usize, c_out: usize) -> Weights {
    let vol = k.pow(3);
    let scale = (1.0 / (vol * c_in) as f32).sqrt();
    Weights::new(3, k, c_in, c_out, (0..vol * c_in * c_out).map(|_| rng.gen_range(-1.0f32..1.0) * scale).collect()).unwrap()
}

pub fn sorted_rows(c: &Coords) -> Vec<Vec<u32>> {
    let mut v: Vec<Vec<u32>> = c.iter().map(<[u32]>::to_vec).collect();
    v.sort();
    v
}
