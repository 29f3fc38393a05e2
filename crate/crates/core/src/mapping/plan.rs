use super::kmap::KernelMap;

/// Inverted views of a kernel map for locality-aware data movement.
///
/// Buffer row `cumulative[n] + i` holds the i-th entry of offset `n`. The
/// input-stationary index lists, for each input row, the buffer rows it is
/// copied into; the output-stationary index lists, for each output row, the
/// buffer rows reduced into it. Both lists are in ascending buffer-row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatherScatterPlan {
    n_in: usize,
    n_out: usize,
    cumulative: Vec<usize>,
    /// Buffer row -> input row (weight-stationary order).
    row_input: Vec<u32>,
    /// Buffer row -> output row (weight-stationary order).
    row_output: Vec<u32>,
    in_ptr: Vec<usize>,
    in_dest: Vec<u32>,
    out_ptr: Vec<usize>,
    out_src: Vec<u32>,
}

fn invert(targets: &[u32], n: usize) -> (Vec<usize>, Vec<u32>) {
    let mut ptr = vec![0usize; n + 1];
    for &t in targets {
        ptr[t as usize + 1] += 1;
    }
    for i in 0..n {
        ptr[i + 1] += ptr[i];
    }
    let mut fill = ptr.clone();
    let mut rows = vec![0u32; targets.len()];
    for (row, &t) in targets.iter().enumerate() {
        let at = &mut fill[t as usize];
        rows[*at] = row as u32;
        *at += 1;
    }
    (ptr, rows)
}

impl GatherScatterPlan {
    pub fn new(map: &KernelMap) -> Self {
        let cumulative = map.cumulative();
        let total = *cumulative.last().unwrap();
        let mut row_input = Vec::with_capacity(total);
        let mut row_output = Vec::with_capacity(total);
        for list in map.all_entries() {
            for e in list {
                row_input.push(e.input);
                row_output.push(e.output);
            }
        }
        let (in_ptr, in_dest) = invert(&row_input, map.n_in());
        let (out_ptr, out_src) = invert(&row_output, map.n_out());
        GatherScatterPlan {
            n_in: map.n_in(),
            n_out: map.n_out(),
            cumulative,
            row_input,
            row_output,
            in_ptr,
            in_dest,
            out_ptr,
            out_src,
        }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    /// Number of buffer rows, `|M|`.
    pub fn total(&self) -> usize {
        self.row_input.len()
    }

    pub fn cumulative(&self) -> &[usize] {
        &self.cumulative
    }

    pub fn volume(&self) -> usize {
        self.cumulative.len() - 1
    }

    /// Buffer rows of offset `n`.
    pub fn offset_rows(&self, n: usize) -> std::ops::Range<usize> {
        self.cumulative[n]..self.cumulative[n + 1]
    }

    pub fn row_input(&self) -> &[u32] {
        &self.row_input
    }

    pub fn row_output(&self) -> &[u32] {
        &self.row_output
    }

    /// Buffer rows fed by input row `j`.
    #[inline]
    pub fn destinations(&self, j: usize) -> &[u32] {
        &self.in_dest[self.in_ptr[j]..self.in_ptr[j + 1]]
    }

    /// Buffer rows reduced into output row `k`.
    #[inline]
    pub fn sources(&self, k: usize) -> &[u32] {
        &self.out_src[self.out_ptr[k]..self.out_ptr[k + 1]]
    }

    pub fn all_destinations(&self) -> &[u32] {
        &self.in_dest
    }

    pub fn all_sources(&self) -> &[u32] {
        &self.out_src
    }

    /// Inputs referenced by at least one entry.
    pub fn active_inputs(&self) -> usize {
        (0..self.n_in).filter(|&j| self.in_ptr[j + 1] > self.in_ptr[j]).count()
    }

    /// Outputs receiving at least one entry.
    pub fn active_outputs(&self) -> usize {
        (0..self.n_out).filter(|&k| self.out_ptr[k + 1] > self.out_ptr[k]).count()
    }
}

/// Build the plan for a kernel map.
pub fn build_gather_scatter_plan(map: &KernelMap) -> GatherScatterPlan {
    GatherScatterPlan::new(map)
}
