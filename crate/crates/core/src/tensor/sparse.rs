use ndarray::Array2;

/// Constant sparse matrix stored row-wise as `(column, weight)` lists.
///
/// Used for neighbourhood aggregation and masked row means, where the
/// structure is fixed by the graph and never learned.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert!(rows.iter().flatten().all(|&(c, _)| c < cols));
        SparseRows { cols, rows }
    }

    /// One output row per group holding the arithmetic mean of the listed rows.
    pub fn row_means(cols: usize, groups: &[Vec<usize>]) -> Self {
        let rows = groups
            .iter()
            .map(|g| {
                let w = 1.0 / g.len().max(1) as f64;
                g.iter().map(|&c| (c, w)).collect()
            })
            .collect();
        SparseRows::new(cols, rows)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols)
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.shape());
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, w) in row {
                out[[r, c]] += w;
            }
        }
        out
    }

    pub(crate) fn matmul(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.rows.len(), x.ncols()));
        for (r, row) in self.rows.iter().enumerate() {
            let mut dst = out.row_mut(r);
            for &(c, w) in row {
                dst.scaled_add(w, &x.row(c));
            }
        }
        out
    }

    /// `selfᵀ · g`, the adjoint used in the backward pass.
    pub(crate) fn transpose_matmul(&self, g: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.cols, g.ncols()));
        for (r, row) in self.rows.iter().enumerate() {
            let src = g.row(r);
            for &(c, w) in row {
                out.row_mut(c).scaled_add(w, &src);
            }
        }
        out
    }
}
