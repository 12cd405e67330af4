//! Thomas algorithm for tridiagonal systems.
//!
//! The heat half-step solves the same matrix for every `e` row, so the
//! forward sweep is factored once and reused.

/// LU factors of a tridiagonal matrix, `lower[k] x[k-1] + diag[k] x[k] + upper[k] x[k+1]`.
#[derive(Debug, Clone)]
pub(crate) struct TridiagonalFactor {
    lower: Vec<f64>,
    inv_pivot: Vec<f64>,
    upper_scaled: Vec<f64>,
}

impl TridiagonalFactor {
    /// `lower[0]` and `upper[n-1]` are ignored. Returns `None` on a zero pivot.
    pub(crate) fn new(lower: &[f64], diag: &[f64], upper: &[f64]) -> Option<Self> {
        let n = diag.len();
        debug_assert!(lower.len() == n && upper.len() == n);
        let mut inv_pivot = vec![0.0; n];
        let mut upper_scaled = vec![0.0; n];
        let mut prev = 0.0;
        for k in 0..n {
            let pivot = if k == 0 {
                diag[0]
            } else {
                diag[k] - lower[k] * prev
            };
            if pivot == 0.0 || !pivot.is_finite() {
                return None;
            }
            inv_pivot[k] = 1.0 / pivot;
            prev = upper[k] * inv_pivot[k];
            upper_scaled[k] = prev;
        }
        Some(Self {
            lower: lower.to_vec(),
            inv_pivot,
            upper_scaled,
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    /// Overwrites `rhs` with the solution.
    pub(crate) fn solve(&self, rhs: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(rhs.len(), n);
        if n == 0 {
            return;
        }
        rhs[0] *= self.inv_pivot[0];
        for k in 1..n {
            rhs[k] = (rhs[k] - self.lower[k] * rhs[k - 1]) * self.inv_pivot[k];
        }
        for k in (0..n - 1).rev() {
            rhs[k] -= self.upper_scaled[k] * rhs[k + 1];
        }
    }
}
