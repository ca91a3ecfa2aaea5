//! Dense factorizations used by the estimators.

use nalgebra::{DMatrix, DVector};

/// Householder QR with column pivoting (largest remaining column norm first).
#[derive(Debug, Clone)]
pub struct PivotedQr {
    // Householder vectors on and below the diagonal, R strictly above it.
    packed: DMatrix<f64>,
    betas: Vec<f64>,
    r_diag: Vec<f64>,
    perm: Vec<usize>,
}

impl PivotedQr {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        let (m, n) = matrix.shape();
        let steps = m.min(n);
        let mut a = matrix;
        let mut perm: Vec<usize> = (0..n).collect();
        let mut norms: Vec<f64> = (0..n).map(|j| a.column(j).norm_squared()).collect();
        let mut reference = norms.clone();
        let mut betas = vec![0.0; steps];
        let mut r_diag = vec![0.0; steps];

        for k in 0..steps {
            let pivot = (k..n)
                .max_by(|&i, &j| norms[i].total_cmp(&norms[j]).then(j.cmp(&i)))
                .unwrap_or(k);
            if pivot != k {
                a.swap_columns(k, pivot);
                norms.swap(k, pivot);
                reference.swap(k, pivot);
                perm.swap(k, pivot);
            }

            let data = a.as_mut_slice();
            let col_k = k * m;
            let alpha = data[col_k + k..col_k + m]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if alpha == 0.0 {
                continue;
            }
            let x0 = data[col_k + k];
            let sign = if x0 >= 0.0 { 1.0 } else { -1.0 };
            data[col_k + k] = x0 + sign * alpha;
            r_diag[k] = -sign * alpha;
            let vv: f64 = data[col_k + k..col_k + m].iter().map(|v| v * v).sum();
            let beta = 2.0 / vv;
            betas[k] = beta;

            for j in k + 1..n {
                let col_j = j * m;
                let mut dot = 0.0;
                for i in k..m {
                    dot += data[col_k + i] * data[col_j + i];
                }
                let s = beta * dot;
                for i in k..m {
                    data[col_j + i] -= s * data[col_k + i];
                }
                let top = data[col_j + k];
                norms[j] -= top * top;
                if norms[j] <= 1e-10 * reference[j] {
                    norms[j] = data[col_j + k + 1..col_j + m].iter().map(|v| v * v).sum();
                    reference[j] = norms[j];
                }
            }
        }

        Self {
            packed: a,
            betas,
            r_diag,
            perm,
        }
    }

    pub fn nrows(&self) -> usize {
        self.packed.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.packed.ncols()
    }

    /// Diagonal of `R`, non-increasing in magnitude up to rounding.
    pub fn r_diagonal(&self) -> &[f64] {
        &self.r_diag
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Number of diagonal entries above `rtol · |r_11|`.
    pub fn rank(&self, rtol: f64) -> usize {
        let lead = self.r_diag.first().map_or(0.0, |v| v.abs());
        if lead == 0.0 {
            return 0;
        }
        self.r_diag
            .iter()
            .take_while(|v| v.abs() > rtol * lead)
            .count()
    }

    /// Default rank tolerance, `max(m, n) · ε`.
    pub fn default_rtol(&self) -> f64 {
        self.nrows().max(self.ncols()) as f64 * f64::EPSILON
    }

    /// `|r_min| / |r_max|` over the diagonal: a cheap conditioning estimate.
    pub fn diagonal_ratio(&self) -> f64 {
        let lead = self.r_diag.first().map_or(0.0, |v| v.abs());
        if lead == 0.0 {
            return 0.0;
        }
        let last = self.r_diag.last().map_or(0.0, |v| v.abs());
        if self.ncols() > self.nrows() {
            return 0.0;
        }
        last / lead
    }

    fn apply_qt(&self, b: &mut DVector<f64>) {
        let m = self.nrows();
        let data = self.packed.as_slice();
        for (k, &beta) in self.betas.iter().enumerate() {
            if beta == 0.0 {
                continue;
            }
            let col = &data[k * m..(k + 1) * m];
            let dot: f64 = (k..m).map(|i| col[i] * b[i]).sum();
            let s = beta * dot;
            for i in k..m {
                b[i] -= s * col[i];
            }
        }
    }

    /// Basic least-squares solution of `min ‖A x − b‖₂` using the leading
    /// `rank` columns; the remaining components are zero.
    pub fn solve_least_squares(&self, b: &DVector<f64>, rank: usize) -> DVector<f64> {
        let m = self.nrows();
        let mut qtb = b.clone();
        self.apply_qt(&mut qtb);
        let data = self.packed.as_slice();
        let mut z = vec![0.0; rank];
        for i in (0..rank).rev() {
            let mut acc = qtb[i];
            for j in i + 1..rank {
                acc -= data[j * m + i] * z[j];
            }
            z[i] = acc / self.r_diag[i];
        }
        let mut x = DVector::zeros(self.ncols());
        for (i, zi) in z.into_iter().enumerate() {
            x[self.perm[i]] = zi;
        }
        x
    }
}

/// Reciprocal condition number `σ_min / σ_max` from the singular values.
pub fn rcond(matrix: &DMatrix<f64>) -> f64 {
    if matrix.is_empty() {
        return 0.0;
    }
    let sv = matrix.singular_values();
    let max = sv.max();
    if !(max > 0.0) {
        return 0.0;
    }
    let min = if matrix.nrows() < matrix.ncols() { 0.0 } else { sv.min() };
    min / max
}
