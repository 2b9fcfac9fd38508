//! Dense least-squares kernels.
//!
//! Householder QR with column pivoting on column norms (Businger–Golub).
//! The pivoted diagonal of `R` is non-increasing in magnitude, which makes
//! the relative-tolerance rank test meaningful.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative tolerance on `|R_ii| / |R_00|` below which a column is treated
/// as linearly dependent on the ones before it.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Householder vectors below the diagonal, `R` on and above it.
    qr: DMatrix<f64>,
    tau: Vec<f64>,
    /// `perm[i]` is the original column index sitting at position `i`.
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(mut a: DMatrix<f64>) -> Self {
        let (n, k) = a.shape();
        let steps = n.min(k);
        let mut perm: Vec<usize> = (0..k).collect();
        let mut tau = vec![0.0; steps];

        for i in 0..steps {
            // Recompute trailing norms each step; k is small so this is cheap
            // and avoids the downdating cancellation problem.
            let mut best = i;
            let mut best_norm = -1.0;
            for j in i..k {
                let s: f64 = (i..n).map(|r| a[(r, j)] * a[(r, j)]).sum();
                if s > best_norm {
                    best_norm = s;
                    best = j;
                }
            }
            if best != i {
                a.swap_columns(i, best);
                perm.swap(i, best);
            }

            let norm = best_norm.sqrt();
            if norm == 0.0 {
                tau[i] = 0.0;
                continue;
            }
            let x0 = a[(i, i)];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let v0 = x0 - alpha;
            // v = x - alpha e1, scaled so that v[0] = 1
            for r in (i + 1)..n {
                a[(r, i)] /= v0;
            }
            tau[i] = -v0 / alpha;
            a[(i, i)] = alpha;

            for j in (i + 1)..k {
                let mut dot = a[(i, j)];
                for r in (i + 1)..n {
                    dot += a[(r, i)] * a[(r, j)];
                }
                let s = tau[i] * dot;
                a[(i, j)] -= s;
                for r in (i + 1)..n {
                    let vr = a[(r, i)];
                    a[(r, j)] -= s * vr;
                }
            }
        }

        let lead = if steps > 0 { a[(0, 0)].abs() } else { 0.0 };
        let rank = if lead == 0.0 {
            0
        } else {
            (0..steps)
                .take_while(|&i| a[(i, i)].abs() > RANK_TOL * lead)
                .count()
        };

        PivotedQr {
            qr: a,
            tau,
            perm,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn ncols(&self) -> usize {
        self.qr.ncols()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.qr.ncols()
    }

    /// Original indices of columns that the pivoting pushed past the rank.
    pub fn dependent_columns(&self) -> Vec<usize> {
        let mut cols = self.perm[self.rank..].to_vec();
        cols.sort_unstable();
        cols
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Applies `Qᵀ` to `y` in place.
    fn apply_qt(&self, y: &mut DVector<f64>) {
        let n = self.qr.nrows();
        for (i, &t) in self.tau.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            let mut dot = y[i];
            for r in (i + 1)..n {
                dot += self.qr[(r, i)] * y[r];
            }
            let s = t * dot;
            y[i] -= s;
            for r in (i + 1)..n {
                y[r] -= s * self.qr[(r, i)];
            }
        }
    }

    /// Basic least-squares solution: coefficients of dependent columns are 0.
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let k = self.qr.ncols();
        let r = self.rank;
        let mut qty = y.clone();
        self.apply_qt(&mut qty);
        let mut z = DVector::zeros(k);
        for i in (0..r).rev() {
            let mut acc = qty[i];
            for j in (i + 1)..r {
                acc -= self.qr[(i, j)] * z[j];
            }
            z[i] = acc / self.qr[(i, i)];
        }
        let mut beta = DVector::zeros(k);
        for (pos, &col) in self.perm.iter().enumerate() {
            beta[col] = z[pos];
        }
        beta
    }

    /// Residual sum of squares of the least-squares fit, valid at any rank.
    pub fn rss(&self, y: &DVector<f64>) -> f64 {
        let mut qty = y.clone();
        self.apply_qt(&mut qty);
        qty.iter().skip(self.rank).map(|v| v * v).sum()
    }

    /// `(XᵀX)⁻¹` in the original column order. Requires full rank.
    pub fn xtx_inverse(&self) -> DMatrix<f64> {
        let k = self.qr.ncols();
        debug_assert!(self.is_full_rank());
        // R⁻¹ by back substitution on the identity
        let mut rinv = DMatrix::zeros(k, k);
        for c in 0..k {
            for i in (0..=c).rev() {
                let mut acc = if i == c { 1.0 } else { 0.0 };
                for j in (i + 1)..=c {
                    acc -= self.qr[(i, j)] * rinv[(j, c)];
                }
                rinv[(i, c)] = acc / self.qr[(i, i)];
            }
        }
        let pinv = &rinv * rinv.transpose();
        let mut out = DMatrix::zeros(k, k);
        for a in 0..k {
            for b in 0..k {
                out[(self.perm[a], self.perm[b])] = pinv[(a, b)];
            }
        }
        symmetrize(&mut out);
        out
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for a in 0..k {
        for b in (a + 1)..k {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

/// Moore–Penrose inverse of a symmetric matrix via its eigen decomposition.
#[derive(Debug, Clone)]
pub struct SymmetricPinv {
    pub inverse: DMatrix<f64>,
    pub rank: usize,
    /// True when any eigenvalue fell at or below the cutoff, i.e. the input
    /// was not positive definite.
    pub not_positive_definite: bool,
}

/// Eigenvalues at or below `rel_cutoff * max eigenvalue` are discarded.
pub fn symmetric_pinv(m: &DMatrix<f64>, rel_cutoff: f64) -> SymmetricPinv {
    let k = m.nrows();
    if k == 0 {
        return SymmetricPinv {
            inverse: DMatrix::zeros(0, 0),
            rank: 0,
            not_positive_definite: false,
        };
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let cutoff = rel_cutoff * max_ev.max(0.0);
    let mut inverse = DMatrix::zeros(k, k);
    let mut rank = 0;
    let mut not_pd = false;
    for (idx, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev > cutoff && ev > 0.0 {
            rank += 1;
            let v = eig.eigenvectors.column(idx);
            inverse += (v * v.transpose()) / ev;
        } else {
            not_pd = true;
        }
    }
    symmetrize(&mut inverse);
    SymmetricPinv {
        inverse,
        rank,
        not_positive_definite: not_pd,
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
