//! Dense least squares primitives.
//!
//! Householder QR with column pivoting is the single route used for
//! projections, rank checks and least squares solves. A column is treated
//! as dependent once its residual norm, after removing the columns already
//! accepted, falls below `RANK_TOL` times its original norm.

use nalgebra::{DMatrix, DVector};

pub const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct PivotedQr {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    pivots: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    /// Orthonormal basis (n x rank) of the column space.
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Upper triangular factor (rank x rank) on the accepted columns.
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Original indices of the accepted columns, in pivot order.
    pub fn kept(&self) -> &[usize] {
        &self.pivots[..self.rank]
    }

    /// Original indices of the columns dropped as linearly dependent.
    pub fn dropped(&self) -> Vec<usize> {
        let mut d = self.pivots[self.rank..].to_vec();
        d.sort_unstable();
        d
    }
}

pub fn pivoted_qr(a: &DMatrix<f64>) -> PivotedQr {
    let (n, p) = a.shape();
    let mut work = a.clone();
    let mut pivots: Vec<usize> = (0..p).collect();
    let mut orig: Vec<f64> = (0..p).map(|j| work.column(j).norm()).collect();
    let mut resid = orig.clone();
    let mut reflectors: Vec<DVector<f64>> = Vec::new();
    let mut rank = 0;

    for k in 0..n.min(p) {
        let candidate = (k..p)
            .filter(|&j| orig[j] > 0.0 && resid[j] > RANK_TOL * orig[j])
            .max_by(|&i, &j| resid[i].total_cmp(&resid[j]));
        let Some(j) = candidate else { break };
        if j != k {
            work.swap_columns(k, j);
            pivots.swap(k, j);
            orig.swap(k, j);
            resid.swap(k, j);
        }

        let x = work.view((k, k), (n - k, 1)).clone_owned();
        let xnorm = x.norm();
        let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
        let mut v = DVector::from_iterator(n - k, x.iter().copied());
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 > 0.0 {
            let mut block = work.view_mut((k, k), (n - k, p - k));
            let w = block.tr_mul(&v) * (2.0 / vnorm2);
            block.ger(-1.0, &v, &w, 1.0);
        }
        work[(k, k)] = alpha;
        for i in k + 1..n {
            work[(i, k)] = 0.0;
        }
        let scale = vnorm2.sqrt();
        reflectors.push(if scale > 0.0 { v / scale } else { v });
        rank += 1;

        for jj in k + 1..p {
            resid[jj] = work.view((k + 1, jj), (n - k - 1, 1)).norm();
        }
    }

    let mut q = DMatrix::<f64>::zeros(n, rank);
    for i in 0..rank {
        q[(i, i)] = 1.0;
    }
    for (k, v) in reflectors.iter().enumerate().rev() {
        let mut block = q.view_mut((k, 0), (n - k, rank));
        let w = block.tr_mul(v) * 2.0;
        block.ger(-1.0, v, &w, 1.0);
    }
    let r = work.view((0, 0), (rank, rank)).upper_triangle();

    PivotedQr {
        q,
        r,
        pivots,
        rank,
    }
}

/// Orthogonal projector onto the column space of a matrix, stored through
/// an orthonormal basis so that it is never materialised unless asked for.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: DMatrix<f64>,
}

impl Projector {
    pub fn onto(a: &DMatrix<f64>) -> Self {
        Projector {
            basis: pivoted_qr(a).q,
        }
    }

    pub fn from_basis(basis: DMatrix<f64>) -> Self {
        Projector { basis }
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.basis * self.basis.tr_mul(x)
    }

    /// `x - P x`, the component orthogonal to the column space.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        x - self.project(x)
    }

    pub fn residual_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x - &self.basis * self.basis.tr_mul(x)
    }

    /// Dense `I - P`.
    pub fn complement_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::identity(n, n) - &self.basis * self.basis.transpose()
    }

    /// Dense `P`.
    pub fn matrix(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

/// Least squares coefficients; columns dropped for rank get coefficient zero.
pub fn solve_least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let qr = pivoted_qr(a);
    let rhs = qr.q.tr_mul(y);
    let k = qr.rank;
    let mut coef = DVector::zeros(k);
    for i in (0..k).rev() {
        let mut s = rhs[i];
        for j in i + 1..k {
            s -= qr.r[(i, j)] * coef[j];
        }
        coef[i] = s / qr.r[(i, i)];
    }
    let mut out = DVector::zeros(a.ncols());
    for (pos, &col) in qr.kept().iter().enumerate() {
        out[col] = coef[pos];
    }
    out
}

/// Grows an orthonormal basis one column at a time, rejecting columns that
/// are (numerically) in the span of what is already there.
#[derive(Debug, Clone)]
pub struct IncrementalBasis {
    q: DMatrix<f64>,
}

impl IncrementalBasis {
    pub fn new(base: &DMatrix<f64>) -> Self {
        IncrementalBasis {
            q: pivoted_qr(base).q,
        }
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    /// Returns `true` if the column enlarged the span.
    pub fn push(&mut self, col: &DVector<f64>) -> bool {
        let norm = col.norm();
        if norm == 0.0 {
            return false;
        }
        let mut r = col - &self.q * self.q.tr_mul(col);
        r -= &self.q * self.q.tr_mul(&r);
        let rn = r.norm();
        if rn <= RANK_TOL * norm {
            return false;
        }
        let k = self.q.ncols();
        let q = std::mem::replace(&mut self.q, DMatrix::zeros(0, 0));
        self.q = q.insert_column(k, 0.0);
        self.q.set_column(k, &(r / rn));
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        DMatrix::from_fn(n, p, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    #[test]
    fn full_rank_reconstruction() {
        let a = sample(30, 5, 1);
        let qr = pivoted_qr(&a);
        assert_eq!(qr.rank(), 5);
        let qtq = qr.q().tr_mul(qr.q());
        assert!((qtq - DMatrix::identity(5, 5)).amax() < 1e-12);
        let mut ap = DMatrix::zeros(30, 5);
        for (k, &c) in qr.kept().iter().enumerate() {
            ap.set_column(k, &a.column(c));
        }
        assert!((qr.q() * qr.r() - ap).amax() < 1e-12);
    }

    #[test]
    fn drops_dependent_columns() {
        let mut a = sample(20, 4, 2);
        let dup = a.column(0) * 2.0 - a.column(2);
        a = a.insert_column(4, 0.0);
        a.set_column(4, &dup);
        a = a.insert_column(5, 0.0);
        let qr = pivoted_qr(&a);
        assert_eq!(qr.rank(), 4);
        assert_eq!(qr.dropped().len(), 2);
        assert!(qr.dropped().contains(&5));
    }

    #[test]
    fn projector_laws() {
        let a = sample(25, 3, 3);
        let p = Projector::onto(&a);
        let pm = p.matrix();
        assert!((&pm * &pm - &pm).amax() < 1e-12);
        assert!((&pm - pm.transpose()).amax() < 1e-12);
        let x = sample(25, 1, 4).column(0).clone_owned();
        let r = p.residual(&x);
        assert!(a.tr_mul(&r).amax() < 1e-12);
    }

    #[test]
    fn least_squares_matches_normal_equations() {
        let a = sample(40, 3, 5);
        let y = sample(40, 1, 6).column(0).clone_owned();
        let coef = solve_least_squares(&a, &y);
        let ata = a.tr_mul(&a);
        let direct = ata.try_inverse().unwrap() * a.tr_mul(&y);
        assert!((coef - direct).amax() < 1e-10);
    }

    #[test]
    fn zero_width_projector() {
        let p = Projector::onto(&DMatrix::zeros(5, 2));
        assert_eq!(p.rank(), 0);
        let x = DVector::from_element(5, 1.0);
        assert_eq!(p.residual(&x), x);
    }

    #[test]
    fn incremental_basis_rejects_span_members() {
        let a = sample(15, 2, 7);
        let mut basis = IncrementalBasis::new(&a);
        let inside = a.column(0) + a.column(1) * 3.0;
        assert!(!basis.push(&inside));
        let outside = sample(15, 1, 8).column(0).clone_owned();
        assert!(basis.push(&outside));
        assert_eq!(basis.rank(), 3);
    }
}
