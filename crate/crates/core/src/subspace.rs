//! Dense subspace primitives: orthonormal bases, the sine-of-largest-principal-angle
//! distance, symmetric eigendecomposition, the Davis–Kahan sin θ bound and
//! basis incoherence.

use nalgebra::{DMatrix, DVector};

use crate::bounds::BoundValue;
use crate::error::{Error, Result};

/// Tolerance on `max |PᵀP − I|` accepted for a basis matrix.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;
/// Relative singular value floor below which a matrix is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-12;
/// Relative asymmetry accepted by the symmetric eigensolver.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// A tall `n × r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    entries: DMatrix<f64>,
}

impl BasisMatrix {
    /// Wraps `entries` after checking `1 ≤ r ≤ n` and column orthonormality.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (n, r) = entries.shape();
        if r == 0 || r > n {
            return Err(Error::InvalidRank { r, n });
        }
        let gram = entries.transpose() * &entries;
        let dev = orthonormality_defect(&gram);
        if dev > ORTHONORMALITY_TOL {
            return Err(Error::Validation(format!(
                "columns are not orthonormal (max |PᵀP − I| = {dev:e})"
            )));
        }
        Ok(Self { entries })
    }

    pub(crate) fn from_orthonormal(entries: DMatrix<f64>) -> Self {
        debug_assert!(entries.ncols() >= 1 && entries.ncols() <= entries.nrows());
        Self { entries }
    }

    /// First `r` columns of the `n × n` identity.
    pub fn identity_columns(n: usize, r: usize) -> Result<Self> {
        if r == 0 || r > n {
            return Err(Error::InvalidRank { r, n });
        }
        Ok(Self { entries: DMatrix::identity(n, r) })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn r(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// `P Pᵀ`.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.entries * self.entries.transpose()
    }

    /// `(I − P Pᵀ) x` without forming the projector.
    pub fn project_out(&self, x: &DVector<f64>) -> DVector<f64> {
        let coeffs = self.entries.tr_mul(x);
        x - &self.entries * coeffs
    }
}

fn orthonormality_defect(gram: &DMatrix<f64>) -> f64 {
    let mut dev = 0.0f64;
    for j in 0..gram.ncols() {
        for i in 0..gram.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - target).abs());
        }
    }
    dev
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Spectral norm of a symmetric matrix, via its extreme eigenvalues.
pub fn symmetric_spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues().iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Orthonormal basis for the column space of a full-column-rank matrix.
///
/// Householder QR with the sign of each column fixed so that `R` has a
/// positive diagonal; the result coincides with classical Gram–Schmidt.
pub fn orthonormalize(m: &DMatrix<f64>) -> Result<BasisMatrix> {
    let (n, r) = m.shape();
    if r == 0 || r > n {
        return Err(Error::InvalidRank { r, n });
    }
    let sv = m.clone().singular_values();
    let largest = sv.max();
    let smallest = sv.min();
    let ratio = if largest > 0.0 { smallest / largest } else { 0.0 };
    if !(ratio > RANK_TOL) {
        return Err(Error::RankDeficient { ratio });
    }
    let qr = m.clone().qr();
    let rmat = qr.r();
    let mut q = qr.q();
    for j in 0..r {
        if rmat[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(BasisMatrix::from_orthonormal(q))
}

/// `SE(P̂, P) = ‖(I − P̂P̂ᵀ) P‖₂`, the sine of the largest principal angle.
pub fn subspace_error(phat: &BasisMatrix, p: &BasisMatrix) -> Result<f64> {
    if phat.n() != p.n() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has n = {}, reference has n = {}",
            phat.n(),
            p.n()
        )));
    }
    let coeffs = phat.matrix().tr_mul(p.matrix());
    let residual = p.matrix() - phat.matrix() * coeffs;
    Ok(spectral_norm(&residual))
}

/// Eigendecomposition of a real symmetric matrix, eigenvalues non-increasing.
#[derive(Debug, Clone)]
pub struct SymmetricEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: BasisMatrix,
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<()> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}×{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let scale = max_abs(s);
    let asym = max_abs(&(s - s.transpose()));
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

pub fn symmetric_eig(s: &DMatrix<f64>) -> Result<SymmetricEig> {
    check_symmetric(s)?;
    let n = s.nrows();
    if n == 0 {
        return Err(Error::InvalidRank { r: 0, n: 0 });
    }
    let eig = symmetrize(s).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(SymmetricEig {
        eigenvalues,
        eigenvectors: BasisMatrix::from_orthonormal(vectors),
    })
}

/// Eigenvalues only, non-increasing.
pub fn symmetric_eigenvalues(s: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_symmetric(s)?;
    let mut vals: Vec<f64> = symmetrize(s).symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    Ok(vals)
}

/// Basis for the invariant subspace of the `r` largest eigenvalues.
pub fn top_r_eigvecs(s: &DMatrix<f64>, r: usize) -> Result<BasisMatrix> {
    let n = s.nrows();
    if r == 0 || r > n {
        return Err(Error::InvalidRank { r, n });
    }
    let eig = symmetric_eig(s)?;
    let cols = eig.eigenvectors.matrix().columns(0, r).into_owned();
    Ok(BasisMatrix::from_orthonormal(cols))
}

/// `P_⊥` with `P Pᵀ + P_⊥ P_⊥ᵀ = I`.
pub fn orthogonal_complement(p: &BasisMatrix) -> Result<BasisMatrix> {
    let (n, r) = (p.n(), p.r());
    if r == n {
        return Err(Error::NoComplement);
    }
    let residual = DMatrix::identity(n, n) - p.projector();
    let comp = top_r_eigvecs(&residual, n - r)?;
    // eigenvectors of a projector are exact only up to rounding; re-orthonormalise
    // against P so the cross term is at machine precision.
    let cleaned = comp.matrix() - p.matrix() * p.matrix().tr_mul(comp.matrix());
    orthonormalize(&cleaned)
}

/// Davis–Kahan sin θ bound in its Weyl-relaxed form
/// `‖(D − D₀)P‖₂ / (λ_r(D₀) − λ_{r+1}(D₀) − λ_max(D − D₀))`.
///
/// `P` must span the top-`r` eigenspace of `D₀`; that is not checked.
pub fn davis_kahan_bound(d: &DMatrix<f64>, d0: &DMatrix<f64>, p: &BasisMatrix) -> Result<BoundValue> {
    let n = p.n();
    if d.shape() != (n, n) || d0.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "D is {:?}, D0 is {:?}, basis has n = {n}",
            d.shape(),
            d0.shape()
        )));
    }
    let r = p.r();
    if r == n {
        return Ok(BoundValue::Finite(0.0));
    }
    let pert = d - d0;
    let numerator = spectral_norm(&(&pert * p.matrix()));
    let vals0 = symmetric_eigenvalues(d0)?;
    let pert_max = symmetric_eigenvalues(&pert)?[0];
    let denominator = vals0[r - 1] - vals0[r] - pert_max;
    if denominator > 0.0 {
        Ok(BoundValue::Finite(numerator / denominator))
    } else {
        Ok(BoundValue::Infeasible)
    }
}

/// Incoherence `μ = sqrt(n/r · max_i ‖row_i(P)‖²)`.
pub fn incoherence(p: &BasisMatrix) -> f64 {
    let (n, r) = (p.n() as f64, p.r() as f64);
    let max_row = p
        .matrix()
        .row_iter()
        .map(|row| row.norm_squared())
        .fold(0.0f64, f64::max);
    (n / r * max_row).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn lcg_matrix(n: usize, r: usize, seed: u64) -> DMatrix<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        DMatrix::from_fn(n, r, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
    }

    /// Modified Gram–Schmidt, kept independent of the QR path.
    fn gram_schmidt(m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut q = m.clone();
        for j in 0..q.ncols() {
            for k in 0..j {
                let proj = q.column(k).dot(&q.column(j));
                let ck = q.column(k).into_owned();
                q.column_mut(j).axpy(-proj, &ck, 1.0);
            }
            let norm = q.column(j).norm();
            q.column_mut(j).scale_mut(1.0 / norm);
        }
        q
    }

    #[test]
    fn orthonormalize_identity_columns_is_unchanged() {
        let m = DMatrix::<f64>::identity(6, 3);
        let p = orthonormalize(&m).unwrap();
        assert!((p.matrix() - &m).amax() < 1e-15);
    }

    #[test]
    fn orthonormalize_axis_scaling() {
        let m = dmatrix![2.0, 0.0; 0.0, 3.0; 0.0, 0.0];
        let p = orthonormalize(&m).unwrap();
        assert!((p.matrix() - DMatrix::identity(3, 2)).amax() < 1e-15);
    }

    #[test]
    fn orthonormalize_matches_gram_schmidt() {
        let m = lcg_matrix(100, 5, 3);
        let p = orthonormalize(&m).unwrap();
        let gram = p.matrix().transpose() * p.matrix();
        assert!(orthonormality_defect(&gram) <= 1e-10);
        assert!((p.matrix() - gram_schmidt(&m)).amax() < 1e-10);
    }

    #[test]
    fn orthonormalize_rejects_rank_deficient() {
        let m = dmatrix![1.0, 2.0; 2.0, 4.0; 3.0, 6.0];
        assert!(matches!(orthonormalize(&m), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn basis_new_rejects_non_orthonormal() {
        assert!(BasisMatrix::new(dmatrix![1.0, 1.0; 0.0, 1.0]).is_err());
        assert!(matches!(
            BasisMatrix::new(DMatrix::zeros(2, 3)),
            Err(Error::InvalidRank { .. })
        ));
    }

    #[test]
    fn se_of_identical_subspaces_is_zero() {
        let p = orthonormalize(&lcg_matrix(20, 4, 1)).unwrap();
        assert!(subspace_error(&p, &p).unwrap() < 1e-14);
    }

    #[test]
    fn se_with_orthogonal_direction_is_one() {
        let n = 6;
        let r = 3;
        let phat = BasisMatrix::identity_columns(n, r).unwrap();
        let mut m = DMatrix::zeros(n, r);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        m[(3, 2)] = 1.0;
        let p = BasisMatrix::new(m).unwrap();
        assert!((subspace_error(&phat, &p).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn se_two_dimensional_angle() {
        let theta: f64 = 0.3;
        let phat = BasisMatrix::new(dmatrix![1.0; 0.0]).unwrap();
        let p = BasisMatrix::new(dmatrix![theta.cos(); theta.sin()]).unwrap();
        let se = subspace_error(&phat, &p).unwrap();
        assert!((se - theta.sin()).abs() < 1e-14);
        assert!((se - 0.29552).abs() < 1e-5);
    }

    #[test]
    fn se_dimension_mismatch() {
        let a = BasisMatrix::identity_columns(3, 1).unwrap();
        let b = BasisMatrix::identity_columns(4, 1).unwrap();
        assert!(matches!(subspace_error(&a, &b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn eig_diagonal() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let eig = symmetric_eig(&s).unwrap();
        assert_eq!(eig.eigenvalues, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn eig_two_by_two_closed_form() {
        let s = dmatrix![2.0, 0.1; 0.1, 0.5];
        let (tr, det) = (2.5f64, 2.0 * 0.5 - 0.01);
        let disc = (tr * tr - 4.0 * det).sqrt();
        let expected = [(tr + disc) / 2.0, (tr - disc) / 2.0];
        let eig = symmetric_eig(&s).unwrap();
        assert!((eig.eigenvalues[0] - expected[0]).abs() < 1e-13);
        assert!((eig.eigenvalues[1] - expected[1]).abs() < 1e-13);
        // frozen from the closed form
        assert!((eig.eigenvalues[0] - 2.006_637_3).abs() < 1e-7);
        assert!((eig.eigenvalues[1] - 0.493_362_7).abs() < 1e-7);
    }

    #[test]
    fn eig_zero_matrix() {
        let eig = symmetric_eig(&DMatrix::zeros(4, 4)).unwrap();
        assert!(eig.eigenvalues.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eig_rejects_asymmetric() {
        assert!(matches!(
            symmetric_eig(&dmatrix![1.0, 2.0; 0.0, 1.0]),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn top_r_diagonal() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 4.0, 1.0]));
        let p = top_r_eigvecs(&s, 2).unwrap();
        let expected = BasisMatrix::identity_columns(3, 2).unwrap();
        assert!(subspace_error(&p, &expected).unwrap() < 1e-14);
    }

    #[test]
    fn top_r_recovers_planted_subspace() {
        let p = orthonormalize(&lcg_matrix(30, 2, 9)).unwrap();
        let lam = DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 9.0]));
        let s = p.matrix() * lam * p.matrix().transpose();
        let est = top_r_eigvecs(&s, 2).unwrap();
        assert!(subspace_error(&est, &p).unwrap() <= 1e-8);
    }

    #[test]
    fn top_r_degenerate_spectrum_returns_unit_vector() {
        let p = top_r_eigvecs(&DMatrix::identity(4, 4), 1).unwrap();
        assert!((p.matrix().column(0).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn top_r_rejects_bad_rank() {
        assert!(matches!(
            top_r_eigvecs(&DMatrix::identity(3, 3), 4),
            Err(Error::InvalidRank { .. })
        ));
        assert!(top_r_eigvecs(&DMatrix::identity(3, 3), 0).is_err());
    }

    #[test]
    fn complement_of_e1() {
        let p = BasisMatrix::identity_columns(2, 1).unwrap();
        let c = orthogonal_complement(&p).unwrap();
        let e2 = BasisMatrix::new(dmatrix![0.0; 1.0]).unwrap();
        assert!(subspace_error(&c, &e2).unwrap() < 1e-14);
    }

    #[test]
    fn complement_of_identity_columns() {
        let p = BasisMatrix::identity_columns(7, 3).unwrap();
        let c = orthogonal_complement(&p).unwrap();
        assert_eq!(c.r(), 4);
        let tail = BasisMatrix::new(DMatrix::identity(7, 7).columns(3, 4).into_owned()).unwrap();
        assert!(subspace_error(&c, &tail).unwrap() < 1e-12);
    }

    #[test]
    fn complement_completeness_identity() {
        let p = orthonormalize(&lcg_matrix(50, 5, 4)).unwrap();
        let c = orthogonal_complement(&p).unwrap();
        assert_eq!(c.r(), 45);
        assert!((c.matrix().tr_mul(p.matrix())).amax() <= 1e-10);
        let total = p.projector() + c.projector();
        assert!((total - DMatrix::identity(50, 50)).amax() <= 1e-10);
    }

    #[test]
    fn complement_of_full_basis_fails() {
        let p = BasisMatrix::identity_columns(3, 3).unwrap();
        assert_eq!(orthogonal_complement(&p), Err(Error::NoComplement));
    }

    #[test]
    fn davis_kahan_zero_perturbation() {
        let d0 = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 0.0]));
        let p = BasisMatrix::identity_columns(3, 1).unwrap();
        assert_eq!(davis_kahan_bound(&d0, &d0, &p).unwrap(), BoundValue::Finite(0.0));
    }

    #[test]
    fn davis_kahan_two_by_two() {
        let d0 = dmatrix![2.0, 0.0; 0.0, 0.0];
        let d = dmatrix![2.0, 0.1; 0.1, 0.5];
        let p = BasisMatrix::identity_columns(2, 1).unwrap();
        // independent oracle: λ_max of [[0, .1], [.1, .5]] by the quadratic formula
        let pert_max = (0.5 + (0.25f64 + 0.04).sqrt()) / 2.0;
        let expected = 0.1 / (2.0 - 0.0 - pert_max);
        let bound = davis_kahan_bound(&d, &d0, &p).unwrap().finite().unwrap();
        assert!((bound - expected).abs() < 1e-13);
        assert!((bound - 0.067_534).abs() < 1e-6);
        // the true error: top eigenvector of D has tan θ = 0.1 / (λ₁ − 0.5)
        let l1 = (2.5 + (2.25f64 + 0.04).sqrt()) / 2.0;
        let true_se = (0.1f64 / (l1 - 0.5)).atan().sin();
        let phat = top_r_eigvecs(&d, 1).unwrap();
        let se = subspace_error(&phat, &p).unwrap();
        assert!((se - true_se).abs() < 1e-12);
        assert!(se <= bound);
    }

    #[test]
    fn davis_kahan_infeasible() {
        let d0 = dmatrix![1.0, 0.0; 0.0, 0.0];
        let d = dmatrix![1.0, 0.0; 0.0, 2.0];
        let p = BasisMatrix::identity_columns(2, 1).unwrap();
        assert_eq!(davis_kahan_bound(&d, &d0, &p).unwrap(), BoundValue::Infeasible);
    }

    #[test]
    fn davis_kahan_dimension_mismatch() {
        let p = BasisMatrix::identity_columns(3, 1).unwrap();
        let d = DMatrix::identity(2, 2);
        assert!(matches!(davis_kahan_bound(&d, &d, &p), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn incoherence_extremes() {
        let n = 16;
        let spike = BasisMatrix::identity_columns(n, 1).unwrap();
        assert!((incoherence(&spike) - (n as f64).sqrt()).abs() < 1e-12);
        let dense = BasisMatrix::new(DMatrix::from_element(n, 1, 1.0 / (n as f64).sqrt())).unwrap();
        assert!((incoherence(&dense) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn incoherence_matches_row_formula() {
        let p = orthonormalize(&lcg_matrix(100, 5, 11)).unwrap();
        let mut max_row = 0.0f64;
        for i in 0..100 {
            let mut s = 0.0;
            for j in 0..5 {
                s += p.matrix()[(i, j)] * p.matrix()[(i, j)];
            }
            max_row = max_row.max(s);
        }
        let mu = (100.0 / 5.0 * max_row).sqrt();
        assert!((incoherence(&p) - mu).abs() < 1e-12);
        assert!(incoherence(&p) >= 1.0 && incoherence(&p) <= 10.0);
    }
}
