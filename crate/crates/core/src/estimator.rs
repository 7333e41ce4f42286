//! Sample covariance, PCA subspace estimate, and the two automatic rank estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::subspace::{self, BasisMatrix};

/// Observed data matrix `[y_1, …, y_α]`, one column per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    columns: DMatrix<f64>,
}

impl DataBatch {
    pub fn new(columns: DMatrix<f64>) -> Result<Self> {
        if columns.ncols() == 0 || columns.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(Self { columns })
    }

    pub fn from_columns(cols: &[DVector<f64>]) -> Result<Self> {
        let first = cols.first().ok_or(Error::EmptyBatch)?;
        if cols.iter().any(|c| c.len() != first.len()) {
            return Err(Error::DimensionMismatch("columns have different lengths".into()));
        }
        Self::new(DMatrix::from_columns(cols))
    }

    pub fn n(&self) -> usize {
        self.columns.nrows()
    }

    pub fn alpha(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }
}

/// Frames per rank-k update in [`CovarianceAccumulator`].
pub const DEFAULT_CHUNK: usize = 256;

const SYRK_BLOCK: usize = 64;

/// Streaming `Σ y_t y_tᵀ`. Frames are buffered and folded in with a
/// rank-`k` update, so the result depends only on the frame order and the
/// chunk size, never on timing.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    n: usize,
    chunk: usize,
    buffer: Vec<f64>,
    buffered: usize,
    sum: Vec<f64>,
    count: usize,
}

impl CovarianceAccumulator {
    pub fn new(n: usize) -> Self {
        Self::with_chunk(n, DEFAULT_CHUNK)
    }

    pub fn with_chunk(n: usize, chunk: usize) -> Self {
        let chunk = chunk.max(1);
        Self { n, chunk, buffer: vec![0.0; n * chunk], buffered: 0, sum: vec![0.0; n * n], count: 0 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, y: &[f64]) {
        assert_eq!(y.len(), self.n, "frame length does not match accumulator dimension");
        let off = self.buffered * self.n;
        self.buffer[off..off + self.n].copy_from_slice(y);
        self.buffered += 1;
        self.count += 1;
        if self.buffered == self.chunk {
            self.flush();
        }
    }

    /// Pushes every column of an `n × k` matrix in order.
    pub fn push_columns(&mut self, ys: &DMatrix<f64>) {
        assert_eq!(ys.nrows(), self.n, "frame length does not match accumulator dimension");
        for col in ys.column_iter() {
            self.push(col.as_slice());
        }
    }

    fn flush(&mut self) {
        let (n, k) = (self.n, self.buffered);
        if k == 0 {
            return;
        }
        // lower block triangle of sum += Y Yᵀ, Y = buffer as n × k column-major
        let y = self.buffer.as_ptr();
        let c = self.sum.as_mut_ptr();
        for i0 in (0..n).step_by(SYRK_BLOCK) {
            let mi = SYRK_BLOCK.min(n - i0);
            for j0 in (0..=i0).step_by(SYRK_BLOCK) {
                let mj = SYRK_BLOCK.min(n - j0);
                // SAFETY: every offset stays inside the n × k buffer and the n × n sum.
                unsafe {
                    matrixmultiply::dgemm(
                        mi,
                        k,
                        mj,
                        1.0,
                        y.add(i0),
                        1,
                        n as isize,
                        y.add(j0),
                        n as isize,
                        1,
                        1.0,
                        c.add(i0 + j0 * n),
                        1,
                        n as isize,
                    );
                }
            }
        }
        self.buffered = 0;
    }

    /// Unnormalised `Σ y_t y_tᵀ`.
    pub fn sum(&mut self) -> DMatrix<f64> {
        self.flush();
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| {
            // read from the lower block triangle
            let (bi, bj) = (i / SYRK_BLOCK, j / SYRK_BLOCK);
            if bi > bj || (bi == bj && i >= j) {
                self.sum[i + j * n]
            } else {
                self.sum[j + i * n]
            }
        })
    }

    /// `D = (1/α) Σ y_t y_tᵀ`.
    pub fn covariance(&mut self) -> Result<DMatrix<f64>> {
        if self.count == 0 {
            return Err(Error::EmptyBatch);
        }
        let count = self.count as f64;
        Ok(self.sum() / count)
    }
}

/// `D = (1/α) Σ_t y_t y_tᵀ`.
pub fn sample_covariance(batch: &DataBatch) -> Result<DMatrix<f64>> {
    let mut acc = CovarianceAccumulator::new(batch.n());
    acc.push_columns(batch.columns());
    acc.covariance()
}

/// Top-`r` eigenvectors of the sample covariance.
pub fn pca_estimate(batch: &DataBatch, r: usize) -> Result<BasisMatrix> {
    subspace::top_r_eigvecs(&sample_covariance(batch)?, r)
}

/// Number of leading eigenvalues at or above `0.5 λ⁻` (0 if none).
pub fn rank_from_threshold(eigenvalues_desc: &[f64], lambda_minus: f64) -> usize {
    let threshold = 0.5 * lambda_minus;
    eigenvalues_desc.iter().take_while(|&&l| l >= threshold).count()
}

pub fn estimate_rank_threshold(d: &DMatrix<f64>, lambda_minus: f64) -> Result<usize> {
    if !(lambda_minus > 0.0) {
        return Err(Error::Validation(format!("lambda_minus = {lambda_minus} must be positive")));
    }
    Ok(rank_from_threshold(&subspace::symmetric_eigenvalues(d)?, lambda_minus))
}

/// `argmax_{1 ≤ j ≤ max_rank} λ_j − λ_{j+1}`, smallest `j` on ties.
pub fn rank_from_eigengap(eigenvalues_desc: &[f64], max_rank: usize) -> Result<usize> {
    let n = eigenvalues_desc.len();
    if max_rank == 0 || max_rank >= n {
        return Err(Error::InvalidRank { r: max_rank, n });
    }
    let mut best = (1, f64::NEG_INFINITY);
    for j in 1..=max_rank {
        let gap = eigenvalues_desc[j - 1] - eigenvalues_desc[j];
        if gap > best.1 {
            best = (j, gap);
        }
    }
    Ok(best.0)
}

/// Default eigen-gap search range `⌊n/2⌋` (at least 1).
pub fn default_max_rank(n: usize) -> usize {
    (n / 2).max(1)
}

pub fn estimate_rank_eigengap(d: &DMatrix<f64>, max_rank: usize) -> Result<usize> {
    rank_from_eigengap(&subspace::symmetric_eigenvalues(d)?, max_rank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_random_basis, CoefficientDistribution, SignalModel};
    use crate::rng::{substream, Stream};
    use crate::subspace::subspace_error;
    use proptest::prelude::*;

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        DMatrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn covariance_of_unit_vectors() {
        let b = DataBatch::from_columns(&[DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0])]).unwrap();
        assert_eq!(sample_covariance(&b).unwrap(), DMatrix::identity(2, 2) * 0.5);
    }

    #[test]
    fn covariance_of_single_column() {
        let y = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let b = DataBatch::from_columns(std::slice::from_ref(&y)).unwrap();
        assert_eq!(sample_covariance(&b).unwrap(), &y * y.transpose());
    }

    #[test]
    fn covariance_matches_double_loop() {
        for (n, alpha, chunk) in [(7, 1000, 256), (13, 77, 5), (4, 3, 256), (130, 300, 64)] {
            let y = lcg_matrix(n, alpha, n as u64 * 31 + alpha as u64);
            let mut naive = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for t in 0..alpha {
                        s += y[(i, t)] * y[(j, t)];
                    }
                    naive[(i, j)] = s / alpha as f64;
                }
            }
            let mut acc = CovarianceAccumulator::with_chunk(n, chunk);
            acc.push_columns(&y);
            let d = acc.covariance().unwrap();
            assert!((d - &naive).amax() <= 1e-12 * naive.amax().max(1.0));
        }
    }

    #[test]
    fn covariance_is_deterministic_and_symmetric() {
        let y = lcg_matrix(9, 600, 3);
        let b = DataBatch::new(y).unwrap();
        let d1 = sample_covariance(&b).unwrap();
        let d2 = sample_covariance(&b).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1, d1.transpose());
    }

    #[test]
    fn empty_batch_rejected() {
        assert_eq!(DataBatch::from_columns(&[]), Err(Error::EmptyBatch));
        assert_eq!(CovarianceAccumulator::new(3).covariance(), Err(Error::EmptyBatch));
    }

    #[test]
    fn noiseless_recovery() {
        let mut g = substream(1, Stream::Model, &[]);
        let p = make_random_basis(30, 4, &mut g).unwrap();
        let sig = SignalModel::new(p.clone(), vec![10.0, 8.0, 6.0, 4.0], CoefficientDistribution::BoundedUniform).unwrap();
        let cols: Vec<_> = (0..10).map(|_| sig.sample(&mut g).0).collect();
        let phat = pca_estimate(&DataBatch::from_columns(&cols).unwrap(), 4).unwrap();
        assert!(subspace_error(&phat, &p).unwrap() <= 1e-8);
    }

    #[test]
    fn duplicated_vector_rank_one() {
        let v = DVector::from_vec(vec![3.0, 4.0, 0.0]);
        let b = DataBatch::from_columns(&[v.clone(), v.clone(), v.clone()]).unwrap();
        let phat = pca_estimate(&b, 1).unwrap();
        let col = phat.matrix().column(0).into_owned();
        let unit = v.normalize();
        assert!((col.dot(&unit).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(rank_from_threshold(&[12.3, 11.8, 0.4, 0.1], 12.0), 2);
        assert_eq!(rank_from_threshold(&[5.9, 3.0], 12.0), 0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.4, 12.3, 0.1, 11.8]));
        assert_eq!(estimate_rank_threshold(&d, 12.0).unwrap(), 2);
    }

    #[test]
    fn eigengap_examples() {
        assert_eq!(rank_from_eigengap(&[10.2, 9.8, 9.5, 0.3, 0.2], 4).unwrap(), 3);
        assert_eq!(rank_from_eigengap(&[5.0, 0.0, 0.0, 0.0], 2).unwrap(), 1);
        // tie → smallest j
        assert_eq!(rank_from_eigengap(&[3.0, 2.0, 1.0, 0.5], 3).unwrap(), 1);
        assert!(rank_from_eigengap(&[1.0, 0.0], 2).is_err());
        assert_eq!(default_max_rank(100), 50);
    }

    proptest! {
        #[test]
        fn pca_scale_equivariant(seed in 0u64..1000, gamma in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
            let y = lcg_matrix(8, 40, seed);
            let a = pca_estimate(&DataBatch::new(y.clone()).unwrap(), 3).unwrap();
            let b = pca_estimate(&DataBatch::new(y * gamma).unwrap(), 3).unwrap();
            prop_assert!(subspace_error(&a, &b).unwrap() < 1e-8);
        }

        #[test]
        fn threshold_rank_non_increasing_in_lambda(
            mut eig in prop::collection::vec(0.0f64..30.0, 1..20), l1 in 0.1f64..40.0, l2 in 0.1f64..40.0,
        ) {
            eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            prop_assert!(rank_from_threshold(&eig, hi) <= rank_from_threshold(&eig, lo));
        }
    }
}
