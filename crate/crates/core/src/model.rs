//! Generative model `y_t = l_t + w_t + v_t`: a low-rank signal `l_t = P a_t`,
//! uncorrelated (possibly non-isotropic) noise `v_t = B c_t`, and sparse
//! data-dependent noise `w_t = I_{T_t} M_{1,t} l_t` on a moving support.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subspace::{self, BasisMatrix};

/// Law of each coefficient of `a_t` or `c_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientDistribution {
    /// Uniform on `[−h, h]`.
    BoundedUniform,
    Gaussian,
}

/// `n × r` basis obtained by orthonormalising an i.i.d. standard Gaussian matrix.
pub fn make_random_basis<R: Rng + ?Sized>(n: usize, r: usize, rng: &mut R) -> Result<BasisMatrix> {
    if r == 0 || r > n {
        return Err(Error::InvalidRank { r, n });
    }
    loop {
        let m = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        match subspace::orthonormalize(&m) {
            Ok(p) => return Ok(p),
            Err(Error::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// Signal `l_t = P a_t` with independent coefficients `Var((a_t)_j) = λ_j`.
#[derive(Debug, Clone)]
pub struct SignalModel {
    basis: BasisMatrix,
    lambdas: Vec<f64>,
    distribution: CoefficientDistribution,
    // half-width for uniform, standard deviation for Gaussian
    spreads: Vec<f64>,
}

impl SignalModel {
    pub fn new(basis: BasisMatrix, lambdas: Vec<f64>, distribution: CoefficientDistribution) -> Result<Self> {
        if lambdas.len() != basis.r() {
            return Err(Error::InvalidModel(format!(
                "{} eigenvalues for a rank-{} basis",
                lambdas.len(),
                basis.r()
            )));
        }
        if lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::InvalidModel("signal eigenvalues must be positive".into()));
        }
        if lambdas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidModel("signal eigenvalues must be non-increasing".into()));
        }
        let spreads = lambdas
            .iter()
            .map(|&l| match distribution {
                CoefficientDistribution::BoundedUniform => (3.0 * l).sqrt(),
                CoefficientDistribution::Gaussian => l.sqrt(),
            })
            .collect();
        Ok(Self { basis, lambdas, distribution, spreads })
    }

    pub fn basis(&self) -> &BasisMatrix {
        &self.basis
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn distribution(&self) -> CoefficientDistribution {
        self.distribution
    }

    pub fn n(&self) -> usize {
        self.basis.n()
    }

    pub fn r(&self) -> usize {
        self.basis.r()
    }

    pub fn lambda_minus(&self) -> f64 {
        *self.lambdas.last().unwrap()
    }

    pub fn lambda_plus(&self) -> f64 {
        self.lambdas[0]
    }

    pub fn condition_number(&self) -> f64 {
        self.lambda_plus() / self.lambda_minus()
    }

    /// `max_j (a_t)_j² / λ_j`; 3 for uniform coefficients, unbounded otherwise.
    pub fn eta(&self) -> Option<f64> {
        match self.distribution {
            CoefficientDistribution::BoundedUniform => Some(3.0),
            CoefficientDistribution::Gaussian => None,
        }
    }

    pub fn sample_coefficients<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        sample_scaled(self.distribution, &self.spreads, rng, out);
    }

    /// One draw `(l_t, a_t)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        let mut a = DVector::zeros(self.r());
        self.sample_coefficients(rng, a.as_mut_slice());
        (self.basis.matrix() * &a, a)
    }
}

fn sample_scaled<R: Rng + ?Sized>(
    distribution: CoefficientDistribution,
    spreads: &[f64],
    rng: &mut R,
    out: &mut [f64],
) {
    debug_assert_eq!(spreads.len(), out.len());
    match distribution {
        CoefficientDistribution::BoundedUniform => {
            for (o, &h) in out.iter_mut().zip(spreads) {
                let u: f64 = rng.random();
                *o = h * (2.0 * u - 1.0);
            }
        }
        CoefficientDistribution::Gaussian => {
            for (o, &s) in out.iter_mut().zip(spreads) {
                let z: f64 = StandardNormal.sample(rng);
                *o = s * z;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum NoiseBasis {
    Subspace(BasisMatrix),
    /// `B = I_n`.
    FullDimension { n: usize },
    /// `v_t ≡ 0`.
    Zero { n: usize },
}

/// `v_t = B c_t` with independent `(c_t)_i` of amplitude `scales_i`.
#[derive(Debug, Clone)]
pub struct UncorrNoiseModel {
    basis: NoiseBasis,
    scales: Vec<f64>,
    distribution: CoefficientDistribution,
}

impl UncorrNoiseModel {
    pub fn new(basis: NoiseBasis, scales: Vec<f64>, distribution: CoefficientDistribution) -> Result<Self> {
        let r_v = match &basis {
            NoiseBasis::Subspace(b) => b.r(),
            NoiseBasis::FullDimension { n } => *n,
            NoiseBasis::Zero { .. } => 0,
        };
        if scales.len() != r_v {
            return Err(Error::InvalidModel(format!(
                "{} noise scales for r_v = {r_v}",
                scales.len()
            )));
        }
        if scales.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidModel("noise scales must be non-negative".into()));
        }
        Ok(Self { basis, scales, distribution })
    }

    pub fn zero(n: usize) -> Self {
        Self {
            basis: NoiseBasis::Zero { n },
            scales: Vec::new(),
            distribution: CoefficientDistribution::Gaussian,
        }
    }

    /// Amplitudes `q_i = start − slope · i / r_v`, `i = 1..r_v`.
    pub fn linear_scales(r_v: usize, start: f64, slope: f64) -> Vec<f64> {
        (1..=r_v).map(|i| start - slope * i as f64 / r_v as f64).collect()
    }

    pub fn basis(&self) -> &NoiseBasis {
        &self.basis
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn distribution(&self) -> CoefficientDistribution {
        self.distribution
    }

    pub fn n(&self) -> usize {
        match &self.basis {
            NoiseBasis::Subspace(b) => b.n(),
            NoiseBasis::FullDimension { n } | NoiseBasis::Zero { n } => *n,
        }
    }

    pub fn r_v(&self) -> usize {
        self.scales.len()
    }

    pub fn is_zero(&self) -> bool {
        self.scales.iter().all(|&s| s == 0.0)
    }

    /// `σ_i²`: `q_i²/3` for uniform, `q_i²` for Gaussian coefficients.
    pub fn variances(&self) -> Vec<f64> {
        self.scales
            .iter()
            .map(|&q| match self.distribution {
                CoefficientDistribution::BoundedUniform => q * q / 3.0,
                CoefficientDistribution::Gaussian => q * q,
            })
            .collect()
    }

    /// `Σ_v = B diag(σ²) Bᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.n();
        let var = DVector::from_vec(self.variances());
        match &self.basis {
            NoiseBasis::Subspace(b) => {
                let scaled = DMatrix::from_fn(n, b.r(), |i, j| b.matrix()[(i, j)] * var[j]);
                scaled * b.matrix().transpose()
            }
            NoiseBasis::FullDimension { .. } => DMatrix::from_diagonal(&var),
            NoiseBasis::Zero { .. } => DMatrix::zeros(n, n),
        }
    }

    pub fn sample_coefficients<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        sample_scaled(self.distribution, &self.scales, rng, out);
    }

    /// Maps coefficients to `v = B c`.
    pub fn embed(&self, c: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            NoiseBasis::Subspace(b) => b.matrix() * c,
            NoiseBasis::FullDimension { .. } => c.clone(),
            NoiseBasis::Zero { n } => DVector::zeros(*n),
        }
    }

    /// One draw `v_t`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut c = DVector::zeros(self.r_v());
        self.sample_coefficients(rng, c.as_mut_slice());
        self.embed(&c)
    }
}

/// Sparse data-dependent noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SddnModel {
    /// Support size `|T_t|`.
    pub s: usize,
    /// Target row occupancy.
    pub b0: f64,
    /// Dwell quantum: the support dwells `ρ·⌈b0·α/ρ⌉` frames per position.
    pub rho: usize,
    /// `‖M_{1,t} P‖₂`.
    pub q: f64,
}

impl SddnModel {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.s > n {
            return Err(Error::InvalidSupport { s: self.s, n });
        }
        if !(self.b0 > 0.0 && self.b0 <= 1.0) {
            return Err(Error::Validation(format!("b0 = {} must lie in (0, 1]", self.b0)));
        }
        if self.rho == 0 {
            return Err(Error::Validation("rho must be ≥ 1".into()));
        }
        if !(self.q >= 0.0 && self.q < 1.0) {
            return Err(Error::Validation(format!("q = {} must lie in [0, 1)", self.q)));
        }
        Ok(())
    }

    /// Frames spent at each support position.
    pub fn dwell(&self, alpha: usize) -> usize {
        let rho = self.rho.max(1) as f64;
        let quanta = (self.b0 * alpha as f64 / rho).ceil().max(1.0);
        (quanta * rho) as usize
    }
}

/// Supports of a 1-D object that sits still for a dwell period, then jumps by
/// `s` indices (cyclically).
pub fn support_sequence(n: usize, m: &SddnModel, alpha: usize) -> Result<Vec<Vec<usize>>> {
    if m.s > n {
        return Err(Error::InvalidSupport { s: m.s, n });
    }
    let dwell = m.dwell(alpha);
    Ok((0..alpha)
        .map(|t| {
            let start = ((t / dwell) * m.s) % n;
            (0..m.s).map(|j| (start + j) % n).collect()
        })
        .collect())
}

/// Maximum over rows of the fraction of frames whose support contains the row.
pub fn row_occupancy(supports: &[Vec<usize>], n: usize) -> f64 {
    if supports.is_empty() {
        return 0.0;
    }
    let mut counts = vec![0usize; n];
    for t in supports {
        for &i in t {
            counts[i] += 1;
        }
    }
    *counts.iter().max().unwrap_or(&0) as f64 / supports.len() as f64
}

/// One realisation of the sparse noise at a single frame.
#[derive(Debug, Clone)]
pub struct SddnSample {
    /// `w_t` (dense storage, zero off the support).
    pub w: DVector<f64>,
    /// `M_{1,t} P` restricted to the support rows (`s × r`), spectral norm `q`.
    pub coupling: DMatrix<f64>,
}

/// Draws `M_{s,t}` with i.i.d. `|N(0,1)|` entries, rescales it so that
/// `‖M_{1,t}P‖₂ = q`, and returns `w_t = I_{T_t} M_{1,t} l_t`.
pub fn sample_sddn<R: Rng + ?Sized>(
    m: &SddnModel,
    p: &BasisMatrix,
    support: &[usize],
    l: &DVector<f64>,
    rng: &mut R,
) -> Result<SddnSample> {
    let n = p.n();
    if support.iter().any(|&i| i >= n) || l.len() != n {
        return Err(Error::DimensionMismatch("support or signal does not match basis".into()));
    }
    let s = support.len();
    let mut w = DVector::zeros(n);
    if s == 0 || m.q == 0.0 {
        return Ok(SddnSample { w, coupling: DMatrix::zeros(s, p.r()) });
    }
    loop {
        let ms = DMatrix::from_fn(s, n, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            z.abs()
        });
        let mp = &ms * p.matrix();
        let norm = subspace::spectral_norm(&mp);
        if norm == 0.0 {
            continue;
        }
        let scale = m.q / norm;
        let restricted = &ms * l * scale;
        for (k, &i) in support.iter().enumerate() {
            w[i] = restricted[k];
        }
        return Ok(SddnSample { w, coupling: mp * scale });
    }
}

/// `y_t = l_t − I_{T_t} I_{T_t}ᵀ l_t`: zero-filled missing entries.
pub fn apply_missing(l: &DVector<f64>, support: &[usize]) -> DVector<f64> {
    let mut y = l.clone();
    for &i in support {
        y[i] = 0.0;
    }
    y
}

/// Scalar spectra of the signal and noise covariances that drive every bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedSpectra {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    pub f: f64,
    /// `‖Σ_v‖₂`.
    pub lambda_v_plus: f64,
    /// `λ_min(PᵀΣ_vP)`.
    pub lambda_vp_minus: f64,
    /// `λ_max(Σ_v − PPᵀΣ_vPPᵀ)`.
    pub lambda_vrest_plus: f64,
    /// `‖P_⊥ᵀΣ_vP‖₂`.
    pub lambda_vpp_perp: f64,
    /// `max(λ_v⁺/λ⁻, sqrt(f λ_v⁺/λ⁻))`.
    pub g: f64,
}

impl DerivedSpectra {
    /// Spectra for a model without uncorrelated noise.
    pub fn noiseless(lambda_minus: f64, lambda_plus: f64) -> Self {
        Self::from_parts(lambda_minus, lambda_plus, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn from_parts(
        lambda_minus: f64,
        lambda_plus: f64,
        lambda_v_plus: f64,
        lambda_vp_minus: f64,
        lambda_vrest_plus: f64,
        lambda_vpp_perp: f64,
    ) -> Self {
        let f = lambda_plus / lambda_minus;
        let ratio = lambda_v_plus / lambda_minus;
        Self {
            lambda_minus,
            lambda_plus,
            f,
            lambda_v_plus,
            lambda_vp_minus,
            lambda_vrest_plus,
            lambda_vpp_perp,
            g: ratio.max((ratio * f).sqrt()),
        }
    }

    /// Isotropic noise `Σ_v = σ² I`.
    pub fn isotropic(lambda_minus: f64, lambda_plus: f64, sigma2: f64) -> Self {
        Self::from_parts(lambda_minus, lambda_plus, sigma2, sigma2, sigma2, 0.0)
    }
}

/// Computes the exact (population) spectra of a signal/noise pair.
pub fn derived_spectra(sig: &SignalModel, noise: &UncorrNoiseModel) -> Result<DerivedSpectra> {
    let n = sig.n();
    if noise.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "signal has n = {n}, noise has n = {}",
            noise.n()
        )));
    }
    let (lm, lp) = (sig.lambda_minus(), sig.lambda_plus());
    if noise.is_zero() {
        return Ok(DerivedSpectra::noiseless(lm, lp));
    }
    let sigma = noise.covariance();
    noise_spectra(sig.basis(), &sigma, lm, lp)
}

/// Spectra for an explicit noise covariance.
pub fn noise_spectra(p: &BasisMatrix, sigma: &DMatrix<f64>, lambda_minus: f64, lambda_plus: f64) -> Result<DerivedSpectra> {
    let pm = p.matrix();
    let sigma_p = sigma * pm;
    let compressed = symmetrized(&pm.tr_mul(&sigma_p));
    let lambda_v_plus = subspace::symmetric_eigenvalues(&symmetrized(sigma))?[0].max(0.0);
    let lambda_vp_minus = subspace::symmetric_eigenvalues(&compressed)?
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(0.0);
    let inner = pm * &compressed * pm.transpose();
    let lambda_vrest_plus = subspace::symmetric_eigenvalues(&symmetrized(&(sigma - inner)))?[0].max(0.0);
    let cross = &sigma_p - pm * &compressed;
    let lambda_vpp_perp = subspace::spectral_norm(&cross);
    Ok(DerivedSpectra::from_parts(
        lambda_minus,
        lambda_plus,
        lambda_v_plus,
        lambda_vp_minus,
        lambda_vrest_plus,
        lambda_vpp_perp,
    ))
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `E[l_t l_tᵀ + v_t v_tᵀ] = PΛPᵀ + Σ_v`.
pub fn population_covariance(sig: &SignalModel, noise: &UncorrNoiseModel) -> DMatrix<f64> {
    let p = sig.basis().matrix();
    let scaled = DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| p[(i, j)] * sig.lambdas()[j]);
    scaled * p.transpose() + noise.covariance()
}
