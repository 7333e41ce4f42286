//! Closed-form error bounds, feasibility conditions and sample-complexity
//! expressions. All logarithms are natural; `c` is the unspecified constant of
//! the concentration inequalities and defaults to 1.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::DerivedSpectra;
use crate::subspace;

/// A bound value, or the marker that its denominator is not positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BoundValue {
    Finite(f64),
    Infeasible,
}

impl BoundValue {
    pub fn finite(&self) -> Option<f64> {
        match *self {
            BoundValue::Finite(v) => Some(v),
            BoundValue::Infeasible => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, BoundValue::Finite(_))
    }

    /// Finite value, or `+∞` when infeasible (a vacuous bound).
    pub fn or_infinity(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

/// Which concentration argument the bound relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// Element-wise bounded signal and noise coefficients.
    Bounded,
    /// Sub-Gaussian signal and noise.
    SubGaussian,
}

/// Form of `ε_bnd` in the bounded regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum EpsBndVariant {
    /// `c√η max(q f √(r ln n/α), g √(max(r_v,r) ln n/α))`.
    #[default]
    TwoTerm,
    /// Splits the noise term into its cross and quadratic parts; never larger.
    ThreeTerm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub spectra: DerivedSpectra,
    pub r: usize,
    pub r_v: usize,
    pub n: usize,
    pub eta: f64,
    /// `max_t ‖M_{1,t} P‖₂`.
    pub q: f64,
    /// Row occupancy of the data-dependent noise.
    pub b: f64,
    pub alpha: usize,
    pub c: f64,
    pub regime: Regime,
    pub variant: EpsBndVariant,
}

impl BoundInputs {
    /// Bounded-regime inputs with `η = 3`, `c = 1` and no data-dependent noise.
    pub fn new(spectra: DerivedSpectra, r: usize, r_v: usize, n: usize, alpha: usize) -> Self {
        Self {
            spectra,
            r,
            r_v,
            n,
            eta: 3.0,
            q: 0.0,
            b: 0.0,
            alpha,
            c: 1.0,
            regime: Regime::Bounded,
            variant: EpsBndVariant::TwoTerm,
        }
    }

    pub fn with_sddn(mut self, q: f64, b: f64) -> Self {
        self.q = q;
        self.b = b;
        self
    }

    pub fn with_alpha(mut self, alpha: usize) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.spectra;
        if self.r == 0 || self.r > self.n {
            return Err(Error::InvalidRank { r: self.r, n: self.n });
        }
        if self.n < 2 {
            return Err(Error::Validation("n must be at least 2".into()));
        }
        if self.alpha == 0 {
            return Err(Error::Validation("alpha must be ≥ 1".into()));
        }
        if !(self.q >= 0.0 && self.q < 1.0) {
            return Err(Error::Validation(format!("q = {} must lie in [0, 1)", self.q)));
        }
        if !(self.b >= 0.0 && self.b < 1.0) {
            return Err(Error::Validation(format!("b = {} must lie in [0, 1)", self.b)));
        }
        if !(self.c > 0.0) {
            return Err(Error::Validation(format!("c = {} must be positive", self.c)));
        }
        if !(self.eta >= 1.0) {
            return Err(Error::Validation(format!("eta = {} must be ≥ 1", self.eta)));
        }
        if !(s.lambda_minus > 0.0) || s.f < 1.0 {
            return Err(Error::Validation("signal spectrum must have λ⁻ > 0 and f ≥ 1".into()));
        }
        Ok(())
    }

    fn ln_n(&self) -> f64 {
        (self.n as f64).ln()
    }

    fn noise_ratio(&self) -> f64 {
        self.spectra.lambda_v_plus / self.spectra.lambda_minus
    }

    /// `3√b q f`: the data-dependent term in the feasibility conditions.
    pub fn sddn_term(&self) -> f64 {
        3.0 * self.b.sqrt() * self.q * self.spectra.f
    }

    /// `√b (2q + q²) f`: the data-dependent term in the bound itself.
    pub fn sddn_bias(&self) -> f64 {
        self.b.sqrt() * (2.0 * self.q + self.q * self.q) * self.spectra.f
    }
}

/// `ε_den = c η f √((r + ln n)/α)`.
pub fn eps_den(inp: &BoundInputs) -> f64 {
    inp.c * inp.eta * inp.spectra.f * ((inp.r as f64 + inp.ln_n()) / inp.alpha as f64).sqrt()
}

/// `ε_bnd` for the selected regime and variant.
pub fn eps_bnd(inp: &BoundInputs) -> f64 {
    let a = inp.alpha as f64;
    let ln_n = inp.ln_n();
    let f = inp.spectra.f;
    match inp.regime {
        Regime::SubGaussian => inp.c * inp.noise_ratio().max(f) * (inp.n as f64 / a).sqrt(),
        Regime::Bounded => {
            let sddn = inp.q * f * (inp.r as f64 * ln_n / a).sqrt();
            let wide = (inp.r_v.max(inp.r) as f64 * ln_n / a).sqrt();
            let noise = match inp.variant {
                EpsBndVariant::TwoTerm => inp.spectra.g * wide,
                EpsBndVariant::ThreeTerm => {
                    let ratio = inp.noise_ratio();
                    let cross = (ratio * f).sqrt() * wide;
                    let quad = ratio * (inp.r_v as f64 * ln_n / a).sqrt();
                    cross.max(quad)
                }
            };
            inp.c * inp.eta.sqrt() * sddn.max(noise)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub eps_bnd: f64,
    pub eps_den: f64,
    pub se_bound: BoundValue,
    pub feasible: bool,
    /// One minus the feasibility sum; positive iff the bound is finite.
    pub condition_slack: f64,
}

impl BoundReport {
    fn assemble(eps_bnd: f64, eps_den: f64, slack: f64, numerator: f64, denominator: f64) -> Self {
        let feasible = slack > 0.0 && denominator > 0.0;
        Self {
            eps_bnd,
            eps_den,
            se_bound: if feasible {
                BoundValue::Finite(numerator / denominator)
            } else {
                BoundValue::Infeasible
            },
            feasible,
            condition_slack: slack,
        }
    }
}

/// General bound with non-isotropic noise and data-dependent noise.
pub fn theorem1_bound(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    let s = &inp.spectra;
    let eb = eps_bnd(inp);
    let ed = eps_den(inp);
    let rest = (s.lambda_vrest_plus - s.lambda_vp_minus) / s.lambda_minus;
    let bias = inp.sddn_bias();
    let numerator = s.lambda_vpp_perp / s.lambda_minus + bias + eb;
    let denominator = 1.0 - rest - bias - eb - ed;
    let slack = 1.0 - (rest + inp.sddn_term() + eb + ed);
    Ok(BoundReport::assemble(eb, ed, slack, numerator, denominator))
}

/// Feasibility threshold of the isotropic-noise bound.
pub const SPIKED_FEASIBILITY: f64 = 0.95;

/// Simplified bound for isotropic noise `Σ_v = λ_v⁺ I` without data-dependent noise.
pub fn spiked_bound(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    let s = &inp.spectra;
    let tol = 1e-9 * s.lambda_v_plus.max(1.0);
    if s.lambda_vpp_perp > tol
        || (s.lambda_vrest_plus - s.lambda_vp_minus).abs() > tol
        || (s.lambda_vrest_plus - s.lambda_v_plus).abs() > tol
    {
        return Err(Error::NotIsotropic);
    }
    if inp.q != 0.0 {
        return Err(Error::Validation("isotropic bound has no data-dependent noise (q must be 0)".into()));
    }
    let eb = eps_bnd(inp);
    let ed = eps_den(inp);
    let slack = SPIKED_FEASIBILITY - eb - ed;
    Ok(BoundReport::assemble(eb, ed, slack, eb, 1.0 - eb - ed))
}

/// Bound when only sparse data-dependent noise is present.
pub fn sddn_bound(inp: &BoundInputs) -> Result<BoundReport> {
    inp.validate()?;
    if inp.spectra.lambda_v_plus != 0.0 {
        return Err(Error::Validation("data-dependent-only bound requires Σ_v = 0".into()));
    }
    let eb = eps_bnd(inp);
    let ed = eps_den(inp);
    let head = inp.sddn_term() + eb;
    let slack = 1.0 - (head + ed);
    Ok(BoundReport::assemble(eb, ed, slack, head, slack))
}

/// `Δ = ε_den + ε_bnd + 3√b q f + λ_{v,rest}⁺/λ⁻`; both rank estimators succeed when `Δ < 1/2`.
pub fn delta_rank(inp: &BoundInputs) -> f64 {
    eps_den(inp) + eps_bnd(inp) + inp.sddn_term() + inp.spectra.lambda_vrest_plus / inp.spectra.lambda_minus
}

/// Largest consecutive gap among the top `r` eigenvalues of `Λ + PᵀΣ_vP`.
pub fn signal_space_max_gap(lambdas: &[f64], compressed_noise: &DMatrix<f64>) -> Result<f64> {
    let r = lambdas.len();
    if compressed_noise.shape() != (r, r) {
        return Err(Error::DimensionMismatch(format!(
            "PᵀΣ_vP is {:?}, expected {r}×{r}",
            compressed_noise.shape()
        )));
    }
    let mut m = compressed_noise.clone();
    for (j, &l) in lambdas.iter().enumerate() {
        m[(j, j)] += l;
    }
    let eig = subspace::symmetric_eigenvalues(&m)?;
    Ok(eig.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max))
}

/// Gap condition for the eigen-gap rank estimator:
/// `max_{j<r} gap ≤ (1 − 4Δ) λ⁻ + λ_{v,P}⁻`.
pub fn eigengap_condition(max_gap: f64, delta: f64, spectra: &DerivedSpectra) -> bool {
    max_gap <= (1.0 - 4.0 * delta) * spectra.lambda_minus + spectra.lambda_vp_minus
}

/// Sample size making the data-dependent-only bound at most `eps_se`:
/// `⌈C max((q²f²/ε²) r ln n, f²(r + ln n))⌉`.
pub fn sddn_required_alpha(q: f64, f: f64, r: usize, n: usize, eps_se: f64, big_c: f64) -> Result<usize> {
    if !(eps_se > 0.0) {
        return Err(Error::Validation(format!("eps_se = {eps_se} must be positive")));
    }
    let ln_n = (n as f64).ln();
    let r = r as f64;
    let first = (q * q * f * f / (eps_se * eps_se)) * r * ln_n;
    let second = f * f * (r + ln_n);
    Ok((big_c * first.max(second)).ceil() as usize)
}

/// Effective `q = √(μ² r s / n)` of zero-filled missing entries.
pub fn missing_q(mu: f64, r: usize, s: usize, n: usize) -> Result<f64> {
    if !(mu >= 1.0 - 1e-12) {
        return Err(Error::Validation(format!("incoherence μ = {mu} must be ≥ 1")));
    }
    let q = (mu * mu * r as f64 * s as f64 / n as f64).sqrt();
    if q >= 1.0 {
        return Err(Error::CorollaryInapplicable(q));
    }
    Ok(q)
}

/// Population-level bounds on `‖E[D − D₀] P‖` and `λ_max(E[D − D₀])`.
pub fn expected_perturbation(spectra: &DerivedSpectra, q: f64, b: f64) -> (f64, f64) {
    let sddn = b.sqrt() * (2.0 * q + q * q) * spectra.lambda_plus;
    (spectra.lambda_vpp_perp + sddn, spectra.lambda_vrest_plus + sddn)
}

/// Names of the five deviation terms, in the order used everywhere.
pub const DEVIATION_TERMS: [&str; 5] = ["signal_cov", "signal_sddn", "sddn_sddn", "signal_noise", "noise_noise"];

/// High-probability bounds (absolute, i.e. already multiplied by `λ⁻`) on
/// `‖Σaaᵀ/α − Λ‖`, `‖Σ(lwᵀ − E)/α‖`, `‖Σ(wwᵀ − E)/α‖`, `‖Σlvᵀ/α‖` and `‖Σ(vvᵀ − E)/α‖`.
pub fn deviation_bounds(inp: &BoundInputs) -> [f64; 5] {
    let s = &inp.spectra;
    let a = inp.alpha as f64;
    let ln_n = inp.ln_n();
    let r = inp.r as f64;
    let ce = inp.c * inp.eta.sqrt();
    let ratio = inp.noise_ratio();
    let sddn_rate = s.f * (r * ln_n / a).sqrt();
    [
        eps_den(inp) * s.lambda_minus,
        ce * inp.q * sddn_rate * s.lambda_minus,
        ce * inp.q * inp.q * sddn_rate * s.lambda_minus,
        ce * (ratio * s.f).sqrt() * (inp.r_v.max(inp.r) as f64 * ln_n / a).sqrt() * s.lambda_minus,
        ce * ratio * (inp.r_v as f64 * ln_n / a).sqrt() * s.lambda_minus,
    ]
}
