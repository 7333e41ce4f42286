//! Seeded Monte Carlo engine.
//!
//! Every trial draws from its own streams keyed by `(row, α, trial)` and
//! results are reduced in index order, so the output is a pure function of
//! the configuration and master seed, whatever the worker count.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bounds::{self, BoundInputs, BoundReport, BoundValue, Regime};
use crate::config::{DependentSpec, EpsilonRule, ExperimentConfig, NoiseBasisKind};
use crate::error::{Error, Result};
use crate::estimator::{self, CovarianceAccumulator};
use crate::model::{
    self, derived_spectra, make_random_basis, CoefficientDistribution, DerivedSpectra, NoiseBasis, SddnModel,
    SignalModel, UncorrNoiseModel,
};
use crate::rng::{substream, Stream};
use crate::subspace::{self, orthonormalize, spectral_norm, symmetric_spectral_norm, BasisMatrix};

const FRAME_CHUNK: usize = 256;

/// Condition-number limit for the per-frame solve of the refinement recursion.
pub const REFINE_CONDITION_LIMIT: f64 = 1e8;

/// Maps `f` over `0..count`, in parallel when the `parallel` feature is on.
/// Results keep index order.
pub fn par_map<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Runs `f` on a dedicated pool of `workers` threads (`0` = one per core).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(pool.install(f))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        Ok(f())
    }
}

fn batch_width() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads().max(1)
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// One realised model: true subspace, noise basis and derived spectra for a grid row.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    /// Stream key of the row: the swept axis value, or 0.
    pub key: u64,
    pub signal: SignalModel,
    pub noise: UncorrNoiseModel,
    pub dependent: DependentSpec,
    pub spectra: DerivedSpectra,
}

impl ModelInstance {
    /// Draws the model of grid row `row` (an index into [`ExperimentConfig::rows`]).
    pub fn build(cfg: &ExperimentConfig, row: usize) -> Result<Self> {
        let rows = cfg.rows();
        let &(n, r) = rows
            .get(row)
            .ok_or_else(|| Error::Validation(format!("grid row {row} out of range ({} rows)", rows.len())))?;
        let key = match cfg.axis_name() {
            Some("r") => r as u64,
            Some(_) => n as u64,
            None => 0,
        };
        let mut rng = substream(cfg.master_seed(), Stream::Model, &[key]);
        let p = make_random_basis(n, r, &mut rng)?;
        let signal = SignalModel::new(p, cfg.lambdas_for(r)?, cfg.distribution)?;
        let noise = match &cfg.noise {
            None => UncorrNoiseModel::zero(n),
            Some(spec) => {
                let r_v = spec.r_v(n, r);
                let scales = UncorrNoiseModel::linear_scales(r_v, spec.amplitude_start, spec.amplitude_slope);
                let basis = match spec.basis {
                    NoiseBasisKind::Identity => NoiseBasis::FullDimension { n },
                    NoiseBasisKind::Random => NoiseBasis::Subspace(make_random_basis(n, r_v, &mut rng)?),
                };
                UncorrNoiseModel::new(basis, scales, spec.distribution)?
            }
        };
        let spectra = derived_spectra(&signal, &noise)?;
        Ok(Self { key, signal, noise, dependent: cfg.dependent, spectra })
    }

    pub fn n(&self) -> usize {
        self.signal.n()
    }

    pub fn r(&self) -> usize {
        self.signal.r()
    }

    fn support_model(&self) -> Option<SddnModel> {
        match self.dependent {
            DependentSpec::None => None,
            DependentSpec::Sddn(m) | DependentSpec::Missing(m) => Some(m),
        }
    }

    /// `(q, b)` of the data-dependent noise at sample size `alpha`.
    pub fn dependent_params(&self, alpha: usize) -> Result<(f64, f64)> {
        let n = self.n();
        match self.dependent {
            DependentSpec::None => Ok((0.0, 0.0)),
            DependentSpec::Sddn(m) => Ok((m.q, realized_occupancy(n, &m, alpha))),
            DependentSpec::Missing(m) => {
                let mu = subspace::incoherence(self.signal.basis());
                let q = bounds::missing_q(mu, self.r(), m.s, n)?;
                Ok((q, realized_occupancy(n, &m, alpha)))
            }
        }
    }

    pub fn bound_inputs(&self, cfg: &ExperimentConfig, alpha: usize) -> Result<BoundInputs> {
        let (q, b) = self.dependent_params(alpha)?;
        let mut inp =
            BoundInputs::new(self.spectra, self.r(), self.noise.r_v(), self.n(), alpha).with_sddn(q, b);
        inp.c = cfg.c;
        inp.regime = cfg.regime;
        inp.variant = cfg.eps_bnd_variant;
        inp.eta = match cfg.regime {
            Regime::Bounded => self.signal.eta().unwrap_or(1.0),
            Regime::SubGaussian => 1.0,
        };
        Ok(inp)
    }

    /// The applicable SE bound: the data-dependent-only form when `Σ_v = 0`
    /// and data-dependent noise is present, the general form otherwise.
    pub fn bound(&self, cfg: &ExperimentConfig, alpha: usize) -> Result<BoundReport> {
        let inp = self.bound_inputs(cfg, alpha)?;
        if self.noise.is_zero() && self.support_model().is_some() {
            bounds::sddn_bound(&inp)
        } else {
            bounds::theorem1_bound(&inp)
        }
    }

    /// Success threshold on SE for the phase-transition experiments.
    pub fn epsilon(&self, cfg: &ExperimentConfig, alpha: usize) -> Result<f64> {
        match &cfg.epsilon_rule {
            EpsilonRule::Fixed { fixed } => Ok(*fixed),
            EpsilonRule::Named(_) => {
                let inp = self.bound_inputs(cfg, alpha)?;
                let s = &inp.spectra;
                let rest = (s.lambda_vrest_plus - s.lambda_vp_minus) / s.lambda_minus;
                if rest >= 1.0 {
                    return Err(Error::Infeasible(format!(
                        "noise outside the signal space dominates: (λ_vrest⁺ − λ_vP⁻)/λ⁻ = {rest}"
                    )));
                }
                Ok(1.5 * (inp.sddn_bias() + (s.lambda_vpp_perp / s.lambda_minus) / (1.0 - rest)))
            }
        }
    }
}

/// Maximum row occupancy of the dwell-rule supports over `alpha` frames.
pub fn realized_occupancy(n: usize, m: &SddnModel, alpha: usize) -> f64 {
    if alpha == 0 || n == 0 {
        return 0.0;
    }
    let dwell = m.dwell(alpha);
    let mut counts = vec![0usize; n];
    let (mut t, mut block) = (0usize, 0usize);
    while t < alpha {
        let len = dwell.min(alpha - t);
        let start = (block * m.s) % n;
        for j in 0..m.s {
            counts[(start + j) % n] += len;
        }
        t += len;
        block += 1;
    }
    *counts.iter().max().unwrap_or(&0) as f64 / alpha as f64
}

/// What [`simulate`] computes besides SE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrialOptions {
    /// Track the five deviation terms.
    pub deviations: bool,
    /// Largest rank considered by the eigen-gap estimator (default `⌊n/2⌋`).
    pub max_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub se: f64,
    pub r_hat_threshold: usize,
    pub r_hat_gap: usize,
    /// `‖Σaaᵀ/α − Λ‖`, `‖Σ(lwᵀ − E)/α‖`, `‖Σ(wwᵀ − E)/α‖`, `‖Σlvᵀ/α‖`,
    /// `‖Σvvᵀ/α − Σ_v‖`; expectations are conditional on the `M_t`.
    pub deviation_norms: Option<[f64; 5]>,
    pub realized_b: f64,
}

/// Grid coordinate of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridPoint {
    /// Index into [`ExperimentConfig::rows`].
    pub row: usize,
    pub alpha: usize,
}

struct Deviations {
    saa: DMatrix<f64>,
    sac: DMatrix<f64>,
    scc: DMatrix<f64>,
    cross: DMatrix<f64>,
    sparse: DMatrix<f64>,
}

impl Deviations {
    fn new(n: usize, r: usize, r_v: usize) -> Self {
        Self {
            saa: DMatrix::zeros(r, r),
            sac: DMatrix::zeros(r, r_v),
            scc: DMatrix::zeros(r_v, r_v),
            cross: DMatrix::zeros(r, n),
            sparse: DMatrix::zeros(n, n),
        }
    }

    /// Adds one frame's data-dependent contribution with coupling `g` (`s × r`).
    fn push_dependent(&mut self, a: &[f64], lambdas: &[f64], g: &DMatrix<f64>, support: &[usize]) {
        let r = lambdas.len();
        let centered = DMatrix::from_fn(r, r, |i, j| a[i] * a[j] - if i == j { lambdas[i] } else { 0.0 });
        let kt = &centered * g.transpose();
        let gk = g * &kt;
        for (u, &i) in support.iter().enumerate() {
            for k in 0..r {
                self.cross[(k, i)] += kt[(k, u)];
            }
            for (v, &j) in support.iter().enumerate() {
                self.sparse[(i, j)] += gk[(u, v)];
            }
        }
    }

    fn norms(&self, alpha: usize, lambdas: &[f64], variances: &[f64]) -> [f64; 5] {
        let a = alpha as f64;
        let mut t1 = &self.saa / a;
        for (j, l) in lambdas.iter().enumerate() {
            t1[(j, j)] -= l;
        }
        let mut t5 = &self.scc / a;
        for (j, v) in variances.iter().enumerate() {
            t5[(j, j)] -= v;
        }
        [
            symmetric_spectral_norm(&t1),
            spectral_norm(&(&self.cross / a)),
            symmetric_spectral_norm(&(&self.sparse / a)),
            spectral_norm(&(&self.sac / a)),
            symmetric_spectral_norm(&t5),
        ]
    }
}

fn sample_columns(k: usize, rows: usize, mut fill: impl FnMut(&mut [f64])) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, k);
    if rows > 0 {
        for col in m.as_mut_slice().chunks_mut(rows) {
            fill(col);
        }
    }
    m
}

/// One Monte Carlo trial of the generative model at sample size `alpha`,
/// with random streams keyed by `key`.
pub fn simulate(
    inst: &ModelInstance,
    alpha: usize,
    master: u64,
    key: &[u64],
    opts: TrialOptions,
) -> Result<TrialResult> {
    simulate_inner(inst, alpha, master, key, opts, true)
}

fn simulate_inner(
    inst: &ModelInstance,
    alpha: usize,
    master: u64,
    key: &[u64],
    opts: TrialOptions,
    allow_lift: bool,
) -> Result<TrialResult> {
    if alpha == 0 {
        return Err(Error::EmptyBatch);
    }
    let (n, r) = (inst.n(), inst.r());
    let p = inst.signal.basis().matrix();
    let lambdas = inst.signal.lambdas();
    let noise_on = !inst.noise.is_zero();
    let r_v = if noise_on { inst.noise.r_v() } else { 0 };
    let support_model = inst.support_model();
    let dwell = support_model.map(|m| m.dwell(alpha));

    let mut sig_rng = substream(master, Stream::Signal, key);
    let mut noise_rng = substream(master, Stream::UncorrNoise, key);
    let mut dep_rng = substream(master, Stream::DependencyMatrix, key);

    // Without dependent noise every frame lies in span[P B]; accumulate the
    // coefficients and lift once at the end.
    let lift = match (support_model, inst.noise.basis()) {
        _ if !allow_lift => None,
        (None, _) if !noise_on => Some(p.clone()),
        (None, NoiseBasis::Subspace(b)) if r + b.r() < n => {
            let mut u = DMatrix::zeros(n, r + b.r());
            u.columns_mut(0, r).copy_from(p);
            u.columns_mut(r, b.r()).copy_from(b.matrix());
            Some(u)
        }
        _ => None,
    };
    let mut acc = CovarianceAccumulator::new(lift.as_ref().map_or(n, |u| u.ncols()));
    let mut dev = opts.deviations.then(|| Deviations::new(n, r, r_v));
    let mut z = vec![0.0; r + r_v];

    let mut t0 = 0;
    while t0 < alpha {
        let k = FRAME_CHUNK.min(alpha - t0);
        let a = sample_columns(k, r, |col| inst.signal.sample_coefficients(&mut sig_rng, col));
        let c = sample_columns(k, r_v, |col| inst.noise.sample_coefficients(&mut noise_rng, col));
        if let Some(d) = dev.as_mut() {
            d.saa.gemm(1.0, &a, &a.transpose(), 1.0);
            if r_v > 0 {
                d.sac.gemm(1.0, &a, &c.transpose(), 1.0);
                d.scc.gemm(1.0, &c, &c.transpose(), 1.0);
            }
        }
        if lift.is_some() {
            for j in 0..k {
                z[..r].copy_from_slice(a.column(j).as_slice());
                z[r..].copy_from_slice(c.column(j).as_slice());
                acc.push(&z);
            }
        } else {
            let mut y = p * &a;
            if let (Some(m), Some(dwell)) = (support_model, dwell) {
                for j in 0..k {
                    let t = t0 + j;
                    let start = ((t / dwell) * m.s) % n;
                    let support: Vec<usize> = (0..m.s).map(|u| (start + u) % n).collect();
                    let coupling = match inst.dependent {
                        DependentSpec::Sddn(_) => {
                            let l = y.column(j).into_owned();
                            let sample = model::sample_sddn(&m, inst.signal.basis(), &support, &l, &mut dep_rng)?;
                            y.column_mut(j).axpy(1.0, &sample.w, 1.0);
                            sample.coupling
                        }
                        _ => {
                            for &i in &support {
                                y[(i, j)] = 0.0;
                            }
                            DMatrix::from_fn(m.s, r, |u, k| -p[(support[u], k)])
                        }
                    };
                    if let Some(d) = dev.as_mut() {
                        d.push_dependent(a.column(j).as_slice(), lambdas, &coupling, &support);
                    }
                }
            }
            if noise_on {
                match inst.noise.basis() {
                    NoiseBasis::Subspace(b) => y.gemm(1.0, b.matrix(), &c, 1.0),
                    NoiseBasis::FullDimension { .. } => y += &c,
                    NoiseBasis::Zero { .. } => {}
                }
            }
            acc.push_columns(&y);
        }
        t0 += k;
    }

    let d = match &lift {
        Some(u) => {
            let s = acc.covariance()?;
            let full = u * s * u.transpose();
            (&full + full.transpose()) * 0.5
        }
        None => acc.covariance()?,
    };
    let eig = subspace::symmetric_eig(&d)?;
    let phat = BasisMatrix::from_orthonormal(eig.eigenvectors.matrix().columns(0, r).into_owned());
    let se = subspace::subspace_error(&phat, inst.signal.basis())?;
    let max_rank = opts.max_rank.unwrap_or_else(|| estimator::default_max_rank(n));
    Ok(TrialResult {
        se,
        r_hat_threshold: estimator::rank_from_threshold(&eig.eigenvalues, inst.signal.lambda_minus()),
        r_hat_gap: estimator::rank_from_eigengap(&eig.eigenvalues, max_rank)?,
        deviation_norms: dev.map(|d| {
            let variances = if noise_on { inst.noise.variances() } else { Vec::new() };
            d.norms(alpha, lambdas, &variances)
        }),
        realized_b: support_model.map_or(0.0, |m| realized_occupancy(n, &m, alpha)),
    })
}

fn trial_key(inst: &ModelInstance, alpha: usize, trial: usize) -> [u64; 3] {
    [inst.key, alpha as u64, trial as u64]
}

/// A single trial with every diagnostic, fully determined by
/// `(master seed, grid point, trial index)`.
pub fn run_trial(cfg: &ExperimentConfig, point: GridPoint, trial: usize) -> Result<TrialResult> {
    let inst = ModelInstance::build(cfg, point.row)?;
    let opts = TrialOptions { deviations: true, max_rank: cfg.max_rank };
    simulate(&inst, point.alpha, cfg.master_seed(), &trial_key(&inst, point.alpha, trial), opts)
}

fn run_point(
    cfg: &ExperimentConfig,
    inst: &ModelInstance,
    alpha: usize,
    trials: std::ops::Range<usize>,
    opts: TrialOptions,
) -> Result<Vec<TrialResult>> {
    let first = trials.start;
    par_map(trials.len(), |i| simulate(inst, alpha, cfg.master_seed(), &trial_key(inst, alpha, first + i), opts))
}

/// One row of a bound-tightness or phase-transition grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    /// Value of the swept axis (`r` or `n`), if any.
    pub axis_value: Option<usize>,
    pub alpha: usize,
    pub trials: usize,
    pub mean_se: f64,
    pub max_se: f64,
    pub bound: BoundValue,
    /// SE threshold that counts as success.
    pub epsilon: f64,
    pub success_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub axis: Option<&'static str>,
    pub rows: Vec<GridRow>,
}

fn axis_value(cfg: &ExperimentConfig, inst: &ModelInstance) -> Option<usize> {
    cfg.axis_name().map(|_| inst.key as usize)
}

fn summarize(cfg: &ExperimentConfig, inst: &ModelInstance, alpha: usize, results: &[TrialResult], bound: BoundValue, epsilon: f64) -> GridRow {
    let trials = results.len();
    let mean_se = results.iter().map(|t| t.se).sum::<f64>() / trials as f64;
    let max_se = results.iter().map(|t| t.se).fold(0.0, f64::max);
    let hits = results.iter().filter(|t| t.se <= epsilon).count();
    GridRow {
        axis_value: axis_value(cfg, inst),
        alpha,
        trials,
        mean_se,
        max_se,
        bound,
        epsilon,
        success_probability: hits as f64 / trials as f64,
    }
}

/// Mean and max SE against the SE bound for every `(row, α)`; success means
/// SE at or below the bound (an infeasible bound is vacuous).
pub fn bound_tightness(cfg: &ExperimentConfig) -> Result<GridResult> {
    let opts = TrialOptions { deviations: false, max_rank: cfg.max_rank };
    let mut rows = Vec::new();
    for row in 0..cfg.rows().len() {
        let inst = ModelInstance::build(cfg, row)?;
        for &alpha in &cfg.alpha_grid {
            let bound = inst.bound(cfg, alpha)?.se_bound;
            let results = run_point(cfg, &inst, alpha, 0..cfg.trials, opts)?;
            rows.push(summarize(cfg, &inst, alpha, &results, bound, bound.or_infinity()));
        }
    }
    Ok(GridResult { axis: cfg.axis_name(), rows })
}

/// Whether `successes` out of `trials` reaches `threshold`.
pub fn meets_threshold(successes: usize, trials: usize, threshold: f64) -> bool {
    successes as f64 >= threshold * trials as f64 - 1e-9
}

/// Success probability `P(SE ≤ ε)` over the `(axis, α)` grid.
pub fn phase_transition(cfg: &ExperimentConfig) -> Result<GridResult> {
    if cfg.axis_name().is_none() {
        return Err(Error::Validation("phase transition needs experiment.r_grid or experiment.n_grid".into()));
    }
    let opts = TrialOptions { deviations: false, max_rank: cfg.max_rank };
    let mut rows = Vec::new();
    for row in 0..cfg.rows().len() {
        let inst = ModelInstance::build(cfg, row)?;
        for &alpha in &cfg.alpha_grid {
            let bound = inst.bound(cfg, alpha)?.se_bound;
            let eps = inst.epsilon(cfg, alpha)?;
            let results = run_point(cfg, &inst, alpha, 0..cfg.trials, opts)?;
            let cell = summarize(cfg, &inst, alpha, &results, bound, eps);
            let done = cfg.stop_after_success
                && meets_threshold((cell.success_probability * cell.trials as f64).round() as usize, cell.trials, cfg.success_threshold);
            rows.push(cell);
            if done {
                break;
            }
        }
    }
    Ok(GridResult { axis: cfg.axis_name(), rows })
}

/// Smallest grid `α` whose success probability reaches the threshold in row
/// `row`, or `None`.
///
/// Trials at each `α` run in index order and stop as soon as the outcome is
/// decided, so the answer equals the one read off a full [`phase_transition`]
/// grid with the same seeds.
pub fn required_alpha(cfg: &ExperimentConfig, row: usize) -> Result<Option<usize>> {
    let inst = ModelInstance::build(cfg, row)?;
    let opts = TrialOptions { deviations: false, max_rank: cfg.max_rank };
    let trials = cfg.trials;
    let needed = (0..=trials)
        .find(|&k| meets_threshold(k, trials, cfg.success_threshold))
        .unwrap_or(trials);
    let width = batch_width();
    for &alpha in &cfg.alpha_grid {
        let eps = inst.epsilon(cfg, alpha)?;
        let (mut hits, mut misses, mut next) = (0usize, 0usize, 0usize);
        while hits < needed && misses <= trials - needed && next < trials {
            let end = (next + width).min(trials);
            for t in run_point(cfg, &inst, alpha, next..end, opts)? {
                if t.se <= eps {
                    hits += 1;
                } else {
                    misses += 1;
                }
            }
            next = end;
        }
        if hits >= needed {
            return Ok(Some(alpha));
        }
    }
    Ok(None)
}

/// Empirical median of one deviation term against its high-probability bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub alpha: usize,
    pub term: &'static str,
    pub median: f64,
    pub bound: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m == 0 {
        return f64::NAN;
    }
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Medians of the five deviation terms over the trials at each `α` of the first row.
pub fn concentration_check(cfg: &ExperimentConfig) -> Result<Vec<ConcentrationRow>> {
    if cfg.regime != Regime::Bounded {
        return Err(Error::Validation("concentration check is defined for the bounded regime".into()));
    }
    let inst = ModelInstance::build(cfg, 0)?;
    let opts = TrialOptions { deviations: true, max_rank: cfg.max_rank };
    let mut out = Vec::new();
    for &alpha in &cfg.alpha_grid {
        let results = run_point(cfg, &inst, alpha, 0..cfg.trials, opts)?;
        let bound = bounds::deviation_bounds(&inst.bound_inputs(cfg, alpha)?);
        for (k, term) in bounds::DEVIATION_TERMS.iter().enumerate() {
            let mut vals: Vec<f64> = results
                .iter()
                .map(|t| t.deviation_norms.map_or(f64::NAN, |d| d[k]))
                .collect();
            out.push(ConcentrationRow { alpha, term, median: median(&mut vals), bound: bound[k] });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankRow {
    pub alpha: usize,
    pub trials: usize,
    pub threshold_correct: usize,
    pub gap_correct: usize,
    /// `Δ`; both estimators are guaranteed when `Δ < 1/2`.
    pub delta: f64,
    /// Eigen-gap hypothesis on `Λ + PᵀΣ_vP`.
    pub gap_condition: bool,
}

/// Counts how often each rank estimator recovers `r` at every `α` of the first row.
pub fn rank_estimation(cfg: &ExperimentConfig) -> Result<Vec<RankRow>> {
    let inst = ModelInstance::build(cfg, 0)?;
    let opts = TrialOptions { deviations: false, max_rank: cfg.max_rank };
    let r = inst.r();
    let p = inst.signal.basis().matrix();
    let compressed = p.transpose() * inst.noise.covariance() * p;
    let compressed = (&compressed + compressed.transpose()) * 0.5;
    let max_gap = bounds::signal_space_max_gap(inst.signal.lambdas(), &compressed)?;
    let mut out = Vec::new();
    for &alpha in &cfg.alpha_grid {
        let delta = bounds::delta_rank(&inst.bound_inputs(cfg, alpha)?);
        let results = run_point(cfg, &inst, alpha, 0..cfg.trials, opts)?;
        out.push(RankRow {
            alpha,
            trials: results.len(),
            threshold_correct: results.iter().filter(|t| t.r_hat_threshold == r).count(),
            gap_correct: results.iter().filter(|t| t.r_hat_gap == r).count(),
            delta,
            gap_condition: bounds::eigengap_condition(max_gap, delta, &inst.spectra),
        });
    }
    Ok(out)
}

/// Noise power of the adversarial example in units of `λ⁻`.
pub const ADVERSARIAL_SIGMA_FACTOR: f64 = 1.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdversarialOutcome {
    pub se: f64,
    /// `‖D − E[D]‖₂ / λ⁻`.
    pub deviation: f64,
}

/// Signal with eigenvalues `lambdas` and rank-one noise of variance
/// `sigma_factor · λ⁻` along the first direction of `P_⊥`.
///
/// Requires `r ≥ 2` and `λ_{r−1} ≥ 1.1 λ⁻`.
pub fn adversarial_model<R: Rng + ?Sized>(
    n: usize,
    lambdas: &[f64],
    sigma_factor: f64,
    distribution: CoefficientDistribution,
    rng: &mut R,
) -> Result<(SignalModel, UncorrNoiseModel)> {
    let r = lambdas.len();
    if r < 2 || r >= n {
        return Err(Error::InvalidExample(format!("need 2 ≤ r < n, got r = {r}, n = {n}")));
    }
    let lambda_minus = lambdas[r - 1];
    if lambdas[r - 2] < 1.1 * lambda_minus {
        return Err(Error::InvalidExample(format!(
            "λ_(r−1) = {} is below 1.1 λ⁻ = {}",
            lambdas[r - 2],
            1.1 * lambda_minus
        )));
    }
    let p = make_random_basis(n, r, rng)?;
    let signal = SignalModel::new(p, lambdas.to_vec(), distribution)?;
    let perp = subspace::orthogonal_complement(signal.basis())?;
    let direction = BasisMatrix::new(perp.matrix().columns(0, 1).into_owned())?;
    let variance = sigma_factor * lambda_minus;
    let scale = match distribution {
        CoefficientDistribution::Gaussian => variance.sqrt(),
        CoefficientDistribution::BoundedUniform => (3.0 * variance).sqrt(),
    };
    let noise = UncorrNoiseModel::new(NoiseBasis::Subspace(direction), vec![scale], distribution)?;
    Ok((signal, noise))
}

/// Top-`r` subspace of the exact `E[D]` of the adversarial model.
pub fn adversarial_population_se<R: Rng + ?Sized>(
    n: usize,
    lambdas: &[f64],
    sigma_factor: f64,
    rng: &mut R,
) -> Result<f64> {
    let (signal, noise) = adversarial_model(n, lambdas, sigma_factor, CoefficientDistribution::Gaussian, rng)?;
    let expected = model::population_covariance(&signal, &noise);
    let phat = subspace::top_r_eigvecs(&expected, signal.r())?;
    subspace::subspace_error(&phat, signal.basis())
}

/// Adversarial example with an arbitrary noise power and coefficient law.
pub fn adversarial_with_factor<R: Rng + ?Sized>(
    n: usize,
    alpha: usize,
    lambdas: &[f64],
    sigma_factor: f64,
    distribution: CoefficientDistribution,
    rng: &mut R,
) -> Result<AdversarialOutcome> {
    if alpha == 0 {
        return Err(Error::EmptyBatch);
    }
    let (signal, noise) = adversarial_model(n, lambdas, sigma_factor, distribution, rng)?;
    let r = signal.r();
    let NoiseBasis::Subspace(dir) = noise.basis() else {
        unreachable!("adversarial noise is rank one");
    };
    // every frame lies in span[P, (P_⊥)_1]; work with the (r+1)-dim coefficients
    let mut acc = CovarianceAccumulator::new(r + 1);
    let mut z = vec![0.0; r + 1];
    for _ in 0..alpha {
        signal.sample_coefficients(rng, &mut z[..r]);
        noise.sample_coefficients(rng, &mut z[r..]);
        acc.push(&z);
    }
    let s = acc.covariance()?;
    let mut centered = s.clone();
    for (j, l) in signal.lambdas().iter().enumerate() {
        centered[(j, j)] -= l;
    }
    centered[(r, r)] -= noise.variances()[0];
    let deviation = symmetric_spectral_norm(&centered) / signal.lambda_minus();

    let mut u = DMatrix::zeros(n, r + 1);
    u.columns_mut(0, r).copy_from(signal.basis().matrix());
    u.columns_mut(r, 1).copy_from(dir.matrix());
    let d = &u * s * u.transpose();
    let d = (&d + d.transpose()) * 0.5;
    let phat = subspace::top_r_eigvecs(&d, r)?;
    Ok(AdversarialOutcome { se: subspace::subspace_error(&phat, signal.basis())?, deviation })
}

/// Runs PCA on `alpha` Gaussian frames of the adversarial model with noise
/// power `1.2 λ⁻`; returns SE and the realised deviation.
pub fn adversarial_sigma<R: Rng + ?Sized>(
    n: usize,
    r: usize,
    alpha: usize,
    lambdas: &[f64],
    rng: &mut R,
) -> Result<AdversarialOutcome> {
    if lambdas.len() != r {
        return Err(Error::DimensionMismatch(format!("{} eigenvalues for r = {r}", lambdas.len())));
    }
    adversarial_with_factor(n, alpha, lambdas, ADVERSARIAL_SIGMA_FACTOR, CoefficientDistribution::Gaussian, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversarialRow {
    pub trial: usize,
    pub alpha: usize,
    pub se: f64,
    pub deviation: f64,
    /// `1 − 11.1 · deviation`.
    pub floor: f64,
}

/// Adversarial example for every `α` of the grid and every trial; each trial
/// draws a fresh `P`.
pub fn adversarial_experiment(cfg: &ExperimentConfig) -> Result<Vec<AdversarialRow>> {
    let lambdas = cfg.lambdas_for(cfg.r)?;
    let mut out = Vec::new();
    for &alpha in &cfg.alpha_grid {
        let rows = par_map(cfg.trials, |trial| {
            let mut rng = substream(cfg.master_seed(), Stream::Signal, &[alpha as u64, trial as u64]);
            let o = adversarial_with_factor(cfg.n, alpha, &lambdas, cfg.adversarial.sigma_factor, cfg.distribution, &mut rng)?;
            Ok(AdversarialRow { trial, alpha, se: o.se, deviation: o.deviation, floor: 1.0 - 11.1 * o.deviation })
        })?;
        out.extend(rows);
    }
    Ok(out)
}

/// One stage of the refinement recursion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineStage {
    pub stage: usize,
    pub alpha: usize,
    /// `q_{k−1}` driving the stage.
    pub q: f64,
    pub se: f64,
    /// `0.25 · q₀ · 0.3^{k−1}`.
    pub stage_bound: f64,
}

/// Geometric rate of the refinement recursion, `1.2 / 4`.
pub const REFINE_RATE: f64 = 0.3;

/// `P cos θ + Q sin θ` with `Q ⟂ P` orthonormal: every principal angle to `P` is `θ`.
pub fn tilted_estimate<R: Rng + ?Sized>(p: &BasisMatrix, sin_theta: f64, rng: &mut R) -> Result<BasisMatrix> {
    let (n, r) = (p.n(), p.r());
    if 2 * r > n {
        return Err(Error::InvalidRank { r: 2 * r, n });
    }
    let g = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = orthonormalize(&(&g - p.matrix() * p.matrix().tr_mul(&g)))?;
    let cos_theta = (1.0 - sin_theta * sin_theta).max(0.0).sqrt();
    let tilted = p.matrix() * cos_theta + q.matrix() * sin_theta;
    orthonormalize(&tilted)
}

/// Per-stage sample size: the configured override, or the sample size that
/// makes the data-dependent-only bound at most `q/4`.
pub fn refine_alpha(cfg: &ExperimentConfig, q: f64, f: f64, r: usize, n: usize) -> Result<usize> {
    if let Some(a) = cfg.refine.alpha {
        return Ok(a);
    }
    let eps = if q > 0.0 { q / 4.0 } else { 1.0 };
    bounds::sddn_required_alpha(q, f, r, n, eps, cfg.refine.sample_constant)
}

/// Runs the staged PCA recursion for one trial: stage `k` builds frames
/// `l_t + e_t` with `e_t = I_T B_t⁻¹ I_Tᵀ (I − P̂P̂ᵀ) l_t`,
/// `B_t = I_Tᵀ (I − P̂P̂ᵀ) I_T`, and replaces `P̂` by their top-`r` subspace.
pub fn refinement_loop(cfg: &ExperimentConfig, trial: usize) -> Result<Vec<RefineStage>> {
    let (n, r) = (cfg.n, cfg.r);
    let rf = &cfg.refine;
    let support = cfg.refine_support();
    let master = cfg.master_seed();
    let t = trial as u64;
    let mut model_rng = substream(master, Stream::Model, &[t, 1]);
    let p = make_random_basis(n, r, &mut model_rng)?;
    let signal = SignalModel::new(p, cfg.lambdas_for(r)?, cfg.distribution)?;
    let f = signal.condition_number();
    let mut phat = if rf.q0 > 0.0 {
        tilted_estimate(signal.basis(), rf.q0 / 1.2, &mut model_rng)?
    } else {
        signal.basis().clone()
    };

    let mut out = Vec::with_capacity(rf.stages);
    for k in 1..=rf.stages {
        let q = rf.q0 * REFINE_RATE.powi(k as i32 - 1);
        let alpha = refine_alpha(cfg, q, f, r, n)?;
        let b = realized_occupancy(n, &support, alpha);
        if 3.0 * b.sqrt() * f >= 0.2 {
            return Err(Error::Infeasible(format!("3√b f = {} must be below 0.2", 3.0 * b.sqrt() * f)));
        }
        let dwell = support.dwell(alpha);
        let mut rng = substream(master, Stream::Signal, &[t, k as u64]);
        let ph = phat.matrix();
        let mut acc = CovarianceAccumulator::new(n);
        let mut a = vec![0.0; r];
        for step in 0..alpha {
            signal.sample_coefficients(&mut rng, &mut a);
            let mut y = signal.basis().matrix() * DVector::from_column_slice(&a);
            let start = ((step / dwell) * support.s) % n;
            let idx: Vec<usize> = (0..support.s).map(|u| (start + u) % n).collect();
            let ph_t = DMatrix::from_fn(idx.len(), r, |u, j| ph[(idx[u], j)]);
            let coeff = ph.tr_mul(&y);
            let rhs = DVector::from_fn(idx.len(), |u, _| y[idx[u]]) - &ph_t * &coeff;
            let bt = DMatrix::<f64>::identity(idx.len(), idx.len()) - &ph_t * ph_t.transpose();
            let e = solve_guarded(&bt, &rhs)?;
            for (u, &i) in idx.iter().enumerate() {
                y[i] += e[u];
            }
            acc.push(y.as_slice());
        }
        let d = acc.covariance()?;
        phat = subspace::top_r_eigvecs(&d, r)?;
        let se = subspace::subspace_error(&phat, signal.basis())?;
        out.push(RefineStage { stage: k, alpha, q, se, stage_bound: 0.25 * rf.q0 * REFINE_RATE.powi(k as i32 - 1) });
    }
    Ok(out)
}

fn solve_guarded(bt: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let eig = subspace::symmetric_eig(bt)?;
    let hi = eig.eigenvalues[0];
    let lo = *eig.eigenvalues.last().unwrap_or(&0.0);
    if !(lo > 0.0) || hi / lo > REFINE_CONDITION_LIMIT {
        return Err(Error::SupportDegenerate(if lo > 0.0 { hi / lo } else { f64::INFINITY }));
    }
    let v = eig.eigenvectors.matrix();
    let mut coef = v.tr_mul(rhs);
    for (j, c) in coef.iter_mut().enumerate() {
        *c /= eig.eigenvalues[j];
    }
    Ok(v * coef)
}

/// All trials of the refinement recursion, in trial order.
pub fn refinement_experiment(cfg: &ExperimentConfig) -> Result<Vec<Vec<RefineStage>>> {
    par_map(cfg.trials, |trial| refinement_loop(cfg, trial))
}

/// Bound tightness for zero-filled missing entries; the bound uses
/// `q = √(μ² r s / n)` with the measured incoherence of `P`.
pub fn missing_data_experiment(cfg: &ExperimentConfig) -> Result<GridResult> {
    if !matches!(cfg.dependent, DependentSpec::Missing(_)) {
        return Err(Error::Validation("missing-data experiment needs a [missing] section".into()));
    }
    bound_tightness(cfg)
}
