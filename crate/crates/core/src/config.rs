//! Experiment configuration: strict TOML parsing, defaults and validation.

use serde::{Deserialize, Serialize};

use crate::bounds::{EpsBndVariant, Regime};
use crate::error::{Error, Result};
use crate::model::{CoefficientDistribution, SddnModel};

/// Names of the shipped presets.
pub const PRESETS: [&str; 9] =
    ["fig1a", "fig1b", "fig2a", "fig2b", "fig2c", "fig2d", "adversarial", "refine", "missing"];

/// Text of a shipped preset.
pub fn preset(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".toml").unwrap_or(name);
    let name = name.strip_suffix(".cfg").unwrap_or(name);
    Some(match name {
        "fig1a" => include_str!("../../../configs/fig1a.toml"),
        "fig1b" => include_str!("../../../configs/fig1b.toml"),
        "fig2a" => include_str!("../../../configs/fig2a.toml"),
        "fig2b" => include_str!("../../../configs/fig2b.toml"),
        "fig2c" => include_str!("../../../configs/fig2c.toml"),
        "fig2d" => include_str!("../../../configs/fig2d.toml"),
        "adversarial" => include_str!("../../../configs/adversarial.toml"),
        "refine" => include_str!("../../../configs/refine.toml"),
        "missing" => include_str!("../../../configs/missing.toml"),
        _ => return None,
    })
}

/// Reads a config file, falling back to a preset when no such file exists.
pub fn parse_config(path: &str) -> Result<ExperimentConfig> {
    match std::fs::read_to_string(path) {
        Ok(text) => ExperimentConfig::from_toml_str(&text),
        Err(e) => {
            let stem = std::path::Path::new(path)
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or(path);
            match preset(stem) {
                Some(text) => ExperimentConfig::from_toml_str(text),
                None => Err(Error::Config(format!("cannot read {path}: {e}"))),
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    signal: RawSignal,
    noise: Option<RawNoise>,
    sddn: Option<RawSddn>,
    missing: Option<RawMissing>,
    experiment: Option<RawExperiment>,
    refine: Option<RefineSpec>,
    adversarial: Option<AdversarialSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSignal {
    n: usize,
    r: usize,
    lambdas: LambdaSpec,
    distribution: Option<CoefficientDistribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    /// Every eigenvalue equal.
    Equal(f64),
    List(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawDim {
    Count(usize),
    Name(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    r_v: RawDim,
    basis: Option<NoiseBasisKind>,
    amplitude_start: f64,
    amplitude_slope: f64,
    distribution: Option<CoefficientDistribution>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSddn {
    s: usize,
    b0: f64,
    rho: Option<usize>,
    q: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMissing {
    s: usize,
    b0: f64,
    rho: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    alpha_grid: Option<Vec<usize>>,
    alpha_min: Option<f64>,
    alpha_max: Option<f64>,
    alpha_points: Option<usize>,
    r_grid: Option<Vec<usize>>,
    n_grid: Option<Vec<usize>>,
    trials: Option<usize>,
    seed: Option<u64>,
    c: Option<f64>,
    epsilon_rule: Option<EpsilonRule>,
    regime: Option<RegimeName>,
    eps_bnd_variant: Option<VariantName>,
    max_rank: Option<usize>,
    success_threshold: Option<f64>,
    stop_after_success: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RegimeName {
    Bounded,
    Subgaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum VariantName {
    TwoTerm,
    ThreeTerm,
}

/// Dimension of the uncorrelated noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDim {
    Fixed(usize),
    /// `r_v = r`.
    SameAsSignal,
    /// `r_v = n`.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseBasisKind {
    /// Orthonormalised Gaussian `n × r_v` matrix.
    Random,
    /// `B = I` (requires `r_v = n`).
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseSpec {
    pub r_v: NoiseDim,
    pub basis: NoiseBasisKind,
    pub amplitude_start: f64,
    pub amplitude_slope: f64,
    pub distribution: CoefficientDistribution,
}

impl NoiseSpec {
    pub fn r_v(&self, n: usize, r: usize) -> usize {
        match self.r_v {
            NoiseDim::Fixed(k) => k,
            NoiseDim::SameAsSignal => r,
            NoiseDim::Full => n,
        }
    }
}

/// Target accuracy for phase-transition success.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonRule {
    /// `"paper_factor_1_5"`: 1.5 × the population bias of the bound.
    Named(String),
    Fixed { fixed: f64 },
}

pub const PAPER_EPSILON_RULE: &str = "paper_factor_1_5";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineSpec {
    #[serde(default = "default_stages")]
    pub stages: usize,
    #[serde(default = "default_q0")]
    pub q0: f64,
    #[serde(default = "default_sample_constant")]
    pub sample_constant: f64,
    /// Overrides the per-stage sample size.
    pub alpha: Option<usize>,
    #[serde(default = "default_refine_s")]
    pub s: usize,
    #[serde(default = "default_refine_b0")]
    pub b0: f64,
    #[serde(default = "default_rho")]
    pub rho: usize,
}

fn default_refine_s() -> usize {
    1
}
fn default_refine_b0() -> f64 {
    0.004
}
fn default_rho() -> usize {
    1
}

fn default_stages() -> usize {
    4
}
fn default_q0() -> f64 {
    0.06
}
fn default_sample_constant() -> f64 {
    16.0
}

impl Default for RefineSpec {
    fn default() -> Self {
        Self {
            stages: default_stages(),
            q0: default_q0(),
            sample_constant: default_sample_constant(),
            alpha: None,
            s: default_refine_s(),
            b0: default_refine_b0(),
            rho: default_rho(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarialSpec {
    /// Noise power along `(P_⊥)_1` in units of `λ⁻`.
    #[serde(default = "default_sigma_factor")]
    pub sigma_factor: f64,
}

fn default_sigma_factor() -> f64 {
    1.2
}

/// How the data-dependent noise is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DependentSpec {
    None,
    Sddn(SddnModel),
    /// Zero-filled missing entries on the moving support (`q` unused).
    Missing(SddnModel),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub r: usize,
    pub lambdas: LambdaSpec,
    pub distribution: CoefficientDistribution,
    pub noise: Option<NoiseSpec>,
    pub dependent: DependentSpec,
    pub alpha_grid: Vec<usize>,
    pub r_grid: Option<Vec<usize>>,
    pub n_grid: Option<Vec<usize>>,
    pub trials: usize,
    pub seed: Option<u64>,
    pub c: f64,
    pub epsilon_rule: EpsilonRule,
    pub regime: Regime,
    pub eps_bnd_variant: EpsBndVariant,
    pub max_rank: Option<usize>,
    pub success_threshold: f64,
    /// Phase transition: skip the rest of a row once a cell reaches the threshold.
    pub stop_after_success: bool,
    pub refine: RefineSpec,
    pub adversarial: AdversarialSpec,
}

/// `points` values log-spaced over `[lo, hi]`, rounded, deduplicated.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<usize> {
    if points <= 1 {
        return vec![lo.round() as usize];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut grid: Vec<usize> = (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp().round() as usize)
        .collect();
    grid.dedup();
    grid
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let cfg = Self::resolve(raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(raw: RawConfig) -> Result<Self> {
        let distribution = raw.signal.distribution.unwrap_or(CoefficientDistribution::BoundedUniform);
        let noise = raw
            .noise
            .map(|nz| -> Result<NoiseSpec> {
                let r_v = match nz.r_v {
                    RawDim::Count(k) => NoiseDim::Fixed(k),
                    RawDim::Name(s) if s == "r" => NoiseDim::SameAsSignal,
                    RawDim::Name(s) if s == "n" || s == "full_dimension" => NoiseDim::Full,
                    RawDim::Name(s) => {
                        return Err(Error::Config(format!("noise.r_v: expected an integer, \"r\" or \"n\", got {s:?}")))
                    }
                };
                Ok(NoiseSpec {
                    r_v,
                    basis: nz.basis.unwrap_or(NoiseBasisKind::Random),
                    amplitude_start: nz.amplitude_start,
                    amplitude_slope: nz.amplitude_slope,
                    distribution: nz.distribution.unwrap_or(distribution),
                })
            })
            .transpose()?;
        let dependent = match (raw.sddn, raw.missing) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("sections [sddn] and [missing] are mutually exclusive".into()))
            }
            (Some(s), None) => DependentSpec::Sddn(SddnModel { s: s.s, b0: s.b0, rho: s.rho.unwrap_or(1), q: s.q }),
            (None, Some(m)) => DependentSpec::Missing(SddnModel { s: m.s, b0: m.b0, rho: m.rho.unwrap_or(1), q: 0.0 }),
            (None, None) => DependentSpec::None,
        };
        let ex = raw.experiment.unwrap_or(RawExperiment {
            alpha_grid: None,
            alpha_min: None,
            alpha_max: None,
            alpha_points: None,
            r_grid: None,
            n_grid: None,
            trials: None,
            seed: None,
            c: None,
            epsilon_rule: None,
            regime: None,
            eps_bnd_variant: None,
            max_rank: None,
            success_threshold: None,
            stop_after_success: None,
        });
        let alpha_grid = match ex.alpha_grid {
            Some(g) => {
                if ex.alpha_min.is_some() || ex.alpha_max.is_some() || ex.alpha_points.is_some() {
                    return Err(Error::Config("give either experiment.alpha_grid or alpha_min/alpha_max/alpha_points".into()));
                }
                g
            }
            None => log_grid(ex.alpha_min.unwrap_or(29.0), ex.alpha_max.unwrap_or(7000.0), ex.alpha_points.unwrap_or(12)),
        };
        let regime = match ex.regime {
            Some(RegimeName::Bounded) => Regime::Bounded,
            Some(RegimeName::Subgaussian) => Regime::SubGaussian,
            None => match distribution {
                CoefficientDistribution::BoundedUniform => Regime::Bounded,
                CoefficientDistribution::Gaussian => Regime::SubGaussian,
            },
        };
        Ok(Self {
            n: raw.signal.n,
            r: raw.signal.r,
            lambdas: raw.signal.lambdas,
            distribution,
            noise,
            dependent,
            alpha_grid,
            r_grid: ex.r_grid,
            n_grid: ex.n_grid,
            trials: ex.trials.unwrap_or(100),
            seed: ex.seed,
            c: ex.c.unwrap_or(1.0),
            epsilon_rule: ex.epsilon_rule.unwrap_or(EpsilonRule::Named(PAPER_EPSILON_RULE.into())),
            regime,
            eps_bnd_variant: match ex.eps_bnd_variant {
                Some(VariantName::ThreeTerm) => EpsBndVariant::ThreeTerm,
                _ => EpsBndVariant::TwoTerm,
            },
            max_rank: ex.max_rank,
            success_threshold: ex.success_threshold.unwrap_or(0.9),
            stop_after_success: ex.stop_after_success.unwrap_or(false),
            refine: raw.refine.unwrap_or_default(),
            adversarial: raw.adversarial.unwrap_or(AdversarialSpec { sigma_factor: default_sigma_factor() }),
        })
    }

    /// Eigenvalues `λ_1 ≥ … ≥ λ_r` for signal rank `r`.
    pub fn lambdas_for(&self, r: usize) -> Result<Vec<f64>> {
        match &self.lambdas {
            LambdaSpec::Equal(l) => Ok(vec![*l; r]),
            LambdaSpec::List(v) if v.len() == r => Ok(v.clone()),
            LambdaSpec::List(v) => Err(Error::Validation(format!(
                "signal.lambdas has {} entries but r = {r}",
                v.len()
            ))),
        }
    }

    /// `(n, r)` pairs of the grid rows; a single row when no axis is set.
    pub fn rows(&self) -> Vec<(usize, usize)> {
        if let Some(rs) = &self.r_grid {
            rs.iter().map(|&r| (self.n, r)).collect()
        } else if let Some(ns) = &self.n_grid {
            ns.iter().map(|&n| (n, self.r)).collect()
        } else {
            vec![(self.n, self.r)]
        }
    }

    /// Grid axis label and value for a row, if the config sweeps one.
    pub fn axis_name(&self) -> Option<&'static str> {
        if self.r_grid.is_some() {
            Some("r")
        } else if self.n_grid.is_some() {
            Some("n")
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.r_grid.is_some() && self.n_grid.is_some() {
            return bad("at most one of experiment.r_grid and experiment.n_grid may be set".into());
        }
        for grid in [&self.r_grid, &self.n_grid].into_iter().flatten() {
            if grid.is_empty() {
                return bad("grids must be non-empty".into());
            }
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.contains(&0) {
            return bad("alpha grid must be non-empty with entries ≥ 1".into());
        }
        if self.trials == 0 {
            return bad("experiment.trials must be ≥ 1".into());
        }
        if !(self.c > 0.0) {
            return bad(format!("experiment.c = {} must be positive", self.c));
        }
        if !(self.success_threshold > 0.0 && self.success_threshold <= 1.0) {
            return bad(format!("success_threshold = {} must lie in (0, 1]", self.success_threshold));
        }
        match &self.epsilon_rule {
            EpsilonRule::Named(s) if s == PAPER_EPSILON_RULE => {}
            EpsilonRule::Named(s) => return Err(Error::Config(format!("unknown epsilon_rule {s:?}"))),
            EpsilonRule::Fixed { fixed } if !(*fixed > 0.0) => return bad(format!("fixed epsilon {fixed} must be positive")),
            EpsilonRule::Fixed { .. } => {}
        }
        if let LambdaSpec::List(v) = &self.lambdas {
            if self.r_grid.is_some() {
                return bad("an explicit lambdas list cannot be combined with r_grid".into());
            }
            if v.windows(2).any(|w| w[1] > w[0]) {
                return bad("signal.lambdas must be non-increasing".into());
            }
        }
        let lambdas_ok = match &self.lambdas {
            LambdaSpec::Equal(l) => *l > 0.0 && l.is_finite(),
            LambdaSpec::List(v) => v.iter().all(|l| *l > 0.0 && l.is_finite()),
        };
        if !lambdas_ok {
            return bad("signal eigenvalues must be positive".into());
        }
        for (n, r) in self.rows() {
            if n < 2 {
                return bad(format!("n = {n} must be at least 2"));
            }
            if r == 0 || r > n {
                return Err(Error::InvalidRank { r, n });
            }
            self.lambdas_for(r)?;
            if let Some(nz) = &self.noise {
                let r_v = nz.r_v(n, r);
                if r_v == 0 || r_v > n {
                    return bad(format!("noise r_v = {r_v} must lie in [1, n = {n}]"));
                }
                if nz.basis == NoiseBasisKind::Identity && r_v != n {
                    return bad("identity noise basis requires r_v = n".into());
                }
                let last = nz.amplitude_start - nz.amplitude_slope;
                if !(nz.amplitude_start >= 0.0 && last >= 0.0) {
                    return bad("noise amplitudes must stay non-negative".into());
                }
            }
            match self.dependent {
                DependentSpec::Sddn(m) | DependentSpec::Missing(m) => m.validate(n)?,
                DependentSpec::None => {}
            }
            if let Some(k) = self.max_rank {
                if k == 0 || k >= n {
                    return bad(format!("max_rank = {k} must lie in [1, n)"));
                }
            }
        }
        let rf = &self.refine;
        if rf.stages == 0 || !(rf.q0 >= 0.0 && rf.q0 < 1.0) || !(rf.sample_constant > 0.0) {
            return bad("refine: stages ≥ 1, q0 in [0, 1), sample_constant > 0 required".into());
        }
        self.refine_support().validate(self.n)?;
        if !(self.adversarial.sigma_factor >= 0.0) {
            return bad("adversarial.sigma_factor must be non-negative".into());
        }
        Ok(())
    }

    pub fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Support process of the refinement recursion (`q` unused).
    pub fn refine_support(&self) -> SddnModel {
        SddnModel { s: self.refine.s, b0: self.refine.b0, rho: self.refine.rho, q: 0.0 }
    }

    /// Resolved configuration as TOML-like text, for logs.
    pub fn describe(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("<unprintable config: {e}>"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse() {
        for name in PRESETS {
            let cfg = ExperimentConfig::from_toml_str(preset(name).unwrap());
            assert!(cfg.is_ok(), "{name}: {cfg:?}");
        }
    }

    #[test]
    fn fig1a_parameters() {
        let cfg = ExperimentConfig::from_toml_str(preset("fig1a").unwrap()).unwrap();
        assert_eq!((cfg.n, cfg.r), (100, 5));
        assert_eq!(cfg.lambdas_for(5).unwrap(), vec![12.0; 5]);
        let DependentSpec::Sddn(m) = cfg.dependent else { panic!("fig1a has data-dependent noise") };
        assert_eq!((m.q, m.b0, m.s, m.rho), (0.001, 0.05, 5, 1));
        let nz = cfg.noise.as_ref().unwrap();
        assert_eq!(nz.r_v(100, 5), 5);
        assert_eq!(cfg.trials, 100);
        assert_eq!(cfg.alpha_grid.len(), 12);
        assert_eq!((cfg.alpha_grid[0], *cfg.alpha_grid.last().unwrap()), (29, 7000));
        assert_eq!(cfg.c, 1.0);
    }

    #[test]
    fn q_above_one_is_validation_error() {
        let text = preset("fig1a").unwrap().replace("q = 0.001", "q = 1.5");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_file_is_config_error() {
        assert!(matches!(ExperimentConfig::from_toml_str(""), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_key_names_the_key() {
        let text = format!("{}\nbogus_key = 3\n", preset("fig1a").unwrap());
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config(msg)) => assert!(msg.contains("bogus_key"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn missing_key_names_the_key() {
        match ExperimentConfig::from_toml_str("[signal]\nn = 10\nlambdas = 1.0\n") {
            Err(Error::Config(msg)) => assert!(msg.contains('r'), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(29.0, 7000.0, 12);
        assert_eq!(g.len(), 12);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn describe_round_trips_as_toml() {
        let cfg = ExperimentConfig::from_toml_str(preset("fig2d").unwrap()).unwrap();
        let text = cfg.describe();
        assert!(text.contains("alpha_grid"));
        assert!(toml::from_str::<toml::Value>(&text).is_ok());
    }

    #[test]
    fn preset_lookup_by_file_name() {
        assert!(parse_config("fig1a").is_ok());
        assert!(parse_config("fig1a.cfg").is_ok());
        assert!(parse_config("/nonexistent/dir/fig2a.toml").is_ok());
        assert!(matches!(parse_config("no-such-config"), Err(Error::Config(_))));
    }
}
