//! Browser bindings: the SE bound calculator, a small bound-tightness run and
//! the adversarial-noise example.

use wasm_bindgen::prelude::*;

use ddpca::bounds::BoundValue;
use ddpca::config::ExperimentConfig;
use ddpca::experiments::{self, ModelInstance};
use ddpca::rng::{substream, Stream};

fn js_err(e: ddpca::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn experiment_config(n: usize, r: usize, q: f64, alphas: &[usize], trials: usize, seed: u64) -> ddpca::Result<ExperimentConfig> {
    let grid = alphas.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ");
    let text = format!(
        "[signal]\nn = {n}\nr = {r}\nlambdas = 12.0\n\
         [noise]\nr_v = \"r\"\namplitude_start = 1.1\namplitude_slope = 0.1\n\
         [sddn]\ns = 5\nb0 = 0.05\nq = {q}\n\
         [experiment]\nalpha_grid = [{grid}]\ntrials = {trials}\nseed = {seed}\n"
    );
    ExperimentConfig::from_toml_str(&text)
}

fn finite_or_nan(b: BoundValue) -> f64 {
    b.finite().unwrap_or(f64::NAN)
}

/// SE bound at each `alpha` for the bounded uniform model with `λ = 12`,
/// `r_v = r` noise and sparse data-dependent noise of strength `q`.
/// Infeasible points are `NaN`.
#[wasm_bindgen]
pub fn se_bound(n: usize, r: usize, q: f64, alphas: Vec<u32>, seed: u64) -> Result<Vec<f64>, JsValue> {
    let alphas: Vec<usize> = alphas.into_iter().map(|a| a as usize).collect();
    let cfg = experiment_config(n, r, q, &alphas, 1, seed).map_err(js_err)?;
    let inst = ModelInstance::build(&cfg, 0).map_err(js_err)?;
    alphas
        .iter()
        .map(|&a| inst.bound(&cfg, a).map(|rep| finite_or_nan(rep.se_bound)).map_err(js_err))
        .collect()
}

/// Monte Carlo bound tightness. Returns `[alpha, mean_se, max_se, bound]` per
/// grid point, flattened.
#[wasm_bindgen]
pub fn tightness(n: usize, r: usize, q: f64, alphas: Vec<u32>, trials: usize, seed: u64) -> Result<Vec<f64>, JsValue> {
    let alphas: Vec<usize> = alphas.into_iter().map(|a| a as usize).collect();
    let cfg = experiment_config(n, r, q, &alphas, trials.max(1), seed).map_err(js_err)?;
    let grid = experiments::bound_tightness(&cfg).map_err(js_err)?;
    Ok(grid
        .rows
        .iter()
        .flat_map(|row| [row.alpha as f64, row.mean_se, row.max_se, finite_or_nan(row.bound)])
        .collect())
}

/// Adversarial example with `λ = (15, 14, …, 14, 12)` and noise power
/// `sigma_factor · λ⁻` outside the signal space. Returns `[se, deviation]`.
#[wasm_bindgen]
pub fn adversarial(n: usize, r: usize, alpha: usize, sigma_factor: f64, seed: u64) -> Result<Vec<f64>, JsValue> {
    let mut lambdas = vec![14.0; r];
    if let Some(first) = lambdas.first_mut() {
        *first = 15.0;
    }
    if let Some(last) = lambdas.last_mut() {
        *last = 12.0;
    }
    let mut rng = substream(seed, Stream::Signal, &[]);
    let out = experiments::adversarial_with_factor(
        n,
        alpha,
        &lambdas,
        sigma_factor,
        ddpca::model::CoefficientDistribution::Gaussian,
        &mut rng,
    )
    .map_err(js_err)?;
    Ok(vec![out.se, out.deviation])
}
