//! Sampling importance resampling filter.
//!
//! Each step propagates the particles, multiplies in the likelihood in log
//! space, normalises, measures the effective sample size and resamples when it
//! drops to the threshold `N_T`. After resampling every weight is exactly
//! `1 / N`. The estimate is the weighted mean of the particles.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, PassStats};
use crate::error::{ensure_same_len, Error, Result};
use crate::model::{log_likelihood, prior_sample, propagate, ModelParams, Trajectory};
use crate::primitives::{ew_map, ew_zip, expand, reduce, ReduceOp};
use crate::resampling::{draw_epsilon, mvr_counts, redistribute, sequential_oracle, Variant};
use crate::rng::{stream, Purpose};
use crate::sortnet::{bitonic_sort, Direction, KeyedPair};

/// Particle population. `keys[i]` names the random stream of particle `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub keys: Vec<usize>,
    pub states: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Ensemble {
    /// Prior draws with uniform weights.
    pub fn from_prior(eng: &mut Engine, n: usize, params: &ModelParams, seed: u64) -> Result<Self> {
        let states = prior_sample(eng, n, params, seed)?;
        Ok(Self::uniform(states))
    }

    pub fn uniform(states: Vec<f64>) -> Self {
        let n = states.len();
        Self {
            keys: (0..n).collect(),
            weights: vec![1.0 / n as f64; n],
            states,
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Number of particles `N`.
    pub n: usize,
    /// Number of workers `P`.
    pub workers: usize,
    /// Resample when the effective sample size is at most this value.
    pub threshold: f64,
    pub variant: Variant,
    pub seed: u64,
    pub model: ModelParams,
}

impl FilterConfig {
    /// One worker, `N_T = N / 2`, seed 0 and the default model.
    pub fn new(n: usize, variant: Variant) -> Self {
        Self {
            n,
            workers: 1,
            threshold: n as f64 / 2.0,
            variant,
            seed: 0,
            model: ModelParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if !n.is_power_of_two() {
            return Err(Error::Config(format!("N = {n} is not a power of two")));
        }
        if n < 2 && self.variant != Variant::Sequential {
            return Err(Error::Config(format!(
                "the {} variant needs N >= 2",
                self.variant
            )));
        }
        if self.workers == 0 || self.workers > n {
            return Err(Error::Config(format!(
                "P = {} must lie in [1, N = {n}]",
                self.workers
            )));
        }
        if !(0.0..=n as f64).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold {} must lie in [0, N = {n}]",
                self.threshold
            )));
        }
        self.model.validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostics {
    pub k: usize,
    pub ess: f64,
    pub resampled: bool,
    pub mu: f64,
    pub stats: PassStats,
}

#[derive(Serialize)]
struct DiagnosticsRow {
    k: usize,
    ess: f64,
    resampled: bool,
    mu: f64,
    supersteps: u64,
    moved_elements: u64,
}

/// Writes `#schema=1` and then one row per step:
/// `k, ess, resampled, mu, supersteps, moved_elements`.
pub fn write_diagnostics_csv<W: Write>(mut w: W, steps: &[StepDiagnostics]) -> Result<()> {
    writeln!(w, "#schema=1")?;
    let mut out = csv::Writer::from_writer(w);
    if steps.is_empty() {
        out.write_record(["k", "ess", "resampled", "mu", "supersteps", "moved_elements"])?;
    }
    for s in steps {
        out.serialize(DiagnosticsRow {
            k: s.k,
            ess: s.ess,
            resampled: s.resampled,
            mu: s.mu,
            supersteps: s.stats.supersteps,
            moved_elements: s.stats.moved,
        })?;
    }
    out.flush()?;
    Ok(())
}

/// Proposal distribution `q(x_k | x_{k-1}, z_k)` and the matching weight update.
pub trait Proposal {
    fn propagate(
        &self,
        eng: &mut Engine,
        ens: &Ensemble,
        k: usize,
        z: f64,
        params: &ModelParams,
        seed: u64,
    ) -> Result<Vec<f64>>;

    /// `log p(z | x_k) + log p(x_k | x_{k-1}) - log q(x_k | x_{k-1}, z)` per particle.
    fn log_weight(
        &self,
        eng: &mut Engine,
        prev: &[f64],
        next: &[f64],
        k: usize,
        z: f64,
        params: &ModelParams,
    ) -> Result<Vec<f64>>;
}

/// Proposes from the dynamics, so the weight update is the likelihood alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bootstrap;

impl Proposal for Bootstrap {
    fn propagate(
        &self,
        eng: &mut Engine,
        ens: &Ensemble,
        k: usize,
        _z: f64,
        params: &ModelParams,
        seed: u64,
    ) -> Result<Vec<f64>> {
        propagate(eng, &ens.keys, &ens.states, k, params, seed)
    }

    fn log_weight(
        &self,
        eng: &mut Engine,
        _prev: &[f64],
        next: &[f64],
        _k: usize,
        z: f64,
        params: &ModelParams,
    ) -> Result<Vec<f64>> {
        log_likelihood(eng, next, z, params)
    }
}

/// `w / sum(w)` via a tree sum, an expansion and an element-wise divide.
pub fn normalize(eng: &mut Engine, w: &[f64]) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::Empty);
    }
    if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::WeightCollapse(format!("weight {v} at index {i}")));
    }
    let total = reduce(eng, w, ReduceOp::Sum)?;
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::WeightCollapse(format!("weights sum to {total}")));
    }
    let totals = expand(eng, total, w.len())?;
    ew_zip(eng, w, &totals, |a, t| a / t)
}

/// `1 / sum(w^2)`, clamped to `[1, N]` against rounding.
pub fn ess(eng: &mut Engine, w: &[f64]) -> Result<f64> {
    let squares = ew_map(eng, w, |v| v * v);
    let s = reduce(eng, &squares, ReduceOp::Sum)?;
    Ok((1.0 / s).clamp(1.0, w.len() as f64))
}

/// Weighted mean `sum(w_i x_i)`.
pub fn estimate(eng: &mut Engine, w: &[f64], x: &[f64]) -> Result<f64> {
    let terms = ew_zip(eng, w, x, |a, b| a * b)?;
    reduce(eng, &terms, ReduceOp::Sum)
}

/// Log weights to normalised weights, subtracting the maximum before exponentiating.
fn weights_from_logs(eng: &mut Engine, logw: &[f64]) -> Result<Vec<f64>> {
    let max = reduce(eng, logw, ReduceOp::Max)?;
    if !max.is_finite() {
        return Err(Error::WeightCollapse(format!("largest log weight is {max}")));
    }
    let unnormalized = ew_map(eng, logw, |l| (l - max).exp());
    normalize(eng, &unnormalized)
}

/// New population from normalised weights. Parallel variants return the
/// particles ordered by parent index, which is also the sequential order.
fn resample(eng: &mut Engine, cfg: &FilterConfig, k: usize, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let n = w.len();
    let eps = draw_epsilon(&mut stream(cfg.seed, Purpose::Epsilon, k as u64, 0), n);
    if cfg.variant == Variant::Sequential {
        return Ok(sequential_oracle(w, eps, x)?.1);
    }
    let m = mvr_counts(eng, w, eps)?;
    let tagged: Vec<KeyedPair<f64>> = x.iter().enumerate().map(|(i, &v)| KeyedPair::new(i, v)).collect();
    let mut out = redistribute(eng, cfg.variant, &m, &tagged)?;
    if matches!(cfg.variant, Variant::Atz | Variant::Nested) {
        out = bitonic_sort(eng, &out, Direction::Ascending)?;
    }
    Ok(out.into_iter().map(|p| p.payload).collect())
}

/// One filter step into time `k` with measurement `z`.
pub fn sir_step(
    eng: &mut Engine,
    ens: Ensemble,
    z: f64,
    cfg: &FilterConfig,
    k: usize,
) -> Result<(Ensemble, StepDiagnostics)> {
    sir_step_with(eng, &Bootstrap, ens, z, cfg, k)
}

pub fn sir_step_with<Q: Proposal + ?Sized>(
    eng: &mut Engine,
    proposal: &Q,
    ens: Ensemble,
    z: f64,
    cfg: &FilterConfig,
    k: usize,
) -> Result<(Ensemble, StepDiagnostics)> {
    ensure_same_len(ens.states.len(), ens.weights.len())?;
    ensure_same_len(ens.states.len(), ens.keys.len())?;
    let (outcome, stats) = eng.run_pass(|eng| -> Result<_> {
        let next = proposal.propagate(eng, &ens, k, z, &cfg.model, cfg.seed)?;
        let inc = proposal.log_weight(eng, &ens.states, &next, k, z, &cfg.model)?;
        let logw = ew_zip(eng, &ens.weights, &inc, |w, l| w.ln() + l)?;
        let w = weights_from_logs(eng, &logw)?;
        let ess = ess(eng, &w)?;
        let resampled = ess <= cfg.threshold;
        let out = if resampled {
            Ensemble::uniform(resample(eng, cfg, k, &w, &next)?)
        } else {
            Ensemble {
                keys: ens.keys.clone(),
                states: next,
                weights: w,
            }
        };
        let mu = estimate(eng, &out.weights, &out.states)?;
        Ok((out, ess, resampled, mu))
    })?;
    let (out, ess, resampled, mu) = outcome?;
    Ok((
        out,
        StepDiagnostics {
            k,
            ess,
            resampled,
            mu,
            stats,
        },
    ))
}

/// Runs the filter over every step of `traj` with the bootstrap proposal.
pub fn run_filter(cfg: &FilterConfig, traj: &Trajectory) -> Result<Vec<StepDiagnostics>> {
    run_filter_with(cfg, traj, &Bootstrap)
}

pub fn run_filter_with<Q: Proposal + ?Sized>(
    cfg: &FilterConfig,
    traj: &Trajectory,
    proposal: &Q,
) -> Result<Vec<StepDiagnostics>> {
    cfg.validate()?;
    if traj.len() != cfg.model.horizon || traj.x_true.len() != traj.z.len() {
        return Err(Error::TrajectoryLength {
            got: traj.len(),
            expected: cfg.model.horizon,
        });
    }
    let mut eng = Engine::from_env(cfg.workers)?;
    let mut ens = Ensemble::from_prior(&mut eng, cfg.n, &cfg.model, cfg.seed)?;
    let mut steps = Vec::with_capacity(traj.len());
    for (i, &z) in traj.z.iter().enumerate() {
        let (next, diag) = sir_step_with(&mut eng, proposal, ens, z, cfg, i + 1)?;
        ens = next;
        steps.push(diag);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate_truth;

    fn eng() -> Engine {
        Engine::new(2).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let mut e = eng();
        assert_eq!(normalize(&mut e, &[2.0, 2.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(
            normalize(&mut e, &[1.0, 0.0, 0.0, 0.0]).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0]
        );
        let w = [0.1, 0.2, 0.3, 0.4];
        for (a, b) in normalize(&mut e, &w).unwrap().iter().zip(w) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert!(matches!(
            normalize(&mut e, &[0.0, 0.0]),
            Err(Error::WeightCollapse(_))
        ));
        assert!(matches!(
            normalize(&mut e, &[1.0, f64::NAN]),
            Err(Error::WeightCollapse(_))
        ));
        assert!(matches!(
            normalize(&mut e, &[1.0, f64::INFINITY]),
            Err(Error::WeightCollapse(_))
        ));
    }

    #[test]
    fn ess_examples() {
        let mut e = eng();
        assert_eq!(ess(&mut e, &[0.25; 4]).unwrap(), 4.0);
        assert_eq!(ess(&mut e, &[0.0, 1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(ess(&mut e, &[0.5, 0.5, 0.0, 0.0]).unwrap(), 2.0);
    }

    #[test]
    fn estimate_examples() {
        let mut e = eng();
        assert_eq!(estimate(&mut e, &[0.25; 4], &[1.0, 2.0, 3.0, 6.0]).unwrap(), 3.0);
        assert_eq!(estimate(&mut e, &[0.0, 1.0], &[5.0, 7.0]).unwrap(), 7.0);
        assert_eq!(estimate(&mut e, &[0.75, 0.25], &[0.0, 4.0]).unwrap(), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::new(1, Variant::Sequential).validate().is_ok());
        for v in [Variant::Atz, Variant::Nested, Variant::Naive] {
            assert!(matches!(
                FilterConfig::new(1, v).validate(),
                Err(Error::Config(_))
            ));
        }
        assert!(FilterConfig::new(12, Variant::Sequential).validate().is_err());
        let mut cfg = FilterConfig::new(8, Variant::Atz);
        cfg.workers = 9;
        assert!(cfg.validate().is_err());
        cfg.workers = 8;
        cfg.threshold = 8.5;
        assert!(cfg.validate().is_err());
        cfg.threshold = 0.0;
        assert!(cfg.validate().is_ok());
    }

    fn short(n: usize, variant: Variant, horizon: usize) -> (FilterConfig, Trajectory) {
        let mut cfg = FilterConfig::new(n, variant);
        cfg.model.horizon = horizon;
        cfg.seed = 17;
        let traj = simulate_truth(&cfg.model, 4).unwrap();
        (cfg, traj)
    }

    #[test]
    fn threshold_boundaries() {
        let (mut cfg, traj) = short(64, Variant::Atz, 10);
        cfg.threshold = 0.0;
        assert!(run_filter(&cfg, &traj).unwrap().iter().all(|s| !s.resampled));
        cfg.threshold = 64.0;
        assert!(run_filter(&cfg, &traj).unwrap().iter().all(|s| s.resampled));
    }

    #[test]
    fn one_hot_resamples_dominant_particle() {
        let mut cfg = FilterConfig::new(8, Variant::Atz);
        cfg.model.process_var = 0.0;
        let mut e = eng();
        let states: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let mut ens = Ensemble::uniform(states);
        ens.weights = vec![0.0; 8];
        ens.weights[5] = 1.0;
        let (out, diag) = sir_step(&mut e, ens, 1.0, &cfg, 1).unwrap();
        assert_eq!(diag.ess, 1.0);
        assert!(diag.resampled);
        let survivor = crate::model::transition(5.0, 1);
        assert!(out.states.iter().all(|&x| x == survivor));
        assert!(out.weights.iter().all(|&w| w == 1.0 / 8.0));
        assert_eq!(diag.mu, survivor);
    }

    #[test]
    fn empty_horizon_and_length_check() {
        let (cfg, traj) = short(8, Variant::Nested, 0);
        assert!(run_filter(&cfg, &traj).unwrap().is_empty());
        let (cfg, mut traj) = short(8, Variant::Nested, 3);
        traj.z.pop();
        traj.x_true.pop();
        assert!(matches!(
            run_filter(&cfg, &traj),
            Err(Error::TrajectoryLength { got: 2, expected: 3 })
        ));
    }

    #[test]
    fn variants_agree_with_sequential() {
        let (cfg, traj) = short(256, Variant::Sequential, 20);
        let reference = run_filter(&cfg, &traj).unwrap();
        for v in [Variant::Atz, Variant::Nested, Variant::Naive] {
            for p in [1, 3, 8] {
                let mut c = cfg.clone();
                c.variant = v;
                c.workers = p;
                let got = run_filter(&c, &traj).unwrap();
                for (a, b) in got.iter().zip(&reference) {
                    assert_eq!(a.resampled, b.resampled);
                    assert_eq!(a.ess, b.ess);
                    assert_eq!(a.mu, b.mu, "{v} P={p} k={}", a.k);
                }
            }
        }
    }

    #[test]
    fn weights_reset_after_resampling() {
        let (mut cfg, traj) = short(32, Variant::Naive, 5);
        cfg.threshold = 32.0;
        let mut e = eng();
        let ens = Ensemble::from_prior(&mut e, 32, &cfg.model, cfg.seed).unwrap();
        let (out, diag) = sir_step(&mut e, ens, traj.z[0], &cfg, 1).unwrap();
        assert!(diag.resampled);
        assert!(out.weights.iter().all(|&w| w == 1.0 / 32.0));
        assert_eq!(out.keys, (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn weights_stay_normalized() {
        let (cfg, traj) = short(128, Variant::Atz, 1);
        let mut e = eng();
        let ens = Ensemble::from_prior(&mut e, 128, &cfg.model, cfg.seed).unwrap();
        let (out, diag) = sir_step(&mut e, ens, traj.z[0], &cfg, 1).unwrap();
        let total: f64 = out.weights.iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
        assert!((1.0..=128.0).contains(&diag.ess));
    }

    #[test]
    fn bootstrap_increment_is_the_likelihood() {
        let mut e = eng();
        let p = ModelParams::default();
        let prev = [0.5, -1.0, 3.0, 2.0];
        let next = [1.0, 2.0, -3.0, 0.0];
        let inc = Bootstrap.log_weight(&mut e, &prev, &next, 3, 0.7, &p).unwrap();
        assert_eq!(inc, log_likelihood(&mut e, &next, 0.7, &p).unwrap());
    }

    #[test]
    fn diagnostics_csv_schema() {
        let (cfg, traj) = short(16, Variant::Atz, 3);
        let steps = run_filter(&cfg, &traj).unwrap();
        let mut buf = Vec::new();
        write_diagnostics_csv(&mut buf, &steps).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("#schema=1"));
        assert_eq!(lines.next(), Some("k,ess,resampled,mu,supersteps,moved_elements"));
        assert_eq!(lines.count(), 3);
    }
}
