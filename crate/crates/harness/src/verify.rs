//! Oracle-equivalence sweeps over random resampling inputs.

use ppf_core::engine::Engine;
use ppf_core::error::{Error, Result};
use ppf_core::primitives::inclusive_scan;
use ppf_core::resampling::{mvr_counts, redistribute, sequential_oracle, Variant};
use serde::Serialize;

use crate::scenario::{weights, ScenarioKind};

/// Worker counts cycled through by successive trials.
const WORKERS: [usize; 4] = [1, 2, 4, 8];

/// Failure messages kept per size.
const KEPT_FAILURES: usize = 5;

#[derive(Debug, Clone, Default, Serialize)]
pub struct SizeReport {
    pub n: usize,
    pub trials: usize,
    pub mismatches: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub sizes: Vec<SizeReport>,
}

impl VerifyReport {
    pub fn mismatches(&self) -> usize {
        self.sizes.iter().map(|s| s.mismatches).sum()
    }

    pub fn trials(&self) -> usize {
        self.sizes.iter().map(|s| s.trials).sum()
    }
}

/// Powers of two from 2 up to `n_max`.
pub fn sizes_up_to(n_max: usize) -> Result<Vec<usize>> {
    if n_max < 2 || !n_max.is_power_of_two() {
        return Err(Error::Config(format!(
            "--n-max {n_max} must be a power of two >= 2"
        )));
    }
    Ok((1..=n_max.trailing_zeros()).map(|b| 1 << b).collect())
}

/// Copy counts by locating each grid point `k = 1..=N` with a binary search
/// over the scaled cumulative weights.
pub fn grid_point_counts(cumulative: &[f64], eps: f64) -> Vec<usize> {
    let n = cumulative.len();
    let (scale, total) = (n as f64, cumulative[n - 1]);
    let mut counts = vec![0; n];
    for k in 1..=n {
        let i = cumulative.partition_point(|&c| scale * (c / total) + scale * eps < k as f64);
        counts[i.min(n - 1)] += 1;
    }
    counts
}

fn sorted<T: Ord + Clone>(v: &[T]) -> Vec<T> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v
}

/// Runs one trial and describes the first disagreement, if any.
pub fn check_trial(w: &[f64], eps: f64, p: usize) -> Result<Option<String>> {
    let n = w.len();
    let x: Vec<u32> = (0..n as u32).map(|i| i.wrapping_mul(2_654_435_761)).collect();
    let mut eng = Engine::new(p)?;
    let m = mvr_counts(&mut eng, w, eps)?;
    if m.iter().sum::<usize>() != n {
        return Ok(Some(format!("counts sum to {}", m.iter().sum::<usize>())));
    }
    let scan = inclusive_scan(&mut Engine::reference(), w)?;
    if m.as_slice() != grid_point_counts(&scan, eps) {
        return Ok(Some("counts differ from the grid-point counts".into()));
    }
    let (m_ref, expect) = sequential_oracle(w, eps, &x)?;
    if m != m_ref {
        return Ok(Some("counts differ from the sequential oracle".into()));
    }
    let expect_sorted = sorted(&expect);
    for v in Variant::ALL {
        let got = redistribute(&mut eng, v, &m, &x)?;
        let ok = if v == Variant::Sequential {
            got == expect
        } else {
            sorted(&got) == expect_sorted
        };
        if !ok {
            return Ok(Some(format!("{v} output differs from the oracle")));
        }
    }
    Ok(None)
}

/// `trials` inputs per size; trials alternate random and skewed weights and
/// cycle the worker count. Errors raised inside a trial count as mismatches.
pub fn verify_sizes(sizes: &[usize], trials: usize, seed: u64) -> Result<VerifyReport> {
    let mut report = VerifyReport {
        seed,
        sizes: Vec::new(),
    };
    for &n in sizes {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::Config(format!("size {n} must be a power of two >= 2")));
        }
        let mut size = SizeReport {
            n,
            trials,
            ..SizeReport::default()
        };
        for t in 0..trials {
            let kind = if t % 2 == 0 {
                ScenarioKind::RandomWeights
            } else {
                ScenarioKind::SkewedWeights
            };
            let p = WORKERS[t % WORKERS.len()].min(n);
            let trial_seed = seed.wrapping_add(((n as u64) << 32) | t as u64);
            let outcome = weights(kind, n, trial_seed).and_then(|(w, eps)| check_trial(&w, eps, p));
            let failure = match outcome {
                Ok(None) => continue,
                Ok(Some(msg)) => msg,
                Err(e) => e.to_string(),
            };
            size.mismatches += 1;
            if size.failures.len() < KEPT_FAILURES {
                size.failures
                    .push(format!("N={n} trial={t} P={p} {kind}: {failure}"));
            }
        }
        report.sizes.push(size);
    }
    Ok(report)
}

pub fn verify(n_max: usize, trials: usize, seed: u64) -> Result<VerifyReport> {
    verify_sizes(&sizes_up_to(n_max)?, trials, seed)
}
