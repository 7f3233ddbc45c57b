//! Reproducible resampling inputs.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ppf_core::engine::Engine;
use ppf_core::error::{Error, Result};
use ppf_core::resampling::{draw_epsilon, mvr_counts, CopyCounts};
use ppf_core::rng::{stream, Purpose};
use rand::Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

/// Log-scale spread of the skewed weights.
const SKEW_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Independent uniform draws, normalised.
    RandomWeights,
    /// Heavy-tailed log-normal draws, normalised; a few particles take most copies.
    SkewedWeights,
    /// All weight on particle 0, so it receives every copy.
    SingleSurvivor,
    /// Equal weights; every particle keeps exactly one copy.
    Uniform,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::RandomWeights,
        ScenarioKind::SkewedWeights,
        ScenarioKind::SingleSurvivor,
        ScenarioKind::Uniform,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::RandomWeights => "random-weights",
            ScenarioKind::SkewedWeights => "skewed-weights",
            ScenarioKind::SingleSurvivor => "single-survivor",
            ScenarioKind::Uniform => "uniform",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown scenario `{s}`")))
    }
}

/// Normalised weights and a grid offset for `(kind, n, seed)`.
pub fn weights(kind: ScenarioKind, n: usize, seed: u64) -> Result<(Vec<f64>, f64)> {
    if n == 0 {
        return Err(Error::Empty);
    }
    let raw: Vec<f64> = match kind {
        ScenarioKind::RandomWeights => (0..n)
            .map(|i| stream(seed, Purpose::Scenario, 0, i as u64).random::<f64>())
            .collect(),
        ScenarioKind::SkewedWeights => {
            let dist = LogNormal::new(0.0, SKEW_SIGMA).expect("valid log-normal parameters");
            (0..n)
                .map(|i| stream(seed, Purpose::Scenario, 0, i as u64).sample(dist))
                .collect()
        }
        ScenarioKind::SingleSurvivor => (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
        ScenarioKind::Uniform => vec![1.0; n],
    };
    let total: f64 = raw.iter().sum();
    let w = raw.iter().map(|v| v / total).collect();
    let eps = draw_epsilon(&mut stream(seed, Purpose::Scenario, 1, 0), n);
    Ok((w, eps))
}

/// A complete redistribution input: weights, offset, copy counts and payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub n: usize,
    pub seed: u64,
    pub weights: Vec<f64>,
    pub eps: f64,
    pub counts: CopyCounts,
    /// Particle `i` carries payload `i`.
    pub payload: Vec<u32>,
}

pub fn generate(kind: ScenarioKind, n: usize, seed: u64) -> Result<Scenario> {
    let (w, eps) = weights(kind, n, seed)?;
    let counts = mvr_counts(&mut Engine::reference(), &w, eps)?;
    let payload = (0..n as u32).collect();
    Ok(Scenario {
        kind,
        n,
        seed,
        weights: w,
        eps,
        counts,
        payload,
    })
}

#[derive(Serialize)]
struct ScenarioRow {
    i: usize,
    w: f64,
    m: usize,
    x: u32,
}

impl Scenario {
    /// `#schema=1` with the generating parameters, then columns `i, w, m, x`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "#schema=1 scenario={} n={} seed={} eps={}",
            self.kind, self.n, self.seed, self.eps
        )?;
        let mut out = csv::Writer::from_writer(w);
        for i in 0..self.n {
            out.serialize(ScenarioRow {
                i,
                w: self.weights[i],
                m: self.counts[i],
                x: self.payload[i],
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "scenario": self.kind,
            "n": self.n,
            "seed": self.seed,
            "eps": self.eps,
            "weights": self.weights,
            "counts": self.counts.as_slice(),
            "payload": self.payload,
        })
    }
}
