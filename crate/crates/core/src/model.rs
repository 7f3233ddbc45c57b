//! Univariate nonstationary growth model.
//!
//! ```text
//! x_k = x_{k-1} / 2 + 25 x_{k-1} / (1 + x_{k-1}^2) + 8 cos(1.2 k) + v_k,   v_k ~ N(0, sigma_v^2)
//! z_k = x_k^2 / 20 + n_k,                                                  n_k ~ N(0, sigma_n^2)
//! x_0 ~ N(0, sigma_0^2)
//! ```

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::{ensure_same_len, Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `sigma_v^2`
    pub process_var: f64,
    /// `sigma_n^2`
    pub measurement_var: f64,
    /// `sigma_0^2`
    pub prior_var: f64,
    /// Number of time steps `T`.
    pub horizon: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            process_var: 10.0,
            measurement_var: 1.0,
            prior_var: 10.0,
            horizon: 50,
        }
    }
}

impl ModelParams {
    /// Variances must be finite and non-negative; zero gives a noise-free model.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("process variance", self.process_var),
            ("measurement variance", self.measurement_var),
            ("prior variance", self.prior_var),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Model(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Deterministic part of the state transition into step `k`.
pub fn transition(x: f64, k: usize) -> f64 {
    0.5 * x + 25.0 * x / (1.0 + x * x) + 8.0 * (1.2 * k as f64).cos()
}

/// Noise-free measurement of state `x`.
pub fn observe(x: f64) -> f64 {
    x * x / 20.0
}

fn gaussian<R: Rng>(rng: &mut R, var: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    var.sqrt() * z
}

/// True states and measurements for steps `1..=T`; index `k - 1` holds step `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x_true: Vec<f64>,
    pub z: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    k: usize,
    x_true: f64,
    z: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Writes `#seed=<seed>` and then the columns `k, x_true, z`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#seed={}", self.seed)?;
        let mut out = csv::Writer::from_writer(w);
        for (i, (&x_true, &z)) in self.x_true.iter().zip(&self.z).enumerate() {
            out.serialize(TrajectoryRow { k: i + 1, x_true, z })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut text = String::new();
        let mut r = r;
        r.read_to_string(&mut text)?;
        let mut seed = 0;
        for line in text.lines().filter(|l| l.starts_with('#')) {
            if let Some(v) = line.trim_start_matches('#').trim().strip_prefix("seed=") {
                seed = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Model(format!("bad seed line {line:?}")))?;
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut x_true = Vec::new();
        let mut z = Vec::new();
        for (i, row) in reader.deserialize::<TrajectoryRow>().enumerate() {
            let row = row?;
            if row.k != i + 1 {
                return Err(Error::Model(format!(
                    "row {} has k = {}, expected {}",
                    i + 1,
                    row.k,
                    i + 1
                )));
            }
            x_true.push(row.x_true);
            z.push(row.z);
        }
        Ok(Self { x_true, z, seed })
    }
}

pub fn simulate_truth(params: &ModelParams, seed: u64) -> Result<Trajectory> {
    params.validate()?;
    let mut x = gaussian(&mut stream(seed, Purpose::Truth, 0, 0), params.prior_var);
    let mut x_true = Vec::with_capacity(params.horizon);
    let mut z = Vec::with_capacity(params.horizon);
    for k in 1..=params.horizon {
        let mut rng = stream(seed, Purpose::Truth, k as u64, 0);
        x = transition(x, k) + gaussian(&mut rng, params.process_var);
        x_true.push(x);
        z.push(observe(x) + gaussian(&mut rng, params.measurement_var));
    }
    Ok(Trajectory { x_true, z, seed })
}

/// `n` independent draws from the prior; draw `i` uses the stream of particle `i`.
pub fn prior_sample(eng: &mut Engine, n: usize, params: &ModelParams, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    let var = params.prior_var;
    Ok(eng.collect(n, |i, _| {
        gaussian(&mut stream(seed, Purpose::Prior, 0, i as u64), var)
    }))
}

/// Moves every particle through the dynamics into step `k`. The noise for a
/// particle comes from the stream addressed by its key, so permuting
/// `(key, state)` pairs permutes the output the same way.
pub fn propagate(
    eng: &mut Engine,
    keys: &[usize],
    states: &[f64],
    k: usize,
    params: &ModelParams,
    seed: u64,
) -> Result<Vec<f64>> {
    params.validate()?;
    ensure_same_len(keys.len(), states.len())?;
    let var = params.process_var;
    Ok(eng.collect(states.len(), |i, _| {
        let mut rng = stream(seed, Purpose::Propagate, k as u64, keys[i] as u64);
        transition(states[i], k) + gaussian(&mut rng, var)
    }))
}

/// `-(z - x^2 / 20)^2 / (2 sigma_n^2)` for every particle.
pub fn log_likelihood(eng: &mut Engine, states: &[f64], z: f64, params: &ModelParams) -> Result<Vec<f64>> {
    let var = params.measurement_var;
    if !(var > 0.0 && var.is_finite()) {
        return Err(Error::Model(format!(
            "measurement variance must be > 0, got {var}"
        )));
    }
    Ok(eng.collect(states.len(), |i, _| {
        let r = z - observe(states[i]);
        -(r * r) / (2.0 * var)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_free() -> ModelParams {
        ModelParams {
            process_var: 0.0,
            measurement_var: 0.0,
            prior_var: 0.0,
            horizon: 5,
        }
    }

    #[test]
    fn noise_free_trajectory() {
        let t = simulate_truth(&noise_free(), 3).unwrap();
        let x1 = 8.0 * 1.2f64.cos();
        assert_eq!(t.x_true[0], x1);
        assert_eq!(t.z[0], x1 * x1 / 20.0);
        let mut x = 0.0;
        for k in 1..=5 {
            x = 0.5 * x + 25.0 * x / (1.0 + x * x) + 8.0 * (1.2 * k as f64).cos();
            assert_eq!(t.x_true[k - 1], x);
        }
    }

    #[test]
    fn trajectories_are_seeded() {
        let p = ModelParams::default();
        assert_eq!(simulate_truth(&p, 7).unwrap(), simulate_truth(&p, 7).unwrap());
        let a = simulate_truth(&p, 7).unwrap();
        let b = simulate_truth(&p, 8).unwrap();
        assert_ne!(a.x_true, b.x_true);
        assert_eq!(a.len(), 50);
    }

    #[test]
    fn rejects_bad_params() {
        let p = ModelParams {
            process_var: -1.0,
            ..ModelParams::default()
        };
        assert!(matches!(simulate_truth(&p, 0), Err(Error::Model(_))));
        let p = ModelParams {
            prior_var: f64::NAN,
            ..ModelParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn prior_draws() {
        let mut e = Engine::new(4).unwrap();
        assert!(prior_sample(&mut e, 16, &noise_free(), 1)
            .unwrap()
            .iter()
            .all(|&x| x == 0.0));
        let p = ModelParams::default();
        let n = 100_000;
        let xs = prior_sample(&mut e, n, &p, 11).unwrap();
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 * (p.prior_var / n as f64).sqrt(), "mean {mean}");
        assert_eq!(xs, prior_sample(&mut e, n, &p, 11).unwrap());
    }

    #[test]
    fn propagate_noise_free_and_reproducible() {
        let mut e = Engine::new(2).unwrap();
        let keys: Vec<usize> = (0..8).collect();
        let out = propagate(&mut e, &keys, &[0.0; 8], 1, &noise_free(), 0).unwrap();
        assert!(out.iter().all(|&x| x == 8.0 * 1.2f64.cos()));
        let p = ModelParams::default();
        let x: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let a = propagate(&mut e, &keys, &x, 4, &p, 9).unwrap();
        assert_eq!(
            a,
            propagate(&mut Engine::new(1).unwrap(), &keys, &x, 4, &p, 9).unwrap()
        );
    }

    #[test]
    fn propagate_follows_keys() {
        let mut e = Engine::new(2).unwrap();
        let p = ModelParams::default();
        let keys: Vec<usize> = (0..8).collect();
        let x: Vec<f64> = (0..8).map(|i| (i * i) as f64 / 3.0).collect();
        let out = propagate(&mut e, &keys, &x, 2, &p, 5).unwrap();
        let perm = [3, 0, 7, 1, 6, 2, 5, 4];
        let pk: Vec<usize> = perm.iter().map(|&j| keys[j]).collect();
        let px: Vec<f64> = perm.iter().map(|&j| x[j]).collect();
        let pout = propagate(&mut e, &pk, &px, 2, &p, 5).unwrap();
        for (slot, &j) in perm.iter().enumerate() {
            assert_eq!(pout[slot], out[j]);
        }
    }

    #[test]
    fn likelihood_shape() {
        let mut e = Engine::new(1).unwrap();
        let p = ModelParams::default();
        let x = [2.0, 4.0, -4.0];
        let z = observe(4.0);
        let l = log_likelihood(&mut e, &x, z, &p).unwrap();
        assert_eq!(l[1], 0.0);
        assert_eq!(l[1], l[2]);
        assert!(l[0] < 0.0);
        let wide = ModelParams {
            measurement_var: 2.0,
            ..p
        };
        let l2 = log_likelihood(&mut e, &x, z, &wide).unwrap();
        for (a, b) in l.iter().zip(&l2) {
            assert_eq!(*b, a / 2.0);
        }
        assert!(log_likelihood(&mut e, &x, z, &noise_free()).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = simulate_truth(&ModelParams::default(), 21).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#seed=21\nk,x_true,z\n1,"));
        assert_eq!(Trajectory::read_csv(buf.as_slice()).unwrap(), t);
    }
}
