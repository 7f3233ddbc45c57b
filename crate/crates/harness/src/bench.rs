//! Throughput and instrumented-count benchmarks of one resampling pass.

use std::io::{Read, Write};
use std::time::Duration;

use ppf_core::engine::Engine;
use ppf_core::error::{Error, Result};
use ppf_core::resampling::{mvr_counts, redistribute, sequential_oracle, Variant};
use serde::{Deserialize, Serialize};

use crate::scenario::{weights, ScenarioKind};

/// One benchmarked `(scenario, variant, N, P)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: ScenarioKind,
    pub variant: Variant,
    pub n: usize,
    pub p: usize,
    pub iterations: usize,
    /// Particles processed per second: `n * iterations / wall_time_s`.
    pub pps: f64,
    pub supersteps: u64,
    pub moved: u64,
    /// Largest per-worker write count in one superstep, over all iterations.
    pub max_load: u64,
    /// Elements touched by the busiest worker in one pass.
    pub max_touched: u64,
    /// Total wall time over all iterations.
    pub wall_time_s: f64,
}

/// Times `iterations` passes of grid resampling plus redistribution.
/// Iteration `t` draws its weights from seed `seed + t`; counts come from the
/// first pass except `max_load`, which is the worst over all passes.
pub fn bench_cell(
    scenario: ScenarioKind,
    variant: Variant,
    n: usize,
    p: usize,
    iterations: usize,
    seed: u64,
) -> Result<BenchRow> {
    if iterations == 0 {
        return Err(Error::Config("at least one iteration is required".into()));
    }
    if variant != Variant::Sequential && (!n.is_power_of_two() || n < 2) {
        return Err(Error::Config(format!(
            "the {variant} variant needs N a power of two, N >= 2; got {n}"
        )));
    }
    if p == 0 || p > n {
        return Err(Error::Config(format!("P = {p} must lie in [1, N = {n}]")));
    }
    let x: Vec<u32> = (0..n as u32).collect();
    let mut eng = Engine::new(p)?;
    let mut wall = Duration::ZERO;
    let mut row = BenchRow {
        scenario,
        variant,
        n,
        p,
        iterations,
        pps: 0.0,
        supersteps: 0,
        moved: 0,
        max_load: 0,
        max_touched: 0,
        wall_time_s: 0.0,
    };
    for t in 0..iterations {
        let (w, eps) = weights(scenario, n, seed.wrapping_add(t as u64))?;
        let (out, stats) = eng.run_pass(|e| -> Result<Vec<u32>> {
            if variant == Variant::Sequential {
                return Ok(sequential_oracle(&w, eps, &x)?.1);
            }
            let m = mvr_counts(e, &w, eps)?;
            redistribute(e, variant, &m, &x)
        })?;
        std::hint::black_box(out?);
        wall += stats.wall_time;
        if t == 0 {
            row.supersteps = stats.supersteps;
            row.moved = stats.moved;
            row.max_touched = stats.max_touched();
        }
        row.max_load = row.max_load.max(stats.max_load);
    }
    row.wall_time_s = wall.as_secs_f64();
    row.pps = (n * iterations) as f64 / wall.as_secs_f64().max(1e-9);
    Ok(row)
}

/// The cartesian sweep `scenarios × variants × ns × ps`, skipping cells with `P > N`.
pub fn sweep(
    scenarios: &[ScenarioKind],
    variants: &[Variant],
    ns: &[usize],
    ps: &[usize],
    iterations: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &scenario in scenarios {
        for &n in ns {
            for &p in ps.iter().filter(|&&p| p <= n) {
                for &variant in variants {
                    rows.push(bench_cell(scenario, variant, n, p, iterations, seed)?);
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_rows_csv<W: Write, R: Serialize>(mut w: W, rows: &[R]) -> Result<()> {
    writeln!(w, "#schema=1")?;
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_rows_csv`], rejecting unknown schema versions.
pub fn read_rows_csv<R: Read, T: for<'de> Deserialize<'de>>(r: R) -> Result<Vec<T>> {
    let mut reader = std::io::BufReader::new(r);
    let mut first = String::new();
    std::io::BufRead::read_line(&mut reader, &mut first)?;
    if first.trim_end() != "#schema=1" {
        return Err(Error::Config(format!(
            "unsupported schema line `{}`",
            first.trim_end()
        )));
    }
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
