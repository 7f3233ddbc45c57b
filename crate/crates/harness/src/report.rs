//! Speedup and strong-scaling ratios derived from benchmark rows.

use std::collections::BTreeMap;

use ppf_core::error::{Error, Result};
use ppf_core::resampling::Variant;
use serde::{Deserialize, Serialize};

use crate::bench::BenchRow;
use crate::scenario::ScenarioKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioKind {
    /// atz against nested at the same `(N, P)`.
    Speedup,
    /// One variant at `P` against itself at `P = 1`.
    Scaling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub kind: RatioKind,
    pub scenario: ScenarioKind,
    /// `atz/nested` for speedups, the variant name for scaling rows.
    pub variant: String,
    pub n: usize,
    pub p: usize,
    /// Wall-clock throughput ratio; reported, not deterministic.
    pub pps_ratio: f64,
    /// Speedup: `supersteps(nested) / supersteps(atz)`.
    /// Scaling: `max_touched(P = 1) / max_touched(P)`.
    pub count_ratio: f64,
}

type Cell = (ScenarioKind, usize, usize, &'static str);

/// Speedup rows for every `(scenario, N, P)` that has an atz or nested row,
/// then scaling rows for every `(scenario, variant, N)`.
/// Fails if a counterpart cell is missing.
pub fn speedup_report(rows: &[BenchRow]) -> Result<Vec<SpeedupRow>> {
    if rows.is_empty() {
        return Err(Error::Config("no benchmark rows".into()));
    }
    let mut cells: BTreeMap<Cell, &BenchRow> = BTreeMap::new();
    for r in rows {
        if cells
            .insert((r.scenario, r.n, r.p, r.variant.as_str()), r)
            .is_some()
        {
            return Err(Error::Config(format!(
                "duplicate cell {} {} N={} P={}",
                r.scenario, r.variant, r.n, r.p
            )));
        }
    }
    let missing = |s: ScenarioKind, v: &str, n: usize, p: usize| {
        Error::Config(format!("missing cell {s} {v} N={n} P={p}"))
    };

    let mut out = Vec::new();
    let mut pairs: Vec<(ScenarioKind, usize, usize)> = cells
        .keys()
        .filter(|k| k.3 == Variant::Atz.as_str() || k.3 == Variant::Nested.as_str())
        .map(|&(s, n, p, _)| (s, n, p))
        .collect();
    pairs.dedup();
    for (s, n, p) in pairs {
        let get = |v: Variant| {
            cells
                .get(&(s, n, p, v.as_str()))
                .ok_or_else(|| missing(s, v.as_str(), n, p))
        };
        let (atz, nested) = (get(Variant::Atz)?, get(Variant::Nested)?);
        out.push(SpeedupRow {
            kind: RatioKind::Speedup,
            scenario: s,
            variant: "atz/nested".into(),
            n,
            p,
            pps_ratio: atz.pps / nested.pps,
            count_ratio: nested.supersteps as f64 / atz.supersteps as f64,
        });
    }

    for (&(s, n, p, v), row) in &cells {
        let base = cells.get(&(s, n, 1, v)).ok_or_else(|| missing(s, v, n, 1))?;
        out.push(SpeedupRow {
            kind: RatioKind::Scaling,
            scenario: s,
            variant: v.into(),
            n,
            p,
            pps_ratio: row.pps / base.pps,
            count_ratio: base.max_touched as f64 / row.max_touched.max(1) as f64,
        });
    }
    Ok(out)
}
