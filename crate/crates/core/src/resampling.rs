//! Minimum variance resampling: copy counts and redistribution.
//!
//! [`mvr_counts`] turns normalised weights and one offset `eps` into integer
//! copy counts. The redistribution strategies then materialise the new
//! population:
//!
//! * [`redistribute_atz`] sorts once into an all-trailing-zeros sequence and
//!   halves it `log2 N` times with scans, reductions and rotations.
//! * [`redistribute_nested`] also re-sorts every right half, as in the original
//!   divide-and-conquer scheme.
//! * [`redistribute_naive`] lets each particle's owner write all of its copies,
//!   which concentrates work when a few particles dominate.
//!
//! The tree levels are unrolled over full-length vectors with halving segment
//! lengths, so every level is a fixed set of supersteps whatever the counts.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::{ensure_pow2, ensure_same_len, Error, Result};
use crate::primitives::{inclusive_scan, rotate, seg_reduce, seg_rotate_oblivious, seg_scan};
use crate::sortnet::{bitonic_sort, sort_segments, Direction, KeyedPair, SegmentMask};

const SUM_TOLERANCE: f64 = 1e-12;

/// Non-negative copy counts that sum to their length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CopyCounts(Vec<usize>);

impl CopyCounts {
    pub fn new(m: Vec<usize>) -> Result<Self> {
        let sum: usize = m.iter().sum();
        if sum != m.len() {
            return Err(Error::CountSum {
                sum,
                expected: m.len(),
            });
        }
        Ok(Self(m))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_atz(&self) -> bool {
        is_atz(&self.0)
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl std::ops::Deref for CopyCounts {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

/// True when no nonzero entry follows a zero.
pub fn is_atz(m: &[usize]) -> bool {
    m.windows(2).all(|w| w[0] != 0 || w[1] == 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Atz,
    Nested,
    Naive,
    Sequential,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Atz, Variant::Nested, Variant::Naive, Variant::Sequential];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Atz => "atz",
            Variant::Nested => "nested",
            Variant::Naive => "naive",
            Variant::Sequential => "sequential",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// How the initial all-trailing-zeros sequence is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AtzMode {
    /// One descending bitonic sort.
    #[default]
    Sort,
    /// Stable compaction of the nonzero counts by prefix-sum rank.
    Compact,
}

/// Offset for the resampling grid, uniform on `[0, 1/n)`.
pub fn draw_epsilon<R: Rng + ?Sized>(rng: &mut R, n: usize) -> f64 {
    rng.random::<f64>() / n as f64
}

fn validate(w: &[f64], eps: f64) -> Result<()> {
    if w.is_empty() {
        return Err(Error::Empty);
    }
    let n = w.len();
    if !(0.0..1.0 / n as f64).contains(&eps) {
        return Err(Error::EpsilonRange { eps, n });
    }
    if let Some((index, &value)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::BadWeight { index, value });
    }
    Ok(())
}

fn check_total(total: f64) -> Result<()> {
    if (total - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Unnormalized(total));
    }
    Ok(())
}

/// Copy counts `m_i = floor(N C_i) - floor(N C_{i-1})` with `C_i = eps + S_i / S_{N-1}`,
/// where `S` is the cumulative sum of the weights. The counts always sum to `N`.
///
/// Runs as a scan, an expansion of the total, one element-wise step, a rotation
/// and one difference step: `2 log2 N + 4` supersteps.
pub fn mvr_counts(eng: &mut Engine, w: &[f64], eps: f64) -> Result<CopyCounts> {
    validate(w, eps)?;
    let n = w.len();
    ensure_pow2(n)?;
    let scale = n as f64;
    let offset = scale * eps;
    let s = inclusive_scan(eng, w)?;
    check_total(s[n - 1])?;
    let total = eng.collect(n, |_, ctx| s[ctx.read(n - 1)]);
    let grid = eng.collect(n, |i, _| {
        let point = (scale * (s[i] / total[i]) + offset).floor();
        point.clamp(0.0, scale) as usize
    });
    let prev = rotate(eng, &grid, 1);
    let m = eng.collect(n, |i, _| {
        let before = if i == 0 { 0 } else { prev[i] };
        grid[i].checked_sub(before)
    });
    let m = m
        .into_iter()
        .enumerate()
        .map(|(i, c)| c.ok_or(Error::NonMonotoneScan(i)))
        .collect::<Result<Vec<_>>>()?;
    CopyCounts::new(m)
}

/// Single-processor systematic resampling: walks the grid points
/// `1, 2, ..., N` against the running cumulative sum and emits each particle
/// once per grid point that lands in its interval.
pub fn sequential_oracle<T: Clone>(w: &[f64], eps: f64, x: &[T]) -> Result<(CopyCounts, Vec<T>)> {
    validate(w, eps)?;
    ensure_same_len(w.len(), x.len())?;
    let n = w.len();
    let scale = n as f64;
    let offset = scale * eps;
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &wi in w {
        acc += wi;
        cumulative.push(acc);
    }
    check_total(acc)?;
    let mut counts = vec![0usize; n];
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    for k in 1..=n {
        while scale * (cumulative[i] / acc) + offset < k as f64 {
            i += 1;
        }
        counts[i] += 1;
        out.push(x[i].clone());
    }
    Ok((CopyCounts::new(counts)?, out))
}

/// Each particle repeated `m_i` times, in index order.
pub fn expand_in_order<T: Clone>(m: &CopyCounts, x: &[T]) -> Result<Vec<T>> {
    ensure_same_len(m.len(), x.len())?;
    Ok(m.iter()
        .zip(x)
        .flat_map(|(&c, xi)| std::iter::repeat_n(xi.clone(), c))
        .collect())
}

/// Reorders `(m, x)` so that the counts form an all-trailing-zeros sequence.
pub fn make_atz<T>(eng: &mut Engine, m: &CopyCounts, x: &[T], mode: AtzMode) -> Result<Vec<KeyedPair<T>>>
where
    T: Clone + Send + Sync,
{
    ensure_same_len(m.len(), x.len())?;
    let n = m.len();
    ensure_pow2(n)?;
    let pairs: Vec<KeyedPair<T>> = m
        .iter()
        .zip(x)
        .map(|(&k, xi)| KeyedPair::new(k, xi.clone()))
        .collect();
    match mode {
        AtzMode::Sort => bitonic_sort(eng, &pairs, Direction::Descending),
        AtzMode::Compact => {
            let nonzero: Vec<usize> = m.iter().map(|&c| usize::from(c > 0)).collect();
            let rank = inclusive_scan(eng, &nonzero)?;
            let kept = eng.collect(n, |_, ctx| rank[ctx.read(n - 1)]);
            let mut out = pairs.clone();
            eng.scatter_runs(&mut out, n, |i, _| {
                let dest = if pairs[i].key > 0 {
                    rank[i] - 1
                } else {
                    kept[i] + i - rank[i]
                };
                Some((dest, 1, pairs[i].clone()))
            });
            Ok(out)
        }
    }
}

/// One tree node split into its left and right children, each of length `L / 2`.
pub type Halves<T> = ((Vec<usize>, Vec<T>), (Vec<usize>, Vec<T>));

/// Splits one all-trailing-zeros node of length `L` at its pivot.
pub fn split_node<T>(eng: &mut Engine, m: &[usize], x: &[T]) -> Result<Halves<T>>
where
    T: Clone + Send + Sync,
{
    ensure_same_len(m.len(), x.len())?;
    let l = m.len();
    ensure_pow2(l)?;
    if l < 2 {
        return Err(Error::InvalidSegments(
            "a node needs at least two elements".into(),
        ));
    }
    CopyCounts::new(m.to_vec())?;
    if !is_atz(m) {
        return Err(Error::NotAtz);
    }
    let pairs: Vec<KeyedPair<T>> = m
        .iter()
        .zip(x)
        .map(|(&k, xi)| KeyedPair::new(k, xi.clone()))
        .collect();
    let out = split_level(eng, &pairs, l)?;
    let (left, right) = out.split_at(l / 2);
    let unzip = |half: &[KeyedPair<T>]| -> (Vec<usize>, Vec<T>) {
        half.iter().map(|p| (p.key, p.payload.clone())).unzip()
    };
    Ok((unzip(left), unzip(right)))
}

/// One tree level over every `seg_len`-long segment.
///
/// Within a segment with counts `m`, cumulative counts `c` and half-length
/// `h`, the pivot `p` is the first index with `c_p >= h`. The left child keeps
/// `m_0..m_{p-1}` followed by `h - c_{p-1}`. The right child starts at
/// `c_p - h` when that is nonzero and at `m_{p+1}` otherwise, and is brought
/// into place by rotating the right counts by `h - p - [c_p == h]`.
fn split_level<T>(eng: &mut Engine, v: &[KeyedPair<T>], seg_len: usize) -> Result<Vec<KeyedPair<T>>>
where
    T: Clone + Send + Sync,
{
    let n = v.len();
    let l = seg_len;
    let h = l / 2;
    let keys: Vec<usize> = v.iter().map(|p| p.key).collect();
    let c = seg_scan(eng, &keys, l)?;
    let right = eng.collect(n, |i, _| {
        let before = c[i] - v[i].key;
        let count = if before >= h {
            v[i].key
        } else {
            c[i].saturating_sub(h)
        };
        KeyedPair::new(count, v[i].payload.clone())
    });
    let start = seg_reduce(
        eng,
        &c,
        l,
        |i, &ci| (ci >= h).then(|| i % l + usize::from(ci == h)),
        |a, b| a.or(*b),
    )?;
    let delta = eng.collect(n, |i, ctx| {
        let s = start[ctx.read(i - i % l)].expect("segment counts sum to the segment length");
        h - s
    });
    let rotated = seg_rotate_oblivious(eng, &right, l, &delta)?;
    Ok(eng.collect(n, |i, _| {
        if i % l < h {
            let before = c[i] - v[i].key;
            let count = if c[i] < h {
                v[i].key
            } else {
                h.saturating_sub(before)
            };
            KeyedPair::new(count, v[i].payload.clone())
        } else {
            rotated[i].clone()
        }
    }))
}

fn check_redistribution<T>(m: &CopyCounts, x: &[T]) -> Result<()> {
    ensure_same_len(m.len(), x.len())?;
    if m.is_empty() {
        return Err(Error::Empty);
    }
    ensure_pow2(m.len())
}

fn descend<T>(eng: &mut Engine, mut v: Vec<KeyedPair<T>>, resort: bool) -> Result<Vec<T>>
where
    T: Clone + Send + Sync,
{
    let mut l = v.len();
    while l >= 2 {
        v = split_level(eng, &v, l)?;
        if resort && l >= 4 {
            v = sort_segments(eng, &v, l / 2, SegmentMask::OddOnly, Direction::Descending)?;
        }
        l /= 2;
    }
    Ok(v.into_iter().map(|p| p.payload).collect())
}

/// Redistribution in `O((log N)^2)` supersteps: one sort, then `log2 N`
/// sort-free split levels.
pub fn redistribute_atz<T>(eng: &mut Engine, m: &CopyCounts, x: &[T]) -> Result<Vec<T>>
where
    T: Clone + Send + Sync,
{
    redistribute_atz_with(eng, m, x, AtzMode::Sort)
}

pub fn redistribute_atz_with<T>(eng: &mut Engine, m: &CopyCounts, x: &[T], mode: AtzMode) -> Result<Vec<T>>
where
    T: Clone + Send + Sync,
{
    check_redistribution(m, x)?;
    let v = make_atz(eng, m, x, mode)?;
    descend(eng, v, false)
}

/// Redistribution in `O((log N)^3)` supersteps: every level re-sorts its right half.
pub fn redistribute_nested<T>(eng: &mut Engine, m: &CopyCounts, x: &[T]) -> Result<Vec<T>>
where
    T: Clone + Send + Sync,
{
    check_redistribution(m, x)?;
    let v = make_atz(eng, m, x, AtzMode::Sort)?;
    descend(eng, v, true)
}

/// Cumulative sum of the counts, then each particle's owner writes its copies
/// into slots `[c_i - m_i, c_i)`. Per-worker load follows the counts.
pub fn redistribute_naive<T>(eng: &mut Engine, m: &CopyCounts, x: &[T]) -> Result<Vec<T>>
where
    T: Clone + Send + Sync,
{
    check_redistribution(m, x)?;
    let c = inclusive_scan(eng, m.as_slice())?;
    let mut out = x.to_vec();
    eng.scatter_runs(&mut out, m.len(), |i, _| {
        (m[i] > 0).then(|| (c[i] - m[i], m[i], x[i].clone()))
    });
    Ok(out)
}

/// Dispatches on `variant`; the sequential variant expands in index order without the engine.
pub fn redistribute<T>(eng: &mut Engine, variant: Variant, m: &CopyCounts, x: &[T]) -> Result<Vec<T>>
where
    T: Clone + Send + Sync,
{
    match variant {
        Variant::Atz => redistribute_atz(eng, m, x),
        Variant::Nested => redistribute_nested(eng, m, x),
        Variant::Naive => redistribute_naive(eng, m, x),
        Variant::Sequential => expand_in_order(m, x),
    }
}
