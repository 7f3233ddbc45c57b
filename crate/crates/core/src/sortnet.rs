//! Bitonic sorting network over `(key, payload)` pairs.
//!
//! Every compare stage is one superstep in which each element reads its
//! partner and keeps either its own record or the partner's. Ties never swap.
//! A descending sort is the ascending Batcher network read back to front; the
//! reversal is folded into the last stage, so both directions take
//! `k (k + 1) / 2` stages for `2^k` elements.

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, Lanes};
use crate::error::{ensure_pow2, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyedPair<T> {
    pub key: usize,
    pub payload: T,
}

impl<T> KeyedPair<T> {
    pub fn new(key: usize, payload: T) -> Self {
        Self { key, payload }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascending,
    Descending,
}

/// Which equal-length segments a segmented sort touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMask {
    All,
    /// Segments `1, 3, 5, ...`; the others keep their order.
    OddOnly,
}

/// Compare stages of a full sort of `n` elements.
pub fn stage_count(n: usize) -> u64 {
    let k = u64::from(n.max(1).trailing_zeros());
    k * (k + 1) / 2
}

pub fn bitonic_sort<T>(eng: &mut Engine, v: &[KeyedPair<T>], dir: Direction) -> Result<Vec<KeyedPair<T>>>
where
    T: Clone + Send + Sync,
{
    if v.is_empty() {
        return Err(Error::Empty);
    }
    sort_segments(eng, v, v.len(), SegmentMask::All, dir)
}

/// Sorts every `seg_len`-long segment selected by `mask` independently.
pub fn sort_segments<T>(
    eng: &mut Engine,
    v: &[KeyedPair<T>],
    seg_len: usize,
    mask: SegmentMask,
    dir: Direction,
) -> Result<Vec<KeyedPair<T>>>
where
    T: Clone + Send + Sync,
{
    check(v.len(), seg_len)?;
    let mut net = Network::new(v, seg_len, mask);
    let mut width = 2;
    while width <= seg_len {
        let mut j = width / 2;
        while j >= 1 {
            let reverse = dir == Direction::Descending && width == seg_len && j == 1;
            net.stage(eng, width, j, reverse);
            j /= 2;
        }
        width *= 2;
    }
    Ok(net.finish())
}

/// Sorts a bitonic sequence in `log2 n` stages.
pub fn bitonic_merge<T>(eng: &mut Engine, v: &[KeyedPair<T>], dir: Direction) -> Result<Vec<KeyedPair<T>>>
where
    T: Clone + Send + Sync,
{
    if v.is_empty() {
        return Err(Error::Empty);
    }
    let n = v.len();
    check(n, n)?;
    let mut net = Network::new(v, n, SegmentMask::All);
    let mut j = n / 2;
    while j >= 1 {
        net.stage(eng, n, j, dir == Direction::Descending && j == 1);
        j /= 2;
    }
    Ok(net.finish())
}

fn check(n: usize, seg_len: usize) -> Result<()> {
    ensure_pow2(n)?;
    if seg_len == 0 || !seg_len.is_power_of_two() || seg_len > n {
        return Err(Error::InvalidSegments(format!(
            "sort segment length {seg_len} for vector length {n}"
        )));
    }
    Ok(())
}

struct Network<T> {
    cur: Vec<KeyedPair<T>>,
    next: Vec<KeyedPair<T>>,
    seg_len: usize,
    lanes: Lanes,
}

impl<T: Clone + Send + Sync> Network<T> {
    fn new(v: &[KeyedPair<T>], seg_len: usize, mask: SegmentMask) -> Self {
        let lanes = match mask {
            SegmentMask::All => Lanes::ALL,
            SegmentMask::OddOnly if seg_len == v.len() => Lanes::runs(v.len(), 1, 1),
            SegmentMask::OddOnly => Lanes::runs(seg_len, seg_len, 2 * seg_len),
        };
        Self {
            cur: v.to_vec(),
            next: v.to_vec(),
            seg_len,
            lanes,
        }
    }

    fn stage(&mut self, eng: &mut Engine, width: usize, j: usize, reverse: bool) {
        let cur = self.cur.as_slice();
        let mask = self.seg_len - 1;
        let full = width == mask + 1;
        eng.update(&mut self.next, self.lanes, move |i, ctx| {
            let t = i & mask;
            let source = if reverse { i - t + (mask - t) } else { i };
            let partner = source ^ j;
            let (lo, hi) = (source.min(partner), source.max(partner));
            let descending = !full && source & mask & width != 0;
            let (a, b) = (cur[lo].key, cur[hi].key);
            let swap = (a > b) & !descending | (a < b) & descending;
            ctx.read(source);
            ctx.read(partner);
            Some(cur[std::hint::select_unpredictable(swap, partner, source)].clone())
        });
        std::mem::swap(&mut self.cur, &mut self.next);
    }

    fn finish(self) -> Vec<KeyedPair<T>> {
        self.cur
    }
}
