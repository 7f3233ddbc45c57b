//! Data-parallel building blocks: element-wise operations, rotations, tree
//! reductions, expansion and the two-tree cumulative sum.
//!
//! Every function runs as a fixed sequence of supersteps on an [`Engine`]. The
//! number of supersteps depends only on the vector length, never on the values.
//! Indices are 0-based throughout.

use std::ops::{Add, Sub};

use crate::engine::{Engine, Lanes};
use crate::error::{ensure_pow2, ensure_same_len, Error, Result};

/// A vector laid out over the engine's workers in contiguous blocks.
pub type DistVec<T> = Vec<T>;

/// Values that the cumulative sum can operate on.
pub trait ScanValue: Copy + Send + Sync + Add<Output = Self> + Sub<Output = Self> {}

impl<T> ScanValue for T where T: Copy + Send + Sync + Add<Output = T> + Sub<Output = T> {}

pub fn ew_map<T, U, F>(eng: &mut Engine, v: &[T], f: F) -> DistVec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    eng.collect(v.len(), |i, _| f(&v[i]))
}

pub fn ew_zip<A, B, U, F>(eng: &mut Engine, a: &[A], b: &[B], f: F) -> Result<DistVec<U>>
where
    A: Sync,
    B: Sync,
    U: Send,
    F: Fn(&A, &B) -> U + Sync,
{
    ensure_same_len(a.len(), b.len())?;
    Ok(eng.collect(a.len(), |i, _| f(&a[i], &b[i])))
}

/// `b[i]` where `mask[i]` holds, `c[i]` otherwise.
pub fn vif<T>(eng: &mut Engine, mask: &[bool], b: &[T], c: &[T]) -> Result<DistVec<T>>
where
    T: Clone + Send + Sync,
{
    ensure_same_len(mask.len(), b.len())?;
    ensure_same_len(mask.len(), c.len())?;
    Ok(eng.collect(
        mask.len(),
        |i, _| {
            if mask[i] {
                b[i].clone()
            } else {
                c[i].clone()
            }
        },
    ))
}

/// Moves the element at `i` to `(i + delta) mod n`.
pub fn rotate<T>(eng: &mut Engine, a: &[T], delta: isize) -> DistVec<T>
where
    T: Clone + Send + Sync,
{
    let n = a.len();
    if n == 0 {
        return Vec::new();
    }
    let shift = delta.rem_euclid(n as isize) as usize;
    eng.collect(n, |i, ctx| a[ctx.read((i + n - shift) % n)].clone())
}

/// Equal-length segments with one rotation amount each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSpec {
    seg_len: usize,
    shifts: Vec<isize>,
}

impl SegmentSpec {
    /// Splits a length-`n` vector into `shifts.len()` segments.
    pub fn new(n: usize, shifts: Vec<isize>) -> Result<Self> {
        let count = shifts.len();
        if count == 0 || !count.is_power_of_two() {
            return Err(Error::InvalidSegments(format!(
                "segment count {count} is not a power of two"
            )));
        }
        if !n.is_multiple_of(count) {
            return Err(Error::InvalidSegments(format!(
                "{count} segments do not divide length {n}"
            )));
        }
        Ok(Self {
            seg_len: n / count,
            shifts,
        })
    }

    pub fn segment_count(&self) -> usize {
        self.shifts.len()
    }

    pub fn segment_len(&self) -> usize {
        self.seg_len
    }

    pub fn shifts(&self) -> &[isize] {
        &self.shifts
    }

    pub fn len(&self) -> usize {
        self.seg_len * self.shifts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rotates every segment by its own shift in one superstep.
pub fn seg_rotate<T>(eng: &mut Engine, a: &[T], spec: &SegmentSpec) -> Result<DistVec<T>>
where
    T: Clone + Send + Sync,
{
    ensure_same_len(a.len(), spec.len())?;
    let m = spec.seg_len;
    let shifts: Vec<usize> = spec
        .shifts
        .iter()
        .map(|d| d.rem_euclid(m as isize) as usize)
        .collect();
    Ok(eng.collect(a.len(), |i, ctx| {
        let base = i - i % m;
        let t = i - base;
        a[ctx.read(base + (t + m - shifts[i / m]) % m)].clone()
    }))
}

/// Segmented rotation whose shifts are data, held per element.
///
/// `delta[i]` is the shift of the segment containing `i`, in `[0, seg_len)`.
/// The access pattern never depends on the shift values: segments inside one
/// worker block rotate in one local superstep, segments spanning `w` whole
/// blocks take `2 + log2(w)` supersteps, and layouts with unequal blocks fall
/// back to `log2(seg_len)` element-level stages.
pub fn seg_rotate_oblivious<T>(
    eng: &mut Engine,
    a: &[T],
    seg_len: usize,
    delta: &[usize],
) -> Result<DistVec<T>>
where
    T: Clone + Send + Sync,
{
    check_segments(a.len(), seg_len)?;
    ensure_same_len(a.len(), delta.len())?;
    if let Some(i) = delta.iter().position(|&d| d >= seg_len) {
        return Err(Error::InvalidSegments(format!(
            "shift {} at index {i} exceeds segment length {seg_len}",
            delta[i]
        )));
    }
    let n = a.len();
    let l = seg_len;
    let layout = eng.layout(n);
    let src = |i: usize, back: usize| {
        let base = i - i % l;
        base + (i - base + l - back % l) % l
    };
    match layout.uniform_block() {
        Some(b) if b % l == 0 || layout.workers() == 1 => {
            Ok(eng.collect(n, |i, ctx| a[ctx.read(src(i, delta[i]))].clone()))
        }
        Some(b) if l.is_multiple_of(b) => {
            let prev = eng.collect(n, |i, ctx| a[ctx.read(src(i, b))].clone());
            let mut y = eng.collect(n, |i, ctx| {
                let r = delta[i] % b;
                if i % b >= r {
                    a[ctx.read(i - r)].clone()
                } else {
                    prev[ctx.read(i + b - r)].clone()
                }
            });
            let mut hop = 1;
            while hop < l / b {
                y = eng.collect(n, |i, ctx| {
                    let partner = ctx.read(src(i, hop * b));
                    if (delta[i] / b) & hop != 0 {
                        y[partner].clone()
                    } else {
                        y[i].clone()
                    }
                });
                hop <<= 1;
            }
            Ok(y)
        }
        _ => {
            let mut y = a.to_vec();
            let mut hop = 1;
            while hop < l {
                y = eng.collect(n, |i, ctx| {
                    let partner = ctx.read(src(i, hop));
                    if delta[i] & hop != 0 {
                        y[partner].clone()
                    } else {
                        y[i].clone()
                    }
                });
                hop <<= 1;
            }
            Ok(y)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Max,
    Min,
}

impl ReduceOp {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ReduceOp::Sum => a + b,
            ReduceOp::Max => a.max(b),
            ReduceOp::Min => a.min(b),
        }
    }
}

/// Folds `v` with a balanced binary tree of depth `ceil(log2 n)`.
/// Each node combines `op(left, right)`; an unpaired trailing node passes through.
pub fn tree_reduce<T, F>(eng: &mut Engine, v: &[T], op: F) -> Result<T>
where
    T: Clone + Send + Sync,
    F: Fn(&T, &T) -> T + Sync,
{
    if v.is_empty() {
        return Err(Error::Empty);
    }
    let mut buf = v.to_vec();
    reduce_levels(eng, &mut buf, v.len().next_power_of_two(), &op);
    Ok(buf.swap_remove(0))
}

pub fn reduce(eng: &mut Engine, v: &[f64], op: ReduceOp) -> Result<f64> {
    tree_reduce(eng, v, |a, b| op.apply(*a, *b))
}

/// Index of the first `true`, or `None`; the leftmost candidate wins every merge.
pub fn first_true(eng: &mut Engine, mask: &[bool]) -> Result<Option<usize>> {
    let leaves: Vec<Option<usize>> = mask.iter().enumerate().map(|(i, &b)| b.then_some(i)).collect();
    tree_reduce(eng, &leaves, |a, b| a.or(*b))
}

/// Reduces every `seg_len`-long segment independently in `log2(seg_len)`
/// supersteps. `leaf` maps each index and element to the reduced type.
/// Segment totals end up at the first index of their segment; other slots
/// hold partial results.
pub fn seg_reduce<S, T, L, F>(eng: &mut Engine, v: &[S], seg_len: usize, leaf: L, op: F) -> Result<DistVec<T>>
where
    T: Send + Sync,
    L: Fn(usize, &S) -> T,
    F: Fn(&T, &T) -> T + Sync,
{
    check_segments(v.len(), seg_len)?;
    let mut buf: Vec<T> = v.iter().enumerate().map(|(i, s)| leaf(i, s)).collect();
    reduce_levels(eng, &mut buf, seg_len, &op);
    Ok(buf)
}

fn reduce_levels<T, F>(eng: &mut Engine, buf: &mut [T], span: usize, op: &F)
where
    T: Send + Sync,
    F: Fn(&T, &T) -> T + Sync,
{
    let n = buf.len();
    let mut s = 1;
    while s < span {
        eng.apply(buf, Lanes::strided(0, 2 * s), |i, b, ctx| {
            (i + s < n).then(|| op(&b[i], &b[ctx.read(i + s)]))
        });
        s <<= 1;
    }
}

/// `n` copies of `x` in one superstep.
pub fn expand<T>(eng: &mut Engine, x: T, n: usize) -> Result<DistVec<T>>
where
    T: Clone + Send + Sync,
{
    if n == 0 {
        return Err(Error::Empty);
    }
    Ok(eng.collect(n, |_, _| x.clone()))
}

/// Copies the value at the first index of each segment across the segment.
pub fn seg_expand<T>(eng: &mut Engine, v: &[T], seg_len: usize) -> Result<DistVec<T>>
where
    T: Clone + Send + Sync,
{
    check_segments(v.len(), seg_len)?;
    Ok(eng.collect(v.len(), |i, ctx| v[ctx.read(i - i % seg_len)].clone()))
}

/// Inclusive prefix sum in `2 log2 n` supersteps: an up-sweep adder tree, then
/// a down-sweep in which each right child keeps its parent's value and each
/// left child takes the parent minus the right child's up-sweep value.
pub fn inclusive_scan<T: ScanValue>(eng: &mut Engine, v: &[T]) -> Result<DistVec<T>> {
    if v.is_empty() {
        return Err(Error::Empty);
    }
    ensure_pow2(v.len())?;
    seg_scan(eng, v, v.len())
}

/// Inclusive prefix sum restarted at every `seg_len` boundary.
pub fn seg_scan<T: ScanValue>(eng: &mut Engine, v: &[T], seg_len: usize) -> Result<DistVec<T>> {
    check_segments(v.len(), seg_len)?;
    let mut buf = v.to_vec();
    let levels = seg_len.trailing_zeros();
    let mut right_up: Vec<Vec<T>> = Vec::with_capacity(levels as usize);
    for l in 0..levels {
        let s = 1usize << l;
        right_up.push(buf.iter().skip(2 * s - 1).step_by(2 * s).copied().collect());
        eng.apply(&mut buf, Lanes::strided(2 * s - 1, 2 * s), |i, b, ctx| {
            Some(b[ctx.read(i - s)] + b[i])
        });
    }
    for l in (0..levels).rev() {
        let s = 1usize << l;
        let saved = &right_up[l as usize];
        eng.apply(&mut buf, Lanes::strided(s - 1, 2 * s), |j, b, ctx| {
            let parent = ctx.read(j + s);
            Some(b[parent] - saved[parent / (2 * s)])
        });
    }
    Ok(buf)
}

fn check_segments(n: usize, seg_len: usize) -> Result<()> {
    if seg_len == 0 || !seg_len.is_power_of_two() || !n.is_multiple_of(seg_len) {
        return Err(Error::InvalidSegments(format!(
            "segment length {seg_len} for vector length {n}"
        )));
    }
    Ok(())
}
