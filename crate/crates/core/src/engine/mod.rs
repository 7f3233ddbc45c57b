//! Barrier-separated superstep executor over `P` emulated workers.
//!
//! Every primitive in this crate runs as a sequence of supersteps. Within one
//! superstep each worker owns a contiguous block of the output vector, may read
//! any element of the inputs, and writes only its own block. Results never
//! depend on `P`: the per-element computation is the same whichever worker runs
//! it, and the barrier at the end of each superstep orders everything else.
//!
//! The engine counts what actually happens rather than what a pass declares.
//! Closures route every off-index read through [`Ctx::read`], so `touched` and
//! `moved` are exact, and a data-dependent access pattern shows up as
//! data-dependent counts.

mod mapreduce;

use std::any::Any;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};

/// Environment variable that forces every engine built with
/// [`Engine::from_env`] into single-worker reference mode.
pub const REFERENCE_ENV: &str = "PPF_REFERENCE_MODE";

/// Below this length worker blocks run on the calling thread.
const PARALLEL_MIN_LEN: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub worker: usize,
    pub lo: usize,
    pub hi: usize,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }

    pub fn contains(&self, i: usize) -> bool {
        self.lo <= i && i < self.hi
    }
}

/// Balanced contiguous blocks: the first `n % workers` blocks hold one extra element.
pub fn plan_partitions(n: usize, workers: usize) -> Result<Vec<Partition>> {
    Ok(Layout::new(n, workers)?.partitions())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    n: usize,
    workers: usize,
    base: usize,
    extra: usize,
}

impl Layout {
    pub fn new(n: usize, workers: usize) -> Result<Self> {
        if workers == 0 || workers > n {
            return Err(Error::InvalidWorkers { workers, n });
        }
        Ok(Self::clamped(n, workers))
    }

    /// Layout for a vector that may be shorter than the worker count; surplus
    /// workers get no block.
    pub fn clamped(n: usize, workers: usize) -> Self {
        let workers = workers.min(n).max(1);
        Self {
            n,
            workers,
            base: n / workers,
            extra: n % workers,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn block(&self, worker: usize) -> Partition {
        let lo = worker * self.base + worker.min(self.extra);
        let size = self.base + usize::from(worker < self.extra);
        Partition {
            worker,
            lo,
            hi: lo + size,
        }
    }

    pub fn owner(&self, i: usize) -> usize {
        let big = (self.base + 1) * self.extra;
        if i < big {
            i / (self.base + 1)
        } else {
            self.extra + (i - big) / self.base
        }
    }

    pub fn partitions(&self) -> Vec<Partition> {
        (0..self.workers).map(|w| self.block(w)).collect()
    }

    /// Block size when every block has the same length.
    pub fn uniform_block(&self) -> Option<usize> {
        (self.extra == 0 && self.base > 0).then_some(self.base)
    }
}

/// Set of indices touched by a sparse superstep: runs of `run` consecutive
/// indices starting at `start`, `start + stride`, `start + 2 * stride`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lanes {
    start: usize,
    run: usize,
    stride: usize,
}

impl Lanes {
    pub const ALL: Lanes = Lanes {
        start: 0,
        run: 1,
        stride: 1,
    };

    pub fn strided(start: usize, stride: usize) -> Self {
        Self::runs(start, 1, stride)
    }

    pub fn runs(start: usize, run: usize, stride: usize) -> Self {
        assert!(run >= 1 && run <= stride, "lanes need 1 <= run <= stride");
        Self { start, run, stride }
    }

    pub fn contains(&self, i: usize) -> bool {
        i >= self.start && (i - self.start) % self.stride < self.run
    }

    #[inline]
    fn for_each_in(&self, lo: usize, hi: usize, mut f: impl FnMut(usize)) {
        if self.run == self.stride {
            for i in lo.max(self.start)..hi {
                f(i);
            }
            return;
        }
        let mut t = lo.saturating_sub(self.start) / self.stride;
        loop {
            let a = self.start + t * self.stride;
            if a >= hi {
                break;
            }
            for i in a.max(lo)..(a + self.run).min(hi) {
                f(i);
            }
            t += 1;
        }
    }
}

/// Instrumentation for one pass. All counts are exact.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PassStats {
    pub workers: usize,
    pub supersteps: u64,
    /// Elements written plus off-index elements read, per worker.
    pub touched: Vec<u64>,
    /// Reads (or run writes) whose source and destination partitions differ.
    pub moved: u64,
    /// Largest number of elements a single worker wrote in a single superstep.
    pub max_load: u64,
    #[serde(rename = "wall_time_s", serialize_with = "as_secs")]
    pub wall_time: Duration,
}

fn as_secs<S: Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl PassStats {
    pub fn new(workers: usize) -> Self {
        Self {
            workers,
            touched: vec![0; workers],
            ..Self::default()
        }
    }

    pub fn max_touched(&self) -> u64 {
        self.touched.iter().copied().max().unwrap_or(0)
    }

    pub fn total_touched(&self) -> u64 {
        self.touched.iter().sum()
    }

    /// Equality of every count; wall time is ignored.
    pub fn same_counts(&self, other: &PassStats) -> bool {
        self.workers == other.workers
            && self.supersteps == other.supersteps
            && self.touched == other.touched
            && self.moved == other.moved
            && self.max_load == other.max_load
    }

    pub fn merge(&mut self, other: &PassStats) {
        if self.touched.len() < other.touched.len() {
            self.touched.resize(other.touched.len(), 0);
        }
        for (t, o) in self.touched.iter_mut().zip(&other.touched) {
            *t += o;
        }
        self.workers = self.workers.max(other.workers);
        self.supersteps += other.supersteps;
        self.moved += other.moved;
        self.max_load = self.max_load.max(other.max_load);
        self.wall_time += other.wall_time;
    }
}

/// Per-worker view handed to superstep closures.
#[derive(Debug)]
pub struct Ctx {
    lo: usize,
    hi: usize,
    reads: u64,
    moved: u64,
}

impl Ctx {
    fn new(part: Partition) -> Self {
        Self {
            lo: part.lo,
            hi: part.hi,
            reads: 0,
            moved: 0,
        }
    }

    /// Records a read of element `j` and returns it unchanged.
    #[inline]
    pub fn read(&mut self, j: usize) -> usize {
        self.reads += 1;
        self.moved += u64::from(j.wrapping_sub(self.lo) >= self.hi - self.lo);
        j
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    worker: usize,
    writes: u64,
    reads: u64,
    moved: u64,
}

/// Unwind payload carrying the location of a failed worker.
#[derive(Debug)]
struct WorkerFault {
    worker: usize,
    superstep: u64,
    message: String,
}

fn panic_message(payload: &(dyn Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else if let Some(f) = payload.downcast_ref::<WorkerFault>() {
        f.message.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

#[derive(Debug)]
pub struct Engine {
    workers: usize,
    threads: bool,
    stats: PassStats,
}

impl Engine {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidWorkers { workers, n: 0 });
        }
        let threads = std::thread::available_parallelism()
            .map(|n| n.get() > 1)
            .unwrap_or(false);
        Ok(Self {
            workers,
            threads,
            stats: PassStats::new(workers),
        })
    }

    /// Single-worker engine; its results are the reference every other `P` must match.
    pub fn reference() -> Self {
        Self::new(1).expect("one worker is always valid")
    }

    /// Like [`Engine::new`], but [`REFERENCE_ENV`] set to `1` or `true` forces `P = 1`.
    pub fn from_env(workers: usize) -> Result<Self> {
        let forced = std::env::var(REFERENCE_ENV)
            .map(|v| v == "1" || v.eq_ignore_ascii_case("true"))
            .unwrap_or(false);
        Self::new(if forced { 1 } else { workers })
    }

    /// Enables or disables OS threads for large supersteps. Results are identical either way.
    pub fn with_threads(mut self, threads: bool) -> Self {
        self.threads = threads;
        self
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn layout(&self, n: usize) -> Layout {
        Layout::clamped(n, self.workers)
    }

    pub fn stats(&self) -> &PassStats {
        &self.stats
    }

    pub fn take_stats(&mut self) -> PassStats {
        std::mem::replace(&mut self.stats, PassStats::new(self.workers))
    }

    /// Runs `pass` with fresh instrumentation and returns its stats. The pass
    /// counts are also folded into whatever the engine was accumulating before.
    /// A panic inside a worker becomes [`Error::WorkerPanic`].
    pub fn run_pass<R>(&mut self, pass: impl FnOnce(&mut Engine) -> R) -> Result<(R, PassStats)> {
        let outer = std::mem::replace(&mut self.stats, PassStats::new(self.workers));
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| pass(&mut *self)));
        let mut stats = std::mem::replace(&mut self.stats, outer);
        stats.wall_time = start.elapsed();
        self.stats.merge(&stats);
        match outcome {
            Ok(r) => Ok((r, stats)),
            Err(payload) => match payload.downcast::<WorkerFault>() {
                Ok(fault) => Err(Error::WorkerPanic {
                    worker: fault.worker,
                    superstep: fault.superstep,
                    message: fault.message,
                }),
                Err(other) => panic::resume_unwind(other),
            },
        }
    }

    /// One superstep that produces a fresh vector: `out[i] = f(i)`.
    pub fn collect<U, F>(&mut self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize, &mut Ctx) -> U + Sync + Clone,
    {
        let layout = self.layout(n);
        let items = layout.partitions().into_iter().map(|p| (p, ())).collect();
        let mut blocks = self.run_workers(n, items, |part, (), ctx| {
            let f = f.clone();
            let block: Vec<U> = (part.lo..part.hi).map(|i| f(i, ctx)).collect();
            let writes = block.len() as u64;
            (block, writes)
        });
        if blocks.len() == 1 {
            return blocks.pop().unwrap_or_default();
        }
        let mut out = Vec::with_capacity(n);
        for b in blocks {
            out.extend(b);
        }
        out
    }

    /// One superstep writing every element of `out`.
    pub fn fill<U, F>(&mut self, out: &mut [U], f: F)
    where
        U: Send,
        F: Fn(usize, &mut Ctx) -> U + Sync + Clone,
    {
        let n = out.len();
        let layout = self.layout(n);
        let items = split_blocks(out, &layout);
        self.run_workers(n, items, |part, block, ctx| {
            let f = f.clone();
            for (slot, i) in block.iter_mut().zip(part.lo..part.hi) {
                *slot = f(i, ctx);
            }
            ((), part.len() as u64)
        });
    }

    /// One superstep over the active lanes of `out`; other slots are left as
    /// they are and `None` keeps the current value. `f` must not read `out`,
    /// so callers alternate between two buffers.
    pub fn update<U, F>(&mut self, out: &mut [U], lanes: Lanes, f: F)
    where
        U: Send,
        F: Fn(usize, &mut Ctx) -> Option<U> + Sync + Clone,
    {
        let n = out.len();
        let layout = self.layout(n);
        let items = split_blocks(out, &layout);
        self.run_workers(n, items, |part, block, ctx| {
            let f = f.clone();
            let mut writes = 0u64;
            lanes.for_each_in(part.lo, part.hi, |i| {
                if let Some(v) = f(i, ctx) {
                    block[i - part.lo] = v;
                    writes += 1;
                }
            });
            ((), writes)
        });
    }

    /// One superstep that updates the active lanes of `buf` in place. Every
    /// worker computes from the state before the superstep and writes land at
    /// the barrier; `None` keeps the current value.
    pub fn apply<U, F>(&mut self, buf: &mut [U], lanes: Lanes, f: F)
    where
        U: Send + Sync,
        F: Fn(usize, &[U], &mut Ctx) -> Option<U> + Sync + Clone,
    {
        let n = buf.len();
        let layout = self.layout(n);
        let items = layout.partitions().into_iter().map(|p| (p, ())).collect();
        let state: &[U] = buf;
        let pending = self.run_workers(n, items, |part, (), ctx| {
            let f = f.clone();
            let mut writes = Vec::new();
            lanes.for_each_in(part.lo, part.hi, |i| {
                if let Some(v) = f(i, state, ctx) {
                    writes.push((i, v));
                }
            });
            let count = writes.len() as u64;
            (writes, count)
        });
        for (i, v) in pending.into_iter().flatten() {
            buf[i] = v;
        }
    }

    /// One superstep in which source element `i` (owned by the worker that owns
    /// `i` in a `sources`-long layout) writes `len` copies of a value starting at
    /// output slot `start`. Writers may reach outside their own output block;
    /// they run in worker-id order, so overlaps resolve deterministically.
    pub fn scatter_runs<U, F>(&mut self, out: &mut [U], sources: usize, run: F)
    where
        U: Clone,
        F: Fn(usize, &mut Ctx) -> Option<(usize, usize, U)>,
    {
        let superstep = self.stats.supersteps;
        let src_layout = self.layout(sources);
        let out_layout = self.layout(out.len());
        let mut tallies = Vec::with_capacity(src_layout.workers());
        for part in src_layout.partitions() {
            let own = if part.worker < out_layout.workers() {
                out_layout.block(part.worker)
            } else {
                Partition {
                    worker: part.worker,
                    lo: 0,
                    hi: 0,
                }
            };
            let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
                let mut ctx = Ctx::new(part);
                let mut tally = Tally {
                    worker: part.worker,
                    ..Tally::default()
                };
                for i in part.lo..part.hi {
                    let Some((start, len, value)) = run(i, &mut ctx) else {
                        continue;
                    };
                    let end = start + len;
                    out[start..end].fill(value);
                    let inside = end.min(own.hi).saturating_sub(start.max(own.lo));
                    tally.writes += len as u64;
                    tally.moved += (len - inside) as u64;
                }
                tally.reads = ctx.reads;
                tally.moved += ctx.moved;
                tally
            }));
            match outcome {
                Ok(t) => tallies.push(t),
                Err(payload) => panic::resume_unwind(Box::new(WorkerFault {
                    worker: part.worker,
                    superstep,
                    message: panic_message(payload.as_ref()),
                })),
            }
        }
        self.record(&tallies);
    }

    fn run_workers<I, R, B>(&mut self, n: usize, items: Vec<(Partition, I)>, body: B) -> Vec<R>
    where
        I: Send,
        R: Send,
        B: Fn(Partition, I, &mut Ctx) -> (R, u64) + Sync,
    {
        let superstep = self.stats.supersteps;
        let run = |(part, item): (Partition, I)| {
            panic::catch_unwind(AssertUnwindSafe(|| {
                let mut ctx = Ctx::new(part);
                let (r, writes) = body(part, item, &mut ctx);
                let tally = Tally {
                    worker: part.worker,
                    writes,
                    reads: ctx.reads,
                    moved: ctx.moved,
                };
                (r, tally)
            }))
            .map_err(|payload| WorkerFault {
                worker: part.worker,
                superstep,
                message: panic_message(payload.as_ref()),
            })
        };
        let outcomes: Vec<_> = if self.threads && items.len() > 1 && n >= PARALLEL_MIN_LEN {
            items.into_par_iter().map(run).collect()
        } else {
            items.into_iter().map(run).collect()
        };
        let mut results = Vec::with_capacity(outcomes.len());
        let mut tallies = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            match outcome {
                Ok((r, t)) => {
                    results.push(r);
                    tallies.push(t);
                }
                Err(fault) => panic::resume_unwind(Box::new(fault)),
            }
        }
        self.record(&tallies);
        results
    }

    fn record(&mut self, tallies: &[Tally]) {
        let stats = &mut self.stats;
        stats.supersteps += 1;
        for t in tallies {
            stats.touched[t.worker] += t.writes + t.reads;
            stats.moved += t.moved;
            stats.max_load = stats.max_load.max(t.writes);
        }
    }
}

fn split_blocks<'a, U>(out: &'a mut [U], layout: &Layout) -> Vec<(Partition, &'a mut [U])> {
    let mut rest = out;
    let mut items = Vec::with_capacity(layout.workers());
    for part in layout.partitions() {
        let (head, tail) = rest.split_at_mut(part.len());
        items.push((part, head));
        rest = tail;
    }
    items
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partitions_match_examples() {
        let p = plan_partitions(8, 2).unwrap();
        assert_eq!((p[0].lo, p[0].hi, p[1].lo, p[1].hi), (0, 4, 4, 8));

        let p = plan_partitions(8, 8).unwrap();
        assert!(p.iter().enumerate().all(|(w, b)| b.lo == w && b.len() == 1));

        let sizes: Vec<_> = plan_partitions(8, 3)
            .unwrap()
            .iter()
            .map(Partition::len)
            .collect();
        assert_eq!(sizes, vec![3, 3, 2]);
    }

    #[test]
    fn invalid_worker_counts() {
        assert!(matches!(plan_partitions(4, 0), Err(Error::InvalidWorkers { .. })));
        assert!(matches!(plan_partitions(4, 5), Err(Error::InvalidWorkers { .. })));
        assert!(Engine::new(0).is_err());
    }

    #[test]
    fn owner_agrees_with_blocks() {
        for n in 1..40 {
            for p in 1..=n.min(9) {
                let layout = Layout::new(n, p).unwrap();
                let parts = layout.partitions();
                assert_eq!(parts.first().unwrap().lo, 0);
                assert_eq!(parts.last().unwrap().hi, n);
                for w in parts.windows(2) {
                    assert_eq!(w[0].hi, w[1].lo);
                    assert!(w[0].len().abs_diff(w[1].len()) <= 1);
                }
                for i in 0..n {
                    assert!(parts[layout.owner(i)].contains(i));
                }
            }
        }
    }

    #[test]
    fn collect_counts_reads_and_moves() {
        let mut eng = Engine::new(2).unwrap();
        let src: Vec<u32> = (0..8).collect();
        let out = eng.collect(8, |i, ctx| src[ctx.read((i + 4) % 8)]);
        assert_eq!(out, vec![4, 5, 6, 7, 0, 1, 2, 3]);
        let s = eng.stats();
        assert_eq!(s.supersteps, 1);
        assert_eq!(s.moved, 8);
        assert_eq!(s.touched, vec![8, 8]);
        assert_eq!(s.max_load, 4);
    }

    #[test]
    fn strided_update_touches_only_active_slots() {
        let mut eng = Engine::new(3).unwrap();
        let mut v = vec![0u32; 12];
        eng.update(&mut v, Lanes::strided(1, 4), |i, _| Some(i as u32));
        assert_eq!(v, vec![0, 1, 0, 0, 0, 5, 0, 0, 0, 9, 0, 0]);
        assert_eq!(eng.stats().touched.iter().sum::<u64>(), 3);
    }

    #[test]
    fn lanes_enumerate_runs() {
        let lanes = Lanes::runs(2, 2, 4);
        for (lo, hi) in [(0, 16), (3, 11), (5, 6)] {
            let mut got = Vec::new();
            lanes.for_each_in(lo, hi, |i| got.push(i));
            let want: Vec<_> = (lo..hi).filter(|&i| lanes.contains(i)).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn apply_reads_pre_superstep_state() {
        for p in 1..=4 {
            let mut eng = Engine::new(p).unwrap();
            let mut v: Vec<u32> = (1..=8).collect();
            eng.apply(&mut v, Lanes::ALL, |i, s, ctx| Some(s[ctx.read((i + 1) % 8)]));
            assert_eq!(v, vec![2, 3, 4, 5, 6, 7, 8, 1]);
        }
    }

    #[test]
    fn scatter_runs_report_overreach() {
        let mut eng = Engine::new(4).unwrap();
        let mut out = vec![0u8; 8];
        eng.scatter_runs(&mut out, 8, |i, _| (i == 0).then_some((0, 8, 7)));
        assert_eq!(out, vec![7; 8]);
        let s = eng.stats();
        assert_eq!(s.touched[0], 8);
        assert_eq!(s.max_load, 8);
        assert_eq!(s.moved, 6);
    }

    #[test]
    fn worker_panic_reports_location() {
        let mut eng = Engine::new(4).unwrap();
        let err = eng
            .run_pass(|e| {
                e.collect(8, |i, _| i);
                e.collect(8, |i, _| {
                    assert!(i != 5, "boom at {i}");
                    i
                })
            })
            .unwrap_err();
        match err {
            Error::WorkerPanic {
                worker,
                superstep,
                message,
            } => {
                assert_eq!(worker, 2);
                assert_eq!(superstep, 1);
                assert!(message.contains("boom at 5"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn run_pass_isolates_and_folds_stats() {
        let mut eng = Engine::new(2).unwrap();
        eng.collect(4, |i, _| i);
        let ((), stats) = eng
            .run_pass(|e| {
                e.collect(4, |i, _| i);
                e.collect(4, |i, _| i);
            })
            .unwrap();
        assert_eq!(stats.supersteps, 2);
        assert_eq!(eng.stats().supersteps, 3);
    }

    #[test]
    fn stats_serialize_to_json() {
        let stats = PassStats::new(2);
        let json = serde_json::to_string(&stats).unwrap();
        assert!(json.contains("\"supersteps\":0"));
        assert!(json.contains("wall_time_s"));
    }
}
