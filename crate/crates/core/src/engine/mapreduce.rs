use std::collections::BTreeMap;

use super::{Engine, Layout, Partition, Tally};
use crate::error::{Error, Result};

/// Keys with their grouped values, assigned to one reduce worker.
type Shard<K, V> = (Partition, Vec<(K, Vec<V>)>);

impl Engine {
    /// One map superstep followed by one reduce superstep.
    ///
    /// Records are split across workers in contiguous blocks and mapped to
    /// `(key, value)` pairs. Distinct keys are range-partitioned over the
    /// workers in sorted order, each reducer sees the values of one key in input
    /// order, and the output is sorted by key, so it can feed another stage.
    /// A reducer may drop its key by returning nothing; returning more than one
    /// value is an error.
    pub fn mapreduce_stage<I, K, V, O, M, R>(
        &mut self,
        records: &[I],
        mapper: M,
        reducer: R,
    ) -> Result<Vec<(K, O)>>
    where
        I: Sync,
        K: Ord + Clone + Send + Sync,
        V: Send,
        O: Send,
        M: Fn(&I) -> Vec<(K, V)> + Sync,
        R: Fn(&K, Vec<V>) -> Vec<O> + Sync,
    {
        let map_layout = self.layout(records.len());
        let items = map_layout.partitions().into_iter().map(|p| (p, ())).collect();
        let mapped = self.run_workers(records.len(), items, |part, (), _| {
            let pairs: Vec<(K, V)> = records[part.lo..part.hi].iter().flat_map(&mapper).collect();
            let writes = pairs.len() as u64;
            (pairs, writes)
        });

        let mut groups: BTreeMap<K, (Vec<usize>, Vec<V>)> = BTreeMap::new();
        for (worker, pairs) in mapped.into_iter().enumerate() {
            for (k, v) in pairs {
                let entry = groups.entry(k).or_default();
                entry.0.push(worker);
                entry.1.push(v);
            }
        }

        let reduce_layout = Layout::clamped(groups.len(), self.workers);
        let mut shuffle = vec![Tally::default(); reduce_layout.workers()];
        let mut items: Vec<Shard<K, V>> = reduce_layout
            .partitions()
            .into_iter()
            .map(|p| (p, Vec::with_capacity(p.len())))
            .collect();
        for (rank, (k, (sources, values))) in groups.into_iter().enumerate() {
            let w = reduce_layout.owner(rank);
            let t = &mut shuffle[w];
            t.worker = w;
            t.reads += values.len() as u64;
            t.moved += sources.iter().filter(|&&s| s != w).count() as u64;
            items[w].1.push((k, values));
        }

        let reduced = self.run_workers(reduce_layout.len(), items, |_, group, _| {
            let mut out = Vec::with_capacity(group.len());
            for (k, values) in group {
                let mut emitted = reducer(&k, values);
                match emitted.len() {
                    0 => {}
                    1 => out.push((k, emitted.pop().expect("one value"))),
                    count => return (Err(Error::MultipleReducerOutputs { count }), 0),
                }
            }
            let writes = out.len() as u64;
            (Ok(out), writes)
        });
        for t in &shuffle {
            self.stats.touched[t.worker] += t.reads;
            self.stats.moved += t.moved;
        }

        let mut out = Vec::new();
        for block in reduced {
            out.extend(block?);
        }
        Ok(out)
    }
}
