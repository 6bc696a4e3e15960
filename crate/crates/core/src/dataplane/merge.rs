use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::record::CaptureRecord;

pub const DEFAULT_MERGE_TIMEOUT_NS: i64 = 500_000_000;

/// All records received for one trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedCapture {
    pub trigger_id: u32,
    pub records: BTreeMap<u16, CaptureRecord>,
    pub expected: usize,
}

impl MergedCapture {
    pub fn completeness(&self) -> f64 {
        if self.expected == 0 {
            return 0.0;
        }
        self.records.len() as f64 / self.expected as f64
    }

    pub fn is_complete(&self) -> bool {
        self.records.len() == self.expected
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlushPolicy {
    /// Emit an incomplete trigger this long after its first record arrived.
    pub timeout_ns: i64,
    /// Emit trigger `T` once every expected device has sent some id above `T`.
    pub watermark: bool,
}

impl Default for FlushPolicy {
    fn default() -> Self {
        Self {
            timeout_ns: DEFAULT_MERGE_TIMEOUT_NS,
            watermark: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeStats {
    pub emitted: u64,
    pub complete: u64,
    pub duplicates: u64,
    /// Records for a trigger that had already been emitted without them.
    pub late: u64,
}

#[derive(Debug, Clone)]
struct Pending {
    records: BTreeMap<u16, CaptureRecord>,
    first_seen_ns: i64,
}

/// Groups verified records by trigger id and emits them in increasing id order.
#[derive(Debug, Clone)]
pub struct Merger {
    expected: Vec<u16>,
    policy: FlushPolicy,
    pending: BTreeMap<u32, Pending>,
    high_water: HashMap<u16, u32>,
    last_emitted: Option<u32>,
    emitted_pairs: HashSet<(u16, u32)>,
    stats: MergeStats,
}

impl Merger {
    pub fn new(expected_devices: impl IntoIterator<Item = u16>, policy: FlushPolicy) -> Self {
        let mut expected: Vec<u16> = expected_devices.into_iter().collect();
        expected.sort_unstable();
        expected.dedup();
        Self {
            expected,
            policy,
            pending: BTreeMap::new(),
            high_water: HashMap::new(),
            last_emitted: None,
            emitted_pairs: HashSet::new(),
            stats: MergeStats::default(),
        }
    }

    pub fn stats(&self) -> MergeStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Adds one record received at `now_ns` and returns whatever became ready.
    pub fn push(&mut self, record: CaptureRecord, now_ns: i64) -> Vec<MergedCapture> {
        let (device, trigger) = (record.device, record.trigger_id);
        let hw = self.high_water.entry(device).or_insert(trigger);
        *hw = (*hw).max(trigger);

        if self.last_emitted.is_some_and(|last| trigger <= last) {
            if self.emitted_pairs.contains(&(device, trigger)) {
                self.stats.duplicates += 1;
            } else {
                self.stats.late += 1;
            }
        } else {
            let entry = self.pending.entry(trigger).or_insert_with(|| Pending {
                records: BTreeMap::new(),
                first_seen_ns: now_ns,
            });
            if entry.records.contains_key(&device) {
                self.stats.duplicates += 1;
            } else {
                entry.records.insert(device, record);
            }
        }
        self.poll(now_ns)
    }

    fn ready(&self, trigger: u32, p: &Pending, now_ns: i64) -> bool {
        let complete = self.expected.iter().all(|d| p.records.contains_key(d));
        let watermark = self.policy.watermark
            && self
                .expected
                .iter()
                .all(|d| self.high_water.get(d).is_some_and(|hw| *hw > trigger));
        complete || watermark || now_ns - p.first_seen_ns >= self.policy.timeout_ns
    }

    /// Emits ready triggers from the front of the queue.
    pub fn poll(&mut self, now_ns: i64) -> Vec<MergedCapture> {
        let mut out = Vec::new();
        while let Some((&trigger, p)) = self.pending.first_key_value() {
            if !self.ready(trigger, p, now_ns) {
                break;
            }
            let p = self.pending.pop_first().expect("non-empty").1;
            out.push(self.emit(trigger, p));
        }
        out
    }

    /// End of session: emits everything still pending.
    pub fn flush(&mut self) -> Vec<MergedCapture> {
        let pending = std::mem::take(&mut self.pending);
        pending.into_iter().map(|(t, p)| self.emit(t, p)).collect()
    }

    fn emit(&mut self, trigger: u32, p: Pending) -> MergedCapture {
        self.last_emitted = Some(trigger);
        self.emitted_pairs.extend(p.records.keys().map(|d| (*d, trigger)));
        let merged = MergedCapture {
            trigger_id: trigger,
            records: p.records,
            expected: self.expected.len(),
        };
        self.stats.emitted += 1;
        if merged.is_complete() {
            self.stats.complete += 1;
        }
        merged
    }
}

#[cfg(test)]
mod tests {
    use super::super::record::tests::sample;
    use super::*;

    #[test]
    fn interleaved_complete_group() {
        let mut m = Merger::new([0, 1, 2], FlushPolicy::default());
        assert!(m.push(sample(0, 5, vec![1]), 0).is_empty());
        assert!(m.push(sample(1, 5, vec![1]), 1).is_empty());
        let out = m.push(sample(2, 5, vec![1]), 2);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].trigger_id, 5);
        assert_eq!(out[0].completeness(), 1.0);
    }

    #[test]
    fn watermark_flushes_incomplete_trigger() {
        let mut m = Merger::new([0, 1, 2], FlushPolicy::default());
        m.push(sample(0, 5, vec![1]), 0);
        m.push(sample(1, 5, vec![1]), 0);
        assert!(m.push(sample(0, 6, vec![1]), 0).is_empty());
        assert!(m.push(sample(1, 6, vec![1]), 0).is_empty());
        let out = m.push(sample(2, 6, vec![1]), 0);
        let ids: Vec<u32> = out.iter().map(|c| c.trigger_id).collect();
        assert_eq!(ids, vec![5, 6]);
        assert!((out[0].completeness() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(out[1].completeness(), 1.0);
    }

    #[test]
    fn timeout_flushes_straggler() {
        let mut m = Merger::new([0, 1], FlushPolicy::default());
        m.push(sample(0, 1, vec![1]), 0);
        assert!(m.poll(DEFAULT_MERGE_TIMEOUT_NS - 1).is_empty());
        assert_eq!(m.poll(DEFAULT_MERGE_TIMEOUT_NS).len(), 1);
    }

    #[test]
    fn duplicates_keep_the_first_copy() {
        let mut m = Merger::new([0, 1], FlushPolicy::default());
        m.push(sample(0, 5, vec![1]), 0);
        m.push(sample(0, 5, vec![2]), 0);
        assert_eq!(m.stats().duplicates, 1);
        let out = m.push(sample(1, 5, vec![1]), 0);
        assert_eq!(out[0].records[&0].payload, vec![1]);
        m.push(sample(1, 5, vec![1]), 0);
        assert_eq!(m.stats().duplicates, 2);
    }

    #[test]
    fn emission_order_is_strictly_increasing() {
        let mut m = Merger::new([0, 1], FlushPolicy::default());
        let mut ids = Vec::new();
        // device 0's trigger 0 arrives after its trigger 1 (another connection)
        for (d, t) in [(1, 0), (1, 1), (0, 1), (1, 2), (0, 0), (0, 2)] {
            ids.extend(m.push(sample(d, t, vec![1]), 0).iter().map(|c| c.trigger_id));
        }
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(m.stats().complete, 2);
        assert_eq!(m.stats().late, 1);
    }

    #[test]
    fn straggler_after_emission_is_late() {
        let mut m = Merger::new([0, 1], FlushPolicy::default());
        m.push(sample(0, 0, vec![1]), 0);
        m.poll(DEFAULT_MERGE_TIMEOUT_NS);
        m.push(sample(1, 0, vec![1]), DEFAULT_MERGE_TIMEOUT_NS + 1);
        assert_eq!(m.stats().late, 1);
        assert_eq!(m.stats().emitted, 1);
    }
}
