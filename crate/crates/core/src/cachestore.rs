//! Per-layer activation cache with age tracking and hit-rate accounting.

use crate::error::{Error, Result};
use crate::numerics::Tensor3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Block input and output of one layer as last written.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub layer: usize,
    pub input: Tensor3,
    pub output: Tensor3,
    /// Sampling-clock value at write time. The clock counts down, so the
    /// age of an entry is `stored_step - current_step`.
    pub stored_step: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub lookups: u64,
    pub hits: u64,
    pub misses: u64,
    pub stale_evictions: u64,
    /// Number of eligible layer-steps recorded through [`CacheStore::record_reuse`].
    pub eligible_steps: u64,
    /// Sum of `1 - weight` over eligible layer-steps.
    pub reuse_weight_sum: f64,
    /// Eligible layer-steps whose block was skipped.
    pub skipped_steps: u64,
}

impl CacheStats {
    pub fn merge(&mut self, other: &CacheStats) {
        self.lookups += other.lookups;
        self.hits += other.hits;
        self.misses += other.misses;
        self.stale_evictions += other.stale_evictions;
        self.eligible_steps += other.eligible_steps;
        self.reuse_weight_sum += other.reuse_weight_sum;
        self.skipped_steps += other.skipped_steps;
    }

    /// Counters accumulated since the snapshot `earlier`.
    pub fn since(&self, earlier: &CacheStats) -> CacheStats {
        CacheStats {
            lookups: self.lookups - earlier.lookups,
            hits: self.hits - earlier.hits,
            misses: self.misses - earlier.misses,
            stale_evictions: self.stale_evictions - earlier.stale_evictions,
            eligible_steps: self.eligible_steps - earlier.eligible_steps,
            reuse_weight_sum: self.reuse_weight_sum - earlier.reuse_weight_sum,
            skipped_steps: self.skipped_steps - earlier.skipped_steps,
        }
    }

    /// Fraction of eligible layer-steps whose block was skipped outright.
    pub fn skip_rate(&self) -> Result<f64> {
        if self.eligible_steps == 0 {
            return Err(Error::NoEligibleSteps);
        }
        Ok(self.skipped_steps as f64 / self.eligible_steps as f64)
    }
}

/// Mean of `1 - weight` over eligible layer-steps.
pub fn hit_rate(stats: &CacheStats) -> Result<f64> {
    if stats.eligible_steps == 0 {
        return Err(Error::NoEligibleSteps);
    }
    Ok(stats.reuse_weight_sum / stats.eligible_steps as f64)
}

#[derive(Debug, Clone, Default)]
pub struct CacheStore {
    entries: BTreeMap<usize, CacheEntry>,
    stats: CacheStats,
}

impl CacheStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace the entry for `layer`.
    pub fn put(&mut self, layer: usize, input: Tensor3, output: Tensor3, step: usize) {
        self.entries.insert(
            layer,
            CacheEntry {
                layer,
                input,
                output,
                stored_step: step,
            },
        );
    }

    /// Look up `layer` at clock value `current_step`.
    ///
    /// Entries older than `tau_max` are dropped and reported as a miss. An
    /// entry stamped earlier than `current_step` on the countdown clock has
    /// no meaningful age and is treated the same way.
    pub fn get(&mut self, layer: usize, current_step: usize, tau_max: usize) -> Option<(&CacheEntry, usize)> {
        self.stats.lookups += 1;
        let age = match self.entries.get(&layer) {
            None => {
                self.stats.misses += 1;
                return None;
            }
            Some(e) => e.stored_step.checked_sub(current_step),
        };
        match age {
            Some(age) if age <= tau_max => {
                self.stats.hits += 1;
                self.entries.get(&layer).map(|e| (e, age))
            }
            _ => {
                self.entries.remove(&layer);
                self.stats.stale_evictions += 1;
                self.stats.misses += 1;
                None
            }
        }
    }

    /// Read an entry without touching the counters.
    pub fn peek(&self, layer: usize) -> Option<&CacheEntry> {
        self.entries.get(&layer)
    }

    /// Account one eligible layer-step that applied blend weight `weight`.
    pub fn record_reuse(&mut self, weight: f64, skipped: bool) -> CacheStats {
        self.stats.eligible_steps += 1;
        self.stats.reuse_weight_sum += 1.0 - weight;
        if skipped {
            self.stats.skipped_steps += 1;
        }
        self.stats
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: f64) -> Tensor3 {
        Tensor3::new(1, 1, 1, vec![v]).unwrap()
    }

    #[test]
    fn age_counts_down() {
        let mut s = CacheStore::new();
        s.put(3, t(1.0), t(2.0), 40);
        let (e, age) = s.get(3, 38, 4).unwrap();
        assert_eq!(age, 2);
        assert_eq!(e.output, t(2.0));
        assert_eq!(s.stats().hits, 1);
    }

    #[test]
    fn stale_entry_is_evicted() {
        let mut s = CacheStore::new();
        s.put(3, t(1.0), t(2.0), 40);
        assert!(s.get(3, 35, 4).is_none());
        assert_eq!(s.stats().stale_evictions, 1);
        assert_eq!(s.stats().misses, 1);
        assert!(s.is_empty());
        assert!(s.get(3, 35, 4).is_none());
        assert_eq!(s.stats().stale_evictions, 1);
    }

    #[test]
    fn hit_rate_needs_eligible_steps() {
        assert_eq!(hit_rate(&CacheStats::default()), Err(Error::NoEligibleSteps));
        let mut s = CacheStore::new();
        s.record_reuse(1.0, false);
        s.record_reuse(0.0, true);
        s.record_reuse(0.5, false);
        assert_eq!(hit_rate(s.stats()).unwrap(), 0.5);
        assert!((s.stats().skip_rate().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn lookups_balance(ops in prop::collection::vec((0usize..4, 0usize..60, any::<bool>()), 1..80)) {
            let mut s = CacheStore::new();
            for (layer, step, write) in ops {
                if write {
                    s.put(layer, t(0.0), t(0.0), step);
                } else if let Some((_, age)) = s.get(layer, step, 4) {
                    prop_assert!(age <= 4);
                }
            }
            let st = s.stats();
            prop_assert_eq!(st.hits + st.misses, st.lookups);
        }

        #[test]
        fn hit_rate_in_unit_interval(weights in prop::collection::vec(0.0f64..=1.0, 1..50)) {
            let mut s = CacheStore::new();
            for w in weights {
                s.record_reuse(w, w == 0.0);
            }
            let hr = hit_rate(s.stats()).unwrap();
            prop_assert!((0.0..=1.0).contains(&hr));
        }
    }
}
