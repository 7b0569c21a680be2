use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::world_model::SegmentBatch;

/// One environment step with the planner distribution that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub mu_mean: Vec<f64>,
    pub mu_std: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub terminal: bool,
    pub episode: u64,
    pub step: usize,
}

/// Rejection attempts before falling back to a scan for valid windows.
const MAX_REJECTIONS: usize = 4096;

/// Ring buffer with uniform sampling of contiguous single-episode windows.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<TransitionRecord>,
    head: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay buffer capacity must be positive"));
        }
        Ok(ReplayBuffer { capacity, records: Vec::new(), head: 0, inserted: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records ever pushed, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn set_inserted(&mut self, inserted: u64) {
        self.inserted = inserted;
    }

    /// Appends a record, evicting the oldest when full.
    pub fn push(&mut self, record: TransitionRecord) {
        if self.records.len() < self.capacity {
            self.records.push(record);
        } else {
            self.records[self.head] = record;
            self.head = (self.head + 1) % self.capacity;
        }
        self.inserted += 1;
    }

    /// The `i`-th oldest record.
    pub fn get(&self, i: usize) -> &TransitionRecord {
        let idx = if self.records.len() < self.capacity { i } else { (self.head + i) % self.capacity };
        &self.records[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionRecord> {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Whether records `start..start+len` form one contiguous episode
    /// segment.
    pub fn is_valid_window(&self, start: usize, len: usize) -> bool {
        if len == 0 || start + len > self.len() {
            return false;
        }
        let first = self.get(start);
        let last = self.get(start + len - 1);
        last.episode == first.episode && last.step == first.step + len - 1
    }

    /// Number of valid window starts for windows of `len` records.
    pub fn count_valid_windows(&self, len: usize) -> usize {
        if len > self.len() {
            return 0;
        }
        (0..=self.len() - len).filter(|s| self.is_valid_window(*s, len)).count()
    }

    /// Whether any `len`-record window is valid. Checks the newest window
    /// first, which is the common case once data is flowing.
    pub fn has_valid_window(&self, len: usize) -> bool {
        len <= self.len() && (self.is_valid_window(self.len() - len, len) || self.count_valid_windows(len) > 0)
    }

    /// Uniform draw over valid starts of `len`-record windows.
    pub fn sample_start(&self, len: usize, rng: &mut Rng) -> Result<usize> {
        if len == 0 || len > self.len() {
            return Err(Error::contract(format!("buffer of {} records cannot supply a {len}-record segment", self.len())));
        }
        let n = self.len() - len + 1;
        for _ in 0..MAX_REJECTIONS {
            let s = rng.random_range(0..n);
            if self.is_valid_window(s, len) {
                return Ok(s);
            }
        }
        let valid: Vec<usize> = (0..n).filter(|s| self.is_valid_window(*s, len)).collect();
        if valid.is_empty() {
            return Err(Error::contract(format!("buffer holds no single-episode segment of {len} transitions")));
        }
        Ok(valid[rng.random_range(0..valid.len())])
    }

    /// `batch` segments of `horizon` transitions, i.e. `horizon + 1`
    /// observations each.
    pub fn sample(&self, batch: usize, horizon: usize, rng: &mut Rng) -> Result<SegmentBatch> {
        if self.is_empty() {
            return Err(Error::contract("cannot sample from an empty replay buffer"));
        }
        if batch == 0 || horizon == 0 {
            return Err(Error::contract("batch size and horizon must be positive"));
        }
        let first = self.get(0);
        let (od, m) = (first.obs.len(), first.action.len());
        let mut out = SegmentBatch {
            batch,
            horizon,
            obs: vec![Vec::with_capacity(batch * od); horizon + 1],
            actions: vec![Vec::with_capacity(batch * m); horizon],
            rewards: vec![Vec::with_capacity(batch); horizon],
            terminals: vec![Vec::with_capacity(batch); horizon],
            mu_mean: vec![Vec::with_capacity(batch * m); horizon],
            mu_std: vec![Vec::with_capacity(batch * m); horizon],
        };
        for _ in 0..batch {
            let s = self.sample_start(horizon, rng)?;
            for t in 0..horizon {
                let r = self.get(s + t);
                out.obs[t].extend_from_slice(&r.obs);
                out.actions[t].extend_from_slice(&r.action);
                out.rewards[t].push(r.reward);
                out.terminals[t].push(r.terminal);
                out.mu_mean[t].extend_from_slice(&r.mu_mean);
                out.mu_std[t].extend_from_slice(&r.mu_std);
                if t + 1 == horizon {
                    out.obs[horizon].extend_from_slice(&r.next_obs);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    pub(crate) fn record(episode: u64, step: usize, x: f64, done: bool) -> TransitionRecord {
        TransitionRecord {
            obs: vec![x],
            action: vec![0.0],
            mu_mean: vec![0.0],
            mu_std: vec![1.0],
            reward: 0.5,
            next_obs: vec![x + 1.0],
            done,
            terminal: false,
            episode,
            step,
        }
    }

    fn filled(episodes: u64, len: usize, cap: usize) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(cap).unwrap();
        let mut k = 0.0;
        for e in 0..episodes {
            for s in 0..len {
                b.push(record(e, s, k, s + 1 == len));
                k += 1.0;
            }
        }
        b
    }

    #[test]
    fn eviction_drops_oldest_first() {
        let b = filled(1, 13, 10);
        assert_eq!(b.len(), 10);
        let xs: Vec<f64> = b.iter().map(|r| r.obs[0]).collect();
        assert_eq!(xs, (3..13).map(|x| x as f64).collect::<Vec<_>>());
    }

    #[test]
    fn windows_stay_in_episode() {
        let b = filled(50, 4, 1000);
        let mut rng = seeded(0);
        for _ in 0..20_000 {
            let s = b.sample_start(3, &mut rng).unwrap();
            let e = b.get(s).episode;
            assert!((s..s + 3).all(|i| b.get(i).episode == e));
        }
        assert_eq!(b.count_valid_windows(3), 100);
    }

    #[test]
    fn segment_observations_chain() {
        let b = filled(3, 10, 100);
        let seg = b.sample(8, 3, &mut seeded(2)).unwrap();
        assert_eq!(seg.obs.len(), 4);
        for r in 0..8 {
            for t in 0..3 {
                assert_eq!(seg.obs[t + 1][r], seg.obs[t][r] + 1.0);
            }
        }
    }

    #[test]
    fn impossible_segments_rejected() {
        let b = filled(5, 2, 100);
        assert!(matches!(b.sample(1, 3, &mut seeded(0)), Err(Error::Contract(_))));
        let empty = ReplayBuffer::new(4).unwrap();
        assert!(matches!(empty.sample(1, 1, &mut seeded(0)), Err(Error::Contract(_))));
    }

    #[test]
    fn sampling_is_uniform_over_starts() {
        let b = filled(2, 5, 100);
        let mut counts = [0usize; 10];
        let mut rng = seeded(9);
        let n = 60_000;
        for _ in 0..n {
            counts[b.sample_start(2, &mut rng).unwrap()] += 1;
        }
        // valid starts: 0..=3 and 5..=8
        assert_eq!(counts[4], 0);
        assert_eq!(counts[9], 0);
        for (i, c) in counts.iter().enumerate() {
            if i != 4 && i != 9 {
                let p = *c as f64 / n as f64;
                assert!((p - 0.125).abs() < 0.01, "start {i}: {p}");
            }
        }
    }
}
