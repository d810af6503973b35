//! Sequence replay buffer: N-step windows with stored behavior
//! log-probabilities, bounded by capacity (FIFO eviction) and by a per-item
//! use count.

use std::io::{Read, Write};

use rand::Rng;
use thiserror::Error;

use crate::space::HybridAction;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("malformed sequence: {0}")]
    Malformed(String),
    #[error("buffer starved: no eligible sequences left")]
    Starved,
    #[error("snapshot: {0}")]
    BadSnapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An N-step window: states `s_t..s_{t+N}`, actions/rewards/terminal flags
/// for the N steps in between, and the behavior policy's log probability of
/// each stored action. Immutable once stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTransition {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<HybridAction>,
    pub rewards: Vec<f64>,
    pub behavior_log_probs: Vec<f64>,
    pub terminals: Vec<bool>,
}

impl SequenceTransition {
    pub fn n_steps(&self) -> usize {
        self.actions.len()
    }

    fn check(&self, n_steps: usize) -> Result<(), ReplayError> {
        if self.actions.len() != n_steps {
            return Err(ReplayError::Malformed(format!(
                "expected {n_steps} actions, got {}",
                self.actions.len()
            )));
        }
        if self.states.len() != n_steps + 1 {
            return Err(ReplayError::Malformed(format!(
                "expected {} states, got {}",
                n_steps + 1,
                self.states.len()
            )));
        }
        if self.rewards.len() != n_steps
            || self.behavior_log_probs.len() != n_steps
            || self.terminals.len() != n_steps
        {
            return Err(ReplayError::Malformed(
                "rewards, log probs, and terminal flags must have one entry per step".into(),
            ));
        }
        if self.behavior_log_probs.iter().any(|lp| !lp.is_finite()) {
            return Err(ReplayError::Malformed(
                "behavior log probabilities must be finite".into(),
            ));
        }
        // A terminal step can only be the last one: windows never cross
        // episode boundaries.
        if self.terminals[..n_steps - 1].iter().any(|&t| t) {
            return Err(ReplayError::Malformed(
                "terminal step inside a window".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Slot {
    seq: SequenceTransition,
    use_count: u32,
    alive_pos: usize,
}

/// Capacity-bounded, use-count-bounded storage of [`SequenceTransition`].
#[derive(Debug)]
pub struct ReplayBuffer {
    n_steps: usize,
    capacity: usize,
    max_use: u32,
    slots: Vec<Option<Slot>>,
    /// Arena indices of live items; order is irrelevant, membership is O(1).
    alive: Vec<usize>,
    /// Arena indices in insertion order for FIFO eviction.
    fifo: std::collections::VecDeque<usize>,
    free: Vec<usize>,
}

impl ReplayBuffer {
    pub fn new(n_steps: usize, capacity: usize, max_use: u32) -> Self {
        assert!(n_steps >= 1 && capacity >= 1 && max_use >= 1);
        Self {
            n_steps,
            capacity,
            max_use,
            slots: Vec::new(),
            alive: Vec::new(),
            fifo: std::collections::VecDeque::new(),
            free: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.alive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alive.is_empty()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_use(&self) -> u32 {
        self.max_use
    }

    pub fn use_count(&self, alive_index: usize) -> u32 {
        let arena = self.alive[alive_index];
        self.slots[arena].as_ref().unwrap().use_count
    }

    fn remove_arena(&mut self, arena: usize) {
        let slot = self.slots[arena].take().expect("removing a live slot");
        let pos = slot.alive_pos;
        self.alive.swap_remove(pos);
        if pos < self.alive.len() {
            let moved = self.alive[pos];
            self.slots[moved].as_mut().unwrap().alive_pos = pos;
        }
        self.free.push(arena);
    }

    /// Stores a sequence with use count zero, evicting the oldest live item
    /// when at capacity.
    pub fn append(&mut self, seq: SequenceTransition) -> Result<(), ReplayError> {
        seq.check(self.n_steps)?;
        while self.alive.len() >= self.capacity {
            // Skip queue entries whose slots already died from use exhaustion.
            match self.fifo.pop_front() {
                Some(arena) if self.slots[arena].is_some() => self.remove_arena(arena),
                Some(_) => continue,
                None => unreachable!("live items are always queued"),
            }
        }
        let arena = match self.free.pop() {
            Some(i) => i,
            None => {
                self.slots.push(None);
                self.slots.len() - 1
            }
        };
        self.slots[arena] = Some(Slot {
            seq,
            use_count: 0,
            alive_pos: self.alive.len(),
        });
        self.alive.push(arena);
        self.fifo.push_back(arena);
        Ok(())
    }

    /// Draws `n` sequences uniformly with replacement from the eligible
    /// items. Every draw increments the item's use count; an item reaching
    /// `max_use` is dropped from the buffer.
    pub fn sample_batch(
        &mut self,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<SequenceTransition>, ReplayError> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.alive.is_empty() {
                return Err(ReplayError::Starved);
            }
            let pick = rng.random_range(0..self.alive.len());
            let arena = self.alive[pick];
            let slot = self.slots[arena].as_mut().unwrap();
            slot.use_count += 1;
            out.push(slot.seq.clone());
            if slot.use_count >= self.max_use {
                self.remove_arena(arena);
            }
        }
        Ok(out)
    }

    /// Live sequences in FIFO order (oldest first), with their use counts.
    fn iter_fifo(&self) -> impl Iterator<Item = (&SequenceTransition, u32)> {
        self.fifo.iter().filter_map(|&arena| {
            self.slots[arena]
                .as_ref()
                .map(|s| (&s.seq, s.use_count))
        })
    }

    /// Writes a snapshot: header, then packed sequences as little-endian
    /// 64-bit floats and 32-bit indices.
    pub fn write_snapshot(&self, w: &mut impl Write) -> Result<(), ReplayError> {
        let first = self.iter_fifo().next();
        let (obs_dim, n_cont, n_disc) = match first {
            Some((seq, _)) => (
                seq.states[0].len(),
                seq.actions[0].continuous.len(),
                seq.actions[0].discrete.len(),
            ),
            None => (0, 0, 0),
        };
        w.write_all(b"RBUFSNP1")?;
        for v in [
            self.n_steps as u32,
            self.capacity as u32,
            self.max_use,
            obs_dim as u32,
            n_cont as u32,
            n_disc as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (seq, use_count) in self.iter_fifo() {
            for s in &seq.states {
                for &x in s {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            for a in &seq.actions {
                for &x in &a.continuous {
                    w.write_all(&x.to_le_bytes())?;
                }
                for &k in &a.discrete {
                    w.write_all(&(k as u32).to_le_bytes())?;
                }
            }
            for &r in &seq.rewards {
                w.write_all(&r.to_le_bytes())?;
            }
            for &lp in &seq.behavior_log_probs {
                w.write_all(&lp.to_le_bytes())?;
            }
            for &t in &seq.terminals {
                w.write_all(&[t as u8])?;
            }
            w.write_all(&use_count.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot(r: &mut impl Read) -> Result<Self, ReplayError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"RBUFSNP1" {
            return Err(ReplayError::BadSnapshot("bad magic".into()));
        }
        let n_steps = read_u32(r)? as usize;
        let capacity = read_u32(r)? as usize;
        let max_use = read_u32(r)?;
        let obs_dim = read_u32(r)? as usize;
        let n_cont = read_u32(r)? as usize;
        let n_disc = read_u32(r)? as usize;
        let count = read_u64(r)? as usize;
        if n_steps == 0 || capacity == 0 || max_use == 0 || count > capacity {
            return Err(ReplayError::BadSnapshot("implausible header".into()));
        }
        let mut buffer = ReplayBuffer::new(n_steps, capacity, max_use);
        for _ in 0..count {
            let mut states = Vec::with_capacity(n_steps + 1);
            for _ in 0..n_steps + 1 {
                states.push(read_f64s(r, obs_dim)?);
            }
            let mut actions = Vec::with_capacity(n_steps);
            for _ in 0..n_steps {
                let continuous = read_f64s(r, n_cont)?;
                let mut discrete = Vec::with_capacity(n_disc);
                for _ in 0..n_disc {
                    discrete.push(read_u32(r)? as usize);
                }
                actions.push(HybridAction {
                    continuous,
                    discrete,
                });
            }
            let rewards = read_f64s(r, n_steps)?;
            let behavior_log_probs = read_f64s(r, n_steps)?;
            let mut terminals = Vec::with_capacity(n_steps);
            for _ in 0..n_steps {
                let mut b = [0u8; 1];
                r.read_exact(&mut b)?;
                terminals.push(b[0] != 0);
            }
            let use_count = read_u32(r)?;
            buffer.append(SequenceTransition {
                states,
                actions,
                rewards,
                behavior_log_probs,
                terminals,
            })?;
            let arena = *buffer.alive.last().unwrap();
            buffer.slots[arena].as_mut().unwrap().use_count = use_count;
        }
        Ok(buffer)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, ReplayError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ReplayError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>, ReplayError> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn seq(tag: f64, n: usize) -> SequenceTransition {
        SequenceTransition {
            states: (0..=n).map(|i| vec![tag, i as f64]).collect(),
            actions: (0..n)
                .map(|i| HybridAction {
                    continuous: vec![tag + i as f64 * 0.1],
                    discrete: vec![i % 2],
                })
                .collect(),
            rewards: (0..n).map(|i| tag * i as f64).collect(),
            behavior_log_probs: vec![-1.0; n],
            terminals: vec![false; n],
        }
    }

    #[test]
    fn append_grows_and_is_retrievable_bit_identically() {
        let mut buffer = ReplayBuffer::new(3, 10, 5);
        assert!(buffer.is_empty());
        let s = seq(7.0, 3);
        buffer.append(s.clone()).unwrap();
        assert_eq!(buffer.len(), 1);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let got = buffer.sample_batch(1, &mut rng).unwrap();
        assert_eq!(got[0], s);
    }

    #[test]
    fn fifo_eviction_at_capacity() {
        let mut buffer = ReplayBuffer::new(2, 3, 100);
        for i in 0..4 {
            buffer.append(seq(i as f64, 2)).unwrap();
        }
        assert_eq!(buffer.len(), 3);
        // The first item (tag 0.0) is gone; tags 1..3 remain.
        let tags: Vec<f64> = buffer.iter_fifo().map(|(s, _)| s.states[0][0]).collect();
        assert_eq!(tags, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn malformed_sequences_are_rejected() {
        let mut buffer = ReplayBuffer::new(3, 4, 5);
        let mut bad = seq(1.0, 2);
        assert!(buffer.append(bad.clone()).is_err()); // wrong N
        bad = seq(1.0, 3);
        bad.behavior_log_probs[1] = f64::INFINITY;
        assert!(buffer.append(bad).is_err());
        let mut crossing = seq(1.0, 3);
        crossing.terminals[0] = true;
        assert!(buffer.append(crossing).is_err());
        let mut terminal_last = seq(1.0, 3);
        terminal_last.terminals[2] = true;
        assert!(buffer.append(terminal_last).is_ok());
    }

    #[test]
    fn single_item_sampled_thrice_counts_uses() {
        let mut buffer = ReplayBuffer::new(2, 4, 10);
        buffer.append(seq(3.0, 2)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let batch = buffer.sample_batch(3, &mut rng).unwrap();
        assert_eq!(batch.len(), 3);
        assert_eq!(batch[0], batch[2]);
        assert_eq!(buffer.use_count(0), 3);
    }

    #[test]
    fn max_use_drops_items_and_starves() {
        let mut buffer = ReplayBuffer::new(2, 4, 4);
        buffer.append(seq(1.0, 2)).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let _ = buffer.sample_batch(4, &mut rng).unwrap();
        assert!(buffer.is_empty(), "exhausted item must be dropped");
        assert!(matches!(
            buffer.sample_batch(1, &mut rng),
            Err(ReplayError::Starved)
        ));
    }

    #[test]
    fn sampling_is_uniform_over_items() {
        let mut buffer = ReplayBuffer::new(2, 16, u32::MAX);
        for i in 0..10 {
            buffer.append(seq(i as f64, 2)).unwrap();
        }
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 100_000usize;
        let mut counts = [0usize; 10];
        for s in buffer.sample_batch(n, &mut rng).unwrap() {
            counts[s.states[0][0] as usize] += 1;
        }
        let se = (0.1f64 * 0.9 / n as f64).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - 0.1).abs() <= 3.0 * se,
                "item {i}: frequency {freq}"
            );
        }
    }

    #[test]
    fn sampled_sequences_are_never_mutated_by_the_buffer() {
        let mut buffer = ReplayBuffer::new(2, 4, 1000);
        let original = seq(5.0, 2);
        buffer.append(original.clone()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..50 {
            let got = buffer.sample_batch(2, &mut rng).unwrap();
            assert_eq!(got[0], original);
            assert_eq!(got[1], original);
        }
    }

    #[test]
    fn use_count_accounting_under_interleaving() {
        let mut buffer = ReplayBuffer::new(2, 8, 3);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut total_draws = 0usize;
        for round in 0..20 {
            buffer.append(seq(round as f64, 2)).unwrap();
            if buffer.len() > 0 {
                let k = 1 + round % 3;
                match buffer.sample_batch(k, &mut rng) {
                    Ok(b) => total_draws += b.len(),
                    Err(ReplayError::Starved) => {}
                    Err(e) => panic!("{e}"),
                }
            }
        }
        // Every live item's count stays strictly below max_use.
        for i in 0..buffer.len() {
            assert!(buffer.use_count(i) < 3);
        }
        assert!(total_draws > 0);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut buffer = ReplayBuffer::new(3, 8, 7);
        for i in 0..5 {
            buffer.append(seq(i as f64 * 1.1, 3)).unwrap();
        }
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let _ = buffer.sample_batch(4, &mut rng).unwrap();

        let mut bytes = Vec::new();
        buffer.write_snapshot(&mut bytes).unwrap();
        let back = ReplayBuffer::read_snapshot(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.len(), buffer.len());
        assert_eq!(back.n_steps(), 3);
        assert_eq!(back.capacity(), 8);
        assert_eq!(back.max_use(), 7);
        let a: Vec<_> = buffer.iter_fifo().collect();
        let b: Vec<_> = back.iter_fifo().collect();
        for ((sa, ua), (sb, ub)) in a.iter().zip(&b) {
            assert_eq!(sa, sb);
            assert_eq!(ua, ub);
        }
    }
}
