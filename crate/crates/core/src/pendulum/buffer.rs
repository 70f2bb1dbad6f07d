use rand::Rng;

use super::DataError;
use crate::layers::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub obs: Vec<f64>,
    pub act: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring of transitions stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    len: usize,
    next: usize,
    obs: Vec<f64>,
    act: Vec<f64>,
    rew: Vec<f64>,
    next_obs: Vec<f64>,
    done: Vec<bool>,
}

/// Columns of a set of transitions, one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Matrix,
    pub act: Matrix,
    pub rew: Matrix,
    pub next_obs: Matrix,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.done.len()
    }

    pub fn is_empty(&self) -> bool {
        self.done.is_empty()
    }
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, act_dim: usize, capacity: usize) -> Result<Self, DataError> {
        if capacity == 0 {
            return Err(DataError::ZeroCapacity);
        }
        Ok(Self {
            obs_dim,
            act_dim,
            capacity,
            len: 0,
            next: 0,
            obs: vec![0.0; capacity * obs_dim],
            act: vec![0.0; capacity * act_dim],
            rew: vec![0.0; capacity],
            next_obs: vec![0.0; capacity * obs_dim],
            done: vec![false; capacity],
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Stores one transition, overwriting the oldest once full.
    pub fn store(
        &mut self,
        obs: &[f64],
        act: &[f64],
        reward: f64,
        next_obs: &[f64],
        done: bool,
    ) -> Result<(), DataError> {
        for (field, width) in [
            (obs, self.obs_dim),
            (act, self.act_dim),
            (next_obs, self.obs_dim),
        ] {
            if field.len() != width {
                return Err(DataError::Dimension {
                    expected: width,
                    got: field.len(),
                });
            }
        }
        let i = self.next;
        self.obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(obs);
        self.act[i * self.act_dim..(i + 1) * self.act_dim].copy_from_slice(act);
        self.rew[i] = reward;
        self.next_obs[i * self.obs_dim..(i + 1) * self.obs_dim].copy_from_slice(next_obs);
        self.done[i] = done;
        self.next = (self.next + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    pub fn push(&mut self, rec: TransitionRecord) -> Result<(), DataError> {
        self.store(&rec.obs, &rec.act, rec.reward, &rec.next_obs, rec.done)
    }

    fn slot(&self, i: usize) -> usize {
        if self.len < self.capacity {
            i
        } else {
            (self.next + i) % self.capacity
        }
    }

    /// The `i`-th stored transition, oldest first.
    pub fn get(&self, i: usize) -> Option<TransitionRecord> {
        (i < self.len).then(|| self.record_at(self.slot(i)))
    }

    fn record_at(&self, s: usize) -> TransitionRecord {
        TransitionRecord {
            obs: self.obs[s * self.obs_dim..(s + 1) * self.obs_dim].to_vec(),
            act: self.act[s * self.act_dim..(s + 1) * self.act_dim].to_vec(),
            reward: self.rew[s],
            next_obs: self.next_obs[s * self.obs_dim..(s + 1) * self.obs_dim].to_vec(),
            done: self.done[s],
        }
    }

    /// All transitions, oldest first.
    pub fn records(&self) -> impl Iterator<Item = TransitionRecord> + '_ {
        (0..self.len).map(move |i| self.record_at(self.slot(i)))
    }

    /// Builds a buffer sized to hold exactly `records`.
    pub fn from_records(
        obs_dim: usize,
        act_dim: usize,
        records: impl IntoIterator<Item = TransitionRecord>,
    ) -> Result<Self, DataError> {
        let records: Vec<_> = records.into_iter().collect();
        let mut buf = Self::new(obs_dim, act_dim, records.len().max(1))?;
        for r in records {
            buf.push(r)?;
        }
        Ok(buf)
    }

    /// New buffer holding the transitions for which `keep` is true.
    pub fn filter(&self, keep: impl Fn(&TransitionRecord) -> bool) -> Result<Self, DataError> {
        Self::from_records(
            self.obs_dim,
            self.act_dim,
            self.records().filter(|r| keep(r)),
        )
    }

    fn gather(&self, slots: &[usize]) -> Batch {
        let n = slots.len();
        let mut obs = Vec::with_capacity(n * self.obs_dim);
        let mut act = Vec::with_capacity(n * self.act_dim);
        let mut rew = Vec::with_capacity(n);
        let mut next_obs = Vec::with_capacity(n * self.obs_dim);
        let mut done = Vec::with_capacity(n);
        for &s in slots {
            obs.extend_from_slice(&self.obs[s * self.obs_dim..(s + 1) * self.obs_dim]);
            act.extend_from_slice(&self.act[s * self.act_dim..(s + 1) * self.act_dim]);
            rew.push(self.rew[s]);
            next_obs.extend_from_slice(&self.next_obs[s * self.obs_dim..(s + 1) * self.obs_dim]);
            done.push(self.done[s]);
        }
        Batch {
            obs: Matrix::from_vec(n, self.obs_dim, obs).expect("sized"),
            act: Matrix::from_vec(n, self.act_dim, act).expect("sized"),
            rew: Matrix::from_vec(n, 1, rew).expect("sized"),
            next_obs: Matrix::from_vec(n, self.obs_dim, next_obs).expect("sized"),
            done,
        }
    }

    /// Uniform sample with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Batch, DataError> {
        if self.is_empty() {
            return Err(DataError::Empty);
        }
        let slots: Vec<usize> = (0..batch_size)
            .map(|_| self.slot(rng.random_range(0..self.len)))
            .collect();
        Ok(self.gather(&slots))
    }

    /// Transitions `start..end` (oldest first) as one batch.
    pub fn range(&self, start: usize, end: usize) -> Batch {
        let end = end.min(self.len);
        let slots: Vec<usize> = (start.min(end)..end).map(|i| self.slot(i)).collect();
        self.gather(&slots)
    }

    /// Every transition as one batch.
    pub fn all(&self) -> Batch {
        self.range(0, self.len)
    }
}
