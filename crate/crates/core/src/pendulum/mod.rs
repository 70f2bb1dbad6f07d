//! Inverted pendulum swing-up environment and random-policy data collection.
//!
//! Dynamics follow the classic-control pendulum: unit mass and length,
//! `dt = 0.05`, torque clipped to `[-2, 2]`, angular speed clipped to
//! `[-8, 8]`, explicit Euler on the speed then the angle. The reward is
//! computed from the state *before* the step.

mod buffer;
mod io;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::par;

pub use buffer::{Batch, ReplayBuffer, TransitionRecord};
pub use io::{export_csv, load_dataset, save_dataset, CSV_HEADER, DATASET_MAGIC, DATASET_VERSION};

pub const GRAVITY: f64 = 9.81;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const MAX_TORQUE: f64 = 2.0;
pub const MAX_SPEED: f64 = 8.0;
pub const OBS_DIM: usize = 3;
pub const ACT_DIM: usize = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("non-finite pendulum state ({theta}, {theta_dot})")]
    NonFiniteState { theta: f64, theta_dot: f64 },
    #[error("record has {got} values for a field of width {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("buffer is empty")]
    Empty,
    #[error("buffer capacity must be positive")]
    ZeroCapacity,
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    UnsupportedVersion(u16),
    #[error("dataset file is truncated")]
    Truncated,
    #[error("dataset file has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn new(theta: f64, theta_dot: f64) -> Self {
        Self { theta, theta_dot }
    }

    /// `[cos theta, sin theta, theta_dot]`.
    pub fn observation(&self) -> [f64; OBS_DIM] {
        [self.theta.cos(), self.theta.sin(), self.theta_dot]
    }

    /// `0.5 * theta_dot^2 + (3g / 2l) * cos theta`, conserved by the
    /// continuous unforced dynamics (`theta = 0` is upright).
    pub fn energy(&self) -> f64 {
        0.5 * self.theta_dot * self.theta_dot + 1.5 * GRAVITY / LENGTH * self.theta.cos()
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub state: PendulumState,
    pub observation: [f64; OBS_DIM],
    pub reward: f64,
}

/// Advances one step.
pub fn step(state: PendulumState, action: f64) -> Result<StepResult, DataError> {
    let PendulumState { theta, theta_dot } = state;
    if !(theta.is_finite() && theta_dot.is_finite()) {
        return Err(DataError::NonFiniteState { theta, theta_dot });
    }
    let a = if action.is_nan() {
        0.0
    } else {
        action.clamp(-MAX_TORQUE, MAX_TORQUE)
    };
    let wrapped = wrap_angle(theta);
    let cost = wrapped * wrapped + 0.1 * theta_dot * theta_dot + 0.001 * a * a;

    let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * a;
    let new_theta_dot = (theta_dot + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
    let new_theta = theta + new_theta_dot * DT;
    let next = PendulumState::new(new_theta, new_theta_dot);
    Ok(StepResult {
        state: next,
        observation: next.observation(),
        reward: -cost,
    })
}

/// Initial state: `theta ~ U(-pi, pi)`, `theta_dot ~ U(-1, 1)`.
pub fn reset<R: Rng + ?Sized>(rng: &mut R) -> PendulumState {
    PendulumState::new(rng.random_range(-PI..=PI), rng.random_range(-1.0..=1.0))
}

/// RNG for episode `index` of a run seeded with `seed`.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Rolls out one random-policy episode of `steps + 1` transitions; the last
/// one is flagged `done` (time-limit truncation).
pub fn run_episode(steps: usize, seed: u64, index: u64) -> Vec<TransitionRecord> {
    let mut rng = episode_rng(seed, index);
    let mut state = reset(&mut rng);
    let mut out = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let action = rng.random_range(-MAX_TORQUE..=MAX_TORQUE);
        let obs = state.observation();
        let res = step(state, action).expect("finite by construction");
        out.push(TransitionRecord {
            obs: obs.to_vec(),
            act: vec![action],
            reward: res.reward,
            next_obs: res.observation.to_vec(),
            done: t == steps,
        });
        state = res.state;
    }
    out
}

/// Collects `episodes` random-policy episodes. Episodes run in parallel and
/// are merged in episode order.
pub fn collect_dataset(
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<ReplayBuffer, DataError> {
    let per_episode = par::map_indexed(episodes, |e| run_episode(steps, seed, e as u64));
    let mut buf = ReplayBuffer::new(OBS_DIM, ACT_DIM, (episodes * (steps + 1)).max(1))?;
    for rec in per_episode.into_iter().flatten() {
        buf.push(rec)?;
    }
    Ok(buf)
}
