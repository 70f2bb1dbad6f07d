//! Hard-concrete stochastic gates.
//!
//! A gate is driven by a location parameter `log_alpha`. During training a
//! gate value is drawn by pushing uniform noise through the binary-concrete
//! inverse CDF, stretching the result to `(gamma, zeta)` and clipping it to
//! `[0, 1]`, which gives exact zeros with non-zero probability while keeping
//! a pathwise derivative with respect to `log_alpha`. At test time the gate
//! is the noise-free value `clip(sigmoid(log_alpha) * (zeta - gamma) + gamma)`.
//!
//! The binary-concrete CDF used throughout is
//! `Q(t) = sigmoid(beta * logit(t) - log_alpha)`, which is the distribution
//! actually produced by the sampler. The expected number of active gates is
//! `sum_j sigmoid(log_alpha_j - beta * ln(-gamma / zeta))`.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

/// Lower clamp applied to uniform noise so that `logit(u)` stays finite.
pub const NOISE_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GateError {
    #[error("invalid gate config: {0}")]
    InvalidConfig(String),
    #[error("noise has {got} entries, expected {expected}")]
    NoiseLength { expected: usize, got: usize },
    #[error("noise entry {index} = {value} is not strictly inside (0, 1)")]
    NoiseOutOfRange { index: usize, value: f64 },
    #[error("{value} is outside the open support ({lo}, {hi})")]
    OutsideSupport { value: f64, lo: f64, hi: f64 },
    #[error("gate cache does not belong to the current gate parameters")]
    StaleCache,
}

/// Shared hyperparameters of a group of gates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Temperature of the binary concrete.
    pub beta: f64,
    /// Lower stretch bound, negative.
    pub gamma: f64,
    /// Upper stretch bound, above one.
    pub zeta: f64,
    /// Weight of the expected-L0 penalty.
    pub lambda: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            beta: 2.0 / 3.0,
            gamma: -0.1,
            zeta: 1.1,
            lambda: 1.0,
        }
    }
}

impl GateConfig {
    pub fn new(beta: f64, gamma: f64, zeta: f64, lambda: f64) -> Result<Self, GateError> {
        let cfg = Self {
            beta,
            gamma,
            zeta,
            lambda,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), GateError> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(GateError::InvalidConfig(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.gamma < 0.0 && self.zeta > 1.0 && self.zeta.is_finite() && self.gamma.is_finite())
        {
            return Err(GateError::InvalidConfig(format!(
                "need gamma < 0 < 1 < zeta, got gamma={} zeta={}",
                self.gamma, self.zeta
            )));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(GateError::InvalidConfig(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    #[inline]
    fn span(&self) -> f64 {
        self.zeta - self.gamma
    }

    /// `beta * ln(-gamma / zeta)`, the shift between `log_alpha` and the
    /// logit of the active-gate probability.
    #[inline]
    pub fn active_shift(&self) -> f64 {
        self.beta * (-self.gamma / self.zeta).ln()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(u: f64) -> f64 {
    u.ln() - (-u).ln_1p()
}

#[inline]
fn hard_sigmoid(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// One draw: returns the unstretched sample `d` and the gate `z`.
#[inline]
pub fn hard_concrete(u: f64, log_alpha: f64, cfg: &GateConfig) -> (f64, f64) {
    let d = sigmoid((logit(u) + log_alpha) / cfg.beta);
    let z = hard_sigmoid(d * cfg.span() + cfg.gamma);
    (d, z)
}

static NEXT_GATE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_GATE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Learnable location parameters, one per gate.
///
/// Each vector carries an identity and a generation counter that is bumped
/// on every mutable access, so a [`GateCache`] can be checked against the
/// parameters it was sampled from.
#[derive(Debug)]
pub struct GateVector {
    log_alpha: Vec<f64>,
    id: u64,
    generation: u64,
}

impl Clone for GateVector {
    fn clone(&self) -> Self {
        Self {
            log_alpha: self.log_alpha.clone(),
            id: fresh_id(),
            generation: 0,
        }
    }
}

impl PartialEq for GateVector {
    fn eq(&self, other: &Self) -> bool {
        self.log_alpha == other.log_alpha
    }
}

impl GateVector {
    pub fn new(log_alpha: Vec<f64>) -> Self {
        Self {
            log_alpha,
            id: fresh_id(),
            generation: 0,
        }
    }

    pub fn filled(n: usize, log_alpha: f64) -> Self {
        Self::new(vec![log_alpha; n])
    }

    pub fn len(&self) -> usize {
        self.log_alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_alpha.is_empty()
    }

    pub fn log_alpha(&self) -> &[f64] {
        &self.log_alpha
    }

    /// Mutable access; invalidates outstanding caches.
    pub fn log_alpha_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.log_alpha
    }

    pub fn is_finite(&self) -> bool {
        self.log_alpha.iter().all(|v| v.is_finite())
    }

    fn tag(&self) -> (u64, u64) {
        (self.id, self.generation)
    }
}

/// Per-gate smooth values retained from [`sample_gates`] for the backward pass.
#[derive(Debug, Clone)]
pub struct GateCache {
    d: Vec<f64>,
    tag: (u64, u64),
}

impl GateCache {
    pub fn d(&self) -> &[f64] {
        &self.d
    }
}

/// Draws one gate vector from the hard-concrete distribution given explicit
/// uniform noise.
pub fn sample_gates(
    gates: &GateVector,
    cfg: &GateConfig,
    noise: &[f64],
) -> Result<(Vec<f64>, GateCache), GateError> {
    if noise.len() != gates.len() {
        return Err(GateError::NoiseLength {
            expected: gates.len(),
            got: noise.len(),
        });
    }
    let mut z = Vec::with_capacity(noise.len());
    let mut d = Vec::with_capacity(noise.len());
    for (index, (&u, &la)) in noise.iter().zip(gates.log_alpha()).enumerate() {
        if !(u > 0.0 && u < 1.0) {
            return Err(GateError::NoiseOutOfRange { index, value: u });
        }
        let (dj, zj) = hard_concrete(u, la, cfg);
        d.push(dj);
        z.push(zj);
    }
    Ok((
        z,
        GateCache {
            d,
            tag: gates.tag(),
        },
    ))
}

/// Test-time gates, no noise.
pub fn deterministic_gates(gates: &GateVector, cfg: &GateConfig) -> Vec<f64> {
    gates
        .log_alpha()
        .iter()
        .map(|&la| hard_sigmoid(sigmoid(la) * cfg.span() + cfg.gamma))
        .collect()
}

/// Binary-concrete CDF. With `stretched` the argument lives on `(gamma, zeta)`.
pub fn gate_cdf(
    t: f64,
    log_alpha: f64,
    cfg: &GateConfig,
    stretched: bool,
) -> Result<f64, GateError> {
    let t = if stretched {
        if !(t > cfg.gamma && t < cfg.zeta) {
            return Err(GateError::OutsideSupport {
                value: t,
                lo: cfg.gamma,
                hi: cfg.zeta,
            });
        }
        (t - cfg.gamma) / cfg.span()
    } else {
        t
    };
    if !(t > 0.0 && t < 1.0) {
        return Err(GateError::OutsideSupport {
            value: t,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(sigmoid(cfg.beta * logit(t) - log_alpha))
}

/// Binary-concrete density on `(0, 1)`:
/// `beta * alpha * t^(-beta-1) * (1-t)^(-beta-1) / (alpha * t^(-beta) + (1-t)^(-beta))^2`,
/// evaluated in log space.
pub fn gate_pdf(t: f64, log_alpha: f64, cfg: &GateConfig) -> Result<f64, GateError> {
    if !(t > 0.0 && t < 1.0) {
        return Err(GateError::OutsideSupport {
            value: t,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let b = cfg.beta;
    let ln_t = t.ln();
    let ln_1mt = (-t).ln_1p();
    let a = log_alpha - b * ln_t;
    let c = -b * ln_1mt;
    let m = a.max(c);
    let ln_denom = m + ((a - m).exp() + (c - m).exp()).ln();
    let ln_q = b.ln() + log_alpha - (b + 1.0) * (ln_t + ln_1mt) - 2.0 * ln_denom;
    Ok(ln_q.exp())
}

/// Probability that each gate is non-zero.
pub fn prob_active(gates: &GateVector, cfg: &GateConfig) -> Vec<f64> {
    let shift = cfg.active_shift();
    gates
        .log_alpha()
        .iter()
        .map(|&la| sigmoid(la - shift))
        .collect()
}

/// Expected number of active gates and its gradient w.r.t. `log_alpha`.
pub fn penalty_and_grad(gates: &GateVector, cfg: &GateConfig) -> (f64, Vec<f64>) {
    let p = prob_active(gates, cfg);
    let penalty = p.iter().sum();
    let grad = p.iter().map(|&pj| pj * (1.0 - pj)).collect();
    (penalty, grad)
}

/// `dz/dlog_alpha` for the sample recorded in `cache`; zero where the
/// hard-sigmoid is flat.
pub fn pathwise_gate_grad(
    cache: &GateCache,
    gates: &GateVector,
    cfg: &GateConfig,
) -> Result<Vec<f64>, GateError> {
    if cache.tag != gates.tag() || cache.d.len() != gates.len() {
        return Err(GateError::StaleCache);
    }
    let span = cfg.span();
    Ok(cache
        .d
        .iter()
        .map(|&d| {
            let dbar = d * span + cfg.gamma;
            if dbar > 0.0 && dbar < 1.0 {
                span * d * (1.0 - d) / cfg.beta
            } else {
                0.0
            }
        })
        .collect())
}

/// Draws `n` uniforms clamped to `[NOISE_EPS, 1 - NOISE_EPS]`.
pub fn uniform_noise<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.random::<f64>().clamp(NOISE_EPS, 1.0 - NOISE_EPS))
        .collect()
}

/// Independent draws of a single gate.
#[derive(Debug, Clone)]
pub struct GateDraws {
    pub d: Vec<f64>,
    pub z: Vec<f64>,
}

impl GateDraws {
    pub fn fraction_zero(&self) -> f64 {
        self.z.iter().filter(|&&z| z == 0.0).count() as f64 / self.z.len() as f64
    }

    pub fn fraction_one(&self) -> f64 {
        self.z.iter().filter(|&&z| z == 1.0).count() as f64 / self.z.len() as f64
    }
}

const DRAW_CHUNK: usize = 1 << 14;

/// Draws `n` samples of one gate. Chunk `k` uses ChaCha stream `k` of `seed`,
/// so the result does not depend on the thread count.
pub fn draw_many(log_alpha: f64, cfg: &GateConfig, n: usize, seed: u64) -> GateDraws {
    let mut pairs = vec![(0.0, 0.0); n];
    par::for_each_chunk_mut(&mut pairs, DRAW_CHUNK, |k, chunk| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        for slot in chunk.iter_mut() {
            let u = rng.random::<f64>().clamp(NOISE_EPS, 1.0 - NOISE_EPS);
            *slot = hard_concrete(u, log_alpha, cfg);
        }
    });
    let (d, z) = pairs.into_iter().unzip();
    GateDraws { d, z }
}
