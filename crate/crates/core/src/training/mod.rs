//! Adam, the training loop and evaluation.
//!
//! Each iteration samples a minibatch, runs the model with freshly sampled
//! gates, and minimizes `mse + lambda * penalty` (plus optional weight
//! decay). After every epoch both datasets are scored with test-time gates.

mod adam;
mod metrics;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{mse_loss, Matrix, Mode, Parameters};
use crate::models::{Model, ModelError, ModelSpec, Target};
use crate::par;
use crate::pendulum::{DataError, ReplayBuffer};

pub use adam::AdamState;
pub use metrics::{parse_metrics_csv, EpochMetrics, IterationRecord, Metrics, METRICS_HEADER};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    Empty,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite gradient in block {block} at index {index}")]
    NonFiniteGradient { block: String, index: usize },
    #[error("numerical abort at epoch {epoch}, iteration {iteration}: {reason}")]
    Numerical {
        epoch: usize,
        iteration: usize,
        reason: String,
        /// Model as of the last completed epoch.
        last_good: Box<Model>,
        metrics: Box<Metrics>,
    },
    #[error("malformed metrics: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// When at least the training-set size, every iteration uses the whole
    /// set in order instead of sampling.
    pub batch_size: usize,
    pub epochs: usize,
    /// Defaults to `ceil(train_len / batch_size)`.
    pub iterations_per_epoch: Option<usize>,
    /// Overrides the penalty weight of every gated layer when set.
    pub lambda: Option<f64>,
    /// Gate samples averaged per iteration.
    pub mc_samples: usize,
    pub seed: u64,
    /// Independent stream of `seed`, used to separate parallel runs.
    pub rng_stream: u64,
    pub target: Target,
    /// Keep per-iteration loss terms in [`Metrics::trace`].
    pub trace_iterations: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 256,
            epochs: 500,
            iterations_per_epoch: None,
            lambda: None,
            mc_samples: 1,
            seed: 0,
            rng_stream: 0,
            target: Target::Transition,
            trace_iterations: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.mc_samples == 0 {
            return bad("batch_size, epochs and mc_samples must be positive");
        }
        if self.iterations_per_epoch == Some(0) {
            return bad("iterations_per_epoch must be positive");
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return bad("lambda must be non-negative");
            }
        }
        Ok(())
    }
}

/// Inputs and regression targets, one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self, TrainError> {
        if x.rows() != y.rows() {
            return Err(TrainError::Dimension(format!(
                "{} inputs but {} targets",
                x.rows(),
                y.rows()
            )));
        }
        Ok(Self { x, y })
    }

    /// `x = [obs, act]`, `y` = next observation or reward.
    pub fn from_buffer(buf: &ReplayBuffer, target: Target) -> Result<Self, TrainError> {
        let b = buf.all();
        let x = b.obs.hcat(&b.act).map_err(ModelError::from)?;
        let y = match target {
            Target::Transition => b.next_obs,
            Target::Reward => b.rew,
        };
        Self::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn take(&self, idx: impl Iterator<Item = usize>) -> (Matrix, Matrix) {
        let (xc, yc) = (self.x.cols(), self.y.cols());
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in idx {
            x.extend_from_slice(self.x.row(i));
            y.extend_from_slice(self.y.row(i));
        }
        let n = x.len() / xc.max(1);
        (
            Matrix::from_vec(n, xc, x).expect("sized"),
            Matrix::from_vec(n, yc, y).expect("sized"),
        )
    }
}

const EVAL_ROWS: usize = 2048;

/// Mean squared error over every target entry with test-time gates.
/// Rows are scored in fixed chunks and summed in order, so the result does
/// not depend on the thread count.
pub fn evaluate_dataset(model: &Model, data: &Dataset) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    if data.x.cols() != model.spec().input_dim || data.y.cols() != model.spec().output_dim {
        return Err(TrainError::Dimension(format!(
            "data is {}->{}, model is {}->{}",
            data.x.cols(),
            data.y.cols(),
            model.spec().input_dim,
            model.spec().output_dim
        )));
    }
    let n = data.len();
    let partial = par::map_indexed(par::chunk_count(n, EVAL_ROWS), |c| {
        let start = c * EVAL_ROWS;
        let end = (start + EVAL_ROWS).min(n);
        let (x, y) = data.take(start..end);
        let pred = model.predict_input(&x)?;
        Ok::<f64, ModelError>(
            pred.data()
                .iter()
                .zip(y.data())
                .map(|(p, t)| (p - t) * (p - t))
                .sum(),
        )
    });
    let mut total = 0.0;
    for p in partial {
        total += p?;
    }
    Ok(total / (n * data.y.cols()) as f64)
}

pub fn evaluate(model: &Model, buf: &ReplayBuffer, target: Target) -> Result<f64, TrainError> {
    evaluate_dataset(model, &Dataset::from_buffer(buf, target)?)
}

/// MSE on `eval` of the constant predictor equal to the column means of `fit`.
pub fn mean_predictor_mse(fit: &Dataset, eval: &Dataset) -> Result<f64, TrainError> {
    if fit.is_empty() || eval.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut mean = fit.y.col_sums();
    mean.iter_mut().for_each(|m| *m /= fit.len() as f64);
    let mut total = 0.0;
    for i in 0..eval.len() {
        for (t, m) in eval.y.row(i).iter().zip(&mean) {
            total += (t - m) * (t - m);
        }
    }
    Ok(total / (eval.len() * eval.y.cols()) as f64)
}

pub fn baseline_mse(
    train: &ReplayBuffer,
    test: &ReplayBuffer,
    target: Target,
) -> Result<f64, TrainError> {
    mean_predictor_mse(
        &Dataset::from_buffer(train, target)?,
        &Dataset::from_buffer(test, target)?,
    )
}

fn active_gates(model: &Model) -> Option<usize> {
    model.sparsity_counts().ok().map(|c| c.active_gates)
}

fn step(
    model: &mut Model,
    x: &Matrix,
    y: &Matrix,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
    adam: &mut AdamState,
) -> Result<IterationRecord, TrainError> {
    model.zero_grads();
    let l = cfg.mc_samples;
    let mut mse = 0.0;
    for _ in 0..l {
        let noise = model.draw_noise(rng);
        let pred = model.forward_input(x, Mode::Train, Some(&noise))?;
        let (m, mut grad) = mse_loss(&pred, y).map_err(ModelError::from)?;
        if l > 1 {
            grad.data_mut().iter_mut().for_each(|g| *g /= l as f64);
        }
        model.backward(&grad)?;
        mse += m;
    }
    mse /= l as f64;
    let regularization = model.regularization();
    model.add_regularization_grad();
    let rec = IterationRecord {
        mse,
        penalty: model.penalty(),
        regularization,
        loss: mse + regularization,
    };
    if !rec.loss.is_finite() {
        return Err(TrainError::Config(format!("non-finite loss {}", rec.loss)));
    }
    adam.step(model, cfg.learning_rate)?;
    Ok(rec)
}

/// Trains on explicit arrays. The model's own output width defines the
/// target; `cfg.target` is not consulted.
pub fn fit(
    mut model: Model,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, Metrics), TrainError> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(TrainError::Empty);
    }
    // shape errors surface here rather than mid-training
    evaluate_dataset(&model, test)?;
    if let Some(l) = cfg.lambda {
        model.set_lambda(l);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cfg.rng_stream);
    let full_batch = cfg.batch_size >= train.len();
    let iterations = cfg
        .iterations_per_epoch
        .unwrap_or_else(|| train.len().div_ceil(cfg.batch_size));
    let mut adam = AdamState::new(&model);
    let mut metrics = Metrics {
        initial_active_gates: active_gates(&model),
        total_gates: model.sparsity_counts().ok().map(|c| c.total_gates),
        lambda: model.kind().is_sparse().then_some(model.spec().gate.lambda),
        ..Default::default()
    };
    let (full_x, full_y) = if full_batch {
        (train.x.clone(), train.y.clone())
    } else {
        (Matrix::zeros(0, 0), Matrix::zeros(0, 0))
    };
    let mut last_good = model.clone();

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        for it in 0..iterations {
            let sampled;
            let (x, y) = if full_batch {
                (&full_x, &full_y)
            } else {
                let idx: Vec<usize> = (0..cfg.batch_size)
                    .map(|_| rng.random_range(0..train.len()))
                    .collect();
                sampled = train.take(idx.into_iter());
                (&sampled.0, &sampled.1)
            };
            match step(&mut model, x, y, cfg, &mut rng, &mut adam) {
                Ok(rec) => {
                    if cfg.trace_iterations {
                        metrics.trace.push(rec);
                    }
                }
                Err(e @ (TrainError::Config(_) | TrainError::NonFiniteGradient { .. })) => {
                    log::error!("aborting at epoch {epoch}, iteration {it}: {e}");
                    return Err(TrainError::Numerical {
                        epoch,
                        iteration: it,
                        reason: e.to_string(),
                        last_good: Box::new(last_good),
                        metrics: Box::new(metrics),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let train_mse = evaluate_dataset(&model, train)?;
        let test_mse = evaluate_dataset(&model, test)?;
        if !(train_mse.is_finite() && test_mse.is_finite() && model.is_finite()) {
            return Err(TrainError::Numerical {
                epoch,
                iteration: iterations,
                reason: format!("non-finite evaluation (train {train_mse}, test {test_mse})"),
                last_good: Box::new(last_good),
                metrics: Box::new(metrics),
            });
        }
        let e = EpochMetrics {
            epoch,
            train_mse,
            test_mse,
            penalty: model.kind().is_sparse().then(|| model.penalty()),
            active_gates: active_gates(&model),
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::debug!(
            "epoch {epoch}: train {train_mse:.6e} test {test_mse:.6e} active {:?}",
            e.active_gates
        );
        metrics.epochs.push(e);
        last_good = model.clone();
    }
    Ok((model, metrics))
}

/// Trains a pendulum transition or reward model.
pub fn train_model(
    model: Model,
    train: &ReplayBuffer,
    test: &ReplayBuffer,
    cfg: &TrainConfig,
) -> Result<(Model, Metrics), TrainError> {
    if train.is_empty() || test.is_empty() {
        return Err(TrainError::Empty);
    }
    let want_in = train.obs_dim() + train.act_dim();
    let want_out = cfg.target.output_dim(train.obs_dim());
    let spec = model.spec();
    if spec.input_dim != want_in || spec.output_dim != want_out {
        return Err(TrainError::Dimension(format!(
            "model is {}->{}, {:?} target needs {}->{}",
            spec.input_dim, spec.output_dim, cfg.target, want_in, want_out
        )));
    }
    fit(
        model,
        &Dataset::from_buffer(train, cfg.target)?,
        &Dataset::from_buffer(test, cfg.target)?,
        cfg,
    )
}

/// Trains one freshly built model per `lambda`, in parallel. Run `i` uses
/// RNG stream `i` of `cfg.seed`; all runs share the initial parameters.
pub fn lambda_sweep(
    spec: &ModelSpec,
    model_seed: u64,
    train: &ReplayBuffer,
    test: &ReplayBuffer,
    cfg: &TrainConfig,
    lambdas: &[f64],
) -> Vec<Result<(Model, Metrics), TrainError>> {
    par::map_indexed(lambdas.len(), |i| {
        let model = Model::build(spec.clone(), model_seed)?;
        let cfg = TrainConfig {
            lambda: Some(lambdas[i]),
            rng_stream: i as u64,
            ..cfg.clone()
        };
        train_model(model, train, test, &cfg)
    })
}
