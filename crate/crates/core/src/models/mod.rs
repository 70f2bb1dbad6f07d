//! Transition and reward model families.
//!
//! * `fcnn`: Dense(in, h) - ELU - Dense(h, h) - ELU - Dense(h, out)
//! * `sparse_fcnn`: the same stack built from L0-gated dense layers
//! * `l0_sindy`: a fixed feature library followed by one bias-free gated
//!   linear layer, whose sparse weights read as a closed-form equation

mod checkpoint;
mod equation;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureMap, LibrarySpec};
use crate::gates::{uniform_noise, GateConfig, GateError};
use crate::layers::{
    DenseLayer, Elu, GateGranularity, L0DenseLayer, LayerError, Matrix, Mode, Parameters, Visit,
    VisitMut,
};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, sidecar_json, write_checkpoint,
    CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use equation::{
    evaluate_equation, extract_equation, extract_equation_exact, extract_terms, format_equation,
    parse_equation, Term, PRINT_EPS,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("model has no gates")]
    NoGates,
    #[error("equation extraction needs an l0_sindy model")]
    NotSindy,
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Fcnn,
    SparseFcnn,
    L0Sindy,
}

impl ModelKind {
    pub fn is_sparse(self) -> bool {
        !matches!(self, ModelKind::Fcnn)
    }
}

/// What a pendulum model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Next observation.
    Transition,
    /// Scalar reward.
    Reward,
}

impl Target {
    pub fn output_dim(self, obs_dim: usize) -> usize {
        match self {
            Target::Transition => obs_dim,
            Target::Reward => 1,
        }
    }
}

fn default_droprate() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub h_dim: usize,
    #[serde(default)]
    pub library: Option<LibrarySpec>,
    #[serde(default)]
    pub gate: GateConfig,
    #[serde(default)]
    pub granularity: GateGranularity,
    #[serde(default = "default_droprate")]
    pub droprate_init: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl ModelSpec {
    fn base(kind: ModelKind, input_dim: usize, output_dim: usize) -> Self {
        Self {
            kind,
            input_dim,
            output_dim,
            h_dim: 256,
            library: None,
            gate: GateConfig::default(),
            granularity: GateGranularity::PerInput,
            droprate_init: default_droprate(),
            weight_decay: 0.0,
        }
    }

    pub fn fcnn(input_dim: usize, output_dim: usize) -> Self {
        Self::base(ModelKind::Fcnn, input_dim, output_dim)
    }

    pub fn sparse_fcnn(input_dim: usize, output_dim: usize) -> Self {
        Self::base(ModelKind::SparseFcnn, input_dim, output_dim)
    }

    pub fn l0_sindy(input_dim: usize, output_dim: usize, library: LibrarySpec) -> Self {
        Self {
            library: Some(library),
            ..Self::base(ModelKind::L0Sindy, input_dim, output_dim)
        }
    }

    pub fn with_h_dim(mut self, h_dim: usize) -> Self {
        self.h_dim = h_dim;
        self
    }

    pub fn with_gate(mut self, gate: GateConfig) -> Self {
        self.gate = gate;
        self
    }

    pub fn with_granularity(mut self, g: GateGranularity) -> Self {
        self.granularity = g;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidSpec(m.to_string()));
        if self.input_dim == 0 || self.output_dim == 0 {
            return bad("input and output dims must be positive");
        }
        if self.kind != ModelKind::L0Sindy && self.h_dim == 0 {
            return bad("h_dim must be positive");
        }
        match (self.kind, &self.library) {
            (ModelKind::L0Sindy, None) => return bad("l0_sindy needs a feature library"),
            (ModelKind::Fcnn | ModelKind::SparseFcnn, Some(_)) => {
                return bad("only l0_sindy takes a feature library")
            }
            _ => {}
        }
        if let Some(lib) = &self.library {
            lib.validate()?;
        }
        self.gate.validate()?;
        if !(self.droprate_init > 0.0 && self.droprate_init < 1.0) {
            return bad("droprate_init must lie in (0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

// one per model, so the variant size gap is harmless
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
enum Network {
    Fcnn {
        layers: [DenseLayer; 3],
        acts: [Elu; 2],
    },
    SparseFcnn {
        layers: [L0DenseLayer; 3],
        acts: [Elu; 2],
    },
    L0Sindy {
        features: FeatureMap,
        layer: L0DenseLayer,
    },
}

/// Gate noise for one forward pass, one vector per gated layer.
pub type GateNoise = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityCounts {
    pub total_gates: usize,
    pub active_gates: usize,
    /// Weights behind an active gate, plus biases.
    pub active_parameters: usize,
    /// All weights and biases (gate parameters excluded).
    pub total_parameters: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    seed: u64,
    net: Network,
}

impl Model {
    /// Builds a model with parameters drawn from `seed`.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (i, h, o) = (spec.input_dim, spec.h_dim, spec.output_dim);
        let net = match spec.kind {
            ModelKind::Fcnn => Network::Fcnn {
                layers: [
                    DenseLayer::init(&mut rng, i, h, true),
                    DenseLayer::init(&mut rng, h, h, true),
                    DenseLayer::init(&mut rng, h, o, true),
                ],
                acts: Default::default(),
            },
            ModelKind::SparseFcnn => {
                let mut mk = |a, b| gated(&mut rng, &spec, a, b, true);
                Network::SparseFcnn {
                    layers: [mk(i, h)?, mk(h, h)?, mk(h, o)?],
                    acts: Default::default(),
                }
            }
            ModelKind::L0Sindy => {
                let features = spec
                    .library
                    .as_ref()
                    .expect("validated")
                    .build(spec.input_dim)?;
                let layer = gated(&mut rng, &spec, features.n_features(), o, false)?;
                Network::L0Sindy { features, layer }
            }
        };
        Ok(Self { spec, seed, net })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn feature_map(&self) -> Option<&FeatureMap> {
        match &self.net {
            Network::L0Sindy { features, .. } => Some(features),
            _ => None,
        }
    }

    pub fn gated_layers(&self) -> Vec<&L0DenseLayer> {
        match &self.net {
            Network::Fcnn { .. } => vec![],
            Network::SparseFcnn { layers, .. } => layers.iter().collect(),
            Network::L0Sindy { layer, .. } => vec![layer],
        }
    }

    pub fn gated_layers_mut(&mut self) -> Vec<&mut L0DenseLayer> {
        match &mut self.net {
            Network::Fcnn { .. } => vec![],
            Network::SparseFcnn { layers, .. } => layers.iter_mut().collect(),
            Network::L0Sindy { layer, .. } => vec![layer],
        }
    }

    pub fn dense_layers(&self) -> Vec<&DenseLayer> {
        match &self.net {
            Network::Fcnn { layers, .. } => layers.iter().collect(),
            _ => vec![],
        }
    }

    pub fn dense_layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        match &mut self.net {
            Network::Fcnn { layers, .. } => layers.iter_mut().collect(),
            _ => vec![],
        }
    }

    pub fn gate_counts(&self) -> Vec<usize> {
        self.gated_layers().iter().map(|l| l.gate_count()).collect()
    }

    /// One uniform-noise vector per gated layer.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> GateNoise {
        self.gate_counts()
            .into_iter()
            .map(|n| uniform_noise(rng, n))
            .collect()
    }

    /// Sets the penalty weight of every gated layer.
    pub fn set_lambda(&mut self, lambda: f64) {
        for l in self.gated_layers_mut() {
            l.config.lambda = lambda;
        }
        self.spec.gate.lambda = lambda;
    }

    fn concat(&self, obs: &Matrix, act: &Matrix) -> Result<Matrix, ModelError> {
        if obs.rows() != act.rows() {
            return Err(LayerError::Shape(format!(
                "{} observations but {} actions",
                obs.rows(),
                act.rows()
            ))
            .into());
        }
        if obs.cols() + act.cols() != self.spec.input_dim {
            return Err(LayerError::Shape(format!(
                "obs ({}) + act ({}) columns do not match input_dim {}",
                obs.cols(),
                act.cols(),
                self.spec.input_dim
            ))
            .into());
        }
        Ok(obs.hcat(act)?)
    }

    /// Concatenates `[obs, act]` and runs the network, caching for backward.
    pub fn forward(
        &mut self,
        obs: &Matrix,
        act: &Matrix,
        mode: Mode,
        noise: Option<&GateNoise>,
    ) -> Result<Matrix, ModelError> {
        let x = self.concat(obs, act)?;
        self.forward_input(&x, mode, noise)
    }

    /// Forward pass on an already concatenated input.
    pub fn forward_input(
        &mut self,
        x: &Matrix,
        mode: Mode,
        noise: Option<&GateNoise>,
    ) -> Result<Matrix, ModelError> {
        if x.cols() != self.spec.input_dim {
            return Err(LayerError::Shape(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.spec.input_dim
            ))
            .into());
        }
        let needs_noise = mode == Mode::Train && self.spec.kind.is_sparse();
        if needs_noise {
            match noise {
                None => return Err(LayerError::MissingNoise.into()),
                Some(n) if n.len() != self.gate_counts().len() => {
                    return Err(LayerError::Shape(format!(
                        "noise for {} layers, model has {}",
                        n.len(),
                        self.gate_counts().len()
                    ))
                    .into())
                }
                _ => {}
            }
        }
        let layer_noise = |i: usize| noise.and_then(|n| n.get(i)).map(|v| v.as_slice());
        match &mut self.net {
            Network::Fcnn { layers, acts } => {
                let h = acts[0].forward(&layers[0].forward(x)?);
                let h = acts[1].forward(&layers[1].forward(&h)?);
                Ok(layers[2].forward(&h)?)
            }
            Network::SparseFcnn { layers, acts } => {
                let h = acts[0].forward(&layers[0].forward(x, mode, layer_noise(0))?);
                let h = acts[1].forward(&layers[1].forward(&h, mode, layer_noise(1))?);
                Ok(layers[2].forward(&h, mode, layer_noise(2))?)
            }
            Network::L0Sindy { features, layer } => {
                let phi = features.transform(x)?;
                Ok(layer.forward(&phi, mode, layer_noise(0))?)
            }
        }
    }

    /// Inference with test-time gates; does not touch the backward caches.
    pub fn predict(&self, obs: &Matrix, act: &Matrix) -> Result<Matrix, ModelError> {
        let x = self.concat(obs, act)?;
        self.predict_input(&x)
    }

    pub fn predict_input(&self, x: &Matrix) -> Result<Matrix, ModelError> {
        let elu = |m: Matrix| m.map(crate::layers::elu);
        match &self.net {
            Network::Fcnn { layers, .. } => {
                let h = elu(layers[0].apply(x)?);
                let h = elu(layers[1].apply(&h)?);
                Ok(layers[2].apply(&h)?)
            }
            Network::SparseFcnn { layers, .. } => {
                let h = elu(layers[0].apply(x)?);
                let h = elu(layers[1].apply(&h)?);
                Ok(layers[2].apply(&h)?)
            }
            Network::L0Sindy { features, layer } => Ok(layer.apply(&features.transform(x)?)?),
        }
    }

    /// Back-propagates `d_out` through the cached forward pass.
    pub fn backward(&mut self, d_out: &Matrix) -> Result<(), ModelError> {
        match &mut self.net {
            Network::Fcnn { layers, acts } => {
                let g = layers[2].backward(d_out)?;
                let g = layers[1].backward(&acts[1].backward(&g)?)?;
                layers[0].backward(&acts[0].backward(&g)?)?;
            }
            Network::SparseFcnn { layers, acts } => {
                let g = layers[2].backward(d_out)?;
                let g = layers[1].backward(&acts[1].backward(&g)?)?;
                layers[0].backward(&acts[0].backward(&g)?)?;
            }
            Network::L0Sindy { layer, .. } => {
                layer.backward(d_out)?;
            }
        }
        Ok(())
    }

    /// Unweighted expected number of active gates over all gated layers.
    pub fn penalty(&self) -> f64 {
        self.gated_layers().iter().map(|l| l.penalty()).sum()
    }

    /// Weighted penalty plus weight decay, summed over gated layers.
    pub fn regularization(&self) -> f64 {
        self.gated_layers().iter().map(|l| l.regularization()).sum()
    }

    pub fn add_regularization_grad(&mut self) {
        for l in self.gated_layers_mut() {
            l.add_regularization_grad();
        }
    }

    pub fn sparsity_counts(&self) -> Result<SparsityCounts, ModelError> {
        let layers = self.gated_layers();
        if layers.is_empty() {
            return Err(ModelError::NoGates);
        }
        let mut c = SparsityCounts {
            total_gates: 0,
            active_gates: 0,
            active_parameters: 0,
            total_parameters: 0,
        };
        for l in layers {
            let z = l.deterministic_mask();
            let active = z.iter().filter(|&&v| v > 0.0).count();
            let bias = l.bias.as_ref().map_or(0, |b| b.len());
            c.total_gates += z.len();
            c.active_gates += active;
            c.total_parameters += l.out_dim() * l.in_dim() + bias;
            c.active_parameters += bias
                + match l.granularity {
                    GateGranularity::PerInput => active * l.out_dim(),
                    GateGranularity::PerElement => active,
                };
        }
        Ok(c)
    }

    /// True when every parameter, gate location included, is finite.
    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params(&mut |_, v, _| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

fn gated<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &ModelSpec,
    in_dim: usize,
    out_dim: usize,
    bias: bool,
) -> Result<L0DenseLayer, ModelError> {
    let mut l = L0DenseLayer::init(
        rng,
        in_dim,
        out_dim,
        bias,
        spec.granularity,
        spec.gate,
        spec.droprate_init,
    )?;
    l.weight_decay = spec.weight_decay;
    Ok(l)
}

impl Parameters for Model {
    fn visit_params(&self, f: &mut Visit<'_>) {
        match &self.net {
            Network::Fcnn { layers, .. } => {
                for (i, l) in layers.iter().enumerate() {
                    l.visit_params(&mut |n, v, g| f(&format!("fc{i}.{n}"), v, g));
                }
            }
            Network::SparseFcnn { layers, .. } => {
                for (i, l) in layers.iter().enumerate() {
                    l.visit_params(&mut |n, v, g| f(&format!("fc{i}.{n}"), v, g));
                }
            }
            Network::L0Sindy { layer, .. } => {
                layer.visit_params(&mut |n, v, g| f(&format!("coef.{n}"), v, g));
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut VisitMut<'_>) {
        match &mut self.net {
            Network::Fcnn { layers, .. } => {
                for (i, l) in layers.iter_mut().enumerate() {
                    l.visit_params_mut(&mut |n, v, g| f(&format!("fc{i}.{n}"), v, g));
                }
            }
            Network::SparseFcnn { layers, .. } => {
                for (i, l) in layers.iter_mut().enumerate() {
                    l.visit_params_mut(&mut |n, v, g| f(&format!("fc{i}.{n}"), v, g));
                }
            }
            Network::L0Sindy { layer, .. } => {
                layer.visit_params_mut(&mut |n, v, g| f(&format!("coef.{n}"), v, g));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs_act(rows: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = Matrix::from_vec(
            rows,
            3,
            (0..rows * 3).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let act = Matrix::from_vec(
            rows,
            1,
            (0..rows).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        (obs, act)
    }

    #[test]
    fn fcnn_parameter_count() {
        let m = Model::build(ModelSpec::fcnn(4, 3), 0).unwrap();
        assert_eq!(m.param_count(), 67_843);
        assert!(matches!(m.sparsity_counts(), Err(ModelError::NoGates)));
    }

    #[test]
    fn sindy_shapes() {
        let m = Model::build(ModelSpec::l0_sindy(4, 3, LibrarySpec::polynomial(3)), 0).unwrap();
        let l = m.gated_layers()[0];
        assert_eq!(l.weight.shape(), (3, 35));
        assert_eq!(l.gate_count(), 35);
        assert!(l.bias.is_none());
        assert_eq!(m.feature_map().unwrap().n_features(), 35);
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = ModelSpec::sparse_fcnn(4, 3).with_h_dim(16);
        let a = Model::build(spec.clone(), 7).unwrap();
        let b = Model::build(spec.clone(), 7).unwrap();
        let c = Model::build(spec, 8).unwrap();
        assert_eq!(a.param_values(), b.param_values());
        assert_ne!(a.param_values(), c.param_values());
    }

    #[test]
    fn invalid_specs() {
        assert!(Model::build(ModelSpec::fcnn(0, 3), 0).is_err());
        assert!(Model::build(ModelSpec::fcnn(4, 3).with_h_dim(0), 0).is_err());
        let mut s = ModelSpec::l0_sindy(4, 1, LibrarySpec::polynomial(2));
        s.library = None;
        assert!(Model::build(s, 0).is_err());
        let mut s = ModelSpec::fcnn(4, 1);
        s.library = Some(LibrarySpec::polynomial(2));
        assert!(Model::build(s, 0).is_err());
    }

    #[test]
    fn zero_fcnn_outputs_zero() {
        let mut m = Model::build(ModelSpec::fcnn(4, 2).with_h_dim(8), 1).unwrap();
        let zeros: Vec<Vec<f64>> = m
            .param_values()
            .iter()
            .map(|b| vec![0.0; b.len()])
            .collect();
        m.set_param_values(&zeros);
        let (o, a) = obs_act(5, 2);
        let y = m.forward(&o, &a, Mode::Infer, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sindy_bias_feature_passthrough() {
        let mut m = Model::build(ModelSpec::l0_sindy(4, 1, LibrarySpec::polynomial(2)), 1).unwrap();
        {
            let l = &mut m.gated_layers_mut()[0];
            l.weight.fill(0.0);
            l.weight[(0, 0)] = 1.0;
            l.gates.log_alpha_mut().iter_mut().for_each(|v| *v = 20.0);
        }
        let (o, a) = obs_act(6, 3);
        let y = m.forward(&o, &a, Mode::Infer, None).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn open_sparse_fcnn_matches_fcnn() {
        let mut dense = Model::build(ModelSpec::fcnn(4, 3).with_h_dim(12), 5).unwrap();
        let mut sparse = Model::build(ModelSpec::sparse_fcnn(4, 3).with_h_dim(12), 6).unwrap();
        let dense_vals = dense.param_values();
        let mut k = 0;
        let mut sparse_vals = sparse.param_values();
        for (name, v) in sparse.param_names().iter().zip(sparse_vals.iter_mut()) {
            if name.ends_with("log_alpha") {
                v.iter_mut().for_each(|x| *x = 20.0);
            } else {
                *v = dense_vals[k].clone();
                k += 1;
            }
        }
        sparse.set_param_values(&sparse_vals);
        let (o, a) = obs_act(100, 9);
        let yd = dense.forward(&o, &a, Mode::Infer, None).unwrap();
        let ys = sparse.forward(&o, &a, Mode::Infer, None).unwrap();
        for (x, y) in yd.data().iter().zip(ys.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert_eq!(sparse.predict(&o, &a).unwrap(), ys);
    }

    #[test]
    fn forward_errors() {
        let mut m = Model::build(ModelSpec::sparse_fcnn(4, 1).with_h_dim(4), 0).unwrap();
        let (o, a) = obs_act(3, 0);
        assert!(m.forward(&o, &a, Mode::Train, None).is_err());
        assert!(m.forward(&o, &o, Mode::Infer, None).is_err());
        let (o2, _) = obs_act(2, 0);
        assert!(m.forward(&o2, &a, Mode::Infer, None).is_err());
        let noise = m.draw_noise(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(noise.len(), 3);
        m.forward(&o, &a, Mode::Train, Some(&noise)).unwrap();
    }

    fn set_sindy_gates(m: &mut Model, la: &[f64]) {
        m.gated_layers_mut()[0]
            .gates
            .log_alpha_mut()
            .copy_from_slice(la);
    }

    #[test]
    fn sparsity_counting() {
        let spec = ModelSpec::l0_sindy(
            2,
            2,
            LibrarySpec::Polynomial {
                degree: 1,
                include_bias: true,
                include_interactions: true,
            },
        );
        let mut m = Model::build(spec, 0).unwrap();
        set_sindy_gates(&mut m, &[-20.0, -20.0, -20.0]);
        assert_eq!(m.sparsity_counts().unwrap().active_gates, 0);
        set_sindy_gates(&mut m, &[20.0, 20.0, 20.0]);
        let c = m.sparsity_counts().unwrap();
        assert_eq!(
            (c.total_gates, c.active_gates, c.active_parameters),
            (3, 3, 6)
        );
        set_sindy_gates(&mut m, &[-20.0, 0.0, 20.0]);
        let c = m.sparsity_counts().unwrap();
        assert_eq!(c.active_gates, 2);
        assert_eq!(c.active_parameters, 4);
        assert!(c.active_parameters <= c.total_parameters);
    }
}
