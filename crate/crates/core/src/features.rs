//! Dictionary feature libraries with a pinned column order.
//!
//! Polynomial libraries list monomials by total degree, then by exponent
//! vector in descending lexicographic order (so `x0` varies slowest):
//! for two inputs and degree 2 this is `1, x0, x1, x0^2, x0*x1, x1^2`.
//! Fourier libraries list, for each frequency `k = 1..=n` and each input
//! `i`, `sin(k*xi)` then `cos(k*xi)`. A generalized library concatenates
//! its members in order.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::Matrix;
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("invalid library: {0}")]
    InvalidSpec(String),
    #[error("input has {got} columns, library was built for {expected}")]
    Shape { expected: usize, got: usize },
    #[error("cannot parse feature name {0:?}")]
    BadName(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LibrarySpec {
    Polynomial {
        degree: usize,
        include_bias: bool,
        include_interactions: bool,
    },
    Fourier {
        n_frequencies: usize,
        include_sin: bool,
        include_cos: bool,
        /// Accepted for compatibility; mixed-frequency products are not built.
        #[serde(default)]
        interaction_terms: bool,
    },
    Generalized {
        libraries: Vec<LibrarySpec>,
    },
}

impl LibrarySpec {
    pub fn polynomial(degree: usize) -> Self {
        LibrarySpec::Polynomial {
            degree,
            include_bias: true,
            include_interactions: true,
        }
    }

    pub fn fourier(n_frequencies: usize) -> Self {
        LibrarySpec::Fourier {
            n_frequencies,
            include_sin: true,
            include_cos: true,
            interaction_terms: false,
        }
    }

    /// Polynomial followed by Fourier features.
    pub fn poly_fourier(degree: usize, n_frequencies: usize) -> Self {
        LibrarySpec::Generalized {
            libraries: vec![Self::polynomial(degree), Self::fourier(n_frequencies)],
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        match self {
            LibrarySpec::Polynomial { degree, .. } if *degree == 0 => Err(
                FeatureError::InvalidSpec("polynomial degree must be at least 1".into()),
            ),
            LibrarySpec::Fourier { n_frequencies, .. } if *n_frequencies == 0 => Err(
                FeatureError::InvalidSpec("fourier library needs at least one frequency".into()),
            ),
            LibrarySpec::Fourier {
                include_sin: false,
                include_cos: false,
                ..
            } => Err(FeatureError::InvalidSpec(
                "fourier library needs sin or cos terms".into(),
            )),
            LibrarySpec::Generalized { libraries } => {
                if libraries.is_empty() {
                    return Err(FeatureError::InvalidSpec(
                        "generalized library must not be empty".into(),
                    ));
                }
                libraries.iter().try_for_each(|l| l.validate())
            }
            _ => Ok(()),
        }
    }

    /// Resolves the library against an input dimension.
    pub fn build(&self, input_dim: usize) -> Result<FeatureMap, FeatureError> {
        self.validate()?;
        if input_dim == 0 {
            return Err(FeatureError::InvalidSpec(
                "input_dim must be at least 1".into(),
            ));
        }
        let mut features = Vec::new();
        self.push_features(input_dim, &mut features);
        Ok(FeatureMap {
            input_dim,
            features,
        })
    }

    fn push_features(&self, n: usize, out: &mut Vec<Feature>) {
        match self {
            LibrarySpec::Polynomial {
                degree,
                include_bias,
                include_interactions,
            } => {
                if *include_bias {
                    out.push(Feature::Monomial(vec![0; n]));
                }
                for deg in 1..=*degree {
                    if *include_interactions {
                        let mut idx = vec![0usize; deg];
                        loop {
                            let mut exps = vec![0u32; n];
                            for &i in &idx {
                                exps[i] += 1;
                            }
                            out.push(Feature::Monomial(exps));
                            if !next_multiset(&mut idx, n) {
                                break;
                            }
                        }
                    } else {
                        for i in 0..n {
                            let mut exps = vec![0u32; n];
                            exps[i] = deg as u32;
                            out.push(Feature::Monomial(exps));
                        }
                    }
                }
            }
            LibrarySpec::Fourier {
                n_frequencies,
                include_sin,
                include_cos,
                interaction_terms,
            } => {
                if *interaction_terms {
                    log::warn!(
                        "fourier interaction terms are not supported; building plain sin/cos terms"
                    );
                }
                for k in 1..=*n_frequencies as u32 {
                    for i in 0..n {
                        if *include_sin {
                            out.push(Feature::Sin { k, input: i });
                        }
                        if *include_cos {
                            out.push(Feature::Cos { k, input: i });
                        }
                    }
                }
            }
            LibrarySpec::Generalized { libraries } => {
                for l in libraries {
                    l.push_features(n, out);
                }
            }
        }
    }
}

/// Next non-decreasing index tuple over `0..n`, in lexicographic order.
fn next_multiset(idx: &mut [usize], n: usize) -> bool {
    let len = idx.len();
    let mut pos = len;
    while pos > 0 {
        pos -= 1;
        if idx[pos] + 1 < n {
            let v = idx[pos] + 1;
            for x in idx[pos..].iter_mut() {
                *x = v;
            }
            return true;
        }
    }
    false
}

/// One dictionary column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Feature {
    /// Product of powers, one exponent per input.
    Monomial(Vec<u32>),
    Sin {
        k: u32,
        input: usize,
    },
    Cos {
        k: u32,
        input: usize,
    },
}

impl Feature {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Feature::Monomial(exps) => {
                let mut v = 1.0;
                for (xi, &p) in x.iter().zip(exps) {
                    if p > 0 {
                        v *= xi.powi(p as i32);
                    }
                }
                v
            }
            Feature::Sin { k, input } => (*k as f64 * x[*input]).sin(),
            Feature::Cos { k, input } => (*k as f64 * x[*input]).cos(),
        }
    }

    /// Parses a name produced by `Display`. Monomials get `input_dim` exponents.
    pub fn parse(name: &str, input_dim: usize) -> Result<Self, FeatureError> {
        let bad = || FeatureError::BadName(name.to_string());
        let name = name.trim();
        if name == "1" {
            return Ok(Feature::Monomial(vec![0; input_dim]));
        }
        for (prefix, is_sin) in [("sin(", true), ("cos(", false)] {
            if let Some(rest) = name.strip_prefix(prefix) {
                let inner = rest.strip_suffix(')').ok_or_else(bad)?;
                let (k, var) = inner.split_once("*x").ok_or_else(bad)?;
                let k: u32 = k.parse().map_err(|_| bad())?;
                let input: usize = var.parse().map_err(|_| bad())?;
                if input >= input_dim {
                    return Err(bad());
                }
                return Ok(if is_sin {
                    Feature::Sin { k, input }
                } else {
                    Feature::Cos { k, input }
                });
            }
        }
        let mut exps = vec![0u32; input_dim];
        for factor in name.split('*') {
            let factor = factor.strip_prefix('x').ok_or_else(bad)?;
            let (var, pow) = match factor.split_once('^') {
                Some((v, p)) => (v, p.parse::<u32>().map_err(|_| bad())?),
                None => (factor, 1),
            };
            let i: usize = var.parse().map_err(|_| bad())?;
            if i >= input_dim {
                return Err(bad());
            }
            exps[i] += pow;
        }
        Ok(Feature::Monomial(exps))
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Monomial(exps) => {
                let mut first = true;
                for (i, &p) in exps.iter().enumerate() {
                    if p == 0 {
                        continue;
                    }
                    if !first {
                        f.write_str("*")?;
                    }
                    first = false;
                    if p == 1 {
                        write!(f, "x{i}")?;
                    } else {
                        write!(f, "x{i}^{p}")?;
                    }
                }
                if first {
                    f.write_str("1")?;
                }
                Ok(())
            }
            Feature::Sin { k, input } => write!(f, "sin({k}*x{input})"),
            Feature::Cos { k, input } => write!(f, "cos({k}*x{input})"),
        }
    }
}

/// A library resolved against a fixed input dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMap {
    input_dim: usize,
    features: Vec<Feature>,
}

const TRANSFORM_ROWS: usize = 256;

impl FeatureMap {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.to_string()).collect()
    }

    /// Evaluates every feature on every row of `x`.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix, FeatureError> {
        if x.cols() != self.input_dim {
            return Err(FeatureError::Shape {
                expected: self.input_dim,
                got: x.cols(),
            });
        }
        let nf = self.features.len();
        let mut out = Matrix::zeros(x.rows(), nf);
        if nf == 0 {
            return Ok(out);
        }
        par::for_each_chunk_mut(out.data_mut(), TRANSFORM_ROWS * nf, |block, chunk| {
            for (r, row_out) in chunk.chunks_mut(nf).enumerate() {
                let row = x.row(block * TRANSFORM_ROWS + r);
                for (o, feat) in row_out.iter_mut().zip(&self.features) {
                    *o = feat.eval(row);
                }
            }
        });
        Ok(out)
    }
}

/// Builds the feature map for `spec` over `input_dim` inputs.
pub fn library_dim_and_names(
    spec: &LibrarySpec,
    input_dim: usize,
) -> Result<FeatureMap, FeatureError> {
    spec.build(input_dim)
}

/// Applies `spec` to `x`.
pub fn transform(spec: &LibrarySpec, x: &Matrix) -> Result<Matrix, FeatureError> {
    spec.build(x.cols())?.transform(x)
}
