//! Closed-form equations read off a trained `l0_sindy` model.
//!
//! Terms are written `coef·name` and joined with ` + ` / ` − `, for example
//! `0.5000·1 − 1.2000·x1`. An equation without terms is `0`.

use super::{Model, ModelError};
use crate::features::Feature;

/// Terms whose effective coefficient is at most this are not printed.
pub const PRINT_EPS: f64 = 1e-8;

const MUL: char = '·';
const MINUS: char = '−';

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub feature: String,
    /// Weight times test-time gate.
    pub coefficient: f64,
}

/// Per output, the terms with `|coef · z| > eps` in feature order.
pub fn extract_terms(model: &Model, eps: f64) -> Result<Vec<Vec<Term>>, ModelError> {
    let features = model.feature_map().ok_or(ModelError::NotSindy)?;
    let names = features.names();
    let w = model.gated_layers()[0].sparse_weight();
    Ok((0..w.rows())
        .map(|i| {
            w.row(i)
                .iter()
                .zip(&names)
                .filter(|(c, _)| c.abs() > eps)
                .map(|(&c, n)| Term {
                    feature: n.clone(),
                    coefficient: c,
                })
                .collect()
        })
        .collect())
}

fn format_coef(c: f64, precision: Option<usize>) -> String {
    match precision {
        None => format!("{c}"),
        Some(p) if c != 0.0 && !(1e-4..1e6).contains(&c) => format!("{c:.p$e}"),
        Some(p) => format!("{c:.p$}"),
    }
}

/// Joins terms into one line. `precision = None` keeps every digit needed
/// to reproduce the coefficient exactly.
pub fn format_equation(terms: &[Term], precision: Option<usize>) -> String {
    if terms.is_empty() {
        return "0".to_string();
    }
    let mut s = String::new();
    for (k, t) in terms.iter().enumerate() {
        let neg = t.coefficient.is_sign_negative();
        match (k, neg) {
            (0, false) => {}
            (0, true) => s.push(MINUS),
            (_, false) => s.push_str(" + "),
            (_, true) => {
                s.push(' ');
                s.push(MINUS);
                s.push(' ');
            }
        }
        s.push_str(&format_coef(t.coefficient.abs(), precision));
        s.push(MUL);
        s.push_str(&t.feature);
    }
    s
}

/// Display equations, four decimals, one per output.
pub fn extract_equation(model: &Model) -> Result<Vec<String>, ModelError> {
    Ok(extract_terms(model, PRINT_EPS)?
        .iter()
        .map(|t| format_equation(t, Some(4)))
        .collect())
}

/// Full-precision equations keeping every nonzero term.
pub fn extract_equation_exact(model: &Model) -> Result<Vec<String>, ModelError> {
    Ok(extract_terms(model, 0.0)?
        .iter()
        .map(|t| format_equation(t, None))
        .collect())
}

/// Parses an equation produced by [`format_equation`].
pub fn parse_equation(eq: &str, input_dim: usize) -> Result<Vec<(f64, Feature)>, ModelError> {
    let bad = || ModelError::Format(format!("cannot parse equation {eq:?}"));
    let eq = eq.trim();
    if eq == "0" {
        return Ok(vec![]);
    }
    let mut out = Vec::new();
    let mut sign = 1.0;
    for (k, tok) in eq.split(' ').enumerate() {
        if k % 2 == 1 {
            sign = match tok {
                "+" => 1.0,
                "−" => -1.0,
                _ => return Err(bad()),
            };
            continue;
        }
        let (tok, s) = match tok.strip_prefix(MINUS) {
            Some(rest) if k == 0 => (rest, -1.0),
            _ => (tok, sign),
        };
        let (coef, name) = tok.split_once(MUL).ok_or_else(bad)?;
        let coef: f64 = coef.parse().map_err(|_| bad())?;
        let feature = Feature::parse(name, input_dim).map_err(|_| bad())?;
        out.push((s * coef, feature));
    }
    if eq.split(' ').count().is_multiple_of(2) {
        return Err(bad());
    }
    Ok(out)
}

/// Evaluates a parsed equation at `x`, summing terms in order.
pub fn evaluate_equation(terms: &[(f64, Feature)], x: &[f64]) -> f64 {
    terms.iter().map(|(c, f)| c * f.eval(x)).sum()
}
