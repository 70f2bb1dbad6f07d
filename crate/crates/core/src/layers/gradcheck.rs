//! Central finite-difference checks for analytic gradients.

use std::fmt;

/// Denominator floor for the relative error, so that gradients that are
/// zero on both sides compare by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: String,
    pub len: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    /// Entries where a perturbed evaluation was NaN or infinite.
    pub non_finite: usize,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| {
                if b.non_finite > 0 {
                    f64::INFINITY
                } else {
                    b.max_rel_err
                }
            })
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            writeln!(
                f,
                "{:<24} n={:<6} max_rel={:.3e} at {} (analytic {:.6e}, numeric {:.6e}){}{}",
                b.name,
                b.len,
                b.max_rel_err,
                b.worst_index,
                b.worst_analytic,
                b.worst_numeric,
                if b.non_finite > 0 {
                    format!(" non-finite={}", b.non_finite)
                } else {
                    String::new()
                },
                if b.passed { "" } else { "  FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares `analytic` against `(f(p + h) - f(p - h)) / 2h`, one parameter
/// at a time. `f` receives the full (perturbed) parameter set and must be
/// deterministic.
pub fn gradient_check<F>(
    names: &[String],
    params: &[Vec<f64>],
    analytic: &[Vec<f64>],
    mut f: F,
    h: f64,
    tol: f64,
) -> GradCheckReport
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "block count mismatch");
    let mut work = params.to_vec();
    let mut blocks = Vec::with_capacity(params.len());
    for (bi, block) in params.iter().enumerate() {
        assert_eq!(
            block.len(),
            analytic[bi].len(),
            "block {bi} length mismatch"
        );
        let mut report = BlockReport {
            name: names
                .get(bi)
                .cloned()
                .unwrap_or_else(|| format!("block{bi}")),
            len: block.len(),
            max_rel_err: 0.0,
            worst_index: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            non_finite: 0,
            passed: true,
        };
        for j in 0..block.len() {
            let orig = block[j];
            work[bi][j] = orig + h;
            let fp = f(&work);
            work[bi][j] = orig - h;
            let fm = f(&work);
            work[bi][j] = orig;
            if !(fp.is_finite() && fm.is_finite()) {
                report.non_finite += 1;
                report.passed = false;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let err = relative_error(analytic[bi][j], numeric);
            if err > report.max_rel_err || j == 0 {
                report.max_rel_err = err;
                report.worst_index = j;
                report.worst_analytic = analytic[bi][j];
                report.worst_numeric = numeric;
            }
        }
        if report.max_rel_err >= tol {
            report.passed = false;
        }
        blocks.push(report);
    }
    GradCheckReport { blocks, tol }
}
