use crate::layers::Parameters;

use super::TrainError;

/// Bias-corrected Adam with one moment buffer per parameter block.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like `params`.
    pub fn new<P: Parameters + ?Sized>(params: &P) -> Self {
        let shapes: Vec<Vec<f64>> = params
            .param_values()
            .iter()
            .map(|b| vec![0.0; b.len()])
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            v: shapes.clone(),
            m: shapes,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients currently stored in `params`.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step<P: Parameters + ?Sized>(
        &mut self,
        params: &mut P,
        lr: f64,
    ) -> Result<(), TrainError> {
        let mut bad: Option<(String, usize)> = None;
        let mut block = 0;
        params.visit_params(&mut |name, v, g| {
            if bad.is_none() {
                if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                    bad = Some((name.to_string(), i));
                } else if block >= self.m.len() || self.m[block].len() != v.len() {
                    bad = Some((name.to_string(), usize::MAX));
                }
            }
            block += 1;
        });
        if let Some((block, index)) = bad {
            if index == usize::MAX {
                return Err(TrainError::Config(format!(
                    "optimizer state does not match parameter block {block}"
                )));
            }
            return Err(TrainError::NonFiniteGradient { block, index });
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_params_mut(&mut |_, p, g| {
            for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(&mut ms[k]).zip(&mut vs[k]) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            k += 1;
        });
        Ok(())
    }
}
