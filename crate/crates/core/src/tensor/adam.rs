//! Adam with bias correction.

use std::collections::BTreeMap;

use super::{ParamSet, Scalar, TensorError};

/// First/second moment buffers plus the step counter. One state instance
/// tracks one parameter set; buffers are keyed by parameter name.
pub struct AdamState<F: Scalar> {
    m: BTreeMap<String, Vec<F>>,
    v: BTreeMap<String, Vec<F>>,
    t: u64,
}

impl<F: Scalar> Default for AdamState<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> AdamState<F> {
    pub fn new() -> Self {
        AdamState {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: m̂ = m/(1−β1ᵗ), v̂ = v/(1−β2ᵗ), θ ← θ − lr·m̂/(√v̂+ε).
    /// Reads gradients from the tensors' grad buffers and mutates values in
    /// place. Parameters are visited in name order.
    pub fn step(
        &mut self,
        params: &ParamSet<F>,
        lr: F,
        beta1: F,
        beta2: F,
        eps: F,
    ) -> Result<(), TensorError> {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = F::one() - beta1.powi(t);
        let bc2 = F::one() - beta2.powi(t);
        for (name, p) in params.iter() {
            let g = p.grad_vec();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| vec![F::zero(); g.len()]);
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| vec![F::zero(); g.len()]);
            if m.len() != g.len() || v.len() != g.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    detail: format!(
                        "moment buffers for {name} hold {} values, gradient has {}",
                        m.len(),
                        g.len()
                    ),
                });
            }
            let mut theta = p.value_vec();
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (F::one() - beta1) * g[i];
                v[i] = beta2 * v[i] + (F::one() - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] = theta[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.set_values(&theta);
        }
        Ok(())
    }

    /// Flatten into `(name, shape, values)` rows for checkpointing. The step
    /// counter is stored as a one-element tensor named `adam.t`.
    pub fn export(&self, params: &ParamSet<F>) -> Vec<(String, (usize, usize), Vec<F>)> {
        let mut out = Vec::new();
        for (name, p) in params.iter() {
            if let Some(m) = self.m.get(name) {
                out.push((format!("adam.m.{name}"), p.shape(), m.clone()));
            }
            if let Some(v) = self.v.get(name) {
                out.push((format!("adam.v.{name}"), p.shape(), v.clone()));
            }
        }
        out.push(("adam.t".to_string(), (1, 1), vec![F::from_f64(self.t as f64)]));
        out
    }

    /// Rebuild from checkpoint rows produced by [`AdamState::export`].
    pub fn import(rows: &[(String, Vec<F>)]) -> Self {
        let mut state = AdamState::new();
        for (name, values) in rows {
            if let Some(rest) = name.strip_prefix("adam.m.") {
                state.m.insert(rest.to_string(), values.clone());
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                state.v.insert(rest.to_string(), values.clone());
            } else if name == "adam.t" {
                state.t = values[0].as_f64() as u64;
            }
        }
        state
    }
}
