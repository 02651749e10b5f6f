use super::params::Parameters;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Linear warmup from 0 to `base_lr` over `warmup` steps, then linear decay
/// to 0 at `total`.
pub fn lr_schedule(step: usize, total: usize, warmup: usize, base_lr: f64) -> Result<f64> {
    if total <= warmup {
        return Err(Error::invalid(format!(
            "total steps {total} must exceed warmup steps {warmup}"
        )));
    }
    if step > total {
        return Err(Error::invalid(format!("step {step} is past the last step {total}")));
    }
    let lr = if step < warmup {
        base_lr * step as f64 / warmup as f64
    } else {
        base_lr * (total - step) as f64 / (total - warmup) as f64
    };
    Ok(lr.max(0.0))
}

/// One AdamW update of a flat tensor. `step` counts from 1. Weight decay is
/// applied to the parameters before the moment update.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    weight_decay: f64,
) {
    let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        params[i] -= lr * weight_decay * params[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Optimizer state: first and second moments shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Parameters,
    v: Parameters,
    step: u64,
}

impl AdamW {
    pub fn new(params: &Parameters) -> Self {
        AdamW {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters, lr: f64, weight_decay: f64) -> Result<()> {
        let grads = grads.tensors();
        if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::Numeric(format!("non-finite gradient in {name}")));
        }
        self.step += 1;
        let tensors = params.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in tensors.into_iter().zip(&grads).zip(ms).zip(vs) {
            adamw_update(p.1, &g.1, m.1, v.1, self.step, lr, weight_decay);
        }
        Ok(())
    }
}
