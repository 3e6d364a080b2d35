use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam state for one flat block of parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub frozen: bool,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, len: usize, lr: f64) -> Self {
        ParamGroup {
            name: name.into(),
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            frozen: false,
        }
    }

    /// One bias-corrected Adam update. Frozen groups are left untouched; a
    /// non-finite gradient aborts before anything is modified.
    pub fn adam_step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if self.frozen {
            return Ok(());
        }
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::config(format!(
                "group `{}` expects {} values, got {} params / {} grads",
                self.name,
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("{} (entry {i})", self.name)));
        }
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step as i32);
        let c2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + EPS);
        }
        Ok(())
    }
}
