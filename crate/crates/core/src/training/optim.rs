use serde::{Deserialize, Serialize};

use crate::nn::{Parameters, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-7
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::Adam { beta1: default_beta1(), beta2: default_beta2(), eps: default_eps() }
    }
}

/// Adam with bias correction; moments are stored flat in visit order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new<P: Parameters<f32>>(cfg: OptimizerConfig, lr: f64, params: &P) -> Self {
        let OptimizerConfig::Adam { beta1, beta2, eps } = cfg;
        let mut m = Vec::new();
        params.visit("", &mut |_, _, data| m.push(vec![0.0; data.len()]));
        Self { lr, beta1, beta2, eps, step: 0, v: m.clone(), m }
    }

    /// One update with gradient `grad` (same architecture as `params`).
    pub fn update<P: Parameters<f32>>(&mut self, params: &mut P, grad: &P) {
        self.step += 1;
        let t = self.step as f64;
        let alpha = (self.lr * (1.0 - self.beta2.powf(t)).sqrt() / (1.0 - self.beta1.powf(t))) as f32;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let eps = (self.eps * (1.0 - self.beta2.powf(t)).sqrt()) as f32;
        let grads = grad.flatten();
        let mut i = 0;
        params.visit_mut("", &mut |_, _, data| {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for k in 0..data.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                data[k] -= alpha * m[k] / (v[k].sqrt() + eps);
            }
            i += 1;
        });
    }
}

/// Scale every gradient tensor by `s`.
pub(crate) fn scale<R: Real, P: Parameters<R>>(grad: &mut P, s: R) {
    grad.visit_mut("", &mut |_, _, data| data.iter_mut().for_each(|x| *x *= s));
}
