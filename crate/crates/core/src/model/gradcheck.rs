//! Finite-difference check of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{neg_log, Network};

/// One sampled parameter entry.
#[derive(Clone, Debug)]
pub struct GradientSample {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientSample {
    /// Relative error, treating two near-zero values as equal.
    pub fn relative_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Central differences (step `1e-5`) on `samples` randomly chosen entries of
/// the unweighted, dropout-free loss.
pub fn gradient_check<N: Network<f64>>(
    net: &N,
    tokens: &[u32],
    target: usize,
    samples: usize,
    seed: u64,
) -> Vec<GradientSample> {
    let mut grad = net.zeros_like();
    net.loss_and_grad(tokens, target, 1.0, None, &mut grad);
    let grads = grad.flatten();
    let names = net.names();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let t = rng.gen_range(0..names.len());
        let len: usize = names[t].1.iter().product();
        let i = rng.gen_range(0..len);
        let eval = |delta: f64| {
            let mut probe = net.clone();
            let mut k = 0;
            probe.visit_mut("", &mut |_, _, data| {
                if k == t {
                    data[i] += delta;
                }
                k += 1;
            });
            neg_log(probe.probabilities(tokens)[target])
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        out.push(GradientSample { name: format!("{}[{i}]", names[t].0), analytic: grads[t][i], numeric });
    }
    out
}
