//! Central finite differences against the analytic backward pass, run in
//! `f64` with quantization disabled.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Targets;
use super::engine::ExactEngine;
use super::network::{Network, ParamTensor};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub h: f64,
    /// Parameters checked per layer (weights and biases pooled); 0 checks all.
    pub samples_per_layer: usize,
    /// Magnitudes below this are compared absolutely rather than relatively.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            samples_per_layer: 0,
            floor: 1e-8,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_deviation: f64,
    pub checked: usize,
    /// `(parameter tensor, flat index)` of the worst entry; biases follow
    /// weights in the flat index.
    pub worst: (usize, usize),
}

fn get(p: &mut ParamTensor<f64>, i: usize) -> &mut f64 {
    let nw = p.weight.len();
    if i < nw {
        &mut p.weight[i]
    } else {
        &mut p.bias[i - nw]
    }
}

/// Compare analytic and numerical gradients of the data loss plus the L2
/// term of the model's regularizer. Dropout is not applied.
pub fn gradient_check(
    network: &Network,
    params: &[ParamTensor<f64>],
    input: &[f64],
    targets: &Targets,
    batch: usize,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, HarnessError> {
    let lambda = f64::from(network.spec().regularizer.l2_lambda());
    let total_loss = |p: &[ParamTensor<f64>]| -> Result<f64, HarnessError> {
        let fwd = network.forward(p, input, batch, &mut ExactEngine, None)?;
        let (loss, _) = network.loss(&fwd.output, targets, batch)?;
        let l2: f64 = p.iter().flat_map(|t| &t.weight).map(|w| w * w).sum();
        Ok(loss + lambda * l2)
    };
    let analytic = network.gradients(params, input, targets, batch, 1.0, &mut ExactEngine, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_deviation: 0.0,
        checked: 0,
        worst: (0, 0),
    };
    for (l, g) in analytic.grads.iter().enumerate() {
        let n = g.len();
        let picks: Vec<usize> = if opts.samples_per_layer == 0 || opts.samples_per_layer >= n {
            (0..n).collect()
        } else {
            let mut v = index::sample(&mut rng, n, opts.samples_per_layer).into_vec();
            v.sort_unstable();
            v
        };
        for i in picks {
            let w0 = *get(&mut work[l], i);
            *get(&mut work[l], i) = w0 + opts.h;
            let up = total_loss(&work)?;
            *get(&mut work[l], i) = w0 - opts.h;
            let down = total_loss(&work)?;
            *get(&mut work[l], i) = w0;
            let numeric = (up - down) / (2.0 * opts.h);
            let is_weight = i < g.weight.len();
            let mut a = if is_weight {
                g.weight[i]
            } else {
                g.bias[i - g.weight.len()]
            };
            if is_weight {
                a += 2.0 * lambda * w0;
            }
            let dev = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if dev > report.max_relative_deviation || !dev.is_finite() {
                report.max_relative_deviation = dev;
                report.worst = (l, i);
            }
        }
    }
    Ok(report)
}
