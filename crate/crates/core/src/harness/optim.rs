//! Master weights and the momentum weight update.

use crate::format::{FloatFormat, Fp16Code, Rounding};
use crate::scaling::{LossScaler, ScaleEvent};

use super::network::ParamTensor;
use super::HarnessError;

/// Master copy of the parameters: FP16 codes in the FP8 regime, plain FP32
/// in the baseline regime.
#[derive(Debug, Clone, PartialEq)]
pub enum Masters {
    Fp16(Vec<ParamTensor<Fp16Code>>),
    Fp32(Vec<ParamTensor<f32>>),
}

/// Round to FP16, clamping to ±65504 instead of producing an infinity.
fn encode_master(x: f64) -> Fp16Code {
    let (code, enc) = Fp16Code::encode(x, Rounding::NearestEven);
    if enc.overflowed {
        let sign = if x < 0.0 { FloatFormat::FP16.sign_mask() } else { 0 };
        Fp16Code((sign | FloatFormat::FP16.max_finite_bits()) as u16)
    } else {
        code
    }
}

fn map_params<T, U>(p: &ParamTensor<T>, f: impl Fn(&T) -> U) -> ParamTensor<U> {
    ParamTensor {
        weight: p.weight.iter().map(&f).collect(),
        bias: p.bias.iter().map(&f).collect(),
    }
}

/// `λ · Σ w²` over the weights (biases excluded), compensated summation in
/// FP32.
pub fn l2_loss(params: &[ParamTensor<f32>], lambda: f32) -> f32 {
    if lambda == 0.0 {
        return 0.0;
    }
    let (mut sum, mut comp) = (0f32, 0f32);
    for w in params.iter().flat_map(|p| &p.weight) {
        let v = w * w;
        let t = sum + v;
        comp += if sum.abs() >= v.abs() {
            (sum - t) + v
        } else {
            (v - t) + sum
        };
        sum = t;
    }
    lambda * (sum + comp)
}

/// One optimizer step as logged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub iteration: u64,
    pub loss: f32,
    pub l2_loss: f32,
    /// Loss scale used for this step's backward pass.
    pub scale: f32,
    pub underflow_fraction: f64,
    pub overflow_count: usize,
    pub event: ScaleEvent,
    /// False when the step was skipped for non-finite gradients.
    pub applied: bool,
}

impl StepReport {
    pub const CSV_HEADER: &'static str = "iteration,loss,l2_loss,scale,underflow_fraction,overflow_count";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration, self.loss, self.l2_loss, self.scale, self.underflow_fraction, self.overflow_count
        )
    }
}

/// Master weights plus heavy-ball momentum (`v ← μv + g`, `w ← w − lr·v`).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    masters: Masters,
    momentum: Vec<ParamTensor<f32>>,
    momentum_coeff: f32,
    learning_rate: f32,
}

impl OptimizerState {
    /// `master_format` is [`FloatFormat::FP16`] or [`FloatFormat::FP32`].
    pub fn new(
        init: &[ParamTensor<f64>],
        master_format: FloatFormat,
        learning_rate: f32,
        momentum_coeff: f32,
    ) -> Result<Self, HarnessError> {
        if !(learning_rate.is_finite() && learning_rate >= 0.0) {
            return Err(HarnessError::Config(format!(
                "learning rate {learning_rate} must be finite and >= 0"
            )));
        }
        if !(0.0..1.0).contains(&momentum_coeff) {
            return Err(HarnessError::Config(format!("momentum {momentum_coeff} not in [0, 1)")));
        }
        let masters = if master_format == FloatFormat::FP16 {
            Masters::Fp16(init.iter().map(|p| map_params(p, |&v| encode_master(v))).collect())
        } else if master_format == FloatFormat::FP32 {
            Masters::Fp32(init.iter().map(ParamTensor::cast).collect())
        } else {
            return Err(HarnessError::Config(format!(
                "master weights cannot be stored as {master_format}"
            )));
        };
        Ok(Self {
            masters,
            momentum: init.iter().map(|p| p.cast::<f32>().zeros_like()).collect(),
            momentum_coeff,
            learning_rate,
        })
    }

    pub fn masters(&self) -> &Masters {
        &self.masters
    }

    pub fn master_format(&self) -> FloatFormat {
        match self.masters {
            Masters::Fp16(_) => FloatFormat::FP16,
            Masters::Fp32(_) => FloatFormat::FP32,
        }
    }

    pub fn momentum(&self) -> &[ParamTensor<f32>] {
        &self.momentum
    }

    pub fn learning_rate(&self) -> f32 {
        self.learning_rate
    }

    pub fn momentum_coeff(&self) -> f32 {
        self.momentum_coeff
    }

    /// Decoded master weights.
    pub fn weights(&self) -> Vec<ParamTensor<f32>> {
        match &self.masters {
            Masters::Fp16(m) => m.iter().map(|p| map_params(p, |c| c.to_f32())).collect(),
            Masters::Fp32(m) => m.clone(),
        }
    }

    pub fn l2_loss(&self, lambda: f32) -> f32 {
        l2_loss(&self.weights(), lambda)
    }

    /// Unscale `grads`, consult the scaler and, if every gradient is
    /// finite and the backward pass saw no overflow, apply the update.
    /// Returns the scaler event and whether the update was applied.
    pub fn update(
        &mut self,
        grads: &[ParamTensor<f32>],
        scaler: &mut LossScaler,
        iteration: u64,
        l2_lambda: f32,
        backward_overflow: bool,
    ) -> Result<(ScaleEvent, bool), HarnessError> {
        if grads.len() != self.momentum.len()
            || grads
                .iter()
                .zip(&self.momentum)
                .any(|(g, v)| g.weight.len() != v.weight.len() || g.bias.len() != v.bias.len())
        {
            return Err(HarnessError::Shape("gradients do not match the parameters".into()));
        }
        let scale = scaler.scale();
        let unscaled: Vec<ParamTensor<f32>> = grads.iter().map(|g| map_params(g, |&v| v / scale)).collect();
        let finite = !backward_overflow && unscaled.iter().all(ParamTensor::all_finite);
        let event = scaler.step(finite, iteration);
        if !finite {
            return Ok((event, false));
        }
        let (mu, lr) = (self.momentum_coeff, self.learning_rate);
        let mut weights = self.weights();
        for ((w, g), v) in weights.iter_mut().zip(&unscaled).zip(&mut self.momentum) {
            for ((wi, &gi), vi) in w.weight.iter_mut().zip(&g.weight).zip(&mut v.weight) {
                let gi = if l2_lambda != 0.0 {
                    gi + 2.0 * l2_lambda * *wi
                } else {
                    gi
                };
                *vi = mu * *vi + gi;
                *wi -= lr * *vi;
            }
            for ((bi, &gi), vi) in w.bias.iter_mut().zip(&g.bias).zip(&mut v.bias) {
                *vi = mu * *vi + gi;
                *bi -= lr * *vi;
            }
        }
        self.masters = match self.masters {
            Masters::Fp16(_) => Masters::Fp16(
                weights
                    .iter()
                    .map(|p| map_params(p, |&v| encode_master(f64::from(v))))
                    .collect(),
            ),
            Masters::Fp32(_) => Masters::Fp32(weights),
        };
        Ok((event, true))
    }
}
