//! Forward and backward passes, generic over the element type and the
//! precision engine.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::quant::Conv2dParams;

use super::data::Targets;
use super::engine::{Engine, Site};
use super::model::{init_params, plan_layers, LayerKind, LayerPlan, ModelSpec, PrecisionClass};
use super::scalar::Scalar;
use super::HarnessError;

/// Weights and biases of one Dense or Conv2d layer. Dense weights are
/// `[outputs, inputs]`, Conv2d weights `[filters, C, k, k]`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ParamTensor<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamTensor<U> {
        ParamTensor {
            weight: self.weight.iter().map(|v| U::of(v.widen())).collect(),
            bias: self.bias.iter().map(|v| U::of(v.widen())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
enum Cache<T> {
    /// Quantized input and weights, as consumed by the forward GEMM.
    Gemm {
        x: Vec<T>,
        w: Vec<T>,
    },
    Relu {
        mask: Vec<bool>,
    },
    /// tanh/sigmoid output.
    Smooth {
        y: Vec<T>,
    },
    Dropout {
        mask: Option<Vec<T>>,
    },
    Loss,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    caches: Vec<Cache<T>>,
    pub output: Vec<T>,
    pub batch: usize,
}

/// Loss, network output and (scaled) parameter gradients of one batch.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub loss: T,
    pub output: Vec<T>,
    pub grads: Vec<ParamTensor<T>>,
}

fn transpose<T: Copy>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len());
    for c in 0..cols {
        for r in 0..rows {
            out.push(a[r * cols + c]);
        }
    }
    out
}

struct ConvShape {
    batch: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
    p: Conv2dParams,
}

impl ConvShape {
    fn of(plan: &LayerPlan, batch: usize) -> Self {
        let LayerKind::Conv2d { kernel, .. } = plan.spec.kind else {
            unreachable!("conv shape of a non-conv layer")
        };
        Self {
            batch,
            c: plan.in_shape[0],
            h: plan.in_shape[1],
            w: plan.in_shape[2],
            k: kernel,
            oh: plan.out_shape[1],
            ow: plan.out_shape[2],
            p: plan.conv_params().expect("conv"),
        }
    }

    fn cols(&self) -> usize {
        self.batch * self.oh * self.ow
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    /// Input coordinate for an output position and kernel tap, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.p.stride + ky).checked_sub(self.p.padding)?;
        let ix = (ox * self.p.stride + kx).checked_sub(self.p.padding)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }
}

/// `[B,C,H,W]` -> `[C·k·k, B·OH·OW]`, same ordering as the code-level
/// `im2col` kernel.
fn im2col<T: Scalar>(x: &[T], s: &ConvShape) -> Vec<T> {
    let cols = s.cols();
    let mut out = vec![T::zero(); s.rows() * cols];
    for c in 0..s.c {
        for ky in 0..s.k {
            for kx in 0..s.k {
                let r = (c * s.k + ky) * s.k + kx;
                for n in 0..s.batch {
                    for oy in 0..s.oh {
                        for ox in 0..s.ow {
                            if let Some((iy, ix)) = s.source(oy, ox, ky, kx) {
                                out[r * cols + (n * s.oh + oy) * s.ow + ox] = x[((n * s.c + c) * s.h + iy) * s.w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`im2col`]: scatter-add columns back to `[B,C,H,W]`.
fn col2im<T: Scalar>(cols_data: &[T], s: &ConvShape) -> Vec<T> {
    let cols = s.cols();
    let mut out = vec![T::zero(); s.batch * s.c * s.h * s.w];
    for c in 0..s.c {
        for ky in 0..s.k {
            for kx in 0..s.k {
                let r = (c * s.k + ky) * s.k + kx;
                for n in 0..s.batch {
                    for oy in 0..s.oh {
                        for ox in 0..s.ow {
                            if let Some((iy, ix)) = s.source(oy, ox, ky, kx) {
                                let dst = &mut out[((n * s.c + c) * s.h + iy) * s.w + ix];
                                *dst = *dst + cols_data[r * cols + (n * s.oh + oy) * s.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// A validated model.
#[derive(Debug, Clone)]
pub struct Network {
    spec: ModelSpec,
    plans: Vec<LayerPlan>,
}

impl Network {
    pub fn new(spec: ModelSpec) -> Result<Self, HarnessError> {
        if !(spec.loss_weight.is_finite() && spec.loss_weight > 0.0) {
            return Err(HarnessError::Model(format!(
                "loss weight {} must be positive",
                spec.loss_weight
            )));
        }
        let plans = plan_layers(&spec)?;
        Ok(Self { spec, plans })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn plans(&self) -> &[LayerPlan] {
        &self.plans
    }

    pub fn input_len(&self) -> usize {
        self.spec.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.plans.last().map_or(0, LayerPlan::out_len)
    }

    pub fn param_plans(&self) -> impl Iterator<Item = &LayerPlan> {
        self.plans.iter().filter(|p| p.param.is_some())
    }

    pub fn init_params(&self) -> Vec<ParamTensor<f64>> {
        init_params(&self.spec, &self.plans)
    }

    /// `(layer index, layer kind, precision)` for every GEMM/convolution
    /// layer, in execution order.
    pub fn precision_plan(&self) -> Vec<(usize, &'static str, PrecisionClass)> {
        self.plans
            .iter()
            .enumerate()
            .filter(|(_, p)| p.spec.kind.has_params())
            .map(|(i, p)| (i, p.spec.kind.name(), p.spec.precision))
            .collect()
    }

    fn check_params<T: Scalar>(&self, params: &[ParamTensor<T>]) -> Result<(), HarnessError> {
        let expected: Vec<(usize, usize)> = self
            .param_plans()
            .map(|p| {
                let (r, c) = p.weight_dims().expect("param layer");
                (r * c, r)
            })
            .collect();
        let got: Vec<(usize, usize)> = params.iter().map(|p| (p.weight.len(), p.bias.len())).collect();
        if expected != got {
            return Err(HarnessError::Shape(format!(
                "parameter sizes {got:?} do not match model {expected:?}"
            )));
        }
        Ok(())
    }

    /// Run every layer up to (not including) the loss. Dropout is active
    /// only when a mask generator is supplied.
    pub fn forward<T: Scalar>(
        &self,
        params: &[ParamTensor<T>],
        input: &[T],
        batch: usize,
        engine: &mut dyn Engine<T>,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward<T>, HarnessError> {
        self.check_params(params)?;
        if input.len() != batch * self.input_len() {
            return Err(HarnessError::Shape(format!(
                "input has {} values, expected {batch} × {}",
                input.len(),
                self.input_len()
            )));
        }
        let mut x = input.to_vec();
        let mut caches = Vec::with_capacity(self.plans.len());
        for plan in &self.plans {
            let class = plan.spec.precision;
            let (cache, y) = match plan.spec.kind {
                LayerKind::Dense { outputs } => {
                    let p = &params[plan.param.expect("dense has params")];
                    let inputs = plan.in_len();
                    engine.quantize(&mut x, class, Site::Input);
                    let mut w = p.weight.clone();
                    engine.quantize(&mut w, class, Site::Weight);
                    let wt = transpose(&w, outputs, inputs);
                    let mut y = engine.matmul(&x, &wt, (batch, inputs, outputs), class);
                    for row in y.chunks_mut(outputs) {
                        for (v, &b) in row.iter_mut().zip(&p.bias) {
                            *v = *v + b;
                        }
                    }
                    engine.quantize(&mut y, class, Site::Output);
                    (Cache::Gemm { x, w }, y)
                }
                LayerKind::Conv2d { filters, .. } => {
                    let p = &params[plan.param.expect("conv has params")];
                    let s = ConvShape::of(plan, batch);
                    engine.quantize(&mut x, class, Site::Input);
                    let mut w = p.weight.clone();
                    engine.quantize(&mut w, class, Site::Weight);
                    let cols = im2col(&x, &s);
                    let yf = engine.matmul(&w, &cols, (filters, s.rows(), s.cols()), class);
                    let plane = s.oh * s.ow;
                    let mut y = vec![T::zero(); yf.len()];
                    for f in 0..filters {
                        for n in 0..batch {
                            let src = &yf[f * s.cols() + n * plane..][..plane];
                            let dst = &mut y[(n * filters + f) * plane..][..plane];
                            for (d, &v) in dst.iter_mut().zip(src) {
                                *d = v + p.bias[f];
                            }
                        }
                    }
                    engine.quantize(&mut y, class, Site::Output);
                    (Cache::Gemm { x, w }, y)
                }
                LayerKind::Relu => {
                    let mask: Vec<bool> = x.iter().map(|&v| v > T::zero()).collect();
                    let y = x
                        .iter()
                        .zip(&mask)
                        .map(|(&v, &m)| if m { v } else { T::zero() })
                        .collect();
                    (Cache::Relu { mask }, y)
                }
                LayerKind::Tanh | LayerKind::Sigmoid => {
                    let mut y: Vec<T> = if plan.spec.kind == LayerKind::Tanh {
                        x.iter().map(|v| v.tanh()).collect()
                    } else {
                        x.iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect()
                    };
                    engine.quantize(&mut y, class, Site::Activation);
                    (Cache::Smooth { y: y.clone() }, y)
                }
                LayerKind::Dropout { rate } => match dropout.as_deref_mut() {
                    Some(rng) if rate > 0.0 => {
                        let keep = T::of(1.0 / (1.0 - f64::from(rate)));
                        let mask: Vec<T> = x
                            .iter()
                            .map(|_| if rng.random::<f32>() >= rate { keep } else { T::zero() })
                            .collect();
                        let y = x.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                        (Cache::Dropout { mask: Some(mask) }, y)
                    }
                    _ => (Cache::Dropout { mask: None }, x.clone()),
                },
                LayerKind::SoftmaxCrossEntropy | LayerKind::MeanSquaredError => (Cache::Loss, x.clone()),
            };
            caches.push(cache);
            x = y;
        }
        Ok(Forward {
            caches,
            output: x,
            batch,
        })
    }

    /// Mean loss over the batch and its gradient with respect to the
    /// network output.
    pub fn loss<T: Scalar>(&self, output: &[T], targets: &Targets, batch: usize) -> Result<(T, Vec<T>), HarnessError> {
        let width = self.output_len();
        if output.len() != batch * width || targets.len() != batch {
            return Err(HarnessError::Shape(format!(
                "output {} / targets {} do not match batch {batch} × {width}",
                output.len(),
                targets.len()
            )));
        }
        let inv_b = T::of(f64::from(self.spec.loss_weight)) / T::of(batch as f64);
        let mut grad = vec![T::zero(); output.len()];
        let mut total = T::zero();
        match (self.plans.last().map(|p| p.spec.kind), targets) {
            (Some(LayerKind::SoftmaxCrossEntropy), Targets::Classes { labels, .. }) => {
                for (b, (row, g)) in output.chunks(width).zip(grad.chunks_mut(width)).enumerate() {
                    let label = labels[b];
                    if label >= width {
                        return Err(HarnessError::Shape(format!("label {label} outside {width} classes")));
                    }
                    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
                    let sum: T = exps.iter().copied().sum();
                    total = total + (sum.ln() + max - row[label]);
                    for (j, (gj, e)) in g.iter_mut().zip(&exps).enumerate() {
                        let onehot = if j == label { T::one() } else { T::zero() };
                        *gj = (*e / sum - onehot) * inv_b;
                    }
                }
            }
            (Some(LayerKind::MeanSquaredError), Targets::Values { values, dims }) if *dims == width => {
                let half = T::of(0.5);
                for ((g, &y), &t) in grad.iter_mut().zip(output).zip(values) {
                    let d = y - T::of(f64::from(t));
                    total = total + half * d * d;
                    *g = d * inv_b;
                }
            }
            (kind, _) => {
                return Err(HarnessError::Shape(format!(
                    "targets do not fit loss layer {:?}",
                    kind.map(|k| k.name())
                )))
            }
        }
        Ok((total * inv_b, grad))
    }

    /// Backpropagate `grad_output` (already multiplied by the loss scale).
    /// Returns one gradient per parametric layer.
    pub fn backward<T: Scalar>(
        &self,
        params: &[ParamTensor<T>],
        fwd: &Forward<T>,
        grad_output: Vec<T>,
        engine: &mut dyn Engine<T>,
    ) -> Vec<ParamTensor<T>> {
        let batch = fwd.batch;
        let mut grads: Vec<ParamTensor<T>> = params.iter().map(ParamTensor::zeros_like).collect();
        let mut delta = grad_output;
        for (i, (plan, cache)) in self.plans.iter().zip(&fwd.caches).enumerate().rev() {
            let class = plan.spec.precision;
            let needs_dx = i > 0;
            match (plan.spec.kind, cache) {
                (LayerKind::Dense { outputs }, Cache::Gemm { x, w }) => {
                    let inputs = plan.in_len();
                    let g = &mut grads[plan.param.expect("dense")];
                    engine.quantize(&mut delta, class, Site::Error);
                    let dyt = transpose(&delta, batch, outputs);
                    let mut dw = engine.matmul(&dyt, x, (outputs, batch, inputs), class);
                    engine.quantize(&mut dw, class, Site::WeightGrad);
                    let mut db: Vec<T> = (0..outputs)
                        .map(|o| (0..batch).fold(T::zero(), |acc, b| acc + delta[b * outputs + o]))
                        .collect();
                    engine.quantize(&mut db, class, Site::WeightGrad);
                    g.weight = dw;
                    g.bias = db;
                    if needs_dx {
                        let mut dx = engine.matmul(&delta, w, (batch, outputs, inputs), class);
                        engine.quantize(&mut dx, class, Site::ErrorOut);
                        delta = dx;
                    }
                }
                (LayerKind::Conv2d { filters, .. }, Cache::Gemm { x, w }) => {
                    let s = ConvShape::of(plan, batch);
                    let plane = s.oh * s.ow;
                    engine.quantize(&mut delta, class, Site::Error);
                    // [B, F, P] -> [F, B·P]
                    let mut dy = vec![T::zero(); delta.len()];
                    for n in 0..batch {
                        for f in 0..filters {
                            dy[f * s.cols() + n * plane..][..plane]
                                .copy_from_slice(&delta[(n * filters + f) * plane..][..plane]);
                        }
                    }
                    let cols_t = transpose(&im2col(x, &s), s.rows(), s.cols());
                    let mut dw = engine.matmul(&dy, &cols_t, (filters, s.cols(), s.rows()), class);
                    engine.quantize(&mut dw, class, Site::WeightGrad);
                    let mut db: Vec<T> = dy
                        .chunks(s.cols())
                        .map(|row| row.iter().fold(T::zero(), |acc, &v| acc + v))
                        .collect();
                    engine.quantize(&mut db, class, Site::WeightGrad);
                    let g = &mut grads[plan.param.expect("conv")];
                    g.weight = dw;
                    g.bias = db;
                    if needs_dx {
                        let wt = transpose(w, filters, s.rows());
                        let mut dcols = engine.matmul(&wt, &dy, (s.rows(), filters, s.cols()), class);
                        engine.quantize(&mut dcols, class, Site::ErrorOut);
                        delta = col2im(&dcols, &s);
                    }
                }
                (LayerKind::Relu, Cache::Relu { mask }) => {
                    for (d, &m) in delta.iter_mut().zip(mask) {
                        if !m {
                            *d = T::zero();
                        }
                    }
                }
                (kind @ (LayerKind::Tanh | LayerKind::Sigmoid), Cache::Smooth { y }) => {
                    for (d, &v) in delta.iter_mut().zip(y) {
                        let slope = if kind == LayerKind::Tanh {
                            T::one() - v * v
                        } else {
                            v * (T::one() - v)
                        };
                        *d = *d * slope;
                    }
                    engine.quantize(&mut delta, class, Site::ActivationError);
                }
                (LayerKind::Dropout { .. }, Cache::Dropout { mask }) => {
                    if let Some(mask) = mask {
                        for (d, &m) in delta.iter_mut().zip(mask) {
                            *d = *d * m;
                        }
                    }
                }
                (_, Cache::Loss) => {}
                (kind, _) => unreachable!("cache does not match layer {}", kind.name()),
            }
        }
        grads
    }

    /// Forward, loss and backward for one batch. Gradients come back
    /// multiplied by `loss_scale`; the returned loss is unscaled.
    #[allow(clippy::too_many_arguments)]
    pub fn gradients<T: Scalar>(
        &self,
        params: &[ParamTensor<T>],
        input: &[T],
        targets: &Targets,
        batch: usize,
        loss_scale: T,
        engine: &mut dyn Engine<T>,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Gradients<T>, HarnessError> {
        let fwd = self.forward(params, input, batch, engine, dropout)?;
        let (loss, grad) = self.loss(&fwd.output, targets, batch)?;
        let scaled: Vec<T> = grad.into_iter().map(|g| g * loss_scale).collect();
        let grads = self.backward(params, &fwd, scaled, engine);
        Ok(Gradients {
            loss,
            output: fwd.output,
            grads,
        })
    }
}
