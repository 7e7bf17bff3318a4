//! Layer and model descriptions, shape inference and precision placement.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::format::FloatFormat;
use crate::quant::Conv2dParams;

use super::network::ParamTensor;
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    /// Fully connected; flattens its input.
    Dense {
        outputs: usize,
    },
    /// Square-kernel convolution over `[C, H, W]` inputs.
    Conv2d {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Tanh,
    Sigmoid,
    Dropout {
        rate: f32,
    },
    SoftmaxCrossEntropy,
    /// `Σ (y - t)² / (2·batch)`, for regression toys.
    MeanSquaredError,
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerKind::Dense { .. } | LayerKind::Conv2d { .. })
    }

    pub fn is_loss(&self) -> bool {
        matches!(self, LayerKind::SoftmaxCrossEntropy | LayerKind::MeanSquaredError)
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Tanh => "tanh",
            LayerKind::Sigmoid => "sigmoid",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::SoftmaxCrossEntropy => "softmax-cross-entropy",
            LayerKind::MeanSquaredError => "mean-squared-error",
        }
    }
}

/// Storage format of a GEMM/convolution layer's tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PrecisionClass {
    #[default]
    Fp8,
    /// 16-bit tensors; allowed only on the first parametric layer and the
    /// last dense layer.
    Fp16Boundary,
}

impl PrecisionClass {
    pub fn format(self) -> FloatFormat {
        match self {
            PrecisionClass::Fp8 => FloatFormat::FP8,
            PrecisionClass::Fp16Boundary => FloatFormat::FP16,
        }
    }
}

impl fmt::Display for PrecisionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrecisionClass::Fp8 => "fp8",
            PrecisionClass::Fp16Boundary => "fp16-boundary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub precision: PrecisionClass,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        Self {
            kind,
            precision: PrecisionClass::Fp8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Regularizer {
    #[default]
    None,
    /// Weight decay λ: adds `λ Σ w²` to the loss (weights, not biases).
    L2(f32),
    /// Dropout with this rate on the input of the last dense layer.
    Dropout(f32),
}

impl Regularizer {
    pub fn l2_lambda(&self) -> f32 {
        match *self {
            Regularizer::L2(l) => l,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Per-sample input shape: `[features]` or `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub regularizer: Regularizer,
    pub seed: u64,
    /// Multiplier on the He-normal initialization standard deviation.
    pub init_gain: f32,
    /// Constant factor on the loss (and so on every gradient). Defaults to 1.
    pub loss_weight: f32,
}

impl ModelSpec {
    pub fn new(input_shape: Vec<usize>, kinds: impl IntoIterator<Item = LayerKind>) -> Self {
        Self {
            input_shape,
            layers: kinds.into_iter().map(LayerSpec::new).collect(),
            regularizer: Regularizer::None,
            seed: 1,
            init_gain: 1.0,
            loss_weight: 1.0,
        }
    }

    /// Dense stack: `hidden` widths with `activation` after each, then a
    /// `classes`-way softmax cross-entropy head. 16-bit boundaries applied.
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize, activation: LayerKind) -> Self {
        let mut kinds = Vec::new();
        for &h in hidden {
            kinds.push(LayerKind::Dense { outputs: h });
            kinds.push(activation);
        }
        kinds.push(LayerKind::Dense { outputs: classes });
        kinds.push(LayerKind::SoftmaxCrossEntropy);
        Self::new(vec![inputs], kinds).with_default_placement()
    }

    /// Two 3×3 convolutions followed by a dense head.
    pub fn convnet(input: [usize; 3], filters: [usize; 2], classes: usize) -> Self {
        let kinds = [
            LayerKind::Conv2d {
                filters: filters[0],
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerKind::Relu,
            LayerKind::Conv2d {
                filters: filters[1],
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            LayerKind::Relu,
            LayerKind::Dense { outputs: classes },
            LayerKind::SoftmaxCrossEntropy,
        ];
        Self::new(input.to_vec(), kinds).with_default_placement()
    }

    /// Single dense layer with a squared-error loss.
    pub fn linear_regression(inputs: usize, outputs: usize) -> Self {
        Self::new(
            vec![inputs],
            [LayerKind::Dense { outputs }, LayerKind::MeanSquaredError],
        )
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_regularizer(mut self, r: Regularizer) -> Self {
        self.regularizer = r;
        self
    }

    pub fn with_loss_weight(mut self, weight: f32) -> Self {
        self.loss_weight = weight;
        self
    }

    pub fn with_init_gain(mut self, gain: f32) -> Self {
        self.init_gain = gain;
        self
    }

    /// Mark the first parametric layer and the last dense layer as 16-bit
    /// boundaries; everything else FP8.
    pub fn with_default_placement(mut self) -> Self {
        let first = self.layers.iter().position(|l| l.kind.has_params());
        let last = self
            .layers
            .iter()
            .rposition(|l| matches!(l.kind, LayerKind::Dense { .. }));
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.precision = if Some(i) == first || Some(i) == last {
                PrecisionClass::Fp16Boundary
            } else {
                PrecisionClass::Fp8
            };
        }
        self
    }

    /// Set every layer to FP8, boundaries included.
    pub fn all_fp8(mut self) -> Self {
        for l in &mut self.layers {
            l.precision = PrecisionClass::Fp8;
        }
        self
    }

    /// Layers actually executed: `layers` plus the dropout implied
    /// by [`Regularizer::Dropout`].
    pub fn effective_layers(&self) -> Vec<LayerSpec> {
        let mut layers = self.layers.clone();
        if let Regularizer::Dropout(rate) = self.regularizer {
            if let Some(pos) = layers.iter().rposition(|l| matches!(l.kind, LayerKind::Dense { .. })) {
                layers.insert(pos, LayerSpec::new(LayerKind::Dropout { rate }));
            }
        }
        layers
    }
}

/// A validated layer with its resolved shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub spec: LayerSpec,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// Index into the parameter list for Dense/Conv2d layers.
    pub param: Option<usize>,
}

impl LayerPlan {
    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// `(rows, cols)` of the weight matrix as the kernels see it:
    /// Dense `[outputs, inputs]`, Conv2d `[filters, C·k·k]`.
    pub fn weight_dims(&self) -> Option<(usize, usize)> {
        match self.spec.kind {
            LayerKind::Dense { outputs } => Some((outputs, self.in_len())),
            LayerKind::Conv2d { filters, kernel, .. } => Some((filters, self.in_shape[0] * kernel * kernel)),
            _ => None,
        }
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match self.spec.kind {
            LayerKind::Dense { outputs } => Some(vec![outputs, self.in_len()]),
            LayerKind::Conv2d { filters, kernel, .. } => Some(vec![filters, self.in_shape[0], kernel, kernel]),
            _ => None,
        }
    }

    pub fn conv_params(&self) -> Option<Conv2dParams> {
        match self.spec.kind {
            LayerKind::Conv2d { stride, padding, .. } => Some(Conv2dParams { stride, padding }),
            _ => None,
        }
    }
}

pub(crate) fn plan_layers(spec: &ModelSpec) -> Result<Vec<LayerPlan>, HarnessError> {
    let layers = spec.effective_layers();
    if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
        return Err(HarnessError::Model(format!(
            "input shape {:?} must be non-empty with positive dims",
            spec.input_shape
        )));
    }
    let losses = layers.iter().filter(|l| l.kind.is_loss()).count();
    if losses != 1 || !layers.last().is_some_and(|l| l.kind.is_loss()) {
        return Err(HarnessError::Model(
            "exactly one loss layer is required, as the last layer".into(),
        ));
    }
    let param_layers: Vec<usize> = (0..layers.len()).filter(|&i| layers[i].kind.has_params()).collect();
    let first_param = param_layers.first().copied();
    let last_dense = layers.iter().rposition(|l| matches!(l.kind, LayerKind::Dense { .. }));
    let mut plans = Vec::with_capacity(layers.len());
    let mut shape = spec.input_shape.clone();
    let mut n_params = 0;
    for (i, l) in layers.iter().enumerate() {
        if l.precision == PrecisionClass::Fp16Boundary && Some(i) != first_param && Some(i) != last_dense {
            return Err(HarnessError::Model(format!(
                "layer {i} ({}) cannot be a 16-bit boundary: only the first parametric \
                 layer and the last dense layer may be",
                l.kind.name()
            )));
        }
        let in_shape = shape.clone();
        let out_shape = match l.kind {
            LayerKind::Dense { outputs } => {
                if outputs == 0 {
                    return Err(HarnessError::Model(format!("layer {i}: dense with zero outputs")));
                }
                vec![outputs]
            }
            LayerKind::Conv2d {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let [_c, h, w] = in_shape[..] else {
                    return Err(HarnessError::Model(format!(
                        "layer {i}: conv2d needs a [C, H, W] input, got {in_shape:?}"
                    )));
                };
                let p = Conv2dParams { stride, padding };
                match (p.output_size(h, kernel), p.output_size(w, kernel)) {
                    (Some(oh), Some(ow)) if filters > 0 && kernel > 0 => vec![filters, oh, ow],
                    _ => {
                        return Err(HarnessError::Model(format!(
                            "layer {i}: conv2d geometry does not fit input {in_shape:?}"
                        )))
                    }
                }
            }
            LayerKind::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(HarnessError::Model(format!(
                        "layer {i}: dropout rate {rate} not in [0, 1)"
                    )));
                }
                in_shape.clone()
            }
            LayerKind::SoftmaxCrossEntropy => {
                if in_shape.len() != 1 || in_shape[0] < 2 {
                    return Err(HarnessError::Model(format!(
                        "softmax cross-entropy needs [classes >= 2] logits, got {in_shape:?}"
                    )));
                }
                in_shape.clone()
            }
            _ => in_shape.clone(),
        };
        let param = l.kind.has_params().then(|| {
            n_params += 1;
            n_params - 1
        });
        plans.push(LayerPlan {
            spec: *l,
            in_shape,
            out_shape: out_shape.clone(),
            param,
        });
        shape = out_shape;
    }
    Ok(plans)
}

/// He-normal weights scaled by `init_gain`, zero biases, drawn from the
/// model seed.
pub(crate) fn init_params(spec: &ModelSpec, plans: &[LayerPlan]) -> Vec<ParamTensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    plans
        .iter()
        .filter_map(|p| {
            let (rows, fan_in) = p.weight_dims()?;
            let std = f64::from(spec.init_gain) * (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            Some(ParamTensor {
                weight: (0..rows * fan_in).map(|_| normal.sample(&mut rng)).collect(),
                bias: vec![0.0; rows],
            })
        })
        .collect()
}
