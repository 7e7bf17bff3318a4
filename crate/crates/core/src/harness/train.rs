//! The training loop, evaluation, logs and checkpoints.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::format::{FloatFormat, Fp16Code, RoundingMode};
use crate::lfsr::derive_seed;
use crate::quant::io::{write_float, write_quantized};
use crate::quant::{QuantizedTensor, Tensor};
use crate::scaling::{BackoffConfig, LossScaler};

use super::data::{Dataset, Targets};
use super::engine::{Engine, ExactEngine, QuantEngine};
use super::network::{Network, ParamTensor};
use super::optim::{Masters, OptimizerState, StepReport};
use super::HarnessError;

// Substream tags under the run seed.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_ROUNDING: u64 = 3;
const PATH_TRAIN: u64 = 0;
const PATH_EVAL: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// No quantization; FP32 master weights.
    Fp32,
    /// FP8 GEMM/convolution tensors, 16-bit boundaries, FP16 master weights.
    Fp8 { rounding: RoundingMode, saturate: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScalerSpec {
    Constant(f32),
    Dynamic(BackoffConfig),
}

impl ScalerSpec {
    pub fn build(&self) -> Result<LossScaler, HarnessError> {
        Ok(match self {
            ScalerSpec::Constant(s) => LossScaler::constant(*s)?,
            ScalerSpec::Dynamic(cfg) => LossScaler::dynamic(cfg.clone())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub precision: Precision,
    pub scaler: ScalerSpec,
    /// Drives shuffling, dropout masks and stochastic rounding, each on
    /// its own substream. Parameter init uses the model seed.
    pub seed: u64,
    /// Abort after this many consecutive non-finite losses.
    pub divergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            precision: Precision::Fp32,
            scaler: ScalerSpec::Constant(1.0),
            seed: 1,
            divergence_patience: 50,
        }
    }
}

/// Forward-only metrics after an epoch. Accuracy is `None` for
/// regression targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

impl EvalMetrics {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_accuracy,val_loss,val_accuracy";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            opt(self.train_accuracy),
            opt(self.val_loss),
            opt(self.val_accuracy)
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: OptimizerState,
    pub steps: Vec<StepReport>,
    pub evals: Vec<EvalMetrics>,
    pub scaler: LossScaler,
}

impl TrainOutcome {
    pub fn steps_csv(&self) -> String {
        let mut out = format!("{}\n", StepReport::CSV_HEADER);
        for s in &self.steps {
            let _ = writeln!(out, "{}", s.csv_row());
        }
        out
    }

    pub fn evals_csv(&self) -> String {
        let mut out = format!("{}\n", EvalMetrics::CSV_HEADER);
        for e in &self.evals {
            let _ = writeln!(out, "{}", e.csv_row());
        }
        out
    }

    pub fn final_eval(&self) -> Option<&EvalMetrics> {
        self.evals.last()
    }

    /// Mean backward underflow fraction over all steps.
    pub fn mean_underflow_fraction(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.underflow_fraction).sum::<f64>() / self.steps.len() as f64
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged: {patience} consecutive non-finite losses ending at iteration {iteration}")]
    Diverged {
        iteration: u64,
        patience: usize,
        outcome: Box<TrainOutcome>,
    },
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

enum Regime {
    Exact(ExactEngine),
    Quant(QuantEngine),
}

impl Regime {
    fn new(precision: Precision, seed: u64) -> Self {
        match precision {
            Precision::Fp32 => Regime::Exact(ExactEngine),
            Precision::Fp8 { rounding, saturate } => Regime::Quant(QuantEngine::new(
                rounding,
                derive_seed(seed, &[STREAM_ROUNDING]),
                saturate,
            )),
        }
    }

    fn begin(&mut self, path: &[u64]) -> &mut dyn Engine<f32> {
        match self {
            Regime::Exact(e) => e,
            Regime::Quant(q) => {
                q.begin(path);
                q
            }
        }
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        // NaN never wins
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn eval_with(
    network: &Network,
    weights: &[ParamTensor<f32>],
    data: &Dataset,
    batch_size: usize,
    regime: &mut Regime,
    path: &[u64],
) -> Result<(f64, Option<f64>), HarnessError> {
    let (mut loss_sum, mut correct) = (0f64, 0usize);
    let idx: Vec<usize> = (0..data.len()).collect();
    for (b, chunk) in idx.chunks(batch_size.max(1)).enumerate() {
        let (x, t) = data.batch(chunk);
        let mut p = path.to_vec();
        p.push(b as u64);
        let engine = regime.begin(&p);
        let fwd = network.forward(weights, &x, chunk.len(), engine, None)?;
        let (loss, _) = network.loss(&fwd.output, &t, chunk.len())?;
        loss_sum += f64::from(loss) * chunk.len() as f64;
        if let Targets::Classes { labels, .. } = &t {
            let width = network.output_len();
            correct += fwd
                .output
                .chunks(width)
                .zip(labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
        }
    }
    let n = data.len().max(1) as f64;
    let acc = data.targets().classes().map(|_| correct as f64 / n);
    Ok((loss_sum / n, acc))
}

/// Forward-only mean loss and accuracy of `weights` on `data` in the
/// given precision regime.
pub fn evaluate(
    network: &Network,
    weights: &[ParamTensor<f32>],
    data: &Dataset,
    batch_size: usize,
    precision: Precision,
    seed: u64,
) -> Result<(f64, Option<f64>), HarnessError> {
    let mut regime = Regime::new(precision, seed);
    eval_with(network, weights, data, batch_size, &mut regime, &[PATH_EVAL, u64::MAX])
}

fn check_inputs(
    network: &Network,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(), HarnessError> {
    if train.is_empty() {
        return Err(HarnessError::Data("training set is empty".into()));
    }
    for ds in std::iter::once(train).chain(val) {
        if ds.sample_len() != network.input_len() {
            return Err(HarnessError::Data(format!(
                "samples have shape {:?}, model expects {:?}",
                ds.sample_shape(),
                network.spec().input_shape
            )));
        }
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.divergence_patience == 0 {
        return Err(HarnessError::Config(
            "epochs, batch size and divergence patience must be positive".into(),
        ));
    }
    Ok(())
}

/// Train `network` from its seeded initialization. Deterministic given
/// the model spec, the datasets and `cfg`.
pub fn train(
    network: &Network,
    train: &Dataset,
    validation: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    check_inputs(network, train, validation, cfg)?;
    let master_format = match cfg.precision {
        Precision::Fp32 => FloatFormat::FP32,
        Precision::Fp8 { .. } => FloatFormat::FP16,
    };
    let state = OptimizerState::new(&network.init_params(), master_format, cfg.learning_rate, cfg.momentum)?;
    let mut out = TrainOutcome {
        state,
        steps: Vec::new(),
        evals: Vec::new(),
        scaler: cfg.scaler.build()?,
    };
    let lambda = network.spec().regularizer.l2_lambda();
    let mut regime = Regime::new(cfg.precision, cfg.seed);
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_SHUFFLE]));
    let mut dropout = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_DROPOUT]));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut iteration = 0u64;
    let mut bad_run = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, t) = train.batch(chunk);
            let weights = out.state.weights();
            let scale = out.scaler.scale();
            let engine = regime.begin(&[PATH_TRAIN, iteration]);
            let g = network.gradients(&weights, &x, &t, chunk.len(), scale, engine, Some(&mut dropout))?;
            let stats = engine.stats();
            let l2 = super::optim::l2_loss(&weights, lambda);
            let (event, applied) =
                out.state
                    .update(&g.grads, &mut out.scaler, iteration, lambda, stats.overflows > 0)?;
            out.steps.push(StepReport {
                iteration,
                loss: g.loss,
                l2_loss: l2,
                scale,
                underflow_fraction: stats.underflow_fraction(),
                overflow_count: stats.overflows,
                event,
                applied,
            });
            bad_run = if (g.loss + l2).is_finite() { 0 } else { bad_run + 1 };
            if bad_run >= cfg.divergence_patience {
                return Err(TrainError::Diverged {
                    iteration,
                    patience: cfg.divergence_patience,
                    outcome: Box::new(out),
                });
            }
            iteration += 1;
        }
        let weights = out.state.weights();
        let e = epoch as u64;
        let (train_loss, train_accuracy) = eval_with(
            network,
            &weights,
            train,
            cfg.batch_size,
            &mut regime,
            &[PATH_EVAL, e, 0],
        )?;
        let val = validation
            .map(|v| eval_with(network, &weights, v, cfg.batch_size, &mut regime, &[PATH_EVAL, e, 1]))
            .transpose()?;
        out.evals.push(EvalMetrics {
            epoch,
            train_loss,
            train_accuracy,
            val_loss: val.map(|v| v.0),
            val_accuracy: val.and_then(|v| v.1),
        });
    }
    Ok(out)
}

/// One line per layer: index, kind, precision, input and output shape,
/// and the parameter files for Dense/Conv2d layers.
pub fn manifest(network: &Network, master_format: FloatFormat) -> String {
    let mut out = format!("# layer kind precision in_shape out_shape files (master {master_format})\n");
    for (i, p) in network.plans().iter().enumerate() {
        let shape = |s: &[usize]| s.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        let files = p
            .param
            .map(|j| format!(" param{j}.weight.fp8t param{j}.bias.fp8t"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{i} {} {} {} {}{files}",
            p.spec.kind.name(),
            if p.param.is_some() {
                p.spec.precision.to_string()
            } else {
                "-".into()
            },
            shape(&p.in_shape),
            shape(&p.out_shape),
        );
    }
    out
}

fn write_fp16(path: &Path, shape: Vec<usize>, codes: &[Fp16Code]) -> Result<(), HarnessError> {
    let q = QuantizedTensor::from_codes(
        shape,
        codes.iter().map(|c| c.0).collect(),
        FloatFormat::FP16,
        RoundingMode::NearestEven,
    )?;
    write_quantized(BufWriter::new(fs::File::create(path)?), &q)?;
    Ok(())
}

fn write_f32(path: &Path, shape: Vec<usize>, values: &[f32]) -> Result<(), HarnessError> {
    let t = Tensor::new(shape, values.to_vec())?;
    write_float(BufWriter::new(fs::File::create(path)?), &t)?;
    Ok(())
}

/// Write master weights as tensor files plus `manifest.txt` into `dir`.
pub fn write_checkpoint(dir: &Path, network: &Network, state: &OptimizerState) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.txt"), manifest(network, state.master_format()))?;
    for (j, plan) in network.param_plans().enumerate() {
        let wshape = plan.weight_shape().expect("param layer");
        let bshape = vec![plan.weight_dims().expect("param layer").0];
        let (wpath, bpath) = (
            dir.join(format!("param{j}.weight.fp8t")),
            dir.join(format!("param{j}.bias.fp8t")),
        );
        match state.masters() {
            Masters::Fp16(m) => {
                write_fp16(&wpath, wshape, &m[j].weight)?;
                write_fp16(&bpath, bshape, &m[j].bias)?;
            }
            Masters::Fp32(m) => {
                write_f32(&wpath, wshape, &m[j].weight)?;
                write_f32(&bpath, bshape, &m[j].bias)?;
            }
        }
    }
    Ok(())
}
