//! Built-in multi-run experiments.
//!
//! Every run of a preset gets its own output subdirectory
//! `seed<k>/<variant>` with the usual artifacts; the preset directory also
//! receives `comparison.csv`. Runs with the same seed share data, model
//! initialization and every random stream, so variants are paired.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fp8emu::harness::{Precision, Regularizer, ScalerSpec};
use fp8emu::RoundingMode;

use crate::config::{Activation, Architecture, DataConfig, DataSource, ExperimentConfig, ModelConfig, TrainSettings};
use crate::run::{run_experiment, RunSummary};
use crate::{create_dir, write_output, CliError, ConfigError};

pub const COMPARISON_FILE: &str = "comparison.csv";

/// Loss scales of the loss-scale sweep.
pub const SWEEP_SCALES: [f32; 3] = [1.0, 100.0, 10000.0];

/// The sweep's toy gradients are shrunk by this power of two (with the
/// learning rate raised by the inverse) so that, at scale 1, they reach
/// the FP8 underflow region the way large-model gradients do.
pub const SWEEP_LOSS_WEIGHT: f32 = 1.0 / 256.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// FP32 training only, quantization disabled.
    Fp32Baseline,
    /// FP8 with RNE+L2, RNE+dropout, RNE alone and stochastic rounding+L2.
    RoundingAblation,
    /// FP32 reference against FP8 at constant loss scales 1, 100, 10000.
    LossscaleSweep,
    /// FP32 against FP8 with stochastic rounding and L2, validation accuracy.
    Parity,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Fp32Baseline,
        Preset::RoundingAblation,
        Preset::LossscaleSweep,
        Preset::Parity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fp32Baseline => "fp32-baseline",
            Preset::RoundingAblation => "rounding-ablation",
            Preset::LossscaleSweep => "lossscale-sweep",
            Preset::Parity => "parity",
        }
    }

    pub fn default_seeds(self) -> Vec<u64> {
        match self {
            Preset::LossscaleSweep | Preset::Parity => vec![1, 2, 3],
            _ => vec![1],
        }
    }

    /// The runs of this preset for each seed, in execution order.
    pub fn plan(self, out_dir: &Path, seeds: &[u64]) -> Vec<PlannedRun> {
        let mut runs = Vec::new();
        for &seed in seeds {
            for (variant, cfg) in self.variants(seed) {
                let dir = out_dir.join(format!("seed{seed}")).join(&variant);
                runs.push(PlannedRun {
                    seed,
                    variant: variant.clone(),
                    config: ExperimentConfig {
                        name: format!("{}/seed{seed}/{variant}", self.name()),
                        output_dir: dir,
                        ..cfg
                    },
                });
            }
        }
        runs
    }

    fn variants(self, seed: u64) -> Vec<(String, ExperimentConfig)> {
        let fp8 = |rounding| Precision::Fp8 {
            rounding,
            saturate: false,
        };
        let with = |precision, scale: f32, reg| {
            let mut c = classification(seed);
            c.precision = precision;
            c.scaler = ScalerSpec::Constant(scale);
            c.model.regularizer = reg;
            c
        };
        let l2 = Regularizer::L2(1e-4);
        match self {
            Preset::Fp32Baseline => vec![("fp32".into(), with(Precision::Fp32, 1.0, l2))],
            Preset::Parity => vec![
                ("fp32".into(), with(Precision::Fp32, 1.0, l2)),
                ("fp8-sr-l2".into(), with(fp8(RoundingMode::Stochastic), 1024.0, l2)),
            ],
            Preset::RoundingAblation => {
                let small = |mut c: ExperimentConfig| {
                    // fewer samples, wider net, longer: room to over-fit
                    c.data.source = DataSource::Blobs {
                        samples: 1024,
                        features: 8,
                        classes: 4,
                        separation: 4.0,
                    };
                    c.model.architecture = Architecture::Mlp {
                        hidden: vec![64, 64],
                        activation: Activation::Relu,
                    };
                    c.train.epochs = 30;
                    c
                };
                let rne = fp8(RoundingMode::NearestEven);
                vec![
                    ("rne-l2".into(), small(with(rne, 1024.0, l2))),
                    (
                        "rne-dropout".into(),
                        small(with(rne, 1024.0, Regularizer::Dropout(0.5))),
                    ),
                    ("rne-none".into(), small(with(rne, 1024.0, Regularizer::None))),
                    ("sr-l2".into(), small(with(fp8(RoundingMode::Stochastic), 1024.0, l2))),
                ]
            }
            Preset::LossscaleSweep => {
                let mut runs = vec![("fp32".into(), deep(seed, Precision::Fp32, 1.0))];
                for s in SWEEP_SCALES {
                    runs.push((format!("fp8-scale{s}"), deep(seed, fp8(RoundingMode::NearestEven), s)));
                }
                runs
            }
        }
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            ConfigError::new(format!("unknown preset `{s}` (expected one of: {})", names.join(", ")))
        })
    }
}

/// 4-class blobs in 8 dimensions with a held-out quarter, two hidden layers.
fn classification(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        checkpoint: true,
        data: DataConfig {
            source: DataSource::Blobs {
                samples: 4096,
                features: 8,
                classes: 4,
                separation: 4.0,
            },
            validation_fraction: 0.25,
            seed: 100 + seed,
        },
        model: ModelConfig {
            architecture: Architecture::Mlp {
                hidden: vec![32, 32],
                activation: Activation::Relu,
            },
            regularizer: Regularizer::None,
            loss_weight: 1.0,
            init_gain: 1.0,
        },
        train: TrainSettings {
            epochs: 15,
            batch_size: 64,
            learning_rate: 0.02,
            momentum: 0.9,
            divergence_patience: 50,
        },
        ..ExperimentConfig::default()
    }
}

/// Four hidden layers (three of them FP8) on the same kind of data.
fn deep(seed: u64, precision: Precision, scale: f32) -> ExperimentConfig {
    let mut c = classification(seed);
    c.data.validation_fraction = 0.0;
    c.model.architecture = Architecture::Mlp {
        hidden: vec![16; 4],
        activation: Activation::Relu,
    };
    c.model.loss_weight = SWEEP_LOSS_WEIGHT;
    c.train.learning_rate = 0.02 / SWEEP_LOSS_WEIGHT;
    c.precision = precision;
    c.scaler = ScalerSpec::Constant(scale);
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub seed: u64,
    pub variant: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub preset: Preset,
    pub dir: PathBuf,
    pub runs: Vec<(PlannedRun, RunSummary)>,
    pub comparison: String,
}

impl SweepReport {
    pub fn diverged(&self) -> bool {
        self.runs.iter().any(|(_, s)| s.diverged_at.is_some())
    }

    /// Summary of `variant` for `seed`.
    pub fn get(&self, seed: u64, variant: &str) -> Option<&RunSummary> {
        self.runs
            .iter()
            .find(|(p, _)| p.seed == seed && p.variant == variant)
            .map(|(_, s)| s)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut seeds: Vec<u64> = self.runs.iter().map(|(p, _)| p.seed).collect();
        seeds.dedup();
        seeds
    }
}

/// Run every planned run, sequentially or on one thread each, then write
/// the comparison table. Results do not depend on `parallel`: each run
/// owns its seeds and its directory.
pub fn run_sweep(preset: Preset, out_dir: &Path, seeds: &[u64], parallel: bool) -> Result<SweepReport, CliError> {
    if seeds.is_empty() {
        return Err(ConfigError::new("no seeds given").into());
    }
    create_dir(out_dir)?;
    let plan = preset.plan(out_dir, seeds);
    let results: Vec<Result<RunSummary, CliError>> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = plan
                .iter()
                .map(|p| scope.spawn(move || run_experiment(&p.config)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("run thread panicked"))
                .collect()
        })
    } else {
        plan.iter().map(|p| run_experiment(&p.config)).collect()
    };
    let mut runs = Vec::with_capacity(plan.len());
    for (p, r) in plan.into_iter().zip(results) {
        runs.push((p, r?));
    }
    let mut report = SweepReport {
        preset,
        dir: out_dir.to_path_buf(),
        runs,
        comparison: String::new(),
    };
    report.comparison = comparison_csv(&report);
    write_output(&out_dir.join(COMPARISON_FILE), &report.comparison)?;
    Ok(report)
}

fn num(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn comparison_csv(r: &SweepReport) -> String {
    let mut o = String::new();
    match r.preset {
        Preset::LossscaleSweep => {
            o.push_str("seed,variant,scale,final_train_loss,mean_underflow_fraction,relative_to_fp32\n");
            for (p, s) in &r.runs {
                let reference = r.get(p.seed, "fp32").and_then(RunSummary::final_train_loss);
                let rel = s.final_train_loss().zip(reference).map(|(l, f)| (l - f) / f);
                let scale = match &p.config.scaler {
                    ScalerSpec::Constant(s) if p.config.precision != Precision::Fp32 => s.to_string(),
                    _ => String::new(),
                };
                let _ = writeln!(
                    o,
                    "{},{},{scale},{},{},{}",
                    p.seed,
                    p.variant,
                    num(s.final_train_loss()),
                    s.mean_underflow_fraction,
                    num(rel)
                );
            }
        }
        Preset::Parity => {
            o.push_str("seed,fp32_val_accuracy,fp8_val_accuracy,gap_points\n");
            for seed in r.seeds() {
                let a = r.get(seed, "fp32").and_then(RunSummary::final_val_accuracy);
                let b = r.get(seed, "fp8-sr-l2").and_then(RunSummary::final_val_accuracy);
                let gap = a.zip(b).map(|(a, b)| (b - a) * 100.0);
                let _ = writeln!(o, "{seed},{},{},{}", num(a), num(b), num(gap));
            }
        }
        Preset::RoundingAblation | Preset::Fp32Baseline => {
            o.push_str("seed,variant,train_loss,train_accuracy,val_loss,val_accuracy,final_l2_loss\n");
            for (p, s) in &r.runs {
                let e = s.final_eval;
                let _ = writeln!(
                    o,
                    "{},{},{},{},{},{},{}",
                    p.seed,
                    p.variant,
                    num(s.final_train_loss()),
                    num(e.and_then(|e| e.train_accuracy)),
                    num(e.and_then(|e| e.val_loss)),
                    num(e.and_then(|e| e.val_accuracy)),
                    num(s.final_l2_loss.map(f64::from)),
                );
            }
        }
    }
    o
}
