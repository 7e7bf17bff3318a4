//! Experiment configuration.
//!
//! ```ini
//! [run]
//! name = experiment          # label used in logs
//! seed = 1                   # model init, shuffling, dropout and rounding streams
//! output_dir = runs/<name>
//! checkpoint = true          # write master weights under output_dir/checkpoint
//!
//! [data]
//! source = blobs             # blobs | rings | bars | linear | csv | idx
//! samples = 1024             # generators only
//! features = 2               # blobs
//! classes = 2                # blobs, rings
//! separation = 6             # blobs: distance of each centre from the origin is half this
//! noise = 0.1                # rings, bars, linear
//! size = 8                   # bars: image side
//! inputs = 4                 # linear
//! outputs = 1                # linear
//! path =                     # csv: features..., label
//! images =                   # idx: u8 images, rank 3
//! labels =                   # idx: u8 labels, rank 1
//! validation_fraction = 0.2  # held out; 0 disables validation
//! seed = 1                   # generator and split
//!
//! [model]
//! architecture = mlp         # mlp | convnet | linear
//! hidden = 32,32             # mlp
//! activation = relu          # mlp: relu | tanh | sigmoid
//! filters = 4,8              # convnet
//! regularizer = none         # none | l2 | dropout
//! lambda = 0.0001            # l2
//! dropout_rate = 0.5         # dropout
//! loss_weight = 1
//! init_gain = 1
//!
//! [precision]
//! mode = fp8                 # fp8 | fp32
//! rounding = stochastic      # nearest-even | stochastic | toward-zero
//! saturate = false           # clamp overflow to the largest finite value
//!
//! [scaler]
//! kind = dynamic             # constant | dynamic
//! scale = 1                  # constant
//! initial_scale = 32768      # dynamic
//! backoff_factor = 0.5
//! growth_factor = 2
//! growth_interval = 2000
//! thresholds =               # iteration:minimum, e.g. 40000:8192,150000:32768
//!
//! [train]
//! epochs = 10
//! batch_size = 32
//! learning_rate = 0.05
//! momentum = 0.9
//! divergence_patience = 50
//! ```
//!
//! Relative data paths are resolved against the config file's directory;
//! `output_dir` is relative to the working directory. Every key is
//! optional and unknown sections or keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fp8emu::harness::{
    Dataset, LayerKind, ModelSpec, Network, Precision, Regularizer, ScalerSpec, Targets, TrainConfig,
};
use fp8emu::scaling::{BackoffConfig, ThresholdSchedule};
use fp8emu::RoundingMode;

use crate::ini::{Document, Section};
use crate::{read_input, CliError, ConfigError};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Blobs {
        samples: usize,
        features: usize,
        classes: usize,
        separation: f64,
    },
    Rings {
        samples: usize,
        classes: usize,
        noise: f64,
    },
    Bars {
        samples: usize,
        size: usize,
        noise: f64,
    },
    Linear {
        samples: usize,
        inputs: usize,
        outputs: usize,
        noise: f64,
    },
    Csv {
        path: PathBuf,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub validation_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn kind(self) -> LayerKind {
        match self {
            Activation::Relu => LayerKind::Relu,
            Activation::Tanh => LayerKind::Tanh,
            Activation::Sigmoid => LayerKind::Sigmoid,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
    Convnet {
        filters: [usize; 2],
    },
    /// One dense layer with squared-error loss.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub regularizer: Regularizer,
    pub loss_weight: f32,
    pub init_gain: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub divergence_patience: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub checkpoint: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub precision: Precision,
    pub scaler: ScalerSpec,
    pub train: TrainSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 1,
            output_dir: PathBuf::from("runs/experiment"),
            checkpoint: true,
            data: DataConfig {
                source: DataSource::Blobs {
                    samples: 1024,
                    features: 2,
                    classes: 2,
                    separation: 6.0,
                },
                validation_fraction: 0.2,
                seed: 1,
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
            precision: Precision::Fp8 {
                rounding: RoundingMode::Stochastic,
                saturate: false,
            },
            scaler: ScalerSpec::Dynamic(BackoffConfig::default()),
            train: TrainSettings {
                epochs: 10,
                batch_size: 32,
                learning_rate: 0.05,
                momentum: 0.9,
                divergence_patience: 50,
            },
        }
    }
}

const SECTIONS: [&str; 6] = ["run", "data", "model", "precision", "scaler", "train"];

fn word(s: &mut Section, key: &str, default: &str) -> (String, usize) {
    s.take_str(key)
        .map(|(v, l)| (v.to_ascii_lowercase(), l))
        .unwrap_or((default.to_string(), 0))
}

fn unknown(line: usize, key: &str, value: &str, allowed: &str) -> ConfigError {
    let msg = format!("{key} = `{value}` (expected one of: {allowed})");
    if line == 0 {
        ConfigError::new(msg)
    } else {
        ConfigError::at(line, msg)
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::path::absolute(&joined).unwrap_or(joined)
}

impl ExperimentConfig {
    /// Load a config file. Relative data paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let bytes = read_input(path)?;
        let text = String::from_utf8(bytes).map_err(|_| ConfigError::new("config file is not UTF-8"))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(Self::parse(&text, base)?)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut doc = Document::parse(text)?;
        if let Some(extra) = doc.section_names().find(|n| !SECTIONS.contains(n)) {
            return Err(ConfigError::new(format!(
                "unknown section [{extra}] (expected {})",
                SECTIONS.join(", ")
            )));
        }
        let d = Self::default();

        let mut s = doc.take("run");
        let name: String = s.take_or("name", d.name.clone())?;
        let cfg_seed = s.take_or("seed", d.seed)?;
        let output_dir = s
            .take_str("output_dir")
            .map(|(v, _)| PathBuf::from(v))
            .unwrap_or_else(|| Path::new("runs").join(&name));
        let checkpoint = s.take_or("checkpoint", d.checkpoint)?;
        s.finish()?;

        let data = Self::parse_data(doc.take("data"), base)?;
        let model = Self::parse_model(doc.take("model"))?;

        let mut s = doc.take("precision");
        let (mode, line) = word(&mut s, "mode", "fp8");
        let rounding = match s.take_str("rounding") {
            Some((v, l)) => v
                .parse::<RoundingMode>()
                .map_err(|e| ConfigError::at(l, e.to_string()))?,
            None => RoundingMode::Stochastic,
        };
        let saturate = s.take_or("saturate", false)?;
        let precision = match mode.as_str() {
            "fp8" => Precision::Fp8 { rounding, saturate },
            "fp32" => Precision::Fp32,
            other => return Err(unknown(line, "mode", other, "fp8, fp32")),
        };
        s.finish()?;

        let mut s = doc.take("scaler");
        let (kind, line) = word(&mut s, "kind", "dynamic");
        let scale: f32 = s.take_or("scale", 1.0)?;
        let b = BackoffConfig::default();
        let backoff = BackoffConfig {
            initial_scale: s.take_or("initial_scale", b.initial_scale)?,
            backoff_factor: s.take_or("backoff_factor", b.backoff_factor)?,
            growth_factor: s.take_or("growth_factor", b.growth_factor)?,
            growth_interval: s.take_or("growth_interval", b.growth_interval)?,
            schedule: match s.take_str("thresholds") {
                Some((v, l)) => v
                    .parse::<ThresholdSchedule>()
                    .map_err(|e| ConfigError::at(l, e.to_string()))?,
                None => ThresholdSchedule::default(),
            },
        };
        let scaler = match kind.as_str() {
            "constant" => ScalerSpec::Constant(scale),
            "dynamic" => ScalerSpec::Dynamic(backoff),
            other => return Err(unknown(line, "kind", other, "constant, dynamic")),
        };
        s.finish()?;

        let mut s = doc.take("train");
        let train = TrainSettings {
            epochs: s.take_or("epochs", d.train.epochs)?,
            batch_size: s.take_or("batch_size", d.train.batch_size)?,
            learning_rate: s.take_or("learning_rate", d.train.learning_rate)?,
            momentum: s.take_or("momentum", d.train.momentum)?,
            divergence_patience: s.take_or("divergence_patience", d.train.divergence_patience)?,
        };
        s.finish()?;

        let cfg = Self {
            name,
            seed: cfg_seed,
            output_dir,
            checkpoint,
            data,
            model,
            precision,
            scaler,
            train,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_data(mut s: Section, base: &Path) -> Result<DataConfig, ConfigError> {
        let (source, line) = word(&mut s, "source", "blobs");
        let samples = s.take_or("samples", 1024usize)?;
        let features = s.take_or("features", 2usize)?;
        let classes = s.take_or("classes", 2usize)?;
        let separation = s.take_or("separation", 6.0f64)?;
        let noise = s.take_or("noise", 0.1f64)?;
        let size = s.take_or("size", 8usize)?;
        let inputs = s.take_or("inputs", 4usize)?;
        let outputs = s.take_or("outputs", 1usize)?;
        let path = s.take_str("path");
        let images = s.take_str("images");
        let labels = s.take_str("labels");
        let required = |v: Option<(String, usize)>, key: &str| {
            v.map(|(p, _)| resolve(base, &p))
                .ok_or_else(|| ConfigError::new(format!("[data] source = {source} needs `{key}`")))
        };
        let source = match source.as_str() {
            "blobs" => DataSource::Blobs {
                samples,
                features,
                classes,
                separation,
            },
            "rings" => DataSource::Rings {
                samples,
                classes,
                noise,
            },
            "bars" => DataSource::Bars { samples, size, noise },
            "linear" => DataSource::Linear {
                samples,
                inputs,
                outputs,
                noise,
            },
            "csv" => DataSource::Csv {
                path: required(path, "path")?,
            },
            "idx" => DataSource::Idx {
                images: required(images, "images")?,
                labels: required(labels, "labels")?,
            },
            other => return Err(unknown(line, "source", other, "blobs, rings, bars, linear, csv, idx")),
        };
        let cfg = DataConfig {
            source,
            validation_fraction: s.take_or("validation_fraction", 0.2)?,
            seed: s.take_or("seed", 1)?,
        };
        s.finish()?;
        Ok(cfg)
    }

    fn parse_model(mut s: Section) -> Result<ModelConfig, ConfigError> {
        let (arch, line) = word(&mut s, "architecture", "mlp");
        let hidden = s.take_list::<usize>("hidden")?.unwrap_or_else(|| vec![32, 32]);
        let (act, act_line) = word(&mut s, "activation", "relu");
        let activation = match act.as_str() {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            other => return Err(unknown(act_line, "activation", other, "relu, tanh, sigmoid")),
        };
        let filters = s.take_list::<usize>("filters")?.unwrap_or_else(|| vec![4, 8]);
        let architecture = match arch.as_str() {
            "mlp" => Architecture::Mlp { hidden, activation },
            "convnet" => Architecture::Convnet {
                filters: filters
                    .try_into()
                    .map_err(|_| ConfigError::new("[model] filters needs exactly two values"))?,
            },
            "linear" => Architecture::Linear,
            other => return Err(unknown(line, "architecture", other, "mlp, convnet, linear")),
        };
        let (reg, reg_line) = word(&mut s, "regularizer", "none");
        let lambda = s.take_or("lambda", 1e-4f32)?;
        let rate = s.take_or("dropout_rate", 0.5f32)?;
        let regularizer = match reg.as_str() {
            "none" => Regularizer::None,
            "l2" => Regularizer::L2(lambda),
            "dropout" => Regularizer::Dropout(rate),
            other => return Err(unknown(reg_line, "regularizer", other, "none, l2, dropout")),
        };
        let cfg = ModelConfig {
            architecture,
            regularizer,
            loss_weight: s.take_or("loss_weight", 1.0)?,
            init_gain: s.take_or("init_gain", 1.0)?,
        };
        s.finish()?;
        Ok(cfg)
    }

    /// Checks that do not need the dataset.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || t.divergence_patience == 0 {
            return Err(ConfigError::new(
                "[train] epochs, batch_size and divergence_patience must be positive",
            ));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate >= 0.0) {
            return Err(ConfigError::new(format!(
                "[train] learning_rate {} must be finite and >= 0",
                t.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(ConfigError::new(format!(
                "[train] momentum {} must be in [0, 1)",
                t.momentum
            )));
        }
        if !(0.0..1.0).contains(&self.data.validation_fraction) {
            return Err(ConfigError::new("[data] validation_fraction must be in [0, 1)"));
        }
        match self.model.regularizer {
            Regularizer::L2(l) if !(l.is_finite() && l >= 0.0) => {
                return Err(ConfigError::new(format!("[model] lambda {l} must be finite and >= 0")))
            }
            Regularizer::Dropout(p) if !(0.0..1.0).contains(&p) => {
                return Err(ConfigError::new(format!("[model] dropout_rate {p} must be in [0, 1)")))
            }
            _ => {}
        }
        let linear_data = matches!(self.data.source, DataSource::Linear { .. });
        let linear_model = self.model.architecture == Architecture::Linear;
        if linear_data != linear_model {
            return Err(ConfigError::new(
                "the linear architecture pairs with [data] source = linear and only with it",
            ));
        }
        self.scaler
            .build()
            .map_err(|e| ConfigError::new(format!("[scaler] {e}")))?;
        Ok(())
    }

    /// Generate or read the data and split off the validation set.
    pub fn load_data(&self) -> Result<(Dataset, Option<Dataset>), CliError> {
        let d = &self.data;
        let full = match &d.source {
            DataSource::Blobs {
                samples,
                features,
                classes,
                separation,
            } => Dataset::gaussian_blobs(*samples, *features, *classes, *separation, d.seed),
            DataSource::Rings {
                samples,
                classes,
                noise,
            } => Dataset::rings(*samples, *classes, *noise, d.seed),
            DataSource::Bars { samples, size, noise } => Dataset::bars(*samples, *size, *noise, d.seed),
            DataSource::Linear {
                samples,
                inputs,
                outputs,
                noise,
            } => Dataset::linear(*samples, *inputs, *outputs, *noise, d.seed).0,
            DataSource::Csv { path } => {
                let text = String::from_utf8(read_input(path)?)
                    .map_err(|_| CliError::Data(format!("{} is not UTF-8", path.display())))?;
                Dataset::from_csv(&text).map_err(|e| CliError::from_harness(e, path))?
            }
            DataSource::Idx { images, labels } => {
                let (i, l) = (read_input(images)?, read_input(labels)?);
                Dataset::from_idx(&i, &l).map_err(|e| CliError::from_harness(e, images))?
            }
        };
        if full.is_empty() {
            return Err(CliError::Data("dataset has no samples".into()));
        }
        if d.validation_fraction == 0.0 {
            return Ok((full, None));
        }
        let (train, val) = full
            .split(d.validation_fraction, d.seed)
            .map_err(|e| CliError::Config(ConfigError::new(e.to_string())))?;
        Ok((train, Some(val)))
    }

    /// Build the network for data of the given sample shape and targets.
    pub fn network(&self, data: &Dataset) -> Result<Network, CliError> {
        let shape = data.sample_shape().to_vec();
        let bad = |m: String| CliError::Config(ConfigError::new(m));
        let spec = match (&self.model.architecture, data.targets()) {
            (Architecture::Mlp { hidden, activation }, Targets::Classes { classes, .. }) => {
                let mut spec = ModelSpec::mlp(data.sample_len(), hidden, *classes, activation.kind());
                spec.input_shape = shape;
                spec
            }
            (Architecture::Convnet { filters }, Targets::Classes { classes, .. }) => {
                let input: [usize; 3] = shape
                    .try_into()
                    .map_err(|s| bad(format!("convnet needs [C, H, W] samples, data has {s:?}")))?;
                ModelSpec::convnet(input, *filters, *classes)
            }
            (Architecture::Linear, Targets::Values { dims, .. }) => {
                ModelSpec::linear_regression(data.sample_len(), *dims).with_default_placement()
            }
            (arch, _) => return Err(bad(format!("{arch:?} does not fit the dataset's targets"))),
        };
        let spec = spec
            .with_seed(self.seed)
            .with_regularizer(self.model.regularizer)
            .with_loss_weight(self.model.loss_weight)
            .with_init_gain(self.model.init_gain);
        Network::new(spec).map_err(|e| bad(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            precision: self.precision,
            scaler: self.scaler.clone(),
            seed: self.seed,
            divergence_patience: self.train.divergence_patience,
        }
    }

    /// Full config text with every setting spelled out. Parsing it yields
    /// an equal config.
    pub fn to_ini(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "[run]\nname = {}\nseed = {}", self.name, self.seed);
        let _ = writeln!(
            o,
            "output_dir = {}\ncheckpoint = {}",
            self.output_dir.display(),
            self.checkpoint
        );

        let _ = writeln!(o, "\n[data]");
        match &self.data.source {
            DataSource::Blobs {
                samples,
                features,
                classes,
                separation,
            } => {
                let _ = writeln!(
                    o,
                    "source = blobs\nsamples = {samples}\nfeatures = {features}\nclasses = {classes}\nseparation = {separation}"
                );
            }
            DataSource::Rings {
                samples,
                classes,
                noise,
            } => {
                let _ = writeln!(
                    o,
                    "source = rings\nsamples = {samples}\nclasses = {classes}\nnoise = {noise}"
                );
            }
            DataSource::Bars { samples, size, noise } => {
                let _ = writeln!(o, "source = bars\nsamples = {samples}\nsize = {size}\nnoise = {noise}");
            }
            DataSource::Linear {
                samples,
                inputs,
                outputs,
                noise,
            } => {
                let _ = writeln!(
                    o,
                    "source = linear\nsamples = {samples}\ninputs = {inputs}\noutputs = {outputs}\nnoise = {noise}"
                );
            }
            DataSource::Csv { path } => {
                let _ = writeln!(o, "source = csv\npath = {}", path.display());
            }
            DataSource::Idx { images, labels } => {
                let _ = writeln!(
                    o,
                    "source = idx\nimages = {}\nlabels = {}",
                    images.display(),
                    labels.display()
                );
            }
        }
        let _ = writeln!(
            o,
            "validation_fraction = {}\nseed = {}",
            self.data.validation_fraction, self.data.seed
        );

        let _ = writeln!(o, "\n[model]");
        match &self.model.architecture {
            Architecture::Mlp { hidden, activation } => {
                let h: Vec<String> = hidden.iter().map(usize::to_string).collect();
                let _ = writeln!(
                    o,
                    "architecture = mlp\nhidden = {}\nactivation = {}",
                    h.join(","),
                    activation.name()
                );
            }
            Architecture::Convnet { filters } => {
                let _ = writeln!(o, "architecture = convnet\nfilters = {},{}", filters[0], filters[1]);
            }
            Architecture::Linear => {
                let _ = writeln!(o, "architecture = linear");
            }
        }
        let _ = match self.model.regularizer {
            Regularizer::None => writeln!(o, "regularizer = none"),
            Regularizer::L2(l) => writeln!(o, "regularizer = l2\nlambda = {l}"),
            Regularizer::Dropout(p) => writeln!(o, "regularizer = dropout\ndropout_rate = {p}"),
        };
        let _ = writeln!(
            o,
            "loss_weight = {}\ninit_gain = {}",
            self.model.loss_weight, self.model.init_gain
        );

        let _ = writeln!(o, "\n[precision]");
        let _ = match self.precision {
            Precision::Fp32 => writeln!(o, "mode = fp32"),
            Precision::Fp8 { rounding, saturate } => {
                writeln!(o, "mode = fp8\nrounding = {rounding}\nsaturate = {saturate}")
            }
        };

        let _ = writeln!(o, "\n[scaler]");
        let _ = match &self.scaler {
            ScalerSpec::Constant(s) => writeln!(o, "kind = constant\nscale = {s}"),
            ScalerSpec::Dynamic(b) => writeln!(
                o,
                "kind = dynamic\ninitial_scale = {}\nbackoff_factor = {}\ngrowth_factor = {}\ngrowth_interval = {}\nthresholds = {}",
                b.initial_scale, b.backoff_factor, b.growth_factor, b.growth_interval, b.schedule
            ),
        };

        let t = &self.train;
        let _ = writeln!(
            o,
            "\n[train]\nepochs = {}\nbatch_size = {}\nlearning_rate = {}\nmomentum = {}\ndivergence_patience = {}",
            t.epochs, t.batch_size, t.learning_rate, t.momentum, t.divergence_patience
        );
        o
    }
}
