//! One training run and its artifacts.

use std::path::{Path, PathBuf};

use fp8emu::harness::{train, write_checkpoint, EvalMetrics, TrainError, TrainOutcome};

use crate::config::ExperimentConfig;
use crate::{create_dir, write_output, CliError};

pub const CONFIG_FILE: &str = "config.ini";
pub const STEPS_FILE: &str = "steps.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const RANGE_FILE: &str = "range_report.txt";
pub const SCALE_EVENTS_FILE: &str = "scale_events.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Files every run writes, diverged or not.
pub const ARTIFACTS: [&str; 5] = [CONFIG_FILE, STEPS_FILE, EVAL_FILE, RANGE_FILE, SCALE_EVENTS_FILE];

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub dir: PathBuf,
    pub steps: usize,
    pub final_eval: Option<EvalMetrics>,
    /// `l2_loss` of the last logged step.
    pub final_l2_loss: Option<f32>,
    pub mean_underflow_fraction: f64,
    /// Steps whose update was skipped for non-finite gradients.
    pub skipped_steps: usize,
    pub final_scale: f32,
    pub diverged_at: Option<u64>,
    pub loss_weight: f32,
}

impl RunSummary {
    fn new(cfg: &ExperimentConfig, dir: &Path, out: &TrainOutcome, diverged_at: Option<u64>) -> Self {
        Self {
            name: cfg.name.clone(),
            dir: dir.to_path_buf(),
            steps: out.steps.len(),
            final_eval: out.final_eval().copied(),
            final_l2_loss: out.steps.last().map(|s| s.l2_loss),
            mean_underflow_fraction: out.mean_underflow_fraction(),
            skipped_steps: out.steps.iter().filter(|s| !s.applied).count(),
            final_scale: out.scaler.scale(),
            diverged_at,
            loss_weight: cfg.model.loss_weight,
        }
    }

    /// Final full-pass training loss with the loss weight divided out.
    pub fn final_train_loss(&self) -> Option<f64> {
        self.final_eval.map(|e| e.train_loss / f64::from(self.loss_weight))
    }

    pub fn final_val_accuracy(&self) -> Option<f64> {
        self.final_eval.and_then(|e| e.val_accuracy)
    }

    /// One human-readable line.
    pub fn describe(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let status = match self.diverged_at {
            Some(i) => format!("DIVERGED at iteration {i}"),
            None => "ok".to_string(),
        };
        format!(
            "{}: {status}; {} steps, train loss {}, train acc {}, val acc {}, underflow {:.4}, skipped {}, scale {} -> {}",
            self.name,
            self.steps,
            opt(self.final_train_loss()),
            opt(self.final_eval.and_then(|e| e.train_accuracy)),
            opt(self.final_val_accuracy()),
            self.mean_underflow_fraction,
            self.skipped_steps,
            self.final_scale,
            self.dir.display(),
        )
    }
}

/// Train as configured and write the artifacts into `cfg.output_dir`.
/// Divergence still writes every artifact and is reported through
/// [`RunSummary::diverged_at`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let (train_set, val_set) = cfg.load_data()?;
    let network = cfg.network(&train_set)?;
    let dir = cfg.output_dir.clone();
    create_dir(&dir)?;
    write_output(&dir.join(CONFIG_FILE), cfg.to_ini())?;
    let (outcome, diverged_at) = match train(&network, &train_set, val_set.as_ref(), &cfg.train_config()) {
        Ok(o) => (o, None),
        Err(TrainError::Diverged { iteration, outcome, .. }) => (*outcome, Some(iteration)),
        Err(TrainError::Harness(e)) => return Err(CliError::from_harness(e, &dir)),
    };
    write_output(&dir.join(STEPS_FILE), outcome.steps_csv())?;
    write_output(&dir.join(EVAL_FILE), outcome.evals_csv())?;
    write_output(&dir.join(RANGE_FILE), fp8emu::range_report())?;
    write_output(&dir.join(SCALE_EVENTS_FILE), outcome.scaler.events_csv())?;
    if cfg.checkpoint {
        let ck = dir.join(CHECKPOINT_DIR);
        write_checkpoint(&ck, &network, &outcome.state).map_err(|e| CliError::from_harness(e, &ck))?;
    }
    Ok(RunSummary::new(cfg, &dir, &outcome, diverged_at))
}
