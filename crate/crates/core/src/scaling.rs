//! Loss scaling: constant, and back-off dynamic scaling with an
//! iteration-indexed minimum threshold.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::quant::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalerError {
    #[error("{what} must be a positive power of two, got {value}")]
    NotPowerOfTwo { what: &'static str, value: f32 },
    #[error("loss scale must be positive and finite, got {0}")]
    BadScale(f32),
    #[error("threshold schedule iterations must strictly increase ({prev} then {next})")]
    ScheduleOrder { prev: u64, next: u64 },
    #[error("growth interval must be at least 1")]
    ZeroInterval,
    #[error("invalid threshold schedule entry `{0}` (expected iteration:scale)")]
    ScheduleSyntax(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalerKind {
    Constant,
    DynamicBackoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScaleAction {
    None,
    Backoff,
    Growth,
    ClampedToMin,
}

impl ScaleAction {
    pub const fn as_str(self) -> &'static str {
        match self {
            ScaleAction::None => "none",
            ScaleAction::Backoff => "backoff",
            ScaleAction::Growth => "growth",
            ScaleAction::ClampedToMin => "clamped-to-min",
        }
    }
}

impl fmt::Display for ScaleAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleEvent {
    pub iteration: u64,
    pub action: ScaleAction,
    pub scale_after: f32,
}

/// `(iteration, minimum scale)` pairs with strictly increasing iterations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThresholdSchedule(Vec<(u64, f32)>);

fn is_pow2(v: f32) -> bool {
    v.is_finite() && v > 0.0 && {
        let bits = v.to_bits();
        // normal with zero mantissa, or subnormal with one bit set
        (bits & 0x007f_ffff == 0 && bits >> 23 != 0) || (bits >> 23 == 0 && bits.count_ones() == 1)
    }
}

fn require_pow2(what: &'static str, value: f32) -> Result<(), ScalerError> {
    if is_pow2(value) {
        Ok(())
    } else {
        Err(ScalerError::NotPowerOfTwo { what, value })
    }
}

impl ThresholdSchedule {
    pub fn new(entries: Vec<(u64, f32)>) -> Result<Self, ScalerError> {
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(ScalerError::ScheduleOrder {
                    prev: pair[0].0,
                    next: pair[1].0,
                });
            }
        }
        for &(_, s) in &entries {
            require_pow2("minimum threshold", s)?;
        }
        Ok(Self(entries))
    }

    pub fn entries(&self) -> &[(u64, f32)] {
        &self.0
    }

    /// Value of the last entry at or before `iteration`; 1 before the first.
    pub fn at(&self, iteration: u64) -> f32 {
        self.0
            .iter()
            .take_while(|(it, _)| *it <= iteration)
            .last()
            .map_or(1.0, |&(_, s)| s)
    }
}

impl FromStr for ThresholdSchedule {
    type Err = ScalerError;

    /// `40000:8192, 150000:32768`; empty string means no schedule.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let entries = s
            .split(',')
            .map(str::trim)
            .filter(|e| !e.is_empty())
            .map(|e| {
                let (it, sc) = e
                    .split_once(':')
                    .ok_or_else(|| ScalerError::ScheduleSyntax(e.to_string()))?;
                let it = it
                    .trim()
                    .parse()
                    .map_err(|_| ScalerError::ScheduleSyntax(e.to_string()))?;
                let sc = sc
                    .trim()
                    .parse()
                    .map_err(|_| ScalerError::ScheduleSyntax(e.to_string()))?;
                Ok((it, sc))
            })
            .collect::<Result<Vec<_>, ScalerError>>()?;
        Self::new(entries)
    }
}

impl fmt::Display for ThresholdSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(i, s)| format!("{i}:{s}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Back-off parameters. Defaults: factor 1/2 on overflow, ×2 after 2000
/// clean steps, starting at 2^15.
#[derive(Debug, Clone, PartialEq)]
pub struct BackoffConfig {
    pub initial_scale: f32,
    pub backoff_factor: f32,
    pub growth_factor: f32,
    pub growth_interval: u64,
    pub schedule: ThresholdSchedule,
}

impl Default for BackoffConfig {
    fn default() -> Self {
        Self {
            initial_scale: 32768.0,
            backoff_factor: 0.5,
            growth_factor: 2.0,
            growth_interval: 2000,
            schedule: ThresholdSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossScaler {
    kind: ScalerKind,
    scale: f32,
    backoff_factor: f32,
    growth_factor: f32,
    growth_interval: u64,
    steps_since_overflow: u64,
    schedule: ThresholdSchedule,
    events: Vec<ScaleEvent>,
}

impl LossScaler {
    pub fn constant(scale: f32) -> Result<Self, ScalerError> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(ScalerError::BadScale(scale));
        }
        Ok(Self {
            kind: ScalerKind::Constant,
            scale,
            backoff_factor: 1.0,
            growth_factor: 1.0,
            growth_interval: u64::MAX,
            steps_since_overflow: 0,
            schedule: ThresholdSchedule::default(),
            events: Vec::new(),
        })
    }

    /// Back-off dynamic scaler. The initial scale, both factors and every
    /// threshold must be powers of two so that scaling stays exact.
    pub fn dynamic(cfg: BackoffConfig) -> Result<Self, ScalerError> {
        require_pow2("initial scale", cfg.initial_scale)?;
        require_pow2("backoff factor", cfg.backoff_factor)?;
        require_pow2("growth factor", cfg.growth_factor)?;
        if cfg.backoff_factor >= 1.0 {
            return Err(ScalerError::NotPowerOfTwo {
                what: "backoff factor below 1",
                value: cfg.backoff_factor,
            });
        }
        if cfg.growth_factor <= 1.0 {
            return Err(ScalerError::NotPowerOfTwo {
                what: "growth factor above 1",
                value: cfg.growth_factor,
            });
        }
        if cfg.growth_interval == 0 {
            return Err(ScalerError::ZeroInterval);
        }
        Ok(Self {
            kind: ScalerKind::DynamicBackoff,
            scale: cfg.initial_scale.max(cfg.schedule.at(0)),
            backoff_factor: cfg.backoff_factor,
            growth_factor: cfg.growth_factor,
            growth_interval: cfg.growth_interval,
            steps_since_overflow: 0,
            schedule: cfg.schedule,
            events: Vec::new(),
        })
    }

    pub fn kind(&self) -> ScalerKind {
        self.kind
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn steps_since_overflow(&self) -> u64 {
        self.steps_since_overflow
    }

    pub fn events(&self) -> &[ScaleEvent] {
        &self.events
    }

    pub fn min_threshold(&self, iteration: u64) -> f32 {
        match self.kind {
            ScalerKind::Constant => 1.0,
            ScalerKind::DynamicBackoff => self.schedule.at(iteration),
        }
    }

    pub fn scale_loss(&self, loss: f32) -> f32 {
        loss * self.scale
    }

    /// Divide every element by the current scale in FP32. Non-finite values
    /// stay non-finite.
    pub fn unscale_gradients(&self, g: &Tensor) -> Tensor {
        let s = self.scale;
        g.map(|v| v / s)
    }

    /// Advance the state machine once per optimizer step. When
    /// `grads_finite` is false the caller must skip the weight update.
    pub fn step(&mut self, grads_finite: bool, iteration: u64) -> ScaleEvent {
        let action = match self.kind {
            ScalerKind::Constant => ScaleAction::None,
            ScalerKind::DynamicBackoff => {
                let floor = self.schedule.at(iteration);
                let mut action = if grads_finite {
                    self.steps_since_overflow += 1;
                    if self.steps_since_overflow >= self.growth_interval {
                        self.steps_since_overflow = 0;
                        self.scale *= self.growth_factor;
                        ScaleAction::Growth
                    } else {
                        ScaleAction::None
                    }
                } else {
                    self.steps_since_overflow = 0;
                    self.scale *= self.backoff_factor;
                    ScaleAction::Backoff
                };
                if self.scale < floor {
                    self.scale = floor;
                    action = ScaleAction::ClampedToMin;
                }
                action
            }
        };
        let event = ScaleEvent {
            iteration,
            action,
            scale_after: self.scale,
        };
        self.events.push(event);
        event
    }

    /// `iteration,action,scale_after` CSV of every event so far.
    pub fn events_csv(&self) -> String {
        let mut out = String::from("iteration,action,scale_after\n");
        for e in &self.events {
            out.push_str(&format!("{},{},{}\n", e.iteration, e.action, e.scale_after));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn threshold_schedule() -> ThresholdSchedule {
        ThresholdSchedule::new(vec![(40000, 8192.0), (150000, 32768.0)]).unwrap()
    }

    fn dynamic(scale: f32, schedule: ThresholdSchedule) -> LossScaler {
        LossScaler::dynamic(BackoffConfig {
            initial_scale: scale,
            schedule,
            ..BackoffConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn scale_loss_examples() {
        assert_eq!(LossScaler::constant(1000.0).unwrap().scale_loss(0.7), 700.0);
        assert_eq!(LossScaler::constant(10000.0).unwrap().scale_loss(0.7), 7000.0);
        assert_eq!(LossScaler::constant(123.0).unwrap().scale_loss(0.0), 0.0);
        assert!(LossScaler::constant(0.0).is_err());
    }

    #[test]
    fn unscale_examples() {
        let s = LossScaler::constant(10000.0).unwrap();
        let g = Tensor::new(vec![2], vec![7000.0, f32::INFINITY]).unwrap();
        assert_eq!(s.unscale_gradients(&g).data(), &[0.7, f32::INFINITY]);
    }

    #[test]
    fn threshold_lookup() {
        let s = threshold_schedule();
        assert_eq!(s.at(39999), 1.0);
        assert_eq!(s.at(40000), 8192.0);
        assert_eq!(s.at(149999), 8192.0);
        assert_eq!(s.at(200000), 32768.0);
        assert_eq!(ThresholdSchedule::default().at(5), 1.0);
        assert!(ThresholdSchedule::new(vec![(5, 2.0), (5, 4.0)]).is_err());
        assert!(ThresholdSchedule::new(vec![(5, 3000.0)]).is_err());
        assert_eq!("40000:8192, 150000:32768".parse::<ThresholdSchedule>().unwrap(), s);
        assert_eq!(s.to_string().parse::<ThresholdSchedule>().unwrap(), s);
        assert!("40000=8192".parse::<ThresholdSchedule>().is_err());
    }

    #[test]
    fn backoff_above_threshold() {
        let mut s = dynamic(32768.0, threshold_schedule());
        let e = s.step(false, 40000);
        assert_eq!((e.action, e.scale_after), (ScaleAction::Backoff, 16384.0));
    }

    #[test]
    fn backoff_clamped_at_threshold() {
        let mut s = dynamic(8192.0, threshold_schedule());
        let e = s.step(false, 40000);
        assert_eq!((e.action, e.scale_after), (ScaleAction::ClampedToMin, 8192.0));
    }

    #[test]
    fn growth_after_interval() {
        let mut s = dynamic(8192.0, ThresholdSchedule::default());
        for it in 0..1999 {
            assert_eq!(s.step(true, it).action, ScaleAction::None);
        }
        let e = s.step(true, 1999);
        assert_eq!((e.action, e.scale_after), (ScaleAction::Growth, 16384.0));
        assert_eq!(s.steps_since_overflow(), 0);
    }

    #[test]
    fn threshold_activation_raises_scale() {
        let mut s = dynamic(1024.0, threshold_schedule());
        assert_eq!(s.step(true, 39999).action, ScaleAction::None);
        let e = s.step(true, 40000);
        assert_eq!((e.action, e.scale_after), (ScaleAction::ClampedToMin, 8192.0));
    }

    #[test]
    fn constant_never_moves() {
        let mut s = LossScaler::constant(100.0).unwrap();
        for it in 0..50 {
            let e = s.step(it % 3 == 0, it);
            assert_eq!((e.action, e.scale_after), (ScaleAction::None, 100.0));
        }
        assert_eq!(s.events().len(), 50);
    }

    #[test]
    fn rejects_non_power_of_two() {
        let cfg = |f: fn(&mut BackoffConfig)| {
            let mut c = BackoffConfig::default();
            f(&mut c);
            LossScaler::dynamic(c)
        };
        assert!(cfg(|c| c.initial_scale = 10000.0).is_err());
        assert!(cfg(|c| c.backoff_factor = 0.7).is_err());
        assert!(cfg(|c| c.backoff_factor = 2.0).is_err());
        assert!(cfg(|c| c.growth_factor = 0.5).is_err());
        assert!(cfg(|c| c.growth_interval = 0).is_err());
    }

    #[test]
    fn events_csv_format() {
        let mut s = dynamic(4.0, ThresholdSchedule::default());
        s.step(false, 0);
        s.step(true, 1);
        assert_eq!(s.events_csv(), "iteration,action,scale_after\n0,backoff,2\n1,none,2\n");
    }

    proptest! {
        #[test]
        fn scale_respects_threshold_and_stays_pow2(
            trace in proptest::collection::vec(any::<bool>(), 1..400),
            init_exp in 0i32..20,
            interval in 1u64..20,
        ) {
            let schedule = ThresholdSchedule::new(vec![(40, 8192.0), (150, 32768.0)]).unwrap();
            let mut s = LossScaler::dynamic(BackoffConfig {
                initial_scale: 2f32.powi(init_exp),
                growth_interval: interval,
                schedule: schedule.clone(),
                ..BackoffConfig::default()
            }).unwrap();
            let mut replay = s.clone();
            for (it, &finite) in trace.iter().enumerate() {
                let e = s.step(finite, it as u64);
                prop_assert!(e.scale_after >= schedule.at(it as u64));
                prop_assert!(is_pow2(e.scale_after));
            }
            for (it, &finite) in trace.iter().enumerate() {
                replay.step(finite, it as u64);
            }
            prop_assert_eq!(replay.events(), s.events());
        }
    }
}
