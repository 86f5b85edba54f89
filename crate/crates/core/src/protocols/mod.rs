//! Reader-side anti-collision strategies.
//!
//! Every strategy is a slot-driven state machine: the simulator reveals one
//! slot outcome at a time and the strategy answers with a [`ReaderAction`].
//! A strategy owns its frame bookkeeping; when it answers
//! [`ReaderAction::StartNewFrame`] it has already reset itself for the new
//! frame.

mod baselines;
mod tefas;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{Rounding, F_MAX};
use crate::timing::{SlotOutcome, TimingProfile};

pub use baselines::{FixedFrame, FixedFsa, QAlgorithm, SchouteDfsa, SCHOUTE_BACKLOG_FACTOR};
pub use tefas::{Tefas, TefasState};

/// What the reader does after a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReaderAction {
    /// Go on to the next slot of the current frame.
    ContinueSlot,
    /// Abandon the rest of the current frame and open one of the given size.
    StartNewFrame(u32),
    /// Inventory round finished.
    Terminate,
}

/// Backlog estimate behind a frame-size decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Estimate {
    /// Estimated tags at the start of the current frame.
    pub n_est: u32,
    /// Estimated tags still unread.
    pub n_unread: u32,
    /// Frame size derived from the estimate.
    pub f_opt: u32,
}

/// Common contract of every reader strategy.
pub trait Strategy: Send {
    fn name(&self) -> &'static str;

    /// Resets all per-inventory state and returns the first frame size.
    fn begin(&mut self) -> u32;

    /// Consumes the outcome of the next slot of the current frame.
    fn on_slot(&mut self, outcome: SlotOutcome) -> ReaderAction;

    /// Estimate computed most recently in the current or just-closed frame.
    fn last_estimate(&self) -> Option<Estimate> {
        None
    }
}

/// TEFAS tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TefasParams {
    /// `threshold = multiply * round(log2 F_curr)`.
    pub multiply: f64,
    /// Collision weight of the "too many idles" test.
    pub coef_upper: f64,
    /// Collision weight of the "too many collisions" test.
    pub coef_lower: f64,
    pub rounding: Rounding,
    /// Estimator search cap, as a multiple of the observed sub-frame length.
    pub n_max_factor: u32,
}

impl Default for TefasParams {
    fn default() -> Self {
        TefasParams {
            multiply: 4.0,
            coef_upper: 3.2,
            coef_lower: 0.6,
            rounding: Rounding::Integer,
            n_max_factor: crate::estimation::DEFAULT_NMAX_FACTOR,
        }
    }
}

/// Q-algorithm tuning knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub c_coef: f64,
}

impl Default for QParams {
    fn default() -> Self {
        QParams { c_coef: 0.3 }
    }
}

/// A strategy together with its parameters, able to build fresh instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StrategyKind {
    Tefas(TefasParams),
    Fixed(FixedFrame),
    Schoute,
    QAlgo(QParams),
}

impl StrategyKind {
    pub const NAMES: [&'static str; 4] = ["tefas", "fixed", "schoute", "qalgo"];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Tefas(_) => "tefas",
            StrategyKind::Fixed(_) => "fixed",
            StrategyKind::Schoute => "schoute",
            StrategyKind::QAlgo(_) => "qalgo",
        }
    }

    /// Instantiates the strategy for an inventory of `n_tags` tags starting
    /// with a frame of `f_ini` slots.
    pub fn build(&self, f_ini: u32, n_tags: u32, profile: &TimingProfile) -> Result<Box<dyn Strategy>> {
        if f_ini == 0 || f_ini > F_MAX {
            return Err(Error::InvalidFrame(format!(
                "initial frame size must be in [1, {F_MAX}], got {f_ini}"
            )));
        }
        profile.validate()?;
        Ok(match *self {
            StrategyKind::Tefas(params) => Box::new(Tefas::new(params, f_ini, profile)?),
            StrategyKind::Fixed(frame) => Box::new(FixedFsa::new(frame.resolve(f_ini, n_tags))),
            StrategyKind::Schoute => Box::new(SchouteDfsa::new(f_ini)),
            StrategyKind::QAlgo(params) => Box::new(QAlgorithm::new(params, f_ini)?),
        })
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    /// Parses a strategy name, with default parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tefas" => Ok(StrategyKind::Tefas(TefasParams::default())),
            "fixed" => Ok(StrategyKind::Fixed(FixedFrame::Auto)),
            "schoute" => Ok(StrategyKind::Schoute),
            "qalgo" => Ok(StrategyKind::QAlgo(QParams::default())),
            other => Err(Error::config(
                "strategy",
                format!("unknown strategy '{other}' (expected one of tefas, fixed, schoute, qalgo)"),
            )),
        }
    }
}
