//! Slot durations and the time-accounting rule shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three possible outcomes of a single slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotOutcome {
    /// No tag replied.
    Idle,
    /// Exactly one tag replied and was identified.
    Success,
    /// Two or more tags replied at once.
    Collision,
}

impl SlotOutcome {
    /// Classifies a slot by how many tags picked it.
    pub fn from_occupancy(tags: u32) -> Self {
        match tags {
            0 => SlotOutcome::Idle,
            1 => SlotOutcome::Success,
            _ => SlotOutcome::Collision,
        }
    }
}

/// Durations, in seconds, of idle, success and collision slots.
///
/// Command and guard-time overhead is folded into each duration. No
/// ordering between the three is enforced; sweeps over `t_collision / t_idle`
/// pass through 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingProfile {
    pub t_idle: f64,
    pub t_success: f64,
    pub t_collision: f64,
}

impl TimingProfile {
    /// Default profile: 0.6 ms idle, 1.5 ms success, 0.9 ms collision
    /// (`T_C / T_E = 1.5`).
    pub const DEFAULT: TimingProfile = TimingProfile {
        t_idle: 0.6e-3,
        t_success: 1.5e-3,
        t_collision: 0.9e-3,
    };

    /// Gen2-like profile with a short idle slot: 0.3 ms idle, 1.5 ms
    /// success, 0.9 ms collision (`T_C / T_E = 3`).
    pub const SHORT_IDLE: TimingProfile = TimingProfile {
        t_idle: 0.3e-3,
        t_success: 1.5e-3,
        t_collision: 0.9e-3,
    };

    /// All three slot types take the same time; slot throughput and time
    /// efficiency coincide.
    pub const UNIFORM: TimingProfile = TimingProfile {
        t_idle: 1.0,
        t_success: 1.0,
        t_collision: 1.0,
    };

    pub fn new(t_idle: f64, t_success: f64, t_collision: f64) -> Result<Self> {
        let profile = TimingProfile {
            t_idle,
            t_success,
            t_collision,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Keeps `t_success` and `t_collision`, and sets `t_idle` so that
    /// `t_collision / t_idle == ratio`.
    pub fn with_collision_idle_ratio(&self, ratio: f64) -> Result<Self> {
        if !(ratio.is_finite() && ratio > 0.0) {
            return Err(Error::InvalidProfile(format!(
                "t_collision/t_idle ratio must be positive and finite, got {ratio}"
            )));
        }
        TimingProfile::new(self.t_collision / ratio, self.t_success, self.t_collision)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t_idle", self.t_idle),
            ("t_success", self.t_success),
            ("t_collision", self.t_collision),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidProfile(format!(
                    "{name} must be strictly positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Duration of a single slot with the given outcome.
    pub fn slot_duration(&self, outcome: SlotOutcome) -> f64 {
        match outcome {
            SlotOutcome::Idle => self.t_idle,
            SlotOutcome::Success => self.t_success,
            SlotOutcome::Collision => self.t_collision,
        }
    }

    /// Total modelled time of `idle` idle, `success` success and
    /// `collision` collision slots.
    pub fn total_time(&self, idle: u64, success: u64, collision: u64) -> f64 {
        self.t_success * success as f64
            + self.t_idle * idle as f64
            + self.t_collision * collision as f64
    }
}

impl Default for TimingProfile {
    fn default() -> Self {
        TimingProfile::DEFAULT
    }
}

/// Free-function form of [`TimingProfile::slot_duration`].
pub fn slot_duration(outcome: SlotOutcome, profile: &TimingProfile) -> f64 {
    profile.slot_duration(outcome)
}
