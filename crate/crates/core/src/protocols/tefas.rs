use super::{Estimate, ReaderAction, Strategy, TefasParams};
use crate::error::{Error, Result};
use crate::estimation::{recommended_subframe, MapEstimator, SubFrameObservation};
use crate::optimizer::{
    frame_exponent, measured_time_efficiency, optimal_frame_size, optimal_lambda,
    predicted_time_efficiency, FrameStats, LoadFactor, F_MAX,
};
use crate::timing::{SlotOutcome, TimingProfile};

/// Per-frame bookkeeping of [`Tefas`].
#[derive(Debug, Clone, PartialEq)]
pub struct TefasState {
    pub f_curr: u32,
    /// Estimation cadence: the reader re-estimates at every multiple of it.
    pub f_sub: u32,
    /// Slots of the current frame already observed.
    pub slot_index: u32,
    pub stats: FrameStats,
    pub threshold: f64,
    pub successes_total: u64,
}

impl TefasState {
    fn new(f_curr: u32, multiply: f64) -> Self {
        TefasState {
            f_curr,
            f_sub: recommended_subframe(f_curr),
            slot_index: 0,
            stats: FrameStats::default(),
            threshold: multiply * frame_exponent(f_curr) as f64,
            successes_total: 0,
        }
    }
}

/// Time-efficient frame adjustment.
///
/// Within a frame the reader counts idle, success and collision slots. At
/// every multiple of the recommended sub-frame length, or earlier when the
/// idle/collision balance drifts past the threshold, it estimates the
/// backlog from the slots seen so far, derives the frame size that maximises
/// time efficiency for the timing profile, and restarts with that size if
/// the predicted efficiency beats what the current frame has achieved. A
/// frame that runs to its end without a collision ends the inventory.
#[derive(Debug, Clone)]
pub struct Tefas {
    params: TefasParams,
    profile: TimingProfile,
    f_ini: u32,
    lambda_opt: LoadFactor,
    estimator: MapEstimator,
    state: TefasState,
    latest: Option<Estimate>,
}

impl Tefas {
    pub fn new(params: TefasParams, f_ini: u32, profile: &TimingProfile) -> Result<Self> {
        if !(params.multiply.is_finite() && params.multiply >= 0.0) {
            return Err(Error::config("tefas.multiply", "must be finite and non-negative"));
        }
        for (key, v) in [("tefas.coef_upper", params.coef_upper), ("tefas.coef_lower", params.coef_lower)] {
            if !v.is_finite() {
                return Err(Error::config(key, "must be finite"));
            }
        }
        if params.n_max_factor < 2 {
            return Err(Error::config("tefas.nmax_factor", "must be at least 2"));
        }
        Ok(Tefas {
            params,
            profile: *profile,
            f_ini,
            lambda_opt: optimal_lambda(profile),
            estimator: MapEstimator::new(params.n_max_factor),
            state: TefasState::new(f_ini, params.multiply),
            latest: None,
        })
    }

    pub fn lambda_opt(&self) -> LoadFactor {
        self.lambda_opt
    }

    pub fn state(&self) -> &TefasState {
        &self.state
    }

    fn open_frame(&mut self, size: u32) {
        let successes = self.state.successes_total;
        self.state = TefasState::new(size, self.params.multiply);
        self.state.successes_total = successes;
    }

    fn drifted(&self) -> bool {
        let e = self.state.stats.idle as f64;
        let c = self.state.stats.collision as f64;
        let lambda = self.lambda_opt.value();
        let threshold = self.state.threshold;
        e - self.params.coef_upper * c / lambda > threshold
            || e - self.params.coef_lower * c / lambda < -threshold
    }

    /// Estimates the backlog from the slots observed so far in this frame.
    fn estimate(&mut self) -> Estimate {
        let stats = self.state.stats;
        let obs = SubFrameObservation {
            e: stats.idle as u32,
            s: stats.success as u32,
            c: stats.collision as u32,
            f_sub: self.state.slot_index,
            f_full: self.state.f_curr,
        };
        let n_est = self.estimator.estimate(&obs);
        let n_unread = (obs.s + 2 * obs.c).max(n_est.saturating_sub(obs.s));
        let f_opt = optimal_frame_size(n_unread as f64, self.lambda_opt, self.params.rounding);
        let estimate = Estimate {
            n_est,
            n_unread,
            f_opt,
        };
        self.latest = Some(estimate);
        estimate
    }

    fn restart(&mut self, size: u32) -> ReaderAction {
        debug_assert!((1..=F_MAX).contains(&size));
        self.open_frame(size);
        ReaderAction::StartNewFrame(size)
    }
}

impl Strategy for Tefas {
    fn name(&self) -> &'static str {
        "tefas"
    }

    fn begin(&mut self) -> u32 {
        self.state = TefasState::new(self.f_ini, self.params.multiply);
        self.latest = None;
        self.f_ini
    }

    fn on_slot(&mut self, outcome: SlotOutcome) -> ReaderAction {
        self.state.stats.record(outcome);
        self.state.slot_index += 1;
        if outcome == SlotOutcome::Success {
            self.state.successes_total += 1;
        }
        let i = self.state.slot_index;
        let at_end = i >= self.state.f_curr;

        // A full frame without collisions leaves nobody unread.
        if at_end && self.state.stats.collision == 0 {
            return ReaderAction::Terminate;
        }

        let on_cadence = i.is_multiple_of(self.state.f_sub);
        if !(at_end || on_cadence || self.drifted()) {
            return ReaderAction::ContinueSlot;
        }

        let estimate = self.estimate();
        if at_end {
            return self.restart(estimate.f_opt);
        }

        let achieved = measured_time_efficiency(&self.state.stats, &self.profile)
            .expect("at least one slot observed");
        let next_load = LoadFactor::new(estimate.n_unread as f64 / estimate.f_opt as f64)
            .expect("non-negative load");
        let predicted = predicted_time_efficiency(next_load, &self.profile);
        if achieved < predicted {
            self.restart(estimate.f_opt)
        } else {
            ReaderAction::ContinueSlot
        }
    }

    fn last_estimate(&self) -> Option<Estimate> {
        self.latest
    }
}
