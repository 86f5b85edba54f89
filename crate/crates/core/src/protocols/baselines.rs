use serde::{Deserialize, Serialize};

use super::{Estimate, QParams, ReaderAction, Strategy};
use crate::error::{Error, Result};
use crate::optimizer::{FrameStats, F_MAX, Q_MAX};
use crate::timing::SlotOutcome;

/// Frame size policy of [`FixedFsa`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedFrame {
    /// `max(f_ini, n_tags)`, capped at `F_MAX`.
    Auto,
    Size(u32),
}

impl FixedFrame {
    pub fn resolve(self, f_ini: u32, n_tags: u32) -> u32 {
        match self {
            FixedFrame::Auto => f_ini.max(n_tags).clamp(1, F_MAX),
            FixedFrame::Size(f) => f.clamp(1, F_MAX),
        }
    }
}

/// Classic framed slotted Aloha: every frame has the same size.
#[derive(Debug, Clone)]
pub struct FixedFsa {
    frame: u32,
    slot_index: u32,
    stats: FrameStats,
}

impl FixedFsa {
    pub fn new(frame: u32) -> Self {
        FixedFsa {
            frame,
            slot_index: 0,
            stats: FrameStats::default(),
        }
    }
}

impl Strategy for FixedFsa {
    fn name(&self) -> &'static str {
        "fixed"
    }

    fn begin(&mut self) -> u32 {
        self.slot_index = 0;
        self.stats = FrameStats::default();
        self.frame
    }

    fn on_slot(&mut self, outcome: SlotOutcome) -> ReaderAction {
        self.stats.record(outcome);
        self.slot_index += 1;
        if self.slot_index < self.frame {
            return ReaderAction::ContinueSlot;
        }
        let collided = self.stats.collision > 0;
        self.begin();
        if collided {
            ReaderAction::StartNewFrame(self.frame)
        } else {
            ReaderAction::Terminate
        }
    }
}

/// Backlog per collision slot in Schoute's estimate.
pub const SCHOUTE_BACKLOG_FACTOR: f64 = 2.39;

/// Frame-by-frame DFSA: the next frame is sized to Schoute's backlog
/// estimate `2.39 * C` of the frame that just ended.
#[derive(Debug, Clone)]
pub struct SchouteDfsa {
    f_ini: u32,
    frame: u32,
    slot_index: u32,
    stats: FrameStats,
    latest: Option<Estimate>,
}

impl SchouteDfsa {
    pub fn new(f_ini: u32) -> Self {
        SchouteDfsa {
            f_ini,
            frame: f_ini,
            slot_index: 0,
            stats: FrameStats::default(),
            latest: None,
        }
    }

    /// Next frame size for a frame that ended with `collisions` collisions.
    pub fn next_frame(collisions: u64) -> u32 {
        (SCHOUTE_BACKLOG_FACTOR * collisions as f64)
            .round()
            .clamp(1.0, F_MAX as f64) as u32
    }
}

impl Strategy for SchouteDfsa {
    fn name(&self) -> &'static str {
        "schoute"
    }

    fn begin(&mut self) -> u32 {
        self.frame = self.f_ini;
        self.slot_index = 0;
        self.stats = FrameStats::default();
        self.latest = None;
        self.f_ini
    }

    fn on_slot(&mut self, outcome: SlotOutcome) -> ReaderAction {
        self.stats.record(outcome);
        self.slot_index += 1;
        if self.slot_index < self.frame {
            return ReaderAction::ContinueSlot;
        }
        let collisions = self.stats.collision;
        self.slot_index = 0;
        self.stats = FrameStats::default();
        if collisions == 0 {
            return ReaderAction::Terminate;
        }
        let next = Self::next_frame(collisions);
        self.latest = Some(Estimate {
            n_est: next,
            n_unread: next,
            f_opt: next,
        });
        self.frame = next;
        ReaderAction::StartNewFrame(next)
    }

    fn last_estimate(&self) -> Option<Estimate> {
        self.latest
    }
}

/// Slot-by-slot Gen2 Q-algorithm.
///
/// A floating-point exponent `qfp` rises by `c_coef` after a collision,
/// falls by `c_coef` after an idle slot and is kept in `[0, 15]`. Whenever
/// `round(qfp)` differs from the exponent of the running frame, a new frame
/// of `2^round(qfp)` slots begins.
#[derive(Debug, Clone)]
pub struct QAlgorithm {
    params: QParams,
    f_ini: u32,
    qfp: f64,
    q: u32,
    frame: u32,
    slot_index: u32,
    stats: FrameStats,
}

impl QAlgorithm {
    pub fn new(params: QParams, f_ini: u32) -> Result<Self> {
        if !(params.c_coef.is_finite() && params.c_coef > 0.0 && params.c_coef <= 1.0) {
            return Err(Error::config("qalgo.c_coef", "must be in (0, 1]"));
        }
        let mut q = QAlgorithm {
            params,
            f_ini,
            qfp: 0.0,
            q: 0,
            frame: f_ini,
            slot_index: 0,
            stats: FrameStats::default(),
        };
        q.begin();
        Ok(q)
    }

    pub fn qfp(&self) -> f64 {
        self.qfp
    }

    pub fn q(&self) -> u32 {
        self.q
    }

    fn open_frame(&mut self, q: u32) -> ReaderAction {
        self.q = q;
        self.frame = 1 << q;
        self.slot_index = 0;
        self.stats = FrameStats::default();
        ReaderAction::StartNewFrame(self.frame)
    }
}

impl Strategy for QAlgorithm {
    fn name(&self) -> &'static str {
        "qalgo"
    }

    fn begin(&mut self) -> u32 {
        self.qfp = (self.f_ini as f64).log2().clamp(0.0, Q_MAX as f64);
        self.q = self.qfp.round() as u32;
        self.frame = self.f_ini;
        self.slot_index = 0;
        self.stats = FrameStats::default();
        self.f_ini
    }

    fn on_slot(&mut self, outcome: SlotOutcome) -> ReaderAction {
        self.stats.record(outcome);
        self.slot_index += 1;
        let step = match outcome {
            SlotOutcome::Idle => -self.params.c_coef,
            SlotOutcome::Success => 0.0,
            SlotOutcome::Collision => self.params.c_coef,
        };
        self.qfp = (self.qfp + step).clamp(0.0, Q_MAX as f64);

        let at_end = self.slot_index >= self.frame;
        if at_end && self.stats.collision == 0 {
            return ReaderAction::Terminate;
        }
        let q = self.qfp.round() as u32;
        if q != self.q || at_end {
            self.open_frame(q)
        } else {
            ReaderAction::ContinueSlot
        }
    }
}
