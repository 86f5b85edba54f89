//! Slotted-Aloha inventory kernel and Monte Carlo aggregation.
//!
//! Tags are anonymous. At the start of every frame, including one that
//! replaces an abandoned frame, each unread tag picks a slot uniformly at
//! random. Slots are revealed in order and a singleton slot identifies its
//! tag, which then stays silent.
//!
//! Slot choices are sampled lazily rather than stored. Given `m` tags not
//! yet placed in slots `0..j` of an `F`-slot frame, slot `j` holds
//! `Binomial(m, 1 / (F - j))` of them. Sampling slot after slot this way
//! yields exactly the multinomial occupancy of independent uniform choices,
//! while letting the slots an early restart discards cost nothing.
//!
//! Randomness comes from ChaCha8 (`rand_chacha` 0.3, pinned). Trial `i` of
//! a Monte Carlo run with master seed `m` is seeded with
//! `ChaCha8Rng::seed_from_u64(m ^ i)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{measured_time_efficiency, FrameStats, F_MAX};
use crate::protocols::{ReaderAction, Strategy, StrategyKind};
use crate::timing::{SlotOutcome, TimingProfile};

/// Hard cap on slots per inventory round.
pub const SLOT_CAP: u64 = 1_000_000;

/// Human-readable statement of how trial seeds are derived.
pub const SEED_RULE: &str = "chacha8(seed_from_u64(master ^ trial))";

/// Seed of trial `trial` under master seed `master`.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    master ^ trial
}

/// How a frame ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameEnd {
    NewFrame(u32),
    Terminate,
}

impl FrameEnd {
    pub fn label(&self) -> String {
        match self {
            FrameEnd::NewFrame(f) => format!("new_frame:{f}"),
            FrameEnd::Terminate => "terminate".to_string(),
        }
    }
}

/// One executed (possibly truncated) frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub size: u32,
    pub slots_executed: u32,
    pub stats: FrameStats,
    pub end: FrameEnd,
    pub n_est: Option<u32>,
    pub f_opt: Option<u32>,
}

/// Outcome of one inventory round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub n_tags: u32,
    pub totals: FrameStats,
    pub total_time: f64,
    pub tags_identified: u32,
    pub frames: Vec<FrameRecord>,
}

impl RunResult {
    /// Successes per executed slot.
    pub fn throughput(&self) -> f64 {
        self.totals.throughput().unwrap_or(0.0)
    }

    pub fn time_efficiency(&self, profile: &TimingProfile) -> f64 {
        measured_time_efficiency(&self.totals, profile).unwrap_or(0.0)
    }

    /// Mean time per identified tag, in milliseconds.
    pub fn ms_per_tag(&self) -> f64 {
        if self.n_tags == 0 {
            0.0
        } else {
            1e3 * self.total_time / self.n_tags as f64
        }
    }
}

/// Unread tags and the slot choices of the running frame.
#[derive(Debug, Clone)]
pub struct TagPopulation {
    unread: u32,
    frame: u32,
    next_slot: u32,
    /// Unread tags whose chosen slot has not been revealed yet.
    pending: u32,
}

impl TagPopulation {
    pub fn new(n_tags: u32) -> Self {
        TagPopulation {
            unread: n_tags,
            frame: 0,
            next_slot: 0,
            pending: 0,
        }
    }

    pub fn unread(&self) -> u32 {
        self.unread
    }

    /// Opens a frame of `frame` slots: every unread tag picks a slot anew.
    pub fn draw(&mut self, frame: u32) {
        assert!(frame > 0, "frame must have at least one slot");
        self.frame = frame;
        self.next_slot = 0;
        self.pending = self.unread;
    }

    /// Executes the next slot of the current frame and returns how many
    /// tags replied. A singleton reply is read and muted.
    pub fn reveal_next<R: Rng>(&mut self, rng: &mut R) -> u32 {
        assert!(self.next_slot < self.frame, "frame exhausted");
        let slots_left = self.frame - self.next_slot;
        let k = if self.pending == 0 {
            0
        } else if slots_left == 1 {
            self.pending
        } else {
            let p = 1.0 / slots_left as f64;
            Binomial::new(self.pending as u64, p)
                .expect("valid binomial parameters")
                .sample(rng) as u32
        };
        self.next_slot += 1;
        self.pending -= k;
        if k == 1 {
            self.unread -= 1;
        }
        k
    }
}

/// Runs one inventory round of `n_tags` tags under `strategy`.
pub fn simulate_inventory(
    n_tags: u32,
    strategy: &mut dyn Strategy,
    profile: &TimingProfile,
    seed: u64,
) -> Result<RunResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tags = TagPopulation::new(n_tags);
    let mut frames = Vec::new();
    let mut totals = FrameStats::default();
    let mut frame = strategy.begin();
    let mut executed: u64 = 0;

    'frames: loop {
        if frame == 0 || frame > F_MAX {
            return Err(Error::InvalidFrame(format!(
                "strategy '{}' requested a {frame}-slot frame",
                strategy.name()
            )));
        }
        tags.draw(frame);
        let size = frame;
        let mut stats = FrameStats::default();
        for index in 0..size {
            if executed >= SLOT_CAP {
                return Err(Error::SlotCapExceeded {
                    cap: SLOT_CAP,
                    seed,
                    unread: tags.unread(),
                });
            }
            let outcome = SlotOutcome::from_occupancy(tags.reveal_next(&mut rng));
            stats.record(outcome);
            executed += 1;
            let action = strategy.on_slot(outcome);
            let end = match action {
                ReaderAction::ContinueSlot => continue,
                ReaderAction::StartNewFrame(f) => FrameEnd::NewFrame(f),
                ReaderAction::Terminate => FrameEnd::Terminate,
            };
            let estimate = strategy.last_estimate();
            frames.push(FrameRecord {
                size,
                slots_executed: index + 1,
                stats,
                end,
                n_est: estimate.map(|e| e.n_est),
                f_opt: estimate.map(|e| e.f_opt),
            });
            totals += stats;
            match end {
                FrameEnd::NewFrame(f) => {
                    frame = f;
                    continue 'frames;
                }
                FrameEnd::Terminate => break 'frames,
            }
        }
        return Err(Error::ProtocolViolation {
            strategy: strategy.name().to_string(),
            frame,
        });
    }

    Ok(RunResult {
        n_tags,
        totals,
        total_time: totals.total_time(profile),
        tags_identified: n_tags - tags.unread(),
        frames,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

impl MetricSummary {
    /// Sequential reduction in the given order; `std` is 0 for one sample.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return MetricSummary {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MetricSummary { mean, std }
    }
}

/// One Monte Carlo sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSpec {
    pub strategy: StrategyKind,
    pub n_tags: u32,
    pub f_ini: u32,
    pub profile: TimingProfile,
    pub trials: u32,
    pub master_seed: u64,
}

/// Aggregated metrics of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub spec: MonteCarloSpec,
    pub trials: u32,
    pub throughput: MetricSummary,
    pub time_efficiency: MetricSummary,
    pub ms_per_tag: MetricSummary,
    pub seed_rule: String,
    pub fingerprint: String,
}

/// Raw per-trial runs, in trial order.
pub fn run_trials(spec: &MonteCarloSpec) -> Result<Vec<RunResult>> {
    if spec.trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    // Validate once up front so configuration errors are not reported per trial.
    spec.strategy.build(spec.f_ini, spec.n_tags, &spec.profile)?;
    (0..spec.trials as u64)
        .into_par_iter()
        .map_init(
            || {
                spec.strategy
                    .build(spec.f_ini, spec.n_tags, &spec.profile)
                    .expect("validated above")
            },
            |strategy, trial| {
                simulate_inventory(
                    spec.n_tags,
                    strategy.as_mut(),
                    &spec.profile,
                    trial_seed(spec.master_seed, trial),
                )
            },
        )
        .collect()
}

/// Runs `spec.trials` independent inventories and aggregates their metrics.
pub fn run_monte_carlo(spec: &MonteCarloSpec) -> Result<AggregateResult> {
    let runs = run_trials(spec)?;
    Ok(aggregate(spec, &runs))
}

pub fn aggregate(spec: &MonteCarloSpec, runs: &[RunResult]) -> AggregateResult {
    let collect = |f: &dyn Fn(&RunResult) -> f64| runs.iter().map(f).collect::<Vec<_>>();
    AggregateResult {
        spec: *spec,
        trials: runs.len() as u32,
        throughput: MetricSummary::from_samples(&collect(&|r| r.throughput())),
        time_efficiency: MetricSummary::from_samples(&collect(&|r| r.time_efficiency(&spec.profile))),
        ms_per_tag: MetricSummary::from_samples(&collect(&|r| r.ms_per_tag())),
        seed_rule: SEED_RULE.to_string(),
        fingerprint: spec_fingerprint(spec),
    }
}

/// Short hex digest identifying a sweep point's resolved configuration.
pub fn spec_fingerprint(spec: &MonteCarloSpec) -> String {
    digest(spec)
}

/// First 8 bytes of SHA-256 over the seed rule and the value's JSON form.
pub(crate) fn digest<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let canonical = serde_json::to_string(value).expect("value serialises");
    let hash = Sha256::digest(format!("{SEED_RULE}\n{canonical}").as_bytes());
    hex::encode(&hash[..8])
}
