//! Time-efficient frame adjustment for framed-slotted-Aloha RFID readers:
//! sub-frame MAP backlog estimation, time-efficiency-optimal frame sizing,
//! baseline anti-collision strategies and a seeded Monte Carlo simulator.

pub mod error;
pub mod estimation;
pub mod experiment;
pub mod optimizer;
pub mod protocols;
pub mod sim;
pub mod timing;

pub use error::{Error, Result};
pub use estimation::{MapEstimator, MapTable, SubFrameObservation};
pub use experiment::{ExperimentConfig, OutputFormat, ResultRow};
pub use optimizer::{FrameStats, LoadFactor, Rounding, F_MAX, Q_MAX};
pub use protocols::{ReaderAction, Strategy, StrategyKind, TefasParams};
pub use sim::{AggregateResult, MonteCarloSpec, RunResult};
pub use timing::{SlotOutcome, TimingProfile};
