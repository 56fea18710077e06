//! Energy-aware hyperparameter optimization built on successive halving.
//!
//! The engine ("SM2") searches over batch-size configurations, measuring three
//! attributes per configuration and round:
//!
//! - **Performance** of the model on a held-out split,
//! - **Energy per epoch** in watt-hours, obtained through a pluggable power
//!   monitor (the default backend is a deterministic simulated GPU model),
//! - the **stable learning rate** selected by cyclical exploration and
//!   loss-curvature analysis.
//!
//! The attributes are min-max normalized across the surviving configurations
//! and merged by the scalar objective `alpha * P + (1 - alpha) * (beta * E +
//! (1 - beta) * LR)`. After each exploratory phase the lower-scoring half of
//! the configurations is dropped until one remains; that configuration then
//! receives extended thorough training with per-round learning-rate
//! re-exploration.
//!
//! Every epoch, measurement and decision is appended to a JSON-lines run
//! ledger from which all reports, totals and replays derive. Execution is
//! strictly sequential: the power interface cannot attribute energy across
//! concurrent training activities, so exactly one trainer runs at a time.

#![forbid(unsafe_code)]

pub mod config;
pub mod dataio;
pub mod energy;
pub mod ledger;
pub mod lr_explorer;
pub mod objective;
pub mod report;
pub mod rng;
pub mod scheduler;
pub mod trainer;
pub mod types;

pub use config::RunConfigFile;
pub use ledger::{LedgerEvent, RunLedger};
pub use scheduler::{run, RunOutcome};
pub use types::{ConfigId, HyperConfig, RunBudget, TrainMode};
