//! Shared domain types used across the engine.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque identifier of one candidate configuration.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ConfigId(pub u32);

impl std::fmt::Display for ConfigId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Lifecycle of a configuration. Transitions are one-way: a configuration is
/// either dropped by a halving decision or promoted to the final survivor,
/// never resurrected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigStatus {
    Active,
    Dropped,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Exploratory,
    Thorough,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricPolarity {
    HigherIsBetter,
    LowerIsBetter,
}

#[derive(Debug, Error)]
pub enum TypeError {
    #[error("invalid status transition {from:?} -> {to:?} for config {id}")]
    StatusTransition {
        id: ConfigId,
        from: ConfigStatus,
        to: ConfigStatus,
    },
    #[error("epoch energy record needs at least one power sample")]
    NoSamples,
    #[error("power samples must be positive, found {0}")]
    NonPositiveSample(f64),
    #[error("epoch duration must be positive, found {0}")]
    NonPositiveDuration(f64),
}

/// One candidate configuration: a batch size paired with the learning rate
/// currently selected for it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HyperConfig {
    pub config_id: ConfigId,
    pub batch_size: usize,
    pub current_lr: f64,
    pub status: ConfigStatus,
    pub dropped_in_round: Option<u32>,
}

impl HyperConfig {
    pub fn new(config_id: ConfigId, batch_size: usize, initial_lr: f64) -> Self {
        assert!(batch_size >= 1, "batch size must be >= 1");
        assert!(initial_lr > 0.0, "learning rate must be positive");
        Self {
            config_id,
            batch_size,
            current_lr: initial_lr,
            status: ConfigStatus::Active,
            dropped_in_round: None,
        }
    }

    pub fn is_active(&self) -> bool {
        matches!(self.status, ConfigStatus::Active | ConfigStatus::Final)
    }

    pub fn mark_dropped(&mut self, round: u32) -> Result<(), TypeError> {
        if self.status != ConfigStatus::Active {
            return Err(TypeError::StatusTransition {
                id: self.config_id,
                from: self.status,
                to: ConfigStatus::Dropped,
            });
        }
        self.status = ConfigStatus::Dropped;
        self.dropped_in_round = Some(round);
        Ok(())
    }

    pub fn mark_final(&mut self) -> Result<(), TypeError> {
        if self.status != ConfigStatus::Active {
            return Err(TypeError::StatusTransition {
                id: self.config_id,
                from: self.status,
                to: ConfigStatus::Final,
            });
        }
        self.status = ConfigStatus::Final;
        Ok(())
    }
}

/// Power samples and derived watt-hours for one epoch of one configuration.
///
/// The energy is always `mean(power_samples) * duration_s / 3600`; the
/// constructor computes it so the invariant holds by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochEnergyRecord {
    pub config_id: ConfigId,
    pub round: u32,
    pub epoch_index: u32,
    pub mode: TrainMode,
    pub power_samples: Vec<f64>,
    pub duration_s: f64,
    pub energy_wh: f64,
}

impl EpochEnergyRecord {
    pub fn new(
        config_id: ConfigId,
        round: u32,
        epoch_index: u32,
        mode: TrainMode,
        power_samples: Vec<f64>,
        duration_s: f64,
    ) -> Result<Self, TypeError> {
        if power_samples.is_empty() {
            return Err(TypeError::NoSamples);
        }
        if let Some(&bad) = power_samples.iter().find(|s| !(**s > 0.0)) {
            return Err(TypeError::NonPositiveSample(bad));
        }
        if !(duration_s > 0.0) {
            return Err(TypeError::NonPositiveDuration(duration_s));
        }
        let mean = power_samples.iter().sum::<f64>() / power_samples.len() as f64;
        let energy_wh = mean * duration_s / 3600.0;
        Ok(Self {
            config_id,
            round,
            epoch_index,
            mode,
            power_samples,
            duration_s,
            energy_wh,
        })
    }

    /// Re-checks the watt-hour invariant, e.g. after deserializing.
    pub fn check(&self) -> bool {
        if self.power_samples.is_empty() || self.duration_s <= 0.0 {
            return false;
        }
        let mean = self.power_samples.iter().sum::<f64>() / self.power_samples.len() as f64;
        let expect = mean * self.duration_s / 3600.0;
        if expect == 0.0 {
            return self.energy_wh == 0.0;
        }
        ((self.energy_wh - expect) / expect).abs() <= 1e-9
    }
}

/// Loss observation for one learning-rate candidate during exploration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossPoint {
    pub lr: f64,
    #[serde(with = "crate::ledger::json_f64")]
    pub mean_loss: f64,
}

/// Outcome of the curvature analysis attached to an exploratory epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplorationOutcome {
    #[serde(with = "crate::ledger::json_f64_vec")]
    pub curvature: Vec<f64>,
    /// Inclusive grid-index range of the selected stable window.
    pub window: Option<(usize, usize)>,
    /// True when no finite window existed and the selection fell back to the
    /// grid minimum.
    pub fallback: bool,
}

/// Task metric and exploration trace for one epoch of one configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetricsRecord {
    pub config_id: ConfigId,
    pub round: u32,
    pub epoch_index: u32,
    pub mode: TrainMode,
    pub performance: f64,
    pub metric_polarity: MetricPolarity,
    pub selected_lr: f64,
    /// `(lr, mean loss)` pairs from cyclical exploration; empty in thorough mode.
    pub loss_trace: Vec<LossPoint>,
    pub explore: Option<ExplorationOutcome>,
}

/// Epoch allocation for the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunBudget {
    pub max_rounds: u32,
    pub exploratory_epochs_per_round: u32,
    pub thorough_epochs_per_round: u32,
    pub final_thorough_epochs: u32,
    pub exploration_fraction: f64,
    pub total_epoch_cap: u32,
}

impl RunBudget {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_rounds < 1 {
            return Err("max_rounds must be >= 1".into());
        }
        if self.exploratory_epochs_per_round < 1
            || self.thorough_epochs_per_round < 1
            || self.final_thorough_epochs < 1
        {
            return Err("epoch counts must be >= 1".into());
        }
        if !(self.exploration_fraction > 0.0 && self.exploration_fraction <= 1.0) {
            return Err(format!(
                "exploration_fraction must lie in (0, 1], found {}",
                self.exploration_fraction
            ));
        }
        if self.total_epoch_cap < 1 {
            return Err("total_epoch_cap must be >= 1".into());
        }
        Ok(())
    }
}
