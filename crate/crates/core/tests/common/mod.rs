//! Shared fixtures for the integration suites: a small engine setup over
//! synthetic data and scripted surrogate trainers for rigged scenarios.
//! Each test target uses a subset of these.
#![allow(dead_code)]

use sm2_core::dataio::{BatchRef, EvalSet};
use sm2_core::energy::{SimPowerModel, SimPowerMonitor};
use sm2_core::lr_explorer::LrGrid;
use sm2_core::objective::ObjectiveWeights;
use sm2_core::scheduler::{EngineConfig, PlateauRule, RunVariant, StopRule};
use sm2_core::trainer::{LrSchedule, Trainer, TrainerError, TrainerSnapshot};
use sm2_core::types::{MetricPolarity, RunBudget};

/// Engine config over the given batch candidates with a compact grid.
pub fn engine_config(batch_candidates: Vec<usize>, seed: u64) -> EngineConfig {
    let n0 = batch_candidates.len() as u32;
    let max_rounds = (n0 as f64).log2().ceil() as u32 + 2;
    EngineConfig {
        seed,
        batch_candidates,
        budget: RunBudget {
            max_rounds,
            exploratory_epochs_per_round: 1,
            thorough_epochs_per_round: 2,
            final_thorough_epochs: 3,
            exploration_fraction: 0.25,
            total_epoch_cap: 10_000,
        },
        weights: ObjectiveWeights::default(),
        grid: LrGrid { count: 8, ..Default::default() },
        window_size: 3,
        stop: StopRule {
            max_rounds,
            epoch_cap: 10_000,
            plateau: Some(PlateauRule { patience: 2, min_delta: 1e-4 }),
        },
        variant: RunVariant::Sm2,
        loader_capacity: None,
        reshuffle_per_epoch: false,
        initial_lr: 0.001,
        fingerprint: format!("test-fingerprint-{seed}"),
    }
}

pub fn noiseless_monitor() -> SimPowerMonitor {
    SimPowerMonitor::new(SimPowerModel { noise_rel: 0.0, ..Default::default() }, 0.1)
}

/// Scripted trainer for rigged scenarios: a constant held-out performance
/// and a constant training loss shared by every configuration, so
/// exploration selects identical learning rates and performance ties are
/// exact where the profile says so.
pub struct SurrogateTrainer {
    pub performance: f64,
    steps: u64,
}

impl SurrogateTrainer {
    pub fn new(performance: f64) -> Self {
        Self { performance, steps: 0 }
    }

    pub fn boxed(performance: f64) -> Box<dyn Trainer> {
        Box::new(Self::new(performance))
    }
}

impl Trainer for SurrogateTrainer {
    fn kind(&self) -> &'static str {
        "surrogate"
    }

    fn train_batches(
        &mut self,
        batches: &[BatchRef<'_>],
        lrs: &LrSchedule<'_>,
    ) -> Result<Vec<f64>, TrainerError> {
        lrs.validate(batches.len())?;
        self.steps += batches.len() as u64;
        Ok(vec![1.0; batches.len()])
    }

    fn evaluate(&self, _eval: &EvalSet) -> Result<(f64, MetricPolarity), TrainerError> {
        Ok((self.performance, MetricPolarity::HigherIsBetter))
    }

    fn snapshot(&self) -> TrainerSnapshot {
        let mut bytes = self.steps.to_le_bytes().to_vec();
        bytes.extend_from_slice(&self.performance.to_le_bytes());
        TrainerSnapshot::from_bytes(bytes)
    }

    fn restore(&mut self, snapshot: &TrainerSnapshot) -> Result<(), TrainerError> {
        let bytes = snapshot.bytes();
        self.steps = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        self.performance = f64::from_le_bytes(bytes[8..16].try_into().unwrap());
        Ok(())
    }

    fn reseed(&mut self, _seed: u64) {}
}

/// Trainer that diverges on every batch.
pub struct DivergentTrainer;

impl Trainer for DivergentTrainer {
    fn kind(&self) -> &'static str {
        "divergent"
    }

    fn train_batches(
        &mut self,
        batches: &[BatchRef<'_>],
        lrs: &LrSchedule<'_>,
    ) -> Result<Vec<f64>, TrainerError> {
        lrs.validate(batches.len())?;
        Err(TrainerError::Divergence { batch_index: 0 })
    }

    fn evaluate(&self, _eval: &EvalSet) -> Result<(f64, MetricPolarity), TrainerError> {
        Ok((0.0, MetricPolarity::HigherIsBetter))
    }

    fn snapshot(&self) -> TrainerSnapshot {
        TrainerSnapshot::from_bytes(vec![0])
    }

    fn restore(&mut self, _snapshot: &TrainerSnapshot) -> Result<(), TrainerError> {
        Ok(())
    }

    fn reseed(&mut self, _seed: u64) {}
}
