//! Power monitoring contract, watt-hour accounting and the deterministic
//! simulated GPU power model.
//!
//! Time is simulated: epoch durations are computed analytically from the
//! model's throughput curve instead of being measured on a wall clock, so
//! runs are reproducible and tests finish in milliseconds. One monitor is
//! active at a time; the engine never interleaves two configurations'
//! epochs, because total-power telemetry cannot be attributed across
//! concurrent processes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::counter_mix;
use crate::types::{ConfigId, EpochEnergyRecord, TrainMode, TypeError};

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("no power samples collected for the epoch")]
    NoSamples,
    #[error("power samples must be positive")]
    NonPositiveSample,
    #[error("duration must be positive, found {0}")]
    NonPositiveDuration(f64),
    #[error("monitor method {0} called outside start_epoch/end_epoch")]
    NoActiveEpoch(&'static str),
    #[error("start_epoch called while an epoch is already active")]
    EpochAlreadyActive,
    #[error("invalid epoch record: {0}")]
    Record(#[from] TypeError),
}

/// Mean power times hours: `(1/n) * sum(samples) * duration_s / 3600`.
pub fn energy_per_epoch(power_samples: &[f64], duration_s: f64) -> Result<f64, EnergyError> {
    if power_samples.is_empty() {
        return Err(EnergyError::NoSamples);
    }
    if power_samples.iter().any(|&s| !(s > 0.0)) {
        return Err(EnergyError::NonPositiveSample);
    }
    if !(duration_s > 0.0) {
        return Err(EnergyError::NonPositiveDuration(duration_s));
    }
    let mean = power_samples.iter().sum::<f64>() / power_samples.len() as f64;
    Ok(mean * duration_s / 3600.0)
}

/// Deterministic GPU power/throughput surrogate.
///
/// Utilization saturates at `b_sat`; power rises as `u^gamma` between idle
/// and peak, and throughput degrades linearly in utilization with factor
/// `kappa`, giving energy per epoch an interior minimum over batch size.
/// Jitter is multiplicative uniform in `[1 - noise_rel, 1 + noise_rel]`,
/// drawn from a counter-based generator: sample `i` depends only on
/// `(noise_seed, i)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimPowerModel {
    pub p_idle_w: f64,
    pub p_max_w: f64,
    pub gamma: f64,
    pub b_sat: usize,
    pub s_max: f64,
    pub kappa: f64,
    pub noise_seed: u64,
    pub noise_rel: f64,
}

impl Default for SimPowerModel {
    fn default() -> Self {
        Self {
            p_idle_w: 60.0,
            p_max_w: 300.0,
            gamma: 1.4,
            b_sat: 512,
            s_max: 20_000.0,
            kappa: 0.35,
            noise_seed: 0,
            noise_rel: 0.01,
        }
    }
}

impl SimPowerModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.p_idle_w > 0.0 && self.p_idle_w < self.p_max_w) {
            return Err(format!(
                "power model requires 0 < p_idle_w < p_max_w, found {} and {}",
                self.p_idle_w, self.p_max_w
            ));
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(format!("kappa must lie in [0, 1), found {}", self.kappa));
        }
        if !(self.gamma > 0.0) {
            return Err(format!("gamma must be positive, found {}", self.gamma));
        }
        if self.b_sat < 1 {
            return Err("b_sat must be >= 1".into());
        }
        if !(self.s_max > 0.0) {
            return Err(format!("s_max must be positive, found {}", self.s_max));
        }
        if !(0.0..1.0).contains(&self.noise_rel) {
            return Err(format!("noise_rel must lie in [0, 1), found {}", self.noise_rel));
        }
        Ok(())
    }

    pub fn utilization(&self, batch_size: usize) -> f64 {
        (batch_size as f64 / self.b_sat as f64).min(1.0)
    }

    /// Instantaneous power before jitter.
    pub fn power_noiseless(&self, batch_size: usize) -> f64 {
        let u = self.utilization(batch_size);
        self.p_idle_w + (self.p_max_w - self.p_idle_w) * u.powf(self.gamma)
    }

    /// Samples per second at the given batch size.
    pub fn throughput(&self, batch_size: usize) -> f64 {
        let u = self.utilization(batch_size);
        self.s_max * u * (1.0 - self.kappa * u)
    }

    /// Simulated wall time to process `n_samples` at `batch_size`.
    pub fn epoch_duration_s(&self, batch_size: usize, n_samples: usize) -> f64 {
        n_samples as f64 / self.throughput(batch_size)
    }

    /// One jittered power sample; `counter` indexes the draw.
    pub fn sample_power(&self, batch_size: usize, counter: u64) -> f64 {
        let base = self.power_noiseless(batch_size);
        if self.noise_rel == 0.0 {
            return base;
        }
        let u = counter_mix(self.noise_seed, counter);
        base * (1.0 + self.noise_rel * (2.0 * u - 1.0))
    }

    /// Noiseless duration and watt-hours for one epoch of `n_samples`.
    pub fn epoch_energy_noiseless(&self, batch_size: usize, n_samples: usize) -> (f64, f64) {
        let duration = self.epoch_duration_s(batch_size, n_samples);
        let energy = self.power_noiseless(batch_size) * duration / 3600.0;
        (duration, energy)
    }
}

/// Behavioral contract of a power monitor.
///
/// `start_epoch` and `end_epoch` bracket one training epoch; in between the
/// monitor must gather at least one power sample. `on_work` tells the monitor
/// that training processed samples — the simulated backend advances its clock
/// from it, a hardware backend may ignore it. `elapsed_s` is the monitor's
/// monotonically increasing clock, which also drives ledger timestamps.
pub trait PowerMonitor {
    fn poll_interval_s(&self) -> f64;
    fn start_epoch(
        &mut self,
        config_id: ConfigId,
        round: u32,
        epoch_index: u32,
        mode: TrainMode,
    ) -> Result<(), EnergyError>;
    fn on_work(&mut self, batch_size: usize, samples_processed: usize) -> Result<(), EnergyError>;
    /// Instantaneous power draw in watts.
    fn sample(&mut self) -> Result<f64, EnergyError>;
    fn end_epoch(&mut self) -> Result<EpochEnergyRecord, EnergyError>;
    fn elapsed_s(&self) -> f64;
}

struct ActiveEpoch {
    config_id: ConfigId,
    round: u32,
    epoch_index: u32,
    mode: TrainMode,
    samples: Vec<f64>,
    duration_s: f64,
    // Simulated time since the last poll tick.
    poll_phase: f64,
    last_batch_size: Option<usize>,
}

/// Simulated power monitor backed by [`SimPowerModel`].
pub struct SimPowerMonitor {
    model: SimPowerModel,
    poll_interval_s: f64,
    sample_counter: u64,
    clock_s: f64,
    active: Option<ActiveEpoch>,
}

impl SimPowerMonitor {
    pub fn new(model: SimPowerModel, poll_interval_s: f64) -> Self {
        assert!(poll_interval_s > 0.0, "poll interval must be positive");
        Self { model, poll_interval_s, sample_counter: 0, clock_s: 0.0, active: None }
    }

    pub fn model(&self) -> &SimPowerModel {
        &self.model
    }
}

impl PowerMonitor for SimPowerMonitor {
    fn poll_interval_s(&self) -> f64 {
        self.poll_interval_s
    }

    fn start_epoch(
        &mut self,
        config_id: ConfigId,
        round: u32,
        epoch_index: u32,
        mode: TrainMode,
    ) -> Result<(), EnergyError> {
        if self.active.is_some() {
            return Err(EnergyError::EpochAlreadyActive);
        }
        self.active = Some(ActiveEpoch {
            config_id,
            round,
            epoch_index,
            mode,
            samples: Vec::new(),
            duration_s: 0.0,
            poll_phase: 0.0,
            last_batch_size: None,
        });
        Ok(())
    }

    fn on_work(&mut self, batch_size: usize, samples_processed: usize) -> Result<(), EnergyError> {
        let dt = self.model.epoch_duration_s(batch_size, samples_processed);
        let epoch = self.active.as_mut().ok_or(EnergyError::NoActiveEpoch("on_work"))?;
        epoch.duration_s += dt;
        epoch.poll_phase += dt;
        epoch.last_batch_size = Some(batch_size);
        while epoch.poll_phase >= self.poll_interval_s {
            epoch.poll_phase -= self.poll_interval_s;
            epoch.samples.push(self.model.sample_power(batch_size, self.sample_counter));
            self.sample_counter += 1;
        }
        Ok(())
    }

    fn sample(&mut self) -> Result<f64, EnergyError> {
        let epoch = self.active.as_ref().ok_or(EnergyError::NoActiveEpoch("sample"))?;
        let batch = epoch.last_batch_size.ok_or(EnergyError::NoActiveEpoch("sample"))?;
        let value = self.model.sample_power(batch, self.sample_counter);
        self.sample_counter += 1;
        self.active.as_mut().unwrap().samples.push(value);
        Ok(value)
    }

    fn end_epoch(&mut self) -> Result<EpochEnergyRecord, EnergyError> {
        let mut epoch = self.active.take().ok_or(EnergyError::NoActiveEpoch("end_epoch"))?;
        if !(epoch.duration_s > 0.0) {
            return Err(EnergyError::NonPositiveDuration(epoch.duration_s));
        }
        // Short epochs may end between poll ticks; every completed epoch
        // still carries at least one sample.
        if epoch.samples.is_empty() {
            let batch = epoch.last_batch_size.expect("work recorded, duration positive");
            epoch.samples.push(self.model.sample_power(batch, self.sample_counter));
            self.sample_counter += 1;
        }
        self.clock_s += epoch.duration_s;
        Ok(EpochEnergyRecord::new(
            epoch.config_id,
            epoch.round,
            epoch.epoch_index,
            epoch.mode,
            epoch.samples,
            epoch.duration_s,
        )?)
    }

    fn elapsed_s(&self) -> f64 {
        self.clock_s
    }
}
