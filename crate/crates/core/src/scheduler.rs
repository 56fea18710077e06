//! The outer optimization loop: alternating exploratory and thorough
//! training, snapshot isolation, halving, final-config extension and stop
//! conditions.
//!
//! Each round first runs one isolated exploratory epoch per surviving
//! configuration on the exploration partition (cyclical learning-rate pass,
//! held-out evaluation, energy measurement, then state rollback — only the
//! selected learning rate survives). The lower-scoring half is dropped
//! immediately afterwards, so dropped configurations never receive the
//! round's thorough epochs. Once a single configuration remains it is marked
//! final, keeps re-exploring its learning rate each round, and its thorough
//! allocation is extended.
//!
//! Execution is strictly sequential: one trainer and one monitored epoch at
//! a time, so the measured energy is attributable per configuration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{BatchRef, DataError, Dataset, EvalSet, MicroBatchStore, OrderMode};
use crate::energy::{EnergyError, PowerMonitor};
use crate::ledger::{
    FinalSelection, HalvingDecision, HalvingEntry, LedgerError, LedgerEvent, RunHeader,
    RunLedger, TimestampedEvent, LEDGER_SCHEMA,
};
use crate::lr_explorer::{
    cyclical_losses, select_stable_lr, ExploreError, LrGrid,
};
use crate::objective::{
    halve, normalize_attributes, objective_score, ObjectiveError, ObjectiveWeights,
    RawAttributes, ScoredConfig,
};
use crate::rng::derive_seed;
use crate::trainer::{LrSchedule, Trainer, TrainerError, TrainerSnapshot};
use crate::types::{
    ConfigId, ConfigStatus, EpochMetricsRecord, ExplorationOutcome, HyperConfig, LossPoint,
    MetricPolarity, RunBudget, TrainMode,
};

const DATA_ORDER_TAG: u64 = 0x01;

/// Order seed for one epoch when per-epoch reshuffling is on. The derivation
/// uses the round, the phase and the epoch's position within the phase, so
/// every configuration sees the same order at the same point of a round.
fn epoch_order_tag(round: u32, thorough: bool, index_in_phase: u32) -> u64 {
    0x0100_0000_0000u64
        | ((round as u64) << 24)
        | ((thorough as u64) << 23)
        | index_in_phase as u64
}

fn build_store(
    cfg: &EngineConfig,
    dataset: &Dataset,
    order_tag: u64,
) -> Result<MicroBatchStore, RunError> {
    Ok(MicroBatchStore::build(
        dataset,
        &cfg.batch_candidates,
        cfg.loader_capacity,
        OrderMode::Shuffled(derive_seed(cfg.seed, order_tag)),
    )?)
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run setup: {0}")]
    Validation(String),
    #[error("every configuration diverged during round {round} exploration")]
    AllDiverged { round: u32 },
    #[error("final configuration {0} diverged during thorough training")]
    FinalDiverged(ConfigId),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Explore(#[from] ExploreError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunVariant {
    /// Full engine: exploration, halving, final extension.
    Sm2,
    /// Single-configuration thorough-only baseline.
    Vanilla,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlateauRule {
    pub patience: u32,
    pub min_delta: f64,
}

/// Stop conditions; rounds and total epochs are always armed, the plateau
/// detector optionally.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StopRule {
    pub max_rounds: u32,
    pub epoch_cap: u32,
    pub plateau: Option<PlateauRule>,
}

/// What the stop rule looks at.
#[derive(Debug, Clone, Default)]
pub struct RunHistory {
    pub rounds_completed: u32,
    pub epochs_completed: u32,
    /// Best performance per completed round, oriented so higher is better.
    pub best_perf_per_round: Vec<f64>,
    /// Round in which the final configuration came to exist.
    pub final_since: Option<u32>,
}

/// True when any armed condition fires. The plateau only counts rounds after
/// the final configuration exists.
pub fn should_stop(history: &RunHistory, rule: &StopRule) -> bool {
    if history.rounds_completed >= rule.max_rounds {
        return true;
    }
    if history.epochs_completed >= rule.epoch_cap {
        return true;
    }
    if let (Some(plateau), Some(final_since)) = (&rule.plateau, history.final_since) {
        let n = history.best_perf_per_round.len();
        let patience = plateau.patience as usize;
        if n >= patience + 1 && (n - patience - 1) as u32 >= final_since {
            let stalled = (n - patience..n).all(|i| {
                history.best_perf_per_round[i] - history.best_perf_per_round[i - 1]
                    < plateau.min_delta
            });
            if stalled {
                return true;
            }
        }
    }
    false
}

/// One round's work order.
#[derive(Debug, Clone)]
pub struct RoundPlan {
    pub round: u32,
    pub active: Vec<ConfigId>,
    pub exploratory_epochs: u32,
    pub thorough_epochs: u32,
    pub exploration_fraction: f64,
}

/// Validated engine setup; the config file front end produces one of these.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub seed: u64,
    pub batch_candidates: Vec<usize>,
    pub budget: RunBudget,
    pub weights: ObjectiveWeights,
    pub grid: LrGrid,
    pub window_size: usize,
    pub stop: StopRule,
    pub variant: RunVariant,
    pub loader_capacity: Option<usize>,
    /// Re-chunk the training order before every epoch instead of once per
    /// run. Off by default: a fixed order keeps configurations strictly
    /// comparable within a round.
    pub reshuffle_per_epoch: bool,
    /// Learning rate configurations start from; exploration replaces it
    /// before any thorough epoch. This is the training rate of the vanilla
    /// variant, which never explores.
    pub initial_lr: f64,
    /// Experiment identity digest; comparisons require equal fingerprints.
    pub fingerprint: String,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub final_config_id: ConfigId,
    pub final_snapshot: TrainerSnapshot,
    pub total_energy_wh: f64,
    pub total_epochs: u32,
    pub truncated: bool,
    pub per_round_energy_wh: Vec<f64>,
    pub final_performance: f64,
    pub final_polarity: MetricPolarity,
    pub configs: Vec<HyperConfig>,
}

struct ConfigState {
    hyper: HyperConfig,
    trainer: Box<dyn Trainer>,
    epoch_counter: u32,
    last_finite_perf: f64,
    polarity: MetricPolarity,
    diverged_thorough: bool,
}

fn oriented(perf: f64, polarity: MetricPolarity) -> f64 {
    match polarity {
        MetricPolarity::HigherIsBetter => perf,
        MetricPolarity::LowerIsBetter => -perf,
    }
}

fn validate(
    cfg: &EngineConfig,
    dataset: &Dataset,
    trainers: &[Box<dyn Trainer>],
) -> Result<(), RunError> {
    let err = |m: String| Err(RunError::Validation(m));
    if cfg.batch_candidates.is_empty() {
        return err("at least one batch candidate is required".into());
    }
    let mut seen = std::collections::BTreeSet::new();
    for &b in &cfg.batch_candidates {
        if !seen.insert(b) {
            return err(format!("duplicate batch candidate {b}"));
        }
    }
    if trainers.len() != cfg.batch_candidates.len() {
        return err(format!(
            "{} trainers provided for {} batch candidates",
            trainers.len(),
            cfg.batch_candidates.len()
        ));
    }
    cfg.budget.validate().map_err(RunError::Validation)?;
    cfg.weights.validate().map_err(|e| RunError::Validation(e.to_string()))?;
    cfg.grid.validate().map_err(|e| RunError::Validation(e.to_string()))?;
    if cfg.window_size + 2 > cfg.grid.count {
        return err(format!(
            "window_size {} needs a grid of at least {} points, found {}",
            cfg.window_size,
            cfg.window_size + 2,
            cfg.grid.count
        ));
    }
    if !(cfg.initial_lr >= cfg.grid.lr_min && cfg.initial_lr <= cfg.grid.lr_max) {
        return err(format!(
            "initial_lr {} lies outside the grid range [{}, {}]",
            cfg.initial_lr, cfg.grid.lr_min, cfg.grid.lr_max
        ));
    }
    if matches!(cfg.variant, RunVariant::Vanilla) && cfg.batch_candidates.len() != 1 {
        return err("the vanilla variant takes exactly one batch candidate".into());
    }
    if dataset.holdout_indices().is_empty() {
        return err("dataset has no held-out split for evaluation".into());
    }
    Ok(())
}

/// Runs the engine to completion.
pub fn run(
    cfg: &EngineConfig,
    dataset: &Dataset,
    trainers: Vec<Box<dyn Trainer>>,
    monitor: &mut dyn PowerMonitor,
    ledger: &mut RunLedger,
) -> Result<RunOutcome, RunError> {
    validate(cfg, dataset, &trainers)?;
    let store = build_store(cfg, dataset, DATA_ORDER_TAG)?;
    if matches!(cfg.variant, RunVariant::Sm2) {
        for &b in &cfg.batch_candidates {
            let have = store.partition_batches(b, cfg.budget.exploration_fraction);
            if have < cfg.grid.count {
                return Err(RunError::Validation(format!(
                    "batch candidate {b} yields {have} exploration batches for {} learning-rate candidates; enlarge the dataset or exploration fraction, or shrink the grid",
                    cfg.grid.count
                )));
            }
        }
    }
    let eval = dataset.eval_set();

    ledger.append(
        monitor.elapsed_s(),
        LedgerEvent::RunHeader(RunHeader {
            schema: LEDGER_SCHEMA.to_string(),
            fingerprint: cfg.fingerprint.clone(),
            variant: match cfg.variant {
                RunVariant::Sm2 => "sm2".to_string(),
                RunVariant::Vanilla => "vanilla".to_string(),
            },
            seed: cfg.seed,
            alpha: cfg.weights.alpha,
            beta: cfg.weights.beta,
        }),
    )?;

    let mut states: Vec<ConfigState> = trainers
        .into_iter()
        .zip(&cfg.batch_candidates)
        .enumerate()
        .map(|(i, (trainer, &batch))| ConfigState {
            hyper: HyperConfig::new(ConfigId(i as u32), batch, cfg.initial_lr),
            trainer,
            epoch_counter: 0,
            last_finite_perf: 0.0,
            polarity: MetricPolarity::HigherIsBetter,
            diverged_thorough: false,
        })
        .collect();

    let mut history = RunHistory::default();
    let mut per_round_energy = Vec::new();
    let mut last_scores: std::collections::BTreeMap<ConfigId, f64> = Default::default();
    let mut truncated = false;
    let mut round: u32 = 0;

    'rounds: loop {
        let active_at_start: Vec<usize> =
            (0..states.len()).filter(|&i| states[i].hyper.is_active()).collect();
        if active_at_start.len() == 1 && history.final_since.is_none() {
            let idx = active_at_start[0];
            if states[idx].hyper.status == ConfigStatus::Active {
                states[idx].hyper.mark_final().expect("active transitions to final");
            }
            history.final_since = Some(round);
        }
        let plan = RoundPlan {
            round,
            active: active_at_start.iter().map(|&i| states[i].hyper.config_id).collect(),
            exploratory_epochs: match cfg.variant {
                RunVariant::Sm2 => cfg.budget.exploratory_epochs_per_round,
                RunVariant::Vanilla => 0,
            },
            thorough_epochs: if active_at_start.len() == 1 {
                cfg.budget.final_thorough_epochs
            } else {
                cfg.budget.thorough_epochs_per_round
            },
            exploration_fraction: cfg.budget.exploration_fraction,
        };
        let mut round_energy = 0.0;
        let mut round_best: Option<f64> = None;

        // Exploratory phase, one configuration at a time.
        let mut round_attrs: Vec<RawAttributes> = Vec::new();
        if plan.exploratory_epochs > 0 {
            for &idx in &active_at_start {
                // Several exploratory epochs per round average their energy;
                // the last evaluation and selection stand.
                let mut last_raw: Option<RawAttributes> = None;
                let mut energy_sum = 0.0;
                let mut epochs_run = 0u32;
                for e in 0..plan.exploratory_epochs {
                    if history.epochs_completed >= cfg.stop.epoch_cap {
                        truncated = true;
                        per_round_energy.push(round_energy);
                        break 'rounds;
                    }
                    let epoch_store;
                    let store_ref = if cfg.reshuffle_per_epoch {
                        epoch_store =
                            build_store(cfg, dataset, epoch_order_tag(round, false, e))?;
                        &epoch_store
                    } else {
                        &store
                    };
                    let (raw, energy_wh, perf_oriented) = run_exploratory(
                        cfg, store_ref, &eval, &mut states[idx], round, monitor, ledger,
                    )?;
                    round_energy += energy_wh;
                    energy_sum += energy_wh;
                    epochs_run += 1;
                    history.epochs_completed += 1;
                    round_best = Some(round_best.map_or(perf_oriented, |b: f64| {
                        b.max(perf_oriented)
                    }));
                    last_raw = Some(raw);
                }
                if let Some(mut raw) = last_raw {
                    raw.energy_wh = energy_sum / epochs_run as f64;
                    round_attrs.push(raw);
                }
            }

            // Worst-case placeholders for configurations whose exploration
            // found no stable window.
            let finite: Vec<&RawAttributes> =
                round_attrs.iter().filter(|a| !a.diverged).collect();
            if finite.is_empty() && round == 0 {
                return Err(RunError::AllDiverged { round });
            }
            if !finite.is_empty() {
                let worst_perf = finite
                    .iter()
                    .map(|a| oriented(a.performance, a.polarity))
                    .fold(f64::INFINITY, f64::min);
                let worst_energy =
                    finite.iter().map(|a| a.energy_wh).fold(f64::NEG_INFINITY, f64::max);
                for attr in round_attrs.iter_mut().filter(|a| a.diverged) {
                    attr.performance = match attr.polarity {
                        MetricPolarity::HigherIsBetter => worst_perf,
                        MetricPolarity::LowerIsBetter => -worst_perf,
                    };
                    attr.energy_wh = worst_energy;
                    attr.selected_lr = cfg.grid.lr_min;
                }
            }
        }

        // Halving after the exploratory evaluation.
        if active_at_start.len() >= 2 && !round_attrs.is_empty() {
            let norm = normalize_attributes(&round_attrs);
            let scored: Vec<ScoredConfig> = norm
                .iter()
                .map(|a| ScoredConfig {
                    config_id: a.config_id,
                    score: objective_score(a, &cfg.weights),
                    energy_attr: a.e,
                })
                .collect();
            for s in &scored {
                last_scores.insert(s.config_id, s.score);
            }
            let outcome = halve(&scored)?;
            let entries: Vec<HalvingEntry> = round_attrs
                .iter()
                .zip(&norm)
                .zip(&scored)
                .map(|((raw, norm), scored)| HalvingEntry {
                    raw: raw.clone(),
                    norm: *norm,
                    score: scored.score,
                })
                .collect();
            ledger.append(
                monitor.elapsed_s(),
                LedgerEvent::Halving(HalvingDecision {
                    round,
                    weights: cfg.weights,
                    entries,
                    dropped: outcome.dropped.clone(),
                    tie_break_used: outcome.tie_break_used,
                }),
            )?;
            for id in &outcome.dropped {
                let state = states
                    .iter_mut()
                    .find(|s| s.hyper.config_id == *id)
                    .expect("dropped id comes from the scored set");
                state.hyper.mark_dropped(round).expect("only active configs are scored");
            }
            let survivors: Vec<usize> =
                (0..states.len()).filter(|&i| states[i].hyper.is_active()).collect();
            if survivors.len() == 1 && history.final_since.is_none() {
                states[survivors[0]]
                    .hyper
                    .mark_final()
                    .expect("surviving config is active");
                history.final_since = Some(round);
            }
        }

        // Thorough phase for the survivors.
        let survivors: Vec<usize> =
            (0..states.len()).filter(|&i| states[i].hyper.is_active()).collect();
        for &idx in &survivors {
            for t in 0..plan.thorough_epochs {
                if history.epochs_completed >= cfg.stop.epoch_cap {
                    truncated = true;
                    per_round_energy.push(round_energy);
                    break 'rounds;
                }
                let epoch_store;
                let store_ref = if cfg.reshuffle_per_epoch {
                    epoch_store = build_store(cfg, dataset, epoch_order_tag(round, true, t))?;
                    &epoch_store
                } else {
                    &store
                };
                let (energy_wh, perf_oriented, diverged) =
                    run_thorough_epoch(store_ref, &eval, &mut states[idx], round, monitor, ledger)?;
                round_energy += energy_wh;
                history.epochs_completed += 1;
                round_best =
                    Some(round_best.map_or(perf_oriented, |b: f64| b.max(perf_oriented)));
                if diverged {
                    if states[idx].hyper.status == ConfigStatus::Final {
                        return Err(RunError::FinalDiverged(states[idx].hyper.config_id));
                    }
                    states[idx].diverged_thorough = true;
                    break;
                }
            }
        }

        per_round_energy.push(round_energy);
        history.rounds_completed += 1;
        history.best_perf_per_round.push(round_best.unwrap_or(f64::NEG_INFINITY));
        if should_stop(&history, &cfg.stop) {
            break;
        }
        round += 1;
    }

    // Final selection: the final survivor, or the best-scoring active
    // configuration when the budget ran out mid-halving.
    let final_idx = states
        .iter()
        .position(|s| s.hyper.status == ConfigStatus::Final)
        .unwrap_or_else(|| {
            let mut best: Option<(usize, f64)> = None;
            for (i, s) in states.iter().enumerate() {
                if !s.hyper.is_active() {
                    continue;
                }
                let score = last_scores
                    .get(&s.hyper.config_id)
                    .copied()
                    .unwrap_or(f64::NEG_INFINITY);
                if best.map_or(true, |(_, bs)| score > bs) {
                    best = Some((i, score));
                }
            }
            best.expect("at least one configuration stays active").0
        });
    let total_energy_wh = ledger.total_energy_wh();
    ledger.append(
        monitor.elapsed_s(),
        LedgerEvent::FinalSelection(FinalSelection {
            config_id: states[final_idx].hyper.config_id,
            total_epochs: history.epochs_completed,
            total_energy_wh,
            truncated,
        }),
    )?;

    Ok(RunOutcome {
        final_config_id: states[final_idx].hyper.config_id,
        final_snapshot: states[final_idx].trainer.snapshot(),
        total_energy_wh,
        total_epochs: history.epochs_completed,
        truncated,
        per_round_energy_wh: per_round_energy,
        final_performance: states[final_idx].last_finite_perf,
        final_polarity: states[final_idx].polarity,
        configs: states.iter().map(|s| s.hyper.clone()).collect(),
    })
}

/// One isolated exploratory epoch: cyclical pass over the partition,
/// held-out evaluation, energy record, rollback. Only `current_lr` survives.
fn run_exploratory(
    cfg: &EngineConfig,
    store: &MicroBatchStore,
    eval: &EvalSet,
    state: &mut ConfigState,
    round: u32,
    monitor: &mut dyn PowerMonitor,
    ledger: &mut RunLedger,
) -> Result<(RawAttributes, f64, f64), RunError> {
    let batch = state.hyper.batch_size;
    let epoch_index = state.epoch_counter;
    monitor.start_epoch(state.hyper.config_id, round, epoch_index, TrainMode::Exploratory)?;
    let outer = state.trainer.snapshot();
    let batches: Vec<BatchRef<'_>> = store
        .iter_partition(batch, cfg.budget.exploration_fraction)?
        .collect();
    let samples: usize = batches.iter().map(|b| b.len()).sum();
    let outcome = cyclical_losses(state.trainer.as_mut(), &batches, &cfg.grid)?;
    monitor.on_work(batch, samples)?;
    let analysis = select_stable_lr(&outcome.mean_loss_per_lr, &cfg.grid, cfg.window_size)?;
    let (perf_raw, polarity) = state.trainer.evaluate(eval)?;
    let energy = monitor.end_epoch()?;
    state.trainer.restore(&outer)?;
    state.hyper.current_lr = analysis.selected_lr;
    state.polarity = polarity;
    let perf = if perf_raw.is_finite() {
        state.last_finite_perf = perf_raw;
        perf_raw
    } else {
        state.last_finite_perf
    };
    let diverged = analysis.fallback || !perf_raw.is_finite();

    let energy_wh = energy.energy_wh;
    ledger.append(monitor.elapsed_s(), LedgerEvent::EpochEnergy(energy))?;
    let grid_values = cfg.grid.values();
    ledger.append(
        monitor.elapsed_s(),
        LedgerEvent::EpochMetrics(EpochMetricsRecord {
            config_id: state.hyper.config_id,
            round,
            epoch_index,
            mode: TrainMode::Exploratory,
            performance: perf,
            metric_polarity: polarity,
            selected_lr: analysis.selected_lr,
            loss_trace: grid_values
                .iter()
                .zip(&analysis.mean_loss_per_lr)
                .map(|(&lr, &mean_loss)| LossPoint { lr, mean_loss })
                .collect(),
            explore: Some(ExplorationOutcome {
                curvature: analysis.curvature.clone(),
                window: analysis.selected_window,
                fallback: analysis.fallback,
            }),
        }),
    )?;
    state.epoch_counter += 1;

    let raw = RawAttributes {
        config_id: state.hyper.config_id,
        performance: perf,
        polarity,
        energy_wh,
        selected_lr: analysis.selected_lr,
        diverged,
    };
    Ok((raw, energy_wh, oriented(perf, polarity)))
}

/// One thorough epoch over the full training order at the configuration's
/// current learning rate. Model state persists; this is the training that
/// reaches the final model.
fn run_thorough_epoch(
    store: &MicroBatchStore,
    eval: &EvalSet,
    state: &mut ConfigState,
    round: u32,
    monitor: &mut dyn PowerMonitor,
    ledger: &mut RunLedger,
) -> Result<(f64, f64, bool), RunError> {
    let batch = state.hyper.batch_size;
    let epoch_index = state.epoch_counter;
    monitor.start_epoch(state.hyper.config_id, round, epoch_index, TrainMode::Thorough)?;
    let lr = state.hyper.current_lr;
    let mut diverged = false;
    for b in store.iter_batches(batch)? {
        let result = state.trainer.train_batches(&[b], &LrSchedule::Constant(lr));
        // The forward pass of a diverged batch still did the work.
        monitor.on_work(batch, b.len())?;
        match result {
            Ok(_) => {}
            Err(TrainerError::Divergence { .. }) => {
                diverged = true;
                break;
            }
            Err(other) => return Err(other.into()),
        }
    }
    let energy = monitor.end_epoch()?;
    let (perf_raw, polarity) = state.trainer.evaluate(eval)?;
    let perf = if perf_raw.is_finite() {
        state.last_finite_perf = perf_raw;
        perf_raw
    } else {
        state.last_finite_perf
    };
    state.polarity = polarity;
    let energy_wh = energy.energy_wh;
    ledger.append(monitor.elapsed_s(), LedgerEvent::EpochEnergy(energy))?;
    ledger.append(
        monitor.elapsed_s(),
        LedgerEvent::EpochMetrics(EpochMetricsRecord {
            config_id: state.hyper.config_id,
            round,
            epoch_index,
            mode: TrainMode::Thorough,
            performance: perf,
            metric_polarity: polarity,
            selected_lr: lr,
            loss_trace: Vec::new(),
            explore: None,
        }),
    )?;
    state.epoch_counter += 1;
    Ok((energy_wh, oriented(perf, polarity), diverged))
}

/// Re-runs only the thorough epochs recorded for the final configuration,
/// applying each epoch's recorded learning rate to a fresh trainer. With the
/// same engine config and an identically seeded trainer this reproduces the
/// final model bit for bit, because exploration never leaks state past its
/// rollback.
pub fn replay_final_thorough(
    cfg: &EngineConfig,
    dataset: &Dataset,
    mut trainer: Box<dyn Trainer>,
    events: &[TimestampedEvent],
) -> Result<TrainerSnapshot, RunError> {
    let final_id = crate::ledger::final_selection(events)
        .ok_or_else(|| RunError::Validation("ledger has no final selection".into()))?
        .config_id;
    let base_store = build_store(cfg, dataset, DATA_ORDER_TAG)?;
    let batch = cfg.batch_candidates[final_id.0 as usize];
    let mut thorough_in_round: std::collections::BTreeMap<u32, u32> = Default::default();
    for event in events {
        if let LedgerEvent::EpochMetrics(m) = &event.event {
            if m.config_id == final_id && m.mode == TrainMode::Thorough {
                let index = thorough_in_round.entry(m.round).or_insert(0);
                let epoch_store;
                let store_ref = if cfg.reshuffle_per_epoch {
                    epoch_store =
                        build_store(cfg, dataset, epoch_order_tag(m.round, true, *index))?;
                    &epoch_store
                } else {
                    &base_store
                };
                *index += 1;
                for b in store_ref.iter_batches(batch)? {
                    match trainer.train_batches(&[b], &LrSchedule::Constant(m.selected_lr)) {
                        Ok(_) => {}
                        Err(TrainerError::Divergence { .. }) => break,
                        Err(other) => return Err(other.into()),
                    }
                }
            }
        }
    }
    Ok(trainer.snapshot())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(max_rounds: u32, cap: u32, plateau: Option<PlateauRule>) -> StopRule {
        StopRule { max_rounds, epoch_cap: cap, plateau }
    }

    #[test]
    fn max_rounds_counts() {
        let mut history = RunHistory::default();
        let stop = rule(3, 1000, None);
        assert!(!should_stop(&history, &stop));
        history.rounds_completed = 3;
        assert!(should_stop(&history, &stop));
    }

    #[test]
    fn epoch_cap_counts() {
        let mut history = RunHistory::default();
        let stop = rule(100, 10, None);
        history.epochs_completed = 9;
        assert!(!should_stop(&history, &stop));
        history.epochs_completed = 10;
        assert!(should_stop(&history, &stop));
    }

    #[test]
    fn improving_performance_never_plateaus() {
        let stop = rule(100, 100_000, Some(PlateauRule { patience: 2, min_delta: 1e-4 }));
        let history = RunHistory {
            rounds_completed: 5,
            epochs_completed: 50,
            best_perf_per_round: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            final_since: Some(1),
        };
        assert!(!should_stop(&history, &stop));
    }

    #[test]
    fn plateau_fires_exactly_at_patience() {
        let stop = rule(100, 100_000, Some(PlateauRule { patience: 2, min_delta: 1e-4 }));
        // Final exists since round 1; rounds 2..4 flat.
        let mut history = RunHistory {
            rounds_completed: 3,
            epochs_completed: 30,
            best_perf_per_round: vec![0.1, 0.5, 0.5],
            final_since: Some(1),
        };
        // Only one flat improvement so far (round 1 -> 2): not yet.
        assert!(!should_stop(&history, &stop));
        history.best_perf_per_round.push(0.5);
        history.rounds_completed = 4;
        assert!(should_stop(&history, &stop));
    }

    #[test]
    fn plateau_ignores_rounds_before_final() {
        let stop = rule(100, 100_000, Some(PlateauRule { patience: 2, min_delta: 1e-4 }));
        // Flat early rounds happen while halving is still running.
        let history = RunHistory {
            rounds_completed: 3,
            epochs_completed: 30,
            best_perf_per_round: vec![0.5, 0.5, 0.5],
            final_since: Some(2),
        };
        assert!(!should_stop(&history, &stop));
    }

    #[test]
    fn plateau_without_final_never_fires() {
        let stop = rule(100, 100_000, Some(PlateauRule { patience: 1, min_delta: 1e-4 }));
        let history = RunHistory {
            rounds_completed: 4,
            epochs_completed: 40,
            best_perf_per_round: vec![0.5; 4],
            final_since: None,
        };
        assert!(!should_stop(&history, &stop));
    }
}
