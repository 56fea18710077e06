//! Post-run analysis: per-epoch trace files, exploration landscape files,
//! total-energy comparisons and the parity factor. Everything here is a pure
//! function of ledgers, so identical ledgers render identical reports.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{self, LedgerEvent, TimestampedEvent};
use crate::types::{ConfigId, TrainMode};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("parity requires positive energies, found {0}")]
    NonPositiveEnergy(f64),
    #[error("ledger is missing its run header")]
    MissingHeader,
    #[error("experiment fingerprints do not match: {0} vs {1}")]
    FingerprintMismatch(String, String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One row of a per-config trace file.
#[derive(Debug, Clone)]
struct TraceRow {
    round: u32,
    epoch_index: u32,
    mode: TrainMode,
    performance: Option<f64>,
    energy_wh: Option<f64>,
    current_lr: Option<f64>,
}

/// Writes one CSV per configuration with a row per epoch: performance,
/// watt-hours and the learning rate in effect, with exploratory epochs
/// flagged by the mode column. Returns the written paths.
pub fn emit_traces(
    events: &[TimestampedEvent],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(out_dir)?;
    let mut per_config: BTreeMap<ConfigId, BTreeMap<(u32, u32), TraceRow>> = BTreeMap::new();
    for event in events {
        match &event.event {
            LedgerEvent::EpochEnergy(r) => {
                let row = per_config
                    .entry(r.config_id)
                    .or_default()
                    .entry((r.round, r.epoch_index))
                    .or_insert_with(|| TraceRow {
                        round: r.round,
                        epoch_index: r.epoch_index,
                        mode: r.mode,
                        performance: None,
                        energy_wh: None,
                        current_lr: None,
                    });
                row.energy_wh = Some(r.energy_wh);
            }
            LedgerEvent::EpochMetrics(m) => {
                let row = per_config
                    .entry(m.config_id)
                    .or_default()
                    .entry((m.round, m.epoch_index))
                    .or_insert_with(|| TraceRow {
                        round: m.round,
                        epoch_index: m.epoch_index,
                        mode: m.mode,
                        performance: None,
                        energy_wh: None,
                        current_lr: None,
                    });
                row.performance = Some(m.performance);
                row.current_lr = Some(m.selected_lr);
            }
            _ => {}
        }
    }
    let mut paths = Vec::new();
    for (config, rows) in &per_config {
        let path = out_dir.join(format!("config{config}_trace.csv"));
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "round,epoch_index,mode,performance,energy_wh,current_lr")?;
        for row in rows.values() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                row.round,
                row.epoch_index,
                match row.mode {
                    TrainMode::Exploratory => "exploratory",
                    TrainMode::Thorough => "thorough",
                },
                row.performance.map_or(String::new(), |v| format!("{v}")),
                row.energy_wh.map_or(String::new(), |v| format!("{v}")),
                row.current_lr.map_or(String::new(), |v| format!("{v}")),
            )?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// Writes one exploration-landscape CSV per exploratory epoch:
/// `explore_round<r>_config<id>.csv` with the rate, mean loss, curvature and
/// selected-window flag per grid point.
pub fn emit_explore_traces(
    events: &[TimestampedEvent],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for event in events {
        let m = match &event.event {
            LedgerEvent::EpochMetrics(m) if m.mode == TrainMode::Exploratory => m,
            _ => continue,
        };
        let explore = match &m.explore {
            Some(e) => e,
            None => continue,
        };
        let path = out_dir.join(format!(
            "explore_round{}_config{}.csv",
            m.round, m.config_id
        ));
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "lr,mean_loss,curvature,in_window")?;
        for (j, point) in m.loss_trace.iter().enumerate() {
            let curvature = if j >= 1 && j - 1 < explore.curvature.len() {
                format!("{}", explore.curvature[j - 1])
            } else {
                String::new()
            };
            let in_window = explore
                .window
                .map_or(0, |(lo, hi)| u8::from(j >= lo && j <= hi));
            writeln!(w, "{},{},{},{}", point.lr, point.mean_loss, curvature, in_window)?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}

/// Plain-text run summary derived from the ledger alone.
pub fn render_run_summary(events: &[TimestampedEvent]) -> String {
    let mut out = String::new();
    let header = ledger::run_header(events);
    let total = ledger::total_energy_wh(events);
    if let Some(h) = header {
        out.push_str(&format!(
            "variant: {}  seed: {}  alpha: {}  beta: {}\n",
            h.variant, h.seed, h.alpha, h.beta
        ));
    }
    if let Some(f) = ledger::final_selection(events) {
        out.push_str(&format!(
            "final config: {}\ntotal epochs: {}\ntotal energy (Wh): {}\n",
            f.config_id, f.total_epochs, f.total_energy_wh
        ));
        if f.truncated {
            out.push_str("run truncated by the epoch cap\n");
        }
        let final_perf = events.iter().rev().find_map(|e| match &e.event {
            LedgerEvent::EpochMetrics(m) if m.config_id == f.config_id => {
                Some(m.performance)
            }
            _ => None,
        });
        if let Some(p) = final_perf {
            out.push_str(&format!("final performance: {p}\n"));
        }
    }
    out.push_str(&format!("ledger energy re-sum (Wh): {total}\n"));
    out
}

/// Ratio of engine energy to a single conventional run: the number of manual
/// explorations the engine's overhead is worth.
pub fn parity(energy_sm2_wh: f64, energy_vanilla_wh: f64) -> Result<f64, ReportError> {
    if !(energy_sm2_wh > 0.0) {
        return Err(ReportError::NonPositiveEnergy(energy_sm2_wh));
    }
    if !(energy_vanilla_wh > 0.0) {
        return Err(ReportError::NonPositiveEnergy(energy_vanilla_wh));
    }
    Ok(energy_sm2_wh / energy_vanilla_wh)
}

/// Cross-run energy comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub name: String,
    pub energy_alpha1_wh: f64,
    pub energy_sm2_wh: f64,
    pub energy_vanilla_wh: f64,
    /// Percentage saved by the energy-aware weighting relative to the
    /// performance-only run: `(alpha1 - sm2) / alpha1 * 100`.
    pub reduction_pct: f64,
    /// Directional parity `sm2 / vanilla`.
    pub parity: f64,
    /// Larger-over-smaller ratio of the same pair; printed alongside because
    /// the directional quotient can fall below one.
    pub parity_symmetric: f64,
}

impl ComparisonSummary {
    pub fn from_totals(
        name: &str,
        energy_alpha1_wh: f64,
        energy_sm2_wh: f64,
        energy_vanilla_wh: f64,
    ) -> Result<Self, ReportError> {
        if !(energy_alpha1_wh > 0.0) {
            return Err(ReportError::NonPositiveEnergy(energy_alpha1_wh));
        }
        let parity = parity(energy_sm2_wh, energy_vanilla_wh)?;
        let parity_symmetric = energy_sm2_wh.max(energy_vanilla_wh)
            / energy_sm2_wh.min(energy_vanilla_wh);
        Ok(Self {
            name: name.to_string(),
            energy_alpha1_wh,
            energy_sm2_wh,
            energy_vanilla_wh,
            reduction_pct: (energy_alpha1_wh - energy_sm2_wh) / energy_alpha1_wh * 100.0,
            parity,
            parity_symmetric,
        })
    }

    /// Checks internal consistency, e.g. after deserializing.
    pub fn check(&self) -> bool {
        let expect =
            (self.energy_alpha1_wh - self.energy_sm2_wh) / self.energy_alpha1_wh * 100.0;
        (self.reduction_pct - expect).abs() <= 1e-9 * expect.abs().max(1.0)
    }

    pub fn render_text(&self) -> String {
        format!(
            "experiment: {}\n  alpha=1.0 total (Wh):  {}\n  engine total (Wh):     {} ({:+.0}%)\n  vanilla total (Wh):    {}\n  parity:                {:.2} (symmetric {:.2})\n",
            self.name,
            self.energy_alpha1_wh,
            self.energy_sm2_wh,
            -self.reduction_pct,
            self.energy_vanilla_wh,
            self.parity,
            self.parity_symmetric,
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ReportError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(
            w,
            "name,energy_alpha1_wh,energy_sm2_wh,energy_vanilla_wh,reduction_pct,parity,parity_symmetric"
        )?;
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            self.name,
            self.energy_alpha1_wh,
            self.energy_sm2_wh,
            self.energy_vanilla_wh,
            self.reduction_pct,
            self.parity,
            self.parity_symmetric
        )?;
        w.flush()?;
        Ok(())
    }
}

/// Compares three completed ledgers over the same experiment. The runs must
/// share data, trainer and seed, which the header fingerprint certifies.
pub fn compare(
    alpha1: &[TimestampedEvent],
    sm2: &[TimestampedEvent],
    vanilla: &[TimestampedEvent],
) -> Result<ComparisonSummary, ReportError> {
    let fp = |events: &[TimestampedEvent]| -> Result<String, ReportError> {
        ledger::run_header(events)
            .map(|h| h.fingerprint.clone())
            .ok_or(ReportError::MissingHeader)
    };
    let fp_a = fp(alpha1)?;
    for other in [fp(sm2)?, fp(vanilla)?] {
        if other != fp_a {
            return Err(ReportError::FingerprintMismatch(fp_a, other));
        }
    }
    ComparisonSummary::from_totals(
        &fp_a[..12.min(fp_a.len())],
        ledger::total_energy_wh(alpha1),
        ledger::total_energy_wh(sm2),
        ledger::total_energy_wh(vanilla),
    )
}
