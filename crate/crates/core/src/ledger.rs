//! Append-only run ledger.
//!
//! Every epoch, measurement and decision is recorded as one JSON object per
//! line. Each line carries a `"type"` discriminator and an ISO-8601 `"ts"`
//! timestamp derived from the monitor's simulated clock (a fixed epoch plus
//! elapsed seconds), so two runs with the same configuration and seed produce
//! byte-identical files.
//!
//! Line schema (`sm2.ledger.v1`), in field order:
//!
//! - `run_header`: schema, fingerprint, variant, seed, alpha, beta
//! - `epoch_energy`: config_id, round, epoch_index, mode, power_samples,
//!   duration_s, energy_wh
//! - `epoch_metrics`: config_id, round, epoch_index, mode, performance,
//!   metric_polarity, selected_lr, loss_trace, explore
//! - `halving`: round, weights, entries (raw + normalized attributes and
//!   scores per config), dropped, tie_break_used
//! - `final_selection`: config_id, total_epochs, total_energy_wh, truncated
//!
//! Loss values may be infinite (the divergence sentinel); they serialize as
//! the JSON string `"inf"` since JSON has no infinity literal.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Duration, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::{AttributeVector, ObjectiveWeights, RawAttributes};
use crate::types::{ConfigId, EpochEnergyRecord, EpochMetricsRecord};

pub const LEDGER_SCHEMA: &str = "sm2.ledger.v1";

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error(
        "out-of-order event for config {config}: ({round}, {epoch}) precedes last ({last_round}, {last_epoch})"
    )]
    OutOfOrder {
        config: ConfigId,
        round: u32,
        epoch: u32,
        last_round: u32,
        last_epoch: u32,
    },
    #[error("halving for round {round} recorded after round {seen}")]
    HalvingOutOfOrder { round: u32, seen: u32 },
    #[error("event appended after final selection")]
    AfterFinal,
    #[error("config {0} dropped by more than one halving decision")]
    DoubleDrop(ConfigId),
    #[error("ledger io: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("serialize: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Serialize possibly-infinite floats as numbers or the strings
/// "inf" / "-inf".
pub mod json_f64 {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(D::Error::custom(format!("invalid float literal {other:?}"))),
            },
        }
    }
}

/// Vec counterpart of [`json_f64`].
pub mod json_f64_vec {
    use serde::ser::SerializeSeq;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        #[derive(serde::Serialize)]
        struct One(#[serde(with = "super::json_f64")] f64);
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for &x in v {
            seq.serialize_element(&One(x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        #[derive(Deserialize)]
        struct One(#[serde(with = "super::json_f64")] f64);
        Ok(Vec::<One>::deserialize(d)?.into_iter().map(|x| x.0).collect())
    }
}

/// Identity of a run, written as the first ledger line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunHeader {
    pub schema: String,
    /// Digest over seed, data, trainer, candidates, grid and budget — the
    /// parts that must match for runs to be comparable. Objective weights and
    /// the run variant are deliberately excluded.
    pub fingerprint: String,
    pub variant: String,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
}

/// Full audit record for one configuration inside a halving decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HalvingEntry {
    pub raw: RawAttributes,
    pub norm: AttributeVector,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HalvingDecision {
    pub round: u32,
    pub weights: ObjectiveWeights,
    pub entries: Vec<HalvingEntry>,
    pub dropped: Vec<ConfigId>,
    pub tie_break_used: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalSelection {
    pub config_id: ConfigId,
    pub total_epochs: u32,
    pub total_energy_wh: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LedgerEvent {
    RunHeader(RunHeader),
    EpochEnergy(EpochEnergyRecord),
    EpochMetrics(EpochMetricsRecord),
    Halving(HalvingDecision),
    FinalSelection(FinalSelection),
}

/// A ledger event together with its timestamp.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimestampedEvent {
    pub ts: String,
    #[serde(flatten)]
    pub event: LedgerEvent,
}

/// Formats elapsed simulated seconds as an ISO-8601 timestamp against a fixed
/// base so ledgers are reproducible byte for byte.
pub fn iso_timestamp(elapsed_s: f64) -> String {
    let base = Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap();
    let nanos = (elapsed_s * 1e9).round() as i64;
    (base + Duration::nanoseconds(nanos)).to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Append-only event sequence with per-config ordering enforcement and an
/// optional JSON-lines sink flushed on every append.
pub struct RunLedger {
    events: Vec<TimestampedEvent>,
    last_per_config: std::collections::BTreeMap<ConfigId, (u32, u32)>,
    dropped: std::collections::BTreeSet<ConfigId>,
    max_halving_round: Option<u32>,
    finalized: bool,
    writer: Option<BufWriter<File>>,
}

impl RunLedger {
    pub fn new() -> Self {
        Self {
            events: Vec::new(),
            last_per_config: Default::default(),
            dropped: Default::default(),
            max_halving_round: None,
            finalized: false,
            writer: None,
        }
    }

    /// Ledger that also streams every event to `path`.
    pub fn with_file(path: &Path) -> Result<Self, LedgerError> {
        let mut ledger = Self::new();
        ledger.writer = Some(BufWriter::new(File::create(path)?));
        Ok(ledger)
    }

    pub fn append(&mut self, elapsed_s: f64, event: LedgerEvent) -> Result<(), LedgerError> {
        if self.finalized {
            return Err(LedgerError::AfterFinal);
        }
        match &event {
            LedgerEvent::EpochEnergy(r) => {
                self.check_config_order(r.config_id, r.round, r.epoch_index)?
            }
            LedgerEvent::EpochMetrics(r) => {
                self.check_config_order(r.config_id, r.round, r.epoch_index)?
            }
            LedgerEvent::Halving(h) => {
                if let Some(seen) = self.max_halving_round {
                    if h.round <= seen {
                        return Err(LedgerError::HalvingOutOfOrder { round: h.round, seen });
                    }
                }
                for id in &h.dropped {
                    if !self.dropped.insert(*id) {
                        return Err(LedgerError::DoubleDrop(*id));
                    }
                }
                self.max_halving_round = Some(h.round);
            }
            LedgerEvent::FinalSelection(_) => self.finalized = true,
            LedgerEvent::RunHeader(_) => {}
        }
        let entry = TimestampedEvent { ts: iso_timestamp(elapsed_s), event };
        if let Some(w) = &mut self.writer {
            serde_json::to_writer(&mut *w, &entry)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.events.push(entry);
        Ok(())
    }

    fn check_config_order(
        &mut self,
        config: ConfigId,
        round: u32,
        epoch: u32,
    ) -> Result<(), LedgerError> {
        if let Some(&(last_round, last_epoch)) = self.last_per_config.get(&config) {
            if (round, epoch) < (last_round, last_epoch) {
                return Err(LedgerError::OutOfOrder {
                    config,
                    round,
                    epoch,
                    last_round,
                    last_epoch,
                });
            }
        }
        self.last_per_config.insert(config, (round, epoch));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[TimestampedEvent] {
        &self.events
    }

    /// Sum of watt-hours over all energy records, exploratory and thorough.
    pub fn total_energy_wh(&self) -> f64 {
        total_energy_wh(&self.events)
    }

    /// Parses a JSON-lines ledger file.
    pub fn read_jsonl(path: &Path) -> Result<Vec<TimestampedEvent>, LedgerError> {
        let reader = BufReader::new(File::open(path)?);
        let mut events = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event: TimestampedEvent = serde_json::from_str(&line)
                .map_err(|source| LedgerError::Parse { line: i + 1, source })?;
            events.push(event);
        }
        Ok(events)
    }
}

impl Default for RunLedger {
    fn default() -> Self {
        Self::new()
    }
}

/// Sum of watt-hours over all energy records in an event slice.
pub fn total_energy_wh(events: &[TimestampedEvent]) -> f64 {
    events
        .iter()
        .filter_map(|e| match &e.event {
            LedgerEvent::EpochEnergy(r) => Some(r.energy_wh),
            _ => None,
        })
        .sum()
}

/// The run header of an event slice, if present.
pub fn run_header(events: &[TimestampedEvent]) -> Option<&RunHeader> {
    events.iter().find_map(|e| match &e.event {
        LedgerEvent::RunHeader(h) => Some(h),
        _ => None,
    })
}

/// The final selection of an event slice, if the run completed.
pub fn final_selection(events: &[TimestampedEvent]) -> Option<&FinalSelection> {
    events.iter().find_map(|e| match &e.event {
        LedgerEvent::FinalSelection(f) => Some(f),
        _ => None,
    })
}
