//! Training contract scheduled by the engine, plus built-in desk-scale
//! learners with snapshot/restore for exploratory isolation.

mod learners;

pub use learners::{finite_difference_max_rel_error, BuiltinLearner};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::{BatchRef, EvalSet};
use crate::types::MetricPolarity;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("non-finite loss at batch {batch_index}")]
    Divergence { batch_index: usize },
    #[error("learning rates must be positive, found {0}")]
    InvalidLr(f64),
    #[error("{lrs} learning rates paired with {batches} batches")]
    LrCountMismatch { lrs: usize, batches: usize },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("targets do not match the learner: {0}")]
    TargetMismatch(String),
    #[error("invalid learner spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot header magic mismatch")]
    BadMagic,
    #[error("snapshot version {found}, expected {expected}")]
    Version { found: u16, expected: u16 },
    #[error("snapshot is for learner kind {found:?}, expected {expected:?}")]
    KindMismatch { found: String, expected: String },
    #[error("snapshot shape does not match the learner")]
    ShapeMismatch,
    #[error("snapshot truncated")]
    Truncated,
}

/// Per-batch learning-rate assignment: a single constant or one rate per batch.
#[derive(Debug, Clone, Copy)]
pub enum LrSchedule<'a> {
    Constant(f64),
    PerBatch(&'a [f64]),
}

impl LrSchedule<'_> {
    /// Checks positivity and length pairing; trainer implementations call
    /// this before stepping.
    pub fn validate(&self, batches: usize) -> Result<(), TrainerError> {
        match self {
            LrSchedule::Constant(lr) => {
                if !(*lr > 0.0) {
                    return Err(TrainerError::InvalidLr(*lr));
                }
            }
            LrSchedule::PerBatch(lrs) => {
                if lrs.len() != batches {
                    return Err(TrainerError::LrCountMismatch {
                        lrs: lrs.len(),
                        batches,
                    });
                }
                if let Some(&bad) = lrs.iter().find(|lr| !(**lr > 0.0)) {
                    return Err(TrainerError::InvalidLr(bad));
                }
            }
        }
        Ok(())
    }

    pub fn at(&self, i: usize) -> f64 {
        match self {
            LrSchedule::Constant(lr) => *lr,
            LrSchedule::PerBatch(lrs) => lrs[i],
        }
    }
}

/// Opaque serialized trainer state: parameters, optimizer state, RNG state
/// and step counter, behind a versioned header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainerSnapshot {
    bytes: Vec<u8>,
}

impl TrainerSnapshot {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Hex SHA-256 of the snapshot bytes; equal digests mean bit-identical
    /// trainer state.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(&self.bytes);
        format!("{:x}", hasher.finalize())
    }
}

/// The training contract the scheduler drives.
///
/// `restore(snapshot())` followed by identical inputs reproduces bit-identical
/// parameters and losses; `evaluate` never mutates state. At most one of
/// train/evaluate/snapshot is in flight at a time.
pub trait Trainer {
    fn kind(&self) -> &'static str;

    /// One plain SGD step per batch at the paired learning rate. Returns the
    /// pre-step loss per batch. A non-finite pre-step loss aborts with
    /// [`TrainerError::Divergence`] carrying the offending batch index; the
    /// scheduler treats that as a worst-case observation, not a crash.
    fn train_batches(
        &mut self,
        batches: &[BatchRef<'_>],
        lrs: &LrSchedule<'_>,
    ) -> Result<Vec<f64>, TrainerError>;

    fn evaluate(&self, eval: &EvalSet) -> Result<(f64, MetricPolarity), TrainerError>;

    fn snapshot(&self) -> TrainerSnapshot;

    fn restore(&mut self, snapshot: &TrainerSnapshot) -> Result<(), TrainerError>;

    fn reseed(&mut self, seed: u64);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    LinearRegression,
    LogisticClassifier,
    TinyMlp,
}

/// Declarative spec for the built-in learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinLearnerSpec {
    pub kind: LearnerKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Hidden layer widths; used by the MLP only.
    pub hidden_dims: Vec<usize>,
    pub init_scale: f64,
    pub seed: u64,
}

impl BuiltinLearnerSpec {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.input_dim < 1 || self.output_dim < 1 {
            return Err(TrainerError::InvalidSpec(format!(
                "dims must be >= 1, found input_dim={} output_dim={}",
                self.input_dim, self.output_dim
            )));
        }
        if matches!(self.kind, LearnerKind::TinyMlp)
            && (self.hidden_dims.is_empty() || self.hidden_dims.iter().any(|&h| h < 1))
        {
            return Err(TrainerError::InvalidSpec(
                "tiny_mlp needs at least one hidden layer of width >= 1".into(),
            ));
        }
        if matches!(self.kind, LearnerKind::LogisticClassifier) && self.output_dim != 1 {
            return Err(TrainerError::InvalidSpec(
                "the logistic classifier is binary; output_dim must be 1".into(),
            ));
        }
        if !(self.init_scale > 0.0) {
            return Err(TrainerError::InvalidSpec(format!(
                "init_scale must be positive, found {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<BuiltinLearner, TrainerError> {
        self.validate()?;
        Ok(BuiltinLearner::from_spec(self))
    }
}

// Little-endian binary encoding used by the snapshot payloads.

pub(crate) struct ByteWriter(Vec<u8>);

impl ByteWriter {
    pub fn new() -> Self {
        Self(Vec::new())
    }
    pub fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.0.extend_from_slice(s.as_bytes());
    }
    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        if self.pos + n > self.bytes.len() {
            return Err(SnapshotError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    pub fn u16(&mut self) -> Result<u16, SnapshotError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    pub fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn str(&mut self) -> Result<String, SnapshotError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| SnapshotError::Truncated)
    }
}

pub(crate) const SNAPSHOT_MAGIC: &[u8; 4] = b"SM2S";
pub(crate) const SNAPSHOT_VERSION: u16 = 1;
