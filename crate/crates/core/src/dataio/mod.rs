//! Dataset ingestion, synthetic generators and the micro-batch loader.

mod store;

pub use store::{BatchRef, MicroBatchStore, OrderMode, TargetsRef};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, SplitMix64};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("dataset holds {n} samples but the smallest batch size is {min_batch}")]
    TooSmall { n: usize, min_batch: usize },
    #[error("batch candidate {candidate} is not a multiple of the micro-batch size {micro}")]
    NonMultipleCandidate { candidate: usize, micro: usize },
    #[error("loader capacity {capacity} cannot hold one batch of {candidate} ({needed} micro-batches)")]
    CapacityTooSmall { capacity: usize, candidate: usize, needed: usize },
    #[error("batch size {0} is not one of the configured candidates")]
    UnknownBatchSize(usize),
    #[error("csv line {line}: {message}")]
    CsvParse { line: usize, message: String },
    #[error("csv column {column:?} not found in header")]
    MissingColumn { column: String },
    #[error("csv file has no data rows")]
    EmptyCsv,
    #[error("non-finite value in dataset at row {row}")]
    NonFinite { row: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Target values: dense regression outputs or integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression { values: Vec<f64>, dim: usize },
    Labels(Vec<u32>),
}

impl Targets {
    pub fn len(&self, input_rows: usize) -> usize {
        match self {
            Targets::Regression { values, dim } => {
                if *dim == 0 {
                    0
                } else {
                    values.len() / dim
                }
            }
            Targets::Labels(l) => l.len(),
        }
        .min(input_rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Synthetic(SyntheticSpec),
    Csv(PathBuf),
}

/// Desk-scale synthetic tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticSpec {
    /// `y = X w* + noise` with a deterministic ground-truth weight vector.
    LinearRegression { n_samples: usize, input_dim: usize, noise_sigma: f64 },
    /// Two Gaussian blobs with means `separation` apart along a fixed axis.
    TwoGaussians { n_samples: usize, input_dim: usize, separation: f64 },
    /// Least-squares task whose per-batch Hessian is exactly diagonal with a
    /// controlled spectrum, so the gradient-descent stability limit
    /// `2 / lambda_max` is known in closed form. Samples cycle through the
    /// scaled eigen-directions; any aligned batch whose size is a multiple of
    /// `input_dim` sees the full spectrum.
    QuadraticBowl {
        n_samples: usize,
        input_dim: usize,
        condition_number: f64,
        lambda_max: f64,
    },
}

/// In-memory dataset: row-major inputs plus targets and a fixed
/// train/holdout split.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: Vec<f64>,
    n: usize,
    dim: usize,
    targets: Targets,
    train_indices: Vec<usize>,
    holdout_indices: Vec<usize>,
    pub provenance: Provenance,
    /// Largest Hessian eigenvalue, exposed by the quadratic-bowl task.
    pub lambda_max: Option<f64>,
}

/// Materialized evaluation split.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub inputs: Vec<f64>,
    pub dim: usize,
    pub targets: Targets,
}

impl Dataset {
    fn build(
        inputs: Vec<f64>,
        dim: usize,
        targets: Targets,
        provenance: Provenance,
        lambda_max: Option<f64>,
        seed: u64,
        holdout_fraction: f64,
    ) -> Result<Self, DataError> {
        assert!(dim >= 1);
        let n = inputs.len() / dim;
        if let Some(row) = inputs.chunks(dim).position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(DataError::NonFinite { row });
        }
        match &targets {
            Targets::Regression { values, .. } => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(DataError::NonFinite { row: 0 });
                }
            }
            Targets::Labels(_) => {}
        }
        // Disjoint, covering split fixed by the seed.
        let mut indices: Vec<usize> = (0..n).collect();
        let mut rng = SplitMix64::new(derive_seed(seed, 0x5b17));
        rng.shuffle(&mut indices);
        let holdout_len = ((n as f64) * holdout_fraction).floor() as usize;
        let holdout_len = holdout_len.min(n.saturating_sub(1));
        let holdout_indices = indices[..holdout_len].to_vec();
        let train_indices = indices[holdout_len..].to_vec();
        Ok(Self {
            inputs,
            n,
            dim,
            targets,
            train_indices,
            holdout_indices,
            provenance,
            lambda_max,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train_indices
    }

    pub fn holdout_indices(&self) -> &[usize] {
        &self.holdout_indices
    }

    fn gather(&self, indices: &[usize]) -> (Vec<f64>, Targets) {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
        }
        let targets = match &self.targets {
            Targets::Regression { values, dim } => {
                let mut out = Vec::with_capacity(indices.len() * dim);
                for &i in indices {
                    out.extend_from_slice(&values[i * dim..(i + 1) * dim]);
                }
                Targets::Regression { values: out, dim: *dim }
            }
            Targets::Labels(labels) => {
                Targets::Labels(indices.iter().map(|&i| labels[i]).collect())
            }
        };
        (inputs, targets)
    }

    /// The held-out evaluation split as a dense set.
    pub fn eval_set(&self) -> EvalSet {
        let (inputs, targets) = self.gather(&self.holdout_indices);
        EvalSet { inputs, dim: self.dim, targets }
    }
}

/// Generates a deterministic synthetic dataset.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    seed: u64,
    holdout_fraction: f64,
) -> Result<Dataset, DataError> {
    match spec {
        SyntheticSpec::LinearRegression { n_samples, input_dim, noise_sigma } => {
            let (n, d) = (*n_samples, *input_dim);
            if n < 2 || d < 1 {
                return Err(DataError::InvalidDims(format!(
                    "linear regression needs n >= 2 and input_dim >= 1, found n={n} d={d}"
                )));
            }
            let mut rng = SplitMix64::new(derive_seed(seed, 0x11a2));
            let w_star: Vec<f64> = (0..d).map(|_| rng.next_range(-1.0, 1.0)).collect();
            let b_star = rng.next_range(-0.5, 0.5);
            let mut inputs = Vec::with_capacity(n * d);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let mut y = b_star;
                for k in 0..d {
                    let x = rng.next_range(-1.0, 1.0);
                    y += w_star[k] * x;
                    inputs.push(x);
                }
                if *noise_sigma > 0.0 {
                    y += noise_sigma * rng.next_gaussian();
                }
                ys.push(y);
            }
            Dataset::build(
                inputs,
                d,
                Targets::Regression { values: ys, dim: 1 },
                Provenance::Synthetic(spec.clone()),
                None,
                seed,
                holdout_fraction,
            )
        }
        SyntheticSpec::TwoGaussians { n_samples, input_dim, separation } => {
            let (n, d) = (*n_samples, *input_dim);
            if n < 2 || d < 1 {
                return Err(DataError::InvalidDims(format!(
                    "two-gaussians needs n >= 2 and input_dim >= 1, found n={n} d={d}"
                )));
            }
            let mut rng = SplitMix64::new(derive_seed(seed, 0x22b3));
            let mut inputs = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let label = (i % 2) as u32;
                let offset = if label == 1 { separation / 2.0 } else { -separation / 2.0 };
                // Means differ along the first axis only.
                inputs.push(offset + rng.next_gaussian());
                for _ in 1..d {
                    inputs.push(rng.next_gaussian());
                }
                labels.push(label);
            }
            Dataset::build(
                inputs,
                d,
                Targets::Labels(labels),
                Provenance::Synthetic(spec.clone()),
                None,
                seed,
                holdout_fraction,
            )
        }
        SyntheticSpec::QuadraticBowl { n_samples, input_dim, condition_number, lambda_max } => {
            let (n, d) = (*n_samples, *input_dim);
            if d < 2 {
                return Err(DataError::InvalidDims(
                    "quadratic bowl needs input_dim >= 2".into(),
                ));
            }
            if n < 2 * d {
                return Err(DataError::InvalidDims(format!(
                    "quadratic bowl needs n >= 2 * input_dim, found n={n} d={d}"
                )));
            }
            if !(*condition_number >= 1.0) || !(*lambda_max > 0.0) {
                return Err(DataError::InvalidDims(format!(
                    "quadratic bowl needs condition_number >= 1 and lambda_max > 0, found {condition_number} and {lambda_max}"
                )));
            }
            // Geometric spectrum from lambda_max / condition up to lambda_max.
            let lambda_min = lambda_max / condition_number;
            let eigenvalues: Vec<f64> = (0..d)
                .map(|k| {
                    lambda_min * (lambda_max / lambda_min).powf(k as f64 / (d - 1) as f64)
                })
                .collect();
            let mut rng = SplitMix64::new(derive_seed(seed, 0x33c4));
            let w_star: Vec<f64> = (0..d).map(|_| rng.next_range(-1.0, 1.0)).collect();
            let mut inputs = Vec::with_capacity(n * d);
            let mut ys = Vec::with_capacity(n);
            for i in 0..n {
                let k = i % d;
                // Sample sqrt(lambda_k * d) e_k makes the mean outer product
                // over any full cycle equal diag(lambda).
                let scale = (eigenvalues[k] * d as f64).sqrt();
                for j in 0..d {
                    inputs.push(if j == k { scale } else { 0.0 });
                }
                ys.push(scale * w_star[k]);
            }
            Dataset::build(
                inputs,
                d,
                Targets::Regression { values: ys, dim: 1 },
                Provenance::Synthetic(spec.clone()),
                Some(*lambda_max),
                seed,
                holdout_fraction,
            )
        }
    }
}

/// Declares which CSV columns are targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CsvSchema {
    /// Named regression target columns; everything else is an input feature.
    TargetColumns(Vec<String>),
    /// Named integer label column; everything else is an input feature.
    LabelColumn(String),
}

/// Loads a headered, all-numeric CSV file.
pub fn load_csv(
    path: &Path,
    schema: &CsvSchema,
    seed: u64,
    holdout_fraction: f64,
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DataError::CsvParse { line: 0, message: e.to_string() })?;
    let headers: Vec<String> =
        reader
            .headers()
            .map_err(|e| DataError::CsvParse { line: 1, message: e.to_string() })?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();

    let target_cols: Vec<usize> = match schema {
        CsvSchema::TargetColumns(names) => names
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| DataError::MissingColumn { column: name.clone() })
            })
            .collect::<Result<_, _>>()?,
        CsvSchema::LabelColumn(name) => vec![headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn { column: name.clone() })?],
    };
    let input_cols: Vec<usize> =
        (0..headers.len()).filter(|c| !target_cols.contains(c)).collect();
    if input_cols.is_empty() {
        return Err(DataError::InvalidDims("csv has no input columns".into()));
    }

    let mut inputs = Vec::new();
    let mut reg_values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0usize;
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record =
            record.map_err(|e| DataError::CsvParse { line, message: e.to_string() })?;
        let parse = |col: usize| -> Result<f64, DataError> {
            let cell = record.get(col).ok_or_else(|| DataError::CsvParse {
                line,
                message: format!("missing column {}", headers[col]),
            })?;
            cell.trim().parse::<f64>().map_err(|_| DataError::CsvParse {
                line,
                message: format!("non-numeric value {:?} in column {}", cell, headers[col]),
            })
        };
        for &c in &input_cols {
            inputs.push(parse(c)?);
        }
        match schema {
            CsvSchema::TargetColumns(_) => {
                for &c in &target_cols {
                    reg_values.push(parse(c)?);
                }
            }
            CsvSchema::LabelColumn(_) => {
                let v = parse(target_cols[0])?;
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(DataError::CsvParse {
                        line,
                        message: format!("label must be a non-negative integer, found {v}"),
                    });
                }
                labels.push(v as u32);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(DataError::EmptyCsv);
    }
    let targets = match schema {
        CsvSchema::TargetColumns(names) => {
            Targets::Regression { values: reg_values, dim: names.len() }
        }
        CsvSchema::LabelColumn(_) => Targets::Labels(labels),
    };
    Dataset::build(
        inputs,
        input_cols.len(),
        targets,
        Provenance::Csv(path.to_path_buf()),
        None,
        seed,
        holdout_fraction,
    )
}

/// Writes a dataset back out as CSV (inputs `x0..`, targets `y0..` or `label`).
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| DataError::CsvParse { line: 0, message: e.to_string() })?;
    let dim = dataset.dim();
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    match dataset.targets() {
        Targets::Regression { dim: tdim, .. } => {
            header.extend((0..*tdim).map(|i| format!("y{i}")));
        }
        Targets::Labels(_) => header.push("label".to_string()),
    }
    writer
        .write_record(&header)
        .map_err(|e| DataError::CsvParse { line: 0, message: e.to_string() })?;
    for i in 0..dataset.len() {
        let mut row: Vec<String> = dataset.row(i).iter().map(|v| format!("{v}")).collect();
        match dataset.targets() {
            Targets::Regression { values, dim: tdim } => {
                row.extend(values[i * tdim..(i + 1) * tdim].iter().map(|v| format!("{v}")));
            }
            Targets::Labels(labels) => row.push(labels[i].to_string()),
        }
        writer
            .write_record(&row)
            .map_err(|e| DataError::CsvParse { line: 0, message: e.to_string() })?;
    }
    writer.flush()?;
    Ok(())
}
