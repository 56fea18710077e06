//! Run configuration file: schema, defaults, validation and the effective
//! (fully defaulted) view the engine consumes.
//!
//! The file is TOML with sections `run`, `budget`, `objective`, `energy`,
//! `lr_grid`, `trainer`, `data` and a top-level `batch_candidates` list.
//! Only `run.seed` is mandatory; every other field has a documented default.
//! Unknown keys are rejected with their location. Defaults that come from
//! the optimization method's reference setup are annotated "method default"
//! in the effective rendering, everything else "artifact default".

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::{generate_synthetic, load_csv, CsvSchema, DataError, Dataset, SyntheticSpec};
use crate::energy::{SimPowerModel, SimPowerMonitor};
use crate::lr_explorer::{GridSpacing, LrGrid};
use crate::objective::ObjectiveWeights;
use crate::scheduler::{EngineConfig, PlateauRule, RunVariant, StopRule};
use crate::trainer::{BuiltinLearnerSpec, LearnerKind, Trainer};
use crate::types::RunBudget;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
}

// Raw file layout. Everything except run.seed is optional so the effective
// view can tell file values from defaults.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    run: RawRun,
    budget: Option<RawBudget>,
    objective: Option<RawObjective>,
    energy: Option<RawEnergy>,
    lr_grid: Option<RawGrid>,
    trainer: Option<RawTrainer>,
    data: Option<RawData>,
    batch_candidates: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    seed: u64,
    variant: Option<String>,
    out_dir: Option<String>,
    vanilla_lr: Option<f64>,
    stop: Option<RawStop>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStop {
    max_rounds: Option<u32>,
    epoch_cap: Option<u32>,
    plateau_patience: Option<u32>,
    plateau_min_delta: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBudget {
    exploratory_epochs_per_round: Option<u32>,
    thorough_epochs_per_round: Option<u32>,
    final_thorough_epochs: Option<u32>,
    exploration_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawObjective {
    alpha: Option<f64>,
    beta: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnergy {
    p_idle_w: Option<f64>,
    p_max_w: Option<f64>,
    gamma: Option<f64>,
    b_sat: Option<usize>,
    s_max: Option<f64>,
    kappa: Option<f64>,
    noise_rel: Option<f64>,
    noise_seed: Option<u64>,
    poll_interval_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    lr_min: Option<f64>,
    lr_max: Option<f64>,
    count: Option<usize>,
    spacing: Option<String>,
    window_size: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrainer {
    kind: Option<String>,
    input_dim: Option<usize>,
    output_dim: Option<usize>,
    hidden_dims: Option<Vec<usize>>,
    init_scale: Option<f64>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    source: Option<String>,
    kind: Option<String>,
    n_samples: Option<usize>,
    input_dim: Option<usize>,
    separation: Option<f64>,
    noise_sigma: Option<f64>,
    condition_number: Option<f64>,
    lambda_max: Option<f64>,
    csv_path: Option<String>,
    target_columns: Option<Vec<String>>,
    label_column: Option<String>,
    holdout_fraction: Option<f64>,
    loader_capacity: Option<usize>,
    reshuffle_per_epoch: Option<bool>,
}

/// Parsed config file, prior to defaulting.
#[derive(Debug)]
pub struct RunConfigFile {
    raw: RawConfig,
}

#[derive(Debug, Clone)]
pub enum DataSpec {
    Synthetic(SyntheticSpec),
    Csv { path: PathBuf, schema: CsvSchema },
}

/// Fully defaulted and validated configuration.
#[derive(Debug)]
pub struct EffectiveConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub engine: EngineConfig,
    pub power_model: SimPowerModel,
    pub poll_interval_s: f64,
    pub trainer_spec: BuiltinLearnerSpec,
    pub data: DataSpec,
    pub holdout_fraction: f64,
    /// `(key, rendered value, source)` in render order.
    annotations: Vec<(String, String, &'static str)>,
}

const FROM_FILE: &str = "from file";
const METHOD_DEFAULT: &str = "method default";
const ARTIFACT_DEFAULT: &str = "artifact default";

/// Tracks whether each value came from the file or a default while building
/// the effective view.
struct Annotator {
    lines: Vec<(String, String, &'static str)>,
}

impl Annotator {
    fn new() -> Self {
        Self { lines: Vec::new() }
    }

    fn take<T: Clone + std::fmt::Debug>(
        &mut self,
        key: &str,
        value: Option<T>,
        default: T,
        default_kind: &'static str,
    ) -> T {
        match value {
            Some(v) => {
                self.lines.push((key.to_string(), format!("{v:?}"), FROM_FILE));
                v
            }
            None => {
                self.lines.push((key.to_string(), format!("{default:?}"), default_kind));
                default
            }
        }
    }

    fn note(&mut self, key: &str, value: String, source: &'static str) {
        self.lines.push((key.to_string(), value, source));
    }
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        if text.trim().is_empty() {
            return Err(ConfigError::Parse(
                "config file is empty; at least [run] with a seed is required".into(),
            ));
        }
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Ok(Self { raw })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::Invalid(format!("cannot read config file {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    /// Applies defaults and validates every field.
    pub fn effective(self) -> Result<EffectiveConfig, ConfigError> {
        let raw = self.raw;
        let mut notes = Annotator::new();
        let seed = raw.run.seed;
        notes.note("run.seed", format!("{seed}"), FROM_FILE);

        let variant_str = notes.take(
            "run.variant",
            raw.run.variant.clone(),
            "sm2".to_string(),
            ARTIFACT_DEFAULT,
        );
        let variant = match variant_str.as_str() {
            "sm2" => RunVariant::Sm2,
            "vanilla" => RunVariant::Vanilla,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "run.variant must be \"sm2\" or \"vanilla\", found {other:?}"
                )))
            }
        };
        let out_dir = raw.run.out_dir.clone().map(PathBuf::from);

        let batch_candidates = notes.take(
            "batch_candidates",
            raw.batch_candidates.clone(),
            vec![8, 16, 32, 64, 128, 256, 512, 1024],
            METHOD_DEFAULT,
        );
        if batch_candidates.is_empty() {
            return Err(ConfigError::Invalid("batch_candidates must not be empty".into()));
        }
        if batch_candidates.iter().any(|&b| b < 1) {
            return Err(ConfigError::Invalid("batch_candidates must be >= 1".into()));
        }
        let micro = *batch_candidates.iter().min().unwrap();
        for &b in &batch_candidates {
            if b % micro != 0 {
                return Err(ConfigError::Invalid(format!(
                    "batch candidate {b} is not a multiple of the smallest candidate {micro}; the concatenating loader requires divisibility"
                )));
            }
        }

        let budget_raw = raw.budget.as_ref();
        let budget_part = RunBudget {
            max_rounds: 1, // placeholder; stop rule holds the real bound
            exploratory_epochs_per_round: notes.take(
                "budget.exploratory_epochs_per_round",
                budget_raw.and_then(|b| b.exploratory_epochs_per_round),
                1,
                METHOD_DEFAULT,
            ),
            thorough_epochs_per_round: notes.take(
                "budget.thorough_epochs_per_round",
                budget_raw.and_then(|b| b.thorough_epochs_per_round),
                5,
                METHOD_DEFAULT,
            ),
            final_thorough_epochs: notes.take(
                "budget.final_thorough_epochs",
                budget_raw.and_then(|b| b.final_thorough_epochs),
                10,
                METHOD_DEFAULT,
            ),
            exploration_fraction: notes.take(
                "budget.exploration_fraction",
                budget_raw.and_then(|b| b.exploration_fraction),
                0.25,
                METHOD_DEFAULT,
            ),
            total_epoch_cap: 1, // filled below
        };

        let stop_raw = raw.run.stop.as_ref();
        let n0 = batch_candidates.len() as u32;
        let default_rounds = (n0 as f64).log2().ceil() as u32 + 2;
        let max_rounds = notes.take(
            "run.stop.max_rounds",
            stop_raw.and_then(|s| s.max_rounds),
            default_rounds,
            ARTIFACT_DEFAULT,
        );
        let default_cap = max_rounds
            * n0
            * (budget_part.exploratory_epochs_per_round + budget_part.final_thorough_epochs);
        let epoch_cap = notes.take(
            "run.stop.epoch_cap",
            stop_raw.and_then(|s| s.epoch_cap),
            default_cap,
            ARTIFACT_DEFAULT,
        );
        let plateau = PlateauRule {
            patience: notes.take(
                "run.stop.plateau_patience",
                stop_raw.and_then(|s| s.plateau_patience),
                2,
                ARTIFACT_DEFAULT,
            ),
            min_delta: notes.take(
                "run.stop.plateau_min_delta",
                stop_raw.and_then(|s| s.plateau_min_delta),
                1e-4,
                ARTIFACT_DEFAULT,
            ),
        };
        let budget = RunBudget { max_rounds, total_epoch_cap: epoch_cap, ..budget_part };
        budget.validate().map_err(ConfigError::Invalid)?;

        let obj_raw = raw.objective.as_ref();
        let weights = ObjectiveWeights {
            alpha: notes.take(
                "objective.alpha",
                obj_raw.and_then(|o| o.alpha),
                0.75,
                METHOD_DEFAULT,
            ),
            beta: notes.take(
                "objective.beta",
                obj_raw.and_then(|o| o.beta),
                0.5,
                METHOD_DEFAULT,
            ),
        };
        weights.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let energy_raw = raw.energy.as_ref();
        let default_model = SimPowerModel::default();
        let power_model = SimPowerModel {
            p_idle_w: notes.take(
                "energy.p_idle_w",
                energy_raw.and_then(|e| e.p_idle_w),
                default_model.p_idle_w,
                ARTIFACT_DEFAULT,
            ),
            p_max_w: notes.take(
                "energy.p_max_w",
                energy_raw.and_then(|e| e.p_max_w),
                default_model.p_max_w,
                ARTIFACT_DEFAULT,
            ),
            gamma: notes.take(
                "energy.gamma",
                energy_raw.and_then(|e| e.gamma),
                default_model.gamma,
                ARTIFACT_DEFAULT,
            ),
            b_sat: notes.take(
                "energy.b_sat",
                energy_raw.and_then(|e| e.b_sat),
                default_model.b_sat,
                ARTIFACT_DEFAULT,
            ),
            s_max: notes.take(
                "energy.s_max",
                energy_raw.and_then(|e| e.s_max),
                default_model.s_max,
                ARTIFACT_DEFAULT,
            ),
            kappa: notes.take(
                "energy.kappa",
                energy_raw.and_then(|e| e.kappa),
                default_model.kappa,
                ARTIFACT_DEFAULT,
            ),
            noise_rel: notes.take(
                "energy.noise_rel",
                energy_raw.and_then(|e| e.noise_rel),
                default_model.noise_rel,
                ARTIFACT_DEFAULT,
            ),
            noise_seed: notes.take(
                "energy.noise_seed",
                energy_raw.and_then(|e| e.noise_seed),
                crate::rng::derive_seed(seed, 0xE7),
                ARTIFACT_DEFAULT,
            ),
        };
        power_model.validate().map_err(ConfigError::Invalid)?;
        let poll_interval_s = notes.take(
            "energy.poll_interval_s",
            energy_raw.and_then(|e| e.poll_interval_s),
            0.1,
            ARTIFACT_DEFAULT,
        );
        if !(poll_interval_s > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "energy.poll_interval_s must be positive, found {poll_interval_s}"
            )));
        }

        let grid_raw = raw.lr_grid.as_ref();
        let spacing_str = notes.take(
            "lr_grid.spacing",
            grid_raw.and_then(|g| g.spacing.clone()),
            "log".to_string(),
            ARTIFACT_DEFAULT,
        );
        let spacing = match spacing_str.as_str() {
            "log" => GridSpacing::Log,
            "linear" => GridSpacing::Linear,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "lr_grid.spacing must be \"log\" or \"linear\", found {other:?}"
                )))
            }
        };
        let grid = LrGrid {
            lr_min: notes.take(
                "lr_grid.lr_min",
                grid_raw.and_then(|g| g.lr_min),
                0.001,
                METHOD_DEFAULT,
            ),
            lr_max: notes.take(
                "lr_grid.lr_max",
                grid_raw.and_then(|g| g.lr_max),
                1.0,
                METHOD_DEFAULT,
            ),
            count: notes.take(
                "lr_grid.count",
                grid_raw.and_then(|g| g.count),
                20,
                METHOD_DEFAULT,
            ),
            spacing,
        };
        grid.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let window_size = notes.take(
            "lr_grid.window_size",
            grid_raw.and_then(|g| g.window_size),
            5,
            ARTIFACT_DEFAULT,
        );
        if window_size < 1 || window_size + 2 > grid.count {
            return Err(ConfigError::Invalid(format!(
                "lr_grid.window_size must lie in [1, count - 2] = [1, {}], found {window_size}",
                grid.count - 2
            )));
        }

        let trainer_raw = raw.trainer.as_ref();
        let kind_str = notes.take(
            "trainer.kind",
            trainer_raw.and_then(|t| t.kind.clone()),
            "logistic_classifier".to_string(),
            ARTIFACT_DEFAULT,
        );
        let kind = match kind_str.as_str() {
            "linear_regression" => LearnerKind::LinearRegression,
            "logistic_classifier" => LearnerKind::LogisticClassifier,
            "tiny_mlp" => LearnerKind::TinyMlp,
            other => {
                return Err(ConfigError::Invalid(format!(
                    "trainer.kind must be one of linear_regression, logistic_classifier, tiny_mlp; found {other:?}"
                )))
            }
        };
        let trainer_spec = BuiltinLearnerSpec {
            kind,
            input_dim: notes.take(
                "trainer.input_dim",
                trainer_raw.and_then(|t| t.input_dim),
                4,
                ARTIFACT_DEFAULT,
            ),
            output_dim: notes.take(
                "trainer.output_dim",
                trainer_raw.and_then(|t| t.output_dim),
                1,
                ARTIFACT_DEFAULT,
            ),
            hidden_dims: notes.take(
                "trainer.hidden_dims",
                trainer_raw.and_then(|t| t.hidden_dims.clone()),
                vec![16],
                ARTIFACT_DEFAULT,
            ),
            init_scale: notes.take(
                "trainer.init_scale",
                trainer_raw.and_then(|t| t.init_scale),
                0.1,
                ARTIFACT_DEFAULT,
            ),
            seed: notes.take(
                "trainer.seed",
                trainer_raw.and_then(|t| t.seed),
                crate::rng::derive_seed(seed, 0x7A),
                ARTIFACT_DEFAULT,
            ),
        };
        trainer_spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;

        let data_raw = raw.data.as_ref();
        let holdout_fraction = notes.take(
            "data.holdout_fraction",
            data_raw.and_then(|d| d.holdout_fraction),
            0.1,
            ARTIFACT_DEFAULT,
        );
        if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "data.holdout_fraction must lie in (0, 1), found {holdout_fraction}"
            )));
        }
        let loader_capacity = data_raw.and_then(|d| d.loader_capacity);
        notes.note(
            "data.loader_capacity",
            loader_capacity.map_or("unbounded".to_string(), |c| c.to_string()),
            if loader_capacity.is_some() { FROM_FILE } else { ARTIFACT_DEFAULT },
        );
        let reshuffle_per_epoch = notes.take(
            "data.reshuffle_per_epoch",
            data_raw.and_then(|d| d.reshuffle_per_epoch),
            false,
            ARTIFACT_DEFAULT,
        );
        let source = notes.take(
            "data.source",
            data_raw.and_then(|d| d.source.clone()),
            "synthetic".to_string(),
            ARTIFACT_DEFAULT,
        );
        let data = match source.as_str() {
            "synthetic" => {
                let kind = notes.take(
                    "data.kind",
                    data_raw.and_then(|d| d.kind.clone()),
                    "two_gaussians".to_string(),
                    ARTIFACT_DEFAULT,
                );
                let n_samples = notes.take(
                    "data.n_samples",
                    data_raw.and_then(|d| d.n_samples),
                    102_400,
                    ARTIFACT_DEFAULT,
                );
                let input_dim = notes.take(
                    "data.input_dim",
                    data_raw.and_then(|d| d.input_dim),
                    trainer_spec.input_dim,
                    ARTIFACT_DEFAULT,
                );
                let spec = match kind.as_str() {
                    "two_gaussians" => SyntheticSpec::TwoGaussians {
                        n_samples,
                        input_dim,
                        separation: notes.take(
                            "data.separation",
                            data_raw.and_then(|d| d.separation),
                            2.0,
                            ARTIFACT_DEFAULT,
                        ),
                    },
                    "linear_regression" => SyntheticSpec::LinearRegression {
                        n_samples,
                        input_dim,
                        noise_sigma: notes.take(
                            "data.noise_sigma",
                            data_raw.and_then(|d| d.noise_sigma),
                            0.05,
                            ARTIFACT_DEFAULT,
                        ),
                    },
                    "quadratic_bowl" => SyntheticSpec::QuadraticBowl {
                        n_samples,
                        input_dim,
                        condition_number: notes.take(
                            "data.condition_number",
                            data_raw.and_then(|d| d.condition_number),
                            10.0,
                            ARTIFACT_DEFAULT,
                        ),
                        lambda_max: notes.take(
                            "data.lambda_max",
                            data_raw.and_then(|d| d.lambda_max),
                            50.0,
                            ARTIFACT_DEFAULT,
                        ),
                    },
                    other => {
                        return Err(ConfigError::Invalid(format!(
                            "data.kind must be one of two_gaussians, linear_regression, quadratic_bowl; found {other:?}"
                        )))
                    }
                };
                DataSpec::Synthetic(spec)
            }
            "csv" => {
                let path = data_raw.and_then(|d| d.csv_path.clone()).ok_or_else(|| {
                    ConfigError::Invalid("data.csv_path is required when data.source = \"csv\"".into())
                })?;
                notes.note("data.csv_path", path.clone(), FROM_FILE);
                let schema = match (
                    data_raw.and_then(|d| d.target_columns.clone()),
                    data_raw.and_then(|d| d.label_column.clone()),
                ) {
                    (Some(cols), None) => CsvSchema::TargetColumns(cols),
                    (None, Some(col)) => CsvSchema::LabelColumn(col),
                    _ => {
                        return Err(ConfigError::Invalid(
                            "csv data needs exactly one of data.target_columns or data.label_column".into(),
                        ))
                    }
                };
                DataSpec::Csv { path: PathBuf::from(path), schema }
            }
            other => {
                return Err(ConfigError::Invalid(format!(
                    "data.source must be \"synthetic\" or \"csv\", found {other:?}"
                )))
            }
        };

        // Trainer and data must agree on dimensionality and target kind.
        match &data {
            DataSpec::Synthetic(spec) => {
                let (data_dim, labelled) = match spec {
                    SyntheticSpec::TwoGaussians { input_dim, .. } => (*input_dim, true),
                    SyntheticSpec::LinearRegression { input_dim, .. } => (*input_dim, false),
                    SyntheticSpec::QuadraticBowl { input_dim, .. } => (*input_dim, false),
                };
                if data_dim != trainer_spec.input_dim {
                    return Err(ConfigError::Invalid(format!(
                        "data.input_dim {data_dim} does not match trainer.input_dim {}",
                        trainer_spec.input_dim
                    )));
                }
                let wants_labels = matches!(kind, LearnerKind::LogisticClassifier);
                if labelled != wants_labels {
                    return Err(ConfigError::Invalid(format!(
                        "trainer.kind {kind_str} and data.kind do not agree on label vs regression targets"
                    )));
                }
                if !labelled && trainer_spec.output_dim != 1 {
                    return Err(ConfigError::Invalid(
                        "synthetic regression data has one target; trainer.output_dim must be 1".into(),
                    ));
                }
            }
            DataSpec::Csv { schema, .. } => {
                let wants_labels = matches!(kind, LearnerKind::LogisticClassifier);
                let has_labels = matches!(schema, CsvSchema::LabelColumn(_));
                if wants_labels != has_labels {
                    return Err(ConfigError::Invalid(
                        "csv target schema does not match the trainer kind".into(),
                    ));
                }
                if let CsvSchema::TargetColumns(cols) = schema {
                    if cols.len() != trainer_spec.output_dim {
                        return Err(ConfigError::Invalid(format!(
                            "{} csv target columns for trainer.output_dim {}",
                            cols.len(),
                            trainer_spec.output_dim
                        )));
                    }
                }
            }
        }

        let initial_lr = match variant {
            RunVariant::Sm2 => {
                // Exploration overwrites it before any thorough epoch.
                grid.lr_min
            }
            RunVariant::Vanilla => {
                let lr = raw.run.vanilla_lr.ok_or_else(|| {
                    ConfigError::Invalid(
                        "run.vanilla_lr is required when run.variant = \"vanilla\"".into(),
                    )
                })?;
                notes.note("run.vanilla_lr", format!("{lr}"), FROM_FILE);
                if !(lr >= grid.lr_min && lr <= grid.lr_max) {
                    return Err(ConfigError::Invalid(format!(
                        "run.vanilla_lr {lr} lies outside the lr_grid range [{}, {}]",
                        grid.lr_min, grid.lr_max
                    )));
                }
                lr
            }
        };
        if matches!(variant, RunVariant::Vanilla) && batch_candidates.len() != 1 {
            return Err(ConfigError::Invalid(
                "run.variant = \"vanilla\" takes exactly one batch candidate".into(),
            ));
        }

        let fingerprint = fingerprint(seed, &data, &trainer_spec, &power_model, poll_interval_s);
        let engine = EngineConfig {
            seed,
            batch_candidates,
            budget,
            weights,
            grid,
            window_size,
            stop: StopRule { max_rounds, epoch_cap, plateau: Some(plateau) },
            variant,
            loader_capacity,
            reshuffle_per_epoch,
            initial_lr,
            fingerprint,
        };

        Ok(EffectiveConfig {
            seed,
            out_dir,
            engine,
            power_model,
            poll_interval_s,
            trainer_spec,
            data,
            holdout_fraction,
            annotations: notes.lines,
        })
    }
}

/// Experiment identity: everything two runs must share to be comparable
/// (data, trainer, seed, power model). Objective weights, the schedule and
/// the run variant are deliberately excluded.
fn fingerprint(
    seed: u64,
    data: &DataSpec,
    trainer: &BuiltinLearnerSpec,
    model: &SimPowerModel,
    poll_interval_s: f64,
) -> String {
    let data_desc = match data {
        DataSpec::Synthetic(spec) => serde_json::to_string(spec).unwrap(),
        DataSpec::Csv { path, schema } => {
            format!("csv:{}:{}", path.display(), serde_json::to_string(schema).unwrap())
        }
    };
    let payload = format!(
        "{seed}|{data_desc}|{}|{}|{poll_interval_s}",
        serde_json::to_string(trainer).unwrap(),
        serde_json::to_string(model).unwrap(),
    );
    let mut hasher = Sha256::new();
    hasher.update(payload.as_bytes());
    format!("{:x}", hasher.finalize())
}

impl EffectiveConfig {
    /// Loads or generates the configured dataset.
    pub fn load_dataset(&self) -> Result<Dataset, ConfigError> {
        let dataset = match &self.data {
            DataSpec::Synthetic(spec) => {
                generate_synthetic(spec, self.seed, self.holdout_fraction)?
            }
            DataSpec::Csv { path, schema } => {
                load_csv(path, schema, self.seed, self.holdout_fraction)?
            }
        };
        Ok(dataset)
    }

    /// One trainer per batch candidate, all from the same seed so every
    /// configuration starts from identical parameters.
    pub fn build_trainers(&self) -> Result<Vec<Box<dyn Trainer>>, ConfigError> {
        (0..self.engine.batch_candidates.len())
            .map(|_| {
                self.trainer_spec
                    .build()
                    .map(|t| Box::new(t) as Box<dyn Trainer>)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))
            })
            .collect()
    }

    pub fn build_monitor(&self) -> SimPowerMonitor {
        SimPowerMonitor::new(self.power_model.clone(), self.poll_interval_s)
    }

    /// Deterministic annotated rendering of every effective value.
    pub fn render_annotated(&self) -> String {
        let width = self
            .annotations
            .iter()
            .map(|(k, v, _)| k.len() + v.len())
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        out.push_str(&format!("fingerprint = {}\n", self.engine.fingerprint));
        for (key, value, source) in &self.annotations {
            let pad = width + 3 - key.len() - value.len();
            out.push_str(&format!("{key} = {value}{:pad$}# {source}\n", ""));
        }
        out
    }

    /// Checks that the dataset supports the configured exploration load.
    pub fn validate_against_dataset(&self, dataset: &Dataset) -> Result<(), ConfigError> {
        if matches!(self.engine.variant, RunVariant::Vanilla) {
            return Ok(());
        }
        let micro = *self.engine.batch_candidates.iter().min().unwrap();
        let n_train = dataset.train_indices().len();
        let n_micro = n_train / micro;
        let blocks =
            ((n_micro as f64) * self.engine.budget.exploration_fraction).floor() as usize;
        for &b in &self.engine.batch_candidates {
            let batches = blocks / (b / micro);
            if batches < self.engine.grid.count {
                return Err(ConfigError::Invalid(format!(
                    "batch candidate {b} yields only {batches} exploration batches for lr_grid.count = {}; enlarge data.n_samples or budget.exploration_fraction, or shrink the grid",
                    self.engine.grid.count
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[run]\nseed = 42\n";

    #[test]
    fn minimal_config_gets_method_defaults() {
        let cfg = RunConfigFile::parse(MINIMAL).unwrap().effective().unwrap();
        assert_eq!(cfg.engine.grid.count, 20);
        assert_eq!(cfg.engine.grid.lr_min, 0.001);
        assert_eq!(cfg.engine.grid.lr_max, 1.0);
        assert_eq!(cfg.engine.weights.alpha, 0.75);
        assert_eq!(cfg.engine.weights.beta, 0.5);
        assert_eq!(cfg.engine.budget.exploration_fraction, 0.25);
        assert_eq!(cfg.engine.budget.thorough_epochs_per_round, 5);
        assert_eq!(cfg.engine.budget.final_thorough_epochs, 10);
        assert_eq!(
            cfg.engine.batch_candidates,
            vec![8, 16, 32, 64, 128, 256, 512, 1024]
        );
        assert_eq!(cfg.engine.stop.max_rounds, 5);
        let rendered = cfg.render_annotated();
        assert!(rendered.contains("lr_grid.count = 20"));
        assert!(rendered.contains("method default"));
        assert!(rendered.contains("artifact default"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = RunConfigFile::parse(MINIMAL).unwrap().effective().unwrap();
        let b = RunConfigFile::parse(MINIMAL).unwrap().effective().unwrap();
        assert_eq!(a.render_annotated(), b.render_annotated());
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(RunConfigFile::parse("  \n"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn unknown_key_is_rejected_with_location() {
        let err = RunConfigFile::parse("[run]\nseed = 1\nbogus_key = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus_key"), "{msg}");
    }

    #[test]
    fn alpha_out_of_range_names_field_and_bound() {
        let text = "[run]\nseed = 1\n[objective]\nalpha = 1.5\n";
        let err = RunConfigFile::parse(text).unwrap().effective().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alpha"), "{msg}");
        assert!(msg.contains("[0, 1]"), "{msg}");
        assert!(msg.contains("1.5"), "{msg}");
    }

    #[test]
    fn non_multiple_candidate_names_divisibility() {
        let text = "batch_candidates = [8, 12]\n[run]\nseed = 1\n";
        let err = RunConfigFile::parse(text).unwrap().effective().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("12"), "{msg}");
        assert!(msg.contains("multiple"), "{msg}");
    }

    #[test]
    fn vanilla_requires_lr_and_single_candidate() {
        let text = "batch_candidates = [64]\n[run]\nseed = 1\nvariant = \"vanilla\"\n";
        let err = RunConfigFile::parse(text).unwrap().effective().unwrap_err();
        assert!(err.to_string().contains("vanilla_lr"));

        let text =
            "batch_candidates = [64]\n[run]\nseed = 1\nvariant = \"vanilla\"\nvanilla_lr = 0.05\n";
        let cfg = RunConfigFile::parse(text).unwrap().effective().unwrap();
        assert_eq!(cfg.engine.initial_lr, 0.05);

        let text = "[run]\nseed = 1\nvariant = \"vanilla\"\nvanilla_lr = 0.05\n";
        assert!(RunConfigFile::parse(text).unwrap().effective().is_err());
    }

    #[test]
    fn exploration_load_check_names_candidate() {
        let text = "[run]\nseed = 1\n[data]\nn_samples = 4096\n";
        let cfg = RunConfigFile::parse(text).unwrap().effective().unwrap();
        let dataset = cfg.load_dataset().unwrap();
        let err = cfg.validate_against_dataset(&dataset).unwrap_err();
        // The first candidate that cannot fill the grid is named.
        assert!(err.to_string().contains("batch candidate 64"), "{err}");
    }

    #[test]
    fn fingerprint_ignores_weights_but_tracks_seed() {
        let base = RunConfigFile::parse(MINIMAL).unwrap().effective().unwrap();
        let with_alpha = RunConfigFile::parse("[run]\nseed = 42\n[objective]\nalpha = 1.0\n")
            .unwrap()
            .effective()
            .unwrap();
        assert_eq!(base.engine.fingerprint, with_alpha.engine.fingerprint);
        let other_seed = RunConfigFile::parse("[run]\nseed = 43\n")
            .unwrap()
            .effective()
            .unwrap();
        assert_ne!(base.engine.fingerprint, other_seed.engine.fingerprint);
    }

    #[test]
    fn trainer_data_mismatch_is_rejected() {
        let text = "[run]\nseed = 1\n[trainer]\nkind = \"linear_regression\"\n";
        // default data is two_gaussians (labels) -> mismatch
        let err = RunConfigFile::parse(text).unwrap().effective().unwrap_err();
        assert!(err.to_string().contains("label"));
    }
}
