//! Built-in learners: linear regression, binary logistic classifier and a
//! tanh MLP regressor. All three keep their parameters in one flat vector
//! and step with plain SGD, which keeps snapshots exact and small.

use super::{
    ByteReader, ByteWriter, LearnerKind, LrSchedule, SnapshotError, Trainer, TrainerError,
    TrainerSnapshot, BuiltinLearnerSpec, SNAPSHOT_MAGIC, SNAPSHOT_VERSION,
};
use crate::dataio::{BatchRef, EvalSet, Targets, TargetsRef};
use crate::rng::SplitMix64;
use crate::types::MetricPolarity;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Shape {
    /// `output_dim x input_dim` weights plus `output_dim` biases.
    LinearRegression { input_dim: usize, output_dim: usize },
    /// `input_dim` weights plus one bias; binary labels.
    Logistic { input_dim: usize },
    /// Fully-connected tanh layers `dims[0] -> ... -> dims.last()`, linear
    /// output.
    Mlp { dims: Vec<usize> },
}

impl Shape {
    fn param_count(&self) -> usize {
        match self {
            Shape::LinearRegression { input_dim, output_dim } => {
                output_dim * input_dim + output_dim
            }
            Shape::Logistic { input_dim } => input_dim + 1,
            Shape::Mlp { dims } => {
                dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
            }
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Shape::LinearRegression { .. } => "linear_regression",
            Shape::Logistic { .. } => "logistic_classifier",
            Shape::Mlp { .. } => "tiny_mlp",
        }
    }
}

pub struct BuiltinLearner {
    shape: Shape,
    params: Vec<f64>,
    rng: SplitMix64,
    steps: u64,
    init_scale: f64,
}

impl BuiltinLearner {
    pub(super) fn from_spec(spec: &BuiltinLearnerSpec) -> Self {
        let shape = match spec.kind {
            LearnerKind::LinearRegression => Shape::LinearRegression {
                input_dim: spec.input_dim,
                output_dim: spec.output_dim,
            },
            LearnerKind::LogisticClassifier => Shape::Logistic { input_dim: spec.input_dim },
            LearnerKind::TinyMlp => {
                let mut dims = vec![spec.input_dim];
                dims.extend_from_slice(&spec.hidden_dims);
                dims.push(spec.output_dim);
                Shape::Mlp { dims }
            }
        };
        let mut learner = Self {
            shape,
            params: Vec::new(),
            rng: SplitMix64::new(spec.seed),
            steps: 0,
            init_scale: spec.init_scale,
        };
        learner.init_params();
        learner
    }

    fn init_params(&mut self) {
        let n = self.shape.param_count();
        self.params = (0..n).map(|_| self.rng.next_gaussian() * self.init_scale).collect();
    }

    pub fn step_count(&self) -> u64 {
        self.steps
    }

    /// Pre-step loss and the gradient w.r.t. every parameter, both averaged
    /// over the batch.
    fn loss_and_grad(&self, batch: &BatchRef<'_>) -> Result<(f64, Vec<f64>), TrainerError> {
        let n = batch.len();
        if n == 0 {
            return Err(TrainerError::TargetMismatch("empty batch".into()));
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        match &self.shape {
            Shape::LinearRegression { input_dim: d, output_dim: m } => {
                let (targets, tdim) = regression_targets(&batch.targets, self.shape.kind())?;
                if tdim != *m {
                    return Err(TrainerError::TargetMismatch(format!(
                        "target dim {tdim} != output dim {m}"
                    )));
                }
                let inv = 1.0 / n as f64;
                for i in 0..n {
                    let x = &batch.inputs[i * d..(i + 1) * d];
                    let y = &targets[i * m..(i + 1) * m];
                    for j in 0..*m {
                        let row = &self.params[j * d..(j + 1) * d];
                        let bias = self.params[m * d + j];
                        let pred: f64 =
                            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias;
                        let err = pred - y[j];
                        loss += 0.5 * err * err * inv;
                        for k in 0..*d {
                            grad[j * d + k] += err * x[k] * inv;
                        }
                        grad[m * d + j] += err * inv;
                    }
                }
            }
            Shape::Logistic { input_dim: d } => {
                let labels = label_targets(&batch.targets, self.shape.kind())?;
                let inv = 1.0 / n as f64;
                for i in 0..n {
                    let x = &batch.inputs[i * d..(i + 1) * d];
                    let y = labels[i] as f64;
                    let z: f64 = self.params[..*d]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
                        + self.params[*d];
                    // softplus(z) - y*z, numerically stable
                    loss += (z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z) * inv;
                    let sigma = 1.0 / (1.0 + (-z).exp());
                    let err = sigma - y;
                    for k in 0..*d {
                        grad[k] += err * x[k] * inv;
                    }
                    grad[*d] += err * inv;
                }
            }
            Shape::Mlp { dims } => {
                let (targets, tdim) = regression_targets(&batch.targets, self.shape.kind())?;
                let out_dim = *dims.last().unwrap();
                if tdim != out_dim {
                    return Err(TrainerError::TargetMismatch(format!(
                        "target dim {tdim} != output dim {out_dim}"
                    )));
                }
                let inv = 1.0 / n as f64;
                let offsets = mlp_offsets(dims);
                for i in 0..n {
                    let x = &batch.inputs[i * dims[0]..(i + 1) * dims[0]];
                    let y = &targets[i * out_dim..(i + 1) * out_dim];
                    // forward, keeping post-activation values per layer
                    let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
                    for (l, w) in dims.windows(2).enumerate() {
                        let (fan_in, fan_out) = (w[0], w[1]);
                        let (w_off, b_off) = offsets[l];
                        let prev = &acts[l];
                        let last_layer = l == dims.len() - 2;
                        let mut out = Vec::with_capacity(fan_out);
                        for j in 0..fan_out {
                            let row =
                                &self.params[w_off + j * fan_in..w_off + (j + 1) * fan_in];
                            let z: f64 = row
                                .iter()
                                .zip(prev)
                                .map(|(w, v)| w * v)
                                .sum::<f64>()
                                + self.params[b_off + j];
                            out.push(if last_layer { z } else { z.tanh() });
                        }
                        acts.push(out);
                    }
                    let pred = acts.last().unwrap();
                    let mut delta: Vec<f64> =
                        pred.iter().zip(y).map(|(p, t)| (p - t) * inv).collect();
                    loss += pred
                        .iter()
                        .zip(y)
                        .map(|(p, t)| 0.5 * (p - t) * (p - t) * inv)
                        .sum::<f64>();
                    // backward
                    for l in (0..dims.len() - 1).rev() {
                        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                        let (w_off, b_off) = offsets[l];
                        let prev = &acts[l];
                        let mut delta_prev = vec![0.0; fan_in];
                        for j in 0..fan_out {
                            for k in 0..fan_in {
                                grad[w_off + j * fan_in + k] += delta[j] * prev[k];
                                delta_prev[k] +=
                                    delta[j] * self.params[w_off + j * fan_in + k];
                            }
                            grad[b_off + j] += delta[j];
                        }
                        if l > 0 {
                            // tanh'(z) = 1 - tanh(z)^2, using the stored activation
                            for k in 0..fan_in {
                                delta_prev[k] *= 1.0 - prev[k] * prev[k];
                            }
                        }
                        delta = delta_prev;
                    }
                }
            }
        }
        Ok((loss, grad))
    }

    fn predict_row(&self, x: &[f64]) -> Vec<f64> {
        match &self.shape {
            Shape::LinearRegression { input_dim: d, output_dim: m } => (0..*m)
                .map(|j| {
                    self.params[j * d..(j + 1) * d]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
                        + self.params[m * d + j]
                })
                .collect(),
            Shape::Logistic { input_dim: d } => {
                let z: f64 = self.params[..*d]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
                    + self.params[*d];
                vec![z]
            }
            Shape::Mlp { dims } => {
                let offsets = mlp_offsets(dims);
                let mut act = x.to_vec();
                for (l, w) in dims.windows(2).enumerate() {
                    let (fan_in, fan_out) = (w[0], w[1]);
                    let (w_off, b_off) = offsets[l];
                    let last_layer = l == dims.len() - 2;
                    act = (0..fan_out)
                        .map(|j| {
                            let z: f64 = self.params
                                [w_off + j * fan_in..w_off + (j + 1) * fan_in]
                                .iter()
                                .zip(&act)
                                .map(|(w, v)| w * v)
                                .sum::<f64>()
                                + self.params[b_off + j];
                            if last_layer {
                                z
                            } else {
                                z.tanh()
                            }
                        })
                        .collect();
                }
                act
            }
        }
    }
}

fn mlp_offsets(dims: &[usize]) -> Vec<(usize, usize)> {
    let mut offsets = Vec::new();
    let mut pos = 0;
    for w in dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        offsets.push((pos, pos + fan_out * fan_in));
        pos += fan_out * fan_in + fan_out;
    }
    offsets
}

fn regression_targets<'a>(
    targets: &TargetsRef<'a>,
    kind: &str,
) -> Result<(&'a [f64], usize), TrainerError> {
    match targets {
        TargetsRef::Regression { values, dim } => Ok((values, *dim)),
        TargetsRef::Labels(_) => Err(TrainerError::TargetMismatch(format!(
            "{kind} expects regression targets, found labels"
        ))),
    }
}

fn label_targets<'a>(targets: &TargetsRef<'a>, kind: &str) -> Result<&'a [u32], TrainerError> {
    match targets {
        TargetsRef::Labels(labels) => Ok(labels),
        TargetsRef::Regression { .. } => Err(TrainerError::TargetMismatch(format!(
            "{kind} expects labels, found regression targets"
        ))),
    }
}

impl Trainer for BuiltinLearner {
    fn kind(&self) -> &'static str {
        self.shape.kind()
    }

    fn train_batches(
        &mut self,
        batches: &[BatchRef<'_>],
        lrs: &LrSchedule<'_>,
    ) -> Result<Vec<f64>, TrainerError> {
        lrs.validate(batches.len())?;
        let mut losses = Vec::with_capacity(batches.len());
        for (i, batch) in batches.iter().enumerate() {
            let (loss, grad) = self.loss_and_grad(batch)?;
            if !loss.is_finite() {
                return Err(TrainerError::Divergence { batch_index: i });
            }
            let lr = lrs.at(i);
            for (p, g) in self.params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            self.steps += 1;
            losses.push(loss);
        }
        Ok(losses)
    }

    fn evaluate(&self, eval: &EvalSet) -> Result<(f64, MetricPolarity), TrainerError> {
        let dim = eval.dim;
        let n = eval.inputs.len() / dim.max(1);
        if n == 0 {
            return Err(TrainerError::EmptyEvalSet);
        }
        match &self.shape {
            Shape::LinearRegression { output_dim: m, .. } => {
                let (values, tdim) = match &eval.targets {
                    Targets::Regression { values, dim } => (values, *dim),
                    Targets::Labels(_) => {
                        return Err(TrainerError::TargetMismatch(
                            "linear_regression expects regression targets".into(),
                        ))
                    }
                };
                if tdim != *m {
                    return Err(TrainerError::TargetMismatch(format!(
                        "target dim {tdim} != output dim {m}"
                    )));
                }
                let mean_y = values.iter().sum::<f64>() / values.len() as f64;
                let mut ss_res = 0.0;
                let mut ss_tot = 0.0;
                for i in 0..n {
                    let pred = self.predict_row(&eval.inputs[i * dim..(i + 1) * dim]);
                    for j in 0..*m {
                        let y = values[i * m + j];
                        ss_res += (pred[j] - y) * (pred[j] - y);
                        ss_tot += (y - mean_y) * (y - mean_y);
                    }
                }
                // Degenerate constant targets: perfect fit counts as 1.
                let r2 = if ss_tot == 0.0 {
                    if ss_res < 1e-12 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    1.0 - ss_res / ss_tot
                };
                Ok((r2, MetricPolarity::HigherIsBetter))
            }
            Shape::Logistic { .. } => {
                let labels = match &eval.targets {
                    Targets::Labels(l) => l,
                    Targets::Regression { .. } => {
                        return Err(TrainerError::TargetMismatch(
                            "logistic_classifier expects labels".into(),
                        ))
                    }
                };
                let correct = (0..n)
                    .filter(|&i| {
                        let z = self.predict_row(&eval.inputs[i * dim..(i + 1) * dim])[0];
                        (z >= 0.0) == (labels[i] == 1)
                    })
                    .count();
                Ok((correct as f64 / n as f64, MetricPolarity::HigherIsBetter))
            }
            Shape::Mlp { dims } => {
                let out_dim = *dims.last().unwrap();
                let (values, tdim) = match &eval.targets {
                    Targets::Regression { values, dim } => (values, *dim),
                    Targets::Labels(_) => {
                        return Err(TrainerError::TargetMismatch(
                            "tiny_mlp expects regression targets".into(),
                        ))
                    }
                };
                if tdim != out_dim {
                    return Err(TrainerError::TargetMismatch(format!(
                        "target dim {tdim} != output dim {out_dim}"
                    )));
                }
                let mut mse = 0.0;
                for i in 0..n {
                    let pred = self.predict_row(&eval.inputs[i * dim..(i + 1) * dim]);
                    for j in 0..out_dim {
                        let err = pred[j] - values[i * out_dim + j];
                        mse += err * err;
                    }
                }
                mse /= (n * out_dim) as f64;
                Ok((mse, MetricPolarity::LowerIsBetter))
            }
        }
    }

    fn snapshot(&self) -> TrainerSnapshot {
        let mut w = ByteWriter::new();
        w.0.extend_from_slice(SNAPSHOT_MAGIC);
        w.u16(SNAPSHOT_VERSION);
        w.str(self.shape.kind());
        match &self.shape {
            Shape::LinearRegression { input_dim, output_dim } => {
                w.u32(*input_dim as u32);
                w.u32(*output_dim as u32);
            }
            Shape::Logistic { input_dim } => {
                w.u32(*input_dim as u32);
                w.u32(1);
            }
            Shape::Mlp { dims } => {
                w.u32(dims.len() as u32);
                for &d in dims {
                    w.u32(d as u32);
                }
            }
        }
        w.f64(self.init_scale);
        w.u64(self.rng.state());
        w.u64(self.steps);
        w.u32(self.params.len() as u32);
        for &p in &self.params {
            w.f64(p);
        }
        TrainerSnapshot::from_bytes(w.into_bytes())
    }

    fn restore(&mut self, snapshot: &TrainerSnapshot) -> Result<(), TrainerError> {
        let bytes = snapshot.bytes();
        if bytes.len() < 4 || &bytes[..4] != SNAPSHOT_MAGIC {
            return Err(SnapshotError::BadMagic.into());
        }
        let mut r = ByteReader::new(&bytes[4..]);
        let version = r.u16()?;
        if version != SNAPSHOT_VERSION {
            return Err(SnapshotError::Version { found: version, expected: SNAPSHOT_VERSION }
                .into());
        }
        let kind = r.str()?;
        if kind != self.shape.kind() {
            return Err(SnapshotError::KindMismatch {
                found: kind,
                expected: self.shape.kind().to_string(),
            }
            .into());
        }
        let shape_ok = match &self.shape {
            Shape::LinearRegression { input_dim, output_dim } => {
                r.u32()? as usize == *input_dim && r.u32()? as usize == *output_dim
            }
            Shape::Logistic { input_dim } => {
                r.u32()? as usize == *input_dim && r.u32()? == 1
            }
            Shape::Mlp { dims } => {
                let len = r.u32()? as usize;
                let mut ok = len == dims.len();
                for i in 0..len {
                    let d = r.u32()? as usize;
                    ok = ok && i < dims.len() && d == dims[i];
                }
                ok
            }
        };
        if !shape_ok {
            return Err(SnapshotError::ShapeMismatch.into());
        }
        let init_scale = r.f64()?;
        let rng_state = r.u64()?;
        let steps = r.u64()?;
        let count = r.u32()? as usize;
        if count != self.shape.param_count() {
            return Err(SnapshotError::ShapeMismatch.into());
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(r.f64()?);
        }
        self.init_scale = init_scale;
        self.rng = SplitMix64::from_state(rng_state);
        self.steps = steps;
        self.params = params;
        Ok(())
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = SplitMix64::new(seed);
    }
}

/// Compares analytic gradients against central finite differences at
/// `points` randomly chosen parameter coordinates on a random batch.
/// Returns the worst relative error observed.
pub fn finite_difference_max_rel_error(
    spec: &BuiltinLearnerSpec,
    check_seed: u64,
    points: usize,
) -> Result<f64, TrainerError> {
    let mut learner = spec.build()?;
    let mut rng = SplitMix64::new(check_seed);
    let batch_len = 16;
    let inputs: Vec<f64> =
        (0..batch_len * spec.input_dim).map(|_| rng.next_gaussian()).collect();
    let reg_values: Vec<f64>;
    let labels: Vec<u32>;
    let targets = match spec.kind {
        LearnerKind::LogisticClassifier => {
            labels = (0..batch_len).map(|_| (rng.next_f64() < 0.5) as u32).collect();
            TargetsRef::Labels(&labels)
        }
        _ => {
            reg_values = (0..batch_len * spec.output_dim)
                .map(|_| rng.next_gaussian())
                .collect();
            TargetsRef::Regression { values: &reg_values, dim: spec.output_dim }
        }
    };
    let batch = BatchRef { inputs: &inputs, dim: spec.input_dim, targets };
    let (_, analytic) = learner.loss_and_grad(&batch)?;
    let mut max_rel = 0.0f64;
    let n_params = learner.params.len();
    for _ in 0..points {
        let idx = rng.next_index(n_params);
        let eps = 1e-6 * learner.params[idx].abs().max(1.0);
        let original = learner.params[idx];
        learner.params[idx] = original + eps;
        let (loss_plus, _) = learner.loss_and_grad(&batch)?;
        learner.params[idx] = original - eps;
        let (loss_minus, _) = learner.loss_and_grad(&batch)?;
        learner.params[idx] = original;
        let fd = (loss_plus - loss_minus) / (2.0 * eps);
        let denom = analytic[idx].abs().max(fd.abs()).max(1e-8);
        max_rel = max_rel.max((fd - analytic[idx]).abs() / denom);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, MicroBatchStore, OrderMode, SyntheticSpec};

    fn spec(kind: LearnerKind, input_dim: usize) -> BuiltinLearnerSpec {
        BuiltinLearnerSpec {
            kind,
            input_dim,
            output_dim: 1,
            hidden_dims: vec![8],
            init_scale: 0.1,
            seed: 42,
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [
            LearnerKind::LinearRegression,
            LearnerKind::LogisticClassifier,
            LearnerKind::TinyMlp,
        ] {
            let err =
                finite_difference_max_rel_error(&spec(kind, 3), 17, 10).unwrap();
            assert!(err < 1e-5, "{kind:?} gradient error {err}");
        }
    }

    #[test]
    fn linear_regression_converges_on_exact_data() {
        let ds = generate_synthetic(
            &SyntheticSpec::LinearRegression { n_samples: 256, input_dim: 3, noise_sigma: 0.0 },
            5,
            0.0,
        )
        .unwrap();
        let store = MicroBatchStore::build(&ds, &[16], None, OrderMode::Shuffled(5)).unwrap();
        let mut learner = spec(LearnerKind::LinearRegression, 3).build().unwrap();
        let mut last = f64::MAX;
        for _ in 0..300 {
            let batches: Vec<BatchRef> = store.iter_batches(16).unwrap().collect();
            let losses = learner
                .train_batches(&batches, &LrSchedule::Constant(0.1))
                .unwrap();
            last = *losses.last().unwrap();
        }
        assert!(last < 1e-6, "final loss {last}");
    }

    #[test]
    fn zero_learning_rate_is_rejected() {
        let ds = generate_synthetic(
            &SyntheticSpec::LinearRegression { n_samples: 32, input_dim: 2, noise_sigma: 0.0 },
            1,
            0.0,
        )
        .unwrap();
        let store = MicroBatchStore::build(&ds, &[8], None, OrderMode::Preserve).unwrap();
        let batches: Vec<BatchRef> = store.iter_batches(8).unwrap().collect();
        let mut learner = spec(LearnerKind::LinearRegression, 2).build().unwrap();
        let zeros = vec![0.0; batches.len()];
        assert!(matches!(
            learner.train_batches(&batches, &LrSchedule::PerBatch(&zeros)),
            Err(TrainerError::InvalidLr(_))
        ));
    }

    #[test]
    fn snapshot_restore_replays_identically() {
        let ds = generate_synthetic(
            &SyntheticSpec::LinearRegression { n_samples: 64, input_dim: 2, noise_sigma: 0.1 },
            3,
            0.0,
        )
        .unwrap();
        let store = MicroBatchStore::build(&ds, &[8], None, OrderMode::Shuffled(3)).unwrap();
        let batches: Vec<BatchRef> = store.iter_batches(8).unwrap().take(5).collect();
        let mut learner = spec(LearnerKind::LinearRegression, 2).build().unwrap();
        let snap = learner.snapshot();
        let first = learner
            .train_batches(&batches, &LrSchedule::Constant(0.05))
            .unwrap();
        learner.restore(&snap).unwrap();
        let second = learner
            .train_batches(&batches, &LrSchedule::Constant(0.05))
            .unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn snapshot_roundtrip_after_mutation() {
        let ds = generate_synthetic(
            &SyntheticSpec::TwoGaussians { n_samples: 200, input_dim: 2, separation: 3.0 },
            7,
            0.2,
        )
        .unwrap();
        let store = MicroBatchStore::build(&ds, &[8], None, OrderMode::Shuffled(7)).unwrap();
        let eval = ds.eval_set();
        let mut learner = spec(LearnerKind::LogisticClassifier, 2).build().unwrap();
        let snap = learner.snapshot();
        let before = learner.evaluate(&eval).unwrap();
        for _ in 0..10 {
            let batches: Vec<BatchRef> = store.iter_batches(8).unwrap().collect();
            learner.train_batches(&batches, &LrSchedule::Constant(0.5)).unwrap();
        }
        learner.restore(&snap).unwrap();
        let after = learner.evaluate(&eval).unwrap();
        assert_eq!(before, after);
        assert_eq!(learner.snapshot().bytes(), snap.bytes());
    }

    #[test]
    fn snapshot_bytes_are_stable_across_runs() {
        let a = spec(LearnerKind::TinyMlp, 4).build().unwrap().snapshot();
        let b = spec(LearnerKind::TinyMlp, 4).build().unwrap().snapshot();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn restore_rejects_other_kind() {
        let lin = spec(LearnerKind::LinearRegression, 3).build().unwrap();
        let mut logistic = spec(LearnerKind::LogisticClassifier, 3).build().unwrap();
        assert!(matches!(
            logistic.restore(&lin.snapshot()),
            Err(TrainerError::Snapshot(SnapshotError::KindMismatch { .. }))
        ));
    }

    #[test]
    fn restore_rejects_corrupt_bytes() {
        let mut learner = spec(LearnerKind::LinearRegression, 3).build().unwrap();
        let mut bytes = learner.snapshot().bytes().to_vec();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            learner.restore(&TrainerSnapshot::from_bytes(bytes)),
            Err(TrainerError::Snapshot(SnapshotError::Truncated))
        ));
        assert!(matches!(
            learner.restore(&TrainerSnapshot::from_bytes(b"XXXX".to_vec())),
            Err(TrainerError::Snapshot(SnapshotError::BadMagic))
        ));
    }

    #[test]
    fn seeds_control_initialization() {
        let mut a = spec(LearnerKind::TinyMlp, 3);
        let mut b = spec(LearnerKind::TinyMlp, 3);
        a.seed = 1;
        b.seed = 2;
        let pa = a.build().unwrap().params;
        let pb = b.build().unwrap().params;
        assert_ne!(pa, pb);
        let pa2 = a.build().unwrap().params;
        assert_eq!(pa, pa2);
    }

    #[test]
    fn majority_class_accuracy_is_fraction() {
        // Bias forced positive, weights zero: always predicts class 1.
        let mut learner = spec(LearnerKind::LogisticClassifier, 2).build().unwrap();
        learner.params = vec![0.0, 0.0, 1.0];
        let inputs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let labels: Vec<u32> =
            (0..10).map(|i| if i < 7 { 1 } else { 0 }).collect();
        let eval = EvalSet {
            inputs,
            dim: 2,
            targets: Targets::Labels(labels),
        };
        let (acc, polarity) = learner.evaluate(&eval).unwrap();
        assert_eq!(acc, 0.7);
        assert_eq!(polarity, MetricPolarity::HigherIsBetter);
    }

    #[test]
    fn perfect_linear_model_scores_r2_one() {
        let mut learner = spec(LearnerKind::LinearRegression, 2).build().unwrap();
        // y = 2*x0 - x1 + 0.5
        learner.params = vec![2.0, -1.0, 0.5];
        let inputs = vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let values: Vec<f64> = inputs
            .chunks(2)
            .map(|x| 2.0 * x[0] - x[1] + 0.5)
            .collect();
        let eval = EvalSet {
            inputs,
            dim: 2,
            targets: Targets::Regression { values, dim: 1 },
        };
        let (r2, _) = learner.evaluate(&eval).unwrap();
        assert_eq!(r2, 1.0);
    }

    #[test]
    fn trained_mlp_beats_untrained() {
        let ds = generate_synthetic(
            &SyntheticSpec::LinearRegression { n_samples: 512, input_dim: 2, noise_sigma: 0.0 },
            13,
            0.2,
        )
        .unwrap();
        let store = MicroBatchStore::build(&ds, &[16], None, OrderMode::Shuffled(13)).unwrap();
        let eval = ds.eval_set();
        let mut learner = spec(LearnerKind::TinyMlp, 2).build().unwrap();
        let (untrained_mse, polarity) = learner.evaluate(&eval).unwrap();
        assert_eq!(polarity, MetricPolarity::LowerIsBetter);
        for _ in 0..50 {
            let batches: Vec<BatchRef> = store.iter_batches(16).unwrap().collect();
            learner.train_batches(&batches, &LrSchedule::Constant(0.05)).unwrap();
        }
        let (trained_mse, _) = learner.evaluate(&eval).unwrap();
        assert!(
            trained_mse <= untrained_mse,
            "trained {trained_mse} vs untrained {untrained_mse}"
        );
    }

    #[test]
    fn divergence_reports_batch_index() {
        let mut learner = spec(LearnerKind::LinearRegression, 2).build().unwrap();
        learner.params = vec![f64::INFINITY, 0.0, 0.0];
        let inputs = vec![1.0, 1.0];
        let values = vec![0.0];
        let batch = BatchRef {
            inputs: &inputs,
            dim: 2,
            targets: TargetsRef::Regression { values: &values, dim: 1 },
        };
        match learner.train_batches(&[batch], &LrSchedule::Constant(0.1)) {
            Err(TrainerError::Divergence { batch_index }) => assert_eq!(batch_index, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn step_counter_advances_per_batch() {
        let ds = generate_synthetic(
            &SyntheticSpec::LinearRegression { n_samples: 64, input_dim: 2, noise_sigma: 0.0 },
            3,
            0.0,
        )
        .unwrap();
        let store = MicroBatchStore::build(&ds, &[8], None, OrderMode::Preserve).unwrap();
        let batches: Vec<BatchRef> = store.iter_batches(8).unwrap().collect();
        let mut learner = spec(LearnerKind::LinearRegression, 2).build().unwrap();
        learner.train_batches(&batches, &LrSchedule::Constant(0.01)).unwrap();
        assert_eq!(learner.step_count(), batches.len() as u64);
    }
}
