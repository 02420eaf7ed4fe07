//! Minibatch training loop: ADAM updates over mean cross-entropy, seeded
//! shuffling, and iteration-level history logging.

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    backward, build_architecture, forward, init_params, param_count, ModelError, ModelGrads,
    ModelParams, CLASSES,
};
use crate::layers::softmax_cross_entropy;
use crate::preprocess::{InputSize, Variant};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Samples per parallel work unit. Fixed so gradient accumulation order (and
/// therefore every trained bit) is independent of thread count.
const PAR_CHUNK: usize = 4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty {0} partition")]
    EmptyPartition(&'static str),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Training hyperparameters. Defaults: minibatch 64, learning rate 1e-3,
/// 1600 iterations, ADAM with β1 = 0.9, β2 = 0.999, ε = 1e-8.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub variant: Variant,
    pub input_size: InputSize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl TrainConfig {
    pub fn new(variant: Variant, input_size: InputSize, seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_iterations: 1600,
            eval_every: 25,
            seed,
            variant,
            input_size,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_iterations", self.max_iterations),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(TrainError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }
}

/// One ADAM update:
///   m ← β1·m + (1−β1)·g        v ← β2·v + (1−β2)·g²
///   m̂ = m/(1−β1^t)             v̂ = v/(1−β2^t)
///   θ ← θ − lr·m̂/(√v̂ + ε)
/// with t incremented before use.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelGrads,
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    let total = param_count(&params.spec);
    if state.m.len() != total || state.v.len() != total {
        return Err(TrainError::ShapeMismatch(format!(
            "adam state holds {} moments, architecture has {} parameters",
            state.m.len(),
            total
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - config.beta1.powi(state.t as i32);
    let bc2 = 1.0 - config.beta2.powi(state.t as i32);
    let lr = config.learning_rate;

    let mut off = 0;
    for (p, g) in params.tensors_mut().zip(grads.tensors()) {
        if p.numel() != g.numel() {
            return Err(TrainError::ShapeMismatch(format!(
                "gradient tensor has {} values, parameter has {}",
                g.numel(),
                p.numel()
            )));
        }
        let n = p.numel();
        let m = &mut state.m[off..off + n];
        let v = &mut state.v[off..off + n];
        let pd = p.data_mut();
        let gd = g.data();
        for i in 0..n {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gd[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gd[i] * gd[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
        off += n;
    }
    debug_assert_eq!(off, total);
    Ok(())
}

/// Endless epoch-wise batch scheduler: each epoch is a fresh seeded
/// permutation of the ids, cut into consecutive batches with the final
/// partial batch kept.
#[derive(Clone, Debug)]
pub struct MinibatchSchedule {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    epoch: usize,
    rng: Rng,
}

impl MinibatchSchedule {
    pub fn new(n_items: usize, batch_size: usize, seed: u64) -> Result<Self, TrainError> {
        if n_items == 0 {
            return Err(TrainError::EmptyTrainSet);
        }
        if batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(MinibatchSchedule {
            order: (0..n_items).collect(),
            batch_size,
            pos: 0,
            epoch: 0,
            rng: Rng::new(seed),
        })
    }

    /// 1-based epoch the next batch belongs to.
    pub fn epoch(&self) -> usize {
        self.epoch.max(1)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() || self.epoch == 0 {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
            self.epoch += 1;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

/// One logged point of a training run. Train columns are the minibatch
/// metrics of that iteration (before the update); validation columns are
/// measured on the full validation partition after the update.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

pub const HISTORY_HEADER: &str = "iteration,epoch,train_loss,train_accuracy,val_loss,val_accuracy";

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iteration, r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
            ));
        }
        out
    }
}

fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

// Forward (and optionally backward) over a set of samples. Work is split
// into fixed-size chunks processed in parallel; chunk results are folded in
// index order so sums are bit-stable.
fn batch_pass(
    params: &ModelParams,
    samples: &[(Tensor, usize)],
    ids: &[usize],
    with_grads: bool,
) -> Result<(f64, usize, Option<ModelGrads>), TrainError> {
    let chunk_results: Result<Vec<_>, TrainError> = ids
        .par_chunks(PAR_CHUNK)
        .map(|chunk| {
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            let mut grads = if with_grads {
                Some(ModelGrads::zeros_like(params))
            } else {
                None
            };
            for &id in chunk {
                let (x, target) = &samples[id];
                let (probs, cache) = forward(params, x)?;
                loss_sum += softmax_cross_entropy(cache.logits(), *target)
                    .map_err(ModelError::from)?
                    .loss;
                if argmax_lowest(probs.data()) == *target {
                    correct += 1;
                }
                if let Some(acc) = grads.as_mut() {
                    acc.add_assign(&backward(params, &cache, *target)?);
                }
            }
            Ok((loss_sum, correct, grads))
        })
        .collect();

    let mut loss_sum = 0.0;
    let mut correct = 0;
    let mut total_grads = with_grads.then(|| ModelGrads::zeros_like(params));
    for (l, c, g) in chunk_results? {
        loss_sum += l;
        correct += c;
        if let (Some(total), Some(part)) = (total_grads.as_mut(), g.as_ref()) {
            total.add_assign(part);
        }
    }
    Ok((loss_sum, correct, total_grads))
}

/// Mean loss and accuracy of `params` over a whole sample set.
pub fn evaluate_set(params: &ModelParams, samples: &[(Tensor, usize)]) -> Result<(f64, f64), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyPartition("evaluation"));
    }
    let ids: Vec<usize> = (0..samples.len()).collect();
    let (loss_sum, correct, _) = batch_pass(params, samples, &ids, false)?;
    Ok((
        loss_sum / samples.len() as f64,
        correct as f64 / samples.len() as f64,
    ))
}

/// Runs `config.max_iterations` ADAM steps of mean cross-entropy over the
/// training samples, logging every `eval_every` iterations and at the final
/// iteration. Weights are seeded from `config.seed`; the batch scheduler
/// uses an independent stream derived from the same seed.
pub fn train(
    config: &TrainConfig,
    train_set: &[(Tensor, usize)],
    val_set: &[(Tensor, usize)],
) -> Result<(ModelParams, TrainHistory), TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyPartition("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptyPartition("validation"));
    }

    let arch = build_architecture(config.input_size.side(), CLASSES)?;
    let mut params = init_params(&arch, config.seed);
    let mut schedule = MinibatchSchedule::new(train_set.len(), config.batch_size, config.seed.wrapping_add(1))?;
    let mut adam = AdamState::new(param_count(&arch));
    let mut history = TrainHistory::default();

    for iter in 1..=config.max_iterations {
        let batch = schedule.next_batch();
        let epoch = schedule.epoch();
        let (loss_sum, correct, grads) = batch_pass(&params, train_set, &batch, true)?;
        let mut grads = grads.expect("gradients requested");
        grads.scale(1.0 / batch.len() as f64);
        adam_step(&mut params, &grads, &mut adam, config)?;

        if iter % config.eval_every == 0 || iter == config.max_iterations {
            let (val_loss, val_accuracy) = evaluate_set(&params, val_set)?;
            history.rows.push(HistoryRow {
                iteration: iter,
                epoch,
                train_loss: loss_sum / batch.len() as f64,
                train_accuracy: correct as f64 / batch.len() as f64,
                val_loss,
                val_accuracy,
            });
        }
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_architecture;

    fn tiny_config(iters: usize, batch: usize, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(Variant::Uncropped, InputSize::S32, seed);
        c.max_iterations = iters;
        c.batch_size = batch;
        c
    }

    fn scalar_model() -> (ModelParams, AdamState, TrainConfig) {
        // Smallest real architecture; we only poke one coordinate.
        let spec = build_architecture(16, 3).unwrap();
        let params = ModelParams::from_flat(&spec, &vec![0.0; param_count(&spec)]).unwrap();
        let state = AdamState::new(param_count(&spec));
        (params, state, tiny_config(1, 1, 0))
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let (mut params, mut state, config) = scalar_model();
        let before = params.to_flat();
        let grads = ModelGrads::zeros_like(&params);
        adam_step(&mut params, &grads, &mut state, &config).unwrap();
        assert_eq!(params.to_flat(), before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_first_step_hand_value() {
        let (mut params, mut state, config) = scalar_model();
        let mut grads = ModelGrads::zeros_like(&params);
        grads.convs[0].0.data_mut()[0] = 0.5;
        adam_step(&mut params, &grads, &mut state, &config).unwrap();
        // m̂ = g, v̂ = g² at t = 1, so Δθ = −lr·g/(|g| + ε)
        let want = -1e-3 * (0.5 / (0.5 + 1e-8));
        let got = params.convs[0].weights.data()[0];
        assert!((got - want).abs() < 1e-18, "got {got}, want {want}");
        assert!((got - (-9.99999980e-4)).abs() < 1e-12);
    }

    #[test]
    fn adam_two_steps_match_hand_oracle() {
        let (mut params, mut state, config) = scalar_model();
        let g = 0.3;
        let mut grads = ModelGrads::zeros_like(&params);
        grads.convs[0].0.data_mut()[0] = g;
        adam_step(&mut params, &grads, &mut state, &config).unwrap();
        adam_step(&mut params, &grads, &mut state, &config).unwrap();

        // hand-rolled two applications of the update rule
        let (b1, b2, lr, eps) = (0.9, 0.999, 1e-3, 1e-8);
        let mut theta = 0.0_f64;
        let mut m = 0.0_f64;
        let mut v = 0.0_f64;
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1_pow(b1, t));
            let vh = v / (1.0 - b1_pow(b2, t));
            theta -= lr * mh / (vh.sqrt() + eps);
        }
        let got = params.convs[0].weights.data()[0];
        assert!((got - theta).abs() < 1e-12, "got {got}, want {theta}");
    }

    fn b1_pow(b: f64, t: usize) -> f64 {
        b.powi(t as i32)
    }

    #[test]
    fn adam_first_step_bounded_by_learning_rate() {
        let (mut params, mut state, config) = scalar_model();
        let mut grads = ModelGrads::zeros_like(&params);
        let mut rng = Rng::new(50);
        for t in grads.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.range_f64(-10.0, 10.0);
            }
        }
        let before = params.to_flat();
        adam_step(&mut params, &grads, &mut state, &config).unwrap();
        for (b, a) in before.iter().zip(params.to_flat()) {
            assert!((a - b).abs() <= config.learning_rate + 1e-12);
        }
    }

    #[test]
    fn adam_rejects_mismatched_state() {
        let (mut params, _, config) = scalar_model();
        let grads = ModelGrads::zeros_like(&params);
        let mut wrong = AdamState::new(7);
        assert!(matches!(
            adam_step(&mut params, &grads, &mut wrong, &config),
            Err(TrainError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn schedule_batch_sizes_with_partial_tail() {
        let mut s = MinibatchSchedule::new(10, 4, 0).unwrap();
        assert_eq!(s.next_batch().len(), 4);
        assert_eq!(s.next_batch().len(), 4);
        assert_eq!(s.next_batch().len(), 2);
        assert_eq!(s.epoch(), 1);
        assert_eq!(s.next_batch().len(), 4);
        assert_eq!(s.epoch(), 2);
    }

    #[test]
    fn schedule_epoch_visits_every_id_once() {
        let mut s = MinibatchSchedule::new(23, 5, 9).unwrap();
        for epoch in 0..3 {
            let mut seen: Vec<usize> = Vec::new();
            while seen.len() < 23 {
                seen.extend(s.next_batch());
            }
            seen.sort_unstable();
            assert_eq!(seen, (0..23).collect::<Vec<_>>(), "epoch {epoch}");
        }
    }

    #[test]
    fn schedule_is_deterministic() {
        let collect = || {
            let mut s = MinibatchSchedule::new(12, 5, 4).unwrap();
            (0..6).map(|_| s.next_batch()).collect::<Vec<_>>()
        };
        assert_eq!(collect(), collect());
    }

    #[test]
    fn schedule_rejects_empty() {
        assert!(matches!(
            MinibatchSchedule::new(0, 4, 0),
            Err(TrainError::EmptyTrainSet)
        ));
    }

    fn toy_samples(n_per_class: usize, side: usize, seed: u64) -> Vec<(Tensor, usize)> {
        // three trivially separable intensity patterns
        let mut rng = Rng::new(seed);
        let mut out = Vec::new();
        for class in 0..3usize {
            for _ in 0..n_per_class {
                let t = Tensor::from_fn(vec![1, side, side], |i| {
                    let (r, c) = ((i / side) % side, i % side);
                    let base = match class {
                        0 => ((r + c) % 2) as f64,
                        1 => (r as f64 / side as f64),
                        _ => 1.0 - (c as f64 / side as f64),
                    };
                    base + 0.05 * rng.next_f64()
                });
                out.push((t, class));
            }
        }
        out
    }

    #[test]
    fn train_improves_loss_and_is_deterministic() {
        let train_set = toy_samples(4, 32, 1);
        let val_set = toy_samples(1, 32, 2);
        let mut config = tiny_config(12, 4, 3);
        config.eval_every = 4;
        let (p1, h1) = train(&config, &train_set, &val_set).unwrap();
        let (p2, h2) = train(&config, &train_set, &val_set).unwrap();
        assert_eq!(p1.to_flat(), p2.to_flat());
        assert_eq!(h1, h2);
        assert_eq!(h1.rows.len(), 3);
        assert!(h1.rows.last().unwrap().train_loss < h1.rows[0].train_loss * 2.0);
    }

    #[test]
    fn history_row_counting_rule() {
        let train_set = toy_samples(2, 32, 1);
        let val_set = toy_samples(1, 32, 2);
        for (iters, eval_every, want) in [(10, 25, 1), (50, 25, 2), (55, 25, 3)] {
            let mut config = tiny_config(iters, 3, 0);
            config.eval_every = eval_every;
            let (_, h) = train(&config, &train_set, &val_set).unwrap();
            assert_eq!(h.rows.len(), want, "iters {iters} eval {eval_every}");
            assert_eq!(h.rows.last().unwrap().iteration, iters);
        }
    }

    #[test]
    fn train_rejects_empty_partitions_and_bad_config() {
        let samples = toy_samples(1, 32, 1);
        let config = tiny_config(1, 1, 0);
        assert!(matches!(
            train(&config, &[], &samples),
            Err(TrainError::EmptyPartition("train"))
        ));
        assert!(matches!(
            train(&config, &samples, &[]),
            Err(TrainError::EmptyPartition("validation"))
        ));
        let mut bad = tiny_config(0, 1, 0);
        bad.max_iterations = 0;
        assert!(matches!(
            train(&bad, &samples, &samples),
            Err(TrainError::InvalidConfig(_))
        ));
    }

    #[test]
    fn history_csv_header_and_shape() {
        let h = TrainHistory {
            rows: vec![HistoryRow {
                iteration: 25,
                epoch: 1,
                train_loss: 1.5,
                train_accuracy: 0.5,
                val_loss: 1.25,
                val_accuracy: 0.75,
            }],
        };
        let csv = h.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), HISTORY_HEADER);
        assert_eq!(lines.next().unwrap(), "25,1,1.5,0.5,1.25,0.75");
        assert!(lines.next().is_none());
    }
}
