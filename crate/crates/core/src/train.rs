//! Mini-batch training: cross-entropy loss, Adam updates with bias
//! correction, and epoch-granular learning-rate decay.
//!
//! Every batch sums per-entry gradients (the objective is the cumulative
//! loss of the mini-batch) and applies one serialized optimizer step.
//! Shuffling draws a fresh permutation per epoch from a seed derived from
//! (run seed, epoch), so a resumed run replays the identical stream.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, Split};
use crate::layers::softmax_cross_entropy;
use crate::metrics::{compute_report, MetricReport, ScoredEntry};
use crate::model::{
    forward_on_tape, params_from_bytes, params_to_bytes, prob_from_logits, EntryRef, FavoaParams,
    ModelConfig, ModelError,
};
use crate::provider::EmbeddingProvider;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FAVC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("non-finite gradient in parameter group {group}")]
    NonFiniteGradient { group: String },
    #[error("non-finite loss on entry {entry_id}")]
    NonFiniteLoss { entry_id: String },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

// ── Schedule ─────────────────────────────────────────────────────────

/// Step-decay schedule: `rate(epoch) = initial_rate · decay^⌊epoch/period⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub initial_rate: f64,
    pub decay: f64,
    pub period_epochs: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            initial_rate: 3e-6,
            decay: 0.1,
            period_epochs: 10,
        }
    }
}

impl Schedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        self.initial_rate * self.decay.powi((epoch / self.period_epochs) as i32)
    }
}

// ── Loss utility ─────────────────────────────────────────────────────

/// Cross-entropy of a probability, inputs clamped away from 0 and 1 so the
/// value stays finite for any probability a finite forward pass produces.
pub fn cross_entropy_prob(prob_positive: f64, label_positive: bool) -> f64 {
    let q = prob_positive.clamp(1e-12, 1.0 - 1e-12);
    if label_positive {
        -q.ln()
    } else {
        -(1.0 - q).ln()
    }
}

// ── Adam ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment accumulators, one pair per tensor, in the same
/// order the parameter struct enumerates them.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub adam: AdamParams,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(sizes: &[usize], adam: AdamParams) -> Self {
        Self {
            adam,
            step: 0,
            first_moment: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            second_moment: sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    pub fn for_params(params: &FavoaParams, adam: AdamParams) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.numel()).collect();
        Self::new(&sizes, adam)
    }
}

/// One Adam update over named tensors, reading each tensor's accumulated
/// `grad` field. A missing gradient counts as zero.
pub fn adam_step(
    state: &mut OptimizerState,
    tensors: &mut [(&'static str, &mut Tensor)],
    rate: f64,
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as i32;
    let AdamParams {
        beta1,
        beta2,
        epsilon,
    } = state.adam;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    for (idx, (name, tensor)) in tensors.iter_mut().enumerate() {
        // The step consumes the accumulated gradient.
        let grad = tensor
            .grad
            .take()
            .unwrap_or_else(|| vec![0.0; tensor.numel()]);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGradient {
                group: name.split('.').next().unwrap_or(name).to_string(),
            });
        }
        let m = &mut state.first_moment[idx];
        let v = &mut state.second_moment[idx];
        let data = tensor.data_mut();
        for i in 0..data.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            data[i] -= rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

// ── Training loop ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub adam: AdamParams,
    /// Decision threshold for the per-epoch balanced accuracy.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_train_loss: f64,
    /// Validation metrics; absent when the split is empty or single-class.
    pub val: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub model: ModelConfig,
    pub options: TrainOptions,
    pub records: Vec<EpochRecord>,
}

impl TrainReport {
    /// JSON lines: one meta record, then one record per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let meta = serde_json::json!({
            "record": "meta",
            "seed": self.seed,
            "model": self.model,
            "options": self.options,
        });
        out.push_str(&meta.to_string());
        out.push('\n');
        for r in &self.records {
            let mut line = serde_json::to_value(r).expect("epoch record serializes");
            line.as_object_mut()
                .expect("object")
                .insert("record".into(), "epoch".into());
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut x = seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Sum per-entry gradients of the batch into the parameter grad fields and
/// return the summed loss.
fn batch_backward(
    params: &mut FavoaParams,
    config: &ModelConfig,
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    batch: &[usize],
) -> Result<f64, TrainError> {
    for (_, tensor) in params.tensors_mut() {
        tensor.zero_grad();
    }
    let mut batch_loss = 0.0;
    for &idx in batch {
        let entry = &dataset.entries()[idx];
        let tape = Tape::new();
        let vars = params.on_tape(&tape);
        let trace = forward_on_tape(
            &tape,
            &vars,
            config,
            dataset,
            provider,
            &EntryRef {
                scene: entry.scene,
                track: entry.track,
                frame: entry.frame,
            },
        )?;
        let loss = softmax_cross_entropy(&tape, trace.logits, u8::from(entry.label.is_positive()))
            .map_err(ModelError::from)?;
        let loss_value = tape.scalar_value(loss).map_err(ModelError::from)?;
        if !loss_value.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                entry_id: entry.entry_id.clone(),
            });
        }
        batch_loss += loss_value;
        let grads = tape.backward(loss).map_err(ModelError::from)?;
        let vars_order = vars.tensor_vars();
        for ((_, tensor), var) in params.tensors_mut().into_iter().zip(vars_order) {
            if let Some(g) = grads.wrt(var) {
                tensor.accumulate_grad(g).map_err(ModelError::from)?;
            }
        }
    }
    Ok(batch_loss)
}

/// Score a set of entries with the current parameters.
pub fn score_entries(
    params: &FavoaParams,
    config: &ModelConfig,
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    indices: &[usize],
) -> Result<Vec<ScoredEntry>, TrainError> {
    let mut out = Vec::with_capacity(indices.len());
    for &idx in indices {
        let entry = &dataset.entries()[idx];
        let tape = Tape::new();
        let vars = params.on_tape(&tape);
        let trace = forward_on_tape(
            &tape,
            &vars,
            config,
            dataset,
            provider,
            &EntryRef {
                scene: entry.scene,
                track: entry.track,
                frame: entry.frame,
            },
        )?;
        let logits = tape.value(trace.logits);
        out.push(ScoredEntry {
            entry_id: entry.entry_id.clone(),
            score: prob_from_logits(logits[0], logits[1]),
            positive: entry.label.is_positive(),
        });
    }
    Ok(out)
}

fn run_epochs(
    params: &mut FavoaParams,
    state: &mut OptimizerState,
    config: &ModelConfig,
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    opts: &TrainOptions,
    start_epoch: usize,
    checkpoint_path: Option<&Path>,
) -> Result<Vec<EpochRecord>, TrainError> {
    let train_indices = dataset.select(Some(Split::Train), None);
    if train_indices.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let val_indices = dataset.select(Some(Split::Val), None);

    let mut records = Vec::new();
    for epoch in start_epoch..opts.epochs {
        let rate = opts.schedule.rate(epoch);
        let mut order = train_indices.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(epoch_seed(opts.seed, epoch));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in order.chunks(opts.batch_size.max(1)) {
            epoch_loss += batch_backward(params, config, dataset, provider, batch)?;
            adam_step(state, &mut params.tensors_mut(), rate)?;
        }

        let val = if val_indices.is_empty() {
            None
        } else {
            let scored = score_entries(params, config, dataset, provider, &val_indices)?;
            compute_report(&scored, opts.threshold).ok()
        };
        records.push(EpochRecord {
            epoch,
            learning_rate: rate,
            mean_train_loss: epoch_loss / train_indices.len() as f64,
            val,
        });
        if let Some(path) = checkpoint_path {
            save_checkpoint(path, config, params, state, epoch + 1, opts.seed)?;
        }
    }
    Ok(records)
}

/// Train from scratch over the dataset's train split, evaluating on the
/// validation split each epoch. Deterministic given the seed.
pub fn train(
    params: &mut FavoaParams,
    config: &ModelConfig,
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    opts: &TrainOptions,
    checkpoint_path: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    params.validate_against(config)?;
    let mut state = OptimizerState::for_params(params, opts.adam);
    let records = run_epochs(
        params,
        &mut state,
        config,
        dataset,
        provider,
        opts,
        0,
        checkpoint_path,
    )?;
    Ok(TrainReport {
        seed: opts.seed,
        model: *config,
        options: opts.clone(),
        records,
    })
}

/// Continue a checkpointed run until `opts.epochs`; yields the records of
/// the remaining epochs.
pub fn resume(
    checkpoint: &Path,
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    opts: &TrainOptions,
    checkpoint_path: Option<&Path>,
) -> Result<(ModelConfig, FavoaParams, Vec<EpochRecord>), TrainError> {
    let (config, mut params, mut state, next_epoch, seed) = load_checkpoint(checkpoint)?;
    let mut opts = opts.clone();
    opts.seed = seed;
    let records = run_epochs(
        &mut params,
        &mut state,
        &config,
        dataset,
        provider,
        &opts,
        next_epoch,
        checkpoint_path,
    )?;
    Ok((config, params, records))
}

// ── Checkpoints ──────────────────────────────────────────────────────

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &FavoaParams,
    state: &OptimizerState,
    next_epoch: usize,
    seed: u64,
) -> Result<(), TrainError> {
    let image = params_to_bytes(config, params)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(next_epoch as u32).to_le_bytes());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&state.step.to_le_bytes());
    buf.extend_from_slice(&state.adam.beta1.to_le_bytes());
    buf.extend_from_slice(&state.adam.beta2.to_le_bytes());
    buf.extend_from_slice(&state.adam.epsilon.to_le_bytes());
    buf.extend_from_slice(&(image.len() as u64).to_le_bytes());
    buf.extend_from_slice(&image);
    for moments in [&state.first_moment, &state.second_moment] {
        for tensor_moments in moments {
            for v in tensor_moments {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, buf).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

type Checkpoint = (ModelConfig, FavoaParams, OptimizerState, usize, u64);

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let bad = |reason: &str| TrainError::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 52 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing FAVC header"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let next_epoch = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let step = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let beta1 = f64::from_le_bytes(bytes[28..36].try_into().unwrap());
    let beta2 = f64::from_le_bytes(bytes[36..44].try_into().unwrap());
    let epsilon = f64::from_le_bytes(bytes[44..52].try_into().unwrap());
    let image_len = u64::from_le_bytes(bytes[52..60].try_into().unwrap()) as usize;
    let image_end = 60 + image_len;
    if bytes.len() < image_end {
        return Err(bad("truncated parameter image"));
    }
    let (config, params) = params_from_bytes(&bytes[60..image_end], path)?;

    let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.numel()).collect();
    let moment_len: usize = sizes.iter().sum();
    if bytes.len() != image_end + 2 * moment_len * 8 {
        return Err(bad("optimizer state length mismatch"));
    }
    let mut state = OptimizerState::new(
        &sizes,
        AdamParams {
            beta1,
            beta2,
            epsilon,
        },
    );
    state.step = step;
    let mut at = image_end;
    for moments in [&mut state.first_moment, &mut state.second_moment] {
        for tensor_moments in moments.iter_mut() {
            for v in tensor_moments.iter_mut() {
                *v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
                at += 8;
            }
        }
    }
    Ok((config, params, state, next_epoch, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, GeneratorConfig};

    #[test]
    fn schedule_follows_step_decay_exactly() {
        let s = Schedule::default();
        for epoch in 0..40 {
            let expect = 3e-6 * 0.1f64.powi((epoch / 10) as i32);
            assert_eq!(s.rate(epoch), expect);
        }
        assert!((s.rate(0) - 3e-6).abs() < 1e-18);
        assert!((s.rate(9) - 3e-6).abs() < 1e-18);
        assert!((s.rate(10) - 3e-7).abs() / 3e-7 < 1e-12);
        assert!((s.rate(19) - 3e-7).abs() / 3e-7 < 1e-12);
    }

    #[test]
    fn loss_utility_known_values_and_clamping() {
        assert!((cross_entropy_prob(0.5, false) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((cross_entropy_prob(0.9, true) - 0.105_360_515_657_826_3).abs() < 1e-12);
        // Monotone decrease toward zero as confidence grows.
        let mut last = f64::INFINITY;
        for q in [0.5, 0.9, 0.99, 0.999, 1.0] {
            let l = cross_entropy_prob(q, true);
            assert!(l <= last);
            assert!(l.is_finite());
            last = l;
        }
        assert!(cross_entropy_prob(0.0, true).is_finite());
    }

    #[test]
    fn adam_first_step_moves_by_rate_in_gradient_sign() {
        let mut x = Tensor::from_vec(vec![1.0, -2.0]);
        x.grad = Some(vec![0.3, -0.7]);
        let mut state = OptimizerState::new(&[2], AdamParams::default());
        adam_step(&mut state, &mut [("x", &mut x)], 0.01).unwrap();
        // First-step identity: m_hat/sqrt(v_hat) = sign(g) up to epsilon.
        assert!((x.data()[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((x.data()[1] - (-2.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let mut x = Tensor::from_vec(vec![1.5, 2.5]);
        x.grad = Some(vec![0.0, 0.0]);
        let mut state = OptimizerState::new(&[2], AdamParams::default());
        for _ in 0..25 {
            adam_step(&mut state, &mut [("x", &mut x)], 0.1).unwrap();
        }
        assert_eq!(x.data(), &[1.5, 2.5]);
    }

    #[test]
    fn adam_three_steps_match_hand_tracked_recurrence() {
        // Minimize f(x) = x² from x = 1; gradient is 2x.
        let mut x = Tensor::from_vec(vec![1.0]);
        let mut state = OptimizerState::new(&[1], AdamParams::default());
        let rate = 0.1;

        // Hand-tracked oracle of the update recurrence.
        let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
        let mut xe = 1.0f64;
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        for t in 1..=3 {
            let g = 2.0 * x.data()[0];
            x.grad = Some(vec![g]);
            adam_step(&mut state, &mut [("x", &mut x)], rate).unwrap();

            let ge = 2.0 * xe;
            m = beta1 * m + (1.0 - beta1) * ge;
            v = beta2 * v + (1.0 - beta2) * ge * ge;
            let m_hat = m / (1.0 - beta1.powi(t));
            let v_hat = v / (1.0 - beta2.powi(t));
            xe -= rate * m_hat / (v_hat.sqrt() + eps);
            assert!((x.data()[0] - xe).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn adam_rejects_nan_gradients_naming_the_group() {
        let mut x = Tensor::from_vec(vec![1.0]);
        x.grad = Some(vec![f64::NAN]);
        let mut state = OptimizerState::new(&[1], AdamParams::default());
        let err = adam_step(&mut state, &mut [("gbu.gate_weight", &mut x)], 0.1).unwrap_err();
        match err {
            TrainError::NonFiniteGradient { group } => assert_eq!(group, "gbu"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn tiny_dataset(dir: &Path) -> Dataset {
        let config = GeneratorConfig {
            seed: 9,
            scenes: 4,
            persons_per_scene: 2,
            frames_per_scene: 6,
            noise: 0.05,
            ambiguous_fraction: 0.5,
            speaking_prevalence: 0.4,
            not_audible_rate: 0.0,
            val_fraction: 0.25,
            ste_dim: 32,
            fv_dim: 16,
        };
        let manifest = generate(&config, dir).unwrap();
        Dataset::load(&manifest).unwrap()
    }

    fn desk_options(epochs: usize) -> TrainOptions {
        TrainOptions {
            epochs,
            batch_size: 16,
            seed: 77,
            schedule: Schedule {
                initial_rate: 1e-3,
                ..Schedule::default()
            },
            adam: AdamParams::default(),
            threshold: 0.5,
        }
    }

    #[test]
    fn training_is_deterministic_given_the_seed() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(dir.path());
        let config = ModelConfig::default();
        let opts = desk_options(3);

        let mut params_a = FavoaParams::seeded(&config, opts.seed).unwrap();
        let report_a = train(&mut params_a, &config, &dataset, &dataset, &opts, None).unwrap();
        let mut params_b = FavoaParams::seeded(&config, opts.seed).unwrap();
        let report_b = train(&mut params_b, &config, &dataset, &dataset, &opts, None).unwrap();

        assert_eq!(report_a.to_jsonl(), report_b.to_jsonl());
        for ((name, a), (_, b)) in params_a.tensors().iter().zip(params_b.tensors()) {
            assert_eq!(a.data(), b.data(), "{name}");
        }
    }

    #[test]
    fn batch_gradient_equals_sum_of_per_entry_gradients() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(dir.path());
        let config = ModelConfig::default();
        let mut params = FavoaParams::seeded(&config, 5).unwrap();
        let batch: Vec<usize> = dataset.select(Some(Split::Train), None)[..4].to_vec();

        batch_backward(&mut params, &config, &dataset, &dataset, &batch).unwrap();
        let batched: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| t.grad.clone().unwrap())
            .collect();

        // Sequential accumulation oracle: one backward per entry, summed.
        let mut sums: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| vec![0.0; t.numel()])
            .collect();
        for &idx in &batch {
            batch_backward(&mut params, &config, &dataset, &dataset, &[idx]).unwrap();
            for (acc, (_, t)) in sums.iter_mut().zip(params.tensors()) {
                for (a, g) in acc.iter_mut().zip(t.grad.as_ref().unwrap()) {
                    *a += g;
                }
            }
        }
        for (b, s) in batched.iter().zip(&sums) {
            for (x, y) in b.iter().zip(s) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_decreases_on_a_separable_clear_split() {
        let dir = tempfile::tempdir().unwrap();
        let gen = GeneratorConfig {
            seed: 30,
            scenes: 8,
            persons_per_scene: 2,
            frames_per_scene: 10,
            noise: 0.02,
            ambiguous_fraction: 0.0,
            speaking_prevalence: 0.4,
            not_audible_rate: 0.0,
            val_fraction: 0.25,
            ste_dim: 32,
            fv_dim: 16,
        };
        let manifest = generate(&gen, dir.path()).unwrap();
        let dataset = Dataset::load(&manifest).unwrap();
        let config = ModelConfig::default();
        let opts = desk_options(5);
        let mut params = FavoaParams::seeded(&config, opts.seed).unwrap();
        let report = train(&mut params, &config, &dataset, &dataset, &opts, None).unwrap();
        let losses: Vec<f64> = report.records.iter().map(|r| r.mean_train_loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "loss sequence not decreasing: {losses:?}");
        }
    }

    #[test]
    fn resumed_run_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(dir.path());
        let config = ModelConfig::default();

        let opts_full = desk_options(6);
        let mut straight = FavoaParams::seeded(&config, 123).unwrap();
        let full_report =
            train(&mut straight, &config, &dataset, &dataset, &opts_full, None).unwrap();

        let ckpt = dir.path().join("ckpt.bin");
        let mut halted = FavoaParams::seeded(&config, 123).unwrap();
        let mut opts_half = opts_full.clone();
        opts_half.epochs = 3;
        let first_half =
            train(&mut halted, &config, &dataset, &dataset, &opts_half, Some(&ckpt)).unwrap();
        let (_, resumed_params, second_half) =
            resume(&ckpt, &dataset, &dataset, &opts_full, None).unwrap();

        let mut combined = first_half.records.clone();
        combined.extend(second_half);
        assert_eq!(combined, full_report.records);
        for ((name, a), (_, b)) in straight.tensors().iter().zip(resumed_params.tensors()) {
            assert_eq!(a.data(), b.data(), "{name}");
        }
    }

    #[test]
    fn provider_features_are_untouched_by_training() {
        use crate::provider::{AudioRef, EmbeddingProvider, FaceCropRef};
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(dir.path());
        let config = ModelConfig::default();
        let entry = &dataset.entries()[0];
        let face = FaceCropRef {
            scene: entry.scene,
            track: entry.track,
            frame: entry.frame,
        };
        let audio = AudioRef {
            scene: entry.scene,
            frame: entry.frame,
        };
        let before_face = dataset.ste(&face, &audio).unwrap();
        let before_voice = dataset.fv(&audio).unwrap();

        let mut params = FavoaParams::seeded(&config, 8).unwrap();
        train(&mut params, &config, &dataset, &dataset, &desk_options(2), None).unwrap();

        assert_eq!(dataset.ste(&face, &audio).unwrap(), before_face);
        assert_eq!(dataset.fv(&audio).unwrap(), before_voice);
    }

    #[test]
    fn untrained_parameters_score_near_chance_on_a_balanced_set() {
        use crate::metrics::roc_auc;
        let dir = tempfile::tempdir().unwrap();
        let gen = GeneratorConfig {
            seed: 500,
            scenes: 30,
            persons_per_scene: 2,
            frames_per_scene: 10,
            noise: 0.1,
            ambiguous_fraction: 0.5,
            speaking_prevalence: 0.5,
            not_audible_rate: 0.0,
            val_fraction: 1.0,
            ste_dim: 32,
            fv_dim: 16,
        };
        let manifest = generate(&gen, dir.path()).unwrap();
        let dataset = Dataset::load(&manifest).unwrap();
        let indices = dataset.select(Some(Split::Val), None);
        assert!(indices.len() >= 500);

        let config = ModelConfig::default();
        let params = FavoaParams::seeded(&config, 501).unwrap();
        let scored = score_entries(&params, &config, &dataset, &dataset, &indices).unwrap();
        let auc = roc_auc(&scored).unwrap();
        assert!(
            (0.4..=0.6).contains(&auc),
            "untrained model should sit near chance, got auc {auc:.4}"
        );
    }

    #[test]
    fn report_jsonl_has_meta_then_epoch_lines() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = tiny_dataset(dir.path());
        let config = ModelConfig::default();
        let opts = desk_options(2);
        let mut params = FavoaParams::seeded(&config, 3).unwrap();
        let report = train(&mut params, &config, &dataset, &dataset, &opts, None).unwrap();
        let text = report.to_jsonl();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("\"record\":\"meta\""));
        for (i, line) in lines[1..].iter().enumerate() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["record"], "epoch");
            assert_eq!(v["epoch"], i as u64);
            assert!(v["mean_train_loss"].as_f64().unwrap().is_finite());
        }
    }
}
