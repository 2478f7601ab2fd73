//! The full fusion graph.
//!
//! Per entry: the context block feeds self-attention, then the LSTM, and the
//! flattened hidden states form the context summary. The voice embedding
//! passes a ReLU and a linear projection up to the same dimension. The gated
//! bimodal unit fuses voice (modality one, read by the gate) with context
//! (modality two), and a linear head plus softmax yields the probability
//! that the target is audibly speaking.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{assemble_context, ContextError, ContextPlan};
use crate::gbu::{gbu_forward, GbuParams, GbuVars};
use crate::layers::{
    attention_forward, linear_forward, lstm_forward, AttentionParams, AttentionVars, LinearParams,
    LinearVars, LstmParams, LstmVars,
};
use crate::provider::{AudioRef, EmbeddingProvider, FaceCropRef, ProviderError, SceneSource};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const PARAMS_MAGIC: &[u8; 4] = b"FAVP";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration: {0}")]
    Config(String),
    #[error("dimension mismatch for {name}: expected {expected:?}, got {got:?}")]
    Dimension {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("parameter file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

// ── Configuration ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Short-term (face+audio) embedding width.
    pub ste_dim: usize,
    /// Voice embedding width.
    pub fv_dim: usize,
    /// Per-token width after context refinement.
    pub context_dim: usize,
    /// Frames in the context window; must be odd.
    pub context_frames: usize,
    /// Speaker slots in the context window.
    pub context_speakers: usize,
    /// Hop between context frames.
    pub frame_hop: i64,
    /// Attention key/query width.
    pub attention_dim: usize,
}

impl Default for ModelConfig {
    /// Desk-scale defaults; the architecture itself is dimension-parametric.
    fn default() -> Self {
        Self {
            ste_dim: 32,
            fv_dim: 16,
            context_dim: 16,
            context_frames: 3,
            context_speakers: 2,
            frame_hop: 1,
            attention_dim: 64,
        }
    }
}

impl ModelConfig {
    /// Width of the fused representation: one slot per (frame, speaker,
    /// context channel).
    pub fn fused_dim(&self) -> usize {
        self.context_frames * self.context_speakers * self.context_dim
    }

    pub fn token_count(&self) -> usize {
        self.context_frames * self.context_speakers
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("ste_dim", self.ste_dim),
            ("fv_dim", self.fv_dim),
            ("context_dim", self.context_dim),
            ("context_frames", self.context_frames),
            ("context_speakers", self.context_speakers),
            ("attention_dim", self.attention_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.frame_hop <= 0 {
            return Err(ModelError::Config("frame_hop must be positive".into()));
        }
        if self.context_frames % 2 == 0 {
            return Err(ModelError::Config(format!(
                "context_frames must be odd so the classified step sits at the center, got {}",
                self.context_frames
            )));
        }
        Ok(())
    }

    /// First mismatching field between two configurations, by name.
    pub fn ensure_matches(&self, other: &ModelConfig) -> Result<(), ModelError> {
        let fields = [
            ("ste_dim", self.ste_dim, other.ste_dim),
            ("fv_dim", self.fv_dim, other.fv_dim),
            ("context_dim", self.context_dim, other.context_dim),
            ("context_frames", self.context_frames, other.context_frames),
            ("context_speakers", self.context_speakers, other.context_speakers),
            ("attention_dim", self.attention_dim, other.attention_dim),
            ("frame_hop", self.frame_hop as usize, other.frame_hop as usize),
        ];
        for (name, a, b) in fields {
            if a != b {
                return Err(ModelError::Dimension {
                    name: name.to_string(),
                    expected: vec![a],
                    got: vec![b],
                });
            }
        }
        Ok(())
    }
}

// ── Parameters ───────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct FavoaParams {
    pub attention: AttentionParams,
    pub lstm: LstmParams,
    /// Voice projection up to the fused width; input passes a ReLU first.
    pub fv_proj: LinearParams,
    pub gbu: GbuParams,
    pub head: LinearParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamGroupInfo {
    pub name: &'static str,
    pub trainable: bool,
    pub tensor_count: usize,
}

impl FavoaParams {
    pub fn seeded(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let fused = config.fused_dim();
        Ok(Self {
            attention: AttentionParams::seeded(config.ste_dim, config.attention_dim, &mut rng),
            lstm: LstmParams::seeded(config.ste_dim, config.context_dim, &mut rng),
            fv_proj: LinearParams::seeded(config.fv_dim, fused, &mut rng),
            gbu: GbuParams::seeded(fused, &mut rng),
            head: LinearParams::seeded(fused, 2, &mut rng),
        })
    }

    /// All-zero parameters: gates at 0.5, logits at zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut p = Self::seeded(config, 0)?;
        for (_, t) in p.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        Ok(p)
    }

    /// The five trainable parameter groups. Embedding providers sit outside
    /// this list entirely: pretrained and fixed.
    pub fn trainable_parameters(&self) -> Vec<ParamGroupInfo> {
        vec![
            ParamGroupInfo { name: "attention", trainable: true, tensor_count: 4 },
            ParamGroupInfo { name: "lstm", trainable: true, tensor_count: 8 },
            ParamGroupInfo { name: "fv_proj", trainable: true, tensor_count: 2 },
            ParamGroupInfo { name: "gbu", trainable: true, tensor_count: 6 },
            ParamGroupInfo { name: "head", trainable: true, tensor_count: 2 },
        ]
    }

    /// Canonical tensor order; the parameter file, optimizer state, and
    /// gradient accumulation all follow it.
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("attention.query_weight", &self.attention.query_weight),
            ("attention.key_weight", &self.attention.key_weight),
            ("attention.value_weight", &self.attention.value_weight),
            ("attention.out_weight", &self.attention.out_weight),
            ("lstm.input_weight", &self.lstm.input_weight),
            ("lstm.input_bias", &self.lstm.input_bias),
            ("lstm.forget_weight", &self.lstm.forget_weight),
            ("lstm.forget_bias", &self.lstm.forget_bias),
            ("lstm.output_weight", &self.lstm.output_weight),
            ("lstm.output_bias", &self.lstm.output_bias),
            ("lstm.cell_weight", &self.lstm.cell_weight),
            ("lstm.cell_bias", &self.lstm.cell_bias),
            ("fv_proj.weight", &self.fv_proj.weight),
            ("fv_proj.bias", &self.fv_proj.bias),
            ("gbu.gate_weight", &self.gbu.gate_weight),
            ("gbu.gate_bias", &self.gbu.gate_bias),
            ("gbu.first_weight", &self.gbu.first_weight),
            ("gbu.first_bias", &self.gbu.first_bias),
            ("gbu.second_weight", &self.gbu.second_weight),
            ("gbu.second_bias", &self.gbu.second_bias),
            ("head.weight", &self.head.weight),
            ("head.bias", &self.head.bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("attention.query_weight", &mut self.attention.query_weight),
            ("attention.key_weight", &mut self.attention.key_weight),
            ("attention.value_weight", &mut self.attention.value_weight),
            ("attention.out_weight", &mut self.attention.out_weight),
            ("lstm.input_weight", &mut self.lstm.input_weight),
            ("lstm.input_bias", &mut self.lstm.input_bias),
            ("lstm.forget_weight", &mut self.lstm.forget_weight),
            ("lstm.forget_bias", &mut self.lstm.forget_bias),
            ("lstm.output_weight", &mut self.lstm.output_weight),
            ("lstm.output_bias", &mut self.lstm.output_bias),
            ("lstm.cell_weight", &mut self.lstm.cell_weight),
            ("lstm.cell_bias", &mut self.lstm.cell_bias),
            ("fv_proj.weight", &mut self.fv_proj.weight),
            ("fv_proj.bias", &mut self.fv_proj.bias),
            ("gbu.gate_weight", &mut self.gbu.gate_weight),
            ("gbu.gate_bias", &mut self.gbu.gate_bias),
            ("gbu.first_weight", &mut self.gbu.first_weight),
            ("gbu.first_bias", &mut self.gbu.first_bias),
            ("gbu.second_weight", &mut self.gbu.second_weight),
            ("gbu.second_bias", &mut self.gbu.second_bias),
            ("head.weight", &mut self.head.weight),
            ("head.bias", &mut self.head.bias),
        ]
    }

    /// Verify the whole dimension chain against a configuration. Runs at
    /// construction and load time so forward passes never trip mid-graph.
    pub fn validate_against(&self, config: &ModelConfig) -> Result<(), ModelError> {
        config.validate()?;
        let fused = config.fused_dim();
        let expectations: Vec<(&str, Vec<usize>, Vec<usize>)> = vec![
            (
                "attention.query_weight",
                vec![config.attention_dim, config.ste_dim],
                self.attention.query_weight.shape().to_vec(),
            ),
            (
                "attention.out_weight",
                vec![config.ste_dim, config.attention_dim],
                self.attention.out_weight.shape().to_vec(),
            ),
            (
                "lstm.input_weight",
                vec![config.context_dim, config.ste_dim + config.context_dim],
                self.lstm.input_weight.shape().to_vec(),
            ),
            (
                "fv_proj.weight",
                vec![fused, config.fv_dim],
                self.fv_proj.weight.shape().to_vec(),
            ),
            (
                "gbu.gate_weight",
                vec![fused, 2 * fused],
                self.gbu.gate_weight.shape().to_vec(),
            ),
            ("head.weight", vec![2, fused], self.head.weight.shape().to_vec()),
        ];
        for (name, expected, got) in expectations {
            if expected != got {
                return Err(ModelError::Dimension {
                    name: name.to_string(),
                    expected,
                    got,
                });
            }
        }
        Ok(())
    }

    pub fn on_tape(&self, tape: &Tape) -> FavoaVars {
        FavoaVars {
            attention: self.attention.on_tape(tape),
            lstm: self.lstm.on_tape(tape),
            fv_proj: self.fv_proj.on_tape(tape),
            gbu: self.gbu.on_tape(tape),
            head: self.head.on_tape(tape),
        }
    }
}

pub struct FavoaVars {
    pub attention: AttentionVars,
    pub lstm: LstmVars,
    pub fv_proj: LinearVars,
    pub gbu: GbuVars,
    pub head: LinearVars,
}

impl FavoaVars {
    /// Same order as [`FavoaParams::tensors`].
    pub fn tensor_vars(&self) -> Vec<Var> {
        vec![
            self.attention.query_weight,
            self.attention.key_weight,
            self.attention.value_weight,
            self.attention.out_weight,
            self.lstm.input_weight,
            self.lstm.input_bias,
            self.lstm.forget_weight,
            self.lstm.forget_bias,
            self.lstm.output_weight,
            self.lstm.output_bias,
            self.lstm.cell_weight,
            self.lstm.cell_bias,
            self.fv_proj.weight,
            self.fv_proj.bias,
            self.gbu.gate_weight,
            self.gbu.gate_bias,
            self.gbu.first_weight,
            self.gbu.first_bias,
            self.gbu.second_weight,
            self.gbu.second_bias,
            self.head.weight,
            self.head.bias,
        ]
    }
}

// ── Forward pass ─────────────────────────────────────────────────────

/// One entry to classify: the target track at one time step of one scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntryRef {
    pub scene: usize,
    pub track: crate::context::TrackId,
    pub frame: crate::context::FrameIndex,
}

/// On-tape handles for everything downstream analysis reads.
pub struct TraceVars {
    pub logits: Var,
    pub gate: Var,
    pub fused: Var,
    pub context_summary: Var,
    pub voice_projection: Var,
}

/// Plain-value outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Probability the target is audibly speaking, strictly inside (0, 1).
    pub prob_speaking: f64,
    pub logits: [f64; 2],
    pub gate: Vec<f64>,
    pub fused: Vec<f64>,
    pub context_summary: Vec<f64>,
    pub voice_projection: Vec<f64>,
}

pub fn forward_on_tape(
    tape: &Tape,
    vars: &FavoaVars,
    config: &ModelConfig,
    scenes: &dyn SceneSource,
    provider: &dyn EmbeddingProvider,
    entry: &EntryRef,
) -> Result<TraceVars, ModelError> {
    let layout = scenes.layout(entry.scene)?;
    let plan = ContextPlan {
        center: entry.frame,
        frames: config.context_frames,
        speakers: config.context_speakers,
        hop: config.frame_hop,
    };
    let context = assemble_context::<ModelError>(
        &plan,
        &layout.tracks,
        entry.track,
        layout.first_frame,
        layout.last_frame,
        config.ste_dim,
        |reference| {
            let face = FaceCropRef {
                scene: entry.scene,
                track: reference.track,
                frame: reference.frame,
            };
            let audio = AudioRef {
                scene: entry.scene,
                frame: reference.frame,
            };
            Ok(provider.ste(&face, &audio)?)
        },
    )?;

    // Context branch: tokens in time-major order (all speaker slots of the
    // earliest frame first), matching the LSTM sequence and the layout of
    // the fused vector.
    let tokens = tape.var(
        vec![config.token_count(), config.ste_dim],
        context.data.data().to_vec(),
        false,
    )?;
    let refined = attention_forward(tape, &vars.attention, tokens)?;
    let hidden = lstm_forward(tape, &vars.lstm, refined)?;
    let context_summary = tape.reshape(hidden, vec![config.fused_dim()])?;

    // Voice branch: ReLU then linear projection up to the fused width.
    let voice = provider.fv(&AudioRef {
        scene: entry.scene,
        frame: entry.frame,
    })?;
    let voice_in = tape.var(vec![config.fv_dim], voice, false)?;
    let rectified = tape.relu(voice_in);
    let voice_projection = linear_forward(tape, &vars.fv_proj, rectified)?;

    // Fusion: voice is modality one, so the gate value itself reads as the
    // face-voice contribution.
    let fusion = gbu_forward(tape, &vars.gbu, voice_projection, context_summary)?;
    let logits = linear_forward(tape, &vars.head, fusion.fused)?;

    Ok(TraceVars {
        logits,
        gate: fusion.gate,
        fused: fusion.fused,
        context_summary,
        voice_projection,
    })
}

pub fn forward(
    params: &FavoaParams,
    config: &ModelConfig,
    scenes: &dyn SceneSource,
    provider: &dyn EmbeddingProvider,
    entry: &EntryRef,
) -> Result<ForwardTrace, ModelError> {
    let tape = Tape::new();
    let vars = params.on_tape(&tape);
    let trace = forward_on_tape(&tape, &vars, config, scenes, provider, entry)?;
    let logits = tape.value(trace.logits);
    Ok(ForwardTrace {
        prob_speaking: prob_from_logits(logits[0], logits[1]),
        logits: [logits[0], logits[1]],
        gate: tape.value(trace.gate),
        fused: tape.value(trace.fused),
        context_summary: tape.value(trace.context_summary),
        voice_projection: tape.value(trace.voice_projection),
    })
}

/// Softmax probability of the positive class (logit index 0), stable form.
pub fn prob_from_logits(positive: f64, negative: f64) -> f64 {
    let m = positive.max(negative);
    let e0 = (positive - m).exp();
    let e1 = (negative - m).exp();
    e0 / (e0 + e1)
}

// ── Parameter file ───────────────────────────────────────────────────

fn config_table(config: &ModelConfig) -> Vec<u8> {
    let mut out = Vec::with_capacity(32);
    for v in [
        config.ste_dim,
        config.fv_dim,
        config.context_dim,
        config.context_frames,
        config.context_speakers,
        config.attention_dim,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&config.frame_hop.to_le_bytes());
    out
}

/// Full parameter image: magic, version, dimension table, then every tensor
/// in canonical order with its shape. Little-endian throughout.
pub fn params_to_bytes(config: &ModelConfig, params: &FavoaParams) -> Result<Vec<u8>, ModelError> {
    params.validate_against(config)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(PARAMS_MAGIC);
    buf.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    buf.extend_from_slice(&config_table(config));
    for (_, tensor) in params.tensors() {
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for d in tensor.shape() {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

/// Write the parameter image to disk; round-trips bit-exactly.
pub fn save_params(
    path: &Path,
    config: &ModelConfig,
    params: &FavoaParams,
) -> Result<(), ModelError> {
    let buf = params_to_bytes(config, params)?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    let mut file = fs::File::create(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(&buf).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.at + n > self.bytes.len() {
            return Err(ModelError::Format {
                path: self.path.to_path_buf(),
                reason: "file truncated".into(),
            });
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, ModelError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse a parameter image; the stored dimension table reconstructs the
/// configuration, so evaluation needs no separate config.
pub fn params_from_bytes(
    bytes: &[u8],
    path: &Path,
) -> Result<(ModelConfig, FavoaParams), ModelError> {
    let mut r = Reader { bytes, at: 0, path };
    if r.take(4)? != PARAMS_MAGIC {
        return Err(ModelError::Format {
            path: path.to_path_buf(),
            reason: "bad magic header".into(),
        });
    }
    let version = r.u32()?;
    if version != PARAMS_VERSION {
        return Err(ModelError::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported version {version}"),
        });
    }
    let config = ModelConfig {
        ste_dim: r.u32()? as usize,
        fv_dim: r.u32()? as usize,
        context_dim: r.u32()? as usize,
        context_frames: r.u32()? as usize,
        context_speakers: r.u32()? as usize,
        attention_dim: r.u32()? as usize,
        frame_hop: r.i64()?,
    };
    config.validate().map_err(|e| ModelError::Format {
        path: path.to_path_buf(),
        reason: format!("stored configuration invalid: {e}"),
    })?;

    let mut params = FavoaParams::zeros(&config)?;
    for (name, tensor) in params.tensors_mut() {
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape != tensor.shape() {
            return Err(ModelError::Dimension {
                name: name.to_string(),
                expected: tensor.shape().to_vec(),
                got: shape,
            });
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        for (i, v) in tensor.data_mut().iter_mut().enumerate() {
            *v = f64::from_le_bytes(raw[i * 8..(i + 1) * 8].try_into().unwrap());
        }
    }
    if r.at != bytes.len() {
        return Err(ModelError::Format {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes", bytes.len() - r.at),
        });
    }
    Ok((config, params))
}

pub fn load_params(path: &Path) -> Result<(ModelConfig, FavoaParams), ModelError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    params_from_bytes(&bytes, path)
}

/// Load and insist the stored configuration equals `expected`.
pub fn load_params_matching(
    path: &Path,
    expected: &ModelConfig,
) -> Result<FavoaParams, ModelError> {
    let (stored, params) = load_params(path)?;
    expected.ensure_matches(&stored)?;
    Ok(params)
}
