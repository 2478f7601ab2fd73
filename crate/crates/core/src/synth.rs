//! Deterministic generator of desk-scale datasets with controllable
//! face-voice correspondence.
//!
//! Every person carries an abstract identity code used for both face and
//! voice channels. Face embeddings hold the person's code, a mouth-motion
//! channel, and filler noise; voice embeddings hold the code of whoever is
//! audibly speaking (a mixture when several are). In `clear` scenes the
//! mouth channel tracks the speaking label; in `ambiguous` scenes it is pure
//! noise, so only matching the face code against the voice code can separate
//! the classes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::context::{FrameIndex, TrackId};
use crate::data::{
    write_features, Ambiguity, DataError, Manifest, ManifestAudioFrame, ManifestCell,
    ManifestScene, ManifestTrack, RawLabel, Split, MANIFEST_VERSION,
};

/// Identity/voice code width shared by face and voice embeddings.
pub const CODE_DIMS: usize = 8;
/// Strength of the active code channel.
pub const CODE_AMPLITUDE: f64 = 2.0;
/// Width of the mouth-motion channel inside the face embedding.
pub const MOUTH_DIMS: usize = 8;
/// Mouth-motion magnitude in clear scenes.
pub const MOUTH_AMPLITUDE: f64 = 1.0;
/// Variance ceiling for the attenuated mouth channel of the low-resolution
/// fixture.
pub const NOISE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub scenes: usize,
    pub persons_per_scene: usize,
    pub frames_per_scene: usize,
    /// Noise level added to code and mouth channels.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Fraction of scenes whose mouth channel is replaced by noise.
    #[serde(default = "default_half")]
    pub ambiguous_fraction: f64,
    /// Target fraction of positive (track, frame) entries.
    #[serde(default = "default_prevalence")]
    pub speaking_prevalence: f64,
    /// Rate at which speaking activity is inaudible.
    #[serde(default = "default_not_audible")]
    pub not_audible_rate: f64,
    /// Fraction of scenes held out for validation.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_ste_dim")]
    pub ste_dim: usize,
    #[serde(default = "default_fv_dim")]
    pub fv_dim: usize,
}

fn default_noise() -> f64 {
    0.1
}
fn default_half() -> f64 {
    0.5
}
fn default_prevalence() -> f64 {
    0.4
}
fn default_not_audible() -> f64 {
    0.02
}
fn default_val_fraction() -> f64 {
    0.25
}
fn default_ste_dim() -> usize {
    32
}
fn default_fv_dim() -> usize {
    16
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |reason: String| DataError::Manifest {
            path: PathBuf::from("<generator config>"),
            reason,
        };
        if self.scenes == 0 || self.persons_per_scene == 0 || self.frames_per_scene == 0 {
            return Err(bad("scenes, persons_per_scene and frames_per_scene must be positive".into()));
        }
        if self.noise < 0.0 {
            return Err(bad(format!("noise must be non-negative, got {}", self.noise)));
        }
        for (name, v) in [
            ("ambiguous_fraction", self.ambiguous_fraction),
            ("speaking_prevalence", self.speaking_prevalence),
            ("not_audible_rate", self.not_audible_rate),
            ("val_fraction", self.val_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.ste_dim < CODE_DIMS + MOUTH_DIMS {
            return Err(bad(format!(
                "ste_dim must be at least {}, got {}",
                CODE_DIMS + MOUTH_DIMS,
                self.ste_dim
            )));
        }
        if self.fv_dim < CODE_DIMS {
            return Err(bad(format!(
                "fv_dim must be at least {CODE_DIMS}, got {}",
                self.fv_dim
            )));
        }
        if self.persons_per_scene > CODE_DIMS {
            return Err(bad(format!(
                "persons_per_scene can be at most {CODE_DIMS} (distinct identity codes), got {}",
                self.persons_per_scene
            )));
        }
        Ok(())
    }
}

/// Abstract identity: the code stands in for gender, age, timbre and the
/// other cues a real encoder would carry.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonLatent {
    pub track_id: TrackId,
    pub code: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub id: String,
    pub persons: Vec<PersonLatent>,
    pub first_frame: FrameIndex,
    pub last_frame: FrameIndex,
    pub ambiguity: Ambiguity,
    pub split: Split,
    pub labels: BTreeMap<(TrackId, FrameIndex), RawLabel>,
    pub face_features: BTreeMap<(TrackId, FrameIndex), Vec<f64>>,
    pub voice_features: BTreeMap<FrameIndex, Vec<f64>>,
}

impl SyntheticScene {
    pub fn frames(&self) -> impl Iterator<Item = FrameIndex> + '_ {
        self.first_frame..=self.last_frame
    }
}

#[derive(Debug, Clone, PartialEq)]
enum MouthChannel {
    /// Sign follows the speaking state, clear scenes.
    Correlated,
    /// Noise independent of the label, ambiguous scenes. The pattern is
    /// drawn once per frame and shared by everyone visible in it, the way a
    /// frame-wide degradation hits every face at once.
    PureNoise(Vec<f64>),
    /// Sub-noise-floor residue, low-resolution fixture.
    Attenuated,
    /// Speech-like motion regardless of label, wrong-gender fixture.
    SpeechLike,
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Sparse non-negative identity codes: one active channel per person,
/// distinct within a scene. Non-negativity keeps the code intact through
/// the voice branch's ReLU.
fn sample_codes(rng: &mut ChaCha20Rng, persons: usize) -> Vec<Vec<f64>> {
    assert!(
        persons <= CODE_DIMS,
        "at most {CODE_DIMS} distinct identities per scene"
    );
    let mut active: Vec<usize> = (0..CODE_DIMS).collect();
    for i in (1..active.len()).rev() {
        let j = rng.gen_range(0..=i);
        active.swap(i, j);
    }
    (0..persons)
        .map(|p| {
            let mut code = vec![0.0; CODE_DIMS];
            code[active[p]] = CODE_AMPLITUDE;
            code
        })
        .collect()
}

fn face_feature(
    rng: &mut ChaCha20Rng,
    ste_dim: usize,
    noise: f64,
    code: &[f64],
    mouth: &MouthChannel,
    speaking: bool,
) -> Vec<f64> {
    let mut v = Vec::with_capacity(ste_dim);
    for c in code {
        v.push(c + noise * normal(rng));
    }
    for m in 0..MOUTH_DIMS {
        let value = match mouth {
            MouthChannel::Correlated => {
                let sign = if speaking { 1.0 } else { -1.0 };
                sign * MOUTH_AMPLITUDE + noise * normal(rng)
            }
            MouthChannel::PureNoise(pattern) => pattern[m],
            MouthChannel::Attenuated => 0.005 * normal(rng),
            MouthChannel::SpeechLike => 0.8 * MOUTH_AMPLITUDE + noise * normal(rng),
        };
        v.push(value);
    }
    for _ in CODE_DIMS + MOUTH_DIMS..ste_dim {
        v.push(noise * normal(rng));
    }
    v
}

fn voice_feature(
    rng: &mut ChaCha20Rng,
    fv_dim: usize,
    noise: f64,
    audible_codes: &[&[f64]],
) -> Vec<f64> {
    let mut v = Vec::with_capacity(fv_dim);
    for i in 0..CODE_DIMS {
        let mixed = if audible_codes.is_empty() {
            0.0
        } else {
            audible_codes.iter().map(|c| c[i]).sum::<f64>() / audible_codes.len() as f64
        };
        v.push(mixed + noise * normal(rng));
    }
    for _ in CODE_DIMS..fv_dim {
        v.push(noise * normal(rng));
    }
    v
}

fn mix_seed(seed: u64, scene: u64) -> u64 {
    let mut x = seed ^ scene.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn build_scene(
    config: &GeneratorConfig,
    index: usize,
    ambiguity: Ambiguity,
    split: Split,
) -> SyntheticScene {
    let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(config.seed, index as u64));
    let persons: Vec<PersonLatent> = sample_codes(&mut rng, config.persons_per_scene)
        .into_iter()
        .enumerate()
        .map(|(i, code)| PersonLatent {
            track_id: i as TrackId,
            code,
        })
        .collect();
    let first_frame = 0;
    let last_frame = config.frames_per_scene as FrameIndex - 1;

    // At most one speaker per generated frame; the chance a frame carries
    // speech is scaled so each (person, frame) cell is positive at the
    // configured prevalence.
    let speech_prob = (config.speaking_prevalence * config.persons_per_scene as f64).min(1.0);
    let mut labels = BTreeMap::new();
    for frame in first_frame..=last_frame {
        let speaker = if rng.gen_bool(speech_prob) {
            let who = rng.gen_range(0..persons.len());
            let label = if rng.gen_bool(config.not_audible_rate) {
                RawLabel::SpeakingNotAudible
            } else {
                RawLabel::SpeakingAudible
            };
            Some((who, label))
        } else {
            None
        };
        for (i, person) in persons.iter().enumerate() {
            let label = match speaker {
                Some((who, l)) if who == i => l,
                _ => RawLabel::NotSpeaking,
            };
            labels.insert((person.track_id, frame), label);
        }
    }

    let mouth_patterns: BTreeMap<FrameIndex, Vec<f64>> = (first_frame..=last_frame)
        .map(|f| (f, (0..MOUTH_DIMS).map(|_| normal(&mut rng)).collect()))
        .collect();
    let mouth_for = |_: TrackId, frame: FrameIndex| match ambiguity {
        Ambiguity::Clear => MouthChannel::Correlated,
        Ambiguity::Ambiguous => MouthChannel::PureNoise(mouth_patterns[&frame].clone()),
    };
    let (face_features, voice_features) =
        render_features(&mut rng, config, &persons, &labels, first_frame, last_frame, mouth_for);

    SyntheticScene {
        id: format!("s{index:04}"),
        persons,
        first_frame,
        last_frame,
        ambiguity,
        split,
        labels,
        face_features,
        voice_features,
    }
}

/// Compute both feature maps for a fully labeled scene. `mouth_for` decides
/// the mouth channel regime per (track, frame).
fn render_features(
    rng: &mut ChaCha20Rng,
    config: &GeneratorConfig,
    persons: &[PersonLatent],
    labels: &BTreeMap<(TrackId, FrameIndex), RawLabel>,
    first_frame: FrameIndex,
    last_frame: FrameIndex,
    mouth_for: impl Fn(TrackId, FrameIndex) -> MouthChannel,
) -> (
    BTreeMap<(TrackId, FrameIndex), Vec<f64>>,
    BTreeMap<FrameIndex, Vec<f64>>,
) {
    let mut face_features = BTreeMap::new();
    for person in persons {
        for frame in first_frame..=last_frame {
            let label = labels[&(person.track_id, frame)];
            let speaking = label != RawLabel::NotSpeaking;
            let feature = face_feature(
                rng,
                config.ste_dim,
                config.noise,
                &person.code,
                &mouth_for(person.track_id, frame),
                speaking,
            );
            face_features.insert((person.track_id, frame), feature);
        }
    }
    let mut voice_features = BTreeMap::new();
    for frame in first_frame..=last_frame {
        let audible: Vec<&[f64]> = persons
            .iter()
            .filter(|p| labels[&(p.track_id, frame)] == RawLabel::SpeakingAudible)
            .map(|p| p.code.as_slice())
            .collect();
        voice_features.insert(
            frame,
            voice_feature(rng, config.fv_dim, config.noise, &audible),
        );
    }
    (face_features, voice_features)
}

/// Even spread of `fraction` over `count` items.
fn spread(fraction: f64, index: usize) -> bool {
    let before = (index as f64 * fraction).floor();
    let after = ((index + 1) as f64 * fraction).floor();
    after > before
}

pub fn plan_scenes(config: &GeneratorConfig) -> Vec<(Ambiguity, Split)> {
    let val_scenes = (config.scenes as f64 * config.val_fraction).round() as usize;
    let train_scenes = config.scenes - val_scenes;
    (0..config.scenes)
        .map(|i| {
            let ambiguity = if spread(config.ambiguous_fraction, i) {
                Ambiguity::Ambiguous
            } else {
                Ambiguity::Clear
            };
            let split = if i < train_scenes { Split::Train } else { Split::Val };
            (ambiguity, split)
        })
        .collect()
}

pub fn build_scenes(config: &GeneratorConfig) -> Result<Vec<SyntheticScene>, DataError> {
    config.validate()?;
    Ok(plan_scenes(config)
        .into_iter()
        .enumerate()
        .map(|(i, (ambiguity, split))| build_scene(config, i, ambiguity, split))
        .collect())
}

/// Generate the dataset under `out_dir`; returns the manifest path.
pub fn generate(config: &GeneratorConfig, out_dir: &Path) -> Result<PathBuf, DataError> {
    let scenes = build_scenes(config)?;
    let io_err = |path: &Path, source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let mut manifest_scenes = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        let face_rel = format!("features/{}_faces.bin", scene.id);
        let voice_rel = format!("features/{}_voice.bin", scene.id);

        let mut face_rows = Vec::new();
        let mut tracks: BTreeMap<TrackId, Vec<ManifestCell>> = BTreeMap::new();
        for ((track, frame), feature) in &scene.face_features {
            let feature_index = face_rows.len();
            face_rows.push(feature.clone());
            tracks.entry(*track).or_default().push(ManifestCell {
                frame: *frame,
                label: scene.labels[&(*track, *frame)],
                feature_index,
            });
        }
        let mut voice_rows = Vec::new();
        let mut audio_frames = Vec::new();
        for (frame, feature) in &scene.voice_features {
            audio_frames.push(ManifestAudioFrame {
                frame: *frame,
                feature_index: voice_rows.len(),
            });
            voice_rows.push(feature.clone());
        }
        write_features(&out_dir.join(&face_rel), config.ste_dim, &face_rows)?;
        write_features(&out_dir.join(&voice_rel), config.fv_dim, &voice_rows)?;

        manifest_scenes.push(ManifestScene {
            id: scene.id.clone(),
            split: scene.split,
            ambiguity: scene.ambiguity,
            first_frame: scene.first_frame,
            last_frame: scene.last_frame,
            face_features: face_rel,
            voice_features: voice_rel,
            tracks: tracks
                .into_iter()
                .map(|(track_id, cells)| ManifestTrack { track_id, cells })
                .collect(),
            audio_frames,
        });
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        ste_dim: config.ste_dim,
        fv_dim: config.fv_dim,
        generator: Some(config.clone()),
        scenes: manifest_scenes,
    };
    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text + "\n").map_err(|e| io_err(&manifest_path, e))?;
    Ok(manifest_path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    /// Non-speaker's mouth looks speech-like; the voice matches the other
    /// person's code.
    WrongGender,
    /// Every mouth channel sits below the noise floor.
    LowResolution,
    /// Two people audibly speak at once; the voice is their mixture.
    MultipleSpeakers,
}

/// Hand-built scenes reproducing the situations where mouth motion alone
/// cannot settle who speaks.
pub fn scenario_fixture(kind: ScenarioKind) -> SyntheticScene {
    let config = GeneratorConfig {
        seed: 0xF1D0,
        scenes: 1,
        persons_per_scene: 2,
        frames_per_scene: 8,
        noise: 0.05,
        ambiguous_fraction: 0.0,
        speaking_prevalence: 0.5,
        not_audible_rate: 0.0,
        val_fraction: 0.0,
        ste_dim: default_ste_dim(),
        fv_dim: default_fv_dim(),
    };
    let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(config.seed, kind as u64));
    // Two maximally dissimilar identities: disjoint active channels.
    let persons: Vec<PersonLatent> = sample_codes(&mut rng, 2)
        .into_iter()
        .enumerate()
        .map(|(i, code)| PersonLatent {
            track_id: i as TrackId,
            code,
        })
        .collect();
    let (first_frame, last_frame) = (0, config.frames_per_scene as FrameIndex - 1);

    let mut labels = BTreeMap::new();
    for frame in first_frame..=last_frame {
        match kind {
            // Person 1 speaks; person 0 merely looks like it.
            ScenarioKind::WrongGender | ScenarioKind::LowResolution => {
                labels.insert((0, frame), RawLabel::NotSpeaking);
                labels.insert((1, frame), RawLabel::SpeakingAudible);
            }
            ScenarioKind::MultipleSpeakers => {
                labels.insert((0, frame), RawLabel::SpeakingAudible);
                labels.insert((1, frame), RawLabel::SpeakingAudible);
            }
        }
    }

    let mouth_for = move |track: TrackId, _frame: FrameIndex| match kind {
        ScenarioKind::WrongGender => {
            if track == 0 {
                MouthChannel::SpeechLike
            } else {
                MouthChannel::Correlated
            }
        }
        ScenarioKind::LowResolution => MouthChannel::Attenuated,
        ScenarioKind::MultipleSpeakers => MouthChannel::Correlated,
    };
    let (face_features, voice_features) = render_features(
        &mut rng,
        &config,
        &persons,
        &labels,
        first_frame,
        last_frame,
        mouth_for,
    );

    SyntheticScene {
        id: format!("fixture_{kind:?}").to_lowercase(),
        persons,
        first_frame,
        last_frame,
        ambiguity: Ambiguity::Ambiguous,
        split: Split::Val,
        labels,
        face_features,
        voice_features,
    }
}
