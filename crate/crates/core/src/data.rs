//! Dataset manifest, feature files, and the loaded dataset.
//!
//! A dataset on disk is one JSON manifest plus little-endian f64 feature
//! files. The manifest lists scenes, their tracks, the label of every
//! (track, frame) cell, and relative paths to the feature files; each
//! feature file starts with a header giving the vector dimension and count.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{FrameIndex, SpeakerTrack, TrackId};
use crate::provider::{
    AudioRef, EmbeddingProvider, FaceCropRef, ProviderError, SceneLayout, SceneSource,
};
use crate::synth::GeneratorConfig;

pub const FEATURE_MAGIC: &[u8; 4] = b"FAVF";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed JSON in {path} at line {line}, column {column}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("bad feature file {path}: {reason}")]
    FeatureFormat { path: PathBuf, reason: String },
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("unknown label string {0:?}")]
    UnknownLabel(String),
}

// ── Labels and splits ────────────────────────────────────────────────

/// Raw activity label of one (track, frame) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawLabel {
    NotSpeaking,
    SpeakingAudible,
    SpeakingNotAudible,
}

impl RawLabel {
    /// Audibly speaking activity is the positive class; everything else,
    /// including inaudible speaking, is negative.
    pub fn is_positive(self) -> bool {
        matches!(self, RawLabel::SpeakingAudible)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RawLabel::NotSpeaking => "not_speaking",
            RawLabel::SpeakingAudible => "speaking_audible",
            RawLabel::SpeakingNotAudible => "speaking_not_audible",
        }
    }
}

impl FromStr for RawLabel {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "not_speaking" => Ok(RawLabel::NotSpeaking),
            "speaking_audible" => Ok(RawLabel::SpeakingAudible),
            "speaking_not_audible" => Ok(RawLabel::SpeakingNotAudible),
            other => Err(DataError::UnknownLabel(other.to_string())),
        }
    }
}

impl fmt::Display for RawLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ambiguity {
    /// Mouth motion correlates with the speaking label.
    Clear,
    /// Mouth motion is pure noise; only face-voice matching carries signal.
    Ambiguous,
}

// ── Manifest schema ──────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub ste_dim: usize,
    pub fv_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    pub scenes: Vec<ManifestScene>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestScene {
    pub id: String,
    pub split: Split,
    pub ambiguity: Ambiguity,
    pub first_frame: FrameIndex,
    pub last_frame: FrameIndex,
    /// Relative path to this scene's face embeddings.
    pub face_features: String,
    /// Relative path to this scene's voice embeddings.
    pub voice_features: String,
    pub tracks: Vec<ManifestTrack>,
    pub audio_frames: Vec<ManifestAudioFrame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestTrack {
    pub track_id: TrackId,
    pub cells: Vec<ManifestCell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestCell {
    pub frame: FrameIndex,
    pub label: RawLabel,
    /// Row index into the scene's face feature file.
    pub feature_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestAudioFrame {
    pub frame: FrameIndex,
    /// Row index into the scene's voice feature file.
    pub feature_index: usize,
}

// ── Feature files ────────────────────────────────────────────────────

/// Write vectors as `FAVF | dim u32 | count u32 | f64 data`, little-endian.
pub fn write_features(path: &Path, dim: usize, rows: &[Vec<f64>]) -> Result<(), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut buf = Vec::with_capacity(12 + rows.len() * dim * 8);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    for row in rows {
        debug_assert_eq!(row.len(), dim);
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)
}

pub fn read_features(path: &Path) -> Result<(usize, Vec<Vec<f64>>), DataError> {
    let io_err = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(io_err)?
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    let bad = |reason: &str| DataError::FeatureFormat {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(bad("missing FAVF header"));
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + count * dim * 8;
    if bytes.len() != expected {
        return Err(bad(&format!(
            "expected {expected} bytes for {count} rows of dim {dim}, file has {}",
            bytes.len()
        )));
    }
    let mut rows = Vec::with_capacity(count);
    let mut offset = 12;
    for _ in 0..count {
        let row: Vec<f64> = (0..dim)
            .map(|i| {
                let at = offset + i * 8;
                f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
            })
            .collect();
        offset += dim * 8;
        rows.push(row);
    }
    Ok((dim, rows))
}

// ── Loaded dataset ───────────────────────────────────────────────────

/// One classification instance: a (track, frame) cell with its label.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub entry_id: String,
    pub scene: usize,
    pub track: TrackId,
    pub frame: FrameIndex,
    pub label: RawLabel,
    pub split: Split,
    pub ambiguity: Ambiguity,
}

struct LoadedScene {
    id: String,
    layout: SceneLayout,
    face_rows: Vec<Vec<f64>>,
    face_index: HashMap<(TrackId, FrameIndex), usize>,
    voice_rows: Vec<Vec<f64>>,
    voice_index: HashMap<FrameIndex, usize>,
}

pub struct Dataset {
    ste_dim: usize,
    fv_dim: usize,
    scenes: Vec<LoadedScene>,
    entries: Vec<DatasetEntry>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(manifest_path).map_err(|source| DataError::Io {
            path: manifest_path.to_path_buf(),
            source,
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| DataError::Json {
                path: manifest_path.to_path_buf(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(DataError::Manifest {
                path: manifest_path.to_path_buf(),
                reason: format!(
                    "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                    manifest.version
                ),
            });
        }
        let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_manifest(&manifest, root, manifest_path)
    }

    fn from_manifest(
        manifest: &Manifest,
        root: &Path,
        manifest_path: &Path,
    ) -> Result<Self, DataError> {
        let mut scenes = Vec::with_capacity(manifest.scenes.len());
        let mut entries = Vec::new();
        for (scene_idx, scene) in manifest.scenes.iter().enumerate() {
            let (face_dim, face_rows) = read_features(&root.join(&scene.face_features))?;
            let (voice_dim, voice_rows) = read_features(&root.join(&scene.voice_features))?;
            if face_dim != manifest.ste_dim || voice_dim != manifest.fv_dim {
                return Err(DataError::Manifest {
                    path: manifest_path.to_path_buf(),
                    reason: format!(
                        "scene {}: feature dims ({face_dim}, {voice_dim}) disagree with manifest ({}, {})",
                        scene.id, manifest.ste_dim, manifest.fv_dim
                    ),
                });
            }
            let mut face_index = HashMap::new();
            let mut tracks = Vec::with_capacity(scene.tracks.len());
            for track in &scene.tracks {
                for cell in &track.cells {
                    if cell.feature_index >= face_rows.len() {
                        return Err(DataError::Manifest {
                            path: manifest_path.to_path_buf(),
                            reason: format!(
                                "scene {}: face feature index {} out of range",
                                scene.id, cell.feature_index
                            ),
                        });
                    }
                    face_index.insert((track.track_id, cell.frame), cell.feature_index);
                    entries.push(DatasetEntry {
                        entry_id: format!(
                            "{}_t{:03}_f{:05}",
                            scene.id, track.track_id, cell.frame
                        ),
                        scene: scene_idx,
                        track: track.track_id,
                        frame: cell.frame,
                        label: cell.label,
                        split: scene.split,
                        ambiguity: scene.ambiguity,
                    });
                }
                tracks.push(SpeakerTrack::from_frames(
                    track.track_id,
                    track.cells.iter().map(|c| c.frame),
                ));
            }
            let mut voice_index = HashMap::new();
            for af in &scene.audio_frames {
                if af.feature_index >= voice_rows.len() {
                    return Err(DataError::Manifest {
                        path: manifest_path.to_path_buf(),
                        reason: format!(
                            "scene {}: voice feature index {} out of range",
                            scene.id, af.feature_index
                        ),
                    });
                }
                voice_index.insert(af.frame, af.feature_index);
            }
            scenes.push(LoadedScene {
                id: scene.id.clone(),
                layout: SceneLayout {
                    first_frame: scene.first_frame,
                    last_frame: scene.last_frame,
                    tracks,
                },
                face_rows,
                face_index,
                voice_rows,
                voice_index,
            });
        }
        Ok(Self {
            ste_dim: manifest.ste_dim,
            fv_dim: manifest.fv_dim,
            scenes,
            entries,
        })
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn scene_id(&self, scene: usize) -> &str {
        &self.scenes[scene].id
    }

    pub fn scene_count(&self) -> usize {
        self.scenes.len()
    }

    /// Entry indices filtered by split and, optionally, by scene ambiguity.
    pub fn select(&self, split: Option<Split>, ambiguity: Option<Ambiguity>) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| split.is_none_or(|s| e.split == s))
            .filter(|(_, e)| ambiguity.is_none_or(|a| e.ambiguity == a))
            .map(|(i, _)| i)
            .collect()
    }
}

impl EmbeddingProvider for Dataset {
    fn ste(&self, face: &FaceCropRef, _audio: &AudioRef) -> Result<Vec<f64>, ProviderError> {
        let scene = self
            .scenes
            .get(face.scene)
            .ok_or(ProviderError::UnknownScene(face.scene))?;
        let idx = scene
            .face_index
            .get(&(face.track, face.frame))
            .ok_or(ProviderError::MissingFace {
                scene: face.scene,
                track: face.track,
                frame: face.frame,
            })?;
        Ok(scene.face_rows[*idx].clone())
    }

    fn fv(&self, audio: &AudioRef) -> Result<Vec<f64>, ProviderError> {
        let scene = self
            .scenes
            .get(audio.scene)
            .ok_or(ProviderError::UnknownScene(audio.scene))?;
        let idx = scene
            .voice_index
            .get(&audio.frame)
            .ok_or(ProviderError::MissingVoice {
                scene: audio.scene,
                frame: audio.frame,
            })?;
        Ok(scene.voice_rows[*idx].clone())
    }

    fn ste_dim(&self) -> usize {
        self.ste_dim
    }

    fn fv_dim(&self) -> usize {
        self.fv_dim
    }
}

impl SceneSource for Dataset {
    fn scene_count(&self) -> usize {
        self.scenes.len()
    }

    fn layout(&self, scene: usize) -> Result<&SceneLayout, ProviderError> {
        self.scenes
            .get(scene)
            .map(|s| &s.layout)
            .ok_or(ProviderError::UnknownScene(scene))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_strings_round_trip_and_unknown_is_rejected() {
        for label in [
            RawLabel::NotSpeaking,
            RawLabel::SpeakingAudible,
            RawLabel::SpeakingNotAudible,
        ] {
            assert_eq!(label.as_str().parse::<RawLabel>().unwrap(), label);
        }
        assert!(matches!(
            "shouting".parse::<RawLabel>(),
            Err(DataError::UnknownLabel(_))
        ));
        assert!(RawLabel::SpeakingAudible.is_positive());
        assert!(!RawLabel::SpeakingNotAudible.is_positive());
        assert!(!RawLabel::NotSpeaking.is_positive());
    }

    #[test]
    fn feature_file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features/demo.bin");
        let rows = vec![vec![1.5, -2.25, 1e-300], vec![0.0, f64::MIN_POSITIVE, 7.0]];
        write_features(&path, 3, &rows).unwrap();
        let (dim, read) = read_features(&path).unwrap();
        assert_eq!(dim, 3);
        assert_eq!(read, rows);
    }

    #[test]
    fn feature_file_bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(
            read_features(&path),
            Err(DataError::FeatureFormat { .. })
        ));
    }
}
