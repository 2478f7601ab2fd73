//! Embedding providers: the pluggable stand-ins for the pretrained
//! short-term and voice encoders.
//!
//! A provider resolves opaque references to fixed-dimension f64 vectors and
//! must be deterministic per reference. Providers are frozen: they receive
//! no gradient and their parameters never change during training.

use thiserror::Error;

use crate::context::{FrameIndex, SpeakerTrack, TrackId};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("unknown scene index {0}")]
    UnknownScene(usize),
    #[error("no face embedding for scene {scene}, track {track}, frame {frame}")]
    MissingFace {
        scene: usize,
        track: TrackId,
        frame: FrameIndex,
    },
    #[error("no voice embedding for scene {scene}, frame {frame}")]
    MissingVoice { scene: usize, frame: FrameIndex },
}

/// Reference to one person's face crop at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaceCropRef {
    pub scene: usize,
    pub track: TrackId,
    pub frame: FrameIndex,
}

/// Reference to the scene audio around one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AudioRef {
    pub scene: usize,
    pub frame: FrameIndex,
}

pub trait EmbeddingProvider {
    /// Joint face+audio embedding of one (person, frame).
    fn ste(&self, face: &FaceCropRef, audio: &AudioRef) -> Result<Vec<f64>, ProviderError>;
    /// Voice embedding of the scene audio around one frame.
    fn fv(&self, audio: &AudioRef) -> Result<Vec<f64>, ProviderError>;
    fn ste_dim(&self) -> usize;
    fn fv_dim(&self) -> usize;
    /// Providers are pretrained and fixed; they take no gradient.
    fn frozen(&self) -> bool {
        true
    }
}

/// Structural view of one scene: clip bounds and who is visible when.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub first_frame: FrameIndex,
    pub last_frame: FrameIndex,
    pub tracks: Vec<SpeakerTrack>,
}

pub trait SceneSource {
    fn scene_count(&self) -> usize;
    fn layout(&self, scene: usize) -> Result<&SceneLayout, ProviderError>;
}

/// Ablation wrapper: keeps the context branch intact while the voice branch
/// sees only zeros.
pub struct ZeroVoiceProvider<'a> {
    pub inner: &'a dyn EmbeddingProvider,
}

impl EmbeddingProvider for ZeroVoiceProvider<'_> {
    fn ste(&self, face: &FaceCropRef, audio: &AudioRef) -> Result<Vec<f64>, ProviderError> {
        self.inner.ste(face, audio)
    }

    fn fv(&self, _audio: &AudioRef) -> Result<Vec<f64>, ProviderError> {
        Ok(vec![0.0; self.inner.fv_dim()])
    }

    fn ste_dim(&self) -> usize {
        self.inner.ste_dim()
    }

    fn fv_dim(&self) -> usize {
        self.inner.fv_dim()
    }
}

/// Deterministic stand-in encoder: hashes each reference into a latent
/// vector and projects it through fixed random matrices. Useful where no
/// precomputed features exist (gradient batteries, freezing tests).
pub struct HashProjectionProvider {
    latent_dim: usize,
    ste_weight: Tensor,
    fv_weight: Tensor,
    seed: u64,
}

impl HashProjectionProvider {
    pub fn new(ste_dim: usize, fv_dim: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let latent_dim = 24;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        Self {
            latent_dim,
            ste_weight: Tensor::uniform_init(vec![ste_dim, latent_dim], latent_dim, &mut rng),
            fv_weight: Tensor::uniform_init(vec![fv_dim, latent_dim], latent_dim, &mut rng),
            seed,
        }
    }

    /// The frozen parameter tensors, for before/after comparisons.
    pub fn parameters(&self) -> [&Tensor; 2] {
        [&self.ste_weight, &self.fv_weight]
    }

    fn latent(&self, tag: u64, a: u64, b: u64, c: u64) -> Vec<f64> {
        let mut state = self
            .seed
            .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add(a.wrapping_mul(0xBF58_476D_1CE4_E5B9))
            .wrapping_add(b.wrapping_mul(0x94D0_49BB_1331_11EB))
            .wrapping_add(c.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        (0..self.latent_dim)
            .map(|_| {
                state = splitmix64(state);
                // Map to [-1, 1).
                (state >> 11) as f64 / ((1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn project(weight: &Tensor, latent: &[f64]) -> Vec<f64> {
        let (rows, cols) = (weight.shape()[0], weight.shape()[1]);
        (0..rows)
            .map(|r| {
                let dot: f64 = (0..cols).map(|c| weight.data()[r * cols + c] * latent[c]).sum();
                dot.tanh()
            })
            .collect()
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl EmbeddingProvider for HashProjectionProvider {
    fn ste(&self, face: &FaceCropRef, _audio: &AudioRef) -> Result<Vec<f64>, ProviderError> {
        let latent = self.latent(1, face.scene as u64, u64::from(face.track), face.frame as u64);
        Ok(Self::project(&self.ste_weight, &latent))
    }

    fn fv(&self, audio: &AudioRef) -> Result<Vec<f64>, ProviderError> {
        let latent = self.latent(2, audio.scene as u64, 0, audio.frame as u64);
        Ok(Self::project(&self.fv_weight, &latent))
    }

    fn ste_dim(&self) -> usize {
        self.ste_weight.shape()[0]
    }

    fn fv_dim(&self) -> usize {
        self.fv_weight.shape()[0]
    }
}

impl HashProjectionProvider {
    /// A one-scene layout for tests and the gradient battery.
    pub fn demo_layout(tracks: usize, first: FrameIndex, last: FrameIndex) -> SceneLayout {
        SceneLayout {
            first_frame: first,
            last_frame: last,
            tracks: (0..tracks as TrackId)
                .map(|t| SpeakerTrack::from_frames(t, first..=last))
                .collect(),
        }
    }
}

/// Trivial scene source over a fixed list of layouts.
pub struct StaticScenes(pub Vec<SceneLayout>);

impl SceneSource for StaticScenes {
    fn scene_count(&self) -> usize {
        self.0.len()
    }

    fn layout(&self, scene: usize) -> Result<&SceneLayout, ProviderError> {
        self.0.get(scene).ok_or(ProviderError::UnknownScene(scene))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_provider_is_deterministic_per_reference() {
        let p = HashProjectionProvider::new(8, 4, 99);
        let face = FaceCropRef {
            scene: 0,
            track: 3,
            frame: 17,
        };
        let audio = AudioRef { scene: 0, frame: 17 };
        assert_eq!(p.ste(&face, &audio).unwrap(), p.ste(&face, &audio).unwrap());
        assert_eq!(p.fv(&audio).unwrap(), p.fv(&audio).unwrap());

        let other = FaceCropRef {
            scene: 0,
            track: 4,
            frame: 17,
        };
        assert_ne!(p.ste(&face, &audio).unwrap(), p.ste(&other, &audio).unwrap());
        assert_eq!(p.ste(&face, &audio).unwrap().len(), 8);
        assert_eq!(p.fv(&audio).unwrap().len(), 4);
    }

    #[test]
    fn zero_voice_wrapper_zeroes_only_the_voice_branch() {
        let p = HashProjectionProvider::new(8, 4, 7);
        let wrapped = ZeroVoiceProvider { inner: &p };
        let face = FaceCropRef {
            scene: 1,
            track: 0,
            frame: 2,
        };
        let audio = AudioRef { scene: 1, frame: 2 };
        assert_eq!(wrapped.fv(&audio).unwrap(), vec![0.0; 4]);
        assert_eq!(wrapped.ste(&face, &audio).unwrap(), p.ste(&face, &audio).unwrap());
    }
}
