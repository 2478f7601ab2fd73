//! Assembly of the speaking-context tensor.
//!
//! Short-term embeddings of up to `speakers` people over `frames` time steps
//! (stride `hop`, centered on the classified time step) are arranged into a
//! `[frames × speakers × dim]` block. Missing cells are never left empty:
//! frames outside the clip clamp to the clip range, a track's first and last
//! activity extend outward, and interior gaps take the nearest preceding
//! activity. Audio shorter than the encoder's fixed window is repeated
//! end-to-end.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub type TrackId = u32;
pub type FrameIndex = i64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContextError {
    #[error("center frame {center} lies outside clip [{first}, {last}]")]
    CenterOutsideClip {
        center: FrameIndex,
        first: FrameIndex,
        last: FrameIndex,
    },
    #[error("frame count must be odd so the center frame exists, got {0}")]
    EvenFrameCount(usize),
    #[error("context plan field {field} must be positive")]
    NonPositive { field: &'static str },
    #[error("no speaker tracks present at the center frame")]
    EmptyTrackSet,
    #[error("target track {0} has no activity at the center frame")]
    MissingTargetAtCenter(TrackId),
    #[error("track {0} has no recorded frames")]
    EmptyTrack(TrackId),
    #[error("audio input is empty")]
    EmptyAudio,
    #[error("feature for track {track} at frame {frame} has dim {got}, expected {expected}")]
    FeatureDim {
        track: TrackId,
        frame: FrameIndex,
        got: usize,
        expected: usize,
    },
}

/// Opaque handle to one short-term embedding: track `track` as seen at
/// `frame`. Resolution happens against whatever feature source the caller
/// wires in (dataset files, a live encoder, a test table).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureRef {
    pub track: TrackId,
    pub frame: FrameIndex,
}

/// One person's visible activity: the frames where an embedding exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerTrack {
    pub track_id: TrackId,
    /// Frame index → embedding reference, strictly increasing keys.
    pub frames: BTreeMap<FrameIndex, FeatureRef>,
}

impl SpeakerTrack {
    /// Track whose embedding at frame `f` is its own observation at `f`.
    pub fn from_frames(track_id: TrackId, frames: impl IntoIterator<Item = FrameIndex>) -> Self {
        let frames = frames
            .into_iter()
            .map(|f| (f, FeatureRef { track: track_id, frame: f }))
            .collect();
        Self { track_id, frames }
    }

    pub fn first_frame(&self) -> Option<FrameIndex> {
        self.frames.keys().next().copied()
    }

    pub fn last_frame(&self) -> Option<FrameIndex> {
        self.frames.keys().next_back().copied()
    }

    pub fn has_frame(&self, frame: FrameIndex) -> bool {
        self.frames.contains_key(&frame)
    }
}

/// Geometry of one context window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextPlan {
    pub center: FrameIndex,
    /// Number of frames; must be odd so the center frame exists.
    pub frames: usize,
    pub speakers: usize,
    /// Hop between selected frames, in frame units.
    pub hop: i64,
}

impl ContextPlan {
    pub fn validate(&self) -> Result<(), ContextError> {
        if self.frames == 0 {
            return Err(ContextError::NonPositive { field: "frames" });
        }
        if self.frames % 2 == 0 {
            return Err(ContextError::EvenFrameCount(self.frames));
        }
        if self.speakers == 0 {
            return Err(ContextError::NonPositive { field: "speakers" });
        }
        if self.hop <= 0 {
            return Err(ContextError::NonPositive { field: "hop" });
        }
        Ok(())
    }
}

/// The assembled `[frames × speakers × dim]` block plus its provenance.
#[derive(Debug, Clone)]
pub struct ContextTensor {
    pub data: Tensor,
    pub plan: ContextPlan,
    pub frame_indices: Vec<FrameIndex>,
    pub speaker_order: Vec<TrackId>,
}

/// Arithmetic frame window centered on the plan's time step, stride `hop`,
/// clamped to the clip range.
pub fn select_frames(
    plan: &ContextPlan,
    clip_first: FrameIndex,
    clip_last: FrameIndex,
) -> Result<Vec<FrameIndex>, ContextError> {
    plan.validate()?;
    if plan.center < clip_first || plan.center > clip_last {
        return Err(ContextError::CenterOutsideClip {
            center: plan.center,
            first: clip_first,
            last: clip_last,
        });
    }
    let half = (plan.frames / 2) as i64;
    Ok((-half..=half)
        .map(|k| (plan.center + k * plan.hop).clamp(clip_first, clip_last))
        .collect())
}

/// Fill `count` speaker slots from the tracks visible in the center frame.
///
/// The classified target always takes slot 0; remaining tracks follow in
/// ascending track id. When fewer tracks exist than slots, the available
/// ones repeat cyclically until every slot is filled.
pub fn select_speakers(
    tracks_in_frame: &[TrackId],
    target: TrackId,
    count: usize,
) -> Result<Vec<TrackId>, ContextError> {
    if tracks_in_frame.is_empty() {
        return Err(ContextError::EmptyTrackSet);
    }
    if count == 0 {
        return Err(ContextError::NonPositive { field: "speakers" });
    }
    let mut canonical: Vec<TrackId> = tracks_in_frame.to_vec();
    canonical.sort_unstable();
    canonical.dedup();
    let mut ordered = vec![target];
    ordered.extend(canonical.iter().copied().filter(|&t| t != target));
    Ok((0..count).map(|i| ordered[i % ordered.len()]).collect())
}

/// The embedding reference a track contributes at `frame`.
///
/// Exact observations win; before a track's first activity the first
/// observation repeats, after its last the last one repeats, and interior
/// gaps reuse the nearest preceding observation.
pub fn track_feature_at(track: &SpeakerTrack, frame: FrameIndex) -> Result<FeatureRef, ContextError> {
    if track.frames.is_empty() {
        return Err(ContextError::EmptyTrack(track.track_id));
    }
    if let Some(r) = track.frames.get(&frame) {
        return Ok(*r);
    }
    if let Some((_, r)) = track.frames.range(..=frame).next_back() {
        return Ok(*r); // nearest preceding (also covers frames past the end)
    }
    // Before the first observation: replicate the earliest.
    Ok(*track.frames.values().next().expect("nonempty"))
}

/// Assemble the full context block. `fetch` resolves each embedding
/// reference to a `dim`-length vector; its error type only has to absorb
/// [`ContextError`].
pub fn assemble_context<E: From<ContextError>>(
    plan: &ContextPlan,
    tracks: &[SpeakerTrack],
    target: TrackId,
    clip_first: FrameIndex,
    clip_last: FrameIndex,
    dim: usize,
    mut fetch: impl FnMut(FeatureRef) -> Result<Vec<f64>, E>,
) -> Result<ContextTensor, E> {
    let frame_indices = select_frames(plan, clip_first, clip_last)?;
    let by_id: BTreeMap<TrackId, &SpeakerTrack> =
        tracks.iter().map(|t| (t.track_id, t)).collect();
    let target_track = by_id
        .get(&target)
        .filter(|t| t.has_frame(plan.center))
        .ok_or(ContextError::MissingTargetAtCenter(target))?;
    debug_assert_eq!(target_track.track_id, target);

    let present: Vec<TrackId> = tracks
        .iter()
        .filter(|t| t.has_frame(plan.center))
        .map(|t| t.track_id)
        .collect();
    let speaker_order = select_speakers(&present, target, plan.speakers)?;

    let mut data = Vec::with_capacity(plan.frames * plan.speakers * dim);
    for &frame in &frame_indices {
        for &track_id in &speaker_order {
            let track = by_id[&track_id];
            let reference = track_feature_at(track, frame)?;
            let feature = fetch(reference)?;
            if feature.len() != dim {
                return Err(E::from(ContextError::FeatureDim {
                    track: track_id,
                    frame,
                    got: feature.len(),
                    expected: dim,
                }));
            }
            data.extend_from_slice(&feature);
        }
    }
    let tensor = Tensor::new(vec![plan.frames, plan.speakers, dim], data).expect("sized above");
    Ok(ContextTensor {
        data: tensor,
        plan: *plan,
        frame_indices,
        speaker_order,
    })
}

/// Repeat `samples` end-to-end until exactly `target_seconds` of audio at
/// `sample_rate`; longer input is truncated to the leading window.
pub fn tile_audio(
    samples: &[f64],
    sample_rate: u32,
    target_seconds: f64,
) -> Result<Vec<f64>, ContextError> {
    if samples.is_empty() {
        return Err(ContextError::EmptyAudio);
    }
    let target_len = (target_seconds * f64::from(sample_rate)).round() as usize;
    Ok((0..target_len).map(|k| samples[k % samples.len()]).collect())
}

pub const FIXED_AUDIO_SECONDS: f64 = 10.0;
