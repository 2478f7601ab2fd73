//! Per-entry modality-contribution analysis.
//!
//! The degree of contribution of the face-voice branch is the fraction of
//! gate elements strictly above 0.5 (elements at exactly 0.5 count toward
//! the context branch). Degrees aggregate into a fixed-width histogram and
//! summary statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, RawLabel};
use crate::model::{forward, EntryRef, FavoaParams, ModelConfig, ModelError};
use crate::provider::EmbeddingProvider;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("degree of contribution of an empty gate vector is undefined")]
    EmptyGate,
    #[error("bin width {0} does not divide [0, 1] into whole bins")]
    BadBinWidth(f64),
    #[error("no records to aggregate")]
    NoRecords,
    #[error("forward pass failed on entry {entry_id}: {source}")]
    Forward {
        entry_id: String,
        source: ModelError,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub const DEFAULT_BIN_WIDTH: f64 = 0.025;

/// Fraction of gate elements strictly greater than 0.5.
pub fn degree_of_contribution(gate: &[f64]) -> Result<f64, AnalysisError> {
    if gate.is_empty() {
        return Err(AnalysisError::EmptyGate);
    }
    let above = gate.iter().filter(|p| **p > 0.5).count();
    Ok(above as f64 / gate.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContributionRecord {
    pub entry_id: String,
    pub degree: f64,
    pub label: RawLabel,
    /// Model score of the entry, for joint inspection with the degree.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Histogram over [0, 1]. A degree exactly on an edge falls into the higher
/// bin; 1.0 falls into the last bin.
pub fn build_histogram(degrees: &[f64], bin_width: f64) -> Result<Histogram, AnalysisError> {
    if degrees.is_empty() {
        return Err(AnalysisError::NoRecords);
    }
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(AnalysisError::BadBinWidth(bin_width));
    }
    let bin_count = (1.0 / bin_width).round() as usize;
    if bin_count == 0 || (bin_count as f64 * bin_width - 1.0).abs() > 1e-9 {
        return Err(AnalysisError::BadBinWidth(bin_width));
    }
    let edges: Vec<f64> = (0..bin_count).map(|k| k as f64 * bin_width).collect();
    let mut counts = vec![0u64; bin_count];
    for &d in degrees {
        // Largest bin whose lower edge does not exceed the degree.
        let mut k = ((d / bin_width) as usize).min(bin_count - 1);
        while k + 1 < bin_count && edges[k + 1] <= d {
            k += 1;
        }
        while k > 0 && edges[k] > d {
            k -= 1;
        }
        counts[k] += 1;
    }
    Ok(Histogram {
        bin_width,
        bins: edges
            .into_iter()
            .zip(counts)
            .map(|(lower, count)| HistogramBin { lower, count })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionSummary {
    pub mean: f64,
    pub median: f64,
    /// Fraction of entries whose degree strictly exceeds 0.15.
    #[serde(rename = "frac_gt_0.15")]
    pub frac_gt_0_15: f64,
    /// Fraction of entries whose degree strictly exceeds 0.30.
    #[serde(rename = "frac_gt_0.30")]
    pub frac_gt_0_30: f64,
}

pub fn summarize(records: &[ContributionRecord]) -> Result<ContributionSummary, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::NoRecords);
    }
    let n = records.len();
    let mut degrees: Vec<f64> = records.iter().map(|r| r.degree).collect();
    degrees.sort_by(|a, b| a.partial_cmp(b).expect("degrees are finite"));
    let median = if n % 2 == 1 {
        degrees[n / 2]
    } else {
        (degrees[n / 2 - 1] + degrees[n / 2]) / 2.0
    };
    Ok(ContributionSummary {
        mean: degrees.iter().sum::<f64>() / n as f64,
        median,
        frac_gt_0_15: degrees.iter().filter(|d| **d > 0.15).count() as f64 / n as f64,
        frac_gt_0_30: degrees.iter().filter(|d| **d > 0.30).count() as f64 / n as f64,
    })
}

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub records: Vec<ContributionRecord>,
    pub histogram: Histogram,
    pub summary: ContributionSummary,
}

/// Run the model over the given entries and aggregate gate statistics.
pub fn analyze(
    params: &FavoaParams,
    config: &ModelConfig,
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    indices: &[usize],
    bin_width: f64,
) -> Result<AnalysisOutput, AnalysisError> {
    let mut records = Vec::with_capacity(indices.len());
    for &idx in indices {
        let entry = &dataset.entries()[idx];
        let trace = forward(
            params,
            config,
            dataset,
            provider,
            &EntryRef {
                scene: entry.scene,
                track: entry.track,
                frame: entry.frame,
            },
        )
        .map_err(|source| AnalysisError::Forward {
            entry_id: entry.entry_id.clone(),
            source,
        })?;
        records.push(ContributionRecord {
            entry_id: entry.entry_id.clone(),
            degree: degree_of_contribution(&trace.gate)?,
            label: entry.label,
            score: trace.prob_speaking,
        });
    }
    let degrees: Vec<f64> = records.iter().map(|r| r.degree).collect();
    let histogram = build_histogram(&degrees, bin_width)?;
    let summary = summarize(&records)?;
    Ok(AnalysisOutput {
        records,
        histogram,
        summary,
    })
}

// ── Exports ──────────────────────────────────────────────────────────

pub fn write_records_csv(path: &Path, records: &[ContributionRecord]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["entry_id", "degree", "label", "score"])?;
    for r in records {
        w.write_record([
            r.entry_id.as_str(),
            &format!("{}", r.degree),
            r.label.as_str(),
            &format!("{}", r.score),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram_csv(path: &Path, histogram: &Histogram) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_lower", "count"])?;
    for bin in &histogram.bins {
        w.write_record([&format!("{}", bin.lower), &format!("{}", bin.count)])?;
    }
    w.flush()?;
    Ok(())
}
