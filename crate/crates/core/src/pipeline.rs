//! Raw sensor frame → cleaned, feature-selected frame and training-span
//! normalisation statistics.

use serde::{Deserialize, Serialize};

use crate::data::{
    chronological_split, downsample, flag_outliers_pauta, interpolate_linear, make_windows, minmax_fit_transform,
    select_features_with, train_row_span, DatasetSplits, NormalizationStats, SplitFractions, TimeSeriesFrame,
    DEFAULT_CORRELATION_THRESHOLD, DEFAULT_REDUNDANCY_THRESHOLD, DEFAULT_SPLIT,
};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineOptions {
    pub target: String,
    pub correlation_threshold: f64,
    pub redundancy_threshold: f64,
    pub downsample: usize,
    pub split: SplitFractions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            target: "Chl".into(),
            correlation_threshold: DEFAULT_CORRELATION_THRESHOLD,
            redundancy_threshold: DEFAULT_REDUNDANCY_THRESHOLD,
            downsample: 2,
            split: DEFAULT_SPLIT,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    /// Clean selected columns in raw units, target first.
    pub frame: TimeSeriesFrame,
    pub stats: NormalizationStats,
}

impl Preprocessed {
    pub fn features(&self) -> Vec<String> {
        self.frame.names()
    }
}

/// Screening, gap filling, resampling, feature selection and min-max fitting.
///
/// Selection and statistics only look at the rows the training windows touch
/// for an `input_len → horizon` model.
pub fn preprocess(raw: &TimeSeriesFrame, opts: &PipelineOptions, input_len: usize, horizon: usize) -> Result<Preprocessed> {
    let screened = flag_outliers_pauta(raw)?;
    let filled = interpolate_linear(&screened)?;
    let frame = downsample(&filled, opts.downsample)?;
    let span = train_row_span(frame.len(), input_len, horizon, opts.split)?;
    let train_rows = frame.slice_rows(0..span)?;
    let features = select_features_with(
        &train_rows,
        &opts.target,
        opts.correlation_threshold,
        opts.redundancy_threshold,
    )?;
    let frame = frame.select(&features)?;
    let stats = NormalizationStats::fit(&frame.slice_rows(0..span)?)?;
    Ok(Preprocessed { frame, stats })
}

/// Normalised windows for a cleaned frame, split in time order.
pub fn build_splits(
    frame: &TimeSeriesFrame,
    stats: &NormalizationStats,
    target: &str,
    input_len: usize,
    horizon: usize,
    split: SplitFractions,
) -> Result<DatasetSplits> {
    let (normalized, _) = minmax_fit_transform(frame, Some(stats))?;
    let windows = make_windows(&normalized, target, input_len, horizon)?;
    chronological_split(&windows, split)
}
