//! Sensor CSV ingestion, cleaning, feature selection and windowing.

mod clean;
mod features;
mod frame;
mod normalize;
mod window;

pub use clean::{downsample, flag_outliers_pauta, interpolate_linear};
pub use features::{
    pearson, rank_features, select_features, select_features_with, FeatureScore,
    DEFAULT_CORRELATION_THRESHOLD, DEFAULT_REDUNDANCY_THRESHOLD,
};
pub use frame::{format_timestamp, load_csv, parse_timestamp, write_csv, CellFlag, Column, TimeSeriesFrame};
pub use normalize::{minmax_fit_transform, MinMax, NormalizationStats};
pub use window::{
    chronological_split, make_windows, train_row_span, DatasetSplits, SplitFractions, WindowedDataset,
    DEFAULT_SPLIT,
};
