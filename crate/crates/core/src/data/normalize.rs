use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::frame::TimeSeriesFrame;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn apply(&self, v: f64) -> f64 {
        let range = self.max - self.min;
        if range > 0.0 {
            (v - self.min) / range
        } else {
            0.0
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }
}

/// Per-column min/max, serialized as `{column: {min, max}}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NormalizationStats {
    pub columns: BTreeMap<String, MinMax>,
}

impl NormalizationStats {
    pub fn fit(frame: &TimeSeriesFrame) -> Result<Self> {
        let mut columns = BTreeMap::new();
        for col in frame.columns() {
            let (min, max) = col
                .valid_values()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if min > max {
                return Err(Error::EmptyColumn(col.name.clone()));
            }
            columns.insert(col.name.clone(), MinMax { min, max });
        }
        Ok(Self { columns })
    }

    pub fn get(&self, column: &str) -> Result<MinMax> {
        self.columns
            .get(column)
            .copied()
            .ok_or_else(|| Error::UnknownColumn(column.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Scale every column into `(x - min) / (max - min)`.
///
/// Without `stats` the statistics are fitted on this frame; supplied stats are
/// applied as-is, so values outside the fitted range land outside `[0, 1]`.
pub fn minmax_fit_transform(
    frame: &TimeSeriesFrame,
    stats: Option<&NormalizationStats>,
) -> Result<(TimeSeriesFrame, NormalizationStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormalizationStats::fit(frame)?,
    };
    let mut out = frame.clone();
    for col in out.columns_mut() {
        let mm = stats.get(&col.name)?;
        for v in col.values.iter_mut() {
            *v = mm.apply(*v);
        }
    }
    Ok((out, stats))
}
