use super::frame::TimeSeriesFrame;
use crate::error::{Error, Result};

pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.2;
pub const DEFAULT_REDUNDANCY_THRESHOLD: f64 = 0.95;

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "pearson: lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("input is constant".into()));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureScore {
    pub name: String,
    pub correlation: f64,
}

/// Signed correlation of every column with the target, target first, then by
/// descending magnitude. Columns with undefined correlation are omitted.
pub fn rank_features(frame: &TimeSeriesFrame, target: &str) -> Result<Vec<FeatureScore>> {
    let y = &frame.column(target)?.values;
    let mut scores = Vec::new();
    for col in frame.columns() {
        if col.name == target {
            continue;
        }
        match pearson(&col.values, y) {
            Ok(r) => scores.push(FeatureScore {
                name: col.name.clone(),
                correlation: r,
            }),
            Err(Error::UndefinedCorrelation(_)) => {}
            Err(e) => return Err(e),
        }
    }
    scores.sort_by(|a, b| b.correlation.abs().total_cmp(&a.correlation.abs()));
    let self_r = pearson(y, y)?;
    scores.insert(
        0,
        FeatureScore {
            name: target.to_string(),
            correlation: self_r,
        },
    );
    Ok(scores)
}

/// Model inputs: the target, then every column with `|r| > threshold` against
/// it in order of decreasing `|r|`, dropping any column whose mutual `|r|` with
/// an already kept non-target column exceeds `redundancy`.
pub fn select_features_with(
    frame: &TimeSeriesFrame,
    target: &str,
    threshold: f64,
    redundancy: f64,
) -> Result<Vec<String>> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "correlation threshold must lie in [0, 1), got {threshold}"
        )));
    }
    let ranked = rank_features(frame, target)?;
    let mut kept: Vec<String> = vec![target.to_string()];
    for score in ranked.iter().skip(1) {
        if score.correlation.abs() <= threshold {
            continue;
        }
        let x = &frame.column(&score.name)?.values;
        let mut redundant = false;
        for other in kept.iter().skip(1) {
            let r = pearson(x, &frame.column(other)?.values)?;
            if r.abs() > redundancy {
                redundant = true;
                break;
            }
        }
        if !redundant {
            kept.push(score.name.clone());
        }
    }
    Ok(kept)
}

pub fn select_features(frame: &TimeSeriesFrame, target: &str, threshold: f64) -> Result<Vec<String>> {
    select_features_with(frame, target, threshold, DEFAULT_REDUNDANCY_THRESHOLD)
}
