use super::frame::{CellFlag, TimeSeriesFrame};
use crate::error::{Error, Result};

/// Mean and population standard deviation of the valid cells.
fn valid_moments(values: impl Iterator<Item = f64>) -> (usize, f64, f64) {
    let vals: Vec<f64> = values.collect();
    let n = vals.len();
    if n == 0 {
        return (0, f64::NAN, f64::NAN);
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (n, mean, var.sqrt())
}

/// Three-sigma (pauta) screening: flag valid cells with `|x - mean| > 3σ`.
pub fn flag_outliers_pauta(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    let mut out = frame.clone();
    for col in out.columns_mut() {
        let (n, mean, std) = valid_moments(col.valid_values());
        match n {
            0 => return Err(Error::EmptyColumn(col.name.clone())),
            1 => {
                return Err(Error::InvalidArgument(format!(
                    "column {:?} has a single valid cell; the 3-sigma screen needs two",
                    col.name
                )))
            }
            _ => {}
        }
        let limit = 3.0 * std;
        for (v, f) in col.values.iter().zip(col.flags.iter_mut()) {
            if *f == CellFlag::Valid && (v - mean).abs() > limit {
                *f = CellFlag::Outlier;
            }
        }
    }
    Ok(out)
}

/// Replace every missing or outlier cell by piecewise-linear interpolation in
/// time between its nearest valid neighbours. Leading and trailing gaps take
/// the nearest valid value.
pub fn interpolate_linear(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    let secs: Vec<f64> = frame
        .timestamps()
        .iter()
        .map(|t| t.and_utc().timestamp() as f64)
        .collect();
    let mut out = frame.clone();
    for col in out.columns_mut() {
        let anchors: Vec<usize> = (0..col.values.len())
            .filter(|&i| col.flags[i] == CellFlag::Valid)
            .collect();
        let (Some(&first), Some(&last)) = (anchors.first(), anchors.last()) else {
            return Err(Error::EmptyColumn(col.name.clone()));
        };
        for i in 0..first {
            col.values[i] = col.values[first];
        }
        for i in last + 1..col.values.len() {
            col.values[i] = col.values[last];
        }
        for pair in anchors.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let (va, vb) = (col.values[a], col.values[b]);
            for i in a + 1..b {
                let w = (secs[i] - secs[a]) / (secs[b] - secs[a]);
                col.values[i] = va + (vb - va) * w;
            }
        }
        col.flags.fill(CellFlag::Valid);
    }
    Ok(out)
}

/// Keep every `factor`-th row starting at row 0.
pub fn downsample(frame: &TimeSeriesFrame, factor: usize) -> Result<TimeSeriesFrame> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be >= 1".into()));
    }
    let idx: Vec<usize> = (0..frame.len()).step_by(factor).collect();
    Ok(frame.take_rows(&idx))
}
