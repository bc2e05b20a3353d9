use super::frame::TimeSeriesFrame;
use crate::error::{Error, Result};

pub const DEFAULT_SPLIT: SplitFractions = SplitFractions {
    train: 0.7,
    val: 0.15,
    test: 0.15,
};

/// Supervised windows: `inputs[i]` is `[input_len × n_features]` (row-major)
/// and `targets[i]` the following `horizon` target values.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub input_len: usize,
    pub horizon: usize,
    pub n_features: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    /// Frame row of each window's first input step.
    starts: Vec<usize>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let w = self.input_len * self.n_features;
        &self.inputs[i * w..(i + 1) * w]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.horizon..(i + 1) * self.horizon]
    }

    /// All inputs, `[len × input_len × n_features]` row-major.
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    /// All targets, `[len × horizon]` row-major.
    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn start(&self, i: usize) -> usize {
        self.starts[i]
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Self {
        let w = self.input_len * self.n_features;
        Self {
            input_len: self.input_len,
            horizon: self.horizon,
            n_features: self.n_features,
            inputs: self.inputs[range.start * w..range.end * w].to_vec(),
            targets: self.targets[range.start * self.horizon..range.end * self.horizon].to_vec(),
            starts: self.starts[range].to_vec(),
        }
    }
}

/// Slide a window over the frame. Window `i` reads rows `[i, i + input_len)`
/// of every column and predicts rows `[i + input_len, i + input_len + horizon)`
/// of `target`.
pub fn make_windows(
    frame: &TimeSeriesFrame,
    target: &str,
    input_len: usize,
    horizon: usize,
) -> Result<WindowedDataset> {
    if input_len == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("input_len and horizon must be >= 1".into()));
    }
    let required = input_len + horizon;
    if frame.len() < required {
        return Err(Error::TooShort {
            required,
            actual: frame.len(),
        });
    }
    let y = &frame.column(target)?.values;
    let cols: Vec<&[f64]> = frame.columns().iter().map(|c| c.values.as_slice()).collect();
    let count = frame.len() - required + 1;
    let f = cols.len();
    let mut inputs = Vec::with_capacity(count * input_len * f);
    let mut targets = Vec::with_capacity(count * horizon);
    for i in 0..count {
        for t in i..i + input_len {
            inputs.extend(cols.iter().map(|c| c[t]));
        }
        targets.extend_from_slice(&y[i + input_len..i + required]);
    }
    Ok(WindowedDataset {
        input_len,
        horizon,
        n_features: f,
        inputs,
        targets,
        starts: (0..count).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::EmptySplit(format!(
                "fractions must all be positive, got {all:?}"
            )));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions must sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }

    /// Window counts `(train, val, test)` for `n` windows, using floored
    /// cumulative boundaries.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let boundary = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
        let train_end = boundary(self.train).min(n);
        let val_end = boundary(self.train + self.val).clamp(train_end, n);
        let counts = (train_end, val_end - train_end, n - val_end);
        for (name, c) in [("train", counts.0), ("validation", counts.1), ("test", counts.2)] {
            if c == 0 {
                return Err(Error::EmptySplit(format!(
                    "{name} split is empty ({n} windows, fractions {self:?})"
                )));
            }
        }
        Ok(counts)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplits {
    pub train: WindowedDataset,
    pub val: WindowedDataset,
    pub test: WindowedDataset,
}

/// Split windows in time order, with no shuffling across boundaries.
pub fn chronological_split(ds: &WindowedDataset, fractions: SplitFractions) -> Result<DatasetSplits> {
    let (tr, va, _) = fractions.counts(ds.len())?;
    Ok(DatasetSplits {
        train: ds.subset(0..tr),
        val: ds.subset(tr..tr + va),
        test: ds.subset(tr + va..ds.len()),
    })
}

/// Number of leading frame rows touched by the training windows (inputs and
/// targets). Statistics fitted on these rows never see validation or test data.
pub fn train_row_span(
    n_rows: usize,
    input_len: usize,
    horizon: usize,
    fractions: SplitFractions,
) -> Result<usize> {
    let required = input_len + horizon;
    if n_rows < required {
        return Err(Error::TooShort {
            required,
            actual: n_rows,
        });
    }
    let (tr, _, _) = fractions.counts(n_rows - required + 1)?;
    Ok(tr + required - 1)
}
