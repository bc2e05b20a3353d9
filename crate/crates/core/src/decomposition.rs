//! Trend/period split of an input window and the two learned branches that
//! consume it.
//!
//! The trend is a centred moving average over an edge-replicated series; the
//! remainder is denoised by keeping only its strongest Fourier components.
//! The spectral filter runs on plain data before the tape, so no gradient
//! flows through the bin selection.

use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};

pub const DEFAULT_AVG_WINDOW: usize = 12;
pub const DEFAULT_TOPK: usize = 15;
pub const PERIOD_KERNELS: [usize; 3] = [3, 5, 7];

/// Components of one `[T × F]` window.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionResult {
    pub trend: Tensor,
    pub raw_period: Tensor,
    pub pure_period: Tensor,
}

/// Centred moving average with edge replication, per feature column.
///
/// Returns `(trend, raw_period)` with `raw_period = window - trend`.
pub fn moving_average_decompose(window: &Tensor, avg_window: usize) -> Result<(Tensor, Tensor)> {
    if avg_window == 0 {
        return Err(Error::InvalidArgument("moving-average window must be >= 1".into()));
    }
    let [t, f] = window.shape() else {
        return Err(shape_err(format!("window must be [T, F], got {:?}", window.shape())));
    };
    let (t, f) = (*t, *f);
    let left = (avg_window - 1) / 2;
    let x = window.data();
    let mut trend = vec![0.0; t * f];
    for c in 0..f {
        let at = |i: isize| x[(i.clamp(0, t as isize - 1) as usize) * f + c];
        for s in 0..t {
            let start = s as isize - left as isize;
            let sum: f64 = (0..avg_window as isize).map(|j| at(start + j)).sum();
            trend[s * f + c] = sum / avg_window as f64;
        }
    }
    let raw: Vec<f64> = x.iter().zip(&trend).map(|(a, b)| a - b).collect();
    Ok((
        Tensor::new(vec![t, f], trend)?,
        Tensor::new(vec![t, f], raw)?,
    ))
}

/// Keeps the `k` most powerful non-negative frequency bins of a real series
/// (plus their conjugate mirrors) and zeroes the rest.
pub struct SpectralFilter {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SpectralFilter {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    /// Number of distinct non-negative frequency bins, `⌊T/2⌋ + 1`.
    pub fn bins(&self) -> usize {
        self.len / 2 + 1
    }

    pub fn filter(&self, series: &[f64], k: usize) -> Result<Vec<f64>> {
        let n = self.len;
        if series.len() != n {
            return Err(shape_err(format!(
                "filter planned for length {n}, got {}",
                series.len()
            )));
        }
        if k == 0 || k > self.bins() {
            return Err(Error::InvalidArgument(format!(
                "top-k must lie in 1..={} for a length-{n} series, got {k}",
                self.bins()
            )));
        }
        let mut spec: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut spec);

        let mut order: Vec<usize> = (0..self.bins()).collect();
        // highest power first; equal power keeps the lower frequency
        order.sort_by(|&a, &b| spec[b].norm_sqr().total_cmp(&spec[a].norm_sqr()).then(a.cmp(&b)));
        let mut keep = vec![false; n];
        for &bin in &order[..k] {
            keep[bin] = true;
            keep[(n - bin) % n] = true;
        }
        for (c, kept) in spec.iter_mut().zip(&keep) {
            if !kept {
                *c = Complex::new(0.0, 0.0);
            }
        }
        self.inverse.process(&mut spec);
        Ok(spec.iter().map(|c| c.re / n as f64).collect())
    }
}

/// One-shot top-k filtering of a single series.
pub fn fft_topk_filter(series: &[f64], k: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    SpectralFilter::new(series.len()).filter(series, k)
}

/// Moving-average split followed by per-feature spectral filtering.
pub fn decompose(window: &Tensor, avg_window: usize, k: usize, filter: &SpectralFilter) -> Result<DecompositionResult> {
    let (trend, raw_period) = moving_average_decompose(window, avg_window)?;
    let (t, f) = (window.shape()[0], window.shape()[1]);
    let mut pure = vec![0.0; t * f];
    let mut column = vec![0.0; t];
    for c in 0..f {
        for s in 0..t {
            column[s] = raw_period.data()[s * f + c];
        }
        for (s, v) in filter.filter(&column, k)?.into_iter().enumerate() {
            pure[s * f + c] = v;
        }
    }
    Ok(DecompositionResult {
        trend,
        raw_period,
        pure_period: Tensor::new(vec![t, f], pure)?,
    })
}

/// Trend and purified period of a `[B, T, F]` batch, ready for the branches.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedBatch {
    pub trend: Tensor,
    pub pure_period: Tensor,
}

pub fn decompose_batch(inputs: &Tensor, avg_window: usize, k: usize) -> Result<DecomposedBatch> {
    let [b, t, f] = inputs.shape() else {
        return Err(shape_err(format!("batch must be [B, T, F], got {:?}", inputs.shape())));
    };
    let (b, t, f) = (*b, *t, *f);
    let filter = SpectralFilter::new(t);
    let mut trend = Vec::with_capacity(b * t * f);
    let mut pure = Vec::with_capacity(b * t * f);
    for w in inputs.data().chunks(t * f) {
        let d = decompose(&Tensor::new(vec![t, f], w.to_vec())?, avg_window, k, &filter)?;
        trend.extend_from_slice(d.trend.data());
        pure.extend_from_slice(d.pure_period.data());
    }
    Ok(DecomposedBatch {
        trend: Tensor::new(vec![b, t, f], trend)?,
        pure_period: Tensor::new(vec![b, t, f], pure)?,
    })
}

/// Learnable weights of the trend and period branches.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompBranchParams<P = Tensor> {
    /// `[F, D]`
    pub trend_weight: P,
    /// `[D]`
    pub trend_bias: P,
    /// One `[K, F, P]` kernel per size in [`PERIOD_KERNELS`].
    pub period_kernels: Vec<P>,
    pub period_biases: Vec<P>,
    /// `[3P, D]`
    pub fuse_weight: P,
    pub fuse_bias: P,
}

pub type DecompBranchVars = DecompBranchParams<Var>;

impl DecompBranchParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(n_features: usize, hidden: usize, period_channels: usize, rng: &mut R) -> Self {
        let f = n_features as f64;
        let period_kernels = PERIOD_KERNELS
            .iter()
            .map(|&k| Tensor::randn(&[k, n_features, period_channels], (1.0 / (k as f64 * f)).sqrt(), rng))
            .collect();
        let fused_in = PERIOD_KERNELS.len() * period_channels;
        Self {
            trend_weight: Tensor::randn(&[n_features, hidden], (1.0 / f).sqrt(), rng),
            trend_bias: Tensor::zeros(&[hidden]),
            period_kernels,
            period_biases: PERIOD_KERNELS.iter().map(|_| Tensor::zeros(&[period_channels])).collect(),
            fuse_weight: Tensor::randn(&[fused_in, hidden], (1.0 / fused_in as f64).sqrt(), rng),
            fuse_bias: Tensor::zeros(&[hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.trend_weight.shape()[1]
    }
}

impl<P> DecompBranchParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(String, &P) -> Q) -> DecompBranchParams<Q> {
        DecompBranchParams {
            trend_weight: f(format!("{prefix}.trend_weight"), &self.trend_weight),
            trend_bias: f(format!("{prefix}.trend_bias"), &self.trend_bias),
            period_kernels: self
                .period_kernels
                .iter()
                .zip(PERIOD_KERNELS)
                .map(|(p, k)| f(format!("{prefix}.period_kernel{k}"), p))
                .collect(),
            period_biases: self
                .period_biases
                .iter()
                .zip(PERIOD_KERNELS)
                .map(|(p, k)| f(format!("{prefix}.period_bias{k}"), p))
                .collect(),
            fuse_weight: f(format!("{prefix}.fuse_weight"), &self.fuse_weight),
            fuse_bias: f(format!("{prefix}.fuse_bias"), &self.fuse_bias),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        f(format!("{prefix}.trend_weight"), &mut self.trend_weight);
        f(format!("{prefix}.trend_bias"), &mut self.trend_bias);
        for (p, k) in self.period_kernels.iter_mut().zip(PERIOD_KERNELS) {
            f(format!("{prefix}.period_kernel{k}"), p);
        }
        for (p, k) in self.period_biases.iter_mut().zip(PERIOD_KERNELS) {
            f(format!("{prefix}.period_bias{k}"), p);
        }
        f(format!("{prefix}.fuse_weight"), &mut self.fuse_weight);
        f(format!("{prefix}.fuse_bias"), &mut self.fuse_bias);
    }
}

/// Per-step affine map of the trend across the feature axis.
pub fn trend_branch(tape: &mut Tape, trend: Var, p: &DecompBranchVars) -> Result<Var> {
    tape.linear(trend, p.trend_weight, Some(p.trend_bias))
}

/// Causal convolutions of widths 3, 5 and 7 over time, concatenated on the
/// channel axis and fused linearly. Accepts `[T, F]` or `[B, T, F]`.
pub fn period_branch(tape: &mut Tape, period: Var, p: &DecompBranchVars) -> Result<Var> {
    let shape = tape.shape(period).to_vec();
    let x = match shape.len() {
        2 => tape.reshape(period, &[1, shape[0], shape[1]])?,
        3 => period,
        _ => return Err(shape_err(format!("period input must be [T, F] or [B, T, F], got {shape:?}"))),
    };
    let mut outs = Vec::with_capacity(p.period_kernels.len());
    for (&kernel, &bias) in p.period_kernels.iter().zip(&p.period_biases) {
        let y = tape.causal_conv(x, kernel, 1)?;
        outs.push(tape.add(y, bias)?);
    }
    let cat = tape.concat_last(&outs)?;
    let fused = tape.linear(cat, p.fuse_weight, Some(p.fuse_bias))?;
    if shape.len() == 2 {
        let d = *tape.shape(fused).last().unwrap();
        tape.reshape(fused, &[shape[0], d])
    } else {
        Ok(fused)
    }
}

/// Branch outputs summed elementwise, `[B, T, D]`.
pub fn decomposition_forward_prepared(tape: &mut Tape, batch: &DecomposedBatch, p: &DecompBranchVars) -> Result<Var> {
    let trend = tape.constant(batch.trend.clone());
    let period = tape.constant(batch.pure_period.clone());
    let a = trend_branch(tape, trend, p)?;
    let b = period_branch(tape, period, p)?;
    tape.add(a, b)
}

/// Decompose a `[B, T, F]` batch and run both branches.
pub fn decomposition_forward(
    tape: &mut Tape,
    inputs: &Tensor,
    p: &DecompBranchVars,
    avg_window: usize,
    k: usize,
) -> Result<Var> {
    let batch = decompose_batch(inputs, avg_window, k)?;
    decomposition_forward_prepared(tape, &batch, p)
}
