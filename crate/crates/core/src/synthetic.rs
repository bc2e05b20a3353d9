//! Synthetic multivariate water-quality series.
//!
//! Each feature is a linear drift, a slow seasonal sine, two faster periodic
//! terms and persistent AR(1) noise. The first column plays the target and can
//! additionally follow lagged copies of the others.

use std::f64::consts::TAU;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Column, TimeSeriesFrame};
use crate::error::{Error, Result};

const NAMES: [&str; 7] = ["Chl", "Sal", "SpCond", "Temp", "DO", "PE", "Cond"];
pub const SAMPLE_MINUTES: i64 = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_steps: usize,
    pub n_features: usize,
    pub seed: u64,
    pub coupling: f64,
    /// Stationary standard deviation of the AR(1) noise.
    pub noise_std: f64,
    pub noise_persistence: f64,
}

impl SyntheticSpec {
    pub fn new(n_steps: usize, n_features: usize, seed: u64, coupling: f64) -> Self {
        Self {
            n_steps,
            n_features,
            seed,
            coupling,
            noise_std: 0.3,
            noise_persistence: 0.97,
        }
    }
}

/// Per-feature generative terms, drawn from the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTerms {
    pub base: f64,
    pub slope: f64,
    pub slow_amp: f64,
    pub slow_period: f64,
    pub slow_phase: f64,
    pub fast: [(f64, f64, f64); 2],
    /// Weight and lag of this feature in the target.
    pub weight: f64,
    pub lag: usize,
}

impl FeatureTerms {
    /// Noise-free value at step `t`.
    pub fn clean(&self, t: usize) -> f64 {
        let t = t as f64;
        let mut v = self.base + self.slope * t + self.slow_amp * (TAU * t / self.slow_period + self.slow_phase).sin();
        for (amp, period, phase) in self.fast {
            v += amp * (TAU * t / period + phase).sin();
        }
        v
    }
}

pub fn feature_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|j| NAMES.get(j).map_or_else(|| format!("X{j}"), |s| s.to_string()))
        .collect()
}

pub fn feature_terms(spec: &SyntheticSpec) -> Vec<FeatureTerms> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_steps as f64;
    (0..spec.n_features)
        .map(|j| {
            let stretch = 1.0 + 0.137 * j as f64;
            FeatureTerms {
                base: rng.random_range(5.0..15.0),
                slope: rng.random_range(-0.3..0.3) / n,
                slow_amp: rng.random_range(0.5..1.5),
                slow_period: 336.0 * (1.0 + 0.29 * j as f64),
                slow_phase: rng.random_range(0.0..TAU),
                fast: [
                    (rng.random_range(0.8..2.0), 48.0 * stretch, rng.random_range(0.0..TAU)),
                    (rng.random_range(0.3..1.0), 24.84 * stretch, rng.random_range(0.0..TAU)),
                ],
                weight: if j % 2 == 0 { 1.0 } else { -1.0 } * rng.random_range(0.5..1.0),
                lag: 2 + 3 * j,
            }
        })
        .collect()
}

/// Reference dataset for the comparative experiments.
pub const BUNDLED: SyntheticSpec = SyntheticSpec {
    n_steps: 4000,
    n_features: 7,
    seed: 42,
    coupling: 0.5,
    noise_std: 0.3,
    noise_persistence: 0.97,
};

pub fn bundled_dataset() -> Result<TimeSeriesFrame> {
    generate_synthetic_with(&BUNDLED)
}

pub fn generate_synthetic(n_steps: usize, n_features: usize, seed: u64, coupling: f64) -> Result<TimeSeriesFrame> {
    generate_synthetic_with(&SyntheticSpec::new(n_steps, n_features, seed, coupling))
}

pub fn generate_synthetic_with(spec: &SyntheticSpec) -> Result<TimeSeriesFrame> {
    if spec.n_steps < 200 || spec.n_features < 2 {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs at least 200 steps and 2 features, got {} and {}",
            spec.n_steps, spec.n_features
        )));
    }
    if !(0.0..1.0).contains(&spec.noise_persistence) || !(spec.noise_std >= 0.0) || !spec.coupling.is_finite() {
        return Err(Error::InvalidArgument(
            "noise persistence must lie in [0, 1), noise std must be nonnegative and coupling finite".into(),
        ));
    }
    let terms = feature_terms(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
    let phi = spec.noise_persistence;
    let innovation = spec.noise_std * (1.0 - phi * phi).sqrt();

    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(spec.n_features);
    for term in &terms {
        let z0: f64 = StandardNormal.sample(&mut rng);
        let mut e = spec.noise_std * z0;
        let col = (0..spec.n_steps)
            .map(|t| {
                if t > 0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    e = phi * e + innovation * z;
                }
                term.clean(t) + e
            })
            .collect();
        cols.push(col);
    }
    if spec.coupling != 0.0 {
        for t in 0..spec.n_steps {
            let drive: f64 = terms
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, term)| term.weight * (cols[j][t.saturating_sub(term.lag)] - term.base))
                .sum();
            cols[0][t] += spec.coupling * drive;
        }
    }

    let t0 = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let stamps = (0..spec.n_steps)
        .map(|i| t0 + Duration::minutes(SAMPLE_MINUTES * i as i64))
        .collect();
    let columns = feature_names(spec.n_features)
        .into_iter()
        .zip(cols)
        .map(|(n, v)| Column::new(n, v))
        .collect();
    TimeSeriesFrame::new("time", stamps, columns)
}
