//! Forecast metrics, module ablations and horizon sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{train_row_span, NormalizationStats, SplitFractions, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::model::{predict, ModelConfig, ModelParams, ModuleFlags};
use crate::pipeline::build_splits;
use crate::train::{train, PreparedSplit};

pub const DEFAULT_MAPE_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
}

/// MAE, RMSE and MAPE, summed left to right. MAPE divides by
/// `max(|y|, mape_epsilon)` and is reported as a fraction.
pub fn compute_metrics(y: &[f64], y_hat: &[f64], mape_epsilon: f64) -> Result<MetricTriple> {
    if y.len() != y_hat.len() {
        return Err(Error::InvalidArgument(format!(
            "metrics: {} targets vs {} predictions",
            y.len(),
            y_hat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one value".into()));
    }
    let n = y.len() as f64;
    let (mut abs, mut sq, mut pct) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(y_hat) {
        let e = a - b;
        abs += e.abs();
        sq += e * e;
        pct += e.abs() / a.abs().max(mape_epsilon);
    }
    Ok(MetricTriple {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mape: pct / n,
    })
}

/// Scale the metrics are reported on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricScale {
    #[default]
    Raw,
    Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    #[serde(rename = "model1")]
    Model1,
    #[serde(rename = "model2")]
    Model2,
    #[serde(rename = "model3")]
    Model3,
    #[serde(rename = "model4")]
    Model4,
    #[serde(rename = "model5")]
    Model5,
    #[serde(rename = "model6")]
    Model6,
}

impl AblationVariant {
    pub const ALL: [Self; 6] = [
        Self::Model1,
        Self::Model2,
        Self::Model3,
        Self::Model4,
        Self::Model5,
        Self::Model6,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::Model1 => "model1",
            Self::Model2 => "model2",
            Self::Model3 => "model3",
            Self::Model4 => "model4",
            Self::Model5 => "model5",
            Self::Model6 => "model6",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Self::Model1 => "plain temporal convolution",
            Self::Model2 => "temporal convolution with reduction and residual paths",
            Self::Model3 => "full model without decomposition",
            Self::Model4 => "full model without temporal convolution",
            Self::Model5 => "full model without graph convolution",
            Self::Model6 => "full model",
        }
    }

    pub fn flags(self) -> ModuleFlags {
        let full = ModuleFlags::FULL;
        match self {
            Self::Model1 => ModuleFlags {
                use_decomposition: false,
                use_gcn: false,
                use_tcn: true,
                use_structural_changes: false,
            },
            Self::Model2 => ModuleFlags {
                use_decomposition: false,
                use_gcn: false,
                ..full
            },
            Self::Model3 => ModuleFlags {
                use_decomposition: false,
                ..full
            },
            Self::Model4 => ModuleFlags { use_tcn: false, ..full },
            Self::Model5 => ModuleFlags { use_gcn: false, ..full },
            Self::Model6 => full,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown variant {s:?} (expected model1..model6)")))
    }
}

/// A named model configuration taking part in an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentArm {
    pub name: String,
    pub modules: ModuleFlags,
}

impl ExperimentArm {
    pub fn ablation(v: AblationVariant) -> Self {
        Self {
            name: v.id().into(),
            modules: v.flags(),
        }
    }

    /// The two rows of the horizon comparison.
    pub fn horizon_pair() -> Vec<Self> {
        vec![
            Self {
                name: "AGTCNSD".into(),
                modules: AblationVariant::Model6.flags(),
            },
            Self {
                name: "TCN".into(),
                modules: AblationVariant::Model1.flags(),
            },
        ]
    }
}

/// Cleaned frame plus everything needed to turn it into windows.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub id: String,
    pub frame: TimeSeriesFrame,
    pub stats: NormalizationStats,
    pub target: String,
    pub split: SplitFractions,
}

impl ExperimentData {
    /// Fits min-max statistics on the rows the training windows of the
    /// longest horizon touch, so every cell shares one scaling.
    pub fn from_clean(
        id: impl Into<String>,
        frame: TimeSeriesFrame,
        target: &str,
        input_len: usize,
        max_horizon: usize,
        split: SplitFractions,
    ) -> Result<Self> {
        let span = train_row_span(frame.len(), input_len, max_horizon, split)?;
        let stats = NormalizationStats::fit(&frame.slice_rows(0..span)?)?;
        Ok(Self {
            id: id.into(),
            frame,
            stats,
            target: target.into(),
            split,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSettings {
    pub base: ModelConfig,
    pub arms: Vec<ExperimentArm>,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub scale: MetricScale,
    pub mape_epsilon: f64,
    pub workers: usize,
    pub protocol: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: MetricTriple,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub statistic: String,
    pub seeds: Vec<u64>,
    pub completed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub variant: String,
    pub horizon: usize,
    #[serde(rename = "seed-aggregate")]
    pub seed_aggregate: SeedAggregate,
    /// Median over completed seeds; absent when every seed failed or for
    /// external rows without that metric.
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub mape: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runs: Vec<SeedRun>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<SeedFailure>,
    /// Supplied from outside rather than computed here.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub external: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub protocol: String,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub scale: MetricScale,
    pub target: String,
    pub input_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub meta: ReportMeta,
    pub cells: Vec<ReportCell>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// SHA-256 of the canonical JSON of a configuration.
pub fn config_hash(config: &ModelConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(config)?)))
}

impl ExperimentReport {
    pub fn cell(&self, variant: &str, horizon: usize) -> Option<&ReportCell> {
        self.cells.iter().find(|c| c.variant == variant && c.horizon == horizon)
    }

    /// Rows from another source, e.g. a recurrent baseline trained elsewhere.
    ///
    /// The CSV needs `variant,horizon,mae,rmse,mape` columns; empty metric
    /// cells are allowed.
    pub fn add_external_csv(&mut self, path: &Path) -> Result<()> {
        #[derive(Deserialize)]
        struct Row {
            variant: String,
            horizon: usize,
            mae: Option<f64>,
            rmse: Option<f64>,
            mape: Option<f64>,
        }
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
        for row in reader.deserialize() {
            let row: Row = row?;
            self.cells.push(ReportCell {
                variant: row.variant,
                horizon: row.horizon,
                seed_aggregate: SeedAggregate {
                    statistic: "external".into(),
                    seeds: Vec::new(),
                    completed: 0,
                },
                mae: row.mae,
                rmse: row.rmse,
                mape: row.mape,
                runs: Vec::new(),
                failures: Vec::new(),
                external: true,
            });
        }
        Ok(())
    }

    /// One row per model, one `MAE/RMSE/MAPE` column group per horizon.
    pub fn write_table_csv(&self, out: impl Write) -> Result<()> {
        let mut horizons: Vec<usize> = self.cells.iter().map(|c| c.horizon).collect();
        horizons.sort_unstable();
        horizons.dedup();
        let mut models: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !models.contains(&c.variant.as_str()) {
                models.push(&c.variant);
            }
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["model".to_string()];
        for h in &horizons {
            for m in ["MAE", "RMSE", "MAPE"] {
                header.push(format!("{h}_{m}"));
            }
        }
        w.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        for model in models {
            let mut row = vec![model.to_string()];
            for &h in &horizons {
                match self.cell(model, h) {
                    Some(c) => row.extend([fmt(c.mae), fmt(c.rmse), fmt(c.mape)]),
                    None => row.extend([String::new(), String::new(), String::new()]),
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Test-split predictions and targets, on the requested scale.
pub fn test_predictions(
    params: &ModelParams,
    config: &ModelConfig,
    test: &PreparedSplit,
    stats: &NormalizationStats,
    target: &str,
    scale: MetricScale,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let pred = predict(params, config, &test.inputs)?;
    let (mut y, mut y_hat) = (test.targets.data().to_vec(), pred.into_data());
    if scale == MetricScale::Raw {
        let mm = stats.get(target)?;
        for v in y.iter_mut().chain(y_hat.iter_mut()) {
            *v = mm.invert(*v);
        }
    }
    Ok((y, y_hat))
}

/// Train one (arm, horizon, seed) cell and score it on the test split.
pub fn run_cell(data: &ExperimentData, config: &ModelConfig, scale: MetricScale, mape_epsilon: f64) -> Result<MetricTriple> {
    let splits = build_splits(&data.frame, &data.stats, &data.target, config.input_len, config.horizon, data.split)?;
    let (params, _) = train(&splits, config)?;
    let test = PreparedSplit::new(&splits.test, config)?;
    let (y, y_hat) = test_predictions(&params, config, &test, &data.stats, &data.target, scale)?;
    compute_metrics(&y, &y_hat, mape_epsilon)
}

/// Every (arm, horizon, seed) combination trained once. Failures are
/// recorded in their cell and never abort the sweep.
pub fn run_experiment(data: &ExperimentData, settings: &ExperimentSettings) -> Result<ExperimentReport> {
    if settings.arms.is_empty() || settings.horizons.is_empty() || settings.seeds.is_empty() {
        return Err(Error::InvalidArgument("experiment needs arms, horizons and seeds".into()));
    }
    let jobs: Vec<(usize, usize, u64)> = (0..settings.arms.len())
        .flat_map(|a| {
            settings
                .horizons
                .iter()
                .flat_map(move |&h| settings.seeds.iter().map(move |&s| (a, h, s)))
        })
        .collect();
    let results: Mutex<BTreeMap<usize, Result<MetricTriple>>> = Mutex::new(BTreeMap::new());
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(a, h, s)) = jobs.get(i) else { break };
        let config = ModelConfig {
            horizon: h,
            seed: s,
            modules: settings.arms[a].modules,
            ..settings.base.clone()
        };
        let r = run_cell(data, &config, settings.scale, settings.mape_epsilon);
        results.lock().unwrap().insert(i, r);
    };
    let workers = settings.workers.clamp(1, jobs.len());
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(work);
            }
        });
    }
    let mut results = results.into_inner().unwrap();

    let mut cells = Vec::new();
    let mut i = 0;
    for arm in &settings.arms {
        for &h in &settings.horizons {
            let mut runs = Vec::new();
            let mut failures = Vec::new();
            for &seed in &settings.seeds {
                match results.remove(&i).expect("every job reports") {
                    Ok(metrics) => runs.push(SeedRun { seed, metrics }),
                    Err(e) => failures.push(SeedFailure {
                        seed,
                        error: e.to_string(),
                    }),
                }
                i += 1;
            }
            let pick = |f: fn(&MetricTriple) -> f64| median(runs.iter().map(|r| f(&r.metrics)).collect());
            cells.push(ReportCell {
                variant: arm.name.clone(),
                horizon: h,
                seed_aggregate: SeedAggregate {
                    statistic: "median".into(),
                    seeds: settings.seeds.clone(),
                    completed: runs.len(),
                },
                mae: pick(|m| m.mae),
                rmse: pick(|m| m.rmse),
                mape: pick(|m| m.mape),
                runs,
                failures,
                external: false,
            });
        }
    }
    Ok(ExperimentReport {
        meta: ReportMeta {
            protocol: settings.protocol.clone(),
            dataset: data.id.clone(),
            seeds: settings.seeds.clone(),
            config_hash: config_hash(&settings.base)?,
            scale: settings.scale,
            target: data.target.clone(),
            input_len: settings.base.input_len,
        },
        cells,
    })
}

/// Module ablation over the given variants.
pub fn run_ablation(
    data: &ExperimentData,
    base: &ModelConfig,
    horizons: &[usize],
    variants: &[AblationVariant],
    seeds: &[u64],
) -> Result<ExperimentReport> {
    run_experiment(
        data,
        &ExperimentSettings {
            base: base.clone(),
            arms: variants.iter().map(|v| ExperimentArm::ablation(*v)).collect(),
            horizons: horizons.to_vec(),
            seeds: seeds.to_vec(),
            scale: MetricScale::Raw,
            mape_epsilon: DEFAULT_MAPE_EPSILON,
            workers: 1,
            protocol: "ablation".into(),
        },
    )
}

/// Full model against the plain temporal convolution across horizons.
pub fn horizon_sweep(data: &ExperimentData, base: &ModelConfig, horizons: &[usize], seeds: &[u64]) -> Result<ExperimentReport> {
    run_experiment(
        data,
        &ExperimentSettings {
            base: base.clone(),
            arms: ExperimentArm::horizon_pair(),
            horizons: horizons.to_vec(),
            seeds: seeds.to_vec(),
            scale: MetricScale::Raw,
            mape_epsilon: DEFAULT_MAPE_EPSILON,
            workers: 1,
            protocol: "horizon-sweep".into(),
        },
    )
}

/// `t,y,y_hat` rows for plotting; `t` is the timestamp of each predicted
/// step and each row belongs to the window starting at that step's origin.
pub fn write_trace_csv(out: impl Write, stamps: &[String], y: &[f64], y_hat: &[f64]) -> Result<()> {
    if stamps.len() != y.len() || y.len() != y_hat.len() {
        return Err(Error::InvalidArgument("trace columns differ in length".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "y", "y_hat"])?;
    for ((t, a), b) in stamps.iter().zip(y).zip(y_hat) {
        w.write_record([t.clone(), a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_odd_and_even_counts() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(vec![4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(Vec::new()), None);
    }

    #[test]
    fn variant_flags_match_their_descriptions() {
        use AblationVariant::*;
        let f = |v: AblationVariant| v.flags();
        assert_eq!(f(Model6), ModuleFlags::FULL);
        assert!(!f(Model1).use_decomposition && !f(Model1).use_gcn && !f(Model1).use_structural_changes);
        assert!(f(Model2).use_structural_changes && !f(Model2).use_gcn);
        assert!(!f(Model3).use_decomposition && f(Model3).use_gcn);
        assert!(!f(Model4).use_tcn);
        assert!(!f(Model5).use_gcn && f(Model5).use_tcn);
        assert_eq!(AblationVariant::parse("model4").unwrap(), Model4);
        assert!(AblationVariant::parse("model7").is_err());
    }
}
