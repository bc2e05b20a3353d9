//! The full predictor: decomposition → adaptive graph convolution → temporal
//! convolution → horizon head, with switches for each stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::decomposition::{
    decompose_batch, decomposition_forward_prepared, DecompBranchParams, DecomposedBatch, DEFAULT_AVG_WINDOW,
    DEFAULT_TOPK, PERIOD_KERNELS,
};
use crate::error::{shape_err, Error, Result};
use crate::graph::{gcn_layer_stack, AdaptiveGraphParams, DEFAULT_EMBED_DIM, DEFAULT_GCN_LAYERS};
use crate::temporal::{tcn_forward, TcnConfig, TcnLayerParams};

pub const HORIZONS: [usize; 4] = [12, 24, 48, 72];
pub const DEFAULT_INPUT_LEN: usize = 72;

/// Which stages of the predictor are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleFlags {
    pub use_decomposition: bool,
    pub use_gcn: bool,
    pub use_tcn: bool,
    /// Reduction linears and residual paths inside the temporal blocks.
    pub use_structural_changes: bool,
}

impl ModuleFlags {
    pub const FULL: Self = Self {
        use_decomposition: true,
        use_gcn: true,
        use_tcn: true,
        use_structural_changes: true,
    };
}

impl Default for ModuleFlags {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_len: usize,
    pub horizon: usize,
    pub avg_window: usize,
    pub topk: usize,
    pub decomp_kernels: Vec<usize>,
    /// Channels per graph node after the decomposition branches.
    pub node_channels: usize,
    /// Output channels of each period convolution.
    pub period_channels: usize,
    pub gcn_layers: usize,
    pub embed_dim: usize,
    pub factor_dim: usize,
    /// Must equal the number of input features when set.
    pub node_count: Option<usize>,
    pub tcn: TcnConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub modules: ModuleFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_len: DEFAULT_INPUT_LEN,
            horizon: 24,
            avg_window: DEFAULT_AVG_WINDOW,
            topk: DEFAULT_TOPK,
            decomp_kernels: PERIOD_KERNELS.to_vec(),
            node_channels: 4,
            period_channels: 8,
            gcn_layers: DEFAULT_GCN_LAYERS,
            embed_dim: DEFAULT_EMBED_DIM,
            factor_dim: DEFAULT_EMBED_DIM,
            node_count: None,
            tcn: TcnConfig::default(),
            batch_size: 128,
            epochs: 300,
            learning_rate: 0.001,
            seed: 0,
            modules: ModuleFlags::FULL,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_len", self.input_len),
            ("horizon", self.horizon),
            ("avg_window", self.avg_window),
            ("topk", self.topk),
            ("node_channels", self.node_channels),
            ("period_channels", self.period_channels),
            ("gcn_layers", self.gcn_layers),
            ("embed_dim", self.embed_dim),
            ("factor_dim", self.factor_dim),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.decomp_kernels != PERIOD_KERNELS {
            return Err(Error::Config(format!(
                "decomposition kernels must be {PERIOD_KERNELS:?}, got {:?}",
                self.decomp_kernels
            )));
        }
        if self.modules.use_decomposition && self.topk > self.input_len / 2 + 1 {
            return Err(Error::Config(format!(
                "topk {} exceeds the {} frequency bins of a {}-step window",
                self.topk,
                self.input_len / 2 + 1,
                self.input_len
            )));
        }
        if self.node_count == Some(0) {
            return Err(Error::Config("node_count must be positive".into()));
        }
        self.tcn.validate()
    }

    /// Temporal settings for the active variant; without structural changes
    /// the blocks are bare convolutions.
    pub fn effective_tcn(&self) -> TcnConfig {
        let mut tcn = self.tcn.clone();
        if !self.modules.use_structural_changes {
            tcn.reduction = None;
            tcn.residual = false;
        }
        tcn
    }

    /// Steps of the input window that can influence the prediction.
    pub fn context_len(&self) -> usize {
        if !self.modules.use_tcn {
            return self.input_len;
        }
        let mut ctx = self.tcn.receptive_field();
        if self.modules.use_decomposition {
            ctx += PERIOD_KERNELS.iter().max().unwrap() - 1;
        }
        ctx.min(self.input_len)
    }

    fn check_nodes(&self, n_features: usize) -> Result<()> {
        match self.node_count {
            Some(n) if n != n_features => Err(Error::Config(format!(
                "node_count {n} does not match the {n_features} input features"
            ))),
            _ => Ok(()),
        }
    }
}

/// Maps the last step's features to the horizon, or, without a temporal
/// stage, collapses each step to a scalar and maps the sequence to the horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<P = Tensor> {
    pub step: Option<(P, P)>,
    pub weight: P,
    pub bias: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P = Tensor> {
    pub decomp: Option<DecompBranchParams<P>>,
    pub gcn: Vec<AdaptiveGraphParams<P>>,
    pub tcn: Vec<TcnLayerParams<P>>,
    pub head: HeadParams<P>,
}

pub type ModelVars = ModelParams<Var>;

impl ModelParams<Tensor> {
    pub fn init(config: &ModelConfig, n_features: usize) -> Result<Self> {
        config.validate()?;
        config.check_nodes(n_features)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let rng = &mut rng;
        let m = config.modules;
        let n = n_features;

        let (decomp, mut channels) = if m.use_decomposition {
            let p = DecompBranchParams::init(n, n * config.node_channels, config.period_channels, rng);
            (Some(p), config.node_channels)
        } else {
            (None, 1)
        };
        let mut gcn = Vec::new();
        if m.use_gcn {
            for _ in 0..config.gcn_layers {
                gcn.push(AdaptiveGraphParams::init(
                    n,
                    config.embed_dim,
                    config.factor_dim,
                    channels,
                    config.node_channels,
                    rng,
                ));
                channels = config.node_channels;
            }
        }
        let width = n * channels;
        let scale = |fan_in: usize| (1.0 / fan_in as f64).sqrt();
        let (tcn, head) = if m.use_tcn {
            let tcfg = config.effective_tcn();
            let tcn = TcnLayerParams::stack(width, &tcfg, rng);
            let head = HeadParams {
                step: None,
                weight: Tensor::randn(&[tcfg.channels, config.horizon], scale(tcfg.channels), rng),
                bias: Tensor::zeros(&[config.horizon]),
            };
            (tcn, head)
        } else {
            let head = HeadParams {
                step: Some((Tensor::randn(&[width, 1], scale(width), rng), Tensor::zeros(&[1]))),
                weight: Tensor::randn(&[config.input_len, config.horizon], scale(config.input_len), rng),
                bias: Tensor::zeros(&[config.horizon]),
            };
            (Vec::new(), head)
        };
        Ok(Self { decomp, gcn, tcn, head })
    }

    /// Every parameter tensor with its stable name, in binding order.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.map(&mut |name, t| out.push((name, t.clone())));
        out
    }

    pub fn n_parameters(&self) -> usize {
        let mut n = 0;
        self.map(&mut |_, t| n += t.len());
        n
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.map(&mut |_, t| ok &= t.is_finite());
        ok
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        self.map(&mut |_, t| tape.param(t.clone()))
    }

    pub fn bind_constant(&self, tape: &mut Tape) -> ModelVars {
        self.map(&mut |_, t| tape.constant(t.clone()))
    }
}

impl<P> ModelParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(String, &P) -> Q) -> ModelParams<Q> {
        ModelParams {
            decomp: self.decomp.as_ref().map(|d| d.map("decomp", f)),
            gcn: self
                .gcn
                .iter()
                .enumerate()
                .map(|(i, g)| g.map(&format!("gcn{i}"), f))
                .collect(),
            tcn: self
                .tcn
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("tcn{i}"), f))
                .collect(),
            head: HeadParams {
                step: self
                    .head
                    .step
                    .as_ref()
                    .map(|(w, b)| (f("head.step_weight".into(), w), f("head.step_bias".into(), b))),
                weight: f("head.weight".into(), &self.head.weight),
                bias: f("head.bias".into(), &self.head.bias),
            },
        }
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(String, &mut P)) {
        if let Some(d) = &mut self.decomp {
            d.for_each_mut("decomp", f);
        }
        for (i, g) in self.gcn.iter_mut().enumerate() {
            g.for_each_mut(&format!("gcn{i}"), f);
        }
        for (i, l) in self.tcn.iter_mut().enumerate() {
            l.for_each_mut(&format!("tcn{i}"), f);
        }
        if let Some((w, b)) = &mut self.head.step {
            f("head.step_weight".into(), w);
            f("head.step_bias".into(), b);
        }
        f("head.weight".into(), &mut self.head.weight);
        f("head.bias".into(), &mut self.head.bias);
    }
}

/// Parameter-free preprocessing of a batch, cropped to the steps that can
/// reach the prediction.
#[derive(Clone, Debug, PartialEq)]
pub enum PreparedBatch {
    Decomposed(DecomposedBatch),
    Raw(Tensor),
}

impl PreparedBatch {
    pub fn len(&self) -> usize {
        match self {
            PreparedBatch::Decomposed(d) => d.trend.shape()[0],
            PreparedBatch::Raw(t) => t.shape()[0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx` of the batch, in that order.
    pub fn gather(&self, idx: &[usize]) -> Result<Self> {
        Ok(match self {
            PreparedBatch::Decomposed(d) => PreparedBatch::Decomposed(DecomposedBatch {
                trend: gather_rows(&d.trend, idx)?,
                pure_period: gather_rows(&d.pure_period, idx)?,
            }),
            PreparedBatch::Raw(t) => PreparedBatch::Raw(gather_rows(t, idx)?),
        })
    }
}

pub(crate) fn gather_rows(t: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let row = t.len() / t.shape()[0];
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(shape, data)
}

fn crop_time(t: &Tensor, keep: usize) -> Result<Tensor> {
    let (b, steps, f) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if keep == steps {
        return Ok(t.clone());
    }
    let mut data = Vec::with_capacity(b * keep * f);
    for w in t.data().chunks(steps * f) {
        data.extend_from_slice(&w[(steps - keep) * f..]);
    }
    Tensor::new(vec![b, keep, f], data)
}

/// Decompose (when enabled) and crop a `[B, T, F]` batch for the forward pass.
pub fn prepare_batch(inputs: &Tensor, config: &ModelConfig) -> Result<PreparedBatch> {
    let s = inputs.shape();
    if s.len() != 3 || s[1] != config.input_len {
        return Err(shape_err(format!(
            "batch must be [B, {}, F], got {s:?}",
            config.input_len
        )));
    }
    config.check_nodes(s[2])?;
    let keep = config.context_len();
    if config.modules.use_decomposition {
        let d = decompose_batch(inputs, config.avg_window, config.topk)?;
        Ok(PreparedBatch::Decomposed(DecomposedBatch {
            trend: crop_time(&d.trend, keep)?,
            pure_period: crop_time(&d.pure_period, keep)?,
        }))
    } else {
        Ok(PreparedBatch::Raw(crop_time(inputs, keep)?))
    }
}

/// Predictions `[B, H]` from a prepared batch.
pub fn forward_prepared(tape: &mut Tape, batch: &PreparedBatch, p: &ModelVars, config: &ModelConfig) -> Result<Var> {
    let m = config.modules;
    let (b, t, n, mut h) = match (batch, &p.decomp) {
        (PreparedBatch::Decomposed(d), Some(dp)) => {
            let s = d.trend.shape();
            let (b, t, n) = (s[0], s[1], s[2]);
            let fused = decomposition_forward_prepared(tape, d, dp)?;
            let c = tape.shape(fused)[2] / n;
            (b, t, n, tape.reshape(fused, &[b, t, n, c])?)
        }
        (PreparedBatch::Raw(x), None) => {
            let s = x.shape();
            let (b, t, n) = (s[0], s[1], s[2]);
            let v = tape.constant(x.clone());
            (b, t, n, tape.reshape(v, &[b, t, n, 1])?)
        }
        _ => {
            return Err(Error::InvalidArgument(
                "prepared batch does not match the decomposition setting of the parameters".into(),
            ))
        }
    };
    if m.use_gcn {
        h = gcn_layer_stack(tape, h, &p.gcn)?;
    }
    let width = n * tape.shape(h)[3];
    let h = tape.reshape(h, &[b, t, width])?;

    if m.use_tcn {
        let tcfg = config.effective_tcn();
        let y = tcn_forward(tape, h, &tcfg, &p.tcn)?;
        let last = tape.narrow(y, 1, t - 1, 1)?;
        let last = tape.reshape(last, &[b, tcfg.channels])?;
        tape.linear(last, p.head.weight, Some(p.head.bias))
    } else {
        let (w, bias) = p
            .head
            .step
            .ok_or_else(|| Error::InvalidArgument("sequence head is missing its per-step map".into()))?;
        let s = tape.linear(h, w, Some(bias))?;
        let s = tape.reshape(s, &[b, t])?;
        tape.linear(s, p.head.weight, Some(p.head.bias))
    }
}

/// Predictions `[B, H]` for a raw `[B, T, F]` batch.
pub fn model_forward(tape: &mut Tape, inputs: &Tensor, p: &ModelVars, config: &ModelConfig) -> Result<Var> {
    let prepared = prepare_batch(inputs, config)?;
    forward_prepared(tape, &prepared, p, config)
}

/// Forward-only predictions, evaluated in chunks of `config.batch_size`.
pub fn predict(params: &ModelParams, config: &ModelConfig, prepared: &PreparedBatch) -> Result<Tensor> {
    let n = prepared.len();
    let mut out = Vec::with_capacity(n * config.horizon);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(config.batch_size) {
        let batch = prepared.gather(chunk)?;
        let mut tape = Tape::new();
        let vars = params.bind_constant(&mut tape);
        let y = forward_prepared(&mut tape, &batch, &vars, config)?;
        if tape.any_requires_grad() {
            return Err(Error::InvalidArgument("inference tape recorded a trainable value".into()));
        }
        out.extend_from_slice(tape.value(y).data());
    }
    Tensor::new(vec![n, config.horizon], out)
}

pub fn mse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    tape.mse(pred, target)
}
