//! Adam on mean-squared error with best-validation retention.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::data::{DatasetSplits, WindowedDataset};
use crate::error::{shape_err, Error, Result};
use crate::model::{forward_prepared, gather_rows, mse_loss, predict, prepare_batch, ModelConfig, ModelParams, PreparedBatch};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    fn slot(&mut self, i: usize, len: usize) -> Result<(&mut Vec<f64>, &mut Vec<f64>)> {
        if i == self.m.len() {
            self.m.push(vec![0.0; len]);
            self.v.push(vec![0.0; len]);
        }
        if self.m[i].len() != len {
            return Err(shape_err(format!(
                "optimizer slot {i} holds {} values, parameter has {len}",
                self.m[i].len()
            )));
        }
        Ok((&mut self.m[i], &mut self.v[i]))
    }

    /// Applies one bias-corrected update to parameter slot `i`, using the
    /// step counter as it stands.
    fn update(&mut self, hp: &Adam, i: usize, param: &mut [f64], grad: &[f64]) -> Result<()> {
        if param.len() != grad.len() {
            return Err(shape_err(format!(
                "gradient of length {} for a parameter of length {}",
                grad.len(),
                param.len()
            )));
        }
        let t = self.step as i32;
        let c1 = 1.0 - hp.beta1.powi(t);
        let c2 = 1.0 - hp.beta2.powi(t);
        let (m, v) = self.slot(i, param.len())?;
        for j in 0..param.len() {
            let g = grad[j];
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g;
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g * g;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            param[j] -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
        }
        Ok(())
    }
}

/// One Adam step over parallel lists of parameters and gradients.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimizerState, hp: &Adam) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    state.step += 1;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.update(hp, i, p.data_mut(), g.data())?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "epoch,train_loss,val_loss")?;
        for r in &self.records {
            writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_loss)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Stop once an epoch's training loss falls below this value.
    pub stop_below: Option<f64>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainingHistory,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Windows of one split, preprocessed once for repeated passes.
pub struct PreparedSplit {
    pub inputs: PreparedBatch,
    pub targets: Tensor,
}

impl PreparedSplit {
    pub fn new(ds: &WindowedDataset, config: &ModelConfig) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptySplit("no windows to prepare".into()));
        }
        if ds.input_len != config.input_len || ds.horizon != config.horizon {
            return Err(shape_err(format!(
                "windows are {}→{} steps, model expects {}→{}",
                ds.input_len, ds.horizon, config.input_len, config.horizon
            )));
        }
        let inputs = Tensor::new(vec![ds.len(), ds.input_len, ds.n_features], ds.inputs().to_vec())?;
        Ok(Self {
            inputs: prepare_batch(&inputs, config)?,
            targets: Tensor::new(vec![ds.len(), ds.horizon], ds.targets().to_vec())?,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Forward-only mean-squared error over a prepared split.
pub fn evaluate_loss(params: &ModelParams, config: &ModelConfig, split: &PreparedSplit) -> Result<f64> {
    let pred = predict(params, config, &split.inputs)?;
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(split.targets.data())
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n)
}

pub fn train(splits: &DatasetSplits, config: &ModelConfig) -> Result<(ModelParams, TrainingHistory)> {
    let out = train_with_options(splits, config, &TrainOptions::default())?;
    Ok((out.params, out.history))
}

pub fn train_with_options(splits: &DatasetSplits, config: &ModelConfig, options: &TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    if splits.train.is_empty() {
        return Err(Error::EmptySplit("training split has no windows".into()));
    }
    let train_set = PreparedSplit::new(&splits.train, config)?;
    let val_set = PreparedSplit::new(&splits.val, config)?;
    let mut params = ModelParams::init(config, splits.train.n_features)?;
    let hp = Adam::new(config.learning_rate);
    let mut state = OptimizerState::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));

    let mut history = TrainingHistory::default();
    let mut best = (params.clone(), 0, f64::INFINITY);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train_set.inputs.gather(chunk)?;
            let targets = gather_rows(&train_set.targets, chunk)?;
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape);
            let pred = forward_prepared(&mut tape, &batch, &vars, config)?;
            let y = tape.constant(targets);
            let loss = mse_loss(&mut tape, pred, y)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            tape.backward(loss)?;
            total += value * chunk.len() as f64;

            state.step += 1;
            let mut grads = Vec::new();
            vars.map(&mut |_, v| grads.push(tape.grad_tensor(*v)));
            let mut slot = 0;
            let mut failure = None;
            params.for_each_mut(&mut |_, t| {
                if failure.is_none() {
                    failure = state.update(&hp, slot, t.data_mut(), grads[slot].data()).err();
                }
                slot += 1;
            });
            if let Some(e) = failure {
                return Err(e);
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = evaluate_loss(&params, config, &val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if options.verbose {
            eprintln!("epoch {epoch:4}  train {train_loss:.6}  val {val_loss:.6}");
        }
        if val_loss < best.2 {
            best = (params.clone(), epoch, val_loss);
        }
        if options.stop_below.is_some_and(|s| train_loss < s) {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best.0,
        history,
        best_epoch: best.1,
        best_val_loss: best.2,
    })
}
