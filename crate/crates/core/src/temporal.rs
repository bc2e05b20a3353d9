//! Stacked dilated causal convolutions with residual connections.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcnConfig {
    pub n_layers: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    /// Output channels of every block.
    pub channels: usize,
    /// Width of the linear reduction in front of each convolution; `None`
    /// feeds the block input to the convolution directly.
    pub reduction: Option<usize>,
    pub residual: bool,
}

impl Default for TcnConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            kernel_size: 3,
            dilations: vec![1, 2, 4, 8],
            channels: 16,
            reduction: Some(8),
            residual: true,
        }
    }
}

impl TcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.kernel_size == 0 || self.channels == 0 {
            return Err(Error::Config("tcn layers, kernel size and channels must be positive".into()));
        }
        if self.dilations.len() != self.n_layers {
            return Err(Error::Config(format!(
                "{} dilations given for {} tcn layers",
                self.dilations.len(),
                self.n_layers
            )));
        }
        if self.dilations.contains(&0) || self.reduction == Some(0) {
            return Err(Error::Config("dilations and reduction width must be positive".into()));
        }
        Ok(())
    }

    /// Number of past steps, including the current one, that can reach an output.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size - 1) * self.dilations.iter().sum::<usize>()
    }
}

/// Skip path of a block.
#[derive(Clone, Debug, PartialEq)]
pub enum Residual<P> {
    None,
    Identity,
    /// `[C_in, C_out]` linear map, for blocks that change the channel count.
    Projection(P),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcnLayerParams<P = Tensor> {
    /// `[C_in, R]` and `[R]`
    pub reduce: Option<(P, P)>,
    /// `[k, R or C_in, C_out]`
    pub kernel: P,
    pub conv_bias: P,
    pub residual: Residual<P>,
}

pub type TcnLayerVars = TcnLayerParams<Var>;

impl TcnLayerParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel_size: usize,
        reduction: Option<usize>,
        residual: bool,
        rng: &mut R,
    ) -> Self {
        let scale = |fan_in: usize| (1.0 / fan_in as f64).sqrt();
        let reduce = reduction.map(|r| (Tensor::randn(&[c_in, r], scale(c_in), rng), Tensor::zeros(&[r])));
        let conv_in = reduction.unwrap_or(c_in);
        Self {
            reduce,
            kernel: Tensor::randn(&[kernel_size, conv_in, c_out], scale(kernel_size * conv_in), rng),
            conv_bias: Tensor::zeros(&[c_out]),
            residual: match (residual, c_in == c_out) {
                (false, _) => Residual::None,
                (true, true) => Residual::Identity,
                (true, false) => Residual::Projection(Tensor::randn(&[c_in, c_out], scale(c_in), rng)),
            },
        }
    }

    pub fn stack<R: Rng + ?Sized>(c_in: usize, config: &TcnConfig, rng: &mut R) -> Vec<Self> {
        (0..config.n_layers)
            .map(|i| {
                let cin = if i == 0 { c_in } else { config.channels };
                Self::init(cin, config.channels, config.kernel_size, config.reduction, config.residual, rng)
            })
            .collect()
    }
}

impl<P> TcnLayerParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(String, &P) -> Q) -> TcnLayerParams<Q> {
        TcnLayerParams {
            reduce: self.reduce.as_ref().map(|(w, b)| {
                (f(format!("{prefix}.reduce_weight"), w), f(format!("{prefix}.reduce_bias"), b))
            }),
            kernel: f(format!("{prefix}.kernel"), &self.kernel),
            conv_bias: f(format!("{prefix}.conv_bias"), &self.conv_bias),
            residual: match &self.residual {
                Residual::None => Residual::None,
                Residual::Identity => Residual::Identity,
                Residual::Projection(w) => Residual::Projection(f(format!("{prefix}.residual"), w)),
            },
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        if let Some((w, b)) = &mut self.reduce {
            f(format!("{prefix}.reduce_weight"), w);
            f(format!("{prefix}.reduce_bias"), b);
        }
        f(format!("{prefix}.kernel"), &mut self.kernel);
        f(format!("{prefix}.conv_bias"), &mut self.conv_bias);
        if let Residual::Projection(w) = &mut self.residual {
            f(format!("{prefix}.residual"), w);
        }
    }
}

/// Runs `body` on a `[B, T, C]` view of `x`, which may also be `[T, C]`.
fn batched(tape: &mut Tape, x: Var, body: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    match shape.len() {
        3 => body(tape, x),
        2 => {
            let x3 = tape.reshape(x, &[1, shape[0], shape[1]])?;
            let y = body(tape, x3)?;
            let c = tape.shape(y)[2];
            tape.reshape(y, &[shape[0], c])
        }
        _ => Err(shape_err(format!("expected [T, C] or [B, T, C], got {shape:?}"))),
    }
}

/// `out[s] = Σ_i f[i] · x[s - d·i]`, zero before the first step.
pub fn dilated_causal_conv(tape: &mut Tape, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
    batched(tape, x, |tape, x| tape.causal_conv(x, kernel, dilation))
}

/// Reduction → dilated causal convolution → ReLU → residual sum.
///
/// An identity skip needs equal input and output channels.
pub fn tcn_block(tape: &mut Tape, x: Var, p: &TcnLayerVars, dilation: usize) -> Result<Var> {
    batched(tape, x, |tape, x| {
        let mut h = x;
        if let Some((w, b)) = p.reduce {
            h = tape.linear(h, w, Some(b))?;
        }
        let h = tape.causal_conv(h, p.kernel, dilation)?;
        let h = tape.add(h, p.conv_bias)?;
        let h = tape.relu(h);
        match p.residual {
            Residual::None => Ok(h),
            Residual::Identity => tape.add(h, x),
            Residual::Projection(w) => {
                let skip = tape.linear(x, w, None)?;
                tape.add(h, skip)
            }
        }
    })
}

pub fn tcn_forward(tape: &mut Tape, x: Var, config: &TcnConfig, layers: &[TcnLayerVars]) -> Result<Var> {
    config.validate()?;
    if layers.len() != config.n_layers {
        return Err(Error::InvalidArgument(format!(
            "{} tcn parameter sets for {} layers",
            layers.len(),
            config.n_layers
        )));
    }
    let mut h = x;
    for (p, &d) in layers.iter().zip(&config.dilations) {
        h = tcn_block(tape, h, p, d)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_receptive_field_is_31() {
        let c = TcnConfig::default();
        c.validate().unwrap();
        assert_eq!(c.receptive_field(), 31);
    }

    #[test]
    fn validation_catches_inconsistent_dilations() {
        let c = TcnConfig {
            dilations: vec![1, 2],
            ..TcnConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
