//! Adaptive graph convolution over the feature axis.
//!
//! Every selected water-quality parameter is a graph node. The adjacency is
//! learned from node embeddings, and each node gets its own update weights
//! generated from a shared low-rank factor.

use rand::Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};

pub const DEFAULT_EMBED_DIM: usize = 7;
pub const DEFAULT_GCN_LAYERS: usize = 2;
pub const INIT_STD: f64 = 0.1;

/// Learnable terms of one graph layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveGraphParams<P = Tensor> {
    /// `E_A`, `[N, d_e]`
    pub embed_a: P,
    /// `E_ζ`, `[N, d_z]`
    pub embed_z: P,
    /// `W_ζ`, `[d_z, C_in, C_out]`
    pub weight_pool: P,
    /// `b_ζ`, `[d_z, C_out]`
    pub bias_pool: P,
}

pub type AdaptiveGraphVars = AdaptiveGraphParams<Var>;

impl AdaptiveGraphParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(
        n_nodes: usize,
        d_e: usize,
        d_z: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            embed_a: Tensor::randn(&[n_nodes, d_e], INIT_STD, rng),
            embed_z: Tensor::randn(&[n_nodes, d_z], INIT_STD, rng),
            weight_pool: Tensor::randn(&[d_z, c_in, c_out], INIT_STD, rng),
            bias_pool: Tensor::randn(&[d_z, c_out], INIT_STD, rng),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.embed_a.shape()[0]
    }
}

impl<P> AdaptiveGraphParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut impl FnMut(String, &P) -> Q) -> AdaptiveGraphParams<Q> {
        AdaptiveGraphParams {
            embed_a: f(format!("{prefix}.embed_a"), &self.embed_a),
            embed_z: f(format!("{prefix}.embed_z"), &self.embed_z),
            weight_pool: f(format!("{prefix}.weight_pool"), &self.weight_pool),
            bias_pool: f(format!("{prefix}.bias_pool"), &self.bias_pool),
        }
    }

    pub fn for_each_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut P)) {
        f(format!("{prefix}.embed_a"), &mut self.embed_a);
        f(format!("{prefix}.embed_z"), &mut self.embed_z);
        f(format!("{prefix}.weight_pool"), &mut self.weight_pool);
        f(format!("{prefix}.bias_pool"), &mut self.bias_pool);
    }
}

/// `softmax_rows(ReLU(E_A · E_Aᵀ))`
pub fn adaptive_adjacency(tape: &mut Tape, embed_a: Var) -> Result<Var> {
    if tape.shape(embed_a).len() != 2 {
        return Err(shape_err(format!(
            "node embedding must be [N, d_e], got {:?}",
            tape.shape(embed_a)
        )));
    }
    let et = tape.transpose(embed_a)?;
    let logits = tape.matmul(embed_a, et)?;
    let logits = tape.relu(logits);
    tape.softmax_rows(logits)
}

/// Value of the learned adjacency without recording gradients.
pub fn adjacency_matrix(embed_a: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let e = tape.constant(embed_a.clone());
    let a = adaptive_adjacency(&mut tape, e)?;
    Ok(tape.value(a).clone())
}

/// Per-node weights `Θ_n = E_ζ[n]·W_ζ` as `[N, C_in, C_out]` and biases
/// `b_n = E_ζ[n]·b_ζ` as `[N, C_out]`.
fn node_weights(tape: &mut Tape, p: &AdaptiveGraphVars) -> Result<(Var, Var)> {
    let (sz, sw, sb) = (tape.shape(p.embed_z), tape.shape(p.weight_pool), tape.shape(p.bias_pool));
    if sz.len() != 2 || sw.len() != 3 || sb.len() != 2 || sw[0] != sz[1] || sb[0] != sz[1] || sb[1] != sw[2] {
        return Err(shape_err(format!(
            "factor shapes disagree: E_ζ {sz:?}, W_ζ {sw:?}, b_ζ {sb:?} (d_z axis must match)"
        )));
    }
    let (n, dz, cin, cout) = (sz[0], sz[1], sw[1], sw[2]);
    let w = tape.reshape(p.weight_pool, &[dz, cin * cout])?;
    let theta = tape.matmul(p.embed_z, w)?;
    let theta = tape.reshape(theta, &[n, cin, cout])?;
    let bias = tape.matmul(p.embed_z, p.bias_pool)?;
    Ok((theta, bias))
}

/// `Z[n] = ((I + A) X)[n] · Θ_n + b_n` with an explicitly supplied adjacency.
///
/// `x` is `[.., N, C_in]`; leading axes are independent samples.
pub fn adaptive_gcn_forward_with(tape: &mut Tape, x: Var, adj: Var, p: &AdaptiveGraphVars) -> Result<Var> {
    let sx = tape.shape(x);
    let n = tape.shape(p.embed_z)[0];
    if sx.len() < 2 || sx[sx.len() - 2] != n {
        return Err(shape_err(format!(
            "node axis of input {sx:?} does not match {n} graph nodes"
        )));
    }
    let mixed = tape.node_mix(adj, x)?;
    let h = tape.add(x, mixed)?;
    let (theta, bias) = node_weights(tape, p)?;
    tape.node_linear(h, theta, bias)
}

pub fn adaptive_gcn_forward(tape: &mut Tape, x: Var, p: &AdaptiveGraphVars) -> Result<Var> {
    let adj = adaptive_adjacency(tape, p.embed_a)?;
    adaptive_gcn_forward_with(tape, x, adj, p)
}

/// Layers composed with ReLU between them. `x` is `[.., T, N, C]` or any
/// shape whose last two axes are nodes and channels.
pub fn gcn_layer_stack(tape: &mut Tape, x: Var, layers: &[AdaptiveGraphVars]) -> Result<Var> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("graph stack needs at least one layer".into()));
    }
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        if i > 0 {
            h = tape.relu(h);
        }
        h = adaptive_gcn_forward(tape, h, layer)?;
    }
    Ok(h)
}

/// Fixed graph with shared weights, used as a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticGraphSpec {
    /// `[N, N]`, nonnegative
    pub adjacency: Tensor,
    /// `[C_in, C_out]`
    pub weight: Tensor,
    /// `[C_out]`
    pub bias: Tensor,
}

impl StaticGraphSpec {
    pub fn degrees(&self) -> Vec<f64> {
        let n = self.adjacency.shape()[0];
        self.adjacency.data().chunks(n).map(|r| r.iter().sum()).collect()
    }
}

/// `Z = (I + D^{-1/2} A D^{-1/2}) X Θ + b`
pub fn standard_gcn_forward(x: &Tensor, spec: &StaticGraphSpec) -> Result<Tensor> {
    let [n, cin] = x.shape() else {
        return Err(shape_err(format!("X must be [N, C_in], got {:?}", x.shape())));
    };
    let (n, cin) = (*n, *cin);
    if spec.adjacency.shape() != [n, n] {
        return Err(shape_err(format!(
            "adjacency {:?} does not match {n} nodes",
            spec.adjacency.shape()
        )));
    }
    let [wi, cout] = spec.weight.shape() else {
        return Err(shape_err(format!("Θ must be [C_in, C_out], got {:?}", spec.weight.shape())));
    };
    let cout = *cout;
    if *wi != cin || spec.bias.shape() != [cout] {
        return Err(shape_err(format!(
            "Θ {:?} and b {:?} inconsistent with C_in = {cin}",
            spec.weight.shape(),
            spec.bias.shape()
        )));
    }
    let a = spec.adjacency.data();
    if a.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument("adjacency must be nonnegative".into()));
    }
    let deg = spec.degrees();
    if let Some(i) = deg.iter().position(|d| *d <= 0.0) {
        return Err(Error::InvalidArgument(format!("node {i} has zero degree")));
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut h = x.data().to_vec();
    for i in 0..n {
        for j in 0..n {
            let w = inv_sqrt[i] * a[i * n + j] * inv_sqrt[j];
            for c in 0..cin {
                h[i * cin + c] += w * x.data()[j * cin + c];
            }
        }
    }
    let mut z = Vec::with_capacity(n * cout);
    for i in 0..n {
        for o in 0..cout {
            let mut acc = spec.bias.data()[o];
            for c in 0..cin {
                acc += h[i * cin + c] * spec.weight.data()[c * cout + o];
            }
            z.push(acc);
        }
    }
    Tensor::new(vec![n, cout], z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_embedding_gives_uniform_adjacency() {
        let a = adjacency_matrix(&Tensor::zeros(&[4, 3])).unwrap();
        assert!(a.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        let a = adjacency_matrix(&Tensor::full(&[1, 3], 2.0)).unwrap();
        assert_eq!(a.data(), &[1.0]);
    }

    #[test]
    fn static_gcn_rejects_isolated_nodes() {
        let spec = StaticGraphSpec {
            adjacency: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap(),
            weight: Tensor::eye(1),
            bias: Tensor::zeros(&[1]),
        };
        assert!(standard_gcn_forward(&Tensor::zeros(&[2, 1]), &spec).is_err());
    }

    #[test]
    fn mismatched_factor_shapes_are_reported() {
        let mut tape = Tape::new();
        let p = AdaptiveGraphParams {
            embed_a: Tensor::zeros(&[3, 2]),
            embed_z: Tensor::zeros(&[3, 2]),
            weight_pool: Tensor::zeros(&[4, 1, 1]),
            bias_pool: Tensor::zeros(&[2, 1]),
        }
        .map("g", &mut |_, t| tape.param(t.clone()));
        let x = tape.constant(Tensor::zeros(&[3, 1]));
        let err = adaptive_gcn_forward(&mut tape, x, &p).unwrap_err();
        assert!(err.to_string().contains("d_z"), "{err}");
    }
}
