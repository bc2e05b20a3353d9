//! Define-by-run gradient tape.
//!
//! Every operation appends a node holding its output value and the inputs
//! needed for its backward rule. Node ids are handed out in creation order, so
//! the node list is already topologically sorted and `backward` simply walks
//! it in reverse, accumulating gradients additively into each input.

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Subtract,
    Multiply,
    Relu,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Binary {
        kind: ElementwiseOp,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Relu(Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    ConcatLast(Vec<Var>),
    CausalConv {
        x: Var,
        kernel: Var,
        dilation: usize,
    },
    NodeMix {
        adj: Var,
        x: Var,
    },
    NodeLinear {
        h: Var,
        theta: Var,
        bias: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Records operations for reverse-mode differentiation.
///
/// A tape is single-owner; build a fresh one per forward/backward cycle.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// True when any recorded value participates in differentiation.
    pub fn any_requires_grad(&self) -> bool {
        self.nodes.iter().any(|n| n.requires_grad)
    }

    /// Gradient buffer of `v` after [`Tape::backward`], if one was accumulated.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` as a tensor; zeros when `v` was unreachable from the loss.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let shape = self.shape(v).to_vec();
        match self.grad(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("grad shape matches value"),
            None => Tensor::zeros(&shape),
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ----------------------------------------------------------------------
    // forward operations

    pub fn elementwise(&mut self, kind: ElementwiseOp, a: Var, b: Option<Var>) -> Result<Var> {
        match (kind, b) {
            (ElementwiseOp::Relu, None) => Ok(self.relu(a)),
            (ElementwiseOp::Relu, Some(_)) => Err(Error::InvalidArgument(
                "relu takes a single operand".into(),
            )),
            (_, None) => Err(Error::InvalidArgument(format!(
                "{kind:?} needs two operands"
            ))),
            (_, Some(b)) => self.binary(kind, a, b),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Subtract, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(ElementwiseOp::Multiply, a, b)
    }

    /// `b` may match `a`'s shape or be a vector broadcast along `a`'s last axis.
    fn binary(&mut self, kind: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let broadcast = if sa == sb {
            false
        } else if sb.len() == 1 && sa.last() == sb.first() {
            true
        } else {
            return Err(shape_err(format!(
                "{kind:?}: operand shapes {sa:?} and {sb:?} are incompatible"
            )));
        };
        let av = self.value(a);
        let bv = self.value(b).data();
        let c = bv.len();
        let f: fn(f64, f64) -> f64 = match kind {
            ElementwiseOp::Add => |x, y| x + y,
            ElementwiseOp::Subtract => |x, y| x - y,
            ElementwiseOp::Multiply => |x, y| x * y,
            ElementwiseOp::Relu => unreachable!(),
        };
        let data: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[if broadcast { i % c } else { i }]))
            .collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            out,
            rg,
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            },
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x.max(0.0)).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, rg, Op::Relu(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x * factor).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(out, rg, Op::Scale(a, factor))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(format!(
                "matmul: cannot multiply {sa:?} by {sb:?}"
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let out = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err(format!("transpose needs rank 2, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let av = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = av[i * c + j];
            }
        }
        let out = Tensor::new(vec![c, r], out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, rg, Op::Transpose(a)))
    }

    /// Row-wise softmax of a rank-2 tensor, stabilised by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err(format!("softmax_rows needs rank 2, got {s:?}")));
        }
        let c = s[1];
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let out = Tensor::new(s.to_vec(), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, rg, Op::SoftmaxRows(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.value(a).data();
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), rg, Op::Mean(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, rg, Op::Reshape(a)))
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(shape_err(format!(
                "narrow: range {start}..{} out of bounds for axis {axis} of {s:?}",
                start + len
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let dim = s[axis];
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Narrow { x, axis, start }))
    }

    /// Concatenate along the last axis; leading dimensions must agree.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.shape(v);
            if s[..s.len() - 1] != lead[..] {
                return Err(shape_err(format!(
                    "concat: leading dims {:?} differ from {lead:?}",
                    &s[..s.len() - 1]
                )));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&v, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(xs);
        Ok(self.push(out, rg, Op::ConcatLast(xs.to_vec())))
    }

    /// Dilated causal convolution along time.
    ///
    /// `x` is `[B, T, C_in]`, `kernel` is `[K, C_in, C_out]`, and
    /// `out[b, s, :] = Σ_i x[b, s - d·i, :] · kernel[i]`, reading zeros before
    /// the first step so the output keeps length `T`.
    pub fn causal_conv(&mut self, x: Var, kernel: Var, dilation: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x), self.shape(kernel));
        if sx.len() != 3 || sk.len() != 3 || sx[2] != sk[1] {
            return Err(shape_err(format!(
                "causal_conv: input {sx:?} incompatible with kernel {sk:?} (want [B,T,C_in] and [K,C_in,C_out])"
            )));
        }
        if dilation == 0 {
            return Err(Error::InvalidArgument("dilation must be >= 1".into()));
        }
        let (b, t, cin) = (sx[0], sx[1], sx[2]);
        let (k, cout) = (sk[0], sk[2]);
        let xv = self.value(x).data();
        let kv = self.value(kernel).data();
        let mut out = vec![0.0; b * t * cout];
        for bi in 0..b {
            for s in 0..t {
                let orow = &mut out[(bi * t + s) * cout..(bi * t + s + 1) * cout];
                for i in 0..k {
                    let Some(src) = s.checked_sub(dilation * i) else {
                        break;
                    };
                    let xrow = &xv[(bi * t + src) * cin..(bi * t + src + 1) * cin];
                    let slab = &kv[i * cin * cout..(i + 1) * cin * cout];
                    for (c, &xc) in xrow.iter().enumerate() {
                        let wrow = &slab[c * cout..(c + 1) * cout];
                        for (o, &w) in orow.iter_mut().zip(wrow) {
                            *o += xc * w;
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![b, t, cout], out)?;
        let rg = self.rg(&[x, kernel]);
        Ok(self.push(
            out,
            rg,
            Op::CausalConv {
                x,
                kernel,
                dilation,
            },
        ))
    }

    /// `out[.., n, :] = Σ_m adj[n, m] · x[.., m, :]` for `x` of shape `[.., N, C]`.
    pub fn node_mix(&mut self, adj: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(adj), self.shape(x));
        if sa.len() != 2 || sa[0] != sa[1] || sx.len() < 2 || sx[sx.len() - 2] != sa[0] {
            return Err(shape_err(format!(
                "node_mix: adjacency {sa:?} does not match node axis of {sx:?}"
            )));
        }
        let n = sa[0];
        let c = sx[sx.len() - 1];
        let groups = self.value(x).len() / (n * c);
        let av = self.value(adj).data();
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for g in 0..groups {
            let xg = &xv[g * n * c..(g + 1) * n * c];
            let og = &mut out[g * n * c..(g + 1) * n * c];
            for i in 0..n {
                let orow = &mut og[i * c..(i + 1) * c];
                for j in 0..n {
                    let a = av[i * n + j];
                    for (o, &xx) in orow.iter_mut().zip(&xg[j * c..(j + 1) * c]) {
                        *o += a * xx;
                    }
                }
            }
        }
        let out = Tensor::new(sx.to_vec(), out)?;
        let rg = self.rg(&[adj, x]);
        Ok(self.push(out, rg, Op::NodeMix { adj, x }))
    }

    /// Per-node affine map: `out[.., n, :] = h[.., n, :] · theta[n] + bias[n]`.
    ///
    /// `h` is `[.., N, C_in]`, `theta` is `[N, C_in, C_out]`, `bias` is `[N, C_out]`.
    pub fn node_linear(&mut self, h: Var, theta: Var, bias: Var) -> Result<Var> {
        let (sh, st, sb) = (self.shape(h), self.shape(theta), self.shape(bias));
        let ok = sh.len() >= 2
            && st.len() == 3
            && sb.len() == 2
            && sh[sh.len() - 2] == st[0]
            && sh[sh.len() - 1] == st[1]
            && sb[0] == st[0]
            && sb[1] == st[2];
        if !ok {
            return Err(shape_err(format!(
                "node_linear: states {sh:?}, weights {st:?}, bias {sb:?} are inconsistent"
            )));
        }
        let (n, cin, cout) = (st[0], st[1], st[2]);
        let groups = self.value(h).len() / (n * cin);
        let hv = self.value(h).data();
        let tv = self.value(theta).data();
        let bv = self.value(bias).data();
        let mut out = Vec::with_capacity(groups * n * cout);
        for g in 0..groups {
            for node in 0..n {
                let mut row = bv[node * cout..(node + 1) * cout].to_vec();
                let hrow = &hv[(g * n + node) * cin..(g * n + node + 1) * cin];
                let tn = &tv[node * cin * cout..(node + 1) * cin * cout];
                for (c, &hc) in hrow.iter().enumerate() {
                    for (o, &w) in row.iter_mut().zip(&tn[c * cout..(c + 1) * cout]) {
                        *o += hc * w;
                    }
                }
                out.extend_from_slice(&row);
            }
        }
        let mut shape = sh.to_vec();
        *shape.last_mut().unwrap() = cout;
        let out = Tensor::new(shape, out)?;
        let rg = self.rg(&[h, theta, bias]);
        Ok(self.push(out, rg, Op::NodeLinear { h, theta, bias }))
    }

    // ----------------------------------------------------------------------
    // composites

    /// Affine map over the last axis: `x · w + b` with `w: [C_in, C_out]`, `b: [C_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let cin = *s.last().unwrap();
        let rows = self.value(x).len() / cin;
        let flat = if s.len() == 2 {
            x
        } else {
            self.reshape(x, &[rows, cin])?
        };
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            y = self.add(y, b)?;
        }
        let cout = self.shape(y)[1];
        if s.len() == 2 {
            Ok(y)
        } else {
            let mut shape = s;
            *shape.last_mut().unwrap() = cout;
            self.reshape(y, &shape)
        }
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(shape_err(format!(
                "mse: prediction {:?} vs target {:?}",
                self.shape(pred),
                self.shape(target)
            )));
        }
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    // ----------------------------------------------------------------------
    // reverse pass

    /// Accumulate d(loss)/d(v) into every differentiable value reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            } => {
                let c = self.value(b).len();
                let bidx = |i: usize| if broadcast { i % c } else { i };
                match kind {
                    ElementwiseOp::Add | ElementwiseOp::Subtract => {
                        let sign = if kind == ElementwiseOp::Add { 1.0 } else { -1.0 };
                        self.accumulate(a, |ga| add_into(ga, g));
                        self.accumulate(b, |gb| {
                            for (i, &gi) in g.iter().enumerate() {
                                gb[bidx(i)] += sign * gi;
                            }
                        });
                    }
                    ElementwiseOp::Multiply => {
                        let av = self.value(a).data().to_vec();
                        let bv = self.value(b).data().to_vec();
                        self.accumulate(a, |ga| {
                            for (i, &gi) in g.iter().enumerate() {
                                ga[i] += gi * bv[bidx(i)];
                            }
                        });
                        self.accumulate(b, |gb| {
                            for (i, &gi) in g.iter().enumerate() {
                                gb[bidx(i)] += gi * av[i];
                            }
                        });
                    }
                    ElementwiseOp::Relu => unreachable!(),
                }
            }
            Op::Relu(a) => {
                let mask: Vec<bool> = self.value(a).data().iter().map(|&x| x > 0.0).collect();
                self.accumulate(a, |ga| {
                    for ((dst, &gi), m) in ga.iter_mut().zip(g).zip(mask) {
                        if m {
                            *dst += gi;
                        }
                    }
                });
            }
            Op::Scale(a, factor) => self.accumulate(a, |ga| {
                for (dst, &gi) in ga.iter_mut().zip(g) {
                    *dst += factor * gi;
                }
            }),
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.requires_grad(a) {
                    // dA = dZ · Bᵀ
                    let bv = self.value(b).data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            da[i * k + p] = dot(grow, brow);
                        }
                    }
                    self.accumulate(a, |ga| add_into(ga, &da));
                }
                if self.requires_grad(b) {
                    // dB = Aᵀ · dZ
                    let av = self.value(a).data();
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (d, &gj) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += aip * gj;
                            }
                        }
                    }
                    self.accumulate(b, |gb| add_into(gb, &db));
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(a)[0], self.shape(a)[1]);
                self.accumulate(a, |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let c = self.shape(a)[1];
                let y = self.nodes[idx].value.data().to_vec();
                self.accumulate(a, |ga| {
                    for ((yr, gr), dr) in y.chunks(c).zip(g.chunks(c)).zip(ga.chunks_mut(c)) {
                        let inner = dot(yr, gr);
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - inner);
                        }
                    }
                });
            }
            Op::Sum(a) => self.accumulate(a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = self.value(a).len() as f64;
                self.accumulate(a, |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
            }
            Op::Reshape(a) => self.accumulate(a, |ga| add_into(ga, g)),
            Op::Narrow { x, axis, start } => {
                let s = self.shape(x).to_vec();
                let len = self.nodes[idx].value.shape()[axis];
                let outer: usize = s[..axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let dim = s[axis];
                self.accumulate(x, |gx| {
                    for o in 0..outer {
                        let dst = (o * dim + start) * inner;
                        let src = o * len * inner;
                        add_into(&mut gx[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                });
            }
            Op::ConcatLast(xs) => {
                let widths: Vec<usize> = xs.iter().map(|&v| *self.shape(v).last().unwrap()).collect();
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (&v, &w) in xs.iter().zip(&widths) {
                    self.accumulate(v, |gv| {
                        for r in 0..rows {
                            add_into(
                                &mut gv[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::CausalConv {
                x,
                kernel,
                dilation,
            } => {
                let sx = self.shape(x).to_vec();
                let sk = self.shape(kernel).to_vec();
                let (b, t, cin) = (sx[0], sx[1], sx[2]);
                let (k, cout) = (sk[0], sk[2]);
                let xv = self.value(x).data();
                let kv = self.value(kernel).data();
                let want_x = self.requires_grad(x);
                let want_k = self.requires_grad(kernel);
                let mut dx = if want_x { vec![0.0; xv.len()] } else { Vec::new() };
                let mut dk = if want_k { vec![0.0; kv.len()] } else { Vec::new() };
                for bi in 0..b {
                    for s in 0..t {
                        let grow = &g[(bi * t + s) * cout..(bi * t + s + 1) * cout];
                        for i in 0..k {
                            let Some(src) = s.checked_sub(dilation * i) else {
                                break;
                            };
                            let xoff = (bi * t + src) * cin;
                            let koff = i * cin * cout;
                            for c in 0..cin {
                                let wrow = &kv[koff + c * cout..koff + (c + 1) * cout];
                                if want_x {
                                    dx[xoff + c] += dot(grow, wrow);
                                }
                                if want_k {
                                    let xc = xv[xoff + c];
                                    for (d, &go) in
                                        dk[koff + c * cout..koff + (c + 1) * cout].iter_mut().zip(grow)
                                    {
                                        *d += xc * go;
                                    }
                                }
                            }
                        }
                    }
                }
                if want_x {
                    self.accumulate(x, |gx| add_into(gx, &dx));
                }
                if want_k {
                    self.accumulate(kernel, |gk| add_into(gk, &dk));
                }
            }
            Op::NodeMix { adj, x } => {
                let n = self.shape(adj)[0];
                let sx = self.shape(x);
                let c = sx[sx.len() - 1];
                let groups = g.len() / (n * c);
                let av = self.value(adj).data();
                let xv = self.value(x).data();
                let want_x = self.requires_grad(x);
                let want_a = self.requires_grad(adj);
                let mut dx = if want_x { vec![0.0; xv.len()] } else { Vec::new() };
                let mut da = if want_a { vec![0.0; n * n] } else { Vec::new() };
                for grp in 0..groups {
                    let base = grp * n * c;
                    for i in 0..n {
                        let grow = &g[base + i * c..base + (i + 1) * c];
                        for j in 0..n {
                            let xrow = &xv[base + j * c..base + (j + 1) * c];
                            if want_a {
                                da[i * n + j] += dot(grow, xrow);
                            }
                            if want_x {
                                let a = av[i * n + j];
                                for (d, &gg) in dx[base + j * c..base + (j + 1) * c].iter_mut().zip(grow) {
                                    *d += a * gg;
                                }
                            }
                        }
                    }
                }
                if want_x {
                    self.accumulate(x, |gx| add_into(gx, &dx));
                }
                if want_a {
                    self.accumulate(adj, |ga| add_into(ga, &da));
                }
            }
            Op::NodeLinear { h, theta, bias } => {
                let st = self.shape(theta).to_vec();
                let (n, cin, cout) = (st[0], st[1], st[2]);
                let groups = g.len() / (n * cout);
                let hv = self.value(h).data();
                let tv = self.value(theta).data();
                let want_h = self.requires_grad(h);
                let want_t = self.requires_grad(theta);
                let want_b = self.requires_grad(bias);
                let mut dh = if want_h { vec![0.0; hv.len()] } else { Vec::new() };
                let mut dt = if want_t { vec![0.0; tv.len()] } else { Vec::new() };
                let mut db = if want_b { vec![0.0; n * cout] } else { Vec::new() };
                for grp in 0..groups {
                    for node in 0..n {
                        let grow = &g[(grp * n + node) * cout..(grp * n + node + 1) * cout];
                        let hoff = (grp * n + node) * cin;
                        let toff = node * cin * cout;
                        if want_b {
                            add_into(&mut db[node * cout..(node + 1) * cout], grow);
                        }
                        for c in 0..cin {
                            let trow = toff + c * cout..toff + (c + 1) * cout;
                            if want_h {
                                dh[hoff + c] += dot(grow, &tv[trow.clone()]);
                            }
                            if want_t {
                                let hc = hv[hoff + c];
                                for (d, &go) in dt[trow].iter_mut().zip(grow) {
                                    *d += hc * go;
                                }
                            }
                        }
                    }
                }
                if want_h {
                    self.accumulate(h, |gh| add_into(gh, &dh));
                }
                if want_t {
                    self.accumulate(theta, |gt| add_into(gt, &dt));
                }
                if want_b {
                    self.accumulate(bias, |gb| add_into(gb, &db));
                }
            }
        }
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
