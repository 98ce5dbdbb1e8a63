//! A small reverse-mode differentiation engine over dense row-major tensors.
//!
//! A [`Graph`] is recorded afresh for every forward pass. Each recorded node
//! keeps its value and the operation that produced it; [`Graph::backward`]
//! walks the nodes in reverse insertion order, which is a reverse topological
//! order because inputs are always recorded before their consumers.
//! Gradients are summed into every input, so a node used several times
//! (a cached projection shared by all quadrature nodes, say) receives the
//! sum of its contributions.

mod checkpoint;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint, EncodedTensor};
pub use tensor::{NamedTensor, ParameterSet, Tensor};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Elementwise nonlinearities with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
    /// Exact form `x Φ(x)`.
    Gelu,
    Sigmoid,
    Exp,
    Relu,
}

/// `tanh` through a single `exp_m1`; cheaper than the libm routine and accurate to a few ulps.
fn fast_tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp_m1();
    (-e / (2.0 + e)).copysign(x)
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => fast_tanh(x),
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Gelu => x * std_normal_cdf(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Exp => x.exp(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative given both the input and the already computed output.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => sigmoid(x),
            Activation::Gelu => {
                std_normal_cdf(x) + x * (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Exp => y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Gelu => "gelu",
            Activation::Sigmoid => "sigmoid",
            Activation::Exp => "exp",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "tanh" => Activation::Tanh,
            "softplus" => Activation::Softplus,
            "gelu" => Activation::Gelu,
            "sigmoid" => Activation::Sigmoid,
            "exp" => Activation::Exp,
            "relu" => Activation::Relu,
            other => return Err(Error::Config(format!("unknown activation `{other}`"))),
        })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Activation {
        kind: Activation,
        input: Var,
    },
    /// Identity on column 0, `sin` on every other column.
    Periodic {
        input: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    MulConst {
        input: Var,
        factor: Vec<f64>,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    RepeatRows {
        input: Var,
        times: usize,
    },
    GatherRows {
        input: Var,
        index: Vec<usize>,
    },
    ConcatCols(Var, Var),
    Sum(Var),
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// Batch statistics produced by a training-mode batch normalization node.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn ensure_finite(values: &[f64], context: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::numeric(format!("{context} output element {i}"), values[i])),
    }
}

fn cols(shape: &[usize]) -> usize {
    shape.get(1).copied().unwrap_or(1)
}

/// `c = a · b + beta · c` for row-major operands with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access within the slices,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node {
            shape,
            values,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf that gradients flow into.
    pub fn parameter(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.values().to_vec(), Op::Leaf, true)
    }

    /// Records a leaf that is treated as data.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let (shape, values) = t.into_parts();
        self.push(shape, values, Op::Leaf, false)
    }

    /// Records a leaf honouring the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.values().to_vec(),
            Op::Leaf,
            t.requires_grad(),
        )
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.values.clone()).expect("recorded shapes are consistent")
    }

    /// Gradient of the last [`backward`](Self::backward) loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Row-wise `h · Wᵀ + b` for `h: [batch × d_in]`, `W: [d_out × d_in]`, `b: [d_out]`.
    pub fn affine(&mut self, weight: Var, bias: Option<Var>, input: Var) -> Result<Var> {
        let ws = self.shape(weight).to_vec();
        let hs = self.shape(input).to_vec();
        if ws.len() != 2 || hs.len() != 2 || ws[1] != hs[1] {
            return Err(Error::shape("affine", &ws, &hs));
        }
        let (d_out, d_in, batch) = (ws[0], ws[1], hs[0]);
        let mut out = vec![0.0; batch * d_out];
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.iter().product::<usize>() != d_out {
                return Err(Error::shape("affine bias", bs, &ws));
            }
            let bv = self.value(b);
            for row in out.chunks_exact_mut(d_out) {
                row.copy_from_slice(bv);
            }
        }
        gemm(
            batch,
            d_in,
            d_out,
            self.value(input),
            (d_in, 1),
            self.value(weight),
            (1, d_in),
            &mut out,
            if bias.is_some() { 1.0 } else { 0.0 },
        );
        ensure_finite(&out, "affine")?;
        let mut deps = vec![weight, input];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(
            vec![batch, d_out],
            out,
            Op::Affine {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    pub fn activation(&mut self, kind: Activation, input: Var) -> Result<Var> {
        let out: Vec<f64> = self.value(input).iter().map(|&x| kind.apply(x)).collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(
                format!("{} activation, input element {i}", kind.name()),
                self.value(input)[i],
            ));
        }
        let shape = self.shape(input).to_vec();
        let rg = self.rg(&[input]);
        Ok(self.push(shape, out, Op::Activation { kind, input }, rg))
    }

    /// Periodic time features: column 0 passes through, other columns go through `sin`.
    pub fn periodic(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let c = cols(&shape);
        let out: Vec<f64> = self
            .value(input)
            .iter()
            .enumerate()
            .map(|(i, &x)| if i % c == 0 { x } else { x.sin() })
            .collect();
        ensure_finite(&out, "periodic")?;
        let rg = self.rg(&[input]);
        Ok(self.push(shape, out, Op::Periodic { input }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        ensure_finite(&out, name)?;
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, op, rg))
    }

    /// Elementwise product with a constant array of the same length.
    pub fn mul_const(&mut self, input: Var, factor: Vec<f64>) -> Result<Var> {
        if factor.len() != self.value(input).len() {
            return Err(Error::shape("mul_const", self.shape(input), &[factor.len()]));
        }
        let out: Vec<f64> = self
            .value(input)
            .iter()
            .zip(&factor)
            .map(|(&x, &c)| x * c)
            .collect();
        ensure_finite(&out, "mul_const")?;
        let shape = self.shape(input).to_vec();
        let rg = self.rg(&[input]);
        Ok(self.push(shape, out, Op::MulConst { input, factor }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Result<Var> {
        let out: Vec<f64> = self.value(input).iter().map(|&x| x * factor).collect();
        ensure_finite(&out, "scale")?;
        let shape = self.shape(input).to_vec();
        let rg = self.rg(&[input]);
        Ok(self.push(shape, out, Op::Scale { input, factor }, rg))
    }

    /// Repeats every row `times` times consecutively: row `i` becomes rows `i·times .. (i+1)·times`.
    pub fn repeat_rows(&mut self, input: Var, times: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 2 || times == 0 {
            return Err(Error::shape("repeat_rows", &shape, &[times]));
        }
        let c = shape[1];
        let mut out = Vec::with_capacity(shape[0] * times * c);
        for row in self.value(input).chunks_exact(c.max(1)) {
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        let rg = self.rg(&[input]);
        Ok(self.push(
            vec![shape[0] * times, c],
            out,
            Op::RepeatRows { input, times },
            rg,
        ))
    }

    /// Row `i` of the output is row `index[i]` of `input`.
    pub fn gather_rows(&mut self, input: Var, index: Vec<usize>) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 2 || index.iter().any(|&i| i >= shape[0]) {
            return Err(Error::shape("gather_rows", &shape, &[index.len()]));
        }
        let c = shape[1];
        let src = self.value(input);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in &index {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[input]);
        Ok(self.push(vec![index.len(), c], out, Op::GatherRows { input, index }, rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::shape("concat_cols", &sa, &sb));
        }
        let (ca, cb) = (sa[1], sb[1]);
        let mut out = Vec::with_capacity(sa[0] * (ca + cb));
        for r in 0..sa[0] {
            out.extend_from_slice(&self.value(a)[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&self.value(b)[r * cb..(r + 1) * cb]);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![sa[0], ca + cb], out, Op::ConcatCols(a, b), rg))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let s: f64 = self.value(input).iter().sum();
        ensure_finite(&[s], "sum")?;
        let rg = self.rg(&[input]);
        Ok(self.push(vec![1], vec![s], Op::Sum(input), rg))
    }

    /// Batch normalization over rows using batch statistics.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::shape("batch_norm", &shape, self.shape(gamma)));
        }
        let (n, c) = (shape[0], shape[1]);
        let x = self.value(input);
        let mut mean = vec![0.0; c];
        for row in x.chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; c];
        for row in x.chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|&s| 1.0 / (s + eps).sqrt()).collect();
        let v = self.batch_norm_with(input, gamma, beta, mean.clone(), inv_std, true)?;
        Ok((v, BatchStats { mean, var }))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let inv_std = running_var.iter().map(|&s| 1.0 / (s + eps).sqrt()).collect();
        self.batch_norm_with(input, gamma, beta, running_mean.to_vec(), inv_std, false)
    }

    fn batch_norm_with(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
        training: bool,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let c = cols(&shape);
        if self.value(gamma).len() != c || self.value(beta).len() != c || mean.len() != c {
            return Err(Error::shape("batch_norm", &shape, self.shape(gamma)));
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut out = Vec::with_capacity(self.value(input).len());
        for row in self.value(input).chunks_exact(c) {
            for j in 0..c {
                out.push(g[j] * (row[j] - mean[j]) * inv_std[j] + b[j]);
            }
        }
        ensure_finite(&out, "batch_norm")?;
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            shape,
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                training,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.node(loss).values.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.node(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        // Adds `f(i)` to each element of the gradient of `v`, allocating on first use.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].values.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Affine {
                input,
                weight,
                bias,
            } => {
                let ws = &nodes[weight.0].shape;
                let (d_out, d_in) = (ws[0], ws[1]);
                let batch = node.shape[0];
                let h = &nodes[input.0].values;
                let w = &nodes[weight.0].values;
                acc(*input, &mut |dh| {
                    gemm(batch, d_out, d_in, g, (d_out, 1), w, (d_in, 1), dh, 1.0)
                });
                acc(*weight, &mut |dw| {
                    gemm(d_out, batch, d_in, g, (1, d_out), h, (d_in, 1), dw, 1.0)
                });
                if let Some(b) = bias {
                    acc(*b, &mut |db| {
                        for row in g.chunks_exact(d_out) {
                            for (d, &v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                    });
                }
            }
            Op::Activation { kind, input } => {
                let x = &nodes[input.0].values;
                let y = &node.values;
                acc(*input, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += g[i] * kind.derivative(x[i], y[i]);
                    }
                });
            }
            Op::Periodic { input } => {
                let x = &nodes[input.0].values;
                let c = cols(&node.shape);
                acc(*input, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += if i % c == 0 { g[i] } else { g[i] * x[i].cos() };
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| da.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
                acc(*b, &mut |db| db.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].values, &nodes[b.0].values);
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..db.len() {
                        db[i] += g[i] * va[i];
                    }
                });
            }
            Op::MulConst { input, factor } => acc(*input, &mut |dx| {
                for i in 0..dx.len() {
                    dx[i] += g[i] * factor[i];
                }
            }),
            Op::Scale { input, factor } => acc(*input, &mut |dx| {
                dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v * factor)
            }),
            Op::RepeatRows { input, times } => {
                let c = cols(&node.shape).max(1);
                acc(*input, &mut |dx| {
                    for (r, block) in g.chunks_exact(c * times).enumerate() {
                        let dst = &mut dx[r * c..(r + 1) * c];
                        for rep in block.chunks_exact(c) {
                            dst.iter_mut().zip(rep).for_each(|(d, &v)| *d += v);
                        }
                    }
                });
            }
            Op::GatherRows { input, index } => {
                let c = cols(&node.shape);
                acc(*input, &mut |dx| {
                    for (row, &i) in g.chunks_exact(c.max(1)).zip(index) {
                        dx[i * c..(i + 1) * c].iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let ca = cols(&nodes[a.0].shape);
                let cb = cols(&nodes[b.0].shape);
                acc(*a, &mut |da| {
                    for (r, row) in g.chunks_exact(ca + cb).enumerate() {
                        da[r * ca..(r + 1) * ca]
                            .iter_mut()
                            .zip(&row[..ca])
                            .for_each(|(d, &v)| *d += v);
                    }
                });
                acc(*b, &mut |db| {
                    for (r, row) in g.chunks_exact(ca + cb).enumerate() {
                        db[r * cb..(r + 1) * cb]
                            .iter_mut()
                            .zip(&row[ca..])
                            .for_each(|(d, &v)| *d += v);
                    }
                });
            }
            Op::Sum(input) => acc(*input, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                training,
            } => {
                let c = cols(&node.shape);
                let n = node.shape[0];
                let x = &nodes[input.0].values;
                let gam = &nodes[gamma.0].values;
                let xhat = |r: usize, j: usize| (x[r * c + j] - mean[j]) * inv_std[j];
                acc(*gamma, &mut |dg| {
                    for r in 0..n {
                        for j in 0..c {
                            dg[j] += g[r * c + j] * xhat(r, j);
                        }
                    }
                });
                acc(*beta, &mut |db| {
                    for r in 0..n {
                        for j in 0..c {
                            db[j] += g[r * c + j];
                        }
                    }
                });
                acc(*input, &mut |dx| {
                    if !*training {
                        for r in 0..n {
                            for j in 0..c {
                                dx[r * c + j] += g[r * c + j] * gam[j] * inv_std[j];
                            }
                        }
                        return;
                    }
                    let nf = n as f64;
                    for j in 0..c {
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for r in 0..n {
                            let d = g[r * c + j] * gam[j];
                            sum_d += d;
                            sum_dx += d * xhat(r, j);
                        }
                        for r in 0..n {
                            let d = g[r * c + j] * gam[j];
                            dx[r * c + j] +=
                                inv_std[j] / nf * (nf * d - sum_d - xhat(r, j) * sum_dx);
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    /// Central differences of a scalar function of one leaf.
    fn numeric_grad(
        base: &Tensor,
        h: f64,
        f: impl Fn(&mut Graph, Var) -> Result<Var>,
    ) -> Vec<f64> {
        (0..base.len())
            .map(|i| {
                let eval = |delta: f64| {
                    let mut p = base.clone();
                    p.values_mut()[i] += delta;
                    let mut g = Graph::new();
                    let v = g.parameter(&p);
                    let out = f(&mut g, v).unwrap();
                    g.value(out)[0]
                };
                (eval(h) - eval(-h)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn affine_examples() {
        let mut g = Graph::new();
        let w = g.parameter(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.parameter(&t(&[2], &[0.0, 0.0]));
        let h = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let y = g.affine(w, Some(b), h).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0]);

        let w = g.parameter(&t(&[1, 2], &[1.0, 1.0]));
        let b = g.parameter(&t(&[1], &[3.0]));
        let h = g.constant(t(&[1, 2], &[2.0, 5.0]));
        let y = g.affine(w, Some(b), h).unwrap();
        assert_eq!(g.value(y), &[10.0]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let w = g.parameter(&t(&[2, 3], &[0.0; 6]));
        let h = g.constant(t(&[1, 2], &[1.0, 2.0]));
        match g.affine(w, None, h).unwrap_err() {
            Error::Shape { left, right, .. } => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![1, 2]);
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn affine_weight_gradient_matches_finite_differences() {
        let w0 = t(&[3, 2], &[0.3, -0.7, 1.1, 0.2, -0.4, 0.9]);
        let hv = [0.5, -1.5, 2.0, 0.25];
        let f = |g: &mut Graph, w: Var| {
            let h = g.constant(t(&[2, 2], &hv));
            let y = g.affine(w, None, h)?;
            let y = g.activation(Activation::Tanh, y)?;
            g.sum(y)
        };
        let mut g = Graph::new();
        let w = g.parameter(&w0);
        let out = f(&mut g, w).unwrap();
        g.backward(out).unwrap();
        let analytic = g.grad(w).unwrap().to_vec();
        let numeric = numeric_grad(&w0, 1e-6, f);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-5 * a.abs().max(n.abs()).max(1e-8), "{a} vs {n}");
        }
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert!((Activation::Softplus.apply(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(Activation::Gelu.apply(0.0), 0.0);
        assert!((Activation::Sigmoid.apply(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);
        assert!(Activation::Softplus.apply(800.0).is_finite());
    }

    #[test]
    fn exp_backward_is_exp() {
        let mut g = Graph::new();
        let x = g.parameter(&t(&[2], &[0.0, 1.0]));
        let y = g.activation(Activation::Exp, x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        let gr = g.grad(x).unwrap();
        assert_eq!(gr[0], 1.0);
        assert!((gr[1] - std::f64::consts::E).abs() < 1e-12);
    }

    #[test]
    fn exp_overflow_is_numeric_error() {
        let mut g = Graph::new();
        let x = g.parameter(&t(&[1], &[1000.0]));
        assert!(matches!(
            g.activation(Activation::Exp, x),
            Err(Error::NumericDomain { .. })
        ));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.parameter(&t(&[3], &[1.0, -2.0, 5.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.parameter(&t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn double_use_accumulates() {
        // y = tanh(x) + exp(x)  =>  dy/dx = 1 - tanh² + exp
        let x0 = [0.3, -0.8];
        let mut g = Graph::new();
        let x = g.parameter(&t(&[2], &x0));
        let a = g.activation(Activation::Tanh, x).unwrap();
        let b = g.activation(Activation::Exp, x).unwrap();
        let y = g.add(a, b).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        let gr = g.grad(x).unwrap();
        for (i, &v) in x0.iter().enumerate() {
            let tanh_part = 1.0 - v.tanh() * v.tanh();
            assert_eq!(gr[i], tanh_part + v.exp());
        }
    }

    #[test]
    fn every_op_gradient_matches_finite_differences() {
        let x0 = t(&[2, 3], &[0.2, -0.5, 0.9, 1.3, -0.1, 0.4]);
        let f = |g: &mut Graph, x: Var| {
            let gam = g.constant(t(&[3], &[1.2, 0.7, -0.3]));
            let bet = g.constant(t(&[3], &[0.1, 0.0, 0.2]));
            let (bn, _) = g.batch_norm_train(x, gam, bet, 1e-5)?;
            let p = g.periodic(bn)?;
            let r = g.repeat_rows(p, 3)?;
            let shuffled = g.gather_rows(r, vec![5, 0, 0, 3, 2, 1])?;
            let c = g.concat_cols(r, shuffled)?;
            let a = g.activation(Activation::Gelu, c)?;
            let s = g.activation(Activation::Softplus, a)?;
            let m = g.mul(s, a)?;
            let k: Vec<f64> = (0..36).map(|i| 0.1 * i as f64 - 1.0).collect();
            let m = g.mul_const(m, k)?;
            let m = g.scale(m, 0.5)?;
            let q = g.activation(Activation::Sigmoid, m)?;
            g.sum(q)
        };
        let mut g = Graph::new();
        let x = g.parameter(&x0);
        let out = f(&mut g, x).unwrap();
        g.backward(out).unwrap();
        let analytic = g.grad(x).unwrap().to_vec();
        let numeric = numeric_grad(&x0, 1e-6, f);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-5 * a.abs().max(n.abs()) + 1e-8, "{a} vs {n}");
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, 2.0]));
        let w = g.parameter(&t(&[2], &[3.0, 4.0]));
        let y = g.mul(x, w).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad(w).unwrap(), &[1.0, 2.0]);
    }
}
