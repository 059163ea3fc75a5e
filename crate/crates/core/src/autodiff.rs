//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every op evaluates eagerly and appends a node recording its inputs and
//! whatever it needs for the backward sweep. Because inputs must already
//! exist when a node is appended, append order is a topological order and
//! [`Graph::backward`] simply walks the tape in reverse.
//!
//! Parameters are borrowed from the caller (normally a
//! [`ParamStore`](crate::params::ParamStore)) rather than copied, and their
//! gradients are collected per [`ParamId`] so they can be added into the
//! store's grad slots once the graph is dropped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, Conv2dGeom};
use crate::tensor::{shape_string, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Index of a parameter tensor in a [`ParamStore`](crate::params::ParamStore).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const ELU_ALPHA: f64 = 1.0;

/// Activation choices exposed to model configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    Elu,
    Selu,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Relu,
        Activation::Softmax,
        Activation::Elu,
        Activation::Selu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Softmax => "softmax",
            Activation::Elu => "elu",
            Activation::Selu => "selu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "softmax" => Ok(Activation::Softmax),
            "elu" => Ok(Activation::Elu),
            "selu" => Ok(Activation::Selu),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolKind {
    #[serde(rename = "max", alias = "MaxPooling")]
    Max,
    #[serde(rename = "average", alias = "AveragePooling")]
    Average,
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Elu,
    Selu,
    Sigmoid,
    Tanh,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Relu => x.max(0.0),
            Unary::Elu => {
                if x > 0.0 {
                    x
                } else {
                    ELU_ALPHA * x.exp_m1()
                }
            }
            Unary::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
            Unary::Sigmoid => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            Unary::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + ELU_ALPHA
                }
            }
            Unary::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    y + SELU_LAMBDA * SELU_ALPHA
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
        }
    }
}

enum Op {
    Leaf,
    Param,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddBias { x: Var, bias: Var, axis: usize },
    Scale { x: Var, factor: f64 },
    MulConst { x: Var, mask: Vec<f64> },
    Unary { x: Var, kind: Unary },
    Softmax { x: Var, axis: usize },
    Conv1d { signal: Var, kernel: Var, stride: usize },
    SpaceConv { x: Var, kernels: Var, bias: Var },
    Conv2d { x: Var, kernels: Var, bias: Var, geom: Conv2dGeom, cols: Vec<f64> },
    Pool { x: Var, window: usize, kind: PoolKind, argmax: Vec<usize> },
    Reshape { x: Var },
    MeanLast { x: Var },
    Column { x: Var, index: usize },
    SliceRows { x: Var, start: usize },
    StackColumns { parts: Vec<Var> },
    Concat { parts: Vec<Var> },
    Transpose { x: Var },
    Sum { x: Var },
    SoftmaxCrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
}

enum NodeValue {
    Owned(Tensor),
    Param(usize),
}

struct Node {
    value: NodeValue,
    op: Op,
    tracked: bool,
}

/// Recorded computation. Borrows the parameter values it reads.
pub struct Graph<'p> {
    params: &'p [Tensor],
    track_params: bool,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

impl<'p> Graph<'p> {
    /// Graph whose parameter leaves require gradients.
    pub fn new(params: &'p [Tensor]) -> Self {
        Self::with_tracking(params, true)
    }

    /// Graph for evaluation only: parameters are treated as constants and no
    /// backward bookkeeping is kept.
    pub fn inference(params: &'p [Tensor]) -> Self {
        Self::with_tracking(params, false)
    }

    fn with_tracking(params: &'p [Tensor], track_params: bool) -> Self {
        Graph {
            params,
            track_params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            leaf_grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            NodeValue::Owned(t) => t,
            NodeValue::Param(i) => &self.params[*i],
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node {
            value: NodeValue::Owned(value),
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Hash of every piecewise branch taken: the sign of each relu, elu and
    /// selu input and the winner of each max-pool window. Two evaluations
    /// with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        use std::hash::{DefaultHasher, Hasher};
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Unary { x, kind: Unary::Relu | Unary::Elu | Unary::Selu } => {
                    let mut word = 0u64;
                    for (i, &v) in self.data(*x).iter().enumerate() {
                        word = (word << 1) | u64::from(v > 0.0);
                        if i % 64 == 63 {
                            h.write_u64(word);
                        }
                    }
                    h.write_u64(word);
                }
                Op::Pool { argmax, .. } => argmax.iter().for_each(|&i| h.write_usize(i)),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: NodeValue::Param(id.0),
            op: Op::Param,
            tracked: self.track_params,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `[m×n]·[n×p]`, or `[m×n]·[n]` as a matrix–vector product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k) = match *sa {
            [m, k] => (m, k),
            _ => return Err(Error::shape("matmul", format!("left operand must be rank 2, got {}", shape_string(sa)))),
        };
        let (k2, p, out_shape) = match *sb {
            [k2, p] => (k2, p, vec![m, p]),
            [k2] => (k2, 1, vec![m]),
            _ => return Err(Error::shape("matmul", format!("right operand must be rank 1 or 2, got {}", shape_string(sb)))),
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner extents differ: {} · {}", shape_string(sa), shape_string(sb)),
            ));
        }
        let mut out = vec![0.0; m * p];
        kernels::gemm(m, k, p, self.data(a), false, self.data(b), false, &mut out, 0.0);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::MatMul { a, b }, tracked))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{} vs {}", shape_string(self.shape(a)), shape_string(self.shape(b))),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), data);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, Op::Add { a, b }, tracked))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let t = Tensor::from_parts(self.shape(a).to_vec(), data);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(t, Op::Mul { a, b }, tracked))
    }

    /// Adds `bias[j]` to every element whose index along `axis` is `j`.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || self.shape(bias) != [shape[axis]] {
            return Err(Error::shape(
                "add_bias",
                format!("bias {} does not match axis {axis} of {}", shape_string(self.shape(bias)), shape_string(&shape)),
            ));
        }
        let (outer, n, inner) = kernels::axis_split(&shape, axis);
        let b = self.data(bias);
        let mut out = self.data(x).to_vec();
        for o in 0..outer {
            for (j, &bj) in b.iter().enumerate() {
                for v in &mut out[(o * n + j) * inner..(o * n + j + 1) * inner] {
                    *v += bj;
                }
            }
        }
        let tracked = self.tracked(x) || self.tracked(bias);
        Ok(self.push(Tensor::from_parts(shape, out), Op::AddBias { x, bias, axis }, tracked))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let t = self.value(x).map(|v| v * factor);
        let tracked = self.tracked(x);
        self.push(t, Op::Scale { x, factor }, tracked)
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(Error::shape("mul_const", "mask length differs from input"));
        }
        let data = self.data(x).iter().zip(&mask).map(|(a, b)| a * b).collect();
        let t = Tensor::from_parts(self.shape(x).to_vec(), data);
        let tracked = self.tracked(x);
        Ok(self.push(t, Op::MulConst { x, mask }, tracked))
    }

    pub fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let t = self.value(x).map(|v| kind.apply(v));
        let tracked = self.tracked(x);
        self.push(t, Op::Unary { x, kind }, tracked)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("softmax", format!("axis {axis} out of range for {}", shape_string(&shape))));
        }
        let y = kernels::softmax_axis(self.data(x), &shape, axis);
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::from_parts(shape, y), Op::Softmax { x, axis }, tracked))
    }

    /// Applies a configured activation; `class_axis` is the axis softmax
    /// normalizes over.
    pub fn activation(&mut self, x: Var, kind: Activation, class_axis: usize) -> Result<Var> {
        Ok(match kind {
            Activation::Relu => self.unary(x, Unary::Relu),
            Activation::Elu => self.unary(x, Unary::Elu),
            Activation::Selu => self.unary(x, Unary::Selu),
            Activation::Softmax => self.softmax(x, class_axis)?,
        })
    }

    /// Valid 1D cross-correlation with the given stride.
    pub fn conv1d(&mut self, signal: Var, kernel: Var, stride: usize) -> Result<Var> {
        let (ss, sk) = (self.shape(signal), self.shape(kernel));
        let ([len], [k]) = (ss, sk) else {
            return Err(Error::shape("conv1d", "signal and kernel must be rank 1"));
        };
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be at least 1".into()));
        }
        if k > len {
            return Err(Error::KernelTooLong { kernel: *k, signal: *len });
        }
        let y = kernels::conv1d(self.data(signal), self.data(kernel), stride);
        let tracked = self.tracked(signal) || self.tracked(kernel);
        Ok(self.push(Tensor::vector(y), Op::Conv1d { signal, kernel, stride }, tracked))
    }

    /// Shared-kernel temporal convolution of every row of `x` (`S×T`) with
    /// each of `kernels` (`C×k`); output `S×C×(T−k+1)`.
    pub fn space_conv(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (&[rows, len], &[channels, k]) = (self.shape(x), self.shape(kernels)) else {
            return Err(Error::shape(
                "space_conv",
                format!("expected S×T input and C×k kernels, got {} and {}", shape_string(self.shape(x)), shape_string(self.shape(kernels))),
            ));
        };
        if self.shape(bias) != [channels] {
            return Err(Error::shape("space_conv", "bias length must equal kernel count"));
        }
        if k > len {
            return Err(Error::KernelTooLong { kernel: k, signal: len });
        }
        let y = kernels::space_conv(self.data(x), rows, len, self.data(kernels), channels, k, self.data(bias));
        let tracked = self.tracked(x) || self.tracked(kernels) || self.tracked(bias);
        let shape = vec![rows, channels, len - k + 1];
        Ok(self.push(Tensor::from_parts(shape, y), Op::SpaceConv { x, kernels, bias }, tracked))
    }

    /// Per-frame 2D valid convolution: `x` is `frames×cin×h×w`, `kernels` is
    /// `cout×cin×size×size`; output `frames×cout×h'×w'`.
    pub fn conv2d_frames(&mut self, x: Var, kernels: Var, bias: Var, stride: usize) -> Result<Var> {
        let (&[frames, cin, h, w], &[cout, kcin, kh, kw]) = (self.shape(x), self.shape(kernels)) else {
            return Err(Error::shape("conv2d", "expected rank-4 input and kernels"));
        };
        if kcin != cin || kh != kw || self.shape(bias) != [cout] {
            return Err(Error::shape(
                "conv2d",
                format!("kernels {} incompatible with input {}", shape_string(self.shape(kernels)), shape_string(self.shape(x))),
            ));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be at least 1".into()));
        }
        if kh > h || kw > w {
            return Err(Error::KernelTooLong { kernel: kh, signal: h.min(w) });
        }
        let geom = Conv2dGeom { frames, cin, h, w, size: kh, stride };
        let cols = kernels::im2col(self.data(x), &geom);
        let ncols = geom.cols();
        let mut y = vec![0.0; cout * ncols];
        kernels::gemm(cout, geom.patch(), ncols, self.data(kernels), false, &cols, false, &mut y, 0.0);
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let plane = oh * ow;
        let b = self.data(bias);
        // [cout × frames·plane] → [frames × cout × plane]
        let mut out = vec![0.0; y.len()];
        for co in 0..cout {
            for t in 0..frames {
                let src = &y[co * ncols + t * plane..co * ncols + (t + 1) * plane];
                let dst = &mut out[(t * cout + co) * plane..(t * cout + co + 1) * plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + b[co];
                }
            }
        }
        let tracked = self.tracked(x) || self.tracked(kernels) || self.tracked(bias);
        let cols = if tracked { cols } else { Vec::new() };
        Ok(self.push(
            Tensor::from_parts(vec![frames, cout, oh, ow], out),
            Op::Conv2d { x, kernels, bias, geom, cols },
            tracked,
        ))
    }

    /// Non-overlapping pooling along the last axis; a trailing partial
    /// window is dropped.
    pub fn pool(&mut self, x: Var, window: usize, kind: PoolKind) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some(&time) = shape.last() else {
            return Err(Error::shape("pool", "scalar input"));
        };
        if window == 0 {
            return Err(Error::Config("pool window must be at least 1".into()));
        }
        if time < window {
            return Err(Error::EmptyOutput { window, time });
        }
        let out_t = time / window;
        let outer = shape.iter().rev().skip(1).product::<usize>();
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * out_t);
        let mut argmax = Vec::new();
        for o in 0..outer {
            for t in 0..out_t {
                let start = o * time + t * window;
                let win = &xd[start..start + window];
                match kind {
                    PoolKind::Max => {
                        let (best, v) = win
                            .iter()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
                        out.push(v);
                        argmax.push(start + best);
                    }
                    PoolKind::Average => out.push(win.iter().sum::<f64>() / window as f64),
                }
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = out_t;
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::from_parts(out_shape, out), Op::Pool { x, window, kind, argmax }, tracked))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let tracked = self.tracked(x);
        Ok(self.push(t, Op::Reshape { x }, tracked))
    }

    /// Merges the first two axes of a rank-3 tensor: `a×b×T → (a·b)×T`.
    pub fn flatten_space(&mut self, x: Var) -> Result<Var> {
        let [a, b, t] = *self.shape(x) else {
            return Err(Error::shape(
                "flatten_space",
                format!("rank-3 input required, got {}", shape_string(self.shape(x))),
            ));
        };
        self.reshape(x, &[a * b, t])
    }

    /// Mean over the last axis.
    pub fn mean_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((&time, rest)) = shape.split_last() else {
            return Err(Error::shape("mean_last", "scalar input"));
        };
        let out: Vec<f64> = self.data(x).chunks(time).map(|c| c.iter().sum::<f64>() / time as f64).collect();
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::from_parts(rest.to_vec(), out), Op::MeanLast { x }, tracked))
    }

    /// Column `index` of a rank-2 tensor as a vector.
    pub fn column(&mut self, x: Var, index: usize) -> Result<Var> {
        let [_, cols] = *self.shape(x) else {
            return Err(Error::shape("column", "rank-2 input required"));
        };
        if index >= cols {
            return Err(Error::shape("column", format!("column {index} out of {cols}")));
        }
        let t = Tensor::vector(self.value(x).column(index));
        let tracked = self.tracked(x);
        Ok(self.push(t, Op::Column { x, index }, tracked))
    }

    /// Rows `start..start+len` along the first axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || len == 0 || start + len > shape[0] {
            return Err(Error::shape("slice_rows", format!("rows {start}..{} of {}", start + len, shape_string(&shape))));
        }
        let inner: usize = shape[1..].iter().product();
        let data = self.data(x)[start * inner..(start + len) * inner].to_vec();
        let mut out_shape = shape;
        out_shape[0] = len;
        let tracked = self.tracked(x);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::SliceRows { x, start }, tracked))
    }

    /// Stacks equal-length vectors as the columns of a matrix.
    pub fn stack_columns(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("stack_columns", "no columns"));
        };
        let rows = match *self.shape(first) {
            [r] => r,
            _ => return Err(Error::shape("stack_columns", "columns must be vectors")),
        };
        let n = parts.len();
        let mut out = vec![0.0; rows * n];
        for (j, &p) in parts.iter().enumerate() {
            if self.shape(p) != [rows] {
                return Err(Error::shape("stack_columns", "columns differ in length"));
            }
            for (i, &v) in self.data(p).iter().enumerate() {
                out[i * n + j] = v;
            }
        }
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(Tensor::from_parts(vec![rows, n], out), Op::StackColumns { parts: parts.to_vec() }, tracked))
    }

    /// Concatenation along the first axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "nothing to concatenate"));
        };
        let tail = self.shape(first).get(1..).unwrap_or_default().to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::shape("concat", "trailing extents differ"));
            }
            rows += s[0];
            data.extend_from_slice(self.data(p));
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat { parts: parts.to_vec() }, tracked))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose()?;
        let tracked = self.tracked(x);
        Ok(self.push(t, Op::Transpose { x }, tracked))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().sum();
        let tracked = self.tracked(x);
        self.push(Tensor::scalar(total), Op::Sum { x }, tracked)
    }

    /// `−log softmax(logits)[label]`, computed in log space.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let [n] = *self.shape(logits) else {
            return Err(Error::shape("cross_entropy", "logits must be a vector"));
        };
        if label >= n {
            return Err(Error::Data(format!("label {label} out of range for {n} classes")));
        }
        let z = self.data(logits);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[label];
        let probs = z.iter().map(|v| (v - lse).exp()).collect();
        let tracked = self.tracked(logits);
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, label, probs }, tracked))
    }

    /// Reverse sweep from a scalar `loss`. Gradients are added to whatever
    /// the leaf and parameter slots already hold.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            self.backward_node(i, g, &mut grads);
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let tracked = |v: Var| self.nodes[v.0].tracked;
        match &node.op {
            Op::Leaf | Op::Param => {
                accumulate(&mut self.leaf_grads[i], g);
            }
            Op::MatMul { a, b } => {
                let (a, b) = (*a, *b);
                let [m, k] = *self.shape(a) else { unreachable!() };
                let p = self.value(b).numel() / k;
                if tracked(a) {
                    let (ga, beta) = gemm_target(&mut grads[a.0], m * k);
                    kernels::gemm(m, p, k, &g, false, self.data(b), true, ga, beta);
                }
                if tracked(b) {
                    let (gb, beta) = gemm_target(&mut grads[b.0], k * p);
                    kernels::gemm(k, m, p, self.data(a), true, &g, false, gb, beta);
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if tracked(b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
                if tracked(a) {
                    accumulate(&mut grads[a.0], g);
                }
            }
            Op::Mul { a, b } => {
                let (a, b) = (*a, *b);
                if tracked(a) {
                    let ga = g.iter().zip(self.data(b)).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads[a.0], ga);
                }
                if tracked(b) {
                    let gb = g.iter().zip(self.data(a)).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::AddBias { x, bias, axis } => {
                let (x, bias) = (*x, *bias);
                if tracked(bias) {
                    let (outer, n, inner) = kernels::axis_split(self.shape(x), *axis);
                    let mut gb = vec![0.0; n];
                    for o in 0..outer {
                        for (j, gbj) in gb.iter_mut().enumerate() {
                            *gbj += g[(o * n + j) * inner..(o * n + j + 1) * inner].iter().sum::<f64>();
                        }
                    }
                    accumulate(&mut grads[bias.0], gb);
                }
                if tracked(x) {
                    accumulate(&mut grads[x.0], g);
                }
            }
            Op::Scale { x, factor } => {
                let gx = g.iter().map(|v| v * factor).collect();
                accumulate(&mut grads[x.0], gx);
            }
            Op::MulConst { x, mask } => {
                let gx = g.iter().zip(mask).map(|(a, b)| a * b).collect();
                accumulate(&mut grads[x.0], gx);
            }
            Op::Unary { x, kind } => {
                let (xs, ys) = (self.data(*x), self.data(Var(i)));
                let gx = g
                    .iter()
                    .zip(xs.iter().zip(ys))
                    .map(|(g, (&xv, &yv))| g * kind.derivative(xv, yv))
                    .collect();
                accumulate(&mut grads[x.0], gx);
            }
            Op::Softmax { x, axis } => {
                let y = self.value(Var(i));
                let gx = kernels::softmax_axis_backward(y.data(), &g, y.shape(), *axis);
                accumulate(&mut grads[x.0], gx);
            }
            Op::Conv1d { signal, kernel, stride } => {
                let (signal, kernel, stride) = (*signal, *kernel, *stride);
                let (xs, ws) = (self.data(signal), self.data(kernel));
                let k = ws.len();
                if tracked(kernel) {
                    let gw = (0..k)
                        .map(|j| g.iter().enumerate().map(|(t, gv)| gv * xs[t * stride + j]).sum())
                        .collect();
                    accumulate(&mut grads[kernel.0], gw);
                }
                if tracked(signal) {
                    let mut gx = vec![0.0; xs.len()];
                    for (t, gv) in g.iter().enumerate() {
                        for (j, w) in ws.iter().enumerate() {
                            gx[t * stride + j] += gv * w;
                        }
                    }
                    accumulate(&mut grads[signal.0], gx);
                }
            }
            Op::SpaceConv { x, kernels: w, bias } => {
                let (x, w, bias) = (*x, *w, *bias);
                let [rows, len] = *self.shape(x) else { unreachable!() };
                let [channels, k] = *self.shape(w) else { unreachable!() };
                let out = kernels::space_conv_backward(&g, self.data(x), rows, len, self.data(w), channels, k, tracked(x));
                if tracked(w) {
                    accumulate(&mut grads[w.0], out.w);
                }
                if tracked(bias) {
                    accumulate(&mut grads[bias.0], out.bias);
                }
                if let Some(gx) = out.x {
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::Conv2d { x, kernels: w, bias, geom, cols } => {
                let (x, w, bias, geom) = (*x, *w, *bias, *geom);
                let cout = self.shape(w)[0];
                let ncols = geom.cols();
                let plane = geom.out_h() * geom.out_w();
                // [frames × cout × plane] → [cout × frames·plane]
                let mut gy = vec![0.0; g.len()];
                for t in 0..geom.frames {
                    for co in 0..cout {
                        let src = &g[(t * cout + co) * plane..(t * cout + co + 1) * plane];
                        gy[co * ncols + t * plane..co * ncols + (t + 1) * plane].copy_from_slice(src);
                    }
                }
                if tracked(bias) {
                    let gb = gy.chunks(ncols).map(|c| c.iter().sum()).collect();
                    accumulate(&mut grads[bias.0], gb);
                }
                if tracked(w) {
                    let mut gw = vec![0.0; cout * geom.patch()];
                    kernels::gemm(cout, ncols, geom.patch(), &gy, false, cols, true, &mut gw, 0.0);
                    accumulate(&mut grads[w.0], gw);
                }
                if tracked(x) {
                    let mut gcols = vec![0.0; geom.patch() * ncols];
                    kernels::gemm(geom.patch(), cout, ncols, self.data(w), true, &gy, false, &mut gcols, 0.0);
                    accumulate(&mut grads[x.0], kernels::col2im(&gcols, &geom));
                }
            }
            Op::Pool { x, window, kind, argmax } => {
                let n = self.value(*x).numel();
                let mut gx = vec![0.0; n];
                match kind {
                    PoolKind::Max => {
                        for (gv, &at) in g.iter().zip(argmax) {
                            gx[at] += gv;
                        }
                    }
                    PoolKind::Average => {
                        let time = *self.shape(*x).last().unwrap();
                        let out_t = time / window;
                        let share = 1.0 / *window as f64;
                        for (idx, gv) in g.iter().enumerate() {
                            let (o, t) = (idx / out_t, idx % out_t);
                            let start = o * time + t * window;
                            for v in &mut gx[start..start + window] {
                                *v += gv * share;
                            }
                        }
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::Reshape { x } => {
                accumulate(&mut grads[x.0], g);
            }
            Op::MeanLast { x } => {
                let time = *self.shape(*x).last().unwrap();
                let share = 1.0 / time as f64;
                let gx = g.iter().flat_map(|gv| std::iter::repeat_n(gv * share, time)).collect();
                accumulate(&mut grads[x.0], gx);
            }
            Op::Column { x, index } => {
                let [rows, cols] = *self.shape(*x) else { unreachable!() };
                let gx = grads[x.0].get_or_insert_with(|| vec![0.0; rows * cols]);
                for (r, gv) in g.iter().enumerate() {
                    gx[r * cols + index] += gv;
                }
            }
            Op::SliceRows { x, start } => {
                let shape = self.shape(*x);
                let inner: usize = shape[1..].iter().product();
                let n = self.value(*x).numel();
                let gx = grads[x.0].get_or_insert_with(|| vec![0.0; n]);
                for (a, b) in gx[start * inner..start * inner + g.len()].iter_mut().zip(&g) {
                    *a += b;
                }
            }
            Op::StackColumns { parts } => {
                let n = parts.len();
                for (j, &p) in parts.iter().enumerate() {
                    if tracked(p) {
                        let gp = g.iter().skip(j).step_by(n).copied().collect();
                        accumulate(&mut grads[p.0], gp);
                    }
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if tracked(p) {
                        accumulate(&mut grads[p.0], g[offset..offset + len].to_vec());
                    }
                    offset += len;
                }
            }
            Op::Transpose { x } => {
                let [r, c] = *self.shape(*x) else { unreachable!() };
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[j * r + i];
                    }
                }
                accumulate(&mut grads[x.0], gx);
            }
            Op::Sum { x } => {
                let n = self.value(*x).numel();
                accumulate(&mut grads[x.0], vec![g[0]; n]);
            }
            Op::SoftmaxCrossEntropy { logits, label, probs } => {
                let mut gz: Vec<f64> = probs.iter().map(|p| p * g[0]).collect();
                gz[*label] -= g[0];
                accumulate(&mut grads[logits.0], gz);
            }
        }
    }

    /// Accumulated gradient of a leaf or parameter node.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grad(&self, id: ParamId) -> Option<&[f64]> {
        self.param_vars.get(id.0).copied().flatten().and_then(|v| self.grad(v))
    }

    /// Adds `scale ·` each parameter gradient into `grads` (indexed like the
    /// parameter slice this graph borrows).
    pub fn accumulate_param_grads(&self, grads: &mut [Tensor], scale: f64) {
        for (i, var) in self.param_vars.iter().enumerate() {
            let Some(g) = var.and_then(|v| self.grad(v)) else { continue };
            for (dst, src) in grads[i].data_mut().iter_mut().zip(g) {
                *dst += scale * src;
            }
        }
    }
}

/// Output buffer and `beta` for a GEMM that adds into `slot`.
fn gemm_target(slot: &mut Option<Vec<f64>>, len: usize) -> (&mut [f64], f64) {
    let beta = if slot.is_some() { 1.0 } else { 0.0 };
    (slot.get_or_insert_with(|| vec![0.0; len]), beta)
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let mut g = Graph::new(&[]);
        let eye = g.constant(m(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(m(2, 2, &[5.0, 6.0, 7.0, 8.0]));
        let y = g.matmul(eye, b).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 6.0, 7.0, 8.0]);

        let z = g.constant(Tensor::zeros(&[2, 2]));
        let y = g.matmul(z, b).unwrap();
        assert_eq!(g.value(y).data(), &[0.0; 4]);

        let a = g.constant(m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let y = g.matmul(a, b).unwrap();
        assert_eq!(g.value(y).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_extent() {
        let mut g = Graph::new(&[]);
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 2]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("2×3 · 2×2"), "{err}");
    }

    #[test]
    fn matmul_gradient_rule() {
        let mut g = Graph::new(&[]);
        let a = g.leaf(m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let b = g.leaf(m(3, 2, &[0.5, -1.0, 2.0, 0.0, 1.0, 3.0]), true);
        let y = g.matmul(a, b).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        // dA = 1·Bᵀ → each row is the row sums of B
        assert_eq!(g.grad(a).unwrap(), &[-0.5, 2.0, 4.0, -0.5, 2.0, 4.0]);
        // dB = Aᵀ·1 → each column holds the column sums of A
        assert_eq!(g.grad(b).unwrap(), &[5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
    }

    #[test]
    fn conv1d_examples() {
        let mut g = Graph::new(&[]);
        let s = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        let k1 = g.constant(Tensor::vector(vec![1.0]));
        let y = g.conv1d(s, k1, 1).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
        let k2 = g.constant(Tensor::vector(vec![1.0, 1.0]));
        let y = g.conv1d(s, k2, 1).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0, 7.0]);

        let long = g.constant(Tensor::zeros(&[200]));
        let k3 = g.constant(Tensor::vector(vec![1.0; 3]));
        let y = g.conv1d(long, k3, 1).unwrap();
        assert_eq!(g.shape(y), &[198]);

        let k5 = g.constant(Tensor::vector(vec![1.0; 5]));
        assert!(matches!(g.conv1d(s, k5, 1), Err(Error::KernelTooLong { kernel: 5, signal: 4 })));
    }

    #[test]
    fn conv1d_length_formula_exhaustive() {
        let mut g = Graph::new(&[]);
        for len in 1..=64 {
            let s = g.constant(Tensor::zeros(&[len]));
            for k in 1..=len {
                let kern = g.constant(Tensor::zeros(&[k]));
                for stride in [1, 2] {
                    let y = g.conv1d(s, kern, stride).unwrap();
                    assert_eq!(g.shape(y), &[(len - k) / stride + 1]);
                }
            }
        }
    }

    #[test]
    fn activation_examples() {
        let mut g = Graph::new(&[]);
        let x = g.constant(Tensor::vector(vec![-2.0, 3.0]));
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 3.0]);

        let z = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let p = g.activation(z, Activation::Softmax, 0).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5]);

        let x = g.constant(Tensor::vector(vec![-1.0, 1.0]));
        let e = g.activation(x, Activation::Elu, 0).unwrap();
        assert_abs_diff_eq!(g.value(e).data()[0], -0.632_120_558_828_557_7, epsilon = 1e-15);
        let s = g.activation(x, Activation::Selu, 0).unwrap();
        assert_abs_diff_eq!(g.value(s).data()[1], 1.050_700_987_355_480_5, epsilon = 1e-15);
    }

    #[test]
    fn unknown_activation_is_config_error() {
        assert!(matches!("swish".parse::<Activation>(), Err(Error::Config(_))));
        assert_eq!("SELU".parse::<Activation>().unwrap(), Activation::Selu);
    }

    #[test]
    fn pool_examples() {
        let mut g = Graph::new(&[]);
        let x = g.constant(Tensor::vector(vec![1.0, 3.0, 2.0, 5.0]));
        let mx = g.pool(x, 2, PoolKind::Max).unwrap();
        assert_eq!(g.value(mx).data(), &[3.0, 5.0]);
        let av = g.pool(x, 2, PoolKind::Average).unwrap();
        assert_eq!(g.value(av).data(), &[2.0, 3.5]);
        for kind in [PoolKind::Max, PoolKind::Average] {
            let id = g.pool(x, 1, kind).unwrap();
            assert_eq!(g.value(id).data(), g.value(x).data());
        }
        // trailing remainder dropped
        let odd = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0, 9.0]));
        let p = g.pool(odd, 2, PoolKind::Max).unwrap();
        assert_eq!(g.value(p).data(), &[2.0, 4.0]);
        assert!(matches!(g.pool(x, 5, PoolKind::Max), Err(Error::EmptyOutput { .. })));
    }

    #[test]
    fn flatten_space_examples() {
        let mut g = Graph::new(&[]);
        let x = g.constant(Tensor::zeros(&[16, 16, 99]));
        let y = g.flatten_space(x).unwrap();
        assert_eq!(g.shape(y), &[256, 99]);

        let x = g.constant(Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = g.flatten_space(x).unwrap();
        assert_eq!(g.shape(y), &[1, 4]);

        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = g.constant(Tensor::new(vec![2, 3, 4], data.clone()).unwrap());
        let flat = g.flatten_space(x).unwrap();
        let back = g.reshape(flat, &[2, 3, 4]).unwrap();
        assert_eq!(g.value(back).data(), &data[..]);

        let bad = g.constant(Tensor::zeros(&[4, 4]));
        assert!(g.flatten_space(bad).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut g = Graph::new(&[]);
        let w = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let s = g.sum(w);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[1.0, 1.0]);

        let mut g = Graph::new(&[]);
        let w = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[2.0, 4.0]);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[4.0, 8.0]);

        let v = g.leaf(Tensor::vector(vec![1.0, 2.0]), true);
        assert!(matches!(g.backward(v), Err(Error::NotScalar(_))));
    }

    #[test]
    fn untracked_inputs_get_no_gradient() {
        let mut g = Graph::new(&[]);
        let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let w = g.leaf(Tensor::vector(vec![3.0, 4.0]), true);
        let y = g.mul(x, w).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad(w).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_probs_minus_onehot() {
        let mut g = Graph::new(&[]);
        let z = g.leaf(Tensor::zeros(&[6]), true);
        let loss = g.softmax_cross_entropy(z, 0).unwrap();
        assert_abs_diff_eq!(g.value(loss).item().unwrap(), 6f64.ln(), epsilon = 1e-15);
        g.backward(loss).unwrap();
        let grad = g.grad(z).unwrap();
        assert_abs_diff_eq!(grad[0], 1.0 / 6.0 - 1.0, epsilon = 1e-15);
        for v in &grad[1..] {
            assert_abs_diff_eq!(*v, 1.0 / 6.0, epsilon = 1e-15);
        }
        assert!(matches!(g.softmax_cross_entropy(z, 6), Err(Error::Data(_))));
    }
}
