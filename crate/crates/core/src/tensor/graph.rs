use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom, OutOfBounds};
use super::{numel, Shape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Graph`]. Handles from a cleared graph,
/// or from a different graph, are rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    generation: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryOp {
    Exp,
    Log,
    Neg,
    Abs,
    Square,
    Relu,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
    Scale(f64),
    Offset(f64),
    Clamp(f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Mean,
    Mse,
    L1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    NearestUp2,
    AvgPoolDown2,
}

/// Treatment of non-positive arguments to `log`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LogMode {
    /// Reject non-positive inputs.
    Strict,
    /// Clamp inputs at [`LOG_FLOOR`]; gradient is zero below the floor.
    #[default]
    Clamped,
}

pub const LOG_FLOOR: f64 = 1e-12;

enum Record<T> {
    Leaf,
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Resample(Resample, Var),
    GridSample {
        input: Var,
        grid: Tensor<T>,
        oob: OutOfBounds,
    },
    Gather {
        input: Var,
        index: Arc<[usize]>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        start: usize,
    },
    Reduce(Reduction, Var, Option<Var>),
}

struct Node<T> {
    value: Tensor<T>,
    record: Record<T>,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every leaf that requires grad.
/// Leaves the loss does not reach get an all-zero gradient.
pub struct Gradients<T> {
    grads: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn remove(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.remove(&v)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Tape of recorded operations. Rebuilt for every forward pass; `backward`
/// consumes the records and invalidates outstanding handles.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    generation: u64,
    log_mode: LogMode,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Calls `f(a_offset, b_offset, b_row_is_scalar)` for each W-row of `a`,
/// where `b` broadcasts over every axis on which it has extent 1.
fn for_each_row(a: Shape, b: Shape, mut f: impl FnMut(usize, usize, bool)) {
    let pick = |bd: usize, i: usize| if bd == 1 { 0 } else { i };
    for n in 0..a[0] {
        for c in 0..a[1] {
            for h in 0..a[2] {
                let ao = ((n * a[1] + c) * a[2] + h) * a[3];
                let bo = ((pick(b[0], n) * b[1] + pick(b[1], c)) * b[2] + pick(b[2], h)) * b[3];
                f(ao, bo, b[3] == 1);
            }
        }
    }
}

/// Generations are unique across all graphs of the process.
fn next_generation() -> u64 {
    static NEXT: AtomicU64 = AtomicU64::new(0);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

fn broadcastable(a: Shape, b: Shape) -> bool {
    a.iter().zip(&b).all(|(&x, &y)| y == x || y == 1)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            generation: next_generation(),
            log_mode: LogMode::default(),
        }
    }

    pub fn with_log_mode(log_mode: LogMode) -> Self {
        Graph {
            log_mode,
            ..Self::new()
        }
    }

    pub fn log_mode(&self) -> LogMode {
        self.log_mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> &Node<T> {
        assert_eq!(v.generation, self.generation, "stale graph handle");
        &self.nodes[v.id]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn push(&mut self, value: Tensor<T>, record: Record<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            record,
            requires_grad,
        });
        Var {
            id: self.nodes.len() - 1,
            generation: self.generation,
        }
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Record::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Constant copy of `v`'s current value; gradient stops here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let x = self.value(a);
        let out = match op {
            UnaryOp::Exp => x.map(|v| v.exp()),
            UnaryOp::Log => match self.log_mode {
                LogMode::Strict => {
                    if let Some(bad) = x.data().iter().find(|v| **v <= T::zero() || v.is_nan()) {
                        return Err(Error::NonPositiveLog {
                            op: "log",
                            value: bad.to_f64_lossy(),
                        });
                    }
                    x.map(|v| v.ln())
                }
                LogMode::Clamped => {
                    let floor = T::of(LOG_FLOOR);
                    x.map(|v| v.max(floor).ln())
                }
            },
            UnaryOp::Neg => x.map(|v| -v),
            UnaryOp::Abs => x.map(|v| v.abs()),
            UnaryOp::Square => x.map(|v| v * v),
            UnaryOp::Relu => x.map(|v| v.max(T::zero())),
            UnaryOp::LeakyRelu(s) => {
                let s = T::of(s);
                x.map(|v| if v > T::zero() { v } else { s * v })
            }
            UnaryOp::Sigmoid => x.map(|v| T::one() / (T::one() + (-v).exp())),
            UnaryOp::Tanh => x.map(|v| v.tanh()),
            UnaryOp::Scale(s) => {
                let s = T::of(s);
                x.map(|v| v * s)
            }
            UnaryOp::Offset(s) => {
                let s = T::of(s);
                x.map(|v| v + s)
            }
            UnaryOp::Clamp(lo, hi) => {
                let (lo, hi) = (T::of(lo), T::of(hi));
                x.map(|v| v.max(lo).min(hi))
            }
        };
        let rg = self.requires_grad(a);
        Ok(self.push(out, Record::Unary(op, a), rg))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a).expect("exp is infallible")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Neg, a).expect("neg is infallible")
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Abs, a).expect("abs is infallible")
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Square, a).expect("square is infallible")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a).expect("relu is infallible")
    }

    /// Leaky ReLU with negative slope 0.2.
    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::LeakyRelu(0.2), a).expect("leaky relu is infallible")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a).expect("sigmoid is infallible")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Tanh, a).expect("tanh is infallible")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(UnaryOp::Scale(s), a).expect("scale is infallible")
    }

    pub fn offset(&mut self, a: Var, s: f64) -> Var {
        self.unary(UnaryOp::Offset(s), a).expect("offset is infallible")
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(UnaryOp::Clamp(lo, hi), a).expect("clamp is infallible")
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let n = self.neg(a);
        self.offset(n, 1.0)
    }

    /// Elementwise binary op. `b` must match `a` or broadcast along axes where
    /// it has extent 1; the output has `a`'s shape.
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcastable(sa, sb) {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                left: sa,
                right: sb,
            });
        }
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); xa.len()];
        let f = |x: T, y: T| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
        };
        let w = sa[3];
        for_each_row(sa, sb, |ao, bo, scalar_row| {
            let dst = &mut out[ao..ao + w];
            let src = &xa[ao..ao + w];
            if scalar_row {
                let y = xb[bo];
                for (d, &x) in dst.iter_mut().zip(src) {
                    *d = f(x, y);
                }
            } else {
                for ((d, &x), &y) in dst.iter_mut().zip(src).zip(&xb[bo..bo + w]) {
                    *d = f(x, y);
                }
            }
        });
        let rg = self.requires_grad(a) || self.requires_grad(b);
        let value = Tensor::from_vec(sa, out)?;
        Ok(self.push(value, Record::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Div, a, b)
    }

    /// 2-D convolution with an O×C×kH×kW kernel and optional per-channel bias
    /// (bias tensor shape 1×O×1×1).
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let si = self.shape(input);
        let sw = self.shape(weight);
        if sw[1] != si[1] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: si,
                right: sw,
            });
        }
        if stride == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                reason: "stride must be positive".into(),
            });
        }
        if si[2] + 2 * pad < sw[2] || si[3] + 2 * pad < sw[3] {
            return Err(Error::InvalidShape {
                op: "conv2d",
                reason: format!("kernel {:?} larger than padded input {:?}", sw, si),
            });
        }
        if let Some(b) = bias {
            let sb = self.shape(b);
            if sb != [1, sw[0], 1, 1] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    left: [1, sw[0], 1, 1],
                    right: sb,
                });
            }
        }
        let geom = ConvGeom {
            c: si[1],
            h: si[2],
            w: si[3],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
            oh: (si[2] + 2 * pad - sw[2]) / stride + 1,
            ow: (si[3] + 2 * pad - sw[3]) / stride + 1,
        };
        let out_shape = [si[0], sw[0], geom.oh, geom.ow];
        let mut out = vec![T::zero(); numel(&out_shape)];
        kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            si[0],
            sw[0],
            &geom,
            &mut out,
        );
        let rg = self.requires_grad(input)
            || self.requires_grad(weight)
            || bias.map(|b| self.requires_grad(b)).unwrap_or(false);
        let value = Tensor::from_vec(out_shape, out)?;
        Ok(self.push(
            value,
            Record::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
            rg,
        ))
    }

    pub fn resample(&mut self, a: Var, mode: Resample) -> Result<Var> {
        let [n, c, h, w] = self.shape(a);
        let x = self.value(a).data();
        let (data, shape) = match mode {
            Resample::NearestUp2 => (kernels::upsample2(x, n * c, h, w), [n, c, h * 2, w * 2]),
            Resample::AvgPoolDown2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::InvalidShape {
                        op: "avgpool-down2",
                        reason: format!("odd spatial size {}x{}", h, w),
                    });
                }
                (kernels::avgpool2(x, n * c, h, w), [n, c, h / 2, w / 2])
            }
        };
        let rg = self.requires_grad(a);
        let value = Tensor::from_vec(shape, data)?;
        Ok(self.push(value, Record::Resample(mode, a), rg))
    }

    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        self.resample(a, Resample::NearestUp2)
    }

    pub fn downsample2(&mut self, a: Var) -> Result<Var> {
        self.resample(a, Resample::AvgPoolDown2)
    }

    /// Bilinear resampling at per-pixel source coordinates. Differentiable
    /// with respect to `input` only.
    pub fn grid_sample(&mut self, input: Var, grid: Tensor<T>, oob: OutOfBounds) -> Result<Var> {
        let [n, c, h, w] = self.shape(input);
        let [gn, gc, oh, ow] = grid.shape();
        if gc != 2 || (gn != n && gn != 1) {
            return Err(Error::ShapeMismatch {
                op: "grid_sample",
                left: [n, c, h, w],
                right: grid.shape(),
            });
        }
        if !grid.all_finite() {
            return Err(Error::NonFinite("grid_sample grid"));
        }
        let out = kernels::grid_sample_forward(self.value(input).data(), grid.data(), n, c, h, w, gn, oh, ow, oob);
        let rg = self.requires_grad(input);
        let value = Tensor::from_vec([n, c, oh, ow], out)?;
        Ok(self.push(value, Record::GridSample { input, grid, oob }, rg))
    }

    /// Per-plane gather: output plane position `i` reads input plane position
    /// `index[i]`. The output plane is `out_h × out_w`.
    pub fn gather(&mut self, input: Var, index: Arc<[usize]>, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.shape(input);
        if index.len() != out_h * out_w || index.iter().any(|&i| i >= h * w) {
            return Err(Error::InvalidShape {
                op: "gather",
                reason: format!("index of length {} invalid for {}x{} -> {}x{}", index.len(), h, w, out_h, out_w),
            });
        }
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * out_h * out_w);
        for pl in 0..n * c {
            let plane = &x[pl * h * w..(pl + 1) * h * w];
            out.extend(index.iter().map(|&i| plane[i]));
        }
        let rg = self.requires_grad(input);
        let value = Tensor::from_vec([n, c, out_h, out_w], out)?;
        Ok(self.push(value, Record::Gather { input, index }, rg))
    }

    /// Concatenation along the batch (0) or channel (1) axis.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() || axis > 1 {
            return Err(Error::InvalidShape {
                op: "concat",
                reason: format!("{} inputs on axis {}", inputs.len(), axis),
            });
        }
        let first = self.shape(inputs[0]);
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = (0..4).all(|d| d == axis || s[d] == first[d]);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first,
                    right: s,
                });
            }
            total += s[axis];
        }
        let mut shape = first;
        shape[axis] = total;
        let mut out = Vec::with_capacity(numel(&shape));
        let outer = if axis == 0 { 1 } else { first[0] };
        for o in 0..outer {
            for &v in inputs {
                let s = self.shape(v);
                let chunk = numel(&s) / outer;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        let value = Tensor::from_vec(shape, out)?;
        Ok(self.push(
            value,
            Record::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Batch items `start..start + len`.
    pub fn narrow_batch(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.shape(a);
        if start + len > n || len == 0 {
            return Err(Error::InvalidShape {
                op: "narrow",
                reason: format!("items {}..{} of {}", start, start + len, n),
            });
        }
        let item = c * h * w;
        let data = self.value(a).data()[start * item..(start + len) * item].to_vec();
        let rg = self.requires_grad(a);
        let value = Tensor::from_vec([len, c, h, w], data)?;
        Ok(self.push(value, Record::Narrow { input: a, start }, rg))
    }

    /// Scalar reduction. `Mse` and `L1` take a second operand of equal shape.
    pub fn reduce(&mut self, kind: Reduction, a: Var, b: Option<Var>) -> Result<Var> {
        let sa = self.shape(a);
        let count = T::of(numel(&sa) as f64);
        let x = self.value(a).data();
        let v = match (kind, b) {
            (Reduction::Sum, None) => x.iter().copied().sum::<T>(),
            (Reduction::Mean, None) => x.iter().copied().sum::<T>() / count,
            (Reduction::Mse | Reduction::L1, Some(b)) => {
                let sb = self.shape(b);
                if sa != sb {
                    return Err(Error::ShapeMismatch {
                        op: "reduce",
                        left: sa,
                        right: sb,
                    });
                }
                let y = self.value(b).data();
                let s: T = if kind == Reduction::Mse {
                    x.iter().zip(y).map(|(&p, &q)| (p - q) * (p - q)).sum()
                } else {
                    x.iter().zip(y).map(|(&p, &q)| (p - q).abs()).sum()
                };
                s / count
            }
            _ => {
                return Err(Error::InvalidShape {
                    op: "reduce",
                    reason: format!("{:?} takes {} operand(s)", kind, if b.is_some() { 1 } else { 2 }),
                })
            }
        };
        let rg = self.requires_grad(a) || b.map(|b| self.requires_grad(b)).unwrap_or(false);
        Ok(self.push(Tensor::scalar(v), Record::Reduce(kind, a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.reduce(Reduction::Sum, a, None).expect("sum is infallible")
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.reduce(Reduction::Mean, a, None).expect("mean is infallible")
    }

    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.reduce(Reduction::Mse, a, Some(b))
    }

    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.reduce(Reduction::L1, a, Some(b))
    }

    /// Reverse pass from a scalar `loss`. Every node is visited once in
    /// reverse recording order; the tape is cleared afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if numel(&shape) != 1 {
            return Err(Error::NotScalar(shape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Tensor::ones(shape));
        }
        let mut out = HashMap::new();
        for id in (0..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let var = Var {
                id,
                generation: self.generation,
            };
            let Some(g) = grads[id].take() else {
                if matches!(node.record, Record::Leaf) {
                    out.insert(var, Tensor::zeros(node.value.shape()));
                }
                continue;
            };
            if matches!(node.record, Record::Leaf) {
                out.insert(var, g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
        }
        self.nodes.clear();
        self.generation = next_generation();
        Ok(Gradients { grads: out })
    }

    /// Drops all records without differentiating.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.generation = next_generation();
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.nodes[v.id].requires_grad {
            return;
        }
        match &mut grads[v.id] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += *d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.record {
            Record::Leaf => {}
            Record::Unary(op, a) => {
                let x = &self.nodes[a.id].value;
                let zero = T::zero();
                let one = T::one();
                let d: Vec<T> = match *op {
                    UnaryOp::Exp => g.data().iter().zip(out.data()).map(|(&g, &y)| g * y).collect(),
                    UnaryOp::Log => {
                        let floor = T::of(LOG_FLOOR);
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(&g, &x)| if x > floor { g / x } else { zero })
                            .collect()
                    }
                    UnaryOp::Neg => g.data().iter().map(|&g| -g).collect(),
                    UnaryOp::Abs => g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&g, &x)| {
                            if x > zero {
                                g
                            } else if x < zero {
                                -g
                            } else {
                                zero
                            }
                        })
                        .collect(),
                    UnaryOp::Square => {
                        let two = T::of(2.0);
                        g.data().iter().zip(x.data()).map(|(&g, &x)| two * x * g).collect()
                    }
                    UnaryOp::Relu => g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&g, &x)| if x > zero { g } else { zero })
                        .collect(),
                    UnaryOp::LeakyRelu(s) => {
                        let s = T::of(s);
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(&g, &x)| if x > zero { g } else { s * g })
                            .collect()
                    }
                    UnaryOp::Sigmoid => g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&g, &y)| g * y * (one - y))
                        .collect(),
                    UnaryOp::Tanh => g
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(&g, &y)| g * (one - y * y))
                        .collect(),
                    UnaryOp::Scale(s) => {
                        let s = T::of(s);
                        g.data().iter().map(|&g| g * s).collect()
                    }
                    UnaryOp::Offset(_) => g.data().to_vec(),
                    UnaryOp::Clamp(lo, hi) => {
                        let (lo, hi) = (T::of(lo), T::of(hi));
                        g.data()
                            .iter()
                            .zip(x.data())
                            .map(|(&g, &x)| if x > lo && x < hi { g } else { zero })
                            .collect()
                    }
                };
                self.accumulate(grads, *a, Tensor::from_vec(x.shape(), d).unwrap());
            }
            Record::Binary(op, a, b) => {
                let (xa, xb) = (&self.nodes[a.id].value, &self.nodes[b.id].value);
                let (sa, sb) = (xa.shape(), xb.shape());
                let need_a = self.nodes[a.id].requires_grad;
                let need_b = self.nodes[b.id].requires_grad;
                let w = sa[3];
                let mut da = if need_a { vec![T::zero(); xa.numel()] } else { Vec::new() };
                let mut db = if need_b { vec![T::zero(); xb.numel()] } else { Vec::new() };
                let (gd, ad, bd) = (g.data(), xa.data(), xb.data());
                for_each_row(sa, sb, |ao, bo, scalar_row| {
                    for i in 0..w {
                        let bi = if scalar_row { bo } else { bo + i };
                        let gv = gd[ao + i];
                        let (x, y) = (ad[ao + i], bd[bi]);
                        let (ga, gb) = match op {
                            BinaryOp::Add => (gv, gv),
                            BinaryOp::Sub => (gv, -gv),
                            BinaryOp::Mul => (gv * y, gv * x),
                            BinaryOp::Div => (gv / y, -gv * x / (y * y)),
                        };
                        if need_a {
                            da[ao + i] += ga;
                        }
                        if need_b {
                            db[bi] += gb;
                        }
                    }
                });
                if need_a {
                    self.accumulate(grads, *a, Tensor::from_vec(sa, da).unwrap());
                }
                if need_b {
                    self.accumulate(grads, *b, Tensor::from_vec(sb, db).unwrap());
                }
            }
            Record::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let xi = &self.nodes[input.id].value;
                let xw = &self.nodes[weight.id].value;
                let (si, sw) = (xi.shape(), xw.shape());
                let geom = ConvGeom {
                    c: si[1],
                    h: si[2],
                    w: si[3],
                    kh: sw[2],
                    kw: sw[3],
                    stride: *stride,
                    pad: *pad,
                    oh: out.shape()[2],
                    ow: out.shape()[3],
                };
                let need_i = self.nodes[input.id].requires_grad;
                let need_w = self.nodes[weight.id].requires_grad;
                let need_b = bias.map(|b| self.nodes[b.id].requires_grad).unwrap_or(false);
                let mut di = need_i.then(|| vec![T::zero(); xi.numel()]);
                let mut dw = need_w.then(|| vec![T::zero(); xw.numel()]);
                let mut dbias = need_b.then(|| vec![T::zero(); sw[0]]);
                kernels::conv2d_backward(
                    xi.data(),
                    xw.data(),
                    g.data(),
                    si[0],
                    sw[0],
                    &geom,
                    di.as_deref_mut(),
                    dw.as_deref_mut(),
                    dbias.as_deref_mut(),
                );
                if let Some(d) = di {
                    self.accumulate(grads, *input, Tensor::from_vec(si, d).unwrap());
                }
                if let Some(d) = dw {
                    self.accumulate(grads, *weight, Tensor::from_vec(sw, d).unwrap());
                }
                if let (Some(d), Some(b)) = (dbias, bias) {
                    self.accumulate(grads, *b, Tensor::from_vec([1, sw[0], 1, 1], d).unwrap());
                }
            }
            Record::Resample(mode, a) => {
                let sa = self.nodes[a.id].value.shape();
                let [n, c, h, w] = sa;
                let d = match mode {
                    Resample::NearestUp2 => kernels::upsample2_backward(g.data(), n * c, h, w),
                    Resample::AvgPoolDown2 => kernels::avgpool2_backward(g.data(), n * c, h, w),
                };
                self.accumulate(grads, *a, Tensor::from_vec(sa, d).unwrap());
            }
            Record::GridSample { input, grid, oob } => {
                let sa = self.nodes[input.id].value.shape();
                let [n, c, h, w] = sa;
                let [gn, _, oh, ow] = grid.shape();
                let d = kernels::grid_sample_backward(g.data(), grid.data(), n, c, h, w, gn, oh, ow, *oob);
                self.accumulate(grads, *input, Tensor::from_vec(sa, d).unwrap());
            }
            Record::Gather { input, index } => {
                let sa = self.nodes[input.id].value.shape();
                let plane = sa[2] * sa[3];
                let out_plane = index.len();
                let mut d = vec![T::zero(); numel(&sa)];
                for pl in 0..sa[0] * sa[1] {
                    let src = &g.data()[pl * out_plane..(pl + 1) * out_plane];
                    let dst = &mut d[pl * plane..(pl + 1) * plane];
                    for (&i, &gv) in index.iter().zip(src) {
                        dst[i] += gv;
                    }
                }
                self.accumulate(grads, *input, Tensor::from_vec(sa, d).unwrap());
            }
            Record::Concat { inputs, axis } => {
                let shape = out.shape();
                let outer = if *axis == 0 { 1 } else { shape[0] };
                let row = numel(&shape) / outer;
                let mut offset = 0;
                for &v in inputs {
                    let s = self.nodes[v.id].value.shape();
                    let chunk = numel(&s) / outer;
                    if self.nodes[v.id].requires_grad {
                        let mut d = Vec::with_capacity(numel(&s));
                        for o in 0..outer {
                            let start = o * row + offset;
                            d.extend_from_slice(&g.data()[start..start + chunk]);
                        }
                        self.accumulate(grads, v, Tensor::from_vec(s, d).unwrap());
                    }
                    offset += chunk;
                }
            }
            Record::Narrow { input, start } => {
                let sa = self.nodes[input.id].value.shape();
                let item = sa[1] * sa[2] * sa[3];
                let mut d = vec![T::zero(); numel(&sa)];
                d[start * item..start * item + g.numel()].copy_from_slice(g.data());
                self.accumulate(grads, *input, Tensor::from_vec(sa, d).unwrap());
            }
            Record::Reduce(kind, a, b) => {
                let gv = g.item();
                let xa = &self.nodes[a.id].value;
                let count = T::of(xa.numel() as f64);
                match (kind, b) {
                    (Reduction::Sum, _) => {
                        self.accumulate(grads, *a, Tensor::full(xa.shape(), gv));
                    }
                    (Reduction::Mean, _) => {
                        self.accumulate(grads, *a, Tensor::full(xa.shape(), gv / count));
                    }
                    (Reduction::Mse, Some(b)) | (Reduction::L1, Some(b)) => {
                        let xb = &self.nodes[b.id].value;
                        let scale = gv / count;
                        let two = T::of(2.0);
                        let zero = T::zero();
                        let da: Vec<T> = xa
                            .data()
                            .iter()
                            .zip(xb.data())
                            .map(|(&p, &q)| {
                                let diff = p - q;
                                if *kind == Reduction::Mse {
                                    two * diff * scale
                                } else if diff > zero {
                                    scale
                                } else if diff < zero {
                                    -scale
                                } else {
                                    zero
                                }
                            })
                            .collect();
                        if self.nodes[b.id].requires_grad {
                            let db: Vec<T> = da.iter().map(|&v| -v).collect();
                            self.accumulate(grads, *b, Tensor::from_vec(xb.shape(), db).unwrap());
                        }
                        self.accumulate(grads, *a, Tensor::from_vec(xa.shape(), da).unwrap());
                    }
                    _ => unreachable!("validated at record time"),
                }
            }
        }
    }
}
