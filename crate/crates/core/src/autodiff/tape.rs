//! Append-only reverse-mode tape.
//!
//! Every primitive evaluates eagerly, stores its value on the tape and records
//! enough of its inputs to run the reverse sweep. Nodes only ever reference
//! earlier nodes, so the tape is topologically ordered by construction.

use std::sync::Arc;

use super::array::{expand, reduce_to, split_axis, zip_broadcast, Array};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A primitive implemented outside the engine: the forward value is computed
/// by the caller, the op only supplies the vector-Jacobian product.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradient with respect to each input, given the output gradient.
    fn backward(&self, inputs: &[&Array], output: &Array, grad: &Array) -> Vec<Array>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sum(Var),
    SumAxis(Var),
    Mean(Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sin(Var),
    Cos(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Broadcast(Var),
    Reshape(Var),
    Slice { x: Var, axis: usize, start: usize },
    Concat { xs: Vec<Var>, axis: usize },
    AvgPool2x2(Var),
    Gather { x: Var, idx: Arc<[usize]> },
    Softmax(Var, usize),
    Custom { xs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    op: Op,
    value: Array,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Array>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros if `v` did not
    /// influence the root.
    pub fn get(&self, v: Var) -> Array {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Array {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Array::zeros(&self.shapes[v.0]),
        }
    }
}

fn check_finite(op: &'static str, a: &Array) -> Result<()> {
    if a.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

/// C = A·B for row-major operands with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: extents and strides describe in-bounds views of the slices.
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

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Array, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Whether gradients can flow from any parameter into `v`.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn unary(&mut self, name: &'static str, x: Var, op: Op, value: Array) -> Result<Var> {
        check_finite(name, &value)?;
        let rg = self.rg(x);
        Ok(self.push(op, value, rg))
    }

    /// A differentiable leaf (a parameter).
    pub fn param(&mut self, value: Array) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast("add", self.value(a), self.value(b), |x, y| x + y)?;
        check_finite("add", &v)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast("sub", self.value(a), self.value(b), |x, y| x - y)?;
        check_finite("sub", &v)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), v, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast("mul", self.value(a), self.value(b), |x, y| x * y)?;
        check_finite("mul", &v)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = zip_broadcast("div", self.value(a), self.value(b), |x, y| x / y)?;
        check_finite("div", &v)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Div(a, b), v, rg))
    }

    /// Rank-2 matrix product `[m,k]·[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, va.data(), k, 1, vb.data(), n, 1, &mut out, false);
        let v = Array::from_parts(vec![m, n], out);
        check_finite("matmul", &v)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), v, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", vx.shape())));
        }
        let v = transpose2(vx);
        let rg = self.rg(x);
        Ok(self.push(Op::Transpose(x), v, rg))
    }

    /// Sum of all elements (rank-0 result).
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Array::scalar(self.value(x).sum());
        self.unary("sum", x, Op::Sum(x), v)
    }

    /// Sum along `axis`, keeping it as an extent-1 axis.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() {
            return Err(Error::shape("sum_axis", format!("axis {axis} of {:?}", vx.shape())));
        }
        let (outer, len, inner) = split_axis(vx.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let d = vx.data();
        for o in 0..outer {
            for l in 0..len {
                let src = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += s;
                }
            }
        }
        let mut shape = vx.shape().to_vec();
        shape[axis] = 1;
        let v = Array::from_parts(shape, out);
        self.unary("sum_axis", x, Op::SumAxis(x), v)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.is_empty() {
            return Err(Error::shape("mean", "empty array"));
        }
        let v = Array::scalar(vx.sum() / vx.len() as f64);
        self.unary("mean", x, Op::Mean(x), v)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| -a);
        self.unary("neg", x, Op::Neg(x), v)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a * k);
        self.unary("scale", x, Op::Scale(x, k), v)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a + k);
        self.unary("add_scalar", x, Op::AddScalar(x), v)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a.max(0.0));
        self.unary("relu", x, Op::Relu(x), v)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::tanh);
        self.unary("tanh", x, Op::Tanh(x), v)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(sigmoid);
        self.unary("sigmoid", x, Op::Sigmoid(x), v)
    }

    /// Numerically stable `log(sigmoid(x))`.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(log_sigmoid);
        self.unary("log_sigmoid", x, Op::LogSigmoid(x), v)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::exp);
        self.unary("exp", x, Op::Exp(x), v)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if let Some(bad) = vx.data().iter().find(|&&a| a <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("value {bad}"),
            });
        }
        let v = vx.map(f64::ln);
        self.unary("log", x, Op::Log(x), v)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if let Some(bad) = vx.data().iter().find(|&&a| a <= 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("value {bad}"),
            });
        }
        let v = vx.map(f64::sqrt);
        self.unary("sqrt", x, Op::Sqrt(x), v)
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::sin);
        self.unary("sin", x, Op::Sin(x), v)
    }

    pub fn cos(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::cos);
        self.unary("cos", x, Op::Cos(x), v)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a * a);
        self.unary("square", x, Op::Square(x), v)
    }

    /// Clamp to `[lo, hi]`; the gradient passes only inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a.clamp(lo, hi));
        self.unary("clamp", x, Op::Clamp(x, lo, hi), v)
    }

    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        match super::array::broadcast_shape(vx.shape(), shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(Error::shape(
                    "broadcast",
                    format!("{:?} -> {:?}", vx.shape(), shape),
                ))
            }
        }
        let v = expand(vx, shape);
        let rg = self.rg(x);
        Ok(self.push(Op::Broadcast(x), v, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(Op::Reshape(x), v, rg))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() || start >= end || end > vx.shape()[axis] {
            return Err(Error::shape(
                "slice",
                format!("{start}..{end} on axis {axis} of {:?}", vx.shape()),
            ));
        }
        let (outer, len, inner) = split_axis(vx.shape(), axis);
        let width = end - start;
        let mut out = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let base = (o * len + start) * inner;
            out.extend_from_slice(&vx.data()[base..base + width * inner]);
        }
        let mut shape = vx.shape().to_vec();
        shape[axis] = width;
        let v = Array::from_parts(shape, out);
        let rg = self.rg(x);
        Ok(self.push(Op::Slice { x, axis, start }, v, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base_shape = self.shape(*first).to_vec();
        if axis >= base_shape.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {:?}", base_shape)));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base_shape.len()
                && s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", s, base_shape)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base_shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let len = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base_shape;
        shape[axis] = total;
        let v = Array::from_parts(shape, out);
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            v,
            rg,
        ))
    }

    /// 2×2 mean pooling over the last two axes (both must be even).
    pub fn avgpool2x2(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let r = vx.rank();
        if r < 2 || !vx.shape()[r - 2].is_multiple_of(2) || !vx.shape()[r - 1].is_multiple_of(2) {
            return Err(Error::shape("avgpool2x2", format!("{:?}", vx.shape())));
        }
        let v = avgpool_forward(vx);
        let rg = self.rg(x);
        Ok(self.push(Op::AvgPool2x2(x), v, rg))
    }

    /// `out.flat[i] = x.flat[idx[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, idx: Arc<[usize]>, shape: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        if shape.iter().product::<usize>() != idx.len() {
            return Err(Error::shape("gather", format!("{} indices into {:?}", idx.len(), shape)));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= vx.len()) {
            return Err(Error::shape("gather", format!("index {bad} >= {}", vx.len())));
        }
        let data = idx.iter().map(|&i| vx.data()[i]).collect();
        let v = Array::from_parts(shape.to_vec(), data);
        let rg = self.rg(x);
        Ok(self.push(Op::Gather { x, idx }, v, rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() {
            return Err(Error::shape("softmax", format!("axis {axis} of {:?}", vx.shape())));
        }
        let (outer, len, inner) = split_axis(vx.shape(), axis);
        let d = vx.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let m = (0..len).map(|l| d[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for l in 0..len {
                    let e = (d[at(l)] - m).exp();
                    out[at(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    out[at(l)] /= z;
                }
            }
        }
        let v = Array::from_parts(vx.shape().to_vec(), out);
        self.unary("softmax", x, Op::Softmax(x, axis), v)
    }

    /// Record an externally evaluated primitive.
    pub fn custom(&mut self, xs: &[Var], value: Array, op: Box<dyn CustomOp>) -> Result<Var> {
        check_finite(op.name(), &value)?;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            Op::Custom {
                xs: xs.to_vec(),
                op,
            },
            value,
            rg,
        ))
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let n = root.0 + 1;
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array::full(rv.shape(), 1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, d: Array| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            check_finite("backward", &d)?;
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
            Ok(())
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, reduce_to(g, val(*a).shape()))?;
                acc(*b, reduce_to(g, val(*b).shape()))?;
            }
            Op::Sub(a, b) => {
                acc(*a, reduce_to(g, val(*a).shape()))?;
                acc(*b, reduce_to(&g.map(|x| -x), val(*b).shape()))?;
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.nodes[a.0].requires_grad {
                    let d = zip_broadcast("mul'", g, vb, |g, y| g * y)?;
                    acc(*a, reduce_to(&d, va.shape()))?;
                }
                if self.nodes[b.0].requires_grad {
                    let d = zip_broadcast("mul'", g, va, |g, x| g * x)?;
                    acc(*b, reduce_to(&d, vb.shape()))?;
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.nodes[a.0].requires_grad {
                    let d = zip_broadcast("div'", g, vb, |g, y| g / y)?;
                    acc(*a, reduce_to(&d, va.shape()))?;
                }
                if self.nodes[b.0].requires_grad {
                    // d(a/b)/db = -y/b
                    let gy = zip_broadcast("div'", g, y, |g, q| g * q)?;
                    let d = zip_broadcast("div'", &gy, vb, |t, b| -t / b)?;
                    acc(*b, reduce_to(&d, vb.shape()))?;
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    // dA = G·Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), n, 1, vb.data(), 1, n, &mut da, false);
                    acc(*a, Array::from_parts(vec![m, k], da))?;
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ·G
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, va.data(), 1, k, g.data(), n, 1, &mut db, false);
                    acc(*b, Array::from_parts(vec![k, n], db))?;
                }
            }
            Op::Transpose(x) => acc(*x, transpose2(g))?,
            Op::Sum(x) => acc(*x, Array::full(val(*x).shape(), g.item()))?,
            Op::SumAxis(x) => acc(*x, expand(g, val(*x).shape()))?,
            Op::Mean(x) => {
                let vx = val(*x);
                acc(*x, Array::full(vx.shape(), g.item() / vx.len() as f64))?
            }
            Op::Neg(x) => acc(*x, g.map(|v| -v))?,
            Op::Scale(x, k) => acc(*x, g.map(|v| v * k))?,
            Op::AddScalar(x) | Op::Broadcast(x) => acc(*x, reduce_to(g, val(*x).shape()))?,
            Op::Relu(x) => acc(*x, zip(g, val(*x), |g, x| if x > 0.0 { g } else { 0.0 }))?,
            Op::Tanh(x) => acc(*x, zip(g, y, |g, t| g * (1.0 - t * t)))?,
            Op::Sigmoid(x) => acc(*x, zip(g, y, |g, s| g * s * (1.0 - s)))?,
            Op::LogSigmoid(x) => acc(*x, zip(g, val(*x), |g, x| g * sigmoid(-x)))?,
            Op::Exp(x) => acc(*x, zip(g, y, |g, e| g * e))?,
            Op::Log(x) => acc(*x, zip(g, val(*x), |g, x| g / x))?,
            Op::Sqrt(x) => acc(*x, zip(g, y, |g, r| g * 0.5 / r))?,
            Op::Sin(x) => acc(*x, zip(g, val(*x), |g, x| g * x.cos()))?,
            Op::Cos(x) => acc(*x, zip(g, val(*x), |g, x| -g * x.sin()))?,
            Op::Square(x) => acc(*x, zip(g, val(*x), |g, x| 2.0 * g * x))?,
            Op::Clamp(x, lo, hi) => acc(
                *x,
                zip(g, val(*x), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }),
            )?,
            Op::Reshape(x) => acc(*x, g.clone().reshaped(val(*x).shape().to_vec())?)?,
            Op::Slice { x, axis, start } => {
                let vx = val(*x);
                let (outer, len, inner) = split_axis(vx.shape(), *axis);
                let width = g.shape()[*axis];
                let mut d = vec![0.0; vx.len()];
                for o in 0..outer {
                    let dst = (o * len + start) * inner;
                    let src = o * width * inner;
                    d[dst..dst + width * inner].copy_from_slice(&g.data()[src..src + width * inner]);
                }
                acc(*x, Array::from_parts(vx.shape().to_vec(), d))?;
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for &x in xs {
                    let vx = val(x);
                    let len = vx.shape()[*axis];
                    let mut d = Vec::with_capacity(vx.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    acc(x, Array::from_parts(vx.shape().to_vec(), d))?;
                    offset += len;
                }
            }
            Op::AvgPool2x2(x) => acc(*x, avgpool_backward(g, val(*x).shape()))?,
            Op::Gather { x, idx } => {
                let vx = val(*x);
                let mut d = vec![0.0; vx.len()];
                for (gi, &i) in g.data().iter().zip(idx.iter()) {
                    d[i] += gi;
                }
                acc(*x, Array::from_parts(vx.shape().to_vec(), d))?;
            }
            Op::Softmax(x, axis) => {
                let (outer, len, inner) = split_axis(y.shape(), *axis);
                let mut d = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| g.data()[at(l)] * y.data()[at(l)]).sum();
                        for l in 0..len {
                            d[at(l)] = y.data()[at(l)] * (g.data()[at(l)] - dot);
                        }
                    }
                }
                acc(*x, Array::from_parts(y.shape().to_vec(), d))?;
            }
            Op::Custom { xs, op } => {
                let inputs: Vec<&Array> = xs.iter().map(|&x| val(x)).collect();
                let ds = op.backward(&inputs, y, g);
                for (&x, d) in xs.iter().zip(ds) {
                    if d.shape() != val(x).shape() {
                        return Err(Error::shape(op.name(), "custom backward returned wrong shape"));
                    }
                    acc(x, d)?;
                }
            }
        }
        Ok(())
    }
}

fn zip(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    debug_assert_eq!(a.shape(), b.shape());
    Array::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn transpose2(x: &Array) -> Array {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x.data()[i * c + j];
        }
    }
    Array::from_parts(vec![c, r], out)
}

fn avgpool_forward(x: &Array) -> Array {
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let planes = x.len() / (h * w);
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; planes * ho * wo];
    let d = x.data();
    for p in 0..planes {
        let src = &d[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                let a = src[2 * i * w + 2 * j];
                let b = src[2 * i * w + 2 * j + 1];
                let c = src[(2 * i + 1) * w + 2 * j];
                let e = src[(2 * i + 1) * w + 2 * j + 1];
                dst[i * wo + j] = 0.25 * (a + b + c + e);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[r - 2] = ho;
    shape[r - 1] = wo;
    Array::from_parts(shape, out)
}

fn avgpool_backward(g: &Array, in_shape: &[usize]) -> Array {
    let r = in_shape.len();
    let (h, w) = (in_shape[r - 2], in_shape[r - 1]);
    let (ho, wo) = (h / 2, w / 2);
    let planes = g.len() / (ho * wo);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        for i in 0..ho {
            for j in 0..wo {
                let v = 0.25 * g.data()[p * ho * wo + i * wo + j];
                let base = p * h * w;
                out[base + 2 * i * w + 2 * j] = v;
                out[base + 2 * i * w + 2 * j + 1] = v;
                out[base + (2 * i + 1) * w + 2 * j] = v;
                out[base + (2 * i + 1) * w + 2 * j + 1] = v;
            }
        }
    }
    Array::from_parts(in_shape.to_vec(), out)
}

/// Plain 2×2 mean pooling outside any tape.
pub fn avgpool2x2_value(x: &Array) -> Array {
    avgpool_forward(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(shape: &[usize], data: &[f64]) -> Array {
        Array::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn add_vectors() {
        let mut t = Tape::new();
        let a = t.constant(Array::from_slice(&[1.0, 2.0]));
        let b = t.constant(Array::from_slice(&[3.0, 4.0]));
        let c = t.add(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let eye = t.constant(arr(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let a = arr(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        let av = t.constant(a.clone());
        let c = t.matmul(eye, av).unwrap();
        assert_eq!(t.value(c), &a);
    }

    #[test]
    fn avgpool_preserves_constants() {
        let mut t = Tape::new();
        let x = t.constant(Array::full(&[4, 4], 1.0));
        let y = t.avgpool2x2(x).unwrap();
        assert_eq!(t.value(y), &Array::full(&[2, 2], 1.0));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut t = Tape::new();
        let x = t.param(Array::from_slice(&[1.0, 2.0, 3.0]));
        let sq = t.square(x).unwrap();
        let s = t.sum(sq).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn disconnected_leaf_gets_zero() {
        let mut t = Tape::new();
        let x = t.param(Array::from_slice(&[1.0, 2.0]));
        let unused = t.param(Array::from_slice(&[5.0, 6.0, 7.0]));
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(unused), Array::zeros(&[3]));
    }

    #[test]
    fn errors() {
        let mut t = Tape::new();
        let a = t.constant(Array::from_slice(&[1.0, 2.0]));
        let b = t.constant(Array::from_slice(&[1.0, 2.0, 3.0]));
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
        assert!(matches!(t.backward(a), Err(Error::NonScalarRoot(_))));
        let z = t.constant(Array::from_slice(&[0.0]));
        assert!(matches!(t.log(z), Err(Error::Domain { .. })));
        let big = t.constant(Array::from_slice(&[1000.0]));
        assert!(matches!(t.exp(big), Err(Error::NonFinite(_))));
    }

    #[test]
    fn slice_concat_roundtrip() {
        let mut t = Tape::new();
        let x = t.param(arr(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let l = t.slice(x, 1, 0, 1).unwrap();
        let r = t.slice(x, 1, 1, 3).unwrap();
        let y = t.concat(&[l, r], 1).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[2, 3], &[1., 2., 3., -1., 0., 500.]));
        let y = t.softmax(x, 1).unwrap();
        let v = t.value(y).data();
        assert!((v[0] + v[1] + v[2] - 1.0).abs() < 1e-15);
        assert!((v[5] - 1.0).abs() < 1e-15);
    }
}
