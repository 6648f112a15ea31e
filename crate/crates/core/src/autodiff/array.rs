//! Dense row-major `f64` arrays and the broadcasting helpers shared by the
//! tape primitives.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Array::new",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Rank-0 array.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_slice(data: &[f64]) -> Self {
        Self::from_vec(data.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element array.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn add_assign(&mut self, other: &Array) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, k: f64) {
        for a in &mut self.data {
            *a *= k;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Array) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Numpy-style broadcast of two shapes (right-aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out` with zero stride on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let offset = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Calls `f(out_flat, in_flat)` for every element of `out`, where `in_flat`
/// indexes the broadcast input of shape `shape`.
fn for_each_broadcast(shape: &[usize], out: &[usize], mut f: impl FnMut(usize, usize)) {
    let strides = broadcast_strides(shape, out);
    let n: usize = out.iter().product();
    if n == 0 {
        return;
    }
    let rank = out.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let inner = out[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut counter = vec![0usize; rank];
    let mut base = 0usize;
    let mut flat = 0usize;
    loop {
        for j in 0..inner {
            f(flat + j, base + j * inner_stride);
        }
        flat += inner;
        // advance the outer odometer
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            counter[axis] += 1;
            base += strides[axis];
            if counter[axis] < out[axis] {
                break;
            }
            base -= strides[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
}

/// Elementwise binary op with broadcasting.
pub(crate) fn zip_broadcast(
    op: &'static str,
    a: &Array,
    b: &Array,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Array> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Array::from_parts(a.shape.clone(), data));
    }
    let out = broadcast_shape(&a.shape, &b.shape)
        .ok_or_else(|| Error::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)))?;
    let n: usize = out.iter().product();
    if b.data.len() == 1 && out == a.shape {
        let y = b.data[0];
        return Ok(Array::from_parts(out, a.data.iter().map(|&x| f(x, y)).collect()));
    }
    if a.data.len() == 1 && out == b.shape {
        let x = a.data[0];
        return Ok(Array::from_parts(out, b.data.iter().map(|&y| f(x, y)).collect()));
    }
    let mut ia = vec![0usize; n];
    for_each_broadcast(&a.shape, &out, |o, i| ia[o] = i);
    let mut data = vec![0.0; n];
    for_each_broadcast(&b.shape, &out, |o, i| data[o] = f(a.data[ia[o]], b.data[i]));
    Ok(Array::from_parts(out, data))
}

/// Expand `x` to `out` (which must be a valid broadcast target).
pub(crate) fn expand(x: &Array, out: &[usize]) -> Array {
    if x.shape == out {
        return x.clone();
    }
    let n: usize = out.iter().product();
    let mut data = vec![0.0; n];
    for_each_broadcast(&x.shape, out, |o, i| data[o] = x.data[i]);
    Array::from_parts(out.to_vec(), data)
}

/// Sum `grad` (of the broadcast shape) back down to `shape`.
pub(crate) fn reduce_to(grad: &Array, shape: &[usize]) -> Array {
    if grad.shape == shape {
        return grad.clone();
    }
    let mut out = Array::zeros(shape);
    if out.data.len() == 1 {
        out.data[0] = grad.sum();
        return out;
    }
    for_each_broadcast(shape, &grad.shape, |o, i| out.data[i] += grad.data[o]);
    out
}

/// Split `shape` around `axis` into (outer, axis_len, inner) extents.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
