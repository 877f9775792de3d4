//! Dense row-major `f64` tensors and the numeric kernels the tape builds on.
//!
//! Tensors are values: every operation returns a new tensor and leaves its
//! inputs untouched. Results are checked for finiteness, so a successful
//! operation never hands back NaN or infinity.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad_tracked: bool,
}

/// Elementwise operation kinds accepted by [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Neg,
    Exp,
    Log,
    Sigmoid,
    Relu,
    Square,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(
            self,
            ElementwiseOp::Add | ElementwiseOp::Sub | ElementwiseOp::Mul
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} produced a non-finite value")))
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim(format!("shape {shape:?} has a zero extent")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        check_finite(&data, "tensor construction")?;
        Ok(Self {
            shape,
            data,
            grad_tracked: false,
        })
    }

    /// Internal constructor for kernels whose output shape is known to match.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            grad_tracked: false,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Rank-2 tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Marks the tensor as a differentiable leaf when placed on a tape.
    pub fn tracked(mut self) -> Self {
        self.grad_tracked = true;
        self
    }

    pub fn untracked(mut self) -> Self {
        self.grad_tracked = false;
        self
    }

    pub fn set_grad_tracked(&mut self, tracked: bool) {
        self.grad_tracked = tracked;
    }

    pub fn grad_tracked(&self) -> bool {
        self.grad_tracked
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access for optimizers and initializers. Callers keep values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )))
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Self::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_parts(self.shape.clone(), data)
    }

    /// Whether `b` is a vector that broadcasts over the last axis of `self`.
    pub(crate) fn is_bias_of(&self, b: &Tensor) -> bool {
        b.rank() == 1 && self.shape.last() == Some(&b.shape[0]) && self.rank() > 1
    }

    fn broadcast_map(&self, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let n = b.data.len();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &a)| f(a, b.data[i % n]))
            .collect();
        Self::from_parts(self.shape.clone(), data)
    }

    /// Applies an elementwise kind. Binary kinds take `b` with an equal
    /// shape or a vector matching the last axis of `self`.
    pub fn elementwise(&self, op: ElementwiseOp, b: Option<&Tensor>) -> Result<Tensor> {
        use ElementwiseOp::*;
        let out = if op.is_binary() {
            let b = b.ok_or_else(|| Error::Contract(format!("{op:?} needs two operands")))?;
            let f: fn(f64, f64) -> f64 = match op {
                Add => |x, y| x + y,
                Sub => |x, y| x - y,
                _ => |x, y| x * y,
            };
            if b.shape == self.shape {
                self.zip_map(b, f)
            } else if self.is_bias_of(b) {
                self.broadcast_map(b, f)
            } else {
                return Err(Error::dim(format!(
                    "{op:?}: shapes {:?} and {:?} do not match",
                    self.shape, b.shape
                )));
            }
        } else {
            if b.is_some() {
                return Err(Error::Contract(format!("{op:?} is unary")));
            }
            match op {
                Neg => self.map(|x| -x),
                Exp => self.map(f64::exp),
                Log => {
                    if let Some(bad) = self.data.iter().find(|&&v| v <= 0.0) {
                        return Err(Error::Domain(format!("log of non-positive value {bad}")));
                    }
                    self.map(f64::ln)
                }
                Sigmoid => self.map(sigmoid),
                Relu => self.map(|x| if x > 0.0 { x } else { 0.0 }),
                Square => self.map(|x| x * x),
                Add | Sub | Mul => unreachable!(),
            }
        };
        check_finite(&out.data, &format!("{op:?}"))?;
        Ok(out)
    }

    pub fn add(&self, b: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Add, Some(b))
    }

    pub fn sub(&self, b: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Sub, Some(b))
    }

    pub fn mul(&self, b: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Mul, Some(b))
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let out = self.map(|x| x * c);
        check_finite(&out.data, "scale")?;
        Ok(out)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        let out = self.map(|x| x + c);
        check_finite(&out.data, "add_scalar")?;
        Ok(out)
    }

    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        matmul_checked(self, b, false, false)
    }

    /// `self · bᵀ`.
    pub fn matmul_t(&self, b: &Tensor) -> Result<Tensor> {
        matmul_checked(self, b, false, true)
    }

    /// `selfᵀ · b`.
    pub fn t_matmul(&self, b: &Tensor) -> Result<Tensor> {
        matmul_checked(self, b, true, false)
    }

    /// Affine map `x · wᵀ + bias` with `w` shaped out×in.
    pub fn linear(&self, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let y = self.matmul_t(w)?;
        if !y.is_bias_of(bias) {
            return Err(Error::dim(format!(
                "bias {:?} does not match output {:?}",
                bias.shape, y.shape
            )));
        }
        y.add(bias)
    }

    pub fn reduce(&self, op: ReduceOp, axis: Option<usize>) -> Result<Tensor> {
        let out = match axis {
            None => {
                let s: f64 = self.data.iter().sum();
                let v = match op {
                    ReduceOp::Sum => s,
                    ReduceOp::Mean => s / self.data.len() as f64,
                };
                Tensor::scalar(v)
            }
            Some(ax) => {
                let (outer, len, inner) = self.axis_split(ax)?;
                let mut data = vec![0.0; outer * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let src = &self.data[(o * len + k) * inner..(o * len + k + 1) * inner];
                        for (d, &s) in data[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                if op == ReduceOp::Mean {
                    data.iter_mut().for_each(|v| *v /= len as f64);
                }
                let mut shape: Vec<usize> = self.shape.clone();
                shape.remove(ax);
                if shape.is_empty() {
                    shape.push(1);
                }
                Tensor::from_parts(shape, data)
            }
        };
        check_finite(&out.data, "reduce")?;
        Ok(out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// (outer, axis length, inner) extents around `axis`.
    pub(crate) fn axis_split(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.rank() {
            return Err(Error::dim(format!(
                "axis {axis} out of range for rank {}",
                self.rank()
            )));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::dim("softmax expects a rank-2 tensor"));
        }
        let cols = self.shape[1];
        let mut out = self.data.clone();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn matmul_checked(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::dim(format!(
            "matmul expects rank-2 operands, got {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k) = if ta {
        (a.shape[1], a.shape[0])
    } else {
        (a.shape[0], a.shape[1])
    };
    let (k2, n) = if tb {
        (b.shape[1], b.shape[0])
    } else {
        (b.shape[0], b.shape[1])
    };
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, &a.data, ta, &b.data, tb, &mut out, 0.0);
    check_finite(&out, "matmul")?;
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `c ← op(a)·op(b) + beta·c` on row-major buffers. `a` is m×k after the
/// optional transpose, `b` is k×n, `c` is m×n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every buffer to the extents and strides
    // passed to dgemm, so all reads and writes stay in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
