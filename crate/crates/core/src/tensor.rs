//! Dense row-major tensors of `f64` and the primitives the rest of the crate
//! builds on.
//!
//! Layout is channels-first everywhere (`[batch, channel, height, width]`).
//! Binary elementwise operations never broadcast: operands must have equal
//! shapes and callers reshape explicitly.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Ordered list of extents, each at least one.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::shape("shape must have at least one extent"));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::shape(format!("extent {pos} of {dims:?} is zero")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Size(format!("element count of {dims:?} overflows usize")))?;
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} elements]", self.shape, self.data.len())
        }
    }
}

/// Logistic function, evaluated without overflowing for large |v|.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        Self::full(dims, 1.0)
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape(vec![1]),
            data: vec![value],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::shape(format!(
                "{} values do not fill shape {shape}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("tensor data contains NaN or Inf".into()));
        }
        Ok(Tensor { shape, data })
    }

    /// Samples every element independently from `U[low, high)`.
    pub fn uniform<R: Rng + ?Sized>(dims: &[usize], low: f64, high: f64, rng: &mut R) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel()).map(|_| rng.random_range(low..high)).collect();
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.rank());
        index
            .iter()
            .zip(self.dims())
            .fold(0, |acc, (&i, &d)| {
                debug_assert!(i < d);
                acc * d + i
            })
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(format!("item() on tensor of shape {}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.len() {
            return Err(Error::shape(format!("cannot reshape {} into {shape}", self.shape)));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn unary(&self, op: Unary) -> Result<Tensor> {
        let out = match op {
            Unary::Relu => self.map(|v| v.max(0.0)),
            Unary::Sigmoid => self.map(sigmoid),
            Unary::Exp => self.map(f64::exp),
        };
        out.check_finite(match op {
            Unary::Relu => "relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Exp => "exp",
        })?;
        Ok(out)
    }

    pub fn binary(&self, op: Binary, other: &Tensor) -> Result<Tensor> {
        self.expect_same_shape(other, "elementwise")?;
        let f = match op {
            Binary::Add => |a: f64, b: f64| a + b,
            Binary::Sub => |a: f64, b: f64| a - b,
            Binary::Mul => |a: f64, b: f64| a * b,
        };
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        let out = Tensor {
            shape: self.shape.clone(),
            data,
        };
        out.check_finite("elementwise")?;
        Ok(out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(Binary::Add, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(Binary::Sub, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(Binary::Mul, other)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(Unary::Exp)
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.expect_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `[m, k] x [k, p] -> [m, p]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.as_matrix("matmul lhs")?;
        let (k2, p) = other.as_matrix("matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner extents differ: {} vs {}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * p];
        matmul_into(&self.data, &other.data, &mut out, m, k, p);
        Ok(Tensor {
            shape: Shape(vec![m, p]),
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.as_matrix("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: Shape(vec![n, m]),
            data: out,
        })
    }

    /// Channel-wise mean over the spatial extent: `[b, c, h, w] -> [b, c]`.
    pub fn global_average_pool(&self) -> Result<Tensor> {
        let &[b, c, h, w] = self.dims() else {
            return Err(Error::shape(format!(
                "global_average_pool expects rank 4, got {}",
                self.shape
            )));
        };
        let plane = h * w;
        let data = self
            .data
            .chunks_exact(plane)
            .map(|chunk| chunk.iter().sum::<f64>() / plane as f64)
            .collect();
        Ok(Tensor {
            shape: Shape(vec![b, c]),
            data,
        })
    }

    pub(crate) fn as_matrix(&self, what: &str) -> Result<(usize, usize)> {
        match self.dims() {
            &[m, n] => Ok((m, n)),
            _ => Err(Error::shape(format!("{what} expects rank 2, got {}", self.shape))),
        }
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "{what}: shapes differ ({} vs {})",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub(crate) fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{what} produced a non-finite value")))
        }
    }

    /// Builds a tensor without validating finiteness; shape must already match.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub(crate) fn raw(dims: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::from_parts(Shape(dims.to_vec()), data)
    }
}

/// Row-major `out += a[m,k] * b[k,p]`. Each output row depends only on the
/// matching row of `a`, so batching rows never changes per-row results.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, p: usize) {
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let brow = &b[t * p..(t + 1) * p];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zeros_examples() {
        assert_eq!(Tensor::zeros(&[2, 2]).unwrap().data(), &[0.0; 4]);
        assert_eq!(Tensor::zeros(&[1]).unwrap().data(), &[0.0]);
        let t = Tensor::zeros(&[3, 1, 1, 1]).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_rejects_zero_and_overflow() {
        assert!(matches!(Shape::new(&[2, 0]), Err(Error::Shape(_))));
        assert!(matches!(Shape::new(&[]), Err(Error::Shape(_))));
        assert!(matches!(
            Tensor::zeros(&[usize::MAX, 2]),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(eye.matmul(&m).unwrap(), m);
        let a = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[2, 3]).unwrap();
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        let r = Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap().relu();
        assert_eq!(r.data(), &[0.0, 2.0]);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        let a = Tensor::zeros(&[2]).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn exp_overflow_is_numeric_error() {
        let t = Tensor::from_vec(&[1], vec![1000.0]).unwrap();
        assert!(matches!(t.exp(), Err(Error::Numeric(_))));
    }

    #[test]
    fn gap_examples() {
        let ones = Tensor::ones(&[1, 3, 2, 2]).unwrap();
        assert_eq!(ones.global_average_pool().unwrap().data(), &[1.0, 1.0, 1.0]);
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(x.global_average_pool().unwrap().data(), &[3.0]);
        assert!(Tensor::zeros(&[2, 2]).unwrap().global_average_pool().is_err());
    }

    #[test]
    fn gap_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::uniform(&[2, 3, 4, 5], -1.0, 1.0, &mut rng).unwrap();
        let got = x.global_average_pool().unwrap();
        for b in 0..2 {
            for c in 0..3 {
                let mut acc = 0.0;
                for i in 0..4 {
                    for j in 0..5 {
                        acc += x.at(&[b, c, i, j]);
                    }
                }
                assert!((got.at(&[b, c]) - acc / 20.0).abs() < 1e-12);
            }
        }
    }
}
