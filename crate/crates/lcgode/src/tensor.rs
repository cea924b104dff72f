//! Dense row-major f64 arrays with up to two dimensions.
//!
//! Scalars have an empty shape, vectors `[n]`, matrices `[r, c]`. This is
//! the only value type the tape and the model operate on.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "shape {:?} does not match {} elements",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length mismatch");
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(&other.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
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

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of {} elements", self.data.len());
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            _ => 1,
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.ndim(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        details: format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape()),
    }
}

/// Matrix product. Accepts (r,c)x(c,k) -> (r,k) and (r,c)x(c) -> (r).
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    match (a.ndim(), b.ndim()) {
        (2, 2) => {
            let (r, c) = (a.shape[0], a.shape[1]);
            let (c2, k) = (b.shape[0], b.shape[1]);
            if c != c2 {
                return Err(mismatch("matmul", a, b));
            }
            let mut out = vec![0.0; r * k];
            for i in 0..r {
                for j in 0..c {
                    let aij = a.data[i * c + j];
                    if aij == 0.0 {
                        continue;
                    }
                    let brow = &b.data[j * k..(j + 1) * k];
                    let orow = &mut out[i * k..(i + 1) * k];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += aij * bv;
                    }
                }
            }
            Ok(Tensor::matrix(r, k, out))
        }
        (2, 1) => {
            let (r, c) = (a.shape[0], a.shape[1]);
            if c != b.shape[0] {
                return Err(mismatch("matmul", a, b));
            }
            let mut out = vec![0.0; r];
            for i in 0..r {
                let mut acc = 0.0;
                for j in 0..c {
                    acc += a.data[i * c + j] * b.data[j];
                }
                out[i] = acc;
            }
            Ok(Tensor::vector(out))
        }
        _ => Err(mismatch("matmul", a, b)),
    }
}

/// A^T v for a (r,c) matrix and an r-vector.
pub fn matvec_t(a: &Tensor, v: &Tensor) -> Result<Tensor> {
    if a.ndim() != 2 || v.ndim() != 1 || a.shape[0] != v.shape[0] {
        return Err(mismatch("matvec_t", a, v));
    }
    let (r, c) = (a.shape[0], a.shape[1]);
    let mut out = vec![0.0; c];
    for i in 0..r {
        let vi = v.data[i];
        if vi == 0.0 {
            continue;
        }
        for j in 0..c {
            out[j] += a.data[i * c + j] * vi;
        }
    }
    Ok(Tensor::vector(out))
}

/// Outer product u v^T of an r-vector and a c-vector.
pub fn outer(u: &Tensor, v: &Tensor) -> Result<Tensor> {
    if u.ndim() != 1 || v.ndim() != 1 {
        return Err(mismatch("outer", u, v));
    }
    let (r, c) = (u.shape[0], v.shape[0]);
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[i * c + j] = u.data[i] * v.data[j];
        }
    }
    Ok(Tensor::matrix(r, c, out))
}

/// Elementwise combination. Shapes must match, or one side must be a
/// one-element tensor which is broadcast over the other.
pub fn zip(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape == b.shape {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor {
            shape: a.shape.clone(),
            data,
        })
    } else if b.is_scalar() {
        let s = b.data[0];
        Ok(a.map(|x| f(x, s)))
    } else if a.is_scalar() {
        let s = a.data[0];
        Ok(b.map(|y| f(s, y)))
    } else {
        Err(mismatch(op, a, b))
    }
}
