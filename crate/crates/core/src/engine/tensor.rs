//! Dense row-major `f64` tensors and the forward kernels used by the tape.
//!
//! Every op treats its operands as matrices: rank-0 is `1x1`, rank-1 of
//! length `n` is `1xn`, rank-2 is itself. Higher ranks are rejected.

use std::fmt;

use super::EngineError;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, EngineError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(EngineError::Shape {
                op: "new",
                detail: format!("shape {:?} needs {} values, got {}", shape, expected, data.len()),
            });
        }
        if shape.len() > 2 {
            return Err(EngineError::Shape {
                op: "new",
                detail: format!("rank {} not supported", shape.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// A `1xn` row vector.
    pub fn row(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, EngineError> {
        Self::new(vec![rows, cols], data)
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

    /// `(rows, cols)` under the matrix view described in the module docs.
    pub fn dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("rank checked at construction"),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims().0
    }

    pub fn cols(&self) -> usize {
        self.dims().1
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64, EngineError> {
        if self.data.len() != 1 {
            return Err(EngineError::Shape {
                op: "item",
                detail: format!("expected one element, shape is {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn with_dims(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub(crate) fn transpose(&self) -> Tensor {
        let (r, c) = self.dims();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::with_dims(c, r, out)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, EngineError> {
    let (m, k) = a.dims();
    let (k2, n) = b.dims();
    if k != k2 {
        return Err(EngineError::Shape {
            op: "matmul",
            detail: format!("{:?} x {:?}", a.shape(), b.shape()),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a.data[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Ok(Tensor::with_dims(m, n, out))
}

/// Elementwise sum of equal shapes, or a matrix plus a `1xc` row broadcast
/// over every row.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, EngineError> {
    let (ar, ac) = a.dims();
    let (br, bc) = b.dims();
    if ar == br && ac == bc {
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
        return Ok(Tensor::with_dims(ar, ac, data));
    }
    if br == 1 && ac == bc {
        let mut data = a.data.clone();
        for row in data.chunks_mut(ac) {
            for (x, y) in row.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        return Ok(Tensor::with_dims(ar, ac, data));
    }
    Err(EngineError::Shape {
        op: "add",
        detail: format!("{:?} + {:?}", a.shape(), b.shape()),
    })
}

/// Column-wise concatenation of matrices sharing a row count.
pub fn concat(parts: &[&Tensor]) -> Result<Tensor, EngineError> {
    let Some(first) = parts.first() else {
        return Err(EngineError::Shape {
            op: "concat",
            detail: "no inputs".into(),
        });
    };
    let rows = first.rows();
    if let Some(bad) = parts.iter().find(|p| p.rows() != rows) {
        return Err(EngineError::Shape {
            op: "concat",
            detail: format!("row count {} vs {}", rows, bad.rows()),
        });
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row_slice(r));
        }
    }
    Ok(Tensor::with_dims(rows, cols, data))
}

pub fn relu(a: &Tensor) -> Tensor {
    let (r, c) = a.dims();
    Tensor::with_dims(r, c, a.data.iter().map(|&v| v.max(0.0)).collect())
}

/// Softmax of `a / temperature` over all elements, returned as a `1xn` row.
pub fn softmax(a: &Tensor, temperature: f64) -> Result<Tensor, EngineError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(EngineError::Domain(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if a.is_empty() {
        return Err(EngineError::Shape {
            op: "softmax",
            detail: "empty input".into(),
        });
    }
    let max = a.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = a
        .data
        .iter()
        .map(|&v| ((v - max) / temperature).exp())
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(Tensor::row(out))
}

/// Squared L2 distance `||a - b||^2` as a `1x1` tensor.
pub fn l2_sq(a: &Tensor, b: &Tensor) -> Result<Tensor, EngineError> {
    if a.len() != b.len() {
        return Err(EngineError::Shape {
            op: "l2_sq",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let s = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(Tensor::scalar(s))
}
