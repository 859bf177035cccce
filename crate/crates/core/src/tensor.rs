//! Dense row-major `f64` tensors.

use crate::error::{Error, Result};

/// A dense n-dimensional array stored in row-major order.
///
/// Every extent is positive and `shape.iter().product() == data.len()`.
/// A rank-0 tensor (empty shape) holds exactly one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("tensor", "positive extents", &shape));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} values for this shape, got {}", n, data.len()),
                &shape,
            ));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor whose shape/length agreement is known by construction.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Stacks equal-length rows into a `[rows, cols]` matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument(
                "from_rows needs a non-empty list of equal-length rows".into(),
            ));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Self::from_parts(vec![rows.len(), cols], data))
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Element at a multi-index; panics when out of range.
    pub fn at(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            assert!(i < d, "index {i} out of range for extent {d}");
            flat = flat * d + i;
        }
        self.data[flat]
    }

    /// Interprets a rank-2 `[C, T]` or rank-3 `[B, C, T]` tensor as `(B, C, T)`.
    pub(crate) fn btc(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, t] => Ok((1, c, t)),
            [b, c, t] => Ok((b, c, t)),
            _ => Err(Error::shape(op, "[C, T] or [B, C, T]", &self.shape)),
        }
    }

    /// Elementwise `self + other` for identical shapes.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape("add", format!("{:?}", self.shape), &other.shape));
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        self.map(|x| x * factor)
    }

    /// Narrows a rank-2 `[C, T]` tensor to channels `start..start + len`.
    pub fn channel_slice(&self, start: usize, len: usize) -> Result<Tensor> {
        let (b, c, t) = self.btc("channel_slice")?;
        if start + len > c || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "channel_slice {start}..{} out of {c}",
                start + len
            )));
        }
        let mut out = Vec::with_capacity(b * len * t);
        for bi in 0..b {
            let base = bi * c * t;
            out.extend_from_slice(&self.data[base + start * t..base + (start + len) * t]);
        }
        let mut shape = self.shape.clone();
        let rank = shape.len();
        shape[rank - 2] = len;
        Ok(Self::from_parts(shape, out))
    }

    /// Concatenates rank-2 `[C_i, T]` (or rank-3 `[B, C_i, T]`) tensors along channels.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let (b, _, t) = first.btc("concat_channels")?;
        let mut total = 0;
        for p in parts {
            let (pb, pc, pt) = p.btc("concat_channels")?;
            if pb != b || pt != t || p.rank() != first.rank() {
                return Err(Error::shape("concat_channels", format!("batch {b}, T {t}"), p.shape()));
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(b * total * t);
        for bi in 0..b {
            for p in parts {
                let (_, pc, _) = p.btc("concat_channels")?;
                out.extend_from_slice(&p.data[bi * pc * t..(bi + 1) * pc * t]);
            }
        }
        let mut shape = first.shape.clone();
        let rank = shape.len();
        shape[rank - 2] = total;
        Ok(Self::from_parts(shape, out))
    }
}
