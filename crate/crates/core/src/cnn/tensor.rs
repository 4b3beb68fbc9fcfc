use std::fmt;

use serde::{Deserialize, Serialize};

use super::CnnError;

/// Ordered list of extents: `[channels, height, width]` for feature maps,
/// `[features]` for flat vectors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct TensorShape(Vec<usize>);

impl TensorShape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self, CnnError> {
        let dims = dims.into();
        if dims.is_empty() {
            return Err(CnnError::InvalidShape("shape has no dimensions".into()));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(CnnError::InvalidShape(format!(
                "extent {pos} of {dims:?} is zero"
            )));
        }
        let mut total: u64 = 1;
        for &d in &dims {
            total = total
                .checked_mul(d as u64)
                .ok_or_else(|| CnnError::InvalidShape(format!("{dims:?} overflows u64")))?;
        }
        Ok(Self(dims))
    }

    pub fn flat(len: usize) -> Result<Self, CnnError> {
        Self::new(vec![len])
    }

    pub fn chw(c: usize, h: usize, w: usize) -> Result<Self, CnnError> {
        Self::new(vec![c, h, w])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn element_count(&self) -> u64 {
        self.0.iter().map(|&d| d as u64).product()
    }

    /// `(channels, height, width)` when the shape is a rank-3 feature map.
    pub fn as_chw(&self) -> Option<(usize, usize, usize)> {
        match self.0[..] {
            [c, h, w] => Some((c, h, w)),
            _ => None,
        }
    }
}

impl TryFrom<Vec<usize>> for TensorShape {
    type Error = CnnError;

    fn try_from(dims: Vec<usize>) -> Result<Self, Self::Error> {
        Self::new(dims)
    }
}

impl From<TensorShape> for Vec<usize> {
    fn from(shape: TensorShape) -> Self {
        shape.0
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// Row-major f32 activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: TensorShape,
    values: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: TensorShape, values: Vec<f32>) -> Result<Self, CnnError> {
        if values.len() as u64 != shape.element_count() {
            return Err(CnnError::ElementCount {
                expected: shape.element_count(),
                actual: values.len() as u64,
            });
        }
        Ok(Self { shape, values })
    }

    pub fn filled(shape: TensorShape, value: f32) -> Self {
        let n = shape.element_count() as usize;
        Self {
            shape,
            values: vec![value; n],
        }
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Same values viewed as a flat vector.
    pub fn flattened(self) -> Self {
        let n = self.values.len();
        Self {
            shape: TensorShape(vec![n]),
            values: self.values,
        }
    }

    /// Little-endian byte image of the values, for bit-exact comparisons.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}
