use crate::error::{Error, Result};
use crate::real::Real;

/// A `T × d` matrix of per-frame acoustic features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T = f64> {
    data: Vec<T>,
    dim: usize,
}

impl<T: Real> FeatureSequence<T> {
    /// Build from row-major data. Fails unless `data.len()` is a positive
    /// multiple of `dim` and every entry is finite.
    pub fn new(data: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("feature dimension must be positive".into()));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(Error::Input(format!(
                "{} values do not form whole frames of dimension {dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite feature at frame {}, coefficient {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn from_frames(frames: &[Vec<T>]) -> Result<Self> {
        let dim = frames.first().map_or(0, Vec::len);
        if frames.iter().any(|f| f.len() != dim) {
            return Err(Error::Input("frames have inconsistent dimension".into()));
        }
        Self::new(frames.concat(), dim)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[T] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Input(format!(
                "frame range [{start}, {end}) is empty or outside 0..{}",
                self.len()
            )));
        }
        Ok(Self {
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            dim: self.dim,
        })
    }

    pub fn cast<U: Real>(&self) -> FeatureSequence<U> {
        FeatureSequence {
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
            dim: self.dim,
        }
    }

    pub fn map<U: Real>(&self, f: impl Fn(usize, T) -> U) -> FeatureSequence<U> {
        let dim = self.dim;
        FeatureSequence {
            data: self
                .data
                .iter()
                .enumerate()
                .map(|(i, &v)| f(i % dim, v))
                .collect(),
            dim,
        }
    }
}
