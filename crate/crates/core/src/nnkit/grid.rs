use crate::error::{Error, Result};
use crate::nnkit::Scalar;
use crate::Real;

/// Dense feature map, channel-major (`values[(c * height + y) * width + x]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<S: Scalar = Real> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<S>,
}

impl<S: Scalar> Grid<S> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![S::zero(); channels * height * width],
        }
    }

    pub fn from_values(channels: usize, height: usize, width: usize, values: Vec<S>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::config("grid dimensions must be positive"));
        }
        if values.len() != channels * height * width {
            return Err(Error::config(format!(
                "grid {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> S {
        self.values[self.index(c, y, x)]
    }

    pub fn plane(&self, c: usize) -> &[S] {
        let n = self.plane_len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn same_dims(&self, other: &Grid<S>) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}
