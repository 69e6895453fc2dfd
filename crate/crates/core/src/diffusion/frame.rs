use std::fmt;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FrameShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    /// Number of scalar entries, `C * H * W`.
    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for FrameShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Channel-major pixel buffer. Clean frames live in `[0, 1]`; noisy frames
/// and noise fields share the type but are unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    shape: FrameShape,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(shape: FrameShape, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != shape.len() {
            return Err(Error::shape(shape.len(), pixels.len()));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::arg("frame pixels must be finite"));
        }
        Ok(Self { shape, pixels })
    }

    pub(crate) fn from_raw(shape: FrameShape, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), shape.len());
        Self { shape, pixels }
    }

    pub fn zeros(shape: FrameShape) -> Self {
        Self { shape, pixels: vec![0.0; shape.len()] }
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    /// Pixel at `(c, y, x)`.
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.shape.height + y) * self.shape.width + x]
    }

    pub fn is_clean(&self) -> bool {
        self.pixels.iter().all(|p| (0.0..=1.0).contains(p))
    }

    pub fn squared_distance(&self, other: &Frame) -> f64 {
        self.pixels.iter().zip(&other.pixels).map(|(a, b)| (a - b) * (a - b)).sum()
    }
}
