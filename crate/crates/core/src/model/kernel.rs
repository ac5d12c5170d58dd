//! Per-kernel shapes, layer strides and the extent caps that bound them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width × height of one convolution kernel, both odd and at least 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelShape {
    width: usize,
    height: usize,
}

impl KernelShape {
    pub const UNIT: KernelShape = KernelShape {
        width: 1,
        height: 1,
    };

    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(Error::structural(format!(
                "kernel extents must be odd, got {width}×{height}"
            )));
        }
        Ok(KernelShape { width, height })
    }

    #[inline]
    pub fn width(self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(self) -> usize {
        self.height
    }

    #[inline]
    pub fn area(self) -> usize {
        self.width * self.height
    }

    pub fn extent(self, dim: Dim) -> usize {
        match dim {
            Dim::Height => self.height,
            Dim::Width => self.width,
        }
    }

    /// Copy with one extent replaced. The new extent must be odd.
    pub fn with_extent(self, dim: Dim, extent: usize) -> Result<Self> {
        match dim {
            Dim::Height => KernelShape::new(self.width, extent),
            Dim::Width => KernelShape::new(extent, self.height),
        }
    }
}

impl fmt::Display for KernelShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}×{}", self.width, self.height)
    }
}

/// Spatial dimension selector for kernel and stride mutations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dim {
    Height,
    Width,
}

impl Dim {
    pub const BOTH: [Dim; 2] = [Dim::Height, Dim::Width];
}

/// Convolution step `(rows, cols)`, both at least 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stride {
    pub h: usize,
    pub w: usize,
}

impl Stride {
    pub const UNIT: Stride = Stride { h: 1, w: 1 };

    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::structural("stride components must be at least 1"));
        }
        Ok(Stride { h, w })
    }

    pub fn get(self, dim: Dim) -> usize {
        match dim {
            Dim::Height => self.h,
            Dim::Width => self.w,
        }
    }

    pub fn set(&mut self, dim: Dim, value: usize) {
        match dim {
            Dim::Height => self.h = value,
            Dim::Width => self.w = value,
        }
    }

    pub fn area(self) -> usize {
        self.h * self.w
    }
}

impl fmt::Display for Stride {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.h, self.w)
    }
}

/// Largest legal kernel extent for an input of `input_extent` elements: at most
/// half the input (but never below 1), rounded down to an odd value.
pub fn kernel_extent_cap(input_extent: usize) -> usize {
    let half = (input_extent / 2).max(1);
    if half.is_multiple_of(2) {
        half - 1
    } else {
        half
    }
}

/// Largest stride worth using on an input of `input_extent` elements; any larger
/// step yields the same single output position.
pub fn stride_cap(input_extent: usize) -> usize {
    input_extent.max(1)
}

/// Padding that keeps stride-1 outputs the size of the input: half the largest
/// kernel extent in each dimension, rounded down. Returned as `(rows, cols)`.
pub fn derived_padding(shapes: impl IntoIterator<Item = KernelShape>) -> (usize, usize) {
    let (mut h, mut w) = (1, 1);
    for s in shapes {
        h = h.max(s.height);
        w = w.max(s.width);
    }
    (h / 2, w / 2)
}
