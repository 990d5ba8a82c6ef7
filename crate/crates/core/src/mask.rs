//! Binary image masks and their run-length wire encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// H×W binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension {
                what: "mask",
                expected: height * width,
                got: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.data[v * self.width + u] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_rle(&self) -> RleMask {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &self.data {
            if b == current {
                run += 1;
            } else {
                counts.push(run);
                current = b;
                run = 1;
            }
        }
        counts.push(run);
        RleMask {
            size: [self.height, self.width],
            counts,
        }
    }
}

/// Uncompressed run-length encoding: alternating run lengths over the row-major
/// pixel sequence, starting with a (possibly empty) run of zeros.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

impl RleMask {
    pub fn decode(&self) -> Result<BinaryMask> {
        let [height, width] = self.size;
        let total = height * width;
        let mut data = Vec::with_capacity(total);
        let mut value = false;
        for &run in &self.counts {
            data.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        if data.len() != total {
            return Err(Error::Oracle(format!(
                "run-length mask covers {} pixels, expected {}",
                data.len(),
                total
            )));
        }
        BinaryMask::from_vec(height, width, data)
    }
}
