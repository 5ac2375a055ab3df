//! In-memory raster types shared by ingest, the shadow estimator and the
//! scene renderer.

use crate::error::{Error, Result};
use crate::geo::{EnuPoint, UtmPoint};

/// 8-bit RGB image with its ground georeference.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbRaster {
    pub width: usize,
    pub height: usize,
    /// Row-major R,G,B triples; row 0 is the northern edge.
    pub pixels: Vec<u8>,
    pub gsd_m: f64,
    /// UTM position of the center of pixel (0, 0).
    pub origin_utm: UtmPoint,
}

impl RgbRaster {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<u8>,
        gsd_m: f64,
        origin_utm: UtmPoint,
    ) -> Result<Self> {
        if width * height * 3 != pixels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} RGB needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        if !(gsd_m.is_finite() && gsd_m > 0.0) {
            return Err(Error::invalid("gsd_m", format!("{gsd_m} must be > 0")));
        }
        Ok(RgbRaster {
            width,
            height,
            pixels,
            gsd_m,
            origin_utm,
        })
    }

    #[inline]
    pub fn rgb(&self, col: usize, row: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Single-channel 8-bit luminance raster.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
    pub gsd_m: f64,
}

impl GrayRaster {
    pub fn new(width: usize, height: usize, values: Vec<u8>, gsd_m: f64) -> Result<Self> {
        if width * height != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} gray needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(GrayRaster {
            width,
            height,
            values,
            gsd_m,
        })
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.values[row * self.width + col]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                bits.push(f(col, row));
            }
        }
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, width: usize, height: usize) -> Result<()> {
        if self.width == width && self.height == height {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs raster {width}x{height}",
                self.width, self.height
            )))
        }
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        other.same_shape(self.width, self.height)?;
        Ok(BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        })
    }
}

/// Maps pixel indices to the local ENU frame: column grows east, row grows
/// south, and `origin_enu` is the center of pixel (0, 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelFrame {
    pub gsd_m: f64,
    pub origin_enu: EnuPoint,
}

impl PixelFrame {
    pub fn pixel_center(&self, col: f64, row: f64) -> EnuPoint {
        EnuPoint::new(
            self.origin_enu.e + col * self.gsd_m,
            self.origin_enu.n - row * self.gsd_m,
        )
    }
}
