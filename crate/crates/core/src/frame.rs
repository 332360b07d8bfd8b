//! Per-frame raster types: depth, color, binary masks and class labels.

use crate::error::{Error, Result};

/// Class index of a pixel.
pub const BACKGROUND: u8 = 0;
pub const HAND: u8 = 1;
pub const OBJECT: u8 = 2;
pub const NUM_CLASSES: usize = 3;

fn check_dims(op: &'static str, width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(op, "dimensions must be positive"));
    }
    if width * height != len {
        return Err(Error::invalid(
            op,
            format!("{len} values for a {width}×{height} frame"),
        ));
    }
    Ok(())
}

/// Depth in millimeters; 0 marks a pixel with no sensor return.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<u16>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<u16>) -> Result<Self> {
        check_dims("DepthMap", width, height, values.len())?;
        Ok(DepthMap { width, height, values })
    }

    pub fn filled(width: usize, height: usize, mm: u16) -> Self {
        DepthMap {
            width,
            height,
            values: vec![mm; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn values(&self) -> &[u16] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [u16] {
        &mut self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, mm: u16) {
        self.values[y * self.width + x] = mm;
    }

    /// Smallest nonzero depth.
    pub fn min_valid(&self) -> Option<u16> {
        self.values.iter().copied().filter(|&v| v > 0).min()
    }
}

/// 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        check_dims("ColorImage", width, height, pixels.len())?;
        Ok(ColorImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        ColorImage {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims("BinaryMask", width, height, bits.len())?;
        Ok(BinaryMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// `self ⊆ other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_dims(other) && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        self.zip(other, |a, b| a && b)
    }

    pub fn and_not(&self, other: &BinaryMask) -> BinaryMask {
        self.zip(other, |a, b| a && !b)
    }

    pub fn or(&self, other: &BinaryMask) -> BinaryMask {
        self.zip(other, |a, b| a || b)
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> BinaryMask {
        assert!(self.same_dims(other), "mask dimensions differ");
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// Per-pixel class in {background, hand, object}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    classes: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, classes: Vec<u8>) -> Result<Self> {
        check_dims("LabelMap", width, height, classes.len())?;
        if let Some(&bad) = classes.iter().find(|&&c| c as usize >= NUM_CLASSES) {
            return Err(Error::LabelOutOfRange {
                value: bad,
                classes: NUM_CLASSES,
            });
        }
        Ok(LabelMap { width, height, classes })
    }

    pub fn filled(width: usize, height: usize, class: u8) -> Self {
        assert!((class as usize) < NUM_CLASSES);
        LabelMap {
            width,
            height,
            classes: vec![class; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.classes[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, class: u8) {
        assert!((class as usize) < NUM_CLASSES);
        self.classes[y * self.width + x] = class;
    }

    pub fn mask_of(&self, class: u8) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.classes.iter().map(|&c| c == class).collect(),
        }
    }

    /// Fraction of pixels with equal class.
    pub fn agreement(&self, other: &LabelMap) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let same = self.classes.iter().zip(&other.classes).filter(|(a, b)| a == b).count();
        same as f64 / self.classes.len() as f64
    }
}
