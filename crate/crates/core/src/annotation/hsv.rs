use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{BinaryMask, ColorImage};

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

impl Hsv {
    /// Hexcone conversion. Gray pixels get `h = 0, s = 0`.
    pub fn from_rgb([r, g, b]: [u8; 3]) -> Hsv {
        let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let delta = max - min;
        let s = if max > 0.0 { delta / max } else { 0.0 };
        let h = if delta == 0.0 {
            0.0
        } else if max == r {
            60.0 * ((g - b) / delta)
        } else if max == g {
            60.0 * ((b - r) / delta + 2.0)
        } else {
            60.0 * ((r - g) / delta + 4.0)
        };
        let h = if h < 0.0 { h + 360.0 } else { h };
        Hsv { h, s, v: max }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    width: usize,
    height: usize,
    pixels: Vec<Hsv>,
}

impl HsvImage {
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn pixels(&self) -> &[Hsv] {
        &self.pixels
    }
    pub fn get(&self, x: usize, y: usize) -> Hsv {
        self.pixels[y * self.width + x]
    }
}

pub fn rgb_to_hsv(color: &ColorImage) -> HsvImage {
    HsvImage {
        width: color.width(),
        height: color.height(),
        pixels: color.pixels().iter().map(|&p| Hsv::from_rgb(p)).collect(),
    }
}

/// Inclusive bounds on each HSV channel describing skin.
///
/// The hue interval wraps through 0° when `hue_lo > hue_hi`, so the
/// red-centred skin band `[340, 360) ∪ [0, 25]` is `hue_lo = 340, hue_hi = 25`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvThresholds {
    pub hue_lo: f64,
    pub hue_hi: f64,
    pub sat_lo: f64,
    pub sat_hi: f64,
    pub val_lo: f64,
    pub val_hi: f64,
}

impl Default for HsvThresholds {
    fn default() -> Self {
        HsvThresholds {
            hue_lo: 340.0,
            hue_hi: 25.0,
            sat_lo: 0.2,
            sat_hi: 0.8,
            val_lo: 0.3,
            val_hi: 1.0,
        }
    }
}

impl HsvThresholds {
    /// Bounds that accept no pixel.
    pub fn nothing() -> Self {
        HsvThresholds {
            hue_lo: 0.0,
            hue_hi: 360.0,
            sat_lo: 1.0,
            sat_hi: 1.0,
            val_lo: 2.0,
            val_hi: 2.0,
        }
    }

    /// Bounds that accept every pixel.
    pub fn everything() -> Self {
        HsvThresholds {
            hue_lo: 0.0,
            hue_hi: 360.0,
            sat_lo: 0.0,
            sat_hi: 1.0,
            val_lo: 0.0,
            val_hi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let hue_ok = (0.0..=360.0).contains(&self.hue_lo) && (0.0..=360.0).contains(&self.hue_hi);
        if !hue_ok {
            return Err(Error::invalid("HsvThresholds", "hue bounds must lie in [0, 360]"));
        }
        if self.sat_lo > self.sat_hi || self.val_lo > self.val_hi {
            return Err(Error::invalid("HsvThresholds", "lower bound exceeds upper bound"));
        }
        Ok(())
    }

    pub fn contains(&self, p: Hsv) -> bool {
        let hue = if self.hue_lo <= self.hue_hi {
            p.h >= self.hue_lo && p.h <= self.hue_hi
        } else {
            p.h >= self.hue_lo || p.h <= self.hue_hi
        };
        hue && (self.sat_lo..=self.sat_hi).contains(&p.s) && (self.val_lo..=self.val_hi).contains(&p.v)
    }
}

/// Splits the foreground into skin (hand) and non-skin (object) pixels.
pub fn hsv_threshold(hsv: &HsvImage, fg: &BinaryMask, t: &HsvThresholds) -> (BinaryMask, BinaryMask) {
    assert_eq!((hsv.width, hsv.height), (fg.width(), fg.height()), "hsv/mask dimensions differ");
    let skin = BinaryMask::new(
        hsv.width,
        hsv.height,
        hsv.pixels.iter().map(|&p| t.contains(p)).collect(),
    )
    .expect("dimensions checked");
    (fg.and(&skin), fg.and_not(&skin))
}
