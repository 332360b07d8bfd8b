//! Binary morphology with a square structuring element.
//!
//! Neighborhoods are clipped to the image, so erosion and dilation stay an
//! adjoint pair at the border and opening/closing keep their usual algebra.

use crate::frame::BinaryMask;

fn window(mask: &BinaryMask, radius: usize, any: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    BinaryMask::from_fn(w, h, |x, y| {
        let ys = y.saturating_sub(radius)..=(y + radius).min(h - 1);
        let mut hit = !any;
        'outer: for yy in ys {
            for xx in x.saturating_sub(radius)..=(x + radius).min(w - 1) {
                if mask.get(xx, yy) == any {
                    hit = any;
                    break 'outer;
                }
            }
        }
        hit
    })
}

pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    window(mask, radius, false)
}

pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    window(mask, radius, true)
}

pub fn open(mask: &BinaryMask, radius: usize) -> BinaryMask {
    dilate(&erode(mask, radius), radius)
}

pub fn close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    erode(&dilate(mask, radius), radius)
}

/// Opening followed by closing with a `(2r+1)×(2r+1)` square.
pub fn morph_filter(mask: &BinaryMask, radius: usize) -> BinaryMask {
    close(&open(mask, radius), radius)
}
