//! Automatic 3-class labelling of aligned depth/color frame pairs.
//!
//! The pipeline keeps pixels within a fixed depth band behind the nearest
//! valid return, splits them into skin and non-skin by HSV thresholds,
//! cleans each mask morphologically and finally drops segments that are
//! too small or too elongated to be a real hand or object region.

mod components;
mod hsv;
mod morph;

pub use components::{connected_components, contour_filter, Segment};
pub use hsv::{hsv_threshold, rgb_to_hsv, Hsv, HsvImage, HsvThresholds};
pub use morph::{close, dilate, erode, morph_filter, open};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{BinaryMask, ColorImage, DepthMap, LabelMap, BACKGROUND, HAND, OBJECT};

pub const DEFAULT_RANGE_MM: f64 = 160.0;

/// Tunable parameters of the annotation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationParams {
    pub thresholds: HsvThresholds,
    /// Minimum segment area (exclusive), pixels.
    pub theta: f64,
    /// Maximum compactness `perimeter²/area` (exclusive).
    pub phi: f64,
    pub range_mm: f64,
    pub morph_radius: usize,
}

impl Default for AnnotationParams {
    fn default() -> Self {
        AnnotationParams {
            thresholds: HsvThresholds::default(),
            theta: 64.0,
            phi: 64.0,
            range_mm: DEFAULT_RANGE_MM,
            morph_radius: 1,
        }
    }
}

impl AnnotationParams {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if !(self.theta >= 0.0) || !(self.phi > 0.0) {
            return Err(Error::invalid("AnnotationParams", "need theta ≥ 0 and phi > 0"));
        }
        if !(self.range_mm > 0.0) {
            return Err(Error::invalid("AnnotationParams", "range_mm must be positive"));
        }
        Ok(())
    }
}

/// Pixels with `0 < depth ≤ nearest + range_mm`.
pub fn crop_depth_range(depth: &DepthMap, range_mm: f64) -> Result<BinaryMask> {
    let nearest = depth.min_valid().ok_or(Error::EmptyFrame)? as f64;
    let limit = nearest + range_mm;
    BinaryMask::new(
        depth.width(),
        depth.height(),
        depth.values().iter().map(|&d| d > 0 && d as f64 <= limit).collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub labels: LabelMap,
    /// Set when no hand survived filtering; such frames should go to review.
    pub needs_review: bool,
}

pub fn annotate_frame(depth: &DepthMap, color: &ColorImage, params: &AnnotationParams) -> Result<LabelMap> {
    Ok(annotate(depth, color, params)?.labels)
}

pub fn annotate(depth: &DepthMap, color: &ColorImage, params: &AnnotationParams) -> Result<Annotation> {
    if (depth.width(), depth.height()) != (color.width(), color.height()) {
        return Err(Error::invalid(
            "annotate_frame",
            format!(
                "depth is {}×{} but color is {}×{}",
                depth.width(),
                depth.height(),
                color.width(),
                color.height()
            ),
        ));
    }
    let fg = crop_depth_range(depth, params.range_mm)?;
    let hsv = rgb_to_hsv(color);
    let (hand, object) = hsv_threshold(&hsv, &fg, &params.thresholds);
    // Closing may bridge into invalid or far pixels; those stay background.
    let clean = |m: &BinaryMask| contour_filter(&morph_filter(m, params.morph_radius).and(&fg), params.theta, params.phi);
    let hand = clean(&hand);
    let object = clean(&object);
    let classes = hand
        .bits()
        .iter()
        .zip(object.bits())
        .map(|(&h, &o)| match (h, o) {
            (true, _) => HAND,
            (false, true) => OBJECT,
            _ => BACKGROUND,
        })
        .collect();
    Ok(Annotation {
        labels: LabelMap::new(depth.width(), depth.height(), classes)?,
        needs_review: hand.is_empty(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SKIN: [u8; 3] = [224, 172, 140];
    const BLUE: [u8; 3] = [40, 80, 200];

    /// 48×48 frame: blue square object at 520 mm, skin disc at 450 mm
    /// overlapping its corner, far wall at 900 mm elsewhere.
    fn disc_on_object() -> (DepthMap, ColorImage, LabelMap) {
        let (w, h) = (48, 48);
        let mut depth = DepthMap::filled(w, h, 900);
        let mut color = ColorImage::filled(w, h, [90, 90, 90]);
        let mut labels = LabelMap::filled(w, h, BACKGROUND);
        for y in 0..h {
            for x in 0..w {
                let in_disc = (x as f64 - 18.0).powi(2) + (y as f64 - 18.0).powi(2) <= 100.0;
                let in_square = (20..40).contains(&x) && (16..40).contains(&y);
                if in_disc {
                    depth.set(x, y, 450);
                    color.set(x, y, SKIN);
                    labels.set(x, y, HAND);
                } else if in_square {
                    depth.set(x, y, 520);
                    color.set(x, y, BLUE);
                    labels.set(x, y, OBJECT);
                }
            }
        }
        (depth, color, labels)
    }

    #[test]
    fn crop_uniform_plateau() {
        let m = crop_depth_range(&DepthMap::filled(4, 3, 500), 160.0).unwrap();
        assert_eq!(m.count(), 12);
    }

    #[test]
    fn crop_two_plateaus_and_invalid() {
        let mut d = DepthMap::new(6, 1, vec![400, 400, 0, 700, 700, 400]).unwrap();
        let m = crop_depth_range(&d, 160.0).unwrap();
        assert_eq!(m.bits(), &[true, true, false, false, false, true]);
        d.set(5, 0, 560);
        assert!(crop_depth_range(&d, 160.0).unwrap().get(5, 0));
        d.set(5, 0, 561);
        assert!(!crop_depth_range(&d, 160.0).unwrap().get(5, 0));
    }

    #[test]
    fn crop_all_invalid_is_empty_frame() {
        let err = crop_depth_range(&DepthMap::filled(3, 3, 0), 160.0).unwrap_err();
        assert!(matches!(err, Error::EmptyFrame));
        assert!(err.to_string().contains("empty frame"));
    }

    #[test]
    fn disc_on_object_matches_ground_truth() {
        let (depth, color, truth) = disc_on_object();
        let fg = crop_depth_range(&depth, 160.0).unwrap();
        let (hand, obj) = hsv_threshold(&rgb_to_hsv(&color), &fg, &HsvThresholds::default());
        assert_eq!(hand, truth.mask_of(HAND));
        assert_eq!(obj, truth.mask_of(OBJECT));

        let ann = annotate(&depth, &color, &AnnotationParams::default()).unwrap();
        assert!(!ann.needs_review);
        assert!(ann.labels.agreement(&truth) >= 0.99, "{}", ann.labels.agreement(&truth));
    }

    #[test]
    fn color_noise_is_absorbed() {
        let (depth, color, _) = disc_on_object();
        let clean = annotate_frame(&depth, &color, &AnnotationParams::default()).unwrap();
        let mut noisy = color.clone();
        // Interior pixels only: each flipped pixel has a uniform 5×5 patch.
        noisy.set(18, 18, BLUE);
        noisy.set(15, 21, BLUE);
        noisy.set(33, 33, SKIN);
        noisy.set(26, 36, SKIN);
        assert_eq!(annotate_frame(&depth, &noisy, &AnnotationParams::default()).unwrap(), clean);
    }

    #[test]
    fn background_only_frame() {
        let depth = DepthMap::filled(20, 20, 600);
        let color = ColorImage::filled(20, 20, [10, 200, 10]);
        let params = AnnotationParams {
            thresholds: HsvThresholds::nothing(),
            phi: 1.0,
            ..Default::default()
        };
        let ann = annotate(&depth, &color, &params).unwrap();
        assert!(ann.labels.classes().iter().all(|&c| c == BACKGROUND));
        assert!(ann.needs_review);
    }

    #[test]
    fn labels_stay_inside_depth_band() {
        let (mut depth, color, _) = disc_on_object();
        // Invalid pixel inside the hand: closing would otherwise fill it.
        depth.set(18, 18, 0);
        let labels = annotate_frame(&depth, &color, &AnnotationParams::default()).unwrap();
        let fg = crop_depth_range(&depth, 160.0).unwrap();
        assert_eq!(labels.get(18, 18), BACKGROUND);
        for (i, &c) in labels.classes().iter().enumerate() {
            assert!(c == BACKGROUND || fg.bits()[i]);
        }
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let depth = DepthMap::filled(4, 4, 500);
        let color = ColorImage::filled(4, 5, SKIN);
        assert!(annotate_frame(&depth, &color, &AnnotationParams::default()).is_err());
    }
}
