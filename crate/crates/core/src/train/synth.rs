//! Procedural hand/object depth scenes with exact labels.
//!
//! A hand is an ellipse palm with 3–5 radial finger capsules on a near,
//! slightly tilted plane; the object is a disc or star-shaped polygon in a
//! non-skin color 30–110 mm behind it. Scenes are redrawn until every
//! labelled segment passes the default contour filter, so clean frames are
//! reproducible by the annotation pipeline.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::annotation::{connected_components, AnnotationParams};
use crate::error::{Error, Result};
use crate::frame::{ColorImage, DepthMap, LabelMap, BACKGROUND, HAND, OBJECT};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub depth: DepthMap,
    pub color: ColorImage,
    pub labels: LabelMap,
    /// Some hand pixel is 4-adjacent to a visible object pixel.
    pub contact: bool,
}

/// A rectangular skin-colored band injected into the background.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sliver {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Sliver {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x..self.x + self.width).contains(&x) && (self.y..self.y + self.height).contains(&y)
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

const MAX_ATTEMPTS: usize = 200;
/// Minimum frame side; smaller scenes cannot hold a hand and a sliver.
pub const MIN_SIZE: usize = 48;

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

fn seg_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn in_polygon(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.1 > p.1) != (b.1 > p.1) && p.0 < (b.0 - a.0) * (p.1 - a.1) / (b.1 - a.1) + a.0 {
            inside = !inside;
        }
        j = i;
    }
    inside
}

struct Hand {
    center: (f64, f64),
    axes: (f64, f64),
    angle: f64,
    fingers: Vec<((f64, f64), f64)>,
}

impl Hand {
    fn sample<R: Rng>(rng: &mut R, center: (f64, f64), s: f64) -> Hand {
        let axes = (rng.random_range(10.0..12.5) * s, rng.random_range(10.0..12.0) * s);
        let angle = rng.random_range(0.0..PI);
        let m = rng.random_range(3..=5);
        let spacing = rng.random_range(50.0f64..60.0).to_radians();
        let dir = rng.random_range(0.0..2.0 * PI);
        let fingers = (0..m)
            .map(|k| {
                let phi = dir + (k as f64 - (m - 1) as f64 / 2.0) * spacing;
                let len = axes.0.max(axes.1) + rng.random_range(6.0..9.0) * s;
                let tip = (center.0 + len * phi.cos(), center.1 + len * phi.sin());
                (tip, rng.random_range(2.0..2.5) * s)
            })
            .collect();
        Hand {
            center,
            axes,
            angle,
            fingers,
        }
    }

    fn contains(&self, p: (f64, f64)) -> bool {
        let (dx, dy) = (p.0 - self.center.0, p.1 - self.center.1);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let u = (dx * c + dy * s) / self.axes.0;
        let v = (-dx * s + dy * c) / self.axes.1;
        u * u + v * v <= 1.0 || self.fingers.iter().any(|&(tip, r)| seg_distance(p, self.center, tip) <= r)
    }
}

enum Shape {
    Disc((f64, f64), f64),
    Polygon(Vec<(f64, f64)>),
}

impl Shape {
    fn sample<R: Rng>(rng: &mut R, center: (f64, f64), s: f64) -> Shape {
        let r = rng.random_range(9.0..14.0) * s;
        if rng.random_bool(0.4) {
            return Shape::Disc(center, r);
        }
        let n = rng.random_range(5..=8);
        let rot = rng.random_range(0.0..2.0 * PI);
        let poly = (0..n)
            .map(|k| {
                let a = rot + 2.0 * PI * k as f64 / n as f64;
                let rr = r * rng.random_range(0.8..1.0);
                (center.0 + rr * a.cos(), center.1 + rr * a.sin())
            })
            .collect();
        Shape::Polygon(poly)
    }

    fn contains(&self, p: (f64, f64)) -> bool {
        match self {
            Shape::Disc(c, r) => (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2) <= r * r,
            Shape::Polygon(poly) => in_polygon(p, poly),
        }
    }
}

/// Every hand/object segment survives the default contour filter and the
/// scene leaves `margin` free pixels on all sides.
fn well_formed(labels: &LabelMap, margin: usize) -> bool {
    let p = AnnotationParams::default();
    let (w, h) = (labels.width(), labels.height());
    for class in [HAND, OBJECT] {
        let mask = labels.mask_of(class);
        if mask.is_empty() {
            return false;
        }
        for seg in connected_components(&mask) {
            if seg.area as f64 <= p.theta || seg.compactness() >= p.phi {
                return false;
            }
            if seg.pixels.iter().any(|&(x, y)| x < margin || y < margin || x + margin >= w || y + margin >= h) {
                return false;
            }
        }
    }
    true
}

fn has_contact(labels: &LabelMap) -> bool {
    let (w, h) = (labels.width(), labels.height());
    (0..h).any(|y| {
        (0..w).any(|x| {
            labels.get(x, y) == HAND
                && [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && labels.get(nx as usize, ny as usize) == OBJECT
                })
        })
    })
}

fn jitter<R: Rng>(rng: &mut R, base: (f64, f64, f64), spread: (f64, f64, f64)) -> [u8; 3] {
    hsv_to_rgb(
        base.0 + rng.random_range(-spread.0..=spread.0),
        (base.1 + rng.random_range(-spread.1..=spread.1)).clamp(0.0, 1.0),
        (base.2 + rng.random_range(-spread.2..=spread.2)).clamp(0.0, 1.0),
    )
}

/// Skin tone well inside the default HSV thresholds.
fn skin_base<R: Rng>(rng: &mut R) -> (f64, f64, f64) {
    (rng.random_range(6.0..18.0), rng.random_range(0.3..0.6), rng.random_range(0.55..0.9))
}

const SKIN_SPREAD: (f64, f64, f64) = (2.0, 0.03, 0.03);

pub fn synth_frame<R: Rng>(width: usize, height: usize, rng: &mut R) -> Result<SynthFrame> {
    if width < MIN_SIZE || height < MIN_SIZE {
        return Err(Error::invalid(
            "synth_frame",
            format!("frame {width}×{height} is smaller than {MIN_SIZE}×{MIN_SIZE}"),
        ));
    }
    let s = width.min(height) as f64 / 64.0;
    let margin = (8.0 * s).round() as usize;
    let (fw, fh) = (width as f64, height as f64);
    for _ in 0..MAX_ATTEMPTS {
        let hc = (
            rng.random_range(0.35..0.65) * fw,
            rng.random_range(0.35..0.65) * fh,
        );
        let hand = Hand::sample(rng, hc, s);
        let touching = rng.random_bool(0.5);
        let oc = if touching {
            let a = rng.random_range(0.0..2.0 * PI);
            let d = rng.random_range(10.0..18.0) * s;
            (hc.0 + d * a.cos(), hc.1 + d * a.sin())
        } else {
            (rng.random_range(0.2..0.8) * fw, rng.random_range(0.2..0.8) * fh)
        };
        let object = Shape::sample(rng, oc, s);

        let mut labels = LabelMap::filled(width, height, BACKGROUND);
        for y in 0..height {
            for x in 0..width {
                let p = (x as f64, y as f64);
                if hand.contains(p) {
                    labels.set(x, y, HAND);
                } else if object.contains(p) {
                    labels.set(x, y, OBJECT);
                }
            }
        }
        if !well_formed(&labels, margin) {
            continue;
        }
        return Ok(paint(labels, hc, rng));
    }
    Err(Error::invalid("synth_frame", "could not place a well-formed scene"))
}

fn paint<R: Rng>(labels: LabelMap, hc: (f64, f64), rng: &mut R) -> SynthFrame {
    let (width, height) = (labels.width(), labels.height());
    let d0 = rng.random_range(450.0..700.0);
    let plane = |rng: &mut R, g: f64| (rng.random_range(-g..g), rng.random_range(-g..g));
    let hg = plane(rng, 0.25);
    let og = plane(rng, 0.3);
    let obj_offset = rng.random_range(30.0..110.0);
    let far = rng.random_bool(0.75).then(|| (d0 + rng.random_range(260.0..600.0), plane(rng, 2.0)));
    let skin = skin_base(rng);
    let obj_hsv = (rng.random_range(70.0..290.0), rng.random_range(0.4..0.9), rng.random_range(0.35..0.9));
    let bg_gray: f64 = rng.random_range(40.0..200.0);

    let mut depth = DepthMap::filled(width, height, 0);
    let mut color = ColorImage::filled(width, height, [0, 0, 0]);
    for y in 0..height {
        for x in 0..width {
            let (dx, dy) = (x as f64 - hc.0, y as f64 - hc.1);
            let (d, rgb) = match labels.get(x, y) {
                HAND => (d0 + hg.0 * dx + hg.1 * dy, jitter(rng, skin, SKIN_SPREAD)),
                OBJECT => (d0 + obj_offset + og.0 * dx + og.1 * dy, jitter(rng, obj_hsv, (3.0, 0.03, 0.03))),
                _ => {
                    let v = (bg_gray + rng.random_range(-10.0..10.0)).round().clamp(0.0, 255.0) as u8;
                    let d = far.map_or(0.0, |(fd, g)| fd + g.0 * dx + g.1 * dy);
                    (d, [v, v, v.saturating_add(8)])
                }
            };
            depth.set(x, y, d.round().clamp(0.0, u16::MAX as f64) as u16);
            color.set(x, y, rgb);
        }
    }
    let contact = has_contact(&labels);
    SynthFrame {
        depth,
        color,
        labels,
        contact,
    }
}

pub fn synth_dataset<R: Rng>(n: usize, width: usize, height: usize, rng: &mut R) -> Result<Vec<SynthFrame>> {
    if n == 0 {
        return Err(Error::invalid("synth_dataset", "need at least one frame"));
    }
    (0..n).map(|_| synth_frame(width, height, rng)).collect()
}

/// Flips the color class of up to `count` isolated hand/object pixels whose
/// 5×5 neighborhood is uniformly labelled; noisy pixels are at least five
/// pixels apart. Returns the flipped coordinates.
pub fn inject_color_noise<R: Rng>(frame: &mut SynthFrame, count: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let (w, h) = (frame.labels.width(), frame.labels.height());
    let mut candidates = Vec::new();
    for y in 2..h.saturating_sub(2) {
        for x in 2..w.saturating_sub(2) {
            let c = frame.labels.get(x, y);
            if c != BACKGROUND && (y - 2..=y + 2).all(|yy| (x - 2..=x + 2).all(|xx| frame.labels.get(xx, yy) == c)) {
                candidates.push((x, y));
            }
        }
    }
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    let skin = skin_base(rng);
    while chosen.len() < count && !candidates.is_empty() {
        let (x, y) = candidates.swap_remove(rng.random_range(0..candidates.len()));
        if chosen.iter().any(|&(cx, cy)| cx.abs_diff(x) < 5 && cy.abs_diff(y) < 5) {
            continue;
        }
        let rgb = if frame.labels.get(x, y) == HAND {
            hsv_to_rgb(rng.random_range(150.0..250.0), 0.7, 0.6)
        } else {
            jitter(rng, skin, SKIN_SPREAD)
        };
        frame.color.set(x, y, rgb);
        chosen.push((x, y));
    }
    chosen
}

/// Paints a 3-pixel-wide skin band into the background, within the
/// annotation depth range and at least 4 pixels from any labelled pixel.
/// The band is long enough that its compactness exceeds the default
/// contour-filter limit. Labels are unchanged.
pub fn inject_sliver<R: Rng>(frame: &mut SynthFrame, rng: &mut R) -> Option<Sliver> {
    const THICK: usize = 3;
    const CLEAR: usize = 4;
    let (w, h) = (frame.labels.width(), frame.labels.height());
    let len = 60.min(w.min(h) - 4);
    // 3×L band: perimeter 2L+2, area 3L; compactness > 64 needs L ≥ 47.
    if len < 48 {
        return None;
    }
    let clear = |x0: usize, y0: usize, bw: usize, bh: usize| {
        let ys = y0.saturating_sub(CLEAR)..(y0 + bh + CLEAR).min(h);
        ys.into_iter().all(|y| {
            (x0.saturating_sub(CLEAR)..(x0 + bw + CLEAR).min(w)).all(|x| frame.labels.get(x, y) == BACKGROUND)
        })
    };
    let mut options = Vec::new();
    for y in 0..=h - THICK {
        for x in 0..=w - len {
            if clear(x, y, len, THICK) {
                options.push(Sliver {
                    x,
                    y,
                    width: len,
                    height: THICK,
                });
            }
        }
    }
    for y in 0..=h - len {
        for x in 0..=w - THICK {
            if clear(x, y, THICK, len) {
                options.push(Sliver {
                    x,
                    y,
                    width: THICK,
                    height: len,
                });
            }
        }
    }
    if options.is_empty() {
        return None;
    }
    let sliver = options[rng.random_range(0..options.len())];
    let nearest = frame.depth.min_valid()? as f64;
    let d = nearest + rng.random_range(20.0..100.0);
    let skin = skin_base(rng);
    for y in sliver.y..sliver.y + sliver.height {
        for x in sliver.x..sliver.x + sliver.width {
            frame.depth.set(x, y, d.round() as u16);
            frame.color.set(x, y, jitter(rng, skin, SKIN_SPREAD));
        }
    }
    Some(sliver)
}

/// Gaussian depth noise on valid pixels, rounded to whole millimetres.
pub fn add_depth_noise<R: Rng>(depth: &mut DepthMap, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for d in depth.values_mut() {
        if *d > 0 {
            *d = (*d as f64 + normal.sample(rng)).round().clamp(1.0, u16::MAX as f64) as u16;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::{annotate_frame, crop_depth_range, HsvThresholds, Hsv};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn frames(n: usize, seed: u64) -> Vec<SynthFrame> {
        synth_dataset(n, 64, 64, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn hsv_round_trip() {
        for &(h, s, v) in &[(10.0, 0.5, 0.8), (200.0, 0.7, 0.4), (330.0, 0.2, 1.0), (0.0, 0.0, 0.5)] {
            let back = Hsv::from_rgb(hsv_to_rgb(h, s, v));
            assert!((back.v - v).abs() < 0.01 && (back.s - s).abs() < 0.02);
            if s > 0.0 {
                assert!((back.h - h).abs() < 2.0, "{h} → {}", back.h);
            }
        }
    }

    #[test]
    fn labels_and_depth_contract() {
        let t = HsvThresholds::default();
        for f in frames(20, 1) {
            assert!(f.labels.classes().iter().all(|&c| c <= OBJECT));
            let fg = crop_depth_range(&f.depth, 160.0).unwrap();
            let near = f.depth.min_valid().unwrap();
            for (i, &c) in f.labels.classes().iter().enumerate() {
                let d = f.depth.values()[i];
                let hsv = Hsv::from_rgb(f.color.pixels()[i]);
                match c {
                    HAND => {
                        assert!(d > 0 && d - near <= 160);
                        assert!(t.contains(hsv));
                    }
                    OBJECT => {
                        assert!(fg.bits()[i]);
                        assert!(!t.contains(hsv));
                    }
                    _ => assert!(!fg.bits()[i]),
                }
            }
        }
    }

    #[test]
    fn deterministic_and_has_contact() {
        let a = frames(30, 5);
        assert_eq!(a, frames(30, 5));
        assert_ne!(a, frames(30, 6));
        let contact = a.iter().filter(|f| f.contact).count();
        assert!(contact * 10 >= a.len(), "{contact} contact frames");
    }

    #[test]
    fn annotation_reproduces_clean_frames() {
        let fs = frames(20, 2);
        let p = AnnotationParams::default();
        let mut agree = 0.0;
        for f in &fs {
            agree += annotate_frame(&f.depth, &f.color, &p).unwrap().agreement(&f.labels);
        }
        assert!(agree / fs.len() as f64 >= 0.99, "{}", agree / fs.len() as f64);
    }

    #[test]
    fn sliver_placement() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for mut f in frames(20, 3) {
            let before = f.labels.clone();
            let s = inject_sliver(&mut f, &mut r).expect("room for a sliver");
            assert_eq!(f.labels, before);
            assert_eq!(s.area(), 180);
            let fg = crop_depth_range(&f.depth, 160.0).unwrap();
            for y in s.y..s.y + s.height {
                for x in s.x..s.x + s.width {
                    assert!(fg.get(x, y));
                    assert_eq!(f.labels.get(x, y), BACKGROUND);
                }
            }
        }
    }

    #[test]
    fn noise_pixels_are_isolated() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let mut f = frames(1, 4).pop().unwrap();
        let clean = f.color.clone();
        let pts = inject_color_noise(&mut f, 12, &mut r);
        assert!(!pts.is_empty());
        let changed = (0..64 * 64).filter(|&i| clean.pixels()[i] != f.color.pixels()[i]).count();
        assert_eq!(changed, pts.len());
    }

    #[test]
    fn depth_noise_spares_invalid() {
        let mut d = DepthMap::new(3, 1, vec![0, 500, 600]).unwrap();
        add_depth_noise(&mut d, 2.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(d.get(0, 0), 0);
        assert!(d.get(1, 0).abs_diff(500) < 20);
        let before = d.clone();
        add_depth_noise(&mut d, 0.0, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(d, before);
    }

    #[test]
    fn tiny_frames_rejected() {
        assert!(synth_frame(32, 64, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(synth_dataset(0, 64, 64, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
