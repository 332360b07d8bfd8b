//! Random flips, small rotations and depth noise for training pairs.

use rand::Rng;

use crate::frame::{DepthMap, LabelMap, BACKGROUND};
use crate::train::synth::add_depth_noise;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Counter-clockwise, degrees.
    pub angle_deg: f64,
    pub noise_sigma_mm: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip_h: false,
        flip_v: false,
        angle_deg: 0.0,
        noise_sigma_mm: 0.0,
    };

    pub fn sample<R: Rng>(rng: &mut R, rotation_range_deg: f64, noise_sigma_mm: f64) -> Self {
        let flip_h = rng.random_bool(0.5);
        let flip_v = rng.random_bool(0.5);
        let angle_deg = if rotation_range_deg > 0.0 {
            rng.random_range(-rotation_range_deg..=rotation_range_deg)
        } else {
            0.0
        };
        AugmentParams {
            flip_h,
            flip_v,
            angle_deg,
            noise_sigma_mm,
        }
    }
}

fn remap<T: Copy>(values: &[T], w: usize, h: usize, f: impl Fn(usize, usize) -> (usize, usize)) -> Vec<T> {
    let mut out = Vec::with_capacity(values.len());
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = f(x, y);
            out.push(values[sy * w + sx]);
        }
    }
    out
}

pub fn flip_depth(d: &DepthMap, horizontal: bool) -> DepthMap {
    let (w, h) = (d.width(), d.height());
    let v = remap(d.values(), w, h, |x, y| if horizontal { (w - 1 - x, y) } else { (x, h - 1 - y) });
    DepthMap::new(w, h, v).expect("same dimensions")
}

pub fn flip_labels(l: &LabelMap, horizontal: bool) -> LabelMap {
    let (w, h) = (l.width(), l.height());
    let v = remap(l.classes(), w, h, |x, y| if horizontal { (w - 1 - x, y) } else { (x, h - 1 - y) });
    LabelMap::new(w, h, v).expect("same dimensions")
}

/// Source coordinate of destination `(x, y)` under a rotation about the
/// image center.
fn source(x: usize, y: usize, w: usize, h: usize, cos: f64, sin: f64) -> (f64, f64) {
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (dx, dy) = (x as f64 - cx, y as f64 - cy);
    // Inverse rotation; y points down, so "counter-clockwise" on screen.
    (cx + cos * dx - sin * dy, cy + sin * dx + cos * dy)
}

fn nearest(sx: f64, sy: f64, w: usize, h: usize) -> Option<(usize, usize)> {
    let (rx, ry) = (sx.round(), sy.round());
    (rx >= 0.0 && ry >= 0.0 && rx < w as f64 && ry < h as f64).then(|| (rx as usize, ry as usize))
}

/// Nearest-neighbor label rotation; pixels from outside the frame are
/// background.
pub fn rotate_labels(l: &LabelMap, angle_deg: f64) -> LabelMap {
    let (w, h) = (l.width(), l.height());
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut out = LabelMap::filled(w, h, BACKGROUND);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = source(x, y, w, h, cos, sin);
            if let Some((nx, ny)) = nearest(sx, sy, w, h) {
                out.set(x, y, l.get(nx, ny));
            }
        }
    }
    out
}

/// Bilinear depth rotation. Where any of the four taps is invalid or off
/// the frame the nearest source pixel is used instead, so invalid regions
/// never bleed into interpolated depths.
pub fn rotate_depth(d: &DepthMap, angle_deg: f64) -> DepthMap {
    let (w, h) = (d.width(), d.height());
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut out = DepthMap::filled(w, h, 0);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = source(x, y, w, h, cos, sin);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let tap = |xx: f64, yy: f64| {
                (xx >= 0.0 && yy >= 0.0 && xx < w as f64 && yy < h as f64)
                    .then(|| d.get(xx as usize, yy as usize))
                    .filter(|&v| v > 0)
            };
            let v = match (tap(x0, y0), tap(x0 + 1.0, y0), tap(x0, y0 + 1.0), tap(x0 + 1.0, y0 + 1.0)) {
                (Some(a), Some(b), Some(c), Some(e)) => {
                    let top = a as f64 + fx * (b as f64 - a as f64);
                    let bot = c as f64 + fx * (e as f64 - c as f64);
                    (top + fy * (bot - top)).round() as u16
                }
                _ => nearest(sx, sy, w, h).map_or(0, |(nx, ny)| d.get(nx, ny)),
            };
            out.set(x, y, v);
        }
    }
    out
}

pub fn apply<R: Rng>(depth: &DepthMap, labels: &LabelMap, p: &AugmentParams, rng: &mut R) -> (DepthMap, LabelMap) {
    let (mut d, mut l) = (depth.clone(), labels.clone());
    if p.flip_h {
        d = flip_depth(&d, true);
        l = flip_labels(&l, true);
    }
    if p.flip_v {
        d = flip_depth(&d, false);
        l = flip_labels(&l, false);
    }
    if p.angle_deg != 0.0 {
        d = rotate_depth(&d, p.angle_deg);
        l = rotate_labels(&l, p.angle_deg);
    }
    add_depth_noise(&mut d, p.noise_sigma_mm, rng);
    (d, l)
}

/// Samples parameters from `rng` and applies them.
pub fn augment<R: Rng>(
    depth: &DepthMap,
    labels: &LabelMap,
    rotation_range_deg: f64,
    noise_sigma_mm: f64,
    rng: &mut R,
) -> (DepthMap, LabelMap) {
    let p = AugmentParams::sample(rng, rotation_range_deg, noise_sigma_mm);
    apply(depth, labels, &p, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{HAND, OBJECT};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(seed: u64) -> (DepthMap, LabelMap) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let d = DepthMap::new(9, 7, (0..63).map(|_| r.random_range(0..900)).collect()).unwrap();
        let l = LabelMap::new(9, 7, (0..63).map(|_| r.random_range(0..3)).collect()).unwrap();
        (d, l)
    }

    #[test]
    fn identity_params() {
        let (d, l) = pair(1);
        let out = apply(&d, &l, &AugmentParams::IDENTITY, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out, (d, l));
    }

    #[test]
    fn flips_are_involutions() {
        let (d, l) = pair(2);
        for h in [true, false] {
            assert_eq!(flip_depth(&flip_depth(&d, h), h), d);
            assert_eq!(flip_labels(&flip_labels(&l, h), h), l);
        }
        assert_ne!(flip_labels(&l, true), l);
    }

    #[test]
    fn quarter_turn_matches_index_permutation() {
        // Asymmetric L-shaped block on an 8×8 grid.
        let n = 8;
        let mut l = LabelMap::filled(n, n, BACKGROUND);
        for (x, y) in [(1, 1), (2, 1), (3, 1), (1, 2), (1, 3), (1, 4)] {
            l.set(x, y, HAND);
        }
        l.set(5, 6, OBJECT);
        let r = rotate_labels(&l, 90.0);
        // Destination (x, y) samples source (n−1−y, x) for this convention.
        for y in 0..n {
            for x in 0..n {
                assert_eq!(r.get(x, y), l.get(n - 1 - y, x), "({x},{y})");
            }
        }
        let d = DepthMap::new(n, n, (0..64).map(|i| 100 + i as u16).collect()).unwrap();
        let rd = rotate_depth(&d, 90.0);
        for y in 0..n {
            for x in 0..n {
                assert_eq!(rd.get(x, y), d.get(n - 1 - y, x));
            }
        }
    }

    #[test]
    fn rotation_keeps_label_set_and_invalid_stays_sharp() {
        let (mut d, l) = pair(3);
        d.set(4, 3, 0);
        for angle in [-15.0, -7.5, 3.0, 15.0] {
            let rl = rotate_labels(&l, angle);
            assert!(rl.classes().iter().all(|&c| c <= OBJECT));
            let rd = rotate_depth(&d, angle);
            // Interpolated values stay within the valid range of the input.
            let max = *d.values().iter().max().unwrap();
            assert!(rd.values().iter().all(|&v| v <= max));
        }
    }

    #[test]
    fn noise_never_touches_labels() {
        let (d, l) = pair(4);
        let mut r = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let (nd, nl) = augment(&d, &l, 15.0, 2.0, &mut r);
            assert_eq!(nd.width(), d.width());
            let mut before: Vec<u8> = l.classes().to_vec();
            let mut after: Vec<u8> = nl.classes().to_vec();
            before.sort_unstable();
            before.dedup();
            after.sort_unstable();
            after.dedup();
            assert!(after.iter().all(|c| before.contains(c) || *c == BACKGROUND));
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let (d, l) = pair(5);
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| augment(&d, &l, 15.0, 2.0, &mut r)).collect::<Vec<_>>()
        };
        assert_eq!(run(11), run(11));
    }
}
