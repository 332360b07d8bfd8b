//! Segment extraction and area/compactness filtering of binary masks.

use std::collections::VecDeque;

use crate::frame::BinaryMask;

/// One 8-connected component of a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    /// `(x, y)` coordinates in discovery order.
    pub pixels: Vec<(usize, usize)>,
    /// Pixel count.
    pub area: usize,
    /// Pixels with at least one 4-neighbor outside the segment; the image
    /// border counts as outside.
    pub perimeter: usize,
}

impl Segment {
    /// `perimeter² / area`.
    pub fn compactness(&self) -> f64 {
        (self.perimeter * self.perimeter) as f64 / self.area as f64
    }
}

const NEIGHBORS_8: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// 8-connected components in row-major order of their first pixel.
pub fn connected_components(mask: &BinaryMask) -> Vec<Segment> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut segments = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            pixels.push((x, y));
            for (dx, dy) in NEIGHBORS_8 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !seen[j] && mask.bits()[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        // A true 4-neighbor is always in the same 8-connected component, so
        // "outside the segment" reduces to "false or off the image".
        let perimeter = pixels
            .iter()
            .filter(|&&(x, y)| {
                x == 0 || y == 0 || x + 1 == w || y + 1 == h || !mask.get(x - 1, y) || !mask.get(x + 1, y) || !mask.get(x, y - 1) || !mask.get(x, y + 1)
            })
            .count();
        segments.push(Segment {
            area: pixels.len(),
            perimeter,
            pixels,
        });
    }
    segments
}

/// Keeps the union of segments with `area > theta` and
/// `perimeter² / area < phi`.
pub fn contour_filter(mask: &BinaryMask, theta: f64, phi: f64) -> BinaryMask {
    assert!(theta >= 0.0 && phi > 0.0, "contour_filter needs theta ≥ 0 and phi > 0");
    let mut out = BinaryMask::empty(mask.width(), mask.height());
    for seg in connected_components(mask) {
        if seg.area as f64 > theta && seg.compactness() < phi {
            for &(x, y) in &seg.pixels {
                out.set(x, y, true);
            }
        }
    }
    out
}
