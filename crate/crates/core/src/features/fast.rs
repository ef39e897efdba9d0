//! FAST-9 segment-test corner detection with non-maximum suppression.

use super::Keypoint;
use crate::raster::GrayImage;

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
pub(crate) const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

const ARC: u32 = 9;

/// True when the 16-bit circular mask has `ARC` consecutive set bits.
#[inline]
fn has_arc(mask: u32) -> bool {
    let doubled = mask | (mask << 16);
    let mut run = doubled;
    for k in 1..ARC {
        run &= doubled >> k;
    }
    run != 0
}

#[inline]
fn ring_masks(img: &GrayImage, x: usize, y: usize, threshold: i32) -> (u32, u32) {
    let c = img.get(x, y) as i32;
    let mut bright = 0u32;
    let mut dark = 0u32;
    for (k, (dx, dy)) in CIRCLE.iter().enumerate() {
        let p = img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize) as i32;
        if p > c + threshold {
            bright |= 1 << k;
        } else if p < c - threshold {
            dark |= 1 << k;
        }
    }
    (bright, dark)
}

/// Segment test at `(x, y)`. The pixel must be at least 3 px from every edge.
pub fn is_corner(img: &GrayImage, x: usize, y: usize, threshold: i32) -> bool {
    let (bright, dark) = ring_masks(img, x, y, threshold);
    has_arc(bright) || has_arc(dark)
}

/// Largest threshold at which `(x, y)` still passes the segment test, or
/// `None` if it fails at `threshold`.
pub fn corner_score(img: &GrayImage, x: usize, y: usize, threshold: i32) -> Option<i32> {
    if !is_corner(img, x, y, threshold) {
        return None;
    }
    // corner-ness is monotone in the threshold; no pixel passes at 255
    let (mut lo, mut hi) = (threshold, 255);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if is_corner(img, x, y, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Corners at least `border` px from the edges, suppressed to local maxima
/// of the score over the 8-neighborhood. Equal scores are resolved in favor
/// of the earlier pixel in row-major order, so no two returned corners are
/// adjacent. Sorted by descending response.
pub fn detect_with_border(img: &GrayImage, threshold: i32, border: usize) -> Vec<Keypoint> {
    let border = border.max(3);
    let (w, h) = (img.width, img.height);
    if w <= 2 * border || h <= 2 * border {
        return Vec::new();
    }
    let mut scores = vec![0i32; w * h];
    for y in border..h - border {
        for x in border..w - border {
            // quick rejection on the four compass pixels: a 9-arc covers at
            // least two of them
            let c = img.get(x, y) as i32;
            let mut nb = 0;
            let mut nd = 0;
            for &(dx, dy) in &[(0, -3), (3, 0), (0, 3), (-3, 0)] {
                let p = img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize) as i32;
                if p > c + threshold {
                    nb += 1;
                } else if p < c - threshold {
                    nd += 1;
                }
            }
            if nb < 2 && nd < 2 {
                continue;
            }
            if let Some(s) = corner_score(img, x, y, threshold) {
                scores[y * w + x] = s;
            }
        }
    }

    let mut corners = Vec::new();
    for y in border..h - border {
        for x in border..w - border {
            let idx = y * w + x;
            let s = scores[idx];
            if s == 0 {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = ((y as i64 + dy) as usize) * w + (x as i64 + dx) as usize;
                    let ns = scores[n];
                    if ns > s || (ns == s && n < idx) {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max {
                corners.push(Keypoint {
                    u: x as f64,
                    v: y as f64,
                    response: s as f64,
                    angle: 0.0,
                });
            }
        }
    }
    sort_by_response(&mut corners);
    corners
}

pub(crate) fn sort_by_response(kps: &mut [Keypoint]) {
    kps.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.v.total_cmp(&b.v))
            .then(a.u.total_cmp(&b.u))
    });
}

/// FAST-9 with one adaptive step: if fewer than half of `target_count`
/// corners are found, the threshold is halved and detection re-run. Keeps
/// the `target_count` strongest responses.
pub fn detect_fast_with_border(
    img: &GrayImage,
    threshold: i32,
    target_count: usize,
    border: usize,
) -> Vec<Keypoint> {
    assert!(threshold >= 1, "FAST threshold must be at least 1");
    let mut corners = detect_with_border(img, threshold, border);
    if (corners.len() as f64) < 0.5 * target_count as f64 && threshold > 1 {
        corners = detect_with_border(img, (threshold / 2).max(1), border);
    }
    corners.truncate(target_count);
    corners
}

pub fn detect_fast(img: &GrayImage, threshold: i32, target_count: usize) -> Vec<Keypoint> {
    detect_fast_with_border(img, threshold, target_count, 3)
}
