//! Intensity-centroid orientation and steered BRIEF descriptors.

use std::f64::consts::TAU;
use std::sync::OnceLock;

use super::pattern::ORB_PATTERN;
use super::{Descriptor, FeatureError, Keypoint};
use crate::raster::GrayImage;

/// Steering is discretized into 12-degree steps.
pub const ANGLE_BINS: usize = 30;

/// Radius of the 31x31 patch used for orientation.
pub const PATCH_RADIUS: usize = 15;

/// `atan2(m01, m10)` over the disc of `radius` around the keypoint, with
/// moments taken in patch-centered coordinates. Result in `[0, 2pi)`.
pub fn compute_orientation(
    img: &GrayImage,
    kp: &Keypoint,
    radius: usize,
) -> Result<f64, FeatureError> {
    let (x0, y0) = (kp.u.round() as i64, kp.v.round() as i64);
    let r = radius as i64;
    if x0 - r < 0 || y0 - r < 0 || x0 + r >= img.width as i64 || y0 + r >= img.height as i64 {
        return Err(FeatureError::PatchOutOfBounds { u: kp.u, v: kp.v });
    }
    let (mut m10, mut m01) = (0i64, 0i64);
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let i = img.get((x0 + dx) as usize, (y0 + dy) as usize) as i64;
            m10 += dx * i;
            m01 += dy * i;
        }
    }
    let angle = (m01 as f64).atan2(m10 as f64);
    Ok(if angle < 0.0 { angle + TAU } else { angle })
}

/// Steering bin for an angle in radians.
pub fn angle_bin(angle: f64) -> usize {
    let step = TAU / ANGLE_BINS as f64;
    ((angle / step).round() as i64).rem_euclid(ANGLE_BINS as i64) as usize
}

struct SteeredPattern {
    pairs: [[i8; 4]; 256],
    extent: i64,
}

fn steered_patterns() -> &'static [SteeredPattern] {
    static TABLE: OnceLock<Vec<SteeredPattern>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..ANGLE_BINS)
            .map(|bin| {
                let (s, c) = (bin as f64 * TAU / ANGLE_BINS as f64).sin_cos();
                let rot = |x: i8, y: i8| {
                    let (x, y) = (x as f64, y as f64);
                    ((x * c - y * s).round() as i8, (x * s + y * c).round() as i8)
                };
                let mut pairs = [[0i8; 4]; 256];
                let mut extent = 0i64;
                for (dst, src) in pairs.iter_mut().zip(ORB_PATTERN.iter()) {
                    let (ax, ay) = rot(src[0], src[1]);
                    let (bx, by) = rot(src[2], src[3]);
                    *dst = [ax, ay, bx, by];
                    for v in dst.iter() {
                        extent = extent.max((*v as i64).abs());
                    }
                }
                SteeredPattern { pairs, extent }
            })
            .collect()
    })
}

/// 256-bit descriptor: bit `i` is set iff `I(p_i) < I(q_i)` for the `i`-th
/// pattern pair rotated by the keypoint angle.
pub fn compute_brief(img: &GrayImage, kp: &Keypoint) -> Result<Descriptor, FeatureError> {
    let pattern = &steered_patterns()[angle_bin(kp.angle)];
    let (x0, y0) = (kp.u.round() as i64, kp.v.round() as i64);
    let e = pattern.extent;
    if x0 - e < 0 || y0 - e < 0 || x0 + e >= img.width as i64 || y0 + e >= img.height as i64 {
        return Err(FeatureError::PatchOutOfBounds { u: kp.u, v: kp.v });
    }
    let at = |dx: i8, dy: i8| img.get((x0 + dx as i64) as usize, (y0 + dy as i64) as usize);
    let mut bits = [0u64; 4];
    for (i, p) in pattern.pairs.iter().enumerate() {
        if at(p[0], p[1]) < at(p[2], p[3]) {
            bits[i / 64] |= 1 << (i % 64);
        }
    }
    Ok(Descriptor { bits })
}
