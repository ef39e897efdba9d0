//! ORB features on rasterized height images.

mod blur;
mod fast;
mod matching;
mod orb;
mod pattern;

use std::fmt::Write as _;

use thiserror::Error;

use crate::raster::GrayImage;

pub use blur::{gaussian_blur, gaussian_kernel};
pub use fast::{corner_score, detect_fast, detect_fast_with_border, is_corner};
pub use matching::{match_descriptors, ransac_rigid_filter, RigidRansacConfig};
pub use orb::{angle_bin, compute_brief, compute_orientation, ANGLE_BINS, PATCH_RADIUS};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub response: f64,
    /// Radians in `[0, 2pi)`.
    pub angle: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Descriptor {
    pub bits: [u64; 4],
}

impl Descriptor {
    pub fn hamming(&self, other: &Descriptor) -> u32 {
        self.bits
            .iter()
            .zip(other.bits.iter())
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Match {
    pub idx_a: usize,
    pub idx_b: usize,
    pub hamming: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("patch around ({u}, {v}) leaves the image")]
    PatchOutOfBounds { u: f64, v: f64 },
    #[error("need at least 3 matches, got {found}")]
    TooFewMatches { found: usize },
    #[error("no non-degenerate rigid hypothesis found")]
    DegenerateMatches,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureConfig {
    pub blur_sigma: f64,
    pub fast_threshold: i32,
    pub target_count: usize,
    /// Keypoints closer than this to an edge are dropped before description.
    pub border: usize,
    pub ratio: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 1.0,
            fast_threshold: 20,
            target_count: 1000,
            border: 19,
            ratio: 0.75,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct FrameFeatures {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl FrameFeatures {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

/// Blur, detect, orient and describe. Keypoints keep the detector's order
/// (strongest first).
pub fn extract_features(img: &GrayImage, cfg: &FeatureConfig) -> FrameFeatures {
    let smooth = gaussian_blur(img, cfg.blur_sigma);
    let border = cfg.border.max(PATCH_RADIUS);
    let mut out = FrameFeatures::default();
    for mut kp in detect_fast_with_border(&smooth, cfg.fast_threshold, cfg.target_count, border) {
        let Ok(angle) = compute_orientation(&smooth, &kp, PATCH_RADIUS) else {
            continue;
        };
        kp.angle = angle;
        if let Ok(d) = compute_brief(&smooth, &kp) {
            out.keypoints.push(kp);
            out.descriptors.push(d);
        }
    }
    out
}

/// One `u v response angle` line per keypoint.
pub fn format_keypoints(kps: &[Keypoint]) -> String {
    let mut s = String::new();
    for k in kps {
        let _ = writeln!(s, "{} {} {} {}", k.u, k.v, k.response, k.angle);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blocks(seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = GrayImage::new(200, 200);
        for _ in 0..40 {
            let (x, y) = (rng.random_range(0..180), rng.random_range(0..180));
            let (w, h) = (rng.random_range(4..20), rng.random_range(4..20));
            let v = rng.random_range(30..=255);
            for yy in y..(y + h).min(200) {
                for xx in x..(x + w).min(200) {
                    img.set(xx, yy, v);
                }
            }
        }
        img
    }

    #[test]
    fn hamming_counts_differing_bits() {
        let a = Descriptor { bits: [0, 0, 0, 0] };
        let b = Descriptor {
            bits: [u64::MAX, 1, 0, 3],
        };
        assert_eq!(a.hamming(&b), 64 + 1 + 2);
        assert_eq!(b.hamming(&b), 0);
    }

    #[test]
    fn extraction_respects_border_and_is_deterministic() {
        let img = blocks(1);
        let cfg = FeatureConfig::default();
        let f = extract_features(&img, &cfg);
        assert!(f.len() > 20);
        assert_eq!(f.keypoints.len(), f.descriptors.len());
        for k in &f.keypoints {
            assert!(k.u >= 19.0 && k.v >= 19.0 && k.u < 181.0 && k.v < 181.0);
            assert!((0.0..std::f64::consts::TAU).contains(&k.angle));
        }
        let g = extract_features(&img, &cfg);
        assert_eq!(f.keypoints, g.keypoints);
        assert_eq!(f.descriptors, g.descriptors);
    }

    #[test]
    fn shifted_image_matches_itself() {
        let img = blocks(2);
        let shifted =
            GrayImage::from_fn(200, 200, |x, y| if x >= 7 { img.get(x - 7, y) } else { 0 });
        let cfg = FeatureConfig::default();
        let a = extract_features(&img, &cfg);
        let b = extract_features(&shifted, &cfg);
        let m = match_descriptors(&a.descriptors, &b.descriptors, cfg.ratio);
        assert!(m.len() > 10);
        let good = m
            .iter()
            .filter(|m| {
                let (ka, kb) = (a.keypoints[m.idx_a], b.keypoints[m.idx_b]);
                kb.u - ka.u == 7.0 && kb.v == ka.v
            })
            .count();
        assert!(good as f64 >= 0.9 * m.len() as f64, "{good} of {}", m.len());
    }

    #[test]
    fn keypoint_dump_format() {
        let kps = [Keypoint {
            u: 3.0,
            v: 4.5,
            response: 20.0,
            angle: 0.25,
        }];
        assert_eq!(format_keypoints(&kps), "3 4.5 20 0.25\n");
    }
}
