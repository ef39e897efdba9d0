//! Descriptor matching and geometric outlier rejection.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Descriptor, FeatureError, Match};
use crate::geometry::RigidTransform;
use crate::tracking::align_svd;

/// Nearest and second-nearest distances of each row (or column) of a
/// distance table: `(index, d1, d2)`; `d2` is `u32::MAX` with one candidate.
fn best_two(dists: impl Iterator<Item = u32>) -> Option<(usize, u32, u32)> {
    let mut best: Option<(usize, u32, u32)> = None;
    for (j, d) in dists.enumerate() {
        best = Some(match best {
            None => (j, d, u32::MAX),
            Some((bj, d1, d2)) => {
                if d < d1 {
                    (j, d, d1)
                } else if d < d2 {
                    (bj, d1, d)
                } else {
                    (bj, d1, d2)
                }
            }
        });
    }
    best
}

fn passes_ratio(d1: u32, d2: u32, ratio: f64) -> bool {
    d2 == u32::MAX || (d1 as f64) < ratio * d2 as f64
}

/// Brute-force Hamming matching with a ratio test applied in both directions
/// and a mutual-nearest check. The result is one-to-one, ordered by `idx_a`,
/// and the same pair set comes back when `a` and `b` are swapped.
pub fn match_descriptors(a: &[Descriptor], b: &[Descriptor], ratio: f64) -> Vec<Match> {
    assert!(ratio > 0.0 && ratio < 1.0, "ratio must lie in (0, 1)");
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let nb = b.len();
    let table: Vec<u32> = a
        .iter()
        .flat_map(|da| b.iter().map(move |db| da.hamming(db)))
        .collect();

    let forward: Vec<Option<usize>> = (0..a.len())
        .map(|i| {
            let (j, d1, d2) = best_two(table[i * nb..(i + 1) * nb].iter().copied())?;
            passes_ratio(d1, d2, ratio).then_some(j)
        })
        .collect();
    let backward: Vec<Option<usize>> = (0..nb)
        .map(|j| {
            let (i, d1, d2) = best_two((0..a.len()).map(|i| table[i * nb + j]))?;
            passes_ratio(d1, d2, ratio).then_some(i)
        })
        .collect();

    forward
        .iter()
        .enumerate()
        .filter_map(|(i, fj)| {
            let j = (*fj)?;
            (backward[j] == Some(i)).then(|| Match {
                idx_a: i,
                idx_b: j,
                hamming: table[i * nb + j],
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidRansacConfig {
    pub iterations: usize,
    pub inlier_dist_m: f64,
    pub seed: u64,
}

impl Default for RigidRansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_dist_m: 0.3,
            seed: 0,
        }
    }
}

/// Three-point rigid RANSAC over matched 3-D points. The transform maps
/// points of `pts_a` onto `pts_b`. Matches are put in canonical order before
/// sampling, so the outcome does not depend on the order they arrive in.
pub fn ransac_rigid_filter(
    pts_a: &[Vector3<f64>],
    pts_b: &[Vector3<f64>],
    matches: &[Match],
    cfg: &RigidRansacConfig,
) -> Result<(Vec<Match>, RigidTransform), FeatureError> {
    if matches.len() < 3 {
        return Err(FeatureError::TooFewMatches {
            found: matches.len(),
        });
    }
    let mut ms = matches.to_vec();
    ms.sort_by_key(|m| (m.idx_a, m.idx_b));
    let src: Vec<Vector3<f64>> = ms.iter().map(|m| pts_a[m.idx_a]).collect();
    let dst: Vec<Vector3<f64>> = ms.iter().map(|m| pts_b[m.idx_b]).collect();
    let n = ms.len();
    let dist2 = cfg.inlier_dist_m * cfg.inlier_dist_m;
    let consensus = |t: &RigidTransform| -> Vec<usize> {
        (0..n)
            .filter(|&k| (t.transform_point(&src[k]) - dst[k]).norm_squared() < dist2)
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Vec<usize> = Vec::new();
    for _ in 0..cfg.iterations {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let mut k = rng.random_range(0..n - 2);
        for taken in [i.min(j), i.max(j)] {
            if k >= taken {
                k += 1;
            }
        }
        let Ok(t) = align_svd(&[src[i], src[j], src[k]], &[dst[i], dst[j], dst[k]]) else {
            continue;
        };
        let inliers = consensus(&t);
        if inliers.len() > best.len() {
            best = inliers;
            if best.len() == n {
                break;
            }
        }
    }
    if best.len() < 3 {
        return Err(FeatureError::DegenerateMatches);
    }
    let s: Vec<_> = best.iter().map(|&k| src[k]).collect();
    let d: Vec<_> = best.iter().map(|&k| dst[k]).collect();
    let refit = align_svd(&s, &d).map_err(|_| FeatureError::DegenerateMatches)?;
    Ok((best.into_iter().map(|k| ms[k]).collect(), refit))
}
