//! Ground-plane detection and removal with RANSAC plane fitting.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset_io::PointCloud;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("cloud has no three non-collinear points")]
    DegenerateCloud,
    #[error("best ground hypothesis covers {fraction:.3} of the cloud (minimum {min:.3})")]
    NoGround { fraction: f64, min: f64 },
}

/// Plane `normal · p + d = 0` with a unit normal pointing up (`normal.z >= 0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneModel {
    pub normal: Vector3<f64>,
    pub d: f64,
}

impl PlaneModel {
    /// Builds a canonical plane; `normal` need not be unit length.
    pub fn new(normal: Vector3<f64>, d: f64) -> Self {
        let len = normal.norm();
        let (mut n, mut d) = (normal / len, d / len);
        if n.z < 0.0 {
            n = -n;
            d = -d;
        }
        Self { normal: n, d }
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) + self.d
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.signed_distance(p).abs()
    }

    fn through(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<Self> {
        let n = (b - a).cross(&(c - a));
        let scale = (b - a).norm() * (c - a).norm();
        if scale == 0.0 || n.norm() <= 1e-9 * scale {
            return None;
        }
        Some(Self::new(n, -n.dot(a)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_dist_m: f64,
    pub min_inlier_fraction: f64,
    pub seed: u64,
    /// Hypotheses are scored on at most this many evenly strided points;
    /// the final classification always uses the whole cloud.
    pub score_sample_limit: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_dist_m: 0.15,
            min_inlier_fraction: 0.10,
            seed: 0,
            score_sample_limit: 4096,
        }
    }
}

/// Least-squares plane through the given points (smallest-eigenvalue
/// direction of the scatter matrix).
pub fn fit_plane_least_squares(points: &[Vector3<f64>]) -> Option<PlaneModel> {
    if points.len() < 3 {
        return None;
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let q = p - centroid;
        scatter += q * q.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // Collinear sets have two vanishing eigenvalues: no unique plane.
    if eig.eigenvalues[order[1]] <= 1e-12 * eig.eigenvalues[order[2]].max(f64::MIN_POSITIVE) {
        return None;
    }
    let normal = eig.eigenvectors.column(order[0]).into_owned();
    Some(PlaneModel::new(normal, -normal.dot(&centroid)))
}

pub fn fit_ground_plane(
    cloud: &PointCloud,
    cfg: &RansacConfig,
) -> Result<PlaneModel, PreprocessError> {
    let all: Vec<Vector3<f64>> = cloud.points.iter().map(|p| p.position).collect();
    if all.len() < 3 {
        return Err(PreprocessError::DegenerateCloud);
    }
    // The ground lies below the sensor, so hypotheses are drawn from there
    // when enough such points exist.
    let below: Vec<usize> = (0..all.len()).filter(|&i| all[i].z < 0.0).collect();
    let candidates: Vec<usize> = if below.len() >= 3 {
        below
    } else {
        (0..all.len()).collect()
    };
    let stride = all.len().div_ceil(cfg.score_sample_limit.max(1));
    let scoring: Vec<Vector3<f64>> = all.iter().step_by(stride.max(1)).copied().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, PlaneModel)> = None;
    for _ in 0..cfg.iterations {
        let i = candidates[rng.random_range(0..candidates.len())];
        let j = candidates[rng.random_range(0..candidates.len())];
        let k = candidates[rng.random_range(0..candidates.len())];
        let Some(plane) = PlaneModel::through(&all[i], &all[j], &all[k]) else {
            continue;
        };
        let count = scoring
            .iter()
            .filter(|p| plane.distance(p) <= cfg.inlier_dist_m)
            .count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, plane));
        }
    }

    let Some((_, hypothesis)) = best else {
        // Every random triple was degenerate; decide whether the whole cloud is.
        return match fit_plane_least_squares(&all) {
            None => Err(PreprocessError::DegenerateCloud),
            Some(plane) => refine(&all, plane, cfg),
        };
    };
    refine(&all, hypothesis, cfg)
}

fn refine(
    all: &[Vector3<f64>],
    hypothesis: PlaneModel,
    cfg: &RansacConfig,
) -> Result<PlaneModel, PreprocessError> {
    let inliers: Vec<Vector3<f64>> = all
        .iter()
        .filter(|p| hypothesis.distance(p) <= cfg.inlier_dist_m)
        .copied()
        .collect();
    let fraction = inliers.len() as f64 / all.len() as f64;
    if fraction < cfg.min_inlier_fraction {
        return Err(PreprocessError::NoGround {
            fraction,
            min: cfg.min_inlier_fraction,
        });
    }
    Ok(fit_plane_least_squares(&inliers).unwrap_or(hypothesis))
}

/// Keeps points farther than `inlier_dist_m` from the plane, in input order.
pub fn remove_ground(cloud: &PointCloud, plane: &PlaneModel, inlier_dist_m: f64) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .filter(|p| plane.distance(&p.position) > inlier_dist_m)
            .copied()
            .collect(),
        frame_index: cloud.frame_index,
        dropped_non_finite: cloud.dropped_non_finite,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn cloud(points: Vec<Vector3<f64>>) -> PointCloud {
        PointCloud::from_positions(points, 0)
    }

    #[test]
    fn exact_plane() {
        let pts: Vec<_> = (0..100)
            .map(|i| Vector3::new((i % 10) as f64, (i / 10) as f64, 0.0))
            .collect();
        let plane = fit_ground_plane(&cloud(pts.clone()), &RansacConfig::default()).unwrap();
        assert!((plane.normal - Vector3::z()).norm() < 1e-9);
        assert!(plane.d.abs() < 1e-9);
        assert!(remove_ground(&cloud(pts), &plane, 0.15).is_empty());
    }

    #[test]
    fn too_few_or_collinear_points() {
        let two = cloud(vec![Vector3::zeros(), Vector3::x()]);
        assert_eq!(
            fit_ground_plane(&two, &RansacConfig::default()),
            Err(PreprocessError::DegenerateCloud)
        );
        let line = cloud((0..20).map(|i| Vector3::new(i as f64, 0.0, -1.0)).collect());
        assert_eq!(
            fit_ground_plane(&line, &RansacConfig::default()),
            Err(PreprocessError::DegenerateCloud)
        );
    }

    #[test]
    fn no_ground_when_fraction_too_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<_> = (0..500)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                )
            })
            .collect();
        let cfg = RansacConfig {
            min_inlier_fraction: 0.5,
            ..Default::default()
        };
        assert!(matches!(
            fit_ground_plane(&cloud(pts), &cfg),
            Err(PreprocessError::NoGround { .. })
        ));
    }

    #[test]
    fn plane_with_outliers_matches_least_squares_on_true_inliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let mut inliers = Vec::new();
        for _ in 0..1000 {
            inliers.push(Vector3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                -1.7 + noise.sample(&mut rng),
            ));
        }
        let mut pts = inliers.clone();
        for _ in 0..100 {
            pts.push(Vector3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            ));
        }
        let cfg = RansacConfig {
            inlier_dist_m: 0.1,
            ..Default::default()
        };
        let plane = fit_ground_plane(&cloud(pts), &cfg).unwrap();
        let angle = plane
            .normal
            .dot(&Vector3::z())
            .clamp(-1.0, 1.0)
            .acos()
            .to_degrees();
        assert!(angle < 0.5, "normal off by {angle} deg");
        assert!((plane.d - 1.7).abs() < 0.02, "d = {}", plane.d);

        let oracle = fit_plane_least_squares(&inliers).unwrap();
        assert!((oracle.normal - plane.normal).norm() < 1e-3);
        assert!((oracle.d - plane.d).abs() < 5e-3);
    }

    #[test]
    fn reproducible_for_a_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<_> = (0..400)
            .map(|i| {
                let z = if i % 4 == 0 {
                    rng.random_range(0.0..5.0)
                } else {
                    -1.5
                };
                Vector3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    z,
                )
            })
            .collect();
        let c = cloud(pts);
        let cfg = RansacConfig {
            seed: 77,
            ..Default::default()
        };
        let a = fit_ground_plane(&c, &cfg).unwrap();
        let b = fit_ground_plane(&c, &cfg).unwrap();
        assert_eq!(a.normal.as_slice(), b.normal.as_slice());
        assert_eq!(a.d.to_bits(), b.d.to_bits());
    }

    #[test]
    fn remove_ground_keeps_exactly_box_points() {
        // plane z = 0 plus two boxes standing on it
        let mut pts = Vec::new();
        let mut is_box = Vec::new();
        for i in 0..40 {
            for j in 0..40 {
                pts.push(Vector3::new(
                    i as f64 * 0.5 - 10.0,
                    j as f64 * 0.5 - 10.0,
                    0.0,
                ));
                is_box.push(false);
            }
        }
        for (cx, cy, h) in [(3.0, 3.0, 2.0), (-4.0, 5.0, 1.2)] {
            for i in 0..6 {
                for j in 0..6 {
                    for k in 1..=4 {
                        pts.push(Vector3::new(
                            cx + i as f64 * 0.2,
                            cy + j as f64 * 0.2,
                            h * k as f64 / 4.0,
                        ));
                        is_box.push(true);
                    }
                }
            }
        }
        let c = cloud(pts.clone());
        let plane = fit_ground_plane(&c, &RansacConfig::default()).unwrap();
        let out = remove_ground(&c, &plane, 0.15);
        let expected: Vec<_> = pts
            .iter()
            .zip(&is_box)
            .filter(|(_, b)| **b)
            .map(|(p, _)| *p)
            .collect();
        let got: Vec<_> = out.points.iter().map(|p| p.position).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn nothing_near_plane_passes_through() {
        let c = cloud(vec![
            Vector3::new(0.0, 0.0, 5.0),
            Vector3::new(1.0, 2.0, -3.0),
        ]);
        let plane = PlaneModel::new(Vector3::z(), 0.0);
        assert_eq!(remove_ground(&c, &plane, 0.15), c);
    }

    #[test]
    fn canonical_orientation() {
        let p = PlaneModel::new(Vector3::new(0.0, 0.0, -2.0), 4.0);
        assert_eq!(p.normal, Vector3::z());
        assert_eq!(p.d, -2.0);
    }
}
