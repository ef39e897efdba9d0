//! Synthetic test worlds: boxes, walls and poles on a flat ground, scanned
//! along a closed rounded-square drive.
//!
//! Surfaces are sampled once into a fixed world point set. Each frame keeps
//! the points within sensor range, moves them into the sensor frame and adds
//! Gaussian noise, which is enough for the rasterized images to change
//! realistically from frame to frame.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset_io::{
    write_point_cloud, write_trajectory, CloudFormat, DatasetError, LidarPoint, PointCloud,
    Trajectory,
};
use crate::geometry::PoseSE3;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub frames: usize,
    /// Laps driven over all frames; slightly above 1 so the drive closes
    /// the square and revisits its start.
    pub laps: f64,
    pub side_m: f64,
    pub corner_radius_m: f64,
    pub sensor_height_m: f64,
    pub boxes: usize,
    pub walls: usize,
    pub poles: usize,
    /// Objects are scattered over the square grown by this margin.
    pub margin_m: f64,
    /// Free corridor half-width around the drive path.
    pub corridor_m: f64,
    pub range_m: f64,
    pub noise_sigma_m: f64,
    pub ground_spacing_m: f64,
    pub surface_spacing_m: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 200,
            laps: 1.1,
            side_m: 80.0,
            corner_radius_m: 8.0,
            sensor_height_m: 1.7,
            boxes: 400,
            walls: 60,
            poles: 1500,
            margin_m: 60.0,
            corridor_m: 3.0,
            range_m: 80.0,
            noise_sigma_m: 0.01,
            ground_spacing_m: 0.3,
            surface_spacing_m: 0.08,
            seed: 7,
        }
    }
}

/// Planar drive along a square with rounded corners, counter-clockwise,
/// starting mid-way along the bottom side heading +x.
#[derive(Clone, Debug)]
pub struct RoundedSquare {
    side: f64,
    radius: f64,
}

impl RoundedSquare {
    pub fn new(side: f64, radius: f64) -> Self {
        assert!(
            radius > 0.0 && 2.0 * radius < side,
            "corner radius must fit the square"
        );
        Self { side, radius }
    }

    pub fn length(&self) -> f64 {
        4.0 * (self.side - 2.0 * self.radius) + TAU * self.radius
    }

    /// Position and heading at arc length `s` (wrapped).
    pub fn at(&self, s: f64) -> (Vector2<f64>, f64) {
        let (l, r) = (self.side, self.radius);
        let straight = l - 2.0 * r;
        let arc = FRAC_PI_2 * r;
        let mut s = s.rem_euclid(self.length());
        // first half-side from the midpoint of the bottom edge
        let half = 0.5 * straight;
        if s < half {
            return (Vector2::new(0.5 * l + s, 0.0), 0.0);
        }
        s -= half;
        // corners at bottom-right, top-right, top-left, bottom-left
        let centers = [
            Vector2::new(l - r, r),
            Vector2::new(l - r, l - r),
            Vector2::new(r, l - r),
            Vector2::new(r, r),
        ];
        for (k, c) in centers.iter().enumerate() {
            let heading0 = k as f64 * FRAC_PI_2;
            if s < arc {
                let heading = heading0 + s / r;
                let radial = heading - FRAC_PI_2;
                return (c + r * Vector2::new(radial.cos(), radial.sin()), heading);
            }
            s -= arc;
            let heading = heading0 + FRAC_PI_2;
            let start = c + r * Vector2::new(heading0.cos(), heading0.sin());
            let len = if k == 3 { half } else { straight };
            if s < len || k == 3 {
                return (
                    start + s * Vector2::new(heading.cos(), heading.sin()),
                    heading.rem_euclid(TAU),
                );
            }
            s -= len;
        }
        unreachable!("arc length wrapped into range")
    }

    fn distance_to(&self, p: &Vector2<f64>) -> f64 {
        let (l, r) = (self.side, self.radius);
        // distance to the rounded square outline
        let c = Vector2::new(p.x.clamp(r, l - r), p.y.clamp(r, l - r));
        let inner = l - 2.0 * r;
        let d = p - c;
        if d.norm() > 0.0 {
            return (d.norm() - r).abs();
        }
        // inside the inner square: distance to the nearest straight edge
        let q = p - Vector2::new(r, r);
        let to_edge = q.x.min(q.y).min(inner - q.x).min(inner - q.y);
        to_edge + r
    }
}

const BUCKET_M: f64 = 10.0;

/// Vertical faces are sampled coarser than tops: the raster keeps the
/// highest point per pixel, so side points rarely survive anyway.
const SIDE_STEP_FACTOR: f64 = 4.0;

#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub cfg: SynthConfig,
    pub world: Vec<Vector3<f64>>,
    buckets: Vec<Vec<u32>>,
    n_cells: usize,
    /// Sensor poses in world coordinates.
    pub poses: Vec<PoseSE3>,
    /// Sensor poses relative to the first frame.
    pub groundtruth: Trajectory,
    pub landmarks: usize,
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    fn bucket(&self, x: f64, y: f64) -> usize {
        let cell = |v: f64| {
            (((v + self.cfg.margin_m) / BUCKET_M).floor().max(0.0) as usize).min(self.n_cells - 1)
        };
        cell(y) * self.n_cells + cell(x)
    }

    /// The scan at frame `k`: world points within range, in sensor
    /// coordinates, with Gaussian noise. Each frame has its own noise
    /// stream, so frames can be produced in any order.
    pub fn cloud(&self, k: usize) -> PointCloud {
        let pose = &self.poses[k];
        let xy = pose.translation.xy();
        let range = self.cfg.range_m;
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.cfg.seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let noise = Normal::new(0.0, self.cfg.noise_sigma_m.max(0.0)).expect("finite noise sigma");
        let (lo, hi) = (
            self.bucket(xy.x - range, xy.y - range),
            self.bucket(xy.x + range, xy.y + range),
        );
        let (cx0, cy0, cx1, cy1) = (
            lo % self.n_cells,
            lo / self.n_cells,
            hi % self.n_cells,
            hi / self.n_cells,
        );
        let mut points = Vec::new();
        for cy in cy0..=cy1 {
            for cx in cx0..=cx1 {
                for &i in &self.buckets[cy * self.n_cells + cx] {
                    let w = self.world[i as usize];
                    if (w.xy() - xy).norm_squared() > range * range {
                        continue;
                    }
                    let jitter = Vector3::from_fn(|_, _| noise.sample(&mut rng));
                    points.push(LidarPoint {
                        position: pose.inverse_transform_point(&w) + jitter,
                        reflectance: 0.0,
                    });
                }
            }
        }
        PointCloud::new(points, k)
    }
}

struct Sampler<'a> {
    rng: &'a mut ChaCha8Rng,
    out: Vec<Vector3<f64>>,
}

impl Sampler<'_> {
    /// Jittered grid over an oriented rectangle with a linear height field.
    fn top(
        &mut self,
        center: Vector2<f64>,
        yaw: f64,
        size: Vector2<f64>,
        height: f64,
        slope: Vector2<f64>,
        step: f64,
    ) {
        let (s, c) = yaw.sin_cos();
        let nx = (size.x / step).ceil().max(1.0) as usize;
        let ny = (size.y / step).ceil().max(1.0) as usize;
        for i in 0..nx {
            for j in 0..ny {
                let lx = ((i as f64 + self.rng.random::<f64>()) / nx as f64 - 0.5) * size.x;
                let ly = ((j as f64 + self.rng.random::<f64>()) / ny as f64 - 0.5) * size.y;
                let z = height + slope.x * lx + slope.y * ly;
                self.out.push(Vector3::new(
                    center.x + c * lx - s * ly,
                    center.y + s * lx + c * ly,
                    z,
                ));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    /// Vertical faces of an oriented box whose top follows the height field.
    fn sides(
        &mut self,
        center: Vector2<f64>,
        yaw: f64,
        size: Vector2<f64>,
        height: f64,
        slope: Vector2<f64>,
        base: f64,
        step: f64,
    ) {
        let (s, c) = yaw.sin_cos();
        let perimeter = 2.0 * (size.x + size.y);
        let n = (perimeter / step).ceil() as usize;
        for k in 0..n {
            let t = (k as f64 + self.rng.random::<f64>()) / n as f64 * perimeter;
            let (lx, ly) = if t < size.x {
                (t - 0.5 * size.x, -0.5 * size.y)
            } else if t < size.x + size.y {
                (0.5 * size.x, t - size.x - 0.5 * size.y)
            } else if t < 2.0 * size.x + size.y {
                (0.5 * size.x - (t - size.x - size.y), 0.5 * size.y)
            } else {
                (-0.5 * size.x, 0.5 * size.y - (t - 2.0 * size.x - size.y))
            };
            let top = height + slope.x * lx + slope.y * ly;
            let levels = ((top - base) / step).ceil().max(1.0) as usize;
            for m in 0..levels {
                let z = base + (m as f64 + self.rng.random::<f64>()) / levels as f64 * (top - base);
                self.out.push(Vector3::new(
                    center.x + c * lx - s * ly,
                    center.y + s * lx + c * ly,
                    z,
                ));
            }
        }
    }

    fn pole(&mut self, center: Vector2<f64>, radius: f64, height: f64, step: f64) {
        let rings = (radius / step).ceil().max(1.0) as usize;
        for ri in 0..=rings {
            let rr = radius * ri as f64 / rings as f64;
            let n = ((TAU * rr / step).ceil() as usize).max(1);
            for k in 0..n {
                let a = TAU * (k as f64 + self.rng.random::<f64>()) / n as f64;
                self.out.push(Vector3::new(
                    center.x + rr * a.cos(),
                    center.y + rr * a.sin(),
                    height,
                ));
            }
        }
        let n = ((TAU * radius / (2.0 * step)).ceil() as usize).max(4);
        let levels = (height / (2.0 * step)).ceil() as usize;
        for k in 0..n {
            let a = TAU * k as f64 / n as f64;
            for m in 0..levels {
                let z = (m as f64 + self.rng.random::<f64>()) / levels as f64 * height;
                self.out.push(Vector3::new(
                    center.x + radius * a.cos(),
                    center.y + radius * a.sin(),
                    z,
                ));
            }
        }
    }
}

/// Builds the world point set. Returns the points and the landmark count.
fn build_world(
    cfg: &SynthConfig,
    path: &RoundedSquare,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vector3<f64>>, usize) {
    let lo = -cfg.margin_m;
    let hi = cfg.side_m + cfg.margin_m;
    let mut s = Sampler {
        rng,
        out: Vec::new(),
    };

    let n_ground = ((hi - lo) / cfg.ground_spacing_m).ceil() as usize;
    for i in 0..n_ground {
        for j in 0..n_ground {
            let x = lo + (i as f64 + s.rng.random::<f64>()) * cfg.ground_spacing_m;
            let y = lo + (j as f64 + s.rng.random::<f64>()) * cfg.ground_spacing_m;
            s.out.push(Vector3::new(x, y, 0.0));
        }
    }

    let mut placed = 0;
    let place = |s: &mut Sampler, half_extent: f64| -> Option<Vector2<f64>> {
        for _ in 0..50 {
            let c = Vector2::new(s.rng.random_range(lo..hi), s.rng.random_range(lo..hi));
            if path.distance_to(&c) > half_extent + cfg.corridor_m {
                return Some(c);
            }
        }
        None
    };
    let step = cfg.surface_spacing_m;
    for _ in 0..cfg.boxes {
        let size = Vector2::new(s.rng.random_range(1.0..6.0), s.rng.random_range(1.0..6.0));
        let Some(center) = place(&mut s, 0.5 * size.norm()) else {
            continue;
        };
        let yaw = s.rng.random_range(0.0..PI);
        let height = s.rng.random_range(0.6..5.0);
        let slope = Vector2::new(
            s.rng.random_range(-0.25..0.25),
            s.rng.random_range(-0.25..0.25),
        );
        s.top(center, yaw, size, height, slope, step);
        s.sides(
            center,
            yaw,
            size,
            height,
            slope,
            0.0,
            SIDE_STEP_FACTOR * step,
        );
        if s.rng.random_bool(0.5) {
            // a smaller block stacked off-center on the top
            let sub = Vector2::new(
                size.x * s.rng.random_range(0.2..0.6),
                size.y * s.rng.random_range(0.2..0.6),
            );
            let off = Vector2::new(
                s.rng.random_range(-0.5..0.5) * (size.x - sub.x),
                s.rng.random_range(-0.5..0.5) * (size.y - sub.y),
            );
            let (sn, cs) = yaw.sin_cos();
            let sub_center =
                center + Vector2::new(cs * off.x - sn * off.y, sn * off.x + cs * off.y);
            let base = height + slope.x * off.x + slope.y * off.y;
            let sub_height = base + s.rng.random_range(0.4..2.0);
            s.top(sub_center, yaw, sub, sub_height, Vector2::zeros(), step);
            s.sides(
                sub_center,
                yaw,
                sub,
                sub_height,
                Vector2::zeros(),
                base,
                SIDE_STEP_FACTOR * step,
            );
        }
        placed += 1;
    }
    for _ in 0..cfg.walls {
        let size = Vector2::new(s.rng.random_range(4.0..15.0), 0.3);
        let Some(center) = place(&mut s, 0.5 * size.x) else {
            continue;
        };
        let yaw = s.rng.random_range(0.0..PI);
        let height = s.rng.random_range(1.0..3.5);
        let slope = Vector2::new(s.rng.random_range(-0.15..0.15), 0.0);
        s.top(center, yaw, size, height, slope, step);
        s.sides(
            center,
            yaw,
            size,
            height,
            slope,
            0.0,
            SIDE_STEP_FACTOR * step,
        );
        placed += 1;
    }
    for _ in 0..cfg.poles {
        let radius = s.rng.random_range(0.1..0.35);
        let Some(center) = place(&mut s, radius) else {
            continue;
        };
        let height = s.rng.random_range(0.5..4.5);
        s.pole(center, radius, height, step);
    }
    (s.out, placed)
}

/// Builds the world and the drive. Clouds are produced on demand by
/// [`SyntheticSequence::cloud`].
pub fn generate(cfg: &SynthConfig) -> SyntheticSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let path = RoundedSquare::new(cfg.side_m, cfg.corner_radius_m);
    let (world, landmarks) = build_world(cfg, &path, &mut rng);

    // bucket the world on a coarse grid so each frame only visits nearby cells
    let n_cells = ((cfg.side_m + 2.0 * cfg.margin_m) / BUCKET_M).ceil() as usize + 1;
    let mut seq = SyntheticSequence {
        cfg: cfg.clone(),
        world,
        buckets: vec![Vec::new(); n_cells * n_cells],
        n_cells,
        poses: Vec::with_capacity(cfg.frames),
        groundtruth: Trajectory::new(),
        landmarks,
    };
    for (i, p) in seq.world.iter().enumerate() {
        let b = seq.bucket(p.x, p.y);
        seq.buckets[b].push(i as u32);
    }

    let length = path.length();
    for k in 0..cfg.frames {
        let (xy, heading) = path.at(k as f64 * cfg.laps * length / cfg.frames as f64);
        let pose = PoseSE3::from_yaw(heading, Vector3::new(xy.x, xy.y, cfg.sensor_height_m));
        seq.poses.push(pose);
        seq.groundtruth
            .push(k, seq.poses[0].inverse().compose(&pose));
    }
    seq
}

/// Writes `velodyne/NNNNNN.bin` and `poses.txt` under `dir`.
pub fn write_sequence(seq: &SyntheticSequence, dir: &Path) -> Result<(), DatasetError> {
    let velodyne = dir.join("velodyne");
    fs::create_dir_all(&velodyne).map_err(|e| DatasetError::Io {
        path: velodyne.clone(),
        source: e,
    })?;
    for k in 0..seq.len() {
        let path = velodyne.join(format!("{k:06}.bin"));
        write_point_cloud(&seq.cloud(k), &path, CloudFormat::KittiBin)?;
    }
    write_trajectory(&seq.groundtruth, &dir.join("poses.txt"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_is_continuous_and_closed() {
        let path = RoundedSquare::new(80.0, 8.0);
        let n = 2000;
        let len = path.length();
        let mut prev = path.at(0.0);
        for k in 1..=n {
            let cur = path.at(k as f64 * len / n as f64);
            let step = (cur.0 - prev.0).norm();
            assert!(step <= len / n as f64 + 1e-9, "jump of {step} at {k}");
            let dh = (cur.1 - prev.1).rem_euclid(TAU);
            assert!(
                !(0.1..=TAU - 1e-9).contains(&dh),
                "heading jump {dh} at {k}"
            );
            prev = cur;
        }
        assert!((path.at(len).0 - path.at(0.0).0).norm() < 1e-9);
        assert!((path.at(0.0).0 - Vector2::new(40.0, 0.0)).norm() < 1e-12);
        // every sample lies on the outline
        for k in 0..n {
            let (p, _) = path.at(k as f64 * len / n as f64);
            assert!(path.distance_to(&p) < 1e-9);
        }
    }

    #[test]
    fn heading_follows_tangent() {
        let path = RoundedSquare::new(80.0, 8.0);
        for s in [0.0, 35.0, 40.0, 100.0, 200.0, 300.0] {
            let (a, h) = path.at(s);
            let (b, _) = path.at(s + 1e-4);
            let t = (b - a).normalize();
            assert!((t - Vector2::new(h.cos(), h.sin())).norm() < 1e-3);
        }
    }

    #[test]
    fn small_sequence_is_deterministic_and_relative() {
        let cfg = SynthConfig {
            frames: 3,
            boxes: 20,
            walls: 2,
            poles: 30,
            margin_m: 10.0,
            range_m: 30.0,
            ..Default::default()
        };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.len(), 3);
        assert_eq!(a.cloud(1).points, b.cloud(1).points);
        assert_ne!(a.cloud(1).points, a.cloud(2).points);
        assert_eq!(a.groundtruth, b.groundtruth);
        assert_eq!(a.groundtruth.get(0), Some(&PoseSE3::identity()));
        assert!(a.landmarks >= 20);
        // ground sits one sensor height below the sensor
        let ground = a
            .cloud(0)
            .points
            .iter()
            .filter(|p| (p.position.z + 1.7).abs() < 0.05)
            .count();
        assert!(ground > 1000);
    }
}
