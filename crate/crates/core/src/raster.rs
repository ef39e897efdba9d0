//! Virtual pinhole camera and height-encoded rasterization of point clouds.
//!
//! A LIDAR point `p` maps to camera coordinates `R (p + t)` and then through
//! the intrinsics to `(u, v) = (f X/Z + t_u, f Y/Z + t_v)`. Image coordinates
//! have their origin at the optical center; rasterization shifts them onto
//! the pixel grid by `(width/2, height/2)`.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::dataset_io::PointCloud;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("point is behind the virtual camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("pixel ({col}, {row}) holds no point")]
    EmptyPixel { col: i64, row: i64 },
    #[error("viewing ray is parallel to the height axis")]
    DegenerateRay,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub f: f64,
    pub t_u: f64,
    pub t_v: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraModel {
    /// f = 500, optical center (0, 0), R = I, t = (-25, -25, 70), 750x750.
    fn default() -> Self {
        Self {
            f: 500.0,
            t_u: 0.0,
            t_v: 0.0,
            rotation: Matrix3::identity(),
            translation: Vector3::new(-25.0, -25.0, 70.0),
            width: 750,
            height: 750,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.f > 0.0) {
            return Err(format!("focal length must be positive (got {})", self.f));
        }
        if self.width == 0 || self.height == 0 {
            return Err("image size must be positive".into());
        }
        let r = &self.rotation;
        if (r.transpose() * r - Matrix3::identity()).norm() > 1e-9
            || (r.determinant() - 1.0).abs() > 1e-9
        {
            return Err("camera rotation is not a proper rotation".into());
        }
        Ok(())
    }

    /// Pixel-grid offset of the optical-center origin.
    pub fn grid_center(&self) -> (f64, f64) {
        ((self.width / 2) as f64, (self.height / 2) as f64)
    }

    /// Grid (column, row) coordinates to image coordinates.
    pub fn grid_to_image(&self, col: f64, row: f64) -> (f64, f64) {
        let (cx, cy) = self.grid_center();
        (col - cx, row - cy)
    }

    pub fn image_to_grid(&self, u: f64, v: f64) -> (f64, f64) {
        let (cx, cy) = self.grid_center();
        (u + cx, v + cy)
    }
}

/// `R (p + t)`.
pub fn lidar_to_camera(p: &Vector3<f64>, cam: &CameraModel) -> Vector3<f64> {
    cam.rotation * (p + cam.translation)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Camera-frame point to image coordinates.
pub fn project_camera(pc: &Vector3<f64>, cam: &CameraModel) -> Result<Projection, RasterError> {
    if !(pc.z > 0.0) {
        return Err(RasterError::BehindCamera { depth: pc.z });
    }
    Ok(Projection {
        u: cam.f * pc.x / pc.z + cam.t_u,
        v: cam.f * pc.y / pc.z + cam.t_v,
        depth: pc.z,
    })
}

/// LIDAR-frame point to image coordinates.
pub fn project(p_l: &Vector3<f64>, cam: &CameraModel) -> Result<Projection, RasterError> {
    project_camera(&lidar_to_camera(p_l, cam), cam)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZMap {
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for ZMap {
    fn default() -> Self {
        Self {
            z_min: -2.0,
            z_max: 8.0,
        }
    }
}

impl ZMap {
    /// Occupied pixels map into `1..=255`; 0 marks an empty pixel.
    pub fn quantize(&self, z: f64) -> u8 {
        let scaled = (255.0 * (z - self.z_min) / (self.z_max - self.z_min)).round();
        scaled.clamp(1.0, 255.0) as u8
    }
}

/// Row-major 8-bit image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0)
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    /// Binary PGM (P5).
    pub fn write_pgm(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(f, "P5\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.data)?;
        f.flush()
    }
}

/// Rasterized frame: 8-bit intensity plane plus the exact height of the
/// point that won each pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterFrame {
    pub intensity: GrayImage,
    pub height_buffer: Vec<Option<f64>>,
    pub frame_index: usize,
}

impl RasterFrame {
    pub fn width(&self) -> usize {
        self.intensity.width
    }

    pub fn height(&self) -> usize {
        self.intensity.height
    }

    pub fn height_at(&self, col: i64, row: i64) -> Option<f64> {
        if col < 0 || row < 0 || col as usize >= self.width() || row as usize >= self.height() {
            return None;
        }
        self.height_buffer[row as usize * self.width() + col as usize]
    }

    pub fn occupied_count(&self) -> usize {
        self.height_buffer.iter().filter(|h| h.is_some()).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RasterStats {
    pub projected: usize,
    pub behind_camera: usize,
    pub outside_grid: usize,
}

pub fn rasterize(cloud: &PointCloud, cam: &CameraModel, zmap: &ZMap) -> RasterFrame {
    rasterize_with_stats(cloud, cam, zmap).0
}

pub fn rasterize_with_stats(
    cloud: &PointCloud,
    cam: &CameraModel,
    zmap: &ZMap,
) -> (RasterFrame, RasterStats) {
    let (w, h) = (cam.width, cam.height);
    let (cx, cy) = cam.grid_center();
    let mut heights: Vec<Option<f64>> = vec![None; w * h];
    let mut stats = RasterStats::default();
    for p in &cloud.points {
        let Ok(proj) = project(&p.position, cam) else {
            stats.behind_camera += 1;
            continue;
        };
        let col = proj.u.round() + cx;
        let row = proj.v.round() + cy;
        if !(col >= 0.0 && row >= 0.0 && col < w as f64 && row < h as f64) {
            stats.outside_grid += 1;
            continue;
        }
        stats.projected += 1;
        let cell = &mut heights[row as usize * w + col as usize];
        let z = p.position.z;
        // Highest point wins; ties keep the first one seen.
        if cell.is_none_or(|old| z > old) {
            *cell = Some(z);
        }
    }
    let data = heights
        .iter()
        .map(|c| c.map_or(0, |z| zmap.quantize(z)))
        .collect();
    (
        RasterFrame {
            intensity: GrayImage {
                width: w,
                height: h,
                data,
            },
            height_buffer: heights,
            frame_index: cloud.frame_index,
        },
        stats,
    )
}

/// Recovers the LIDAR-frame point for grid pixel `(u, v)` using the exact
/// height stored for that pixel.
pub fn back_project(
    u: f64,
    v: f64,
    frame: &RasterFrame,
    cam: &CameraModel,
) -> Result<Vector3<f64>, RasterError> {
    let (col, row) = (u.round() as i64, v.round() as i64);
    let z = frame
        .height_at(col, row)
        .ok_or(RasterError::EmptyPixel { col, row })?;
    back_project_with_height(u, v, z, cam)
}

/// Inverse of [`project`] for a grid pixel whose LIDAR-frame height is known.
pub fn back_project_with_height(
    u: f64,
    v: f64,
    z: f64,
    cam: &CameraModel,
) -> Result<Vector3<f64>, RasterError> {
    let (ui, vi) = cam.grid_to_image(u, v);
    let ray = Vector3::new((ui - cam.t_u) / cam.f, (vi - cam.t_v) / cam.f, 1.0);
    // p = R^T (Z_c ray) - t, with p.z = z fixing the depth Z_c.
    let r_ray = cam.rotation.transpose() * ray;
    if r_ray.z.abs() < 1e-12 {
        return Err(RasterError::DegenerateRay);
    }
    let depth = (z + cam.translation.z) / r_ray.z;
    if !(depth > 0.0) {
        return Err(RasterError::BehindCamera { depth });
    }
    let mut p = r_ray * depth - cam.translation;
    p.z = z;
    Ok(p)
}
