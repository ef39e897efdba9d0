//! Reprojection residuals, their Jacobians and windowed Levenberg-Marquardt
//! bundle adjustment with the points eliminated by Schur complement.
//!
//! A keyframe pose `T = (R, t)` maps sensor to world, so a world point is
//! seen at `p_s = R^T (x_w - t)` and projected through the virtual camera.
//! Pose increments are right perturbations `T exp(delta)`, `delta = (rho, phi)`.

use std::collections::BTreeMap;

use nalgebra::{
    DMatrix, DVector, Matrix2x3, Matrix3, Matrix6, Matrix6x3, Vector2, Vector3, Vector6,
};

use super::LocalMap;
use crate::geometry::{skew, PoseSE3};
use crate::raster::{lidar_to_camera, project_camera, CameraModel, RasterError};

/// Predicted grid coordinates of a world point seen from `pose`.
fn predict(
    pose: &PoseSE3,
    x_w: &Vector3<f64>,
    cam: &CameraModel,
) -> Result<Vector2<f64>, RasterError> {
    let p = project_camera(
        &lidar_to_camera(&pose.inverse_transform_point(x_w), cam),
        cam,
    )?;
    let (col, row) = cam.image_to_grid(p.u, p.v);
    Ok(Vector2::new(col, row))
}

/// Observed grid pixel minus the predicted projection.
pub fn reproject_residual(
    pose: &PoseSE3,
    x_w: &Vector3<f64>,
    obs: (f64, f64),
    cam: &CameraModel,
) -> Result<Vector2<f64>, RasterError> {
    Ok(Vector2::new(obs.0, obs.1) - predict(pose, x_w, cam)?)
}

/// Derivatives of the predicted projection (not of the residual, which has
/// the opposite sign).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaJacobians {
    /// With respect to camera coordinates `(X, Y, Z)`.
    pub projection: Matrix2x3<f64>,
    /// With respect to the world point.
    pub point: Matrix2x3<f64>,
    /// With respect to the translation part `rho` of the pose increment.
    pub translation: Matrix2x3<f64>,
    /// With respect to the rotation part `phi` of the pose increment.
    pub rotation: Matrix2x3<f64>,
}

pub fn ba_jacobians(
    pose: &PoseSE3,
    x_w: &Vector3<f64>,
    cam: &CameraModel,
) -> Result<BaJacobians, RasterError> {
    let p_s = pose.inverse_transform_point(x_w);
    let pc = lidar_to_camera(&p_s, cam);
    if !(pc.z > 0.0) {
        return Err(RasterError::BehindCamera { depth: pc.z });
    }
    let (x, y, z) = (pc.x, pc.y, pc.z);
    let f = cam.f;
    let projection = Matrix2x3::new(f / z, 0.0, -f * x / (z * z), 0.0, f / z, -f * y / (z * z));
    let pr = projection * cam.rotation;
    Ok(BaJacobians {
        projection,
        point: pr * pose.rotation.transpose(),
        translation: -pr,
        rotation: pr * skew(&p_s),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaConfig {
    pub max_iters: usize,
    pub lambda_init: f64,
    /// Huber threshold in pixels; `None` is plain least squares.
    pub huber_delta: Option<f64>,
    /// Oldest window keyframes held fixed. One pose removes the rigid gauge;
    /// the pinhole projection leaves a scale freedom that a second fixed pose
    /// removes.
    pub fixed_poses: usize,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            max_iters: 10,
            lambda_init: 1e-3,
            huber_delta: None,
            fixed_poses: 2,
        }
    }
}

/// A bundle-adjustment problem over indexed poses and points.
#[derive(Clone, Debug, Default)]
pub struct BaProblem {
    pub poses: Vec<PoseSE3>,
    pub fixed: Vec<bool>,
    pub points: Vec<Vector3<f64>>,
    /// `(pose index, point index, observed grid pixel)`.
    pub observations: Vec<(usize, usize, Vector2<f64>)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BaSolution {
    pub poses: Vec<PoseSE3>,
    pub points: Vec<Vector3<f64>>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    /// Accepted costs, starting with the initial one.
    pub cost_history: Vec<f64>,
    /// The damped normal equations could not be solved; inputs are returned.
    pub singular: bool,
}

fn robust(sq: f64, delta: Option<f64>) -> (f64, f64) {
    match delta {
        Some(d) if sq > d * d => {
            let r = sq.sqrt();
            (2.0 * d * r - d * d, d / r)
        }
        _ => (sq, 1.0),
    }
}

fn total_cost(
    problem: &BaProblem,
    poses: &[PoseSE3],
    points: &[Vector3<f64>],
    cam: &CameraModel,
    huber: Option<f64>,
) -> f64 {
    let mut cost = 0.0;
    for (pi, xi, obs) in &problem.observations {
        match predict(&poses[*pi], &points[*xi], cam) {
            Ok(c) => cost += robust((obs - c).norm_squared(), huber).0,
            Err(_) => return f64::INFINITY,
        }
    }
    cost
}

struct Normal {
    /// Reduced system over free poses.
    hcc: DMatrix<f64>,
    gc: DVector<f64>,
    /// Per point: Hessian block, gradient and `(free slot, H_cp block)` list.
    hpp: Vec<Matrix3<f64>>,
    gp: Vec<Vector3<f64>>,
    hcp: Vec<Vec<(usize, Matrix6x3<f64>)>>,
}

fn linearize(
    problem: &BaProblem,
    poses: &[PoseSE3],
    points: &[Vector3<f64>],
    slots: &[Option<usize>],
    n_free: usize,
    cam: &CameraModel,
    huber: Option<f64>,
) -> Normal {
    let mut n = Normal {
        hcc: DMatrix::zeros(6 * n_free, 6 * n_free),
        gc: DVector::zeros(6 * n_free),
        hpp: vec![Matrix3::zeros(); points.len()],
        gp: vec![Vector3::zeros(); points.len()],
        hcp: vec![Vec::new(); points.len()],
    };
    for (pi, xi, obs) in &problem.observations {
        let (pose, x) = (&poses[*pi], &points[*xi]);
        let (Ok(c), Ok(j)) = (predict(pose, x, cam), ba_jacobians(pose, x, cam)) else {
            continue;
        };
        let e = obs - c;
        let w = robust(e.norm_squared(), huber).1;
        // residual Jacobians are the negated projection Jacobians
        let jp = -j.point;
        n.hpp[*xi] += w * jp.transpose() * jp;
        n.gp[*xi] += w * jp.transpose() * e;
        if let Some(s) = slots[*pi] {
            let mut jc = nalgebra::Matrix2x6::zeros();
            jc.fixed_view_mut::<2, 3>(0, 0).copy_from(&(-j.translation));
            jc.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-j.rotation));
            let block: Matrix6<f64> = w * jc.transpose() * jc;
            let mut view = n.hcc.fixed_view_mut::<6, 6>(6 * s, 6 * s);
            view += block;
            let mut gv = n.gc.fixed_rows_mut::<6>(6 * s);
            gv += w * jc.transpose() * e;
            let cross: Matrix6x3<f64> = w * jc.transpose() * jp;
            match n.hcp[*xi].iter_mut().find(|(slot, _)| *slot == s) {
                Some((_, m)) => *m += cross,
                None => n.hcp[*xi].push((s, cross)),
            }
        }
    }
    n
}

/// Solves the damped system `(H + lambda diag(H)) delta = -g`; `None` when
/// it is not positive definite.
fn solve_damped(n: &Normal, lambda: f64) -> Option<(DVector<f64>, Vec<Vector3<f64>>)> {
    let dim = n.gc.len();
    let mut s = n.hcc.clone();
    for i in 0..dim {
        s[(i, i)] *= 1.0 + lambda;
    }
    let mut b = -n.gc.clone();
    let mut vinv = Vec::with_capacity(n.hpp.len());
    for (j, h) in n.hpp.iter().enumerate() {
        if n.hcp[j].is_empty() && h.iter().all(|v| *v == 0.0) {
            vinv.push(None);
            continue;
        }
        let mut v = *h;
        for k in 0..3 {
            v[(k, k)] *= 1.0 + lambda;
        }
        let vi = v.try_inverse()?;
        for (sa, wa) in &n.hcp[j] {
            let wv = wa * vi;
            let mut bv = b.fixed_rows_mut::<6>(6 * sa);
            bv += wv * n.gp[j];
            for (sb, wb) in &n.hcp[j] {
                let mut view = s.fixed_view_mut::<6, 6>(6 * sa, 6 * sb);
                view -= wv * wb.transpose();
            }
        }
        vinv.push(Some(vi));
    }
    let dc = if dim == 0 {
        DVector::zeros(0)
    } else {
        s.cholesky()?.solve(&b)
    };
    let dp = n
        .hpp
        .iter()
        .enumerate()
        .map(|(j, _)| match vinv[j] {
            None => Vector3::zeros(),
            Some(vi) => {
                let mut rhs = -n.gp[j];
                for (sa, wa) in &n.hcp[j] {
                    rhs -= wa.transpose() * dc.fixed_rows::<6>(6 * sa);
                }
                vi * rhs
            }
        })
        .collect();
    if !dc.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((dc, dp))
}

/// Levenberg-Marquardt with Marquardt (diagonal) damping. Stops after
/// `max_iters` linearizations or when an accepted step lowers the cost by a
/// relative amount below 1e-8.
pub fn solve_bundle_adjustment(
    problem: &BaProblem,
    cam: &CameraModel,
    cfg: &BaConfig,
) -> BaSolution {
    let mut poses = problem.poses.clone();
    let mut points = problem.points.clone();
    let mut slots = vec![None; poses.len()];
    let mut n_free = 0;
    for (i, fixed) in problem.fixed.iter().enumerate() {
        if !fixed {
            slots[i] = Some(n_free);
            n_free += 1;
        }
    }
    let mut cost = total_cost(problem, &poses, &points, cam, cfg.huber_delta);
    let mut out = BaSolution {
        initial_cost: cost,
        final_cost: cost,
        cost_history: vec![cost],
        ..Default::default()
    };
    let mut lambda = cfg.lambda_init;
    if cost > 0.0 && cost.is_finite() {
        'outer: for _ in 0..cfg.max_iters {
            out.iterations += 1;
            let normal = linearize(
                problem,
                &poses,
                &points,
                &slots,
                n_free,
                cam,
                cfg.huber_delta,
            );
            loop {
                let Some((dc, dp)) = solve_damped(&normal, lambda) else {
                    if out.accepted_steps == 0 {
                        out.singular = true;
                        poses = problem.poses.clone();
                        points = problem.points.clone();
                        cost = out.initial_cost;
                    }
                    break 'outer;
                };
                let cand_poses: Vec<PoseSE3> = poses
                    .iter()
                    .zip(&slots)
                    .map(|(p, s)| match s {
                        Some(s) => {
                            let d: Vector6<f64> = dc.fixed_rows::<6>(6 * s).into_owned();
                            p.retract(&d)
                        }
                        None => *p,
                    })
                    .collect();
                let cand_points: Vec<Vector3<f64>> =
                    points.iter().zip(&dp).map(|(x, d)| x + d).collect();
                let new_cost = total_cost(problem, &cand_poses, &cand_points, cam, cfg.huber_delta);
                if new_cost < cost {
                    let rel = (cost - new_cost) / cost;
                    poses = cand_poses;
                    points = cand_points;
                    cost = new_cost;
                    out.accepted_steps += 1;
                    out.cost_history.push(cost);
                    lambda = (lambda / 10.0).max(1e-12);
                    if rel < 1e-8 || cost == 0.0 {
                        break 'outer;
                    }
                    break;
                }
                lambda *= 10.0;
                if lambda > 1e12 {
                    break 'outer;
                }
            }
        }
    }
    out.poses = poses;
    out.points = points;
    out.final_cost = cost;
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BaResult {
    pub poses: Vec<(usize, PoseSE3)>,
    pub points: Vec<(usize, Vector3<f64>)>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub singular: bool,
}

/// Refines the window keyframes and the local points they observe.
pub fn local_bundle_adjust(map: &LocalMap, cam: &CameraModel, cfg: &BaConfig) -> BaResult {
    let mut problem = BaProblem::default();
    let mut kf_ids = Vec::new();
    let mut point_index: BTreeMap<usize, usize> = BTreeMap::new();
    let mut point_ids = Vec::new();
    for (k, kf) in map.window_keyframes().enumerate() {
        kf_ids.push(kf.id);
        problem.poses.push(kf.pose);
        problem.fixed.push(k < cfg.fixed_poses.max(1));
        for obs in &kf.observations {
            let Some(mp) = map.points.get(&obs.point_id) else {
                continue;
            };
            let idx = *point_index.entry(mp.id).or_insert_with(|| {
                point_ids.push(mp.id);
                problem.points.push(mp.position);
                problem.points.len() - 1
            });
            problem
                .observations
                .push((k, idx, Vector2::new(obs.u, obs.v)));
        }
    }
    if problem.observations.is_empty() {
        return BaResult::default();
    }
    let sol = solve_bundle_adjustment(&problem, cam, cfg);
    BaResult {
        poses: kf_ids.into_iter().zip(sol.poses).collect(),
        points: point_ids.into_iter().zip(sol.points).collect(),
        initial_cost: sol.initial_cost,
        final_cost: sol.final_cost,
        iterations: sol.iterations,
        accepted_steps: sol.accepted_steps,
        singular: sol.singular,
    }
}
