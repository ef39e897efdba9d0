//! Loop detection by keyframe proximity plus feature verification, and
//! SE(3) pose-graph optimization.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use thiserror::Error;

use crate::features::{match_descriptors, ransac_rigid_filter, Match, RigidRansacConfig};
use crate::geometry::{se3_log, se3_right_jacobian_inv, PoseSE3, RigidTransform};
use crate::mapping::KeyFrame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error("pose graph is not connected")]
    DisconnectedGraph,
    #[error("edge references unknown node {0}")]
    UnknownNode(usize),
}

/// Constraint `measurement ≈ T_from^-1 T_to`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub measurement: RigidTransform,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PoseGraph {
    pub nodes: BTreeMap<usize, PoseSE3>,
    pub odometry_edges: Vec<Edge>,
    pub loop_edges: Vec<Edge>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a node; when it is not the first, an odometry edge from the
    /// previous node is derived from the current poses.
    pub fn add_node(&mut self, id: usize, pose: PoseSE3) {
        if let Some((&prev, prev_pose)) = self.nodes.iter().next_back() {
            self.odometry_edges.push(Edge {
                from: prev,
                to: id,
                measurement: prev_pose.inverse().compose(&pose),
            });
        }
        self.nodes.insert(id, pose);
    }

    /// Re-derives the odometry edges touching `ids` from the current poses.
    pub fn refresh_odometry(&mut self, ids: &[usize]) {
        for e in self.odometry_edges.iter_mut() {
            if ids.contains(&e.from) && ids.contains(&e.to) {
                e.measurement = self.nodes[&e.from].inverse().compose(&self.nodes[&e.to]);
            }
        }
    }

    fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.odometry_edges.iter().chain(self.loop_edges.iter())
    }

    fn edge_residual(&self, e: &Edge, nodes: &BTreeMap<usize, PoseSE3>) -> Vector6<f64> {
        let (a, b) = (&nodes[&e.from], &nodes[&e.to]);
        se3_log(&e.measurement.inverse().compose(&a.inverse()).compose(b))
    }

    /// Sum of squared edge residuals.
    pub fn cost(&self) -> f64 {
        self.cost_with(&self.nodes)
    }

    fn cost_with(&self, nodes: &BTreeMap<usize, PoseSE3>) -> f64 {
        self.edges()
            .map(|e| self.edge_residual(e, nodes).norm_squared())
            .sum()
    }

    fn check(&self) -> Result<(), LoopError> {
        let index: BTreeMap<usize, usize> = self
            .nodes
            .keys()
            .enumerate()
            .map(|(i, k)| (*k, i))
            .collect();
        let mut parent: Vec<usize> = (0..index.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for e in self.edges() {
            let a = *index.get(&e.from).ok_or(LoopError::UnknownNode(e.from))?;
            let b = *index.get(&e.to).ok_or(LoopError::UnknownNode(e.to))?;
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
        let root = find(&mut parent, 0);
        if (0..index.len()).any(|i| find(&mut parent, i) != root) {
            return Err(LoopError::DisconnectedGraph);
        }
        Ok(())
    }

    /// Levenberg-Marquardt over all nodes except the first, which anchors
    /// the gauge and is left bit-identical.
    pub fn optimize(&mut self, max_iters: usize) -> Result<OptimizeReport, LoopError> {
        if self.nodes.is_empty() {
            return Ok(OptimizeReport::default());
        }
        self.check()?;
        let ids: Vec<usize> = self.nodes.keys().copied().collect();
        let slot: BTreeMap<usize, usize> = ids
            .iter()
            .skip(1)
            .enumerate()
            .map(|(i, k)| (*k, i))
            .collect();
        let dim = 6 * slot.len();
        let mut cost = self.cost();
        let mut report = OptimizeReport {
            initial_cost: cost,
            final_cost: cost,
            ..Default::default()
        };
        let mut lambda = 1e-4;
        'outer: for _ in 0..max_iters {
            if cost <= 1e-30 || dim == 0 {
                break;
            }
            report.iterations += 1;
            let mut h = DMatrix::<f64>::zeros(dim, dim);
            let mut g = DVector::<f64>::zeros(dim);
            for e in self.edges() {
                let r = self.edge_residual(e, &self.nodes);
                let jr_inv = se3_right_jacobian_inv(&r);
                let (ta, tb) = (&self.nodes[&e.from], &self.nodes[&e.to]);
                let jb = jr_inv;
                let ja: Matrix6<f64> = -jr_inv * tb.inverse().compose(ta).adjoint();
                let blocks = [(slot.get(&e.from), ja), (slot.get(&e.to), jb)];
                for (si, ji) in &blocks {
                    let Some(&si) = si else { continue };
                    let mut gv = g.fixed_rows_mut::<6>(6 * si);
                    gv += ji.transpose() * r;
                    for (sj, jj) in &blocks {
                        let Some(&sj) = sj else { continue };
                        let mut hv = h.fixed_view_mut::<6, 6>(6 * si, 6 * sj);
                        hv += ji.transpose() * jj;
                    }
                }
            }
            loop {
                let mut damped = h.clone();
                for i in 0..dim {
                    damped[(i, i)] += lambda * h[(i, i)].max(1e-9);
                }
                let Some(chol) = damped.cholesky() else {
                    lambda *= 10.0;
                    if lambda > 1e12 {
                        break 'outer;
                    }
                    continue;
                };
                let delta = chol.solve(&(-&g));
                let mut cand = self.nodes.clone();
                for (id, s) in &slot {
                    let d: Vector6<f64> = delta.fixed_rows::<6>(6 * s).into_owned();
                    let p = cand.get_mut(id).expect("slot node exists");
                    *p = p.retract(&d);
                    p.renormalize_if_needed(1e-9);
                }
                let new_cost = self.cost_with(&cand);
                if new_cost < cost {
                    let rel = (cost - new_cost) / cost;
                    self.nodes = cand;
                    cost = new_cost;
                    report.accepted_steps += 1;
                    lambda = (lambda / 10.0).max(1e-12);
                    if rel < 1e-10 {
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
        report.final_cost = cost;
        Ok(report)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopConfig {
    pub enabled: bool,
    pub dist_threshold_m: f64,
    pub exclusion: usize,
    pub min_inliers: usize,
    pub ratio: f64,
    pub inlier_dist_m: f64,
    pub iterations: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            dist_threshold_m: 10.0,
            exclusion: 50,
            min_inliers: 30,
            ratio: 0.75,
            inlier_dist_m: 0.3,
            iterations: 200,
            seed: 0,
            max_iters: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopCandidate {
    pub query_id: usize,
    pub candidate_id: usize,
    pub matches: Vec<Match>,
    /// Maps query sensor coordinates into the candidate's sensor frame.
    pub relative: RigidTransform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rejection {
    pub query_id: usize,
    pub candidate_id: usize,
    pub inliers: usize,
}

/// Keyframes within `dist_threshold_m` of the query, skipping the query and
/// the `exclusion` keyframes just before it; nearest first.
pub fn find_nearest_keyframes(
    graph: &PoseGraph,
    query_id: usize,
    dist_threshold_m: f64,
    exclusion: usize,
) -> Vec<usize> {
    let Some(q) = graph.nodes.get(&query_id) else {
        return Vec::new();
    };
    let mut found: Vec<(f64, usize)> = graph
        .nodes
        .range(..query_id.saturating_sub(exclusion))
        .filter_map(|(id, p)| {
            let d = (p.translation - q.translation).norm();
            (d <= dist_threshold_m).then_some((d, *id))
        })
        .collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    found.into_iter().map(|(_, id)| id).collect()
}

/// Ratio-test matching and rigid RANSAC between the stored features of two
/// keyframes; accepted when at least `min_inliers` survive.
pub fn verify_candidate(
    query: &KeyFrame,
    candidate: &KeyFrame,
    cfg: &LoopConfig,
) -> Result<LoopCandidate, Rejection> {
    let reject = |inliers| Rejection {
        query_id: query.id,
        candidate_id: candidate.id,
        inliers,
    };
    let matches = match_descriptors(&query.descriptors, &candidate.descriptors, cfg.ratio);
    let ransac = RigidRansacConfig {
        iterations: cfg.iterations,
        inlier_dist_m: cfg.inlier_dist_m,
        seed: cfg.seed,
    };
    match ransac_rigid_filter(&query.points, &candidate.points, &matches, &ransac) {
        Ok((inliers, relative)) if inliers.len() >= cfg.min_inliers => Ok(LoopCandidate {
            query_id: query.id,
            candidate_id: candidate.id,
            matches: inliers,
            relative,
        }),
        Ok((inliers, _)) => Err(reject(inliers.len())),
        Err(_) => Err(reject(0)),
    }
}

/// Adds the loop as an edge from candidate to query and re-optimizes.
pub fn add_loop_and_optimize(
    graph: &mut PoseGraph,
    lc: &LoopCandidate,
    max_iters: usize,
) -> Result<OptimizeReport, LoopError> {
    for id in [lc.query_id, lc.candidate_id] {
        if !graph.nodes.contains_key(&id) {
            return Err(LoopError::UnknownNode(id));
        }
    }
    graph.loop_edges.push(Edge {
        from: lc.candidate_id,
        to: lc.query_id,
        measurement: lc.relative,
    });
    graph.optimize(max_iters)
}

/// `query_id candidate_id inliers accepted`.
pub fn format_loop_line(
    query_id: usize,
    candidate_id: usize,
    inliers: usize,
    accepted: bool,
) -> String {
    format!("{query_id} {candidate_id} {inliers} {}", accepted as u8)
}
