//! Per-frame pose refinement against the lane map.
//!
//! Each associated observation point contributes the lateral part of its
//! offset from the landmark spline, `(I − d dᵀ)(T p − p(u))`, robustified by
//! a Huber kernel. A weighted prior `W · log(T_odom⁻¹ T)` keeps the solve
//! well-posed along directions the lanes do not constrain.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::association::AssociationResult;
use crate::geometry::{pose_between_log, skew, so3_right_jacobian_inv, Pose, PoseDelta, PoseNoise};
use crate::lane_model::LaneObservation;
use crate::spline::CatmullRomSpline;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseUpdateConfig {
    /// Huber threshold on the residual norm (m).
    pub kernel_scale: f64,
    /// Re-parameterization rounds.
    pub max_outer_iterations: usize,
    /// Pose change (tangent norm) that ends the re-parameterization loop.
    pub outer_tolerance: f64,
    pub max_iterations: usize,
    pub lambda_initial: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_factor: f64,
}

impl Default for PoseUpdateConfig {
    fn default() -> Self {
        Self {
            kernel_scale: 1.0,
            max_outer_iterations: 5,
            outer_tolerance: 1e-4,
            max_iterations: 20,
            lambda_initial: 1e-4,
            lambda_min: 1e-6,
            lambda_max: 1e2,
            lambda_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentResidualTerm {
    /// Observation point in the body frame.
    pub body_point: Vector3<f64>,
    /// The same point in the world frame at construction.
    pub world_point: Vector3<f64>,
    /// Foot point `p(u_k)` on the landmark spline.
    pub foot: Vector3<f64>,
    /// Unit tangent at the foot point.
    pub tangent: Vector3<f64>,
    pub landmark: u64,
}

impl TangentResidualTerm {
    pub fn projector(&self) -> Matrix3<f64> {
        Matrix3::identity() - self.tangent * self.tangent.transpose()
    }

    pub fn residual(&self, pose: &Pose<f64>) -> Vector3<f64> {
        self.projector() * (pose.transform_point(&self.body_point) - self.foot)
    }

    /// Jacobian with respect to a right perturbation `T · exp([ω; ρ])`.
    pub fn jacobian(&self, pose: &Pose<f64>) -> SMatrix<f64, 3, 6> {
        let mut j = SMatrix::<f64, 3, 6>::zeros();
        j.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(-pose.rotation * skew(&self.body_point)));
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&pose.rotation);
        self.projector() * j
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSolve {
    pub pose: Pose<f64>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Set when no damping level reduced the cost from a non-stationary start.
    pub diverged: bool,
}

/// Huber-robustified squared norm.
pub fn huber(squared: f64, scale: f64) -> f64 {
    let r = squared.sqrt();
    if r <= scale {
        squared
    } else {
        2.0 * scale * r - scale * scale
    }
}

fn huber_weight(norm: f64, scale: f64) -> f64 {
    if norm <= scale {
        1.0
    } else {
        scale / norm
    }
}

/// Builds point-to-tangent terms for every matched observation point that
/// parameterizes onto its landmark's spline under `pose`.
pub fn build_terms(
    observations: &[LaneObservation],
    association: &AssociationResult,
    splines: &BTreeMap<u64, &CatmullRomSpline<f64>>,
    pose: &Pose<f64>,
) -> Vec<TangentResidualTerm> {
    let mut terms = Vec::new();
    for (&obs_idx, &landmark) in &association.matches {
        let Some(spline) = splines.get(&landmark) else { continue };
        for p in &observations[obs_idx].points {
            let world = pose.transform_point(p);
            let Some(param) = spline.parameterize(&world) else { continue };
            let (Ok(foot), Ok(tangent)) = (spline.evaluate(param), spline.unit_tangent(param)) else {
                continue;
            };
            terms.push(TangentResidualTerm { body_point: *p, world_point: world, foot, tangent, landmark });
        }
    }
    terms
}

struct Prior {
    reference: Pose<f64>,
    weight: Vector6<f64>,
}

impl Prior {
    fn new(reference: Pose<f64>, noise: &PoseNoise) -> Self {
        let wr = 1.0 / noise.sigma_theta.max(1e-9);
        let wt = 1.0 / noise.sigma_t.max(1e-9);
        Self { reference, weight: Vector6::new(wr, wr, wr, wt, wt, wt) }
    }

    fn residual(&self, pose: &Pose<f64>) -> Option<Vector6<f64>> {
        let delta = pose_between_log(&self.reference, pose).ok()?;
        Some(delta.0.component_mul(&self.weight))
    }

    fn jacobian(&self, pose: &Pose<f64>) -> Option<Matrix6<f64>> {
        let delta = pose_between_log(&self.reference, pose).ok()?;
        let rel_rot = self.reference.rotation.transpose() * pose.rotation;
        let mut j = Matrix6::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&so3_right_jacobian_inv(&delta.rotation()));
        j.fixed_view_mut::<3, 3>(3, 3).copy_from(&rel_rot);
        Some(Matrix6::from_diagonal(&self.weight) * j)
    }
}

fn total_cost(terms: &[TangentResidualTerm], prior: &Prior, pose: &Pose<f64>, scale: f64) -> f64 {
    let lanes: f64 = terms.iter().map(|t| huber(t.residual(pose).norm_squared(), scale)).sum();
    match prior.residual(pose) {
        Some(r) => lanes + r.norm_squared(),
        None => f64::INFINITY,
    }
}

/// Minimizes the lane terms plus the odometry prior starting from `odom`.
pub fn refine_pose(
    odom: &Pose<f64>,
    terms: &[TangentResidualTerm],
    noise: &PoseNoise,
    config: &PoseUpdateConfig,
) -> PoseSolve {
    refine_pose_from(odom, odom, terms, noise, config)
}

/// As [`refine_pose`], with the iteration started at `start` instead of at
/// the prior's reference pose.
pub fn refine_pose_from(
    odom: &Pose<f64>,
    start: &Pose<f64>,
    terms: &[TangentResidualTerm],
    noise: &PoseNoise,
    config: &PoseUpdateConfig,
) -> PoseSolve {
    let prior = Prior::new(*odom, noise);
    let scale = config.kernel_scale;
    let initial_cost = total_cost(terms, &prior, start, scale);
    if terms.is_empty() {
        let odom_cost = total_cost(terms, &prior, odom, scale);
        return PoseSolve { pose: *odom, initial_cost, final_cost: odom_cost, iterations: 0, diverged: false };
    }
    let mut pose = *start;
    let mut cost = initial_cost;
    let mut lambda = config.lambda_initial.clamp(config.lambda_min, config.lambda_max);
    let mut iterations = 0;
    let mut diverged = false;
    for iter in 0..config.max_iterations {
        iterations = iter + 1;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for t in terms {
            let r = t.residual(&pose);
            let j = t.jacobian(&pose);
            let w = huber_weight(r.norm(), scale);
            h += j.transpose() * j * w;
            g += j.transpose() * r * w;
        }
        let (Some(rp), Some(jp)) = (prior.residual(&pose), prior.jacobian(&pose)) else {
            diverged = true;
            break;
        };
        h += jp.transpose() * jp;
        g += jp.transpose() * rp;
        let mut accepted = false;
        loop {
            let mut damped = h;
            for k in 0..6 {
                damped[(k, k)] += lambda * (h[(k, k)] + 1e-12);
            }
            let step = damped.cholesky().map(|c| c.solve(&(-g)));
            if let Some(step) = step {
                let candidate = pose.retract(&PoseDelta(step));
                let c = total_cost(terms, &prior, &candidate, scale);
                if c < cost {
                    let small = step.norm() < 1e-12;
                    pose = candidate;
                    cost = c;
                    lambda = (lambda / config.lambda_factor).max(config.lambda_min);
                    accepted = true;
                    if small {
                        return PoseSolve { pose, initial_cost, final_cost: cost, iterations, diverged };
                    }
                    break;
                }
            }
            lambda *= config.lambda_factor;
            if lambda > config.lambda_max {
                lambda = config.lambda_max;
                break;
            }
        }
        if !accepted {
            if iter == 0 && g.norm() > 1e-6 * (1.0 + cost) {
                diverged = true;
            }
            break;
        }
    }
    if diverged {
        let odom_cost = total_cost(terms, &prior, odom, scale);
        return PoseSolve { pose: *odom, initial_cost, final_cost: odom_cost, iterations, diverged };
    }
    PoseSolve { pose, initial_cost, final_cost: cost, iterations, diverged }
}

/// Outcome of the full update including re-parameterization rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseUpdate {
    pub pose: Pose<f64>,
    pub terms: usize,
    pub rounds: usize,
    pub diverged: bool,
}

/// Alternates term construction (foot points and tangents under the
/// current pose) with a fixed-term solve until the pose settles.
pub fn update_pose(
    odom: &Pose<f64>,
    observations: &[LaneObservation],
    association: &AssociationResult,
    splines: &BTreeMap<u64, &CatmullRomSpline<f64>>,
    noise: &PoseNoise,
    config: &PoseUpdateConfig,
) -> PoseUpdate {
    let mut pose = *odom;
    let mut rounds = 0;
    let mut terms_used = 0;
    for _ in 0..config.max_outer_iterations.max(1) {
        rounds += 1;
        let terms = build_terms(observations, association, splines, &pose);
        terms_used = terms.len();
        if terms.is_empty() {
            return PoseUpdate { pose: *odom, terms: 0, rounds, diverged: false };
        }
        let solve = refine_pose_from(odom, &pose, &terms, noise, config);
        if solve.diverged {
            return PoseUpdate { pose: *odom, terms: terms_used, rounds, diverged: true };
        }
        let change = pose_between_log(&pose, &solve.pose).map(|d| d.0.norm()).unwrap_or(f64::INFINITY);
        pose = solve.pose;
        if change < config.outer_tolerance {
            break;
        }
    }
    PoseUpdate { pose, terms: terms_used, rounds, diverged: false }
}
