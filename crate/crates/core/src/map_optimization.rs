//! Control-point initialization, extension, and incremental optimization.
//!
//! Landmarks grow by intersecting a sphere of radius `r` around the current
//! end control point with the observation's fitted cubic curve, so control
//! points stay evenly spaced along the lane. Each associated observation
//! point then becomes a factor tying it to the four control points of its
//! segment through frozen blending coefficients. With frozen coefficients
//! every factor is linear in the control points, so each landmark keeps an
//! accumulated information matrix and solves are exact.
//!
//! Control points are addressed by a per-landmark stable index that does not
//! change when the landmark grows at its head.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::lane_model::{Category, Cubic, LaneLandmark, LaneObservation, LocalReferenceFrame};
use crate::spline::{basis_coefficients, CatmullRomSpline, DEFAULT_TAU};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("point coincides with the sphere center")]
    DegenerateProjection,
    #[error("information matrix of landmark {0} is not positive definite")]
    Singular(u64),
    #[error("unknown landmark {0}")]
    UnknownLandmark(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    /// Target chord length between control points (m).
    pub chord: f64,
    /// Seed offset of the extension search, in multiples of `chord`.
    pub seed_multiplier: f64,
    pub expand_iterations: usize,
    /// Iterate movement that ends the extension search (m).
    pub expand_tolerance: f64,
    /// Points must lie this far beyond an end plane to drive an extension (m).
    pub extension_margin: f64,
    /// Observations spanning less than this along their principal axis
    /// neither extend nor create landmarks; their cubic fit is too short to
    /// extrapolate from (m).
    pub min_extension_span: f64,
    /// Standard deviation of endpoint regularization residuals (m).
    pub endpoint_sigma: f64,
    /// Standard deviation of the weak prior tying each control point to its
    /// initial position (m).
    pub anchor_sigma: f64,
    /// Floor on per-point measurement sigma (m).
    pub min_point_sigma: f64,
    /// A full re-solve of every landmark runs every this many frames.
    pub batch_period: u64,
    pub tau: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            chord: 3.0,
            seed_multiplier: 3.0,
            expand_iterations: 10,
            expand_tolerance: 1e-3,
            extension_margin: 1.5,
            min_extension_span: 6.0,
            endpoint_sigma: 0.1,
            anchor_sigma: 10.0,
            min_point_sigma: 0.02,
            batch_period: 10,
            tau: DEFAULT_TAU,
        }
    }
}

/// Ordered control points of one lane.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControlPointSet {
    pub points: Vec<Vector3<f64>>,
}

/// Plane through `point` whose `normal` points away from the spline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalPlane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl NormalPlane {
    /// Signed distance beyond the plane (positive outside).
    pub fn beyond(&self, p: &Vector3<f64>) -> f64 {
        (p - self.point).dot(&self.normal)
    }
}

/// Head and tail planes. With four or more control points the normals
/// follow the curve tangent at the first and last on-curve control points;
/// with two or three they follow the end chords; a single point uses
/// `fallback_direction` (the observation's primary direction).
pub fn compute_normal_planes(
    points: &[Vector3<f64>],
    fallback_direction: &Vector3<f64>,
) -> Option<(NormalPlane, NormalPlane)> {
    let n = points.len();
    let (head_dir, tail_dir) = match n {
        0 => return None,
        1 => (*fallback_direction, *fallback_direction),
        2 | 3 => (points[1] - points[0], points[n - 1] - points[n - 2]),
        _ => (points[2] - points[0], points[n - 1] - points[n - 3]),
    };
    let (hn, tn) = (head_dir.try_normalize(1e-12)?, tail_dir.try_normalize(1e-12)?);
    Some((
        NormalPlane { point: points[0], normal: -hn },
        NormalPlane { point: points[n - 1], normal: tn },
    ))
}

/// Points lying more than `margin` beyond the head or the tail plane.
pub fn beyond_normal_plane(
    points: &[Vector3<f64>],
    planes: &(NormalPlane, NormalPlane),
    margin: f64,
) -> Vec<Vector3<f64>> {
    points
        .iter()
        .filter(|p| planes.0.beyond(p) > margin || planes.1.beyond(p) > margin)
        .copied()
        .collect()
}

pub fn project_to_sphere(
    center: &Vector3<f64>,
    radius: f64,
    p: &Vector3<f64>,
) -> Result<Vector3<f64>, MapError> {
    let d = p - center;
    let norm = d.norm();
    if norm <= 1e-12 {
        return Err(MapError::DegenerateProjection);
    }
    Ok(center + d * (radius / norm))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expansion {
    pub point: Vector3<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Next control point beyond `end`, away from `inner`, on the sphere of
/// radius `r` around `end` and (when the search converges) on the cubic
/// curve `(x, f_xy(x), f_xz(x))` expressed in `lrf`.
#[allow(clippy::too_many_arguments)]
pub fn expand(
    inner: &Vector3<f64>,
    end: &Vector3<f64>,
    f_xy: &Cubic,
    f_xz: &Cubic,
    lrf: &LocalReferenceFrame,
    r: f64,
    config: &MapConfig,
) -> Result<Expansion, MapError> {
    let inner_l = lrf.to_local(inner);
    let end_l = lrf.to_local(end);
    let sign = if end_l.x >= inner_l.x { 1.0 } else { -1.0 };
    let mut ps = end_l + Vector3::new(sign * config.seed_multiplier * r, 0.0, 0.0);
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..config.expand_iterations {
        iterations += 1;
        let pf = Vector3::new(ps.x, f_xy.eval(ps.x), f_xz.eval(ps.x));
        let next = project_to_sphere(&end_l, r, &pf)?;
        let moved = (next - ps).norm();
        ps = next;
        if moved < config.expand_tolerance {
            converged = true;
            break;
        }
    }
    Ok(Expansion { point: lrf.from_local(&ps), iterations, converged })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExtensionReport {
    pub head_added: usize,
    pub tail_added: usize,
}

impl ExtensionReport {
    pub fn changed(&self) -> bool {
        self.head_added + self.tail_added > 0
    }
}

/// Length of the observation along its principal axis.
pub fn observation_span(obs: &LaneObservation) -> f64 {
    match (obs.points.first(), obs.points.last()) {
        (Some(a), Some(b)) => (obs.lrf.to_local(b).x - obs.lrf.to_local(a).x).abs(),
        _ => 0.0,
    }
}

/// Grows `set` at either end until no observation point lies beyond the
/// end planes. An empty set is seeded with the first observation point.
/// Observations shorter than `min_extension_span` leave `set` untouched.
pub fn extend_control_points(
    set: &mut ControlPointSet,
    obs: &LaneObservation,
    pose: &Pose<f64>,
    config: &MapConfig,
) -> ExtensionReport {
    let mut report = ExtensionReport::default();
    if obs.points.is_empty() || observation_span(obs) < config.min_extension_span {
        return report;
    }
    let world = obs.world_points(pose);
    let lrf = obs.lrf.rebased(pose);
    let direction = lrf.primary_direction();
    let r = config.chord;
    let points = &mut set.points;
    if points.is_empty() {
        points.push(world[0]);
        report.tail_added += 1;
    }
    let span: f64 = world.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let max_steps = 8 + (2.0 * span / r).ceil() as usize;
    let mut candidates = world;
    for _ in 0..max_steps {
        let Some(planes) = compute_normal_planes(points, &direction) else { break };
        candidates = beyond_normal_plane(&candidates, &planes, config.extension_margin);
        let Some(v0) = candidates.first().copied() else { break };
        let (head, tail) = (points[0], points[points.len() - 1]);
        let extend_head = if points.len() == 1 {
            planes.0.beyond(&v0) > planes.1.beyond(&v0)
        } else {
            (v0 - head).norm() <= (v0 - tail).norm()
        };
        let (inner, end) = match (extend_head, points.len()) {
            (true, 1) => (head + direction, head),
            (false, 1) => (tail - direction, tail),
            (true, _) => (points[1], head),
            (false, n) => (points[n - 2], tail),
        };
        let Ok(step) = expand(&inner, &end, &obs.f_xy, &obs.f_xz, &lrf, r, config) else { break };
        let neighbor_gap = (step.point - end).norm();
        if neighbor_gap < 1e-6 {
            break;
        }
        if extend_head {
            points.insert(0, step.point);
            report.head_added += 1;
        } else {
            points.push(step.point);
            report.tail_added += 1;
        }
    }
    report
}

/// Stable control-point address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId {
    pub landmark: u64,
    pub index: i64,
}

/// `Σ cᵢ P_{first+i} − point`, weighted by `1/σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointToSplineFactor {
    pub landmark: u64,
    pub point: Vector3<f64>,
    /// Stable index of the segment's first control point.
    pub first_index: i64,
    pub u: f64,
    pub coefficients: [f64; 4],
    pub sigma: f64,
    pub frame: u64,
}

impl PointToSplineFactor {
    pub fn variables(&self) -> [VarId; 4] {
        std::array::from_fn(|i| VarId { landmark: self.landmark, index: self.first_index + i as i64 })
    }

    pub fn weight(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }

    pub fn residual(&self, control: &[Vector3<f64>; 4]) -> Vector3<f64> {
        let fit: Vector3<f64> = control
            .iter()
            .zip(self.coefficients)
            .map(|(p, c)| p * c)
            .sum();
        fit - self.point
    }
}

/// `(P_end − P_neighbor) − offset`, with the offset frozen at creation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndpointRegularizationFactor {
    pub landmark: u64,
    pub end: i64,
    pub neighbor: i64,
    pub offset: Vector3<f64>,
    pub weight: f64,
}

impl EndpointRegularizationFactor {
    pub fn residual(&self, end: &Vector3<f64>, neighbor: &Vector3<f64>) -> Vector3<f64> {
        (end - neighbor) - self.offset
    }
}

/// Accumulated normal equations `A x = B` (per axis) and `C = Σ w‖target‖²`
/// over positions `0..n` of one landmark.
#[derive(Debug, Clone, PartialEq)]
struct Information {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: f64,
}

impl Information {
    fn new(n: usize) -> Self {
        Self { a: DMatrix::zeros(n, n), b: DMatrix::zeros(n, 3), c: 0.0 }
    }

    fn grow(&mut self, head: usize, tail: usize) {
        let n = self.a.nrows();
        let m = n + head + tail;
        let mut a = DMatrix::zeros(m, m);
        let mut b = DMatrix::zeros(m, 3);
        a.view_mut((head, head), (n, n)).copy_from(&self.a);
        b.view_mut((head, 0), (n, 3)).copy_from(&self.b);
        self.a = a;
        self.b = b;
    }

    fn add(&mut self, entries: &[(usize, f64)], target: &Vector3<f64>, weight: f64) {
        for &(i, ci) in entries {
            for &(j, cj) in entries {
                self.a[(i, j)] += weight * ci * cj;
            }
            for k in 0..3 {
                self.b[(i, k)] += weight * ci * target[k];
            }
        }
        self.c += weight * target.norm_squared();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapLandmark {
    pub id: u64,
    pub category: Category,
    pub points: Vec<Vector3<f64>>,
    /// Stable index of `points[0]`.
    pub first_index: i64,
    pub created_frame: u64,
    pub last_observed_frame: u64,
    pub point_factors: Vec<PointToSplineFactor>,
    pub head_factor: Option<EndpointRegularizationFactor>,
    pub tail_factor: Option<EndpointRegularizationFactor>,
    anchors: Vec<Vector3<f64>>,
    info: Information,
}

impl MapLandmark {
    pub fn position(&self, index: i64) -> Option<usize> {
        let pos = index - self.first_index;
        (pos >= 0 && (pos as usize) < self.points.len()).then_some(pos as usize)
    }

    pub fn last_index(&self) -> i64 {
        self.first_index + self.points.len() as i64 - 1
    }

    pub fn spline(&self, tau: f64) -> Option<CatmullRomSpline<f64>> {
        CatmullRomSpline::new(self.points.clone(), tau).ok()
    }

    pub fn to_landmark(&self, tau: f64) -> Option<LaneLandmark> {
        Some(LaneLandmark {
            id: self.id,
            spline: self.spline(tau)?,
            category: self.category,
            created_frame: self.created_frame,
            last_observed_frame: self.last_observed_frame,
        })
    }

    fn endpoint_factors(&self) -> impl Iterator<Item = &EndpointRegularizationFactor> {
        self.head_factor.iter().chain(self.tail_factor.iter())
    }

    /// Information matrix and right-hand side including endpoint factors.
    fn system(&self) -> (DMatrix<f64>, DMatrix<f64>, f64) {
        let mut info = self.info.clone();
        for f in self.endpoint_factors() {
            if let (Some(e), Some(nb)) = (self.position(f.end), self.position(f.neighbor)) {
                info.add(&[(e, 1.0), (nb, -1.0)], &f.offset, f.weight);
            }
        }
        (info.a, info.b, info.c)
    }

    /// Cost evaluated factor by factor at the current control points.
    pub fn cost(&self, config: &MapConfig) -> f64 {
        self.cost_at(&self.points, config)
    }

    fn cost_at(&self, points: &[Vector3<f64>], config: &MapConfig) -> f64 {
        let at = |idx: i64| points[(idx - self.first_index) as usize];
        let mut total = 0.0;
        for f in &self.point_factors {
            let control = std::array::from_fn(|i| at(f.first_index + i as i64));
            total += f.weight() * f.residual(&control).norm_squared();
        }
        for f in self.endpoint_factors() {
            total += f.weight * f.residual(&at(f.end), &at(f.neighbor)).norm_squared();
        }
        let anchor_w = 1.0 / (config.anchor_sigma * config.anchor_sigma);
        for (p, a) in points.iter().zip(&self.anchors) {
            total += anchor_w * (p - a).norm_squared();
        }
        total
    }

    /// Minimizes over the control points at `positions`, others held fixed.
    fn solve_subset(&self, positions: &[usize]) -> Result<Vec<Vector3<f64>>, MapError> {
        let (a, b, _) = self.system();
        let n = self.points.len();
        let k = positions.len();
        let mut free = vec![false; n];
        for &p in positions {
            free[p] = true;
        }
        let mut h = DMatrix::zeros(k, k);
        let mut rhs = DMatrix::zeros(k, 3);
        for (r, &i) in positions.iter().enumerate() {
            for (c, &j) in positions.iter().enumerate() {
                h[(r, c)] = a[(i, j)];
            }
            for axis in 0..3 {
                let mut v = b[(i, axis)];
                for j in (0..n).filter(|&j| !free[j]) {
                    v -= a[(i, j)] * self.points[j][axis];
                }
                rhs[(r, axis)] = v;
            }
        }
        let chol = h.cholesky().ok_or(MapError::Singular(self.id))?;
        let x = chol.solve(&rhs);
        let mut points = self.points.clone();
        for (r, &i) in positions.iter().enumerate() {
            points[i] = Vector3::new(x[(r, 0)], x[(r, 1)], x[(r, 2)]);
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OptimizeReport {
    pub cost_before: f64,
    pub cost_after: f64,
    pub variables: usize,
    pub batch: bool,
    pub failed: bool,
}

/// The map: landmarks with their factors, plus refined per-frame poses.
#[derive(Debug, Clone, PartialEq)]
pub struct MapState {
    pub config: MapConfig,
    pub landmarks: BTreeMap<u64, MapLandmark>,
    pub poses: Vec<Pose<f64>>,
    next_id: u64,
    /// Point factors ever added.
    pub point_factor_count: usize,
}

impl MapState {
    pub fn new(config: MapConfig) -> Self {
        Self { config, landmarks: BTreeMap::new(), poses: Vec::new(), next_id: 0, point_factor_count: 0 }
    }

    /// Splined view of every landmark with at least two distinct control points.
    pub fn lane_landmarks(&self) -> Vec<LaneLandmark> {
        self.landmarks
            .values()
            .filter_map(|l| l.to_landmark(self.config.tau))
            .collect()
    }

    pub fn control_point_count(&self) -> usize {
        self.landmarks.values().map(|l| l.points.len()).sum()
    }

    /// Creates a landmark from an unmatched observation and extends it over
    /// the observation. Returns the new id, or `None` when the observation
    /// is too short to seed one.
    pub fn spawn_landmark(&mut self, obs: &LaneObservation, pose: &Pose<f64>, frame: u64) -> Option<u64> {
        let mut set = ControlPointSet::default();
        extend_control_points(&mut set, obs, pose, &self.config);
        if set.points.is_empty() {
            return None;
        }
        let id = self.next_id;
        self.next_id += 1;
        let n = set.points.len();
        let landmark = MapLandmark {
            id,
            category: obs.category,
            anchors: set.points.clone(),
            points: set.points,
            first_index: 0,
            created_frame: frame,
            last_observed_frame: frame,
            point_factors: Vec::new(),
            head_factor: None,
            tail_factor: None,
            info: Information::new(n),
        };
        self.landmarks.insert(id, landmark);
        self.refresh_endpoint_factors(id);
        self.add_anchor_information(id, 0, n);
        Some(id)
    }

    /// Extends an existing landmark with a matched observation.
    pub fn extend_landmark(
        &mut self,
        id: u64,
        obs: &LaneObservation,
        pose: &Pose<f64>,
        frame: u64,
    ) -> Result<ExtensionReport, MapError> {
        let config = self.config;
        let lm = self.landmarks.get_mut(&id).ok_or(MapError::UnknownLandmark(id))?;
        lm.last_observed_frame = frame;
        let mut set = ControlPointSet { points: std::mem::take(&mut lm.points) };
        let report = extend_control_points(&mut set, obs, pose, &config);
        lm.points = set.points;
        if report.changed() {
            let head = report.head_added;
            lm.first_index -= head as i64;
            let mut anchors = lm.points[..head].to_vec();
            anchors.extend_from_slice(&lm.anchors);
            anchors.extend_from_slice(&lm.points[lm.points.len() - report.tail_added..]);
            lm.anchors = anchors;
            lm.info.grow(head, report.tail_added);
            let n = lm.points.len();
            self.add_anchor_information(id, 0, head);
            self.add_anchor_information(id, n - report.tail_added, n);
            self.refresh_endpoint_factors(id);
        }
        Ok(report)
    }

    fn add_anchor_information(&mut self, id: u64, from: usize, to: usize) {
        let w = 1.0 / (self.config.anchor_sigma * self.config.anchor_sigma);
        let lm = self.landmarks.get_mut(&id).expect("landmark exists");
        for pos in from..to {
            let target = lm.anchors[pos];
            lm.info.add(&[(pos, 1.0)], &target, w);
        }
    }

    /// Re-freezes the head and tail regularization offsets, superseding the
    /// previous endpoint factors.
    fn refresh_endpoint_factors(&mut self, id: u64) {
        let weight = 1.0 / (self.config.endpoint_sigma * self.config.endpoint_sigma);
        let lm = self.landmarks.get_mut(&id).expect("landmark exists");
        let n = lm.points.len();
        if n < 2 {
            lm.head_factor = None;
            lm.tail_factor = None;
            return;
        }
        let first = lm.first_index;
        let last = lm.last_index();
        lm.head_factor = Some(EndpointRegularizationFactor {
            landmark: id,
            end: first,
            neighbor: first + 1,
            offset: lm.points[0] - lm.points[1],
            weight,
        });
        lm.tail_factor = Some(EndpointRegularizationFactor {
            landmark: id,
            end: last,
            neighbor: last - 1,
            offset: lm.points[n - 1] - lm.points[n - 2],
            weight,
        });
    }

    /// Adds one point-to-spline factor per world point that parameterizes on
    /// the landmark's spline. Returns the touched variables.
    pub fn add_point_factors(
        &mut self,
        id: u64,
        world_points: &[Vector3<f64>],
        sigmas: &[f64],
        frame: u64,
    ) -> Result<BTreeSet<VarId>, MapError> {
        let tau = self.config.tau;
        let min_sigma = self.config.min_point_sigma;
        let lm = self.landmarks.get_mut(&id).ok_or(MapError::UnknownLandmark(id))?;
        let mut touched = BTreeSet::new();
        let Some(spline) = lm.spline(tau) else { return Ok(touched) };
        if !spline.is_evaluable() {
            return Ok(touched);
        }
        for (p, &sigma) in world_points.iter().zip(sigmas) {
            let Some(param) = spline.parameterize(p) else { continue };
            let factor = PointToSplineFactor {
                landmark: id,
                point: *p,
                first_index: lm.first_index + param.segment as i64,
                u: param.u,
                coefficients: basis_coefficients(param.u, tau),
                sigma: sigma.max(min_sigma),
                frame,
            };
            let entries: Vec<(usize, f64)> = (0..4)
                .map(|i| (param.segment + i, factor.coefficients[i]))
                .collect();
            lm.info.add(&entries, p, factor.weight());
            touched.extend(factor.variables());
            lm.point_factors.push(factor);
            self.point_factor_count += 1;
        }
        Ok(touched)
    }

    pub fn total_cost(&self) -> f64 {
        self.landmarks.values().map(|l| l.cost(&self.config)).sum()
    }

    /// Total cost at the batch optimum, without modifying the map.
    pub fn batch_optimum_cost(&self) -> Result<f64, MapError> {
        let mut copy = self.clone();
        copy.optimize_all()?;
        Ok(copy.total_cost())
    }

    /// Full re-solve of every landmark.
    pub fn optimize_all(&mut self) -> Result<OptimizeReport, MapError> {
        let all: BTreeSet<VarId> = self
            .landmarks
            .values()
            .flat_map(|l| (l.first_index..=l.last_index()).map(move |index| VarId { landmark: l.id, index }))
            .collect();
        self.solve(&all, true)
    }

    /// Re-solves the variables touched by new factors and their one-ring
    /// neighbours; every `batch_period` frames a full solve runs instead.
    pub fn optimize_incremental(&mut self, touched: &BTreeSet<VarId>, frame: u64) -> OptimizeReport {
        let period = self.config.batch_period.max(1);
        let result = if frame % period == period - 1 {
            self.optimize_all()
        } else {
            let ring: BTreeSet<VarId> = touched
                .iter()
                .flat_map(|v| (v.index - 3..=v.index + 3).map(move |index| VarId { landmark: v.landmark, index }))
                .collect();
            self.solve(&ring, false)
        };
        result.unwrap_or(OptimizeReport { failed: true, ..OptimizeReport::default() })
    }

    fn solve(&mut self, vars: &BTreeSet<VarId>, batch: bool) -> Result<OptimizeReport, MapError> {
        let mut by_landmark: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for v in vars {
            if let Some(lm) = self.landmarks.get(&v.landmark) {
                if let Some(pos) = lm.position(v.index) {
                    by_landmark.entry(v.landmark).or_default().push(pos);
                }
            }
        }
        let mut report = OptimizeReport { batch, ..OptimizeReport::default() };
        let config = self.config;
        for (id, positions) in by_landmark {
            let lm = self.landmarks.get_mut(&id).expect("landmark exists");
            let before = lm.cost(&config);
            report.cost_before += before;
            match lm.solve_subset(&positions) {
                Ok(points) => {
                    let after = lm.cost_at(&points, &config);
                    if after <= before * (1.0 + 1e-12) + 1e-12 {
                        lm.points = points;
                        report.cost_after += after;
                    } else {
                        report.cost_after += before;
                    }
                    report.variables += positions.len();
                }
                Err(e) => {
                    log::warn!("landmark {id}: {e}; keeping previous estimate");
                    report.cost_after += before;
                    report.failed = true;
                }
            }
        }
        Ok(report)
    }

    pub fn next_landmark_id(&self) -> u64 {
        self.next_id
    }

    /// Inserts a landmark with the given control points and no factors.
    pub fn insert_landmark(&mut self, category: Category, points: Vec<Vector3<f64>>, frame: u64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let n = points.len();
        self.landmarks.insert(
            id,
            MapLandmark {
                id,
                category,
                anchors: points.clone(),
                points,
                first_index: 0,
                created_frame: frame,
                last_observed_frame: frame,
                point_factors: Vec::new(),
                head_factor: None,
                tail_factor: None,
                info: Information::new(n),
            },
        );
        self.refresh_endpoint_factors(id);
        self.add_anchor_information(id, 0, n);
        id
    }
}
