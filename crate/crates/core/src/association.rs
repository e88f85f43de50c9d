//! Observation-to-landmark association.
//!
//! Candidate pairs come from a category gate and a gated Chamfer distance
//! with a match-rate penalty. Pairs are then scored by how well they agree
//! with every other compatible pair on the left-to-right order of lanes, and
//! a maximum-weight assignment picks the final one-to-one matching.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::assignment::max_weight_assignment;
use crate::geometry::{Pose, PoseNoise};
use crate::kdtree::KdTree;
use crate::lane_model::{Category, LaneLandmark, LaneObservation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssociationConfig {
    /// Landmark sampling spacing for Chamfer queries (m).
    pub landmark_spacing: f64,
    /// Lower bound on the Chamfer distance before inversion (m).
    pub d_floor: f64,
    /// Offset added to the consistency score.
    pub s_floor: f64,
    /// Cap on a single consistency edge weight.
    pub s_max: f64,
    /// Weight edges by lateral-order consistency; off gives distance-only.
    pub use_consistency: bool,
}

impl Default for AssociationConfig {
    fn default() -> Self {
        Self {
            landmark_spacing: 0.5,
            d_floor: 0.01,
            s_floor: 1.0,
            s_max: 100.0,
            use_consistency: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePair {
    pub observation: usize,
    pub landmark: u64,
    /// Gated Chamfer distance (m).
    pub distance: f64,
    /// Number of points inside their gates.
    pub matched: usize,
    pub gate_mean: f64,
}

/// BEV anchor points of a candidate pair on both the observation and the
/// landmark side, used by the lateral order test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeometry {
    pub obs_start: Vector2<f64>,
    pub obs_end: Vector2<f64>,
    pub obs_median: Vector2<f64>,
    pub map_start: Vector2<f64>,
    pub map_end: Vector2<f64>,
    pub map_median: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateralTest {
    pub consistent: bool,
    pub phi_obs: f64,
    pub phi_map: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyGraph {
    pub vertices: Vec<CandidatePair>,
    /// `(i, j, weight)` with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssociationResult {
    pub matches: BTreeMap<usize, u64>,
    pub new_lanes: Vec<usize>,
}

impl AssociationResult {
    pub fn is_one_to_one(&self) -> bool {
        let landmarks: BTreeSet<u64> = self.matches.values().copied().collect();
        landmarks.len() == self.matches.len()
    }

    pub fn covers(&self, observation_count: usize) -> bool {
        let mut seen = vec![0u8; observation_count];
        for &i in self.matches.keys().chain(self.new_lanes.iter()) {
            if i >= observation_count {
                return false;
            }
            seen[i] += 1;
        }
        seen.iter().all(|&c| c == 1)
    }
}

/// Sampled landmark with its spatial index.
#[derive(Debug, Clone)]
pub struct IndexedLandmark {
    pub id: u64,
    pub category: Category,
    pub index: KdTree,
}

impl IndexedLandmark {
    /// `None` when the landmark has fewer than four control points. Samples
    /// run through the end control points, which lie on the observed lane.
    pub fn build(landmark: &LaneLandmark, spacing: f64) -> Option<Self> {
        if !landmark.spline.is_evaluable() {
            return None;
        }
        Some(Self {
            id: landmark.id,
            category: landmark.category,
            index: KdTree::new(landmark.spline.sample_with_ends(spacing)),
        })
    }
}

/// Two-sigma bound on the distance between an observed point and its true
/// match: `2‖p‖ sin(σθ) + 2σt + 2σd`.
pub fn point_gate(p: &Vector3<f64>, noise: &PoseNoise, sigma_d: f64) -> f64 {
    2.0 * p.norm() * noise.sigma_theta.sin() + 2.0 * noise.sigma_t + 2.0 * sigma_d
}

pub fn observation_gates(obs: &LaneObservation, noise: &PoseNoise) -> Vec<f64> {
    obs.points
        .iter()
        .zip(&obs.sigmas)
        .map(|(p, &s)| point_gate(p, noise, s))
        .collect()
}

/// Gated Chamfer distance `√(M/n_a) · (1/n_a) · Σ 𝕀(d_k < δ_k) d_k` and
/// `n_a`; `None` when no point passes its gate.
pub fn gated_chamfer(
    obs: &LaneObservation,
    pose: &Pose<f64>,
    landmark: &KdTree,
    gates: &[f64],
) -> Option<(f64, usize)> {
    assert_eq!(gates.len(), obs.points.len(), "one gate per observation point");
    let m = obs.points.len();
    let mut sum = 0.0;
    let mut matched = 0usize;
    for (p, &gate) in obs.points.iter().zip(gates) {
        let (_, d) = landmark.nearest(&pose.transform_point(p))?;
        if d < gate {
            sum += d;
            matched += 1;
        }
    }
    if matched == 0 {
        return None;
    }
    let na = matched as f64;
    Some(((m as f64 / na).sqrt() * sum / na, matched))
}

fn bev(p: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

/// Anchors for the lateral test: the first, middle, and last gated points
/// of the observation and their nearest landmark samples.
pub fn pair_geometry(
    obs: &LaneObservation,
    pose: &Pose<f64>,
    landmark: &KdTree,
    gates: &[f64],
) -> Option<PairGeometry> {
    let mut inside = Vec::new();
    for (p, &gate) in obs.points.iter().zip(gates) {
        let w = pose.transform_point(p);
        let (idx, d) = landmark.nearest(&w)?;
        if d < gate {
            inside.push((w, landmark.points()[idx]));
        }
    }
    let (first, last) = (inside.first()?, inside.last()?);
    let mid = inside[inside.len() / 2];
    Some(PairGeometry {
        obs_start: bev(&first.0),
        obs_end: bev(&last.0),
        obs_median: bev(&mid.0),
        map_start: bev(&first.1),
        map_end: bev(&last.1),
        map_median: bev(&mid.1),
    })
}

const DEGENERATE_LINE: f64 = 1e-6;

/// Signed distance of `point` from the line `start → end`, with the line
/// oriented along `forward`. Positive is to the left.
fn signed_offset(
    start: &Vector2<f64>,
    end: &Vector2<f64>,
    point: &Vector2<f64>,
    forward: &Vector2<f64>,
) -> Option<f64> {
    let mut dir = end - start;
    let len = dir.norm();
    if len < DEGENERATE_LINE {
        return None;
    }
    if dir.dot(forward) < 0.0 {
        dir = -dir;
    }
    let rel = point - start;
    Some((dir.x * rel.y - dir.y * rel.x) / len)
}

/// Lateral order agreement between two candidate pairs that share neither
/// observation nor landmark. The line through pair `b` is tested against
/// the median point of pair `a`, in BEV, on both sides.
pub fn lateral_order_test(a: &PairGeometry, b: &PairGeometry, forward: &Vector2<f64>) -> LateralTest {
    let side = |sa: &Vector2<f64>, ea: &Vector2<f64>, ma: &Vector2<f64>, sb: &Vector2<f64>, eb: &Vector2<f64>, mb: &Vector2<f64>| {
        let ab = signed_offset(sb, eb, ma, forward)?;
        let ba = signed_offset(sa, ea, mb, forward)?;
        Some((ab.signum(), ab.abs().min(ba.abs())))
    };
    let obs = side(&a.obs_start, &a.obs_end, &a.obs_median, &b.obs_start, &b.obs_end, &b.obs_median);
    let map = side(&a.map_start, &a.map_end, &a.map_median, &b.map_start, &b.map_end, &b.map_median);
    match (obs, map) {
        (Some((so, phi_obs)), Some((sm, phi_map))) => LateralTest {
            consistent: so == sm && so != 0.0,
            phi_obs,
            phi_map,
        },
        (o, m) => LateralTest {
            consistent: false,
            phi_obs: o.map_or(0.0, |x| x.1),
            phi_map: m.map_or(0.0, |x| x.1),
        },
    }
}

/// `1 / |φ_obs − φ_map|`, capped at `s_max`.
pub fn edge_weight(phi_obs: f64, phi_map: f64, s_max: f64) -> f64 {
    let diff = (phi_obs - phi_map).abs();
    if diff * s_max <= 1.0 {
        s_max
    } else {
        1.0 / diff
    }
}

impl ConsistencyGraph {
    pub fn build(
        vertices: Vec<CandidatePair>,
        geometry: &[PairGeometry],
        forward: &Vector2<f64>,
        s_max: f64,
    ) -> Self {
        assert_eq!(vertices.len(), geometry.len());
        let mut edges = Vec::new();
        for i in 0..vertices.len() {
            for j in (i + 1)..vertices.len() {
                let (a, b) = (&vertices[i], &vertices[j]);
                if a.observation == b.observation || a.landmark == b.landmark {
                    continue;
                }
                let test = lateral_order_test(&geometry[i], &geometry[j], forward);
                if test.consistent {
                    edges.push((i, j, edge_weight(test.phi_obs, test.phi_map, s_max)));
                }
            }
        }
        Self { vertices, edges }
    }
}

/// Degree score of every vertex: the sum of its edge weights.
pub fn consistency_scores(graph: &ConsistencyGraph) -> Vec<f64> {
    let mut scores = vec![0.0; graph.vertices.len()];
    for &(i, j, w) in &graph.edges {
        scores[i] += w;
        scores[j] += w;
    }
    scores
}

/// Candidate pairs (with their lateral-test anchors) passing the category
/// gate and the `√2 · mean(δ)` distance bound.
pub fn candidate_pairs(
    observations: &[LaneObservation],
    landmarks: &[IndexedLandmark],
    pose: &Pose<f64>,
    noise: &PoseNoise,
) -> (Vec<CandidatePair>, Vec<PairGeometry>) {
    let mut pairs = Vec::new();
    let mut geometry = Vec::new();
    for (i, obs) in observations.iter().enumerate() {
        if obs.points.is_empty() {
            continue;
        }
        let gates = observation_gates(obs, noise);
        let gate_mean = gates.iter().sum::<f64>() / gates.len() as f64;
        for lm in landmarks {
            if !obs.category.matches(lm.category) || lm.index.is_empty() {
                continue;
            }
            let Some((distance, matched)) = gated_chamfer(obs, pose, &lm.index, &gates) else {
                continue;
            };
            if distance >= std::f64::consts::SQRT_2 * gate_mean {
                continue;
            }
            let Some(geom) = pair_geometry(obs, pose, &lm.index, &gates) else {
                continue;
            };
            pairs.push(CandidatePair { observation: i, landmark: lm.id, distance, matched, gate_mean });
            geometry.push(geom);
        }
    }
    (pairs, geometry)
}

pub fn associate(
    observations: &[LaneObservation],
    landmarks: &[LaneLandmark],
    pose: &Pose<f64>,
    noise: &PoseNoise,
    config: &AssociationConfig,
) -> AssociationResult {
    let indexed: Vec<IndexedLandmark> = landmarks
        .iter()
        .filter_map(|l| IndexedLandmark::build(l, config.landmark_spacing))
        .collect();
    associate_indexed(observations, &indexed, pose, noise, config)
}

pub fn associate_indexed(
    observations: &[LaneObservation],
    landmarks: &[IndexedLandmark],
    pose: &Pose<f64>,
    noise: &PoseNoise,
    config: &AssociationConfig,
) -> AssociationResult {
    let (pairs, geometry) = candidate_pairs(observations, landmarks, pose, noise);
    let forward = {
        let f = pose.rotation.column(0);
        Vector2::new(f.x, f.y)
    };
    let graph = ConsistencyGraph::build(pairs, &geometry, &forward, config.s_max);
    let scores = if config.use_consistency {
        consistency_scores(&graph)
    } else {
        vec![0.0; graph.vertices.len()]
    };
    let column: BTreeMap<u64, usize> = landmarks.iter().enumerate().map(|(j, l)| (l.id, j)).collect();
    let mut weights = vec![vec![0.0; landmarks.len()]; observations.len()];
    for (pair, score) in graph.vertices.iter().zip(&scores) {
        let consistency = if config.use_consistency { score + config.s_floor } else { 1.0 };
        weights[pair.observation][column[&pair.landmark]] =
            consistency / pair.distance.max(config.d_floor);
    }
    let assignment = if landmarks.is_empty() {
        vec![None; observations.len()]
    } else {
        max_weight_assignment(&weights)
    };
    let mut result = AssociationResult::default();
    for (i, col) in assignment.into_iter().enumerate() {
        match col {
            Some(j) => {
                result.matches.insert(i, landmarks[j].id);
            }
            None => result.new_lanes.push(i),
        }
    }
    debug_assert!(result.is_one_to_one());
    debug_assert!(result.covers(observations.len()));
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane_model::build_observation;
    use crate::spline::CatmullRomSpline;

    fn straight_obs(y: f64, category: Category) -> LaneObservation {
        let raw: Vec<_> = (0..30).map(|i| Vector3::new(5.0 + i as f64, y, 0.0)).collect();
        build_observation(&raw, category, 0.5, 0.01).unwrap()
    }

    fn straight_landmark(id: u64, y: f64, category: Category) -> LaneLandmark {
        let pts = (0..14).map(|i| Vector3::new(-3.0 + 3.0 * i as f64, y, 0.0)).collect();
        LaneLandmark {
            id,
            spline: CatmullRomSpline::with_default_tau(pts).unwrap(),
            category,
            created_frame: 0,
            last_observed_frame: 0,
        }
    }

    #[test]
    fn gate_examples() {
        let noise = PoseNoise::new(0.02, 0.1);
        let g = point_gate(&Vector3::new(10.0, 0.0, 0.0), &noise, 0.05);
        assert!((g - 0.699_973).abs() < 1e-6);
        assert_eq!(point_gate(&Vector3::new(3.0, 4.0, 0.0), &PoseNoise::zero(), 0.0), 0.0);
        let g = point_gate(&Vector3::zeros(), &PoseNoise::new(0.7, 0.2), 0.0);
        assert!((g - 0.4).abs() < 1e-15);
    }

    fn obs_from(points: Vec<Vector3<f64>>) -> LaneObservation {
        let mut obs = build_observation(&points, Category::WhiteDash, 0.5, 0.01).unwrap();
        obs.sigmas = vec![0.0; points.len()];
        obs.points = points;
        obs
    }

    #[test]
    fn chamfer_identical_points() {
        let pts: Vec<_> = (0..8).map(|i| Vector3::new(i as f64 * 0.5, 0.0, 0.0)).collect();
        let obs = obs_from(pts.clone());
        let tree = KdTree::new(pts);
        let (d, n) = gated_chamfer(&obs, &Pose::identity(), &tree, &[1.0; 8]).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(n, 8);
    }

    #[test]
    fn chamfer_penalizes_low_match_rate() {
        let pts: Vec<_> = (0..4).map(|i| Vector3::new(i as f64, 0.1, 0.0)).collect();
        let obs = obs_from(pts);
        let tree = KdTree::new((0..4).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect());
        let gates = [1.0, 1.0, 0.05, 0.05];
        let (d, n) = gated_chamfer(&obs, &Pose::identity(), &tree, &gates).unwrap();
        assert_eq!(n, 2);
        assert!((d - 0.141_421).abs() < 1e-6);
        assert!(gated_chamfer(&obs, &Pose::identity(), &tree, &[0.01; 4]).is_none());
    }

    fn parallel_geometry(obs_y: f64, map_y: f64) -> PairGeometry {
        PairGeometry {
            obs_start: Vector2::new(0.0, obs_y),
            obs_end: Vector2::new(20.0, obs_y),
            obs_median: Vector2::new(10.0, obs_y),
            map_start: Vector2::new(0.0, map_y),
            map_end: Vector2::new(20.0, map_y),
            map_median: Vector2::new(10.0, map_y),
        }
    }

    #[test]
    fn lateral_test_parallel_and_crossed() {
        let fwd = Vector2::new(1.0, 0.0);
        let a = parallel_geometry(0.0, 0.0);
        let b = parallel_geometry(3.5, 3.5);
        let t = lateral_order_test(&a, &b, &fwd);
        assert!(t.consistent);
        assert!((t.phi_obs - 3.5).abs() < 1e-12 && (t.phi_map - 3.5).abs() < 1e-12);
        let crossed_a = parallel_geometry(0.0, 3.5);
        let crossed_b = parallel_geometry(3.5, 0.0);
        assert!(!lateral_order_test(&crossed_a, &crossed_b, &fwd).consistent);
    }

    #[test]
    fn lateral_test_degenerate_line_is_inconsistent() {
        let fwd = Vector2::new(1.0, 0.0);
        let a = parallel_geometry(0.0, 0.0);
        let mut b = parallel_geometry(3.5, 3.5);
        b.map_end = b.map_start;
        assert!(!lateral_order_test(&a, &b, &fwd).consistent);
    }

    #[test]
    fn edge_weight_examples() {
        assert!((edge_weight(3.5, 3.0, 100.0) - 2.0).abs() < 1e-12);
        assert_eq!(edge_weight(3.5, 3.5, 100.0), 100.0);
    }

    #[test]
    fn graph_skips_shared_landmarks_and_isolated_vertices_score_zero() {
        let fwd = Vector2::new(1.0, 0.0);
        let v = |o, l| CandidatePair { observation: o, landmark: l, distance: 0.1, matched: 5, gate_mean: 1.0 };
        let geom = vec![parallel_geometry(0.0, 0.0), parallel_geometry(3.5, 0.0), parallel_geometry(9.0, 50.0)];
        let graph = ConsistencyGraph::build(vec![v(0, 1), v(1, 1), v(2, 2)], &geom, &fwd, 100.0);
        assert!(graph.edges.iter().all(|&(i, j, _)| !(i == 0 && j == 1)));
        let scores = consistency_scores(&graph);
        assert_eq!(scores.len(), 3);
        let isolated = ConsistencyGraph::build(vec![v(0, 1)], &geom[..1], &fwd, 100.0);
        assert_eq!(consistency_scores(&isolated), vec![0.0]);
    }

    #[test]
    fn empty_map_spawns_everything() {
        let obs = vec![straight_obs(0.0, Category::WhiteDash), straight_obs(3.5, Category::WhiteDash)];
        let r = associate(&obs, &[], &Pose::identity(), &PoseNoise::new(0.01, 0.2), &AssociationConfig::default());
        assert!(r.matches.is_empty());
        assert_eq!(r.new_lanes, vec![0, 1]);
    }

    #[test]
    fn single_lane_matches_its_landmark() {
        let obs = vec![straight_obs(1.75, Category::WhiteSolid)];
        let lms = vec![straight_landmark(7, 1.75, Category::WhiteSolid)];
        let r = associate(&obs, &lms, &Pose::identity(), &PoseNoise::new(0.01, 0.2), &AssociationConfig::default());
        assert_eq!(r.matches.get(&0), Some(&7));
    }

    #[test]
    fn category_gate_blocks_match() {
        let obs = vec![straight_obs(1.75, Category::WhiteSolid)];
        let lms = vec![straight_landmark(7, 1.75, Category::YellowSolid)];
        let r = associate(&obs, &lms, &Pose::identity(), &PoseNoise::new(0.01, 0.2), &AssociationConfig::default());
        assert!(r.matches.is_empty());
        assert_eq!(r.new_lanes, vec![0]);
    }

    #[test]
    fn identity_matching_without_noise() {
        let ys = [-5.25, -1.75, 1.75, 5.25];
        let obs: Vec<_> = ys.iter().map(|&y| straight_obs(y, Category::WhiteDash)).collect();
        let lms: Vec<_> = ys.iter().enumerate().map(|(i, &y)| straight_landmark(i as u64 + 10, y, Category::WhiteDash)).collect();
        let r = associate(&obs, &lms, &Pose::identity(), &PoseNoise::new(0.005, 0.1), &AssociationConfig::default());
        for i in 0..4 {
            assert_eq!(r.matches.get(&i), Some(&(i as u64 + 10)));
        }
    }
}
