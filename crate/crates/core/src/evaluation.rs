//! Association, trajectory and map-quality metrics.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_angle, Pose};
use crate::kdtree::KdTree;
use crate::lane_model::Category;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AssociationMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_runtime_ms: f64,
}

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl AssociationMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        // an empty prediction against an empty truth is perfect
        let nothing = if tp + fp + fn_ == 0 { 1.0 } else { 0.0 };
        let precision = ratio(tp, tp + fp, nothing);
        let recall = ratio(tp, tp + fn_, nothing);
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1: f1_score(precision, recall),
            mean_runtime_ms: 0.0,
        }
    }

    /// Pools counts; runtime is averaged weighting each side by `runs`.
    pub fn merge(&self, other: &Self, runs_self: usize, runs_other: usize) -> Self {
        let mut m = Self::from_counts(
            self.true_positives + other.true_positives,
            self.false_positives + other.false_positives,
            self.false_negatives + other.false_negatives,
        );
        let runs = runs_self + runs_other;
        if runs > 0 {
            m.mean_runtime_ms =
                (self.mean_runtime_ms * runs_self as f64 + other.mean_runtime_ms * runs_other as f64) / runs as f64;
        }
        m
    }
}

/// Counts predicted pairs against the true pair set.
pub fn score_association<T: Ord + Clone>(predicted: &[T], truth: &[T]) -> AssociationMetrics {
    let p: BTreeSet<T> = predicted.iter().cloned().collect();
    let t: BTreeSet<T> = truth.iter().cloned().collect();
    let tp = p.intersection(&t).count();
    AssociationMetrics::from_counts(tp, p.len() - tp, t.len() - tp)
}

pub const RPE_DISTANCES: [f64; 3] = [10.0, 30.0, 50.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpeEntry {
    pub distance: f64,
    pub rotation_deg: f64,
    pub translation: f64,
    /// Number of start frames averaged.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpeReport {
    pub odometry: Vec<RpeEntry>,
    pub updated: Vec<RpeEntry>,
}

/// Mean relative pose error over every start frame, per path distance.
/// Distances longer than the trajectory are omitted.
pub fn relative_pose_error(truth: &[Pose<f64>], estimate: &[Pose<f64>], distances: &[f64]) -> Vec<RpeEntry> {
    let n = truth.len().min(estimate.len());
    let mut path = vec![0.0; n];
    for k in 1..n {
        path[k] = path[k - 1] + (truth[k].translation - truth[k - 1].translation).norm();
    }
    let mut out = Vec::new();
    for &d in distances {
        let (mut rot, mut trans, mut samples) = (0.0, 0.0, 0);
        let mut j = 0;
        for i in 0..n {
            j = j.max(i);
            while j < n && path[j] - path[i] < d - 1e-9 {
                j += 1;
            }
            if j >= n {
                break;
            }
            let true_rel = truth[i].inverse().compose(&truth[j]);
            let est_rel = estimate[i].inverse().compose(&estimate[j]);
            let err = true_rel.inverse().compose(&est_rel);
            rot += rotation_angle(&err.rotation).to_degrees();
            trans += err.translation.norm();
            samples += 1;
        }
        if samples == 0 {
            log::warn!("trajectory shorter than {d} m; distance omitted");
            continue;
        }
        out.push(RpeEntry {
            distance: d,
            rotation_deg: rot / samples as f64,
            translation: trans / samples as f64,
            samples,
        });
    }
    out
}

pub fn compare_trajectories(truth: &[Pose<f64>], odometry: &[Pose<f64>], updated: &[Pose<f64>]) -> RpeReport {
    RpeReport {
        odometry: relative_pose_error(truth, odometry, &RPE_DISTANCES),
        updated: relative_pose_error(truth, updated, &RPE_DISTANCES),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapScoreConfig {
    /// Forward extent of the scored area (m).
    pub range: f64,
    pub dist_thresh: f64,
    pub valid_ratio: f64,
    /// Map lanes only match ground-truth lanes of the same category.
    pub require_category: bool,
    /// Sampling step for map splines (m).
    pub sample_spacing: f64,
}

impl Default for MapScoreConfig {
    fn default() -> Self {
        Self { range: 50.0, dist_thresh: 0.5, valid_ratio: 0.75, require_category: true, sample_spacing: 0.5 }
    }
}

/// Lane polyline expressed in the scoring frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLane {
    pub category: Category,
    pub points: Vec<Vector3<f64>>,
}

impl ScoredLane {
    /// Points of a world-frame lane moved into the body frame of `pose` and
    /// clipped to the forward area; `None` when nothing remains.
    pub fn local(category: Category, world: &[Vector3<f64>], pose: &Pose<f64>, range: f64) -> Option<Self> {
        let to_body = pose.inverse();
        let points: Vec<_> = world
            .iter()
            .map(|p| to_body.transform_point(p))
            .filter(|p| p.x >= 0.0 && p.x <= range)
            .collect();
        (!points.is_empty()).then_some(Self { category, points })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub true_positives: usize,
    pub map_lanes: usize,
    pub truth_lanes: usize,
}

impl FrameScore {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.map_lanes, 1.0)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.truth_lanes, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapQualityReport {
    pub label: String,
    pub frames: Vec<FrameScore>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MapQualityReport {
    /// Pooled over frames.
    pub fn from_frames(label: impl Into<String>, frames: Vec<FrameScore>) -> Self {
        let tp: usize = frames.iter().map(|f| f.true_positives).sum();
        let precision = ratio(tp, frames.iter().map(|f| f.map_lanes).sum(), 1.0);
        let recall = ratio(tp, frames.iter().map(|f| f.truth_lanes).sum(), 1.0);
        Self { label: label.into(), frames, precision, recall, f1: f1_score(precision, recall) }
    }
}

/// One frame: map lanes and ground-truth lanes already in the same local
/// frame and clipped to the scored area.
pub fn score_map_frame(map: &[ScoredLane], truth: &[ScoredLane], config: &MapScoreConfig) -> FrameScore {
    let trees: Vec<KdTree> = truth.iter().map(|g| KdTree::new(g.points.clone())).collect();
    let mut overlaps = Vec::new();
    for (i, m) in map.iter().enumerate() {
        for (j, g) in truth.iter().enumerate() {
            if config.require_category && !m.category.matches(g.category) {
                continue;
            }
            let valid = m
                .points
                .iter()
                .filter(|p| trees[j].nearest(p).is_some_and(|(_, d)| d < config.dist_thresh))
                .count();
            if valid > 0 {
                overlaps.push((valid, i, j));
            }
        }
    }
    // greedy one-to-one by overlap, ties broken by index for determinism
    overlaps.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_map = vec![false; map.len()];
    let mut used_truth = vec![false; truth.len()];
    let mut tp = 0;
    for (valid, i, j) in overlaps {
        if used_map[i] || used_truth[j] {
            continue;
        }
        used_map[i] = true;
        used_truth[j] = true;
        if valid as f64 > config.valid_ratio * truth[j].points.len() as f64 {
            tp += 1;
        }
    }
    FrameScore { true_positives: tp, map_lanes: map.len(), truth_lanes: truth.len() }
}

pub fn score_map(
    label: impl Into<String>,
    frames: &[(Vec<ScoredLane>, Vec<ScoredLane>)],
    config: &MapScoreConfig,
) -> MapQualityReport {
    let scores = frames.iter().map(|(m, t)| score_map_frame(m, t, config)).collect();
    MapQualityReport::from_frames(label, scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn association_counting() {
        let truth = [(0, 0), (1, 1), (2, 2), (3, 3)];
        let perfect = score_association(&truth, &truth);
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
        let none = score_association(&[], &truth);
        assert_eq!((none.recall, none.f1), (0.0, 0.0));
        let m = score_association(&[(0, 0), (1, 1), (2, 2), (3, 0)], &truth);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (3, 1, 1));
        assert_eq!((m.precision, m.recall, m.f1), (0.75, 0.75, 0.75));
    }

    fn straight(n: usize) -> Vec<Pose<f64>> {
        (0..n).map(|k| Pose::from_xyz_yaw(k as f64, 0.0, 0.0, 0.0)).collect()
    }

    #[test]
    fn rpe_zero_for_truth() {
        let t = straight(80);
        for e in relative_pose_error(&t, &t, &RPE_DISTANCES) {
            assert_eq!(e.rotation_deg, 0.0);
            assert_eq!(e.translation, 0.0);
        }
        assert_eq!(relative_pose_error(&t[..20], &t[..20], &RPE_DISTANCES).len(), 1);
    }

    #[test]
    fn rpe_yaw_bias_accumulates() {
        let t = straight(80);
        let mut est = vec![Pose::identity()];
        for k in 1..80 {
            let step = t[k - 1].inverse().compose(&t[k]).compose(&Pose::from_xyz_yaw(0.0, 0.0, 0.0, 0.1f64.to_radians()));
            est.push(est[k - 1].compose(&step));
        }
        let r = relative_pose_error(&t, &est, &[10.0, 30.0]);
        assert!((r[0].rotation_deg - 1.0).abs() < 1e-9);
        assert!((r[1].rotation_deg - 3.0).abs() < 1e-9);
    }

    fn lane(y: f64, category: Category) -> ScoredLane {
        ScoredLane { category, points: (0..=100).map(|i| Vector3::new(0.5 * i as f64, y, 0.0)).collect() }
    }

    #[test]
    fn map_scoring_examples() {
        let cfg = MapScoreConfig::default();
        let gt = vec![lane(-1.75, Category::WhiteDash), lane(1.75, Category::WhiteDash)];
        let s = score_map_frame(&gt, &gt, &cfg);
        assert_eq!((s.precision(), s.recall()), (1.0, 1.0));
        let off = score_map_frame(&[lane(-1.15, Category::WhiteDash)], &gt[..1], &cfg);
        assert_eq!(off.true_positives, 0);
        let half = score_map_frame(&gt[..1], &gt, &cfg);
        assert_eq!((half.precision(), half.recall()), (1.0, 0.5));
        let wrong = score_map_frame(&[lane(-1.75, Category::WhiteSolid)], &gt[..1], &cfg);
        assert_eq!(wrong.true_positives, 0);
    }
}
