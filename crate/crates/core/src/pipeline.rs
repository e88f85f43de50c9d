//! Per-frame loop: observations, association, pose refinement, landmark
//! growth and map optimization, plus the benchmark drivers built on it.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::association::associate;
use crate::config::PipelineConfig;
use crate::evaluation::{score_association, score_map_frame, AssociationMetrics, FrameScore, MapQualityReport, ScoredLane};
use crate::geometry::Pose;
use crate::lane_model::{build_observation, LaneObservation};
use crate::map_optimization::{MapState, OptimizeReport};
use crate::pose_update::update_pose;
use crate::simulation::{make_association_pairs, AssociationPair, Frame, GroundTruthLane};

/// What happened in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLog {
    pub frame: u64,
    pub observations: usize,
    /// `(lane index, rejection code)`.
    pub rejected: Vec<(usize, String)>,
    pub matched: usize,
    pub spawned: usize,
    pub pose_terms: usize,
    pub pose_diverged: bool,
    pub optimize_failed: bool,
    pub map_cost: f64,
}

/// Online lane mapper. Frames must be fed in index order.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub map: MapState,
    previous: Option<(Pose<f64>, Pose<f64>)>,
    pub frames: Vec<u64>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        let map = MapState::new(config.map);
        Self { config, map, previous: None, frames: Vec::new() }
    }

    /// Refined pose of the most recent frame.
    pub fn current_pose(&self) -> Option<&Pose<f64>> {
        self.map.poses.last()
    }

    /// Observations of a frame's raw lanes, keeping the raw lane index.
    pub fn observations(&self, frame: &Frame) -> (Vec<(usize, LaneObservation)>, Vec<(usize, String)>) {
        let mut obs = Vec::new();
        let mut rejected = Vec::new();
        for (i, lane) in frame.lanes.iter().enumerate() {
            match build_observation(&lane.points, lane.category, self.config.resolution, self.config.kappa) {
                Ok(mut o) => {
                    o.instance_id = lane.instance_id;
                    obs.push((i, o));
                }
                Err(e) => {
                    log::debug!("frame {} lane {i}: [{}] {e}", frame.index, e.code());
                    rejected.push((i, e.code().to_string()));
                }
            }
        }
        (obs, rejected)
    }

    pub fn step(&mut self, frame: &Frame) -> FrameLog {
        let predicted = match self.previous {
            None => frame.odometry,
            Some((refined, odom)) => refined.compose(&odom.inverse().compose(&frame.odometry)),
        };
        let (indexed, rejected) = self.observations(frame);
        let observations: Vec<LaneObservation> = indexed.into_iter().map(|(_, o)| o).collect();
        let landmarks = self.map.lane_landmarks();
        let noise = self.config.pose_noise;
        let assoc = associate(&observations, &landmarks, &predicted, &noise, &self.config.association);

        let can_update = self.config.use_pose_update && noise.sigma_theta > 0.0 && noise.sigma_t > 0.0;
        let (pose, pose_terms, pose_diverged) = if can_update && !assoc.matches.is_empty() {
            let splines: BTreeMap<u64, _> = landmarks.iter().map(|l| (l.id, &l.spline)).collect();
            let update = update_pose(&predicted, &observations, &assoc, &splines, &noise, &self.config.pose_update);
            if update.diverged {
                log::warn!("frame {}: pose update diverged; keeping prediction", frame.index);
            }
            (update.pose, update.terms, update.diverged)
        } else {
            (predicted, 0, false)
        };

        let mut touched = std::collections::BTreeSet::new();
        for (&i, &id) in &assoc.matches {
            let obs = &observations[i];
            if self.map.extend_landmark(id, obs, &pose, frame.index).is_err() {
                continue;
            }
            let world = obs.world_points(&pose);
            if let Ok(t) = self.map.add_point_factors(id, &world, &obs.sigmas, frame.index) {
                touched.extend(t);
            }
        }
        let mut spawned = 0;
        for &i in &assoc.new_lanes {
            spawned += usize::from(self.map.spawn_landmark(&observations[i], &pose, frame.index).is_some());
        }
        let report: OptimizeReport = self.map.optimize_incremental(&touched, frame.index);
        if report.failed {
            log::warn!("frame {}: map solve failed; previous estimates kept", frame.index);
        }

        self.map.poses.push(pose);
        self.frames.push(frame.index);
        self.previous = Some((pose, frame.odometry));
        FrameLog {
            frame: frame.index,
            observations: observations.len(),
            rejected,
            matched: assoc.matches.len(),
            spawned,
            pose_terms,
            pose_diverged,
            optimize_failed: report.failed,
            map_cost: self.map.total_cost(),
        }
    }

    /// Current map lanes sampled in the world frame.
    pub fn map_polylines(&self) -> Vec<(crate::lane_model::Category, Vec<Vector3<f64>>)> {
        let spacing = self.config.map_score.sample_spacing;
        self.map
            .lane_landmarks()
            .into_iter()
            .filter(|l| l.spline.is_evaluable())
            .map(|l| (l.category, l.spline.sample_with_ends(spacing)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub map: MapState,
    pub frames: Vec<u64>,
    pub poses: Vec<Pose<f64>>,
    pub logs: Vec<FrameLog>,
}

pub fn run_pipeline(frames: &[Frame], config: &PipelineConfig) -> PipelineOutput {
    let mut pipeline = Pipeline::new(config.clone());
    let logs = frames.iter().map(|f| pipeline.step(f)).collect();
    PipelineOutput { poses: pipeline.map.poses.clone(), frames: pipeline.frames, map: pipeline.map, logs }
}

/// Runs the association benchmark on pre-built pairs. Frame A's lanes seed
/// a fresh map; frame B's lanes are associated against it.
pub fn evaluate_association_pairs(pairs: &[AssociationPair], config: &PipelineConfig) -> AssociationMetrics {
    let noise = config.pairs.gate_noise();
    let probe = Pipeline::new(config.clone());
    let mut total = AssociationMetrics::from_counts(0, 0, 0);
    let mut runs = 0;
    for pair in pairs {
        let frame_of = |index: u64, lanes: &[crate::simulation::RawLane]| Frame {
            index,
            true_pose: None,
            odometry: Pose::identity(),
            lanes: lanes.to_vec(),
        };
        let (obs_a, _) = probe.observations(&frame_of(pair.frame_a, &pair.lanes_a));
        let (obs_b, _) = probe.observations(&frame_of(pair.frame_b, &pair.lanes_b));
        let mut map = MapState::new(config.map);
        let mut lane_of_landmark = BTreeMap::new();
        for (lane, o) in &obs_a {
            if let Some(id) = map.spawn_landmark(o, &Pose::identity(), pair.frame_a) {
                lane_of_landmark.insert(id, *lane);
            }
        }
        let landmarks = map.lane_landmarks();
        let observations: Vec<LaneObservation> = obs_b.iter().map(|(_, o)| o.clone()).collect();
        let start = Instant::now();
        let result = associate(&observations, &landmarks, &pair.relative, &noise, &config.association);
        let elapsed = start.elapsed().as_secs_f64() * 1e3;
        let predicted: Vec<(usize, usize)> =
            result.matches.iter().map(|(&i, id)| (obs_b[i].0, lane_of_landmark[id])).collect();
        let mut m = score_association(&predicted, &pair.truth);
        m.mean_runtime_ms = elapsed;
        total = total.merge(&m, runs, 1);
        runs += 1;
    }
    total
}

/// Pairs from the configured protocol over a frame sequence.
pub fn association_pairs(frames: &[Frame], config: &PipelineConfig) -> Vec<AssociationPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.scenario.seed.wrapping_add(1));
    make_association_pairs(frames, &config.pairs, &mut rng)
}

/// Map quality of the online map and of single-frame detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapComparison {
    pub method: MapQualityReport,
    pub baseline: MapQualityReport,
}

/// Ground-truth lanes around `pose`, clipped to the scored area.
pub fn truth_in_area(lanes: &[GroundTruthLane], pose: &Pose<f64>, range: f64) -> Vec<ScoredLane> {
    lanes.iter().filter_map(|g| ScoredLane::local(g.category, &g.points, pose, range)).collect()
}

/// Scores every frame against the map as it stood right after that frame,
/// so frame `t` sees nothing from later frames. Frames without a true pose
/// are not scored.
pub fn evaluate_map_online(
    frames: &[Frame],
    truth: &[GroundTruthLane],
    config: &PipelineConfig,
    label: &str,
) -> MapComparison {
    let score_cfg = &config.map_score;
    let mut pipeline = Pipeline::new(config.clone());
    let mut method = Vec::new();
    let mut baseline = Vec::new();
    for frame in frames {
        pipeline.step(frame);
        let Some(true_pose) = frame.true_pose else { continue };
        let estimate = *pipeline.current_pose().expect("pose after step");
        let gt = truth_in_area(truth, &true_pose, score_cfg.range);
        let map: Vec<ScoredLane> = pipeline
            .map_polylines()
            .iter()
            .filter_map(|(c, pts)| ScoredLane::local(*c, pts, &estimate, score_cfg.range))
            .collect();
        let single: Vec<ScoredLane> = frame
            .lanes
            .iter()
            .filter_map(|l| ScoredLane::local(l.category, &l.points, &Pose::identity(), score_cfg.range))
            .collect();
        method.push(score_map_frame(&map, &gt, score_cfg));
        baseline.push(score_map_frame(&single, &gt, score_cfg));
    }
    MapComparison {
        method: MapQualityReport::from_frames(label, method),
        baseline: MapQualityReport::from_frames(format!("{label} single-frame"), baseline),
    }
}

/// Per-frame scores of a finished map along a trajectory.
pub fn evaluate_map_final(
    landmarks: &[(crate::lane_model::Category, Vec<Vector3<f64>>)],
    truth: &[GroundTruthLane],
    true_poses: &[Pose<f64>],
    estimated_poses: &[Pose<f64>],
    config: &PipelineConfig,
    label: &str,
) -> MapQualityReport {
    let score_cfg = &config.map_score;
    let frames: Vec<FrameScore> = true_poses
        .iter()
        .zip(estimated_poses)
        .map(|(t, e)| {
            let gt = truth_in_area(truth, t, score_cfg.range);
            let map: Vec<ScoredLane> = landmarks
                .iter()
                .filter_map(|(c, pts)| ScoredLane::local(*c, pts, e, score_cfg.range))
                .collect();
            score_map_frame(&map, &gt, score_cfg)
        })
        .collect();
    MapQualityReport::from_frames(label, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{simulate, ScenarioConfig};

    #[test]
    fn empty_stream_gives_empty_map() {
        let out = run_pipeline(&[], &PipelineConfig::default());
        assert!(out.map.landmarks.is_empty());
        assert!(out.poses.is_empty());
    }

    #[test]
    fn noiseless_straight_sequence_maps_truth() {
        let scenario_cfg = ScenarioConfig { noise_sigma0: 0.0, noise_growth: 0.0, length: 60.0, ..Default::default() };
        let s = simulate(&scenario_cfg);
        let cfg = PipelineConfig::default();
        let out = run_pipeline(&s.frames, &cfg);
        assert_eq!(out.map.landmarks.len(), 4);
        for l in out.map.landmarks.values() {
            let y = l.points[0].y;
            let rms = (l.points.iter().map(|p| (p.y - y).powi(2) + p.z.powi(2)).sum::<f64>() / l.points.len() as f64).sqrt();
            assert!(rms < 0.01, "rms {rms}");
            assert!((y.abs() - 1.75).abs() < 0.01 || (y.abs() - 5.25).abs() < 0.01);
        }
        for (p, t) in out.poses.iter().zip(s.true_poses()) {
            assert!((p.translation - t.translation).norm() < 1e-6);
        }
    }

    #[test]
    fn malformed_lanes_are_rejected_not_fatal() {
        let frame = Frame {
            index: 0,
            true_pose: None,
            odometry: Pose::identity(),
            lanes: vec![
                crate::simulation::RawLane { category: crate::Category::WhiteDash, instance_id: None, points: vec![] },
                crate::simulation::RawLane {
                    category: crate::Category::WhiteDash,
                    instance_id: None,
                    points: vec![Vector3::new(1.0, 0.0, 0.0)],
                },
                crate::simulation::RawLane {
                    category: crate::Category::WhiteDash,
                    instance_id: None,
                    points: vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(f64::NAN, 0.0, 0.0), Vector3::new(9.0, 0.0, 0.0)],
                },
            ],
        };
        let out = run_pipeline(&[frame], &PipelineConfig::default());
        assert_eq!(out.logs[0].rejected.len(), 3);
        assert!(out.map.landmarks.is_empty());
    }
}
