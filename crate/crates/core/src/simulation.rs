//! Synthetic roads, trajectories, noisy odometry and noisy lane detections.
//!
//! Everything is driven by a ChaCha generator seeded from the config, so a
//! scenario is reproducible bit for bit.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;
use crate::lane_model::Category;

/// Spacing of ground-truth polyline vertices (m).
pub const TRUTH_SPACING: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Straight,
    /// Constant-radius left turn.
    Curve,
    /// The outermost left lane marking splits away by one lane spacing.
    MergeSplit,
    /// Straight in plan with a sinusoidal grade.
    UpDown,
}

impl Profile {
    pub fn label(self) -> &'static str {
        match self {
            Profile::Straight => "straight",
            Profile::Curve => "curve",
            Profile::MergeSplit => "merge-split",
            Profile::UpDown => "up-down",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Number of lane markings.
    pub lane_count: usize,
    pub lane_spacing: f64,
    pub length: f64,
    pub profile: Profile,
    pub curve_radius: f64,
    pub slope_amplitude: f64,
    pub slope_wavelength: f64,
    /// Nearest and farthest forward distance a detector sees (m).
    pub min_range: f64,
    pub detection_range: f64,
    /// Lateral half-width of the detector's field of view (m).
    pub lateral_range: f64,
    /// Spacing of detection points along a lane (m).
    pub detection_spacing: f64,
    /// Per-axis detection noise `σ(r) = σ₀ + growth·r`.
    pub noise_sigma0: f64,
    pub noise_growth: f64,
    /// Probability that a whole lane is missing from a frame.
    pub dropout: f64,
    pub odometry_sigma_rot_deg: f64,
    pub odometry_sigma_trans: f64,
    pub frame_spacing: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lane_count: 4,
            lane_spacing: 3.5,
            length: 135.0,
            profile: Profile::Straight,
            curve_radius: 200.0,
            slope_amplitude: 2.0,
            slope_wavelength: 120.0,
            min_range: 3.0,
            detection_range: 50.0,
            lateral_range: 12.0,
            detection_spacing: 0.5,
            noise_sigma0: 0.02,
            noise_growth: 0.002,
            dropout: 0.0,
            odometry_sigma_rot_deg: 0.0,
            odometry_sigma_trans: 0.0,
            frame_spacing: 1.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        let sigmas = [
            self.noise_sigma0,
            self.noise_growth,
            self.odometry_sigma_rot_deg,
            self.odometry_sigma_trans,
        ];
        if sigmas.iter().any(|s| s.is_nan() || *s < 0.0) {
            return Err("noise parameters must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(format!("dropout {} outside [0, 1]", self.dropout));
        }
        if !(self.frame_spacing > 0.0 && self.detection_spacing > 0.0 && self.length >= 0.0) {
            return Err("spacings must be positive".into());
        }
        if self.lane_count == 0 {
            return Err("at least one lane is required".into());
        }
        if self.profile == Profile::Curve && self.curve_radius < 50.0 {
            return Err("curve radius below the 50 m curvature bound".into());
        }
        Ok(())
    }

    /// Per-axis detection noise at range `r`.
    pub fn noise_sigma(&self, r: f64) -> f64 {
        self.noise_sigma0 + self.noise_growth * r
    }

    /// Lateral offset of marking `lane` at arc length `s`.
    fn offset(&self, lane: usize, s: f64) -> f64 {
        let base = (lane as f64 - (self.lane_count as f64 - 1.0) / 2.0) * self.lane_spacing;
        if self.profile == Profile::MergeSplit && lane + 1 == self.lane_count {
            let (a, b) = (self.length / 3.0, self.length * 2.0 / 3.0);
            let t = ((s - a) / (b - a)).clamp(0.0, 1.0);
            base + self.lane_spacing * t * t * (3.0 - 2.0 * t)
        } else {
            base
        }
    }

    /// Centerline position, unit tangent and horizontal left normal at `s`.
    fn centerline(&self, s: f64) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
        match self.profile {
            Profile::Curve => {
                let r = self.curve_radius;
                let a = s / r;
                let p = Vector3::new(r * a.sin(), r * (1.0 - a.cos()), 0.0);
                let t = Vector3::new(a.cos(), a.sin(), 0.0);
                (p, t, Vector3::new(-a.sin(), a.cos(), 0.0))
            }
            Profile::UpDown => {
                let k = std::f64::consts::TAU / self.slope_wavelength;
                let p = Vector3::new(s, 0.0, self.slope_amplitude * (k * s).sin());
                let t = Vector3::new(1.0, 0.0, self.slope_amplitude * k * (k * s).cos()).normalize();
                (p, t, Vector3::y())
            }
            Profile::Straight | Profile::MergeSplit => (Vector3::new(s, 0.0, 0.0), Vector3::x(), Vector3::y()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLane {
    pub instance_id: u64,
    pub category: Category,
    /// World-frame polyline with vertices every `TRUTH_SPACING` of road length.
    pub points: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawLane {
    pub category: Category,
    pub instance_id: Option<u64>,
    /// Body-frame points.
    pub points: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: u64,
    pub true_pose: Option<Pose<f64>>,
    pub odometry: Pose<f64>,
    pub lanes: Vec<RawLane>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub label: String,
    pub lanes: Vec<GroundTruthLane>,
    pub frames: Vec<Frame>,
}

impl Scenario {
    pub fn true_poses(&self) -> Vec<Pose<f64>> {
        self.frames.iter().filter_map(|f| f.true_pose).collect()
    }

    pub fn odometry(&self) -> Vec<Pose<f64>> {
        self.frames.iter().map(|f| f.odometry).collect()
    }
}

/// Rotation whose X axis is `forward` and whose Y axis is horizontal.
fn frame_from_forward(forward: &Vector3<f64>) -> Matrix3<f64> {
    let x = forward.normalize();
    let y = Vector3::z().cross(&x).try_normalize(1e-12).unwrap_or_else(Vector3::y);
    let z = x.cross(&y);
    Matrix3::from_columns(&[x, y, z])
}

/// Ground-truth lanes and the true trajectory along the road centerline.
pub fn generate_scenario(config: &ScenarioConfig) -> (Vec<GroundTruthLane>, Vec<Pose<f64>>) {
    let vertex_count = (config.length / TRUTH_SPACING + 1e-9).floor() as usize + 1;
    let lanes = (0..config.lane_count)
        .map(|lane| {
            let outer = lane == 0 || lane + 1 == config.lane_count;
            let points = (0..vertex_count)
                .map(|i| {
                    let s = i as f64 * TRUTH_SPACING;
                    let (c, _, n) = config.centerline(s);
                    c + n * config.offset(lane, s)
                })
                .collect();
            GroundTruthLane {
                instance_id: lane as u64,
                category: if outer { Category::WhiteSolid } else { Category::WhiteDash },
                points,
            }
        })
        .collect();
    let pose_count = (config.length / config.frame_spacing + 1e-9).floor() as usize + 1;
    let poses = (0..pose_count)
        .map(|k| {
            let (c, t, _) = config.centerline(k as f64 * config.frame_spacing);
            Pose::new(frame_from_forward(&t), c)
        })
        .collect();
    (lanes, poses)
}

/// Body-frame detections of every visible lane, with range-dependent noise
/// and whole-lane dropout.
pub fn render_frame<R: Rng>(
    lanes: &[GroundTruthLane],
    true_pose: &Pose<f64>,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Vec<RawLane> {
    let to_body = true_pose.inverse();
    let stride = ((config.detection_spacing / TRUTH_SPACING).round() as usize).max(1);
    let mut out = Vec::new();
    for lane in lanes {
        let dropped = rng.random_bool(config.dropout);
        let visible: Vec<Vector3<f64>> = lane
            .points
            .iter()
            .step_by(stride)
            .map(|p| to_body.transform_point(p))
            .filter(|p| p.x >= config.min_range && p.x <= config.detection_range && p.y.abs() <= config.lateral_range)
            .collect();
        let points: Vec<Vector3<f64>> = visible
            .into_iter()
            .map(|p| {
                let sigma = config.noise_sigma(p.norm());
                let e: [f64; 3] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal));
                p + Vector3::from(e) * sigma
            })
            .collect();
        if dropped || points.len() < 2 {
            continue;
        }
        out.push(RawLane { category: lane.category, instance_id: Some(lane.instance_id), points });
    }
    out
}

/// Odometry that accumulates planar (x, y, yaw) noise between frames.
pub fn perturb_odometry<R: Rng>(
    true_poses: &[Pose<f64>],
    sigma_rot_deg: f64,
    sigma_trans: f64,
    rng: &mut R,
) -> Vec<Pose<f64>> {
    let Some(first) = true_poses.first() else { return Vec::new() };
    let rot = Normal::new(0.0, sigma_rot_deg.to_radians()).expect("nonnegative sigma");
    let trans = Normal::new(0.0, sigma_trans).expect("nonnegative sigma");
    let mut out = vec![*first];
    for w in true_poses.windows(2) {
        let motion = w[0].inverse().compose(&w[1]);
        let (dx, dy, dyaw) = (trans.sample(rng), trans.sample(rng), rot.sample(rng));
        let noise = Pose::from_xyz_yaw(dx, dy, 0.0, dyaw);
        let prev = *out.last().expect("nonempty");
        out.push(prev.compose(&motion).compose(&noise));
    }
    out
}

/// Full simulated sequence.
pub fn simulate(config: &ScenarioConfig) -> Scenario {
    let (lanes, poses) = generate_scenario(config);
    let mut odo_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut det_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let odometry = perturb_odometry(&poses, config.odometry_sigma_rot_deg, config.odometry_sigma_trans, &mut odo_rng);
    let frames = poses
        .iter()
        .zip(odometry)
        .enumerate()
        .map(|(k, (pose, odometry))| Frame {
            index: k as u64,
            true_pose: Some(*pose),
            odometry,
            lanes: render_frame(&lanes, pose, config, &mut det_rng),
        })
        .collect();
    Scenario { label: config.profile.label().to_string(), lanes, frames }
}

/// Protocol parameters of the frame-pair association benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairProtocol {
    pub stride: usize,
    pub sigma_xy: f64,
    pub sigma_yaw_deg: f64,
}

impl Default for PairProtocol {
    fn default() -> Self {
        Self { stride: 10, sigma_xy: 3.0, sigma_yaw_deg: 2.0 }
    }
}

impl PairProtocol {
    /// Gate noise handed to the associator: the yaw sigma, and half the 95 %
    /// radius of the planar offset (the gate adds twice this value).
    pub fn gate_noise(&self) -> crate::geometry::PoseNoise {
        let radius95 = self.sigma_xy * (-2.0 * 0.05f64.ln()).sqrt();
        crate::geometry::PoseNoise::new(self.sigma_yaw_deg.to_radians(), radius95 / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationPair {
    pub frame_a: u64,
    pub frame_b: u64,
    /// Lanes of frame A, which serve as the map.
    pub lanes_a: Vec<RawLane>,
    /// Lanes of frame B after the imposed perturbation.
    pub lanes_b: Vec<RawLane>,
    /// True pose of B in A's body frame, handed to the associator.
    pub relative: Pose<f64>,
    pub perturbation: Pose<f64>,
    /// Instance-id equal pairs `(lane index in B, lane index in A)`.
    pub truth: Vec<(usize, usize)>,
}

/// Pairs `(i, i + stride)` whose B lanes are rigidly moved by a random
/// planar perturbation.
pub fn make_association_pairs<R: Rng>(frames: &[Frame], protocol: &PairProtocol, rng: &mut R) -> Vec<AssociationPair> {
    let xy = Normal::new(0.0, protocol.sigma_xy).expect("nonnegative sigma");
    let yaw = Normal::new(0.0, protocol.sigma_yaw_deg.to_radians()).expect("nonnegative sigma");
    let stride = protocol.stride.max(1);
    let mut pairs = Vec::new();
    let mut i = 0;
    while i + stride < frames.len() {
        let (a, b) = (&frames[i], &frames[i + stride]);
        let pose_of = |f: &Frame| f.true_pose.unwrap_or(f.odometry);
        let relative = pose_of(a).inverse().compose(&pose_of(b));
        let perturbation = Pose::from_xyz_yaw(xy.sample(rng), xy.sample(rng), 0.0, yaw.sample(rng));
        let lanes_b: Vec<RawLane> = b
            .lanes
            .iter()
            .map(|l| RawLane {
                points: l.points.iter().map(|p| perturbation.transform_point(p)).collect(),
                ..l.clone()
            })
            .collect();
        let mut truth = Vec::new();
        for (ib, lb) in lanes_b.iter().enumerate() {
            for (ia, la) in a.lanes.iter().enumerate() {
                if lb.instance_id.is_some() && lb.instance_id == la.instance_id {
                    truth.push((ib, ia));
                }
            }
        }
        pairs.push(AssociationPair {
            frame_a: a.index,
            frame_b: b.index,
            lanes_a: a.lanes.clone(),
            lanes_b,
            relative,
            perturbation,
            truth,
        });
        i += stride;
    }
    pairs
}
