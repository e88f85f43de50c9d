//! File formats: the frame stream, ground truth, map export and SVG plots.
//!
//! The frame stream is JSON lines. The first line is a header
//! `{"format": "lanemap-frames", "version": 1, "label": ...}`; every further
//! line is one frame:
//!
//! ```json
//! {"frame": 0,
//!  "true_pose": {"q": [1, 0, 0, 0], "t": [0, 0, 0]},
//!  "odometry": {"q": [1, 0, 0, 0], "t": [0, 0, 0]},
//!  "lanes": [{"category": "white-dash", "instance_id": 1, "points": [[3, 1.75, 0]]}]}
//! ```
//!
//! Rotations are unit quaternions `w, x, y, z`; points are body-frame
//! meters with X forward, Y left, Z up. `true_pose` and `instance_id` are
//! optional.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::lane_model::Category;
use crate::map_optimization::MapState;
use crate::simulation::{Frame, GroundTruthLane, RawLane, Scenario};
use crate::spline::CatmullRomSpline;

pub const FRAMES_FORMAT: &str = "lanemap-frames";
pub const TRUTH_FORMAT: &str = "lanemap-truth";
pub const MAP_FORMAT: &str = "lanemap-map";
pub const TRAJECTORY_FORMAT: &str = "lanemap-trajectory";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected format {expected} version {VERSION}, found {found}")]
    Header { expected: &'static str, found: String },
    #[error("invalid pose: {0}")]
    Pose(String),
}

impl IoError {
    pub fn code(&self) -> &'static str {
        match self {
            IoError::Io(_) => "E_IO",
            IoError::Json(_) => "E_JSON",
            IoError::Header { .. } => "E_HEADER",
            IoError::Pose(_) => "E_POSE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub q: [f64; 4],
    pub t: [f64; 3],
}

impl From<&Pose<f64>> for PoseRecord {
    fn from(p: &Pose<f64>) -> Self {
        Self { q: p.quaternion_wxyz(), t: p.translation.into() }
    }
}

impl TryFrom<&PoseRecord> for Pose<f64> {
    type Error = IoError;

    fn try_from(r: &PoseRecord) -> Result<Self, IoError> {
        if !r.q.iter().chain(&r.t).all(|v| v.is_finite()) {
            return Err(IoError::Pose("non-finite component".into()));
        }
        Pose::from_quaternion_wxyz(r.q, Vector3::from(r.t)).map_err(|e| IoError::Pose(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneRecord {
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<u64>,
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_pose: Option<PoseRecord>,
    pub odometry: PoseRecord,
    #[serde(default)]
    pub lanes: Vec<LaneRecord>,
}

impl From<&Frame> for FrameRecord {
    fn from(f: &Frame) -> Self {
        Self {
            frame: f.index,
            true_pose: f.true_pose.as_ref().map(PoseRecord::from),
            odometry: PoseRecord::from(&f.odometry),
            lanes: f
                .lanes
                .iter()
                .map(|l| LaneRecord {
                    category: l.category,
                    instance_id: l.instance_id,
                    points: l.points.iter().map(|p| (*p).into()).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<&FrameRecord> for Frame {
    type Error = IoError;

    fn try_from(r: &FrameRecord) -> Result<Self, IoError> {
        Ok(Frame {
            index: r.frame,
            true_pose: r.true_pose.as_ref().map(Pose::try_from).transpose()?,
            odometry: Pose::try_from(&r.odometry)?,
            lanes: r
                .lanes
                .iter()
                .map(|l| RawLane {
                    category: l.category,
                    instance_id: l.instance_id,
                    points: l.points.iter().map(|p| Vector3::from(*p)).collect(),
                })
                .collect(),
        })
    }
}

pub fn write_frames<W: Write>(mut out: W, label: &str, frames: &[Frame]) -> Result<(), IoError> {
    let header = Header { format: FRAMES_FORMAT.into(), version: VERSION, label: label.into() };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for f in frames {
        serde_json::to_writer(&mut out, &FrameRecord::from(f))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// A malformed line that was skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedLine {
    pub line: usize,
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameStream {
    pub label: String,
    pub frames: Vec<Frame>,
    pub skipped: Vec<SkippedLine>,
}

/// Reads a frame stream. Malformed frame lines are skipped and reported;
/// an unreadable stream or a bad header is an error. An empty input is an
/// empty stream.
pub fn read_frames<R: BufRead>(input: R) -> Result<FrameStream, IoError> {
    let mut stream = FrameStream::default();
    let mut lines = input.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Ok(stream),
            Some((_, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
        }
    };
    let header: Header = serde_json::from_str(&header).map_err(|_| IoError::Header {
        expected: FRAMES_FORMAT,
        found: header.chars().take(60).collect(),
    })?;
    if header.format != FRAMES_FORMAT || header.version != VERSION {
        return Err(IoError::Header { expected: FRAMES_FORMAT, found: format!("{} {}", header.format, header.version) });
    }
    stream.label = header.label;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<FrameRecord>(&line)
            .map_err(IoError::from)
            .and_then(|r| Frame::try_from(&r));
        match parsed {
            Ok(frame) => stream.frames.push(frame),
            Err(e) => {
                log::warn!("[{}] line {}: skipping malformed frame: {e}", e.code(), i + 1);
                stream.skipped.push(SkippedLine { line: i + 1, code: e.code(), message: e.to_string() });
            }
        }
    }
    Ok(stream)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub format: String,
    pub version: u32,
    pub label: String,
    pub lanes: Vec<GroundTruthLane>,
    pub poses: Vec<PoseRecord>,
}

impl TruthFile {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            format: TRUTH_FORMAT.into(),
            version: VERSION,
            label: s.label.clone(),
            lanes: s.lanes.clone(),
            poses: s.true_poses().iter().map(PoseRecord::from).collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let t: TruthFile = serde_json::from_str(text)?;
        if t.format != TRUTH_FORMAT || t.version != VERSION {
            return Err(IoError::Header { expected: TRUTH_FORMAT, found: format!("{} {}", t.format, t.version) });
        }
        Ok(t)
    }

    pub fn pose_list(&self) -> Result<Vec<Pose<f64>>, IoError> {
        self.poses.iter().map(Pose::try_from).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkExport {
    pub id: u64,
    pub category: Category,
    pub control_points: Vec<[f64; 3]>,
    pub created_frame: u64,
    pub last_observed_frame: u64,
}

impl LandmarkExport {
    pub fn spline(&self, tau: f64) -> Option<CatmullRomSpline<f64>> {
        CatmullRomSpline::new(self.control_points.iter().map(|p| Vector3::from(*p)).collect(), tau).ok()
    }
}

/// World-frame map with enough metadata to reproduce its splines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapExport {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub frame_count: u64,
    pub tau: f64,
    pub landmarks: Vec<LandmarkExport>,
}

impl MapExport {
    pub fn from_map(map: &MapState, config_hash: &str, frame_count: u64) -> Self {
        Self {
            format: MAP_FORMAT.into(),
            version: VERSION,
            config_hash: config_hash.into(),
            frame_count,
            tau: map.config.tau,
            landmarks: map
                .landmarks
                .values()
                .map(|l| LandmarkExport {
                    id: l.id,
                    category: l.category,
                    control_points: l.points.iter().map(|p| (*p).into()).collect(),
                    created_frame: l.created_frame,
                    last_observed_frame: l.last_observed_frame,
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        let m: MapExport = serde_json::from_str(text)?;
        if m.format != MAP_FORMAT || m.version != VERSION {
            return Err(IoError::Header { expected: MAP_FORMAT, found: format!("{} {}", m.format, m.version) });
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("map serializes");
        s.push('\n');
        s
    }

    /// One row per control point.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("landmark,category,index,x,y,z\n");
        for l in &self.landmarks {
            for (i, p) in l.control_points.iter().enumerate() {
                let _ = writeln!(s, "{},{},{},{},{},{}", l.id, l.category.name(), i, p[0], p[1], p[2]);
            }
        }
        s
    }

    pub fn control_point_count(&self) -> usize {
        self.landmarks.iter().map(|l| l.control_points.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub format: String,
    pub version: u32,
    pub frames: Vec<u64>,
    pub poses: Vec<PoseRecord>,
}

impl TrajectoryFile {
    pub fn new(frames: Vec<u64>, poses: &[Pose<f64>]) -> Self {
        Self {
            format: TRAJECTORY_FORMAT.into(),
            version: VERSION,
            frames,
            poses: poses.iter().map(PoseRecord::from).collect(),
        }
    }
}

/// Bird's-eye SVG of map splines and control points over ground truth.
pub fn plot_svg(map: &MapExport, truth: Option<&TruthFile>, spacing: f64) -> String {
    let mut lines: Vec<(Vec<Vector3<f64>>, &str, f64)> = Vec::new();
    if let Some(t) = truth {
        for l in &t.lanes {
            lines.push((l.points.clone(), "#9e9e9e", 1.5));
        }
    }
    let mut dots = Vec::new();
    for l in &map.landmarks {
        if let Some(s) = l.spline(map.tau) {
            lines.push((s.sample(spacing), "#1565c0", 0.6));
        }
        dots.extend(l.control_points.iter().map(|p| Vector3::from(*p)));
    }
    let all = lines.iter().flat_map(|(p, _, _)| p.iter()).chain(&dots);
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for p in all {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    if !lo.x.is_finite() {
        lo = Vector3::zeros();
        hi = Vector3::repeat(1.0);
    }
    let margin = 5.0;
    let (w, h) = (hi.x - lo.x + 2.0 * margin, hi.y - lo.y + 2.0 * margin);
    // world Y points up in the plot
    let x = |p: &Vector3<f64>| p.x - lo.x + margin;
    let y = |p: &Vector3<f64>| hi.y - p.y + margin;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w:.2} {h:.2}\" width=\"{:.0}\" height=\"{:.0}\">\n",
        w * 8.0,
        h * 8.0
    );
    for (pts, color, width) in &lines {
        let path: Vec<String> = pts.iter().map(|p| format!("{:.3},{:.3}", x(p), y(p))).collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" points=\"{}\"/>",
            path.join(" ")
        );
    }
    for p in &dots {
        let _ = writeln!(svg, "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"0.5\" fill=\"#d32f2f\"/>", x(p), y(p));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{simulate, ScenarioConfig};

    #[test]
    fn frame_stream_round_trip() {
        let cfg = ScenarioConfig { length: 20.0, odometry_sigma_trans: 0.1, odometry_sigma_rot_deg: 0.1, ..Default::default() };
        let s = simulate(&cfg);
        let mut buf = Vec::new();
        write_frames(&mut buf, &s.label, &s.frames).unwrap();
        let back = read_frames(buf.as_slice()).unwrap();
        assert_eq!(back.label, "straight");
        assert!(back.skipped.is_empty());
        assert_eq!(back.frames.len(), s.frames.len());
        for (a, b) in back.frames.iter().zip(&s.frames) {
            assert_eq!(a.lanes, b.lanes);
            assert!((a.odometry.translation - b.odometry.translation).norm() < 1e-12);
            assert!((a.odometry.rotation - b.odometry.rotation).norm() < 1e-12);
        }
    }

    #[test]
    fn malformed_lines_are_skipped() {
        let text = format!(
            "{}\n{}\nnot json\n{}\n",
            r#"{"format":"lanemap-frames","version":1}"#,
            r#"{"frame":0,"odometry":{"q":[1,0,0,0],"t":[0,0,0]},"lanes":[]}"#,
            r#"{"frame":2,"odometry":{"q":[0,0,0,0],"t":[0,0,0]},"lanes":[]}"#
        );
        let s = read_frames(text.as_bytes()).unwrap();
        assert_eq!(s.frames.len(), 1);
        assert_eq!(s.skipped.len(), 2);
        assert_eq!(s.skipped[0].code, "E_JSON");
        assert_eq!(s.skipped[1].code, "E_POSE");
        assert!(read_frames("".as_bytes()).unwrap().frames.is_empty());
        assert!(read_frames(r#"{"format":"other","version":1}"#.as_bytes()).is_err());
    }

    #[test]
    fn map_export_round_trip_reproduces_samples() {
        let export = MapExport {
            format: MAP_FORMAT.into(),
            version: VERSION,
            config_hash: "abc".into(),
            frame_count: 3,
            tau: 0.5,
            landmarks: vec![LandmarkExport {
                id: 0,
                category: Category::WhiteDash,
                control_points: vec![[0.0, 0.0, 0.0], [3.0, 0.1, 0.0], [6.0, 0.4, 0.01], [9.0, 0.9, 0.0], [12.1, 1.6, 0.0]],
                created_frame: 0,
                last_observed_frame: 2,
            }],
        };
        let back = MapExport::parse(&export.to_json()).unwrap();
        let (a, b) = (export.landmarks[0].spline(0.5).unwrap(), back.landmarks[0].spline(0.5).unwrap());
        for (p, q) in a.sample(0.5).iter().zip(b.sample(0.5)) {
            assert!((p - q).norm() < 1e-9);
        }
        assert_eq!(export.to_csv().lines().count(), 6);
        let svg = plot_svg(&export, None, 0.5);
        assert!(svg.starts_with("<svg") && svg.contains("<circle"));
    }
}
