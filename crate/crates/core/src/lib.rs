//! Online lane mapping with Catmull-Rom spline landmarks.

pub mod assignment;
pub mod association;
pub mod config;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod lane_model;
pub mod map_optimization;
pub mod pipeline;
pub mod pose_update;
pub mod scalar;
pub mod simulation;
pub mod spline;

pub use config::PipelineConfig;
pub use lane_model::{Category, LaneLandmark, LaneObservation};
pub use scalar::Scalar;

pub type Pose = geometry::Pose<f64>;
pub type PoseF32 = geometry::Pose<f32>;
pub type PoseDelta = geometry::PoseDelta<f64>;
pub type Spline = spline::CatmullRomSpline<f64>;
pub type SplineF32 = spline::CatmullRomSpline<f32>;
pub type SplineParam = spline::SplineParam<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
