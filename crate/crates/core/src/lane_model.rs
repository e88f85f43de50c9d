//! Lane observations (resampled detections with cubic fits) and landmarks.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::spline::CatmullRomSpline;

pub const DEFAULT_RESOLUTION: f64 = 0.5;
pub const DEFAULT_KAPPA: f64 = 0.01;

/// Lane marking classes (14 annotated classes plus `unknown`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    WhiteDash,
    WhiteSolid,
    DoubleWhiteDash,
    DoubleWhiteSolid,
    WhiteLdashRsolid,
    WhiteLsolidRdash,
    YellowDash,
    YellowSolid,
    DoubleYellowDash,
    DoubleYellowSolid,
    YellowLdashRsolid,
    YellowLsolidRdash,
    LeftCurbside,
    RightCurbside,
    Unknown,
}

impl Category {
    pub const ALL: [Category; 15] = [
        Category::WhiteDash,
        Category::WhiteSolid,
        Category::DoubleWhiteDash,
        Category::DoubleWhiteSolid,
        Category::WhiteLdashRsolid,
        Category::WhiteLsolidRdash,
        Category::YellowDash,
        Category::YellowSolid,
        Category::DoubleYellowDash,
        Category::DoubleYellowSolid,
        Category::YellowLdashRsolid,
        Category::YellowLsolidRdash,
        Category::LeftCurbside,
        Category::RightCurbside,
        Category::Unknown,
    ];

    /// Category gate for association. `Unknown` only matches `Unknown`.
    pub fn matches(self, other: Category) -> bool {
        self == other
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::WhiteDash => "white-dash",
            Category::WhiteSolid => "white-solid",
            Category::DoubleWhiteDash => "double-white-dash",
            Category::DoubleWhiteSolid => "double-white-solid",
            Category::WhiteLdashRsolid => "white-ldash-rsolid",
            Category::WhiteLsolidRdash => "white-lsolid-rdash",
            Category::YellowDash => "yellow-dash",
            Category::YellowSolid => "yellow-solid",
            Category::DoubleYellowDash => "double-yellow-dash",
            Category::DoubleYellowSolid => "double-yellow-solid",
            Category::YellowLdashRsolid => "yellow-ldash-rsolid",
            Category::YellowLsolidRdash => "yellow-lsolid-rdash",
            Category::LeftCurbside => "left-curbside",
            Category::RightCurbside => "right-curbside",
            Category::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LaneError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("point scatter is degenerate")]
    DegenerateScatter,
    #[error("x values are rank deficient for a polynomial fit")]
    RankDeficient,
}

/// Why a raw detection was not turned into an observation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Rejection {
    #[error("too few points ({0})")]
    TooFewPoints(usize),
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("span {span:.3} m shorter than resolution {resolution} m")]
    ShortSpan { span: f64, resolution: f64 },
    #[error(transparent)]
    Fit(#[from] LaneError),
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::TooFewPoints(_) => "too-few-points",
            Rejection::NonFinite(_) => "non-finite",
            Rejection::ShortSpan { .. } => "short-span",
            Rejection::Fit(_) => "fit-failed",
        }
    }
}

/// Frame whose X axis follows the lane's principal direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalReferenceFrame {
    /// Maps source-frame coordinates into the LRF.
    pub to_local: Pose<f64>,
}

impl LocalReferenceFrame {
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.to_local.transform_point(p)
    }

    pub fn from_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.to_local.inverse().transform_point(p)
    }

    /// Direction of the LRF X axis in the source frame.
    pub fn primary_direction(&self) -> Vector3<f64> {
        self.to_local.rotation.row(0).transpose()
    }

    /// The same LRF for inputs given in a frame related to the source frame
    /// by `source_to_target` (e.g. body-to-world).
    pub fn rebased(&self, source_to_target: &Pose<f64>) -> LocalReferenceFrame {
        LocalReferenceFrame { to_local: self.to_local.compose(&source_to_target.inverse()) }
    }
}

/// `c0 + c1 x + c2 x² + c3 x³`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cubic(pub [f64; 4]);

impl Cubic {
    pub fn eval(&self, x: f64) -> f64 {
        let c = &self.0;
        c[0] + x * (c[1] + x * (c[2] + x * c[3]))
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let c = &self.0;
        c[1] + x * (2.0 * c[2] + x * 3.0 * c[3])
    }
}

/// Resampled lane detection in the body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneObservation {
    pub points: Vec<Vector3<f64>>,
    pub f_xy: Cubic,
    pub f_xz: Cubic,
    pub category: Category,
    pub sigmas: Vec<f64>,
    pub lrf: LocalReferenceFrame,
    /// Ground-truth instance, when known (simulation and oracles only).
    pub instance_id: Option<u64>,
}

impl LaneObservation {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn world_points(&self, pose: &Pose<f64>) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| pose.transform_point(p)).collect()
    }

    /// Point on the fitted curve at LRF abscissa `x`, in LRF coordinates.
    pub fn curve_point_local(&self, x: f64) -> Vector3<f64> {
        Vector3::new(x, self.f_xy.eval(x), self.f_xz.eval(x))
    }
}

/// Map lane instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneLandmark {
    pub id: u64,
    pub spline: CatmullRomSpline<f64>,
    pub category: Category,
    pub created_frame: u64,
    pub last_observed_frame: u64,
}

impl LaneLandmark {
    pub fn control_points(&self) -> &[Vector3<f64>] {
        self.spline.control_points()
    }
}

pub fn fit_lrf(raw_points: &[Vector3<f64>]) -> Result<LocalReferenceFrame, LaneError> {
    if raw_points.len() < 2 {
        return Err(LaneError::TooFewPoints { needed: 2, got: raw_points.len() });
    }
    let n = raw_points.len() as f64;
    let centroid = raw_points.iter().sum::<Vector3<f64>>() / n;
    let mut scatter = Matrix3::zeros();
    for p in raw_points {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let (lead, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    if lambda <= 1e-18 * n.max(1.0) {
        return Err(LaneError::DegenerateScatter);
    }
    let mut x_axis: Vector3<f64> = eig.eigenvectors.column(lead).into_owned().normalize();
    // forward (then leftward) along the source frame
    let flip = if x_axis.x.abs() > 1e-9 { x_axis.x < 0.0 } else { x_axis.y < 0.0 };
    if flip {
        x_axis = -x_axis;
    }
    let up = Vector3::z();
    let mut z_axis = up - x_axis * up.dot(&x_axis);
    if z_axis.norm() < 1e-6 {
        let fallback = Vector3::x();
        z_axis = fallback - x_axis * fallback.dot(&x_axis);
    }
    let z_axis = z_axis.normalize();
    let y_axis = z_axis.cross(&x_axis);
    let local_to_source = Matrix3::from_columns(&[x_axis, y_axis, z_axis]);
    let rotation = local_to_source.transpose();
    Ok(LocalReferenceFrame {
        to_local: Pose::new(rotation, -(rotation * centroid)),
    })
}

/// Least-squares polynomial fit `y ≈ f(x)` of degree `min(3, distinct x − 1)`.
pub fn fit_cubic(xs: &[f64], ys: &[f64]) -> Result<Cubic, LaneError> {
    assert_eq!(xs.len(), ys.len(), "xs and ys must have equal length");
    let mut sorted: Vec<f64> = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let scale = sorted.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let tol = 1e-9 * scale;
    let distinct = if sorted.is_empty() {
        0
    } else {
        1 + sorted.windows(2).filter(|w| w[1] - w[0] > tol).count()
    };
    if distinct == 0 {
        return Err(LaneError::TooFewPoints { needed: 1, got: 0 });
    }
    let degree = (distinct - 1).min(3);
    let cols = degree + 1;
    let a = DMatrix::from_fn(xs.len(), cols, |r, c| (xs[r] / scale).powi(c as i32));
    let b = DVector::from_column_slice(ys);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= smax * 1e-12 {
        return Err(LaneError::RankDeficient);
    }
    let sol = svd.solve(&b, 0.0).map_err(|_| LaneError::RankDeficient)?;
    let mut coeffs = [0.0; 4];
    for (c, coeff) in coeffs.iter_mut().enumerate().take(cols) {
        *coeff = sol[c] / scale.powi(c as i32);
    }
    Ok(Cubic(coeffs))
}

/// Turns a raw detection into a resampled observation.
pub fn build_observation(
    raw_points: &[Vector3<f64>],
    category: Category,
    resolution: f64,
    kappa: f64,
) -> Result<LaneObservation, Rejection> {
    assert!(resolution > 0.0 && kappa > 0.0);
    if raw_points.len() < 2 {
        return Err(Rejection::TooFewPoints(raw_points.len()));
    }
    if let Some(i) = raw_points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Rejection::NonFinite(i));
    }
    let lrf = fit_lrf(raw_points)?;
    let local: Vec<Vector3<f64>> = raw_points.iter().map(|p| lrf.to_local(p)).collect();
    let xs: Vec<f64> = local.iter().map(|p| p.x).collect();
    let (xmin, xmax) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let span = xmax - xmin;
    if span < resolution {
        return Err(Rejection::ShortSpan { span, resolution });
    }
    let ys: Vec<f64> = local.iter().map(|p| p.y).collect();
    let zs: Vec<f64> = local.iter().map(|p| p.z).collect();
    let f_xy = fit_cubic(&xs, &ys)?;
    let f_xz = fit_cubic(&xs, &zs)?;
    let count = (span / resolution + 1e-9).floor() as usize + 1;
    let points: Vec<Vector3<f64>> = (0..count)
        .map(|i| {
            let x = xmin + i as f64 * resolution;
            lrf.from_local(&Vector3::new(x, f_xy.eval(x), f_xz.eval(x)))
        })
        .collect();
    let sigmas = points.iter().map(|p| kappa * p.norm()).collect();
    Ok(LaneObservation {
        points,
        f_xy,
        f_xz,
        category,
        sigmas,
        lrf,
        instance_id: None,
    })
}
