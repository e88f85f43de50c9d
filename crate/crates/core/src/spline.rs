//! Catmull-Rom splines over 3D control points.
//!
//! A spline with `n` control points has `n - 3` segments. Segment `l` blends
//! control points `l..=l+3` and runs from control point `l + 1` (at `u = 0`)
//! to control point `l + 2` (at `u = 1`), so every control point except the
//! first and last lies on the curve.

use nalgebra::Vector3;
use thiserror::Error;

use crate::scalar::{lit, Scalar};

pub const DEFAULT_TAU: f64 = 0.5;

/// Chord subdivisions per segment used for arc-length estimates.
pub const ARC_LENGTH_STEPS: usize = 16;

/// Interior waypoints per segment in the fine parameterization phase.
pub const FINE_WAYPOINTS: usize = 3;

/// Minimum separation of consecutive control points (m).
pub const MIN_CONTROL_SPACING: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("control points {index} and {next} coincide", next = index + 1)]
    CoincidentControlPoints { index: usize },
    #[error("segment {segment} out of range (spline has {count} segments)")]
    SegmentOutOfRange { segment: usize, count: usize },
    #[error("parameter u = {u} outside [0, 1]")]
    ParameterOutOfRange { u: f64 },
    #[error("zero tangent at segment {segment}")]
    ZeroTangent { segment: usize },
}

/// Position on a spline: segment index and local parameter `u ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineParam<T: Scalar> {
    pub segment: usize,
    pub u: T,
}

impl<T: Scalar> SplineParam<T> {
    pub fn new(segment: usize, u: T) -> Self {
        Self { segment, u }
    }

    /// `segment + u`, continuous across segment boundaries.
    pub fn global(&self) -> T {
        lit::<T>(self.segment as f64) + self.u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatmullRomSpline<T: Scalar> {
    control_points: Vec<Vector3<T>>,
    tau: T,
}

/// Blending weights of the four control points of a segment at `u`.
pub fn basis_coefficients<T: Scalar>(u: T, tau: T) -> [T; 4] {
    let (one, two, three) = (T::one(), lit::<T>(2.0), lit::<T>(3.0));
    let u2 = u * u;
    let u3 = u2 * u;
    [
        -tau * u + two * tau * u2 - tau * u3,
        one + (tau - three) * u2 + (two - tau) * u3,
        tau * u + (three - two * tau) * u2 + (tau - two) * u3,
        -tau * u2 + tau * u3,
    ]
}

/// Derivative of [`basis_coefficients`] with respect to `u`.
pub fn basis_derivative<T: Scalar>(u: T, tau: T) -> [T; 4] {
    let (two, three) = (lit::<T>(2.0), lit::<T>(3.0));
    let u2 = u * u;
    [
        -tau + lit::<T>(4.0) * tau * u - three * tau * u2,
        two * (tau - three) * u + three * (two - tau) * u2,
        tau + two * (three - two * tau) * u + three * (tau - two) * u2,
        -two * tau * u + three * tau * u2,
    ]
}

impl<T: Scalar> CatmullRomSpline<T> {
    pub fn new(control_points: Vec<Vector3<T>>, tau: T) -> Result<Self, SplineError> {
        let min = lit::<T>(MIN_CONTROL_SPACING);
        for (index, w) in control_points.windows(2).enumerate() {
            if (w[1] - w[0]).norm() <= min {
                return Err(SplineError::CoincidentControlPoints { index });
            }
        }
        Ok(Self { control_points, tau })
    }

    pub fn with_default_tau(control_points: Vec<Vector3<T>>) -> Result<Self, SplineError> {
        Self::new(control_points, lit(DEFAULT_TAU))
    }

    pub fn control_points(&self) -> &[Vector3<T>] {
        &self.control_points
    }

    pub fn tau(&self) -> T {
        self.tau
    }

    pub fn segment_count(&self) -> usize {
        self.control_points.len().saturating_sub(3)
    }

    pub fn is_evaluable(&self) -> bool {
        self.segment_count() > 0
    }

    fn check(&self, param: &SplineParam<T>) -> Result<(), SplineError> {
        let count = self.segment_count();
        if param.segment >= count {
            return Err(SplineError::SegmentOutOfRange { segment: param.segment, count });
        }
        if param.u < T::zero() || param.u > T::one() {
            return Err(SplineError::ParameterOutOfRange { u: crate::scalar::to_f64(param.u) });
        }
        Ok(())
    }

    fn blend(&self, segment: usize, w: [T; 4]) -> Vector3<T> {
        let p = &self.control_points[segment..segment + 4];
        p[0] * w[0] + p[1] * w[1] + p[2] * w[2] + p[3] * w[3]
    }

    pub fn evaluate(&self, param: SplineParam<T>) -> Result<Vector3<T>, SplineError> {
        self.check(&param)?;
        Ok(self.blend(param.segment, basis_coefficients(param.u, self.tau)))
    }

    /// Unnormalized tangent `dp/du`.
    pub fn derivative(&self, param: SplineParam<T>) -> Result<Vector3<T>, SplineError> {
        self.check(&param)?;
        let d = self.blend(param.segment, basis_derivative(param.u, self.tau));
        if d.norm() <= T::default_epsilon() {
            return Err(SplineError::ZeroTangent { segment: param.segment });
        }
        Ok(d)
    }

    pub fn unit_tangent(&self, param: SplineParam<T>) -> Result<Vector3<T>, SplineError> {
        Ok(self.derivative(param)?.normalize())
    }

    /// Cumulative chord length at each of the `ARC_LENGTH_STEPS + 1` knots of
    /// every segment, flattened; entry `l * (STEPS + 1) + k` is the length from
    /// the curve start to `(l, k / STEPS)`.
    fn arc_table(&self, steps: usize) -> Vec<T> {
        let mut table = Vec::with_capacity(self.segment_count() * (steps + 1));
        let mut acc = T::zero();
        for l in 0..self.segment_count() {
            let mut prev = self.blend(l, basis_coefficients(T::zero(), self.tau));
            table.push(acc);
            for k in 1..=steps {
                let u = lit::<T>(k as f64 / steps as f64);
                let p = self.blend(l, basis_coefficients(u, self.tau));
                acc += (p - prev).norm();
                table.push(acc);
                prev = p;
            }
        }
        table
    }

    /// Arc length estimated with `steps` chords per segment.
    pub fn arc_length_with(&self, steps: usize) -> T {
        self.arc_table(steps).last().copied().unwrap_or_else(T::zero)
    }

    pub fn arc_length(&self) -> T {
        self.arc_length_with(ARC_LENGTH_STEPS)
    }

    /// Points along the curve spaced by `spacing` in arc length, always
    /// including both curve ends. Empty when the spline has no segment.
    pub fn sample(&self, spacing: T) -> Vec<Vector3<T>> {
        assert!(spacing > T::zero(), "sample spacing must be positive");
        let segments = self.segment_count();
        if segments == 0 {
            return Vec::new();
        }
        let steps = ARC_LENGTH_STEPS;
        let table = self.arc_table(steps);
        let total = *table.last().unwrap();
        let count = crate::scalar::to_f64(total / spacing).floor() as usize;
        let mut out = Vec::with_capacity(count + 2);
        let mut cursor = 0usize;
        for i in 0..=count {
            let s = spacing * lit::<T>(i as f64);
            while cursor + 1 < table.len() && table[cursor + 1] < s {
                cursor += 1;
            }
            out.push(self.point_at_table_index(&table, cursor, s, steps));
        }
        let last = *out.last().unwrap();
        let end = self.blend(segments - 1, basis_coefficients(T::one(), self.tau));
        if (end - last).norm() > spacing * lit::<T>(1e-6) {
            out.push(end);
        }
        out
    }

    /// Like [`sample`](Self::sample), but the curve is carried through the
    /// first and last control points by completing the end segments with
    /// reflected phantom points `2P₀ − P₁` and `2Pₙ₋₁ − Pₙ₋₂`.
    pub fn sample_with_ends(&self, spacing: T) -> Vec<Vector3<T>> {
        let p = &self.control_points;
        let n = p.len();
        if n < 2 {
            return p.clone();
        }
        let two = lit::<T>(2.0);
        let mut extended = Vec::with_capacity(n + 2);
        extended.push(p[0] * two - p[1]);
        extended.extend_from_slice(p);
        extended.push(p[n - 1] * two - p[n - 2]);
        Self { control_points: extended, tau: self.tau }.sample(spacing)
    }

    fn point_at_table_index(&self, table: &[T], idx: usize, s: T, steps: usize) -> Vector3<T> {
        let knots = steps + 1;
        let mut idx = idx.min(table.len() - 1);
        // knot entries at segment boundaries repeat the previous length
        if idx % knots == steps && idx + 1 < table.len() {
            idx += 1;
        }
        let segment = idx / knots;
        let k = idx % knots;
        if k == steps {
            return self.blend(segment, basis_coefficients(T::one(), self.tau));
        }
        let (s0, s1) = (table[idx], table[idx + 1]);
        let frac = if s1 > s0 {
            ((s - s0) / (s1 - s0)).clamp(T::zero(), T::one())
        } else {
            T::zero()
        };
        let u = (lit::<T>(k as f64) + frac) / lit::<T>(steps as f64);
        self.blend(segment, basis_coefficients(u.clamp(T::zero(), T::one()), self.tau))
    }

    /// Indices of the two control points nearest `p`, ties broken by index.
    fn two_nearest(&self, p: &Vector3<T>) -> Option<((usize, T), (usize, T))> {
        let mut best: Option<(usize, T)> = None;
        let mut second: Option<(usize, T)> = None;
        for (i, c) in self.control_points.iter().enumerate() {
            let d = (c - p).norm();
            match best {
                Some((_, bd)) if d >= bd => match second {
                    Some((_, sd)) if d >= sd => {}
                    _ => second = Some((i, d)),
                },
                _ => {
                    second = best;
                    best = Some((i, d));
                }
            }
        }
        Some((best?, second?))
    }

    /// Coarse-to-fine parameterization of `p`.
    ///
    /// The two control points nearest `p` must be adjacent, must not include
    /// the first or last control point, and must each be closer to `p` than
    /// to each other. The curve between them is approximated by a polyline
    /// through `FINE_WAYPOINTS` interior waypoints and `p` is projected onto it.
    pub fn parameterize(&self, p: &Vector3<T>) -> Option<SplineParam<T>> {
        if !self.is_evaluable() {
            return None;
        }
        let ((a, da), (b, db)) = self.two_nearest(p)?;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let last = self.control_points.len() - 1;
        if hi - lo != 1 || lo == 0 || hi == last {
            return None;
        }
        let chord = (self.control_points[hi] - self.control_points[lo]).norm();
        if !(da < chord && db < chord) {
            return None;
        }
        let segment = lo - 1;
        let pieces = FINE_WAYPOINTS + 1;
        let nodes: Vec<Vector3<T>> = (0..=pieces)
            .map(|i| {
                let u = lit::<T>(i as f64 / pieces as f64);
                self.blend(segment, basis_coefficients(u, self.tau))
            })
            .collect();
        let mut best: Option<(T, usize, T)> = None;
        for i in 0..pieces {
            let (s, e) = (nodes[i], nodes[i + 1]);
            let dir = e - s;
            let len2 = dir.norm_squared();
            let t = if len2 > T::zero() {
                ((p - s).dot(&dir) / len2).clamp(T::zero(), T::one())
            } else {
                T::zero()
            };
            let d = (s + dir * t - p).norm();
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, i, t));
            }
        }
        let (_, piece, t) = best?;
        let u = ((lit::<T>(piece as f64) + t) / lit::<T>(pieces as f64)).clamp(T::zero(), T::one());
        Some(SplineParam { segment, u })
    }

    /// Re-checks the coarse-phase acceptance conditions for a returned param.
    pub fn coarse_conditions_hold(&self, p: &Vector3<T>, param: &SplineParam<T>) -> bool {
        let (lo, hi) = (param.segment + 1, param.segment + 2);
        let last = self.control_points.len() - 1;
        if lo == 0 || hi >= last {
            return false;
        }
        let chord = (self.control_points[hi] - self.control_points[lo]).norm();
        (p - self.control_points[lo]).norm() < chord && (p - self.control_points[hi]).norm() < chord
    }
}
