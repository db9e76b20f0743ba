//! Poincaré-ball geometry at curvature −1.
//!
//! Points live in the open unit ball; every constructor clamps the norm to
//! at most `1 - BOUNDARY_EPS` so that `artanh` and the distance formula stay
//! finite. The slice-level functions in [`raw`] are what the model and the
//! Sarkar construction call in their inner loops; the [`BallPoint`] API wraps
//! them with the norm invariant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest admissible norm is `1 - BOUNDARY_EPS`.
pub const BOUNDARY_EPS: f64 = 1e-7;

/// Smallest denominator accepted by Möbius addition before clamping.
const MIN_DENOM: f64 = 1e-15;

pub mod diagnostics {
    //! Process-wide clamp counters. Each clamp in the geometry increments one
    //! of these; training loops report them when a loss turns non-finite.
    use std::sync::atomic::{AtomicU64, Ordering};

    static BOUNDARY: AtomicU64 = AtomicU64::new(0);
    static ARTANH: AtomicU64 = AtomicU64::new(0);
    static ACOSH: AtomicU64 = AtomicU64::new(0);
    static DENOM: AtomicU64 = AtomicU64::new(0);

    #[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
    pub struct ClampCounts {
        pub boundary: u64,
        pub artanh: u64,
        pub acosh: u64,
        pub denominator: u64,
    }

    impl ClampCounts {
        pub fn total(&self) -> u64 {
            self.boundary + self.artanh + self.acosh + self.denominator
        }
    }

    pub fn snapshot() -> ClampCounts {
        ClampCounts {
            boundary: BOUNDARY.load(Ordering::Relaxed),
            artanh: ARTANH.load(Ordering::Relaxed),
            acosh: ACOSH.load(Ordering::Relaxed),
            denominator: DENOM.load(Ordering::Relaxed),
        }
    }

    pub(crate) fn boundary() {
        BOUNDARY.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn artanh() {
        ARTANH.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn acosh() {
        ACOSH.fetch_add(1, Ordering::Relaxed);
    }
    pub(crate) fn denominator() {
        DENOM.fetch_add(1, Ordering::Relaxed);
    }
}

/// A point of the open unit ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BallPoint(Vec<f64>);

/// A vector of the tangent space at some ball point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TangentVector(Vec<f64>);

impl BallPoint {
    /// Builds a point, rescaling it onto the sphere of radius
    /// `1 - BOUNDARY_EPS` if it lies on or beyond it.
    pub fn new(mut coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("ball point"));
        }
        raw::clamp_to_ball(&mut coords);
        Ok(BallPoint(coords))
    }

    pub fn origin(dim: usize) -> Self {
        BallPoint(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        raw::norm(&self.0)
    }

    pub fn is_origin(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    /// The additive inverse `-x`, which is also the Möbius inverse.
    pub fn negated(&self) -> Self {
        BallPoint(self.0.iter().map(|c| -c).collect())
    }
}

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("tangent vector"));
        }
        Ok(TangentVector(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        TangentVector(vec![0.0; dim])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        raw::norm(&self.0)
    }
}

fn check_dims(a: usize, b: usize) {
    assert_eq!(a, b, "dimension mismatch between ball points");
}

/// `λ_x = 2 / (1 - ‖x‖²)`.
pub fn conformal_factor(x: &BallPoint) -> f64 {
    2.0 / (1.0 - raw::norm_sq(x.coords()))
}

/// Geodesic distance in the ball.
pub fn ball_distance(x: &BallPoint, y: &BallPoint) -> f64 {
    check_dims(x.dim(), y.dim());
    raw::distance(x.coords(), y.coords())
}

pub fn mobius_add(x: &BallPoint, y: &BallPoint) -> BallPoint {
    check_dims(x.dim(), y.dim());
    let mut out = raw::mobius_add(x.coords(), y.coords());
    raw::clamp_to_ball(&mut out);
    BallPoint(out)
}

/// `exp_x(v) = x ⊕ tanh(λ_x‖v‖/2) v/‖v‖`; the zero vector maps to `x`.
pub fn exp_map(x: &BallPoint, v: &TangentVector) -> BallPoint {
    check_dims(x.dim(), v.0.len());
    let vn = v.norm();
    if vn == 0.0 {
        return x.clone();
    }
    let s = (conformal_factor(x) * vn / 2.0).tanh() / vn;
    let step: Vec<f64> = v.0.iter().map(|c| c * s).collect();
    let mut out = raw::mobius_add(x.coords(), &step);
    raw::clamp_to_ball(&mut out);
    BallPoint(out)
}

/// `log_x(y) = (2/λ_x) artanh(‖-x ⊕ y‖) (-x ⊕ y)/‖-x ⊕ y‖`; `log_x(x) = 0`.
pub fn log_map(x: &BallPoint, y: &BallPoint) -> TangentVector {
    check_dims(x.dim(), y.dim());
    let m = raw::mobius_add(&x.negated().0, y.coords());
    let r = raw::norm(&m);
    if r == 0.0 {
        return TangentVector::zeros(x.dim());
    }
    let s = (2.0 / conformal_factor(x)) * raw::artanh_clamped(r) / r;
    TangentVector(m.into_iter().map(|c| c * s).collect())
}

/// The isometric circle inversion swapping `a` and the origin, applied to
/// every point. `a = 0` gives the identity.
pub fn reflect_to_origin(a: &BallPoint, points: &[BallPoint]) -> Vec<BallPoint> {
    points
        .iter()
        .map(|p| {
            check_dims(a.dim(), p.dim());
            let mut out = raw::invert(a.coords(), p.coords());
            raw::clamp_to_ball(&mut out);
            BallPoint(out)
        })
        .collect()
}

/// Applies the Householder reflection that maps the unit vector `w` onto the
/// unit vector `u` to every point.
pub fn rotate_about_origin(w: &[f64], u: &[f64], points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    check_dims(w.len(), u.len());
    let q = raw::householder_axis(w, u);
    points
        .iter()
        .map(|p| {
            check_dims(w.len(), p.len());
            let mut out = p.clone();
            if let Some(q) = &q {
                raw::householder_apply(q, &mut out);
            }
            out
        })
        .collect()
}

pub mod raw {
    //! Unchecked slice kernels.
    use super::{diagnostics, BOUNDARY_EPS, MIN_DENOM};

    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    pub fn norm_sq(a: &[f64]) -> f64 {
        dot(a, a)
    }

    pub fn norm(a: &[f64]) -> f64 {
        norm_sq(a).sqrt()
    }

    pub fn clamp_to_ball(x: &mut [f64]) {
        let n = norm(x);
        let max = 1.0 - BOUNDARY_EPS;
        if n > max {
            diagnostics::boundary();
            let s = max / n;
            x.iter_mut().for_each(|c| *c *= s);
        }
    }

    pub fn artanh_clamped(r: f64) -> f64 {
        let max = 1.0 - BOUNDARY_EPS;
        let r = if r > max {
            diagnostics::artanh();
            max
        } else {
            r.max(0.0)
        };
        r.atanh()
    }

    /// Distance through `2·asinh(‖x−y‖ / √((1−‖x‖²)(1−‖y‖²)))`, which equals
    /// `acosh(1 + 2‖x−y‖²/((1−‖x‖²)(1−‖y‖²)))` but keeps full relative
    /// precision for nearby points.
    pub fn distance(x: &[f64], y: &[f64]) -> f64 {
        let diff_sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let denom = (1.0 - norm_sq(x)) * (1.0 - norm_sq(y));
        if denom <= 0.0 {
            diagnostics::acosh();
            return f64::INFINITY;
        }
        2.0 * (diff_sq / denom).sqrt().asinh()
    }

    /// The textbook `acosh` form with its argument clamped at 1.
    pub fn distance_acosh(x: &[f64], y: &[f64]) -> f64 {
        let diff_sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        let arg = 1.0 + 2.0 * diff_sq / ((1.0 - norm_sq(x)) * (1.0 - norm_sq(y)));
        if arg < 1.0 {
            diagnostics::acosh();
            return 0.0;
        }
        arg.acosh()
    }

    pub fn mobius_add(x: &[f64], y: &[f64]) -> Vec<f64> {
        let xy = dot(x, y);
        let xx = norm_sq(x);
        let yy = norm_sq(y);
        let a = 1.0 + 2.0 * xy + yy;
        let b = 1.0 - xx;
        let mut denom = 1.0 + 2.0 * xy + xx * yy;
        if denom < MIN_DENOM {
            diagnostics::denominator();
            denom = MIN_DENOM;
        }
        x.iter()
            .zip(y)
            .map(|(xi, yi)| (a * xi + b * yi) / denom)
            .collect()
    }

    /// Inversion in the sphere orthogonal to the unit sphere that swaps `a`
    /// and the origin: center `a/‖a‖²`, squared radius `1/‖a‖² − 1`.
    pub fn invert(a: &[f64], x: &[f64]) -> Vec<f64> {
        let aa = norm_sq(a);
        if aa == 0.0 {
            return x.to_vec();
        }
        let r2 = 1.0 / aa - 1.0;
        let c: Vec<f64> = a.iter().map(|ai| ai / aa).collect();
        let dsq: f64 = x.iter().zip(&c).map(|(xi, ci)| (xi - ci) * (xi - ci)).sum();
        let s = r2 / dsq;
        x.iter()
            .zip(&c)
            .map(|(xi, ci)| ci + s * (xi - ci))
            .collect()
    }

    /// Unit axis `q` of the reflection `I − 2qqᵀ` sending `w` to `u`, or
    /// `None` when `w ≈ u`.
    pub fn householder_axis(w: &[f64], u: &[f64]) -> Option<Vec<f64>> {
        let diff: Vec<f64> = w.iter().zip(u).map(|(a, b)| a - b).collect();
        let n = norm(&diff);
        if n < 1e-12 {
            return None;
        }
        // w ≈ −u: reflecting along w itself sends w to −w = u.
        let sum: Vec<f64> = w.iter().zip(u).map(|(a, b)| a + b).collect();
        if norm(&sum) < 1e-12 {
            let wn = norm(w);
            return Some(w.iter().map(|c| c / wn).collect());
        }
        Some(diff.into_iter().map(|c| c / n).collect())
    }

    pub fn householder_apply(q: &[f64], p: &mut [f64]) {
        let k = 2.0 * dot(q, p);
        p.iter_mut().zip(q).for_each(|(pi, qi)| *pi -= k * qi);
    }
}
