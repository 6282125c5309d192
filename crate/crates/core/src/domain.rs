//! Convex domains `O = {phi > 0}` with boundary `{phi = 0}`.
//!
//! `grad_phi` is the inward unit normal on the boundary and `project` is the
//! Euclidean projection onto the closure, which is what the reflected scheme
//! uses to push paths back into the domain.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::rng::{GaussianStream, StreamKey, AUDIT_SUBSTREAM};
use crate::{Error, Result};

pub const DEFAULT_BOUNDARY_TOLERANCE: f64 = 1e-10;

/// Geometry of a closed convex set described by a level function.
pub trait DomainShape: Send + Sync + fmt::Debug {
    fn dimension(&self) -> usize;
    fn phi(&self, x: &[f64]) -> f64;
    fn grad_phi(&self, x: &[f64], out: &mut [f64]);
    /// Projects `x` onto the closure in place.
    fn project(&self, x: &mut [f64]);
    /// A box used by samplers; must contain the closure for bounded domains.
    fn sampling_box(&self) -> (Vec<f64>, Vec<f64>);
    /// Some point of the open domain.
    fn interior_point(&self) -> Vec<f64>;
}

/// Centered ball with `phi(x) = (r^2 - |x|^2) / (2r)`, so `|grad phi| = 1` on the sphere.
#[derive(Clone, Debug)]
pub struct Ball {
    dim: usize,
    radius: f64,
}

impl DomainShape for Ball {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn phi(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (self.radius * self.radius - r2) / (2.0 * self.radius)
    }

    fn grad_phi(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -v / self.radius;
        }
    }

    fn project(&self, x: &mut [f64]) {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > self.radius {
            let scale = self.radius / norm;
            for v in x.iter_mut() {
                *v *= scale;
            }
            // rounding can leave the image a few ulps outside; pull it in so
            // that projecting twice is a no-op
            while x.iter().map(|v| v * v).sum::<f64>().sqrt() > self.radius {
                for v in x.iter_mut() {
                    *v *= 1.0 - f64::EPSILON;
                }
            }
        }
    }

    fn sampling_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-self.radius; self.dim], vec![self.radius; self.dim])
    }

    fn interior_point(&self) -> Vec<f64> {
        vec![0.0; self.dim]
    }
}

/// Closed interval `[lo, hi]` in one dimension, `phi(x) = (x - lo)(hi - x) / (hi - lo)`.
#[derive(Clone, Debug)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl DomainShape for Interval {
    fn dimension(&self) -> usize {
        1
    }

    fn phi(&self, x: &[f64]) -> f64 {
        (x[0] - self.lo) * (self.hi - x[0]) / (self.hi - self.lo)
    }

    fn grad_phi(&self, x: &[f64], out: &mut [f64]) {
        out[0] = (self.lo + self.hi - 2.0 * x[0]) / (self.hi - self.lo);
    }

    fn project(&self, x: &mut [f64]) {
        x[0] = x[0].clamp(self.lo, self.hi);
    }

    fn sampling_box(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![self.lo], vec![self.hi])
    }

    fn interior_point(&self) -> Vec<f64> {
        vec![0.5 * (self.lo + self.hi)]
    }
}

/// `{x_1 > 0}`. Unbounded, only meant for analytic reflection checks.
#[derive(Clone, Debug)]
pub struct HalfSpace {
    dim: usize,
}

const HALFSPACE_SAMPLING_EXTENT: f64 = 4.0;

impl DomainShape for HalfSpace {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn phi(&self, x: &[f64]) -> f64 {
        x[0]
    }

    fn grad_phi(&self, _x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        out[0] = 1.0;
    }

    fn project(&self, x: &mut [f64]) {
        if x[0] < 0.0 {
            x[0] = 0.0;
        }
    }

    fn sampling_box(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![-HALFSPACE_SAMPLING_EXTENT; self.dim];
        lo[0] = 0.0;
        (lo, vec![HALFSPACE_SAMPLING_EXTENT; self.dim])
    }

    fn interior_point(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        p[0] = 1.0;
        p
    }
}

type LevelFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A domain given by user closures; check it with [`DomainSpec::validate`].
#[derive(Clone)]
pub struct UserDomain {
    pub dim: usize,
    pub phi: LevelFn,
    pub grad_phi: VectorMap,
    /// Writes the projection of the first argument into the second.
    pub project: VectorMap,
    pub sampling_box: (Vec<f64>, Vec<f64>),
    pub interior_point: Vec<f64>,
}

impl fmt::Debug for UserDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserDomain")
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl DomainShape for UserDomain {
    fn dimension(&self) -> usize {
        self.dim
    }
    fn phi(&self, x: &[f64]) -> f64 {
        (self.phi)(x)
    }
    fn grad_phi(&self, x: &[f64], out: &mut [f64]) {
        (self.grad_phi)(x, out)
    }
    fn project(&self, x: &mut [f64]) {
        let input = x.to_vec();
        (self.project)(&input, x)
    }
    fn sampling_box(&self) -> (Vec<f64>, Vec<f64>) {
        self.sampling_box.clone()
    }
    fn interior_point(&self) -> Vec<f64> {
        self.interior_point.clone()
    }
}

/// Immutable, shareable domain handle.
#[derive(Clone, Debug)]
pub struct DomainSpec {
    shape: Arc<dyn DomainShape>,
    boundary_tolerance: f64,
}

pub fn make_ball_domain(m: usize, radius: f64) -> Result<DomainSpec> {
    if m == 0 {
        return Err(Error::invalid("ball dimension must be at least 1"));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::invalid(format!(
            "ball radius must be positive, got {radius}"
        )));
    }
    Ok(DomainSpec::new(Arc::new(Ball { dim: m, radius })))
}

pub fn make_interval_domain(lo: f64, hi: f64) -> Result<DomainSpec> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!(
            "interval needs finite lo < hi, got [{lo}, {hi}]"
        )));
    }
    Ok(DomainSpec::new(Arc::new(Interval { lo, hi })))
}

pub fn make_halfspace_domain(m: usize) -> Result<DomainSpec> {
    if m == 0 {
        return Err(Error::invalid("half-space dimension must be at least 1"));
    }
    Ok(DomainSpec::new(Arc::new(HalfSpace { dim: m })))
}

impl DomainSpec {
    pub fn new(shape: Arc<dyn DomainShape>) -> Self {
        Self {
            shape,
            boundary_tolerance: DEFAULT_BOUNDARY_TOLERANCE,
        }
    }

    pub fn with_boundary_tolerance(mut self, tol: f64) -> Result<Self> {
        if !(tol >= 0.0) {
            return Err(Error::invalid("boundary tolerance must be nonnegative"));
        }
        self.boundary_tolerance = tol;
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.shape.dimension()
    }

    pub fn boundary_tolerance(&self) -> f64 {
        self.boundary_tolerance
    }

    pub fn shape(&self) -> &dyn DomainShape {
        self.shape.as_ref()
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        self.shape.phi(x)
    }

    pub fn grad_phi(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension()];
        self.shape.grad_phi(x, &mut out);
        out
    }

    pub fn grad_phi_into(&self, x: &[f64], out: &mut [f64]) {
        self.shape.grad_phi(x, out)
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        self.shape.project(&mut out);
        out
    }

    #[inline]
    pub fn project_in_place(&self, x: &mut [f64]) {
        self.shape.project(x)
    }

    pub fn is_on_boundary(&self, x: &[f64]) -> bool {
        self.shape.phi(x).abs() <= self.boundary_tolerance
    }

    /// Membership in the closure, up to the boundary tolerance.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.shape.phi(x) >= -self.boundary_tolerance
    }

    pub fn interior_point(&self) -> Vec<f64> {
        self.shape.interior_point()
    }

    pub fn sampling_box(&self) -> (Vec<f64>, Vec<f64>) {
        self.shape.sampling_box()
    }

    /// Samples `samples` points from the sampling box enlarged by a factor two
    /// and checks the geometric invariants a reflection domain must satisfy.
    pub fn validate(&self, samples: usize, seed: u64) -> DomainValidation {
        let m = self.dimension();
        let (lo, hi) = self.sampling_box();
        let mut stream = GaussianStream::new(StreamKey::new(seed, 0, AUDIT_SUBSTREAM));
        let mut report = DomainValidation::default();
        let mut grad = vec![0.0; m];
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        for _ in 0..samples {
            let y: Vec<f64> = (0..m)
                .map(|k| {
                    let c = 0.5 * (lo[k] + hi[k]);
                    let h = hi[k] - lo[k];
                    stream.uniform(c - h, c + h)
                })
                .collect();
            let p = self.project(&y);
            let pp = self.project(&p);
            if pp != p {
                report.idempotence_failures += 1;
            }
            if !self.contains(&p) {
                report.membership_failures += 1;
            }
            let r: Vec<f64> = y.iter().zip(&p).map(|(a, b)| a - b).collect();
            let rn = norm(&r);
            if rn > 0.0 {
                // p is a boundary point and r an exterior normal there
                self.grad_phi_into(&p, &mut grad);
                let gn = norm(&grad);
                report.max_boundary_gradient_defect =
                    report.max_boundary_gradient_defect.max((gn - 1.0).abs());
                let neg: Vec<f64> = r.iter().map(|v| -v).collect();
                report.max_normal_angle = report.max_normal_angle.max(angle_between(&neg, &grad));
                let h = 1e-6;
                let inside: Vec<f64> = p.iter().zip(&grad).map(|(a, g)| a + h * g / gn).collect();
                if !(self.phi(&inside) > 0.0) {
                    report.inward_failures += 1;
                }
            }
            if let Some((py, pprev)) = &prev {
                let lhs = dist(&p, pprev);
                let rhs = dist(&y, py);
                report.max_expansion = report.max_expansion.max(lhs - rhs);
            }
            prev = Some((y, p));
            report.samples += 1;
        }
        report
    }
}

/// Outcome of [`DomainSpec::validate`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainValidation {
    pub samples: usize,
    pub idempotence_failures: usize,
    pub membership_failures: usize,
    pub inward_failures: usize,
    pub max_boundary_gradient_defect: f64,
    pub max_normal_angle: f64,
    /// `max(|Py1 - Py2| - |y1 - y2|)`; positive values break nonexpansiveness.
    pub max_expansion: f64,
}

impl DomainValidation {
    pub fn passed(&self) -> bool {
        self.idempotence_failures == 0
            && self.membership_failures == 0
            && self.inward_failures == 0
            && self.max_boundary_gradient_defect <= 1e-8
            && self.max_normal_angle <= 1e-6
            && self.max_expansion <= 1e-12
    }
}

/// Domain selection as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainConfig {
    Ball { dim: usize, radius: f64 },
    Interval { lo: f64, hi: f64 },
    Halfspace { dim: usize },
}

impl DomainConfig {
    pub fn build(&self) -> Result<DomainSpec> {
        match *self {
            DomainConfig::Ball { dim, radius } => make_ball_domain(dim, radius),
            DomainConfig::Interval { lo, hi } => make_interval_domain(lo, hi),
            DomainConfig::Halfspace { dim } => make_halfspace_domain(dim),
        }
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Angle between two nonzero vectors, accurate near zero.
pub(crate) fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return std::f64::consts::PI;
    }
    let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    let sin = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x / na - cos * y / nb;
            d * d
        })
        .sum::<f64>()
        .sqrt();
    sin.atan2(cos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_basics() {
        let d1 = make_ball_domain(1, 1.0).unwrap();
        assert_eq!(d1.project(&[2.0]), vec![1.0]);

        let d = make_ball_domain(2, 1.0).unwrap();
        let g = d.grad_phi(&[1.0, 0.0]);
        assert_eq!(g, vec![-1.0, 0.0]);
        assert_eq!(norm(&g), 1.0);
        assert!(d.phi(&[1.0 - 1e-6, 0.0]) > 0.0);
        assert_eq!(d.project(&[0.3, 0.4]), vec![0.3, 0.4]);
        assert_eq!(d.phi(&[0.0, 0.0]), 0.5);
    }

    #[test]
    fn boundary_membership() {
        let d = make_ball_domain(2, 1.0).unwrap();
        assert!(d.is_on_boundary(&[1.0, 0.0]));
        assert!(!d.is_on_boundary(&[0.0, 0.0]));
        assert!(d.is_on_boundary(&[1.0 - 1e-12, 0.0]));
    }

    #[test]
    fn halfspace_basics() {
        let d = make_halfspace_domain(2).unwrap();
        assert_eq!(d.project(&[-0.5, 2.0]), vec![0.0, 2.0]);
        assert_eq!(d.phi(&[0.0, 3.0]), 0.0);
        assert!(d.is_on_boundary(&[0.0, 3.0]));
        assert_eq!(d.grad_phi(&[7.0, -3.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn interval_normals() {
        let d = make_interval_domain(-1.0, 1.0).unwrap();
        assert_eq!(d.grad_phi(&[-1.0]), vec![1.0]);
        assert_eq!(d.grad_phi(&[1.0]), vec![-1.0]);
        assert_eq!(d.project(&[1.7]), vec![1.0]);
        assert_eq!(d.project(&[-3.0]), vec![-1.0]);
    }

    #[test]
    fn invalid_arguments() {
        assert!(make_ball_domain(0, 1.0).is_err());
        assert!(make_ball_domain(2, 0.0).is_err());
        assert!(make_ball_domain(2, -1.0).is_err());
        assert!(make_halfspace_domain(0).is_err());
        assert!(make_interval_domain(1.0, 1.0).is_err());
    }

    #[test]
    fn builtin_domains_validate() {
        for d in [
            make_ball_domain(1, 1.0).unwrap(),
            make_ball_domain(3, 2.5).unwrap(),
            make_interval_domain(-1.0, 2.0).unwrap(),
            make_halfspace_domain(2).unwrap(),
        ] {
            let r = d.validate(2000, 9);
            assert!(r.passed(), "{d:?}: {r:?}");
        }
    }

    #[test]
    fn validator_flags_bad_user_domain() {
        // unit disc whose "projection" is not idempotent and whose gradient is not unit
        let bad = UserDomain {
            dim: 2,
            phi: Arc::new(|x| 1.0 - x[0] * x[0] - x[1] * x[1]),
            grad_phi: Arc::new(|x, out| {
                out[0] = -2.0 * x[0];
                out[1] = -2.0 * x[1];
            }),
            project: Arc::new(|x, out| {
                out[0] = 0.9 * x[0];
                out[1] = 0.9 * x[1];
            }),
            sampling_box: (vec![-1.0, -1.0], vec![1.0, 1.0]),
            interior_point: vec![0.0, 0.0],
        };
        let d = DomainSpec::new(Arc::new(bad));
        assert!(!d.validate(200, 1).passed());
    }

    #[test]
    fn config_round_trip() {
        let c: DomainConfig =
            serde_json::from_str(r#"{"kind":"interval","lo":-1,"hi":1}"#).unwrap();
        assert_eq!(c, DomainConfig::Interval { lo: -1.0, hi: 1.0 });
        assert_eq!(c.build().unwrap().dimension(), 1);
    }
}
