//! Convex potentials and their subdifferentials.
//!
//! A [`ConvexPotential`] is either decoupled (a sum of scalar potentials, one
//! per coordinate) or a general vector potential known only through its value
//! and proximal map. Decoupled potentials admit an exact composite resolvent;
//! general ones fall back to sequential splitting.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Scalar lower semicontinuous convex function on the real line.
///
/// The one-sided slopes must be nondecreasing in `y`; outside the effective
/// domain they are `-inf` to the left and `+inf` to the right.
pub trait ScalarPotential: Send + Sync + fmt::Debug {
    fn eval(&self, y: f64) -> f64;
    /// `argmin_z { eval(z) + (z - v)^2 / (2 gamma) }`.
    fn prox(&self, v: f64, gamma: f64) -> f64;
    fn left_slope(&self, y: f64) -> f64;
    fn right_slope(&self, y: f64) -> f64;
    /// Points where the slope jumps, including finite domain endpoints.
    fn kinks(&self) -> Vec<f64>;
    fn is_zero(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ZeroPotential;

impl ScalarPotential for ZeroPotential {
    fn eval(&self, _y: f64) -> f64 {
        0.0
    }
    fn prox(&self, v: f64, _gamma: f64) -> f64 {
        v
    }
    fn left_slope(&self, _y: f64) -> f64 {
        0.0
    }
    fn right_slope(&self, _y: f64) -> f64 {
        0.0
    }
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// `lambda y^2 / 2`.
#[derive(Clone, Copy, Debug)]
pub struct Quadratic {
    pub lambda: f64,
}

impl ScalarPotential for Quadratic {
    fn eval(&self, y: f64) -> f64 {
        0.5 * self.lambda * y * y
    }
    fn prox(&self, v: f64, gamma: f64) -> f64 {
        v / (1.0 + gamma * self.lambda)
    }
    fn left_slope(&self, y: f64) -> f64 {
        self.lambda * y
    }
    fn right_slope(&self, y: f64) -> f64 {
        self.lambda * y
    }
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }
    fn is_zero(&self) -> bool {
        self.lambda == 0.0
    }
}

/// `weight |y|`.
#[derive(Clone, Copy, Debug)]
pub struct AbsValue {
    pub weight: f64,
}

impl ScalarPotential for AbsValue {
    fn eval(&self, y: f64) -> f64 {
        self.weight * y.abs()
    }
    fn prox(&self, v: f64, gamma: f64) -> f64 {
        let t = gamma * self.weight;
        if v > t {
            v - t
        } else if v < -t {
            v + t
        } else {
            0.0
        }
    }
    fn left_slope(&self, y: f64) -> f64 {
        if y > 0.0 {
            self.weight
        } else {
            -self.weight
        }
    }
    fn right_slope(&self, y: f64) -> f64 {
        if y < 0.0 {
            -self.weight
        } else {
            self.weight
        }
    }
    fn kinks(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn is_zero(&self) -> bool {
        self.weight == 0.0
    }
}

/// Indicator of `[lo, hi]`; either end may be infinite.
#[derive(Clone, Copy, Debug)]
pub struct IntervalIndicator {
    pub lo: f64,
    pub hi: f64,
}

impl ScalarPotential for IntervalIndicator {
    fn eval(&self, y: f64) -> f64 {
        if y >= self.lo && y <= self.hi {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn prox(&self, v: f64, _gamma: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }
    fn left_slope(&self, y: f64) -> f64 {
        if y <= self.lo {
            f64::NEG_INFINITY
        } else if y <= self.hi {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn right_slope(&self, y: f64) -> f64 {
        if y < self.lo {
            f64::NEG_INFINITY
        } else if y < self.hi {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn kinks(&self) -> Vec<f64> {
        [self.lo, self.hi]
            .into_iter()
            .filter(|v| v.is_finite())
            .collect()
    }
}

/// `c max(0, -y)`.
#[derive(Clone, Copy, Debug)]
pub struct PositivePart {
    pub c: f64,
}

impl ScalarPotential for PositivePart {
    fn eval(&self, y: f64) -> f64 {
        self.c * (-y).max(0.0)
    }
    fn prox(&self, v: f64, gamma: f64) -> f64 {
        if v >= 0.0 {
            v
        } else if v < -gamma * self.c {
            v + gamma * self.c
        } else {
            0.0
        }
    }
    fn left_slope(&self, y: f64) -> f64 {
        if y > 0.0 {
            0.0
        } else {
            -self.c
        }
    }
    fn right_slope(&self, y: f64) -> f64 {
        if y < 0.0 {
            -self.c
        } else {
            0.0
        }
    }
    fn kinks(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn is_zero(&self) -> bool {
        self.c == 0.0
    }
}

/// A convex potential on `R^d` given only by value and proximal map.
pub trait VectorPotential: Send + Sync + fmt::Debug {
    fn eval(&self, y: &[f64]) -> f64;
    fn prox(&self, v: &[f64], gamma: f64, out: &mut [f64]);
}

#[derive(Clone, Debug)]
enum Repr {
    Decoupled(Vec<Arc<dyn ScalarPotential>>),
    Coupled(Arc<dyn VectorPotential>),
}

#[derive(Clone, Debug)]
pub struct ConvexPotential {
    dim: usize,
    repr: Repr,
}

impl ConvexPotential {
    /// The same scalar potential on every coordinate.
    pub fn uniform(dim: usize, part: Arc<dyn ScalarPotential>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("potential dimension must be positive"));
        }
        Ok(Self {
            dim,
            repr: Repr::Decoupled(vec![part; dim]),
        })
    }

    pub fn decoupled(parts: Vec<Arc<dyn ScalarPotential>>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("potential dimension must be positive"));
        }
        Ok(Self {
            dim: parts.len(),
            repr: Repr::Decoupled(parts),
        })
    }

    pub fn coupled(dim: usize, p: Arc<dyn VectorPotential>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("potential dimension must be positive"));
        }
        Ok(Self {
            dim,
            repr: Repr::Coupled(p),
        })
    }

    pub fn zero(dim: usize) -> Result<Self> {
        Self::uniform(dim, Arc::new(ZeroPotential))
    }

    pub fn quadratic(dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid("quadratic weight must be nonnegative"));
        }
        Self::uniform(dim, Arc::new(Quadratic { lambda }))
    }

    pub fn abs(dim: usize, weight: f64) -> Result<Self> {
        if !(weight >= 0.0) {
            return Err(Error::invalid("abs weight must be nonnegative"));
        }
        Self::uniform(dim, Arc::new(AbsValue { weight }))
    }

    /// Indicator of the box `[lo, hi]^dim`.
    pub fn box_indicator(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::invalid(format!(
                "box indicator needs lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Self::uniform(dim, Arc::new(IntervalIndicator { lo, hi }))
    }

    pub fn positive_part(dim: usize, c: f64) -> Result<Self> {
        if !(c >= 0.0) {
            return Err(Error::invalid("positive-part weight must be nonnegative"));
        }
        Self::uniform(dim, Arc::new(PositivePart { c }))
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn is_decoupled(&self) -> bool {
        matches!(self.repr, Repr::Decoupled(_))
    }

    pub fn is_zero(&self) -> bool {
        match &self.repr {
            Repr::Decoupled(parts) => parts.iter().all(|p| p.is_zero()),
            Repr::Coupled(_) => false,
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match &self.repr {
            Repr::Decoupled(parts) => parts.iter().zip(y).map(|(p, v)| p.eval(*v)).sum(),
            Repr::Coupled(p) => p.eval(y),
        }
    }

    pub fn prox(&self, v: &[f64], gamma: f64) -> Result<Vec<f64>> {
        check_gamma(gamma)?;
        let mut out = vec![0.0; self.dim];
        self.prox_into(v, gamma, &mut out);
        Ok(out)
    }

    pub(crate) fn prox_into(&self, v: &[f64], gamma: f64, out: &mut [f64]) {
        match &self.repr {
            Repr::Decoupled(parts) => {
                for ((o, p), x) in out.iter_mut().zip(parts).zip(v) {
                    *o = p.prox(*x, gamma);
                }
            }
            Repr::Coupled(p) => p.prox(v, gamma, out),
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "gamma must be positive, got {gamma}"
        )))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Moreau envelope `eval(J v) + |J v - v|^2 / (2 gamma)`.
pub fn moreau_envelope(p: &ConvexPotential, v: &[f64], gamma: f64) -> Result<f64> {
    let z = p.prox(v, gamma)?;
    Ok(p.eval(&z) + sq_dist(&z, v) / (2.0 * gamma))
}

/// Gradient of the Moreau envelope, `(v - J v) / gamma`.
pub fn yosida_gradient(p: &ConvexPotential, v: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let z = p.prox(v, gamma)?;
    Ok(v.iter().zip(&z).map(|(a, b)| (a - b) / gamma).collect())
}

/// Output of [`composite_resolvent`]: `y + u + v_part = input`.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolvent {
    pub y: Vec<f64>,
    /// `w_phi * u` with `u` in the subdifferential of phi at `y`.
    pub u: Vec<f64>,
    /// `w_psi * v` with `v` in the subdifferential of psi at `y`.
    pub v: Vec<f64>,
    /// Set when the sequential splitting fallback was used.
    pub split: bool,
}

/// Solves `y + w_phi dphi(y) + w_psi dpsi(y) ∋ v`.
pub fn composite_resolvent(
    p_phi: &ConvexPotential,
    p_psi: &ConvexPotential,
    v: &[f64],
    w_phi: f64,
    w_psi: f64,
) -> Result<Resolvent> {
    let d = v.len();
    if p_phi.dim != d || p_psi.dim != d {
        return Err(Error::invalid("resolvent dimension mismatch"));
    }
    let mut out = Resolvent {
        y: vec![0.0; d],
        u: vec![0.0; d],
        v: vec![0.0; d],
        split: false,
    };
    composite_resolvent_into(
        p_phi, p_psi, v, w_phi, w_psi, &mut out.y, &mut out.u, &mut out.v,
    )
    .map(|split| {
        out.split = split;
        out
    })
}

/// Allocation-free variant; returns whether splitting was used.
#[allow(clippy::too_many_arguments)]
pub(crate) fn composite_resolvent_into(
    p_phi: &ConvexPotential,
    p_psi: &ConvexPotential,
    v: &[f64],
    w_phi: f64,
    w_psi: f64,
    y: &mut [f64],
    u: &mut [f64],
    vv: &mut [f64],
) -> Result<bool> {
    if !(w_phi >= 0.0) || !(w_psi >= 0.0) {
        return Err(Error::invalid(format!(
            "resolvent weights must be nonnegative, got {w_phi} and {w_psi}"
        )));
    }
    match (&p_phi.repr, &p_psi.repr) {
        (Repr::Decoupled(a), Repr::Decoupled(b)) => {
            for k in 0..v.len() {
                let (yk, uk, vk) =
                    scalar_resolvent(a[k].as_ref(), b[k].as_ref(), v[k], w_phi, w_psi)?;
                y[k] = yk;
                u[k] = uk;
                vv[k] = vk;
            }
            Ok(false)
        }
        _ => {
            let mid = if w_phi > 0.0 {
                let mut m = vec![0.0; v.len()];
                p_phi.prox_into(v, w_phi, &mut m);
                m
            } else {
                v.to_vec()
            };
            if w_psi > 0.0 {
                p_psi.prox_into(&mid, w_psi, y);
            } else {
                y.copy_from_slice(&mid);
            }
            for k in 0..v.len() {
                u[k] = v[k] - mid[k];
                vv[k] = mid[k] - y[k];
            }
            Ok(true)
        }
    }
}

const BISECTION_TOL: f64 = 1e-12;
const MAX_EXPANSIONS: usize = 200;

fn scalar_resolvent(
    phi: &dyn ScalarPotential,
    psi: &dyn ScalarPotential,
    v: f64,
    w_phi: f64,
    w_psi: f64,
) -> Result<(f64, f64, f64)> {
    let use_phi = w_phi > 0.0 && !phi.is_zero();
    let use_psi = w_psi > 0.0 && !psi.is_zero();
    match (use_phi, use_psi) {
        (false, false) => Ok((v, 0.0, 0.0)),
        (true, false) => {
            let y = phi.prox(v, w_phi);
            Ok((y, v - y, 0.0))
        }
        (false, true) => {
            let y = psi.prox(v, w_psi);
            Ok((y, 0.0, v - y))
        }
        (true, true) => {
            let y = solve_scalar_inclusion(phi, psi, v, w_phi, w_psi)?;
            let r = v - y;
            let (ul, uh) = (w_phi * phi.left_slope(y), w_phi * phi.right_slope(y));
            let (vl, vh) = (w_psi * psi.left_slope(y), w_psi * psi.right_slope(y));
            // feasible u-range for u + v = r; pick its smallest-magnitude point
            let lo = ul.max(r - vh);
            let hi = uh.min(r - vl);
            let u = if lo <= hi {
                0.0f64.clamp(lo, hi)
            } else if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else if lo.is_finite() {
                lo
            } else {
                hi
            };
            Ok((y, u, r - u))
        }
    }
}

/// Root of the monotone inclusion `y + w_phi dphi(y) + w_psi dpsi(y) ∋ v`.
fn solve_scalar_inclusion(
    phi: &dyn ScalarPotential,
    psi: &dyn ScalarPotential,
    v: f64,
    w_phi: f64,
    w_psi: f64,
) -> Result<f64> {
    let upper = |y: f64| y + w_phi * phi.right_slope(y) + w_psi * psi.right_slope(y);
    let lower = |y: f64| y + w_phi * phi.left_slope(y) + w_psi * psi.left_slope(y);
    let solves = |y: f64| lower(y) <= v && v <= upper(y);

    // exact hits at kinks first: the common case for indicator-type potentials
    let mut kinks = phi.kinks();
    kinks.extend(psi.kinks());
    for &k in &kinks {
        if solves(k) {
            return Ok(k);
        }
    }

    let mut step = 1.0 + v.abs();
    let mut lo = v - step;
    let mut n = 0;
    while !(upper(lo) < v) {
        if solves(lo) {
            return Ok(lo);
        }
        step *= 2.0;
        lo = v - step;
        n += 1;
        if n > MAX_EXPANSIONS || !lo.is_finite() {
            return Err(Error::numerical(
                None,
                format!(
                    "resolvent bisection failed to bracket from below (v = {v}, last lo = {lo})"
                ),
            ));
        }
    }
    let mut step = 1.0 + v.abs();
    let mut hi = v + step;
    n = 0;
    while !(lower(hi) > v) {
        if solves(hi) {
            return Ok(hi);
        }
        step *= 2.0;
        hi = v + step;
        n += 1;
        if n > MAX_EXPANSIONS || !hi.is_finite() {
            return Err(Error::numerical(
                None,
                format!(
                    "resolvent bisection failed to bracket from above (v = {v}, last hi = {hi})"
                ),
            ));
        }
    }

    for _ in 0..400 {
        if hi - lo <= BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if upper(mid) < v {
            lo = mid;
        } else if lower(mid) > v {
            hi = mid;
        } else {
            return Ok(mid);
        }
    }

    // Built-in slopes are affine between kinks, so one secant step on the
    // final bracket lands on the root whenever no kink separates lo and hi.
    let (h_lo, h_hi) = (upper(lo), lower(hi));
    if h_lo.is_finite() && h_hi.is_finite() && h_hi > h_lo {
        let y = lo + (v - h_lo) * (hi - lo) / (h_hi - h_lo);
        if (lo..=hi).contains(&y) {
            return Ok(y);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Result of [`graph_monotonicity_certificate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub pairs: usize,
    pub min_inner_product: f64,
    pub passed: bool,
}

/// Minimum of `<y1 - y2, g1 - g2>` with `g` the Yosida gradient at weight `gamma`.
pub fn graph_monotonicity_certificate(
    p: &ConvexPotential,
    pairs: &[(Vec<f64>, Vec<f64>)],
    gamma: f64,
) -> Result<MonotonicityReport> {
    let mut min_ip = f64::INFINITY;
    for (a, b) in pairs {
        let ga = yosida_gradient(p, a, gamma)?;
        let gb = yosida_gradient(p, b, gamma)?;
        let ip: f64 = a
            .iter()
            .zip(b)
            .zip(ga.iter().zip(&gb))
            .map(|((x1, x2), (g1, g2))| (x1 - x2) * (g1 - g2))
            .sum();
        min_ip = min_ip.min(ip);
    }
    if pairs.is_empty() {
        min_ip = 0.0;
    }
    Ok(MonotonicityReport {
        pairs: pairs.len(),
        min_inner_product: min_ip,
        passed: min_ip >= -1e-12,
    })
}

/// Potential selection as it appears in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialConfig {
    Zero,
    Quadratic {
        lambda: f64,
    },
    Abs {
        #[serde(default = "one")]
        weight: f64,
    },
    /// Missing bounds mean an unbounded side.
    BoxIndicator {
        #[serde(default)]
        lo: Option<f64>,
        #[serde(default)]
        hi: Option<f64>,
    },
    PositivePart {
        c: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl PotentialConfig {
    pub fn build(&self, dim: usize) -> Result<ConvexPotential> {
        match *self {
            PotentialConfig::Zero => ConvexPotential::zero(dim),
            PotentialConfig::Quadratic { lambda } => ConvexPotential::quadratic(dim, lambda),
            PotentialConfig::Abs { weight } => ConvexPotential::abs(dim, weight),
            PotentialConfig::BoxIndicator { lo, hi } => ConvexPotential::box_indicator(
                dim,
                lo.unwrap_or(f64::NEG_INFINITY),
                hi.unwrap_or(f64::INFINITY),
            ),
            PotentialConfig::PositivePart { c } => ConvexPotential::positive_part(dim, c),
        }
    }
}

/// Pairs among the built-ins whose Yosida gradients never point against each
/// other, which is what the backward scheme's coupling condition needs.
pub fn compatible_builtin_pairs() -> Vec<(PotentialConfig, PotentialConfig)> {
    use PotentialConfig::*;
    let nonneg = BoxIndicator {
        lo: Some(0.0),
        hi: None,
    };
    vec![
        (Zero, Zero),
        (Zero, Abs { weight: 1.0 }),
        (Abs { weight: 1.0 }, Zero),
        (Quadratic { lambda: 1.0 }, Abs { weight: 1.0 }),
        (Abs { weight: 1.0 }, Abs { weight: 0.5 }),
        (Quadratic { lambda: 1.0 }, Quadratic { lambda: 2.0 }),
        (nonneg.clone(), Zero),
        (nonneg.clone(), Abs { weight: 1.0 }),
        (nonneg.clone(), PositivePart { c: 1.0 }),
        (PositivePart { c: 1.0 }, nonneg),
        (
            BoxIndicator {
                lo: Some(-1.0),
                hi: Some(1.0),
            },
            Quadratic { lambda: 1.0 },
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nonneg() -> ConvexPotential {
        ConvexPotential::box_indicator(1, 0.0, f64::INFINITY).unwrap()
    }

    /// Brute-force minimisation of `z -> obj(z)` on a fine grid, refined twice.
    fn grid_argmin(obj: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
        let (mut a, mut b) = (lo, hi);
        let mut best = (a, obj(a));
        for _ in 0..4 {
            let n = 20_000;
            for i in 0..=n {
                let z = a + (b - a) * i as f64 / n as f64;
                let f = obj(z);
                if f < best.1 {
                    best = (z, f);
                }
            }
            let h = (b - a) / n as f64;
            a = best.0 - 2.0 * h;
            b = best.0 + 2.0 * h;
        }
        best
    }

    #[test]
    fn envelope_examples() {
        let z = ConvexPotential::zero(2).unwrap();
        assert_eq!(moreau_envelope(&z, &[1.0, -3.0], 0.7).unwrap(), 0.0);
        assert_eq!(moreau_envelope(&nonneg(), &[-1.0], 0.5).unwrap(), 1.0);

        // grid oracle of z -> |z| + (z - 2)^2 / (2 * 0.5)
        let (_, oracle) = grid_argmin(|z| z.abs() + (z - 2.0) * (z - 2.0), -5.0, 5.0);
        assert!((oracle - 1.75).abs() < 1e-9);
        let a = ConvexPotential::abs(1, 1.0).unwrap();
        let env = moreau_envelope(&a, &[2.0], 0.5).unwrap();
        assert!((env - 1.75).abs() < 1e-15);
    }

    #[test]
    fn yosida_examples() {
        let z = ConvexPotential::zero(3).unwrap();
        assert_eq!(
            yosida_gradient(&z, &[1.0, 2.0, 3.0], 0.1).unwrap(),
            vec![0.0; 3]
        );
        assert_eq!(
            yosida_gradient(&nonneg(), &[-1.0], 0.5).unwrap(),
            vec![-2.0]
        );

        let a = ConvexPotential::abs(1, 1.0).unwrap();
        let g = yosida_gradient(&a, &[2.0], 0.5).unwrap()[0];
        assert_eq!(g, 1.0);
        // finite-difference oracle of the envelope
        let h = 1e-6;
        let fd = (moreau_envelope(&a, &[2.0 + h], 0.5).unwrap()
            - moreau_envelope(&a, &[2.0 - h], 0.5).unwrap())
            / (2.0 * h);
        assert!((fd - g).abs() < 1e-8);
    }

    #[test]
    fn gamma_must_be_positive() {
        let a = ConvexPotential::abs(1, 1.0).unwrap();
        assert!(matches!(
            moreau_envelope(&a, &[1.0], 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            yosida_gradient(&a, &[1.0], -1.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn resolvent_examples() {
        let z = ConvexPotential::zero(2).unwrap();
        let r = composite_resolvent(&z, &z, &[1.5, -2.0], 0.0, 0.0).unwrap();
        assert_eq!(r.y, vec![1.5, -2.0]);
        assert_eq!(r.u, vec![0.0, 0.0]);
        assert_eq!(r.v, vec![0.0, 0.0]);

        let z1 = ConvexPotential::zero(1).unwrap();
        let r = composite_resolvent(&nonneg(), &z1, &[-3.0], 1.0, 0.0).unwrap();
        assert_eq!(r.y, vec![0.0]);
        assert_eq!(r.u, vec![-3.0]);
        assert_eq!(r.v, vec![0.0]);

        let a = ConvexPotential::abs(1, 1.0).unwrap();
        let r = composite_resolvent(&a, &a, &[2.0], 0.5, 0.5).unwrap();
        let (oracle, _) = grid_argmin(
            |y| 0.5 * y.abs() + 0.5 * y.abs() + (y - 2.0) * (y - 2.0) / 2.0,
            -5.0,
            5.0,
        );
        assert!((oracle - 1.0).abs() < 1e-9);
        assert!((r.y[0] - 1.0).abs() < 1e-12);
        assert!((r.u[0] + r.v[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resolvent_rejects_negative_weight() {
        let a = ConvexPotential::abs(1, 1.0).unwrap();
        assert!(matches!(
            composite_resolvent(&a, &a, &[1.0], -0.1, 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn resolvent_against_grid_oracle() {
        let cases: Vec<(ConvexPotential, ConvexPotential, f64, f64)> = vec![
            (nonneg(), ConvexPotential::abs(1, 1.0).unwrap(), 0.3, 0.7),
            (
                ConvexPotential::quadratic(1, 2.0).unwrap(),
                ConvexPotential::abs(1, 1.0).unwrap(),
                0.4,
                0.9,
            ),
            (
                nonneg(),
                ConvexPotential::positive_part(1, 2.0).unwrap(),
                1.0,
                0.2,
            ),
            (
                ConvexPotential::box_indicator(1, -1.0, 1.0).unwrap(),
                ConvexPotential::quadratic(1, 1.0).unwrap(),
                0.5,
                0.5,
            ),
        ];
        for (a, b, wa, wb) in cases {
            for &v in &[-3.0, -0.5, -0.01, 0.0, 0.2, 0.9, 4.0] {
                let r = composite_resolvent(&a, &b, &[v], wa, wb).unwrap();
                let obj = |y: f64| wa * a.eval(&[y]) + wb * b.eval(&[y]) + (y - v) * (y - v) / 2.0;
                let (oracle, _) = grid_argmin(obj, -6.0, 6.0);
                assert!(
                    (r.y[0] - oracle).abs() < 1e-7,
                    "v={v}: {} vs {oracle}",
                    r.y[0]
                );
                assert!((r.y[0] + r.u[0] + r.v[0] - v).abs() < 1e-12);
            }
        }
    }

    #[derive(Debug)]
    struct Euclidean;
    impl VectorPotential for Euclidean {
        fn eval(&self, y: &[f64]) -> f64 {
            y.iter().map(|v| v * v).sum::<f64>().sqrt()
        }
        fn prox(&self, v: &[f64], gamma: f64, out: &mut [f64]) {
            let n = self.eval(v);
            let s = if n > gamma { 1.0 - gamma / n } else { 0.0 };
            for (o, x) in out.iter_mut().zip(v) {
                *o = s * x;
            }
        }
    }

    #[test]
    fn coupled_potentials_use_splitting() {
        let p = ConvexPotential::coupled(2, Arc::new(Euclidean)).unwrap();
        let z = ConvexPotential::zero(2).unwrap();
        let r = composite_resolvent(&p, &z, &[3.0, 4.0], 1.0, 1.0).unwrap();
        assert!(r.split);
        assert!((r.y[0] - 2.4).abs() < 1e-14 && (r.y[1] - 3.2).abs() < 1e-14);
        for k in 0..2 {
            assert!((r.y[k] + r.u[k] + r.v[k] - [3.0, 4.0][k]).abs() < 1e-14);
        }
    }

    #[test]
    fn monotonicity_examples() {
        let z = ConvexPotential::zero(1).unwrap();
        let r = graph_monotonicity_certificate(&z, &[(vec![1.0], vec![-1.0])], 0.5).unwrap();
        assert_eq!(r.min_inner_product, 0.0);

        let lambda = 1.0;
        let gamma = 0.5;
        let q = ConvexPotential::quadratic(1, lambda).unwrap();
        let mut pairs = Vec::new();
        for i in -4..=4 {
            for j in -4..=4 {
                pairs.push((vec![i as f64 * 0.5], vec![j as f64 * 0.5]));
            }
        }
        for (a, b) in &pairs {
            let r = graph_monotonicity_certificate(&q, &[(a.clone(), b.clone())], gamma).unwrap();
            let expect = (a[0] - b[0]).powi(2) * lambda / (1.0 + gamma * lambda);
            assert!((r.min_inner_product - expect).abs() < 1e-14);
        }
        assert!(
            graph_monotonicity_certificate(&q, &pairs, gamma)
                .unwrap()
                .passed
        );

        let a = ConvexPotential::abs(1, 1.0).unwrap();
        let r = graph_monotonicity_certificate(&a, &[(vec![2.0], vec![-2.0])], 0.5).unwrap();
        assert_eq!(r.min_inner_product, 8.0);
    }

    #[test]
    fn config_parsing() {
        let p: PotentialConfig =
            serde_json::from_str(r#"{"kind":"box_indicator","lo":0}"#).unwrap();
        assert_eq!(
            p,
            PotentialConfig::BoxIndicator {
                lo: Some(0.0),
                hi: None
            }
        );
        let built = p.build(1).unwrap();
        assert_eq!(built.eval(&[-1.0]), f64::INFINITY);
        assert_eq!(built.eval(&[5.0]), 0.0);
        let a: PotentialConfig = serde_json::from_str(r#"{"kind":"abs"}"#).unwrap();
        assert_eq!(a, PotentialConfig::Abs { weight: 1.0 });
    }
}
