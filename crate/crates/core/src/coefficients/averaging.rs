//! Time averages `b̄`, `ā = σ̄σ̄`, `f̄` of the fast-time coefficients.
//!
//! Periodic models are averaged over one period with composite
//! Gauss–Legendre quadrature. Other models use horizon doubling with a
//! composite trapezoid rule until successive averages agree.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use dashmap::DashMap;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::CoefficientSet;
use crate::{Error, Result};

const GL_PANEL_NODES: usize = 16;
pub const DEFAULT_NODES_PER_PERIOD: usize = 64;
pub const DEFAULT_AVERAGE_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_DOUBLINGS: usize = 20;
const TRAPEZOID_STEPS_PER_T0: usize = 1024;
const DEFAULT_MEMO_CAPACITY: usize = 1 << 16;
const STACK_DIM: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AveragingMethod {
    #[serde(rename = "periodic-quadrature")]
    PeriodicQuadrature,
    #[serde(rename = "horizon-doubling")]
    HorizonDoubling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AveragingRule {
    Periodic {
        period: f64,
        nodes_per_period: usize,
    },
    HorizonDoubling {
        t0: f64,
        tolerance: f64,
        max_doublings: usize,
    },
}

impl AveragingRule {
    /// One-period quadrature when the model declares a period, horizon
    /// doubling from `T0 = 1` otherwise.
    pub fn for_model(c: &CoefficientSet) -> Self {
        match c.period {
            Some(period) => AveragingRule::Periodic {
                period,
                nodes_per_period: DEFAULT_NODES_PER_PERIOD,
            },
            None => AveragingRule::HorizonDoubling {
                t0: 1.0,
                tolerance: DEFAULT_AVERAGE_TOLERANCE,
                max_doublings: DEFAULT_MAX_DOUBLINGS,
            },
        }
    }

    pub fn method(&self) -> AveragingMethod {
        match self {
            AveragingRule::Periodic { .. } => AveragingMethod::PeriodicQuadrature,
            AveragingRule::HorizonDoubling { .. } => AveragingMethod::HorizonDoubling,
        }
    }

    pub fn tolerance(&self) -> f64 {
        match self {
            AveragingRule::Periodic { .. } => DEFAULT_AVERAGE_TOLERANCE,
            AveragingRule::HorizonDoubling { tolerance, .. } => *tolerance,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            AveragingRule::Periodic {
                period,
                nodes_per_period,
            } => {
                if !(period > 0.0) || nodes_per_period < DEFAULT_NODES_PER_PERIOD {
                    return Err(Error::invalid(format!(
                        "periodic averaging needs period > 0 and at least {DEFAULT_NODES_PER_PERIOD} nodes"
                    )));
                }
            }
            AveragingRule::HorizonDoubling {
                t0,
                tolerance,
                max_doublings,
            } => {
                if !(t0 > 0.0) || !(tolerance > 0.0) || max_doublings == 0 {
                    return Err(Error::invalid(
                        "horizon doubling needs t0 > 0, tolerance > 0, max_doublings >= 1",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((x, w));
    }
    out.reverse();
    out
}

fn gl_panel() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre(GL_PANEL_NODES))
}

/// Composite Gauss–Legendre nodes on `[0, period]` with weights normalised to sum to one.
pub(crate) fn periodic_nodes(period: f64, nodes_per_period: usize) -> Vec<(f64, f64)> {
    let panels = nodes_per_period.div_ceil(GL_PANEL_NODES);
    let h = period / panels as f64;
    let mut nodes = Vec::with_capacity(panels * GL_PANEL_NODES);
    for p in 0..panels {
        let a = p as f64 * h;
        for &(x, w) in gl_panel() {
            nodes.push((a + 0.5 * h * (x + 1.0), w / (2.0 * panels as f64)));
        }
    }
    nodes
}

/// Prepared quadrature; periodic nodes are computed once.
#[derive(Clone, Debug)]
enum Quadrature {
    Periodic(Vec<(f64, f64)>),
    Doubling {
        t0: f64,
        tolerance: f64,
        max_doublings: usize,
    },
}

impl Quadrature {
    fn new(rule: &AveragingRule) -> Self {
        match *rule {
            AveragingRule::Periodic {
                period,
                nodes_per_period,
            } => Quadrature::Periodic(periodic_nodes(period, nodes_per_period)),
            AveragingRule::HorizonDoubling {
                t0,
                tolerance,
                max_doublings,
            } => Quadrature::Doubling {
                t0,
                tolerance,
                max_doublings,
            },
        }
    }

    /// Time average of `s -> F(s)` written into `out`.
    ///
    /// Sums are anchored at the first node: the average is `F(s_0)` plus the
    /// weighted mean of `F(s) - F(s_0)`, so a function that does not depend on
    /// `s` comes back bit for bit.
    fn average(&self, out: &mut [f64], mut eval: impl FnMut(f64, &mut [f64])) -> Result<()> {
        let dim = out.len();
        match self {
            Quadrature::Periodic(nodes) => {
                let mut stack = [0.0; 3 * STACK_DIM];
                let mut heap;
                let scratch: &mut [f64] = if dim <= STACK_DIM {
                    &mut stack[..3 * dim]
                } else {
                    heap = vec![0.0; 3 * dim];
                    &mut heap
                };
                let (anchor, rest) = scratch.split_at_mut(dim);
                let (buf, acc) = rest.split_at_mut(dim);
                eval(nodes[0].0, anchor);
                for &(s, w) in &nodes[1..] {
                    eval(s, buf);
                    for k in 0..dim {
                        acc[k] += w * (buf[k] - anchor[k]);
                    }
                }
                for k in 0..dim {
                    out[k] = anchor[k] + acc[k];
                }
                Ok(())
            }
            &Quadrature::Doubling {
                t0,
                tolerance,
                max_doublings,
            } => {
                let mut anchor = vec![0.0; dim];
                let mut buf = vec![0.0; dim];
                let h = t0 / TRAPEZOID_STEPS_PER_T0 as f64;
                eval(0.0, &mut anchor);
                let mut integral = vec![0.0; dim];
                let mut left = vec![0.0; dim];
                // integrates anchored F over [a, a + steps * h]; `left` holds G(a)
                let mut extend = |a: f64, steps: usize, integral: &mut [f64], left: &mut [f64]| {
                    for j in 1..=steps {
                        eval(a + j as f64 * h, &mut buf);
                        for k in 0..dim {
                            let g = buf[k] - anchor[k];
                            integral[k] += 0.5 * h * (left[k] + g);
                            left[k] = g;
                        }
                    }
                };
                extend(0.0, TRAPEZOID_STEPS_PER_T0, &mut integral, &mut left);
                let mut horizon = t0;
                let mut prev: Vec<f64> = (0..dim)
                    .map(|k| anchor[k] + integral[k] / horizon)
                    .collect();
                let mut worst = (0, f64::INFINITY);
                for _ in 0..max_doublings {
                    let steps = (horizon / h).round() as usize;
                    extend(horizon, steps, &mut integral, &mut left);
                    horizon *= 2.0;
                    let cur: Vec<f64> = (0..dim)
                        .map(|k| anchor[k] + integral[k] / horizon)
                        .collect();
                    worst = (0, 0.0);
                    for k in 0..dim {
                        let change = (cur[k] - prev[k]).abs();
                        if change > worst.1 || change.is_nan() {
                            worst = (k, change);
                        }
                    }
                    if worst.1 < tolerance {
                        out.copy_from_slice(&cur);
                        return Ok(());
                    }
                    prev = cur;
                }
                Err(Error::NonAveraging {
                    component: worst.0,
                    doublings: max_doublings,
                    change: worst.1,
                })
            }
        }
    }
}

/// Principal square root of a symmetric positive definite matrix (row-major).
///
/// Fails when the matrix is not symmetric to `1e-10` or when an eigenvalue
/// falls below `floor`.
pub fn spd_sqrt(a: &[f64], m: usize, floor: f64) -> Result<Vec<f64>> {
    if a.len() != m * m {
        return Err(Error::invalid("matrix size does not match dimension"));
    }
    let mut off_diagonal = false;
    for i in 0..m {
        for j in (i + 1)..m {
            if (a[i * m + j] - a[j * m + i]).abs() > 1e-10 {
                return Err(Error::numerical(
                    None,
                    format!("averaged diffusion is not symmetric at ({i}, {j})"),
                ));
            }
            if a[i * m + j] != 0.0 || a[j * m + i] != 0.0 {
                off_diagonal = true;
            }
        }
    }
    if !off_diagonal {
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            let lambda = a[i * m + i];
            if !(lambda >= floor) {
                return Err(Error::EllipticityViolation {
                    eigenvalue: lambda,
                    floor,
                });
            }
            out[i * m + i] = lambda.sqrt();
        }
        return Ok(out);
    }
    let sym = DMatrix::from_fn(m, m, |i, j| 0.5 * (a[i * m + j] + a[j * m + i]));
    let eig = SymmetricEigen::new(sym);
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if !(min >= floor) {
        return Err(Error::EllipticityViolation {
            eigenvalue: min,
            floor,
        });
    }
    let roots = eig.eigenvalues.map(f64::sqrt);
    let v = &eig.eigenvectors;
    let root = v * DMatrix::from_diagonal(&roots) * v.transpose();
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            // symmetrise away rounding
            out[i * m + j] = 0.5 * (root[(i, j)] + root[(j, i)]);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
struct ForwardAverages {
    b: Vec<f64>,
    a: Vec<f64>,
    sigma: Vec<f64>,
}

/// Averaged coefficients `b̄(x)`, `ā(x)`, `σ̄(x)`, `f̄(x, y)` of a coefficient set.
///
/// Values are memoised per exact argument (bitwise keys) up to a fixed
/// number of entries; the cache is safe under concurrent use.
pub struct AveragedCoefficients {
    set: CoefficientSet,
    rule: AveragingRule,
    quadrature: Quadrature,
    floor: f64,
    memo_capacity: usize,
    forward_memo: DashMap<Box<[u64]>, Arc<ForwardAverages>>,
    driver_memo: DashMap<Box<[u64]>, Arc<Vec<f64>>>,
    forward_entries: AtomicUsize,
    driver_entries: AtomicUsize,
}

impl std::fmt::Debug for AveragedCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AveragedCoefficients")
            .field("model", &self.set.name)
            .field("rule", &self.rule)
            .finish_non_exhaustive()
    }
}

impl AveragedCoefficients {
    pub fn new(set: &CoefficientSet) -> Result<Self> {
        Self::with_rule(set, AveragingRule::for_model(set))
    }

    pub fn with_rule(set: &CoefficientSet, rule: AveragingRule) -> Result<Self> {
        rule.validate()?;
        Ok(Self {
            set: set.clone(),
            quadrature: Quadrature::new(&rule),
            rule,
            floor: 0.5 * set.constants.iota,
            memo_capacity: DEFAULT_MEMO_CAPACITY,
            forward_memo: DashMap::new(),
            driver_memo: DashMap::new(),
            forward_entries: AtomicUsize::new(0),
            driver_entries: AtomicUsize::new(0),
        })
    }

    /// Sets the memo size; zero disables memoisation.
    pub fn with_memo_capacity(mut self, capacity: usize) -> Self {
        self.memo_capacity = capacity;
        self
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.set
    }

    pub fn method_tag(&self) -> AveragingMethod {
        self.rule.method()
    }

    pub fn rule(&self) -> &AveragingRule {
        &self.rule
    }

    pub fn average_tolerance(&self) -> f64 {
        self.rule.tolerance()
    }

    pub fn state_dim(&self) -> usize {
        self.set.m
    }

    pub fn value_dim(&self) -> usize {
        self.set.d
    }

    fn forward(&self, x: &[f64]) -> Result<Arc<ForwardAverages>> {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if self.memo_capacity > 0 {
            if let Some(hit) = self.forward_memo.get(key.as_slice()) {
                return Ok(Arc::clone(hit.value()));
            }
        }
        let m = self.set.m;
        let mut b = vec![0.0; m];
        self.quadrature
            .average(&mut b, |s, out| (self.set.b)(s, x, out))?;
        let mut a = vec![0.0; m * m];
        let mut sig = vec![0.0; m * m];
        self.quadrature.average(&mut a, |s, out| {
            (self.set.sigma)(s, x, &mut sig);
            for i in 0..m {
                for j in 0..m {
                    let mut acc = 0.0;
                    for k in 0..m {
                        acc += sig[i * m + k] * sig[j * m + k];
                    }
                    out[i * m + j] = acc;
                }
            }
        })?;
        let sigma = spd_sqrt(&a, m, self.floor)?;
        let value = Arc::new(ForwardAverages { b, a, sigma });
        if self.memo_capacity > 0
            && self.forward_entries.load(Ordering::Relaxed) < self.memo_capacity
        {
            self.forward_entries.fetch_add(1, Ordering::Relaxed);
            self.forward_memo
                .insert(key.into_boxed_slice(), Arc::clone(&value));
        }
        Ok(value)
    }

    pub fn b_bar(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.b.clone())
    }

    pub fn a_bar(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.a.clone())
    }

    pub fn sigma_bar(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.sigma.clone())
    }

    /// Writes `b̄(x)` and `σ̄(x)` into the given buffers.
    pub(crate) fn forward_into(&self, x: &[f64], b: &mut [f64], sigma: &mut [f64]) -> Result<()> {
        let v = self.forward(x)?;
        b.copy_from_slice(&v.b);
        sigma.copy_from_slice(&v.sigma);
        Ok(())
    }

    pub fn f_bar(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.set.d];
        self.f_bar_into(x, y, &mut out)?;
        Ok(out)
    }

    pub(crate) fn f_bar_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        let key: Vec<u64> = x.iter().chain(y).map(|v| v.to_bits()).collect();
        if self.memo_capacity > 0 {
            if let Some(hit) = self.driver_memo.get(key.as_slice()) {
                out.copy_from_slice(hit.value());
                return Ok(());
            }
        }
        self.quadrature
            .average(out, |s, buf| (self.set.f)(s, x, y, buf))?;
        if self.memo_capacity > 0
            && self.driver_entries.load(Ordering::Relaxed) < self.memo_capacity
        {
            self.driver_entries.fetch_add(1, Ordering::Relaxed);
            self.driver_memo
                .insert(key.into_boxed_slice(), Arc::new(out.to_vec()));
        }
        Ok(())
    }
}

/// `b̄(x)` with the model's default averaging rule.
pub fn average_drift(c: &CoefficientSet, x: &[f64]) -> Result<Vec<f64>> {
    let q = Quadrature::new(&AveragingRule::for_model(c));
    let mut out = vec![0.0; c.m];
    q.average(&mut out, |s, o| (c.b)(s, x, o))?;
    Ok(out)
}

/// `(ā(x), σ̄(x))` with the model's default averaging rule.
pub fn average_diffusion(c: &CoefficientSet, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let avg = AveragedCoefficients::new(c)?.with_memo_capacity(0);
    let v = avg.forward(x)?;
    Ok((v.a.clone(), v.sigma.clone()))
}

/// `f̄(x, y)` with the model's default averaging rule.
pub fn average_driver(c: &CoefficientSet, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let q = Quadrature::new(&AveragingRule::for_model(c));
    let mut out = vec![0.0; c.d];
    q.average(&mut out, |s, o| (c.f)(s, x, y, o))?;
    Ok(out)
}
