//! Projected Euler simulation of reflected forward systems.
//!
//! One step reads
//!
//! ```text
//! X~      = X_i + b(t_i/eps, X_i) dt + sigma(t_i/eps, X_i) dB_i
//! X_{i+1} = project(X~)
//! dK_i    = X_{i+1} - X~
//! ```
//!
//! so `dK_i` points inward along `grad phi` and vanishes away from the
//! boundary. The averaged system uses the same kernel with `b̄`, `σ̄`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{AveragedCoefficients, CoefficientSet};
use crate::domain::{angle_between, DomainSpec};
use crate::rng::{pooled_stderr, scalar_mean_stderr, GaussianStream, StreamKey};
use crate::{Error, Result};

pub const SCHEME_TAG: &str = "projected-euler";
/// Largest admissible angle between a reflection increment and the normal.
pub const NORMAL_ANGLE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if !(t_start.is_finite() && t_end.is_finite() && t_start < t_end) {
            return Err(Error::invalid(format!(
                "time grid needs t_start < t_end, got [{t_start}, {t_end}]"
            )));
        }
        if n_steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        Ok(Self {
            t_start,
            t_end,
            n_steps,
        })
    }

    /// Smallest uniform grid on `[t_start, t_end]` whose step does not exceed `max_dt`.
    pub fn with_max_step(t_start: f64, t_end: f64, max_dt: f64) -> Result<Self> {
        if !(max_dt > 0.0) {
            return Err(Error::invalid(format!(
                "step bound must be positive, got {max_dt}"
            )));
        }
        let n = ((t_end - t_start) / max_dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Self::new(t_start, t_end, n)
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_end
        } else {
            self.t_start + i as f64 * self.dt()
        }
    }
}

/// Step-size rule for fast-time runs: `dt = min(eps * period / steps_per_period, max_dt)`,
/// or `max_dt` alone for models without a period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    #[serde(default = "default_steps_per_period")]
    pub steps_per_period: usize,
    #[serde(default = "default_max_dt")]
    pub max_dt: f64,
}

fn default_steps_per_period() -> usize {
    64
}

fn default_max_dt() -> f64 {
    1e-3
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            steps_per_period: default_steps_per_period(),
            max_dt: default_max_dt(),
        }
    }
}

impl StepRule {
    pub fn grid(
        &self,
        t_start: f64,
        t_end: f64,
        epsilon: f64,
        period: Option<f64>,
    ) -> Result<TimeGrid> {
        if self.steps_per_period == 0 || !(self.max_dt > 0.0) {
            return Err(Error::Validation(
                "step rule needs positive steps per period and step cap".into(),
            ));
        }
        let dt = match period {
            Some(p) => (epsilon * p / self.steps_per_period as f64).min(self.max_dt),
            None => self.max_dt,
        };
        TimeGrid::with_max_step(t_start, t_end, dt)
    }
}

/// Which system an ensemble was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonTag {
    Epsilon(f64),
    Averaged,
}

/// Per-run checks of the reflection invariants.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub reflection_steps: usize,
    /// Reflections whose landing point is not on the boundary.
    pub off_boundary_reflections: usize,
    pub max_normal_angle: f64,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.off_boundary_reflections == 0 && self.max_normal_angle <= NORMAL_ANGLE_TOLERANCE
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// `min <X_{i+1} - x*, -dK_i>` over paths and steps; nonnegative up to rounding.
    pub min_monotonicity: f64,
    pub sup_moment: f64,
    pub mean_k_var: f64,
    pub reflection_fraction: f64,
}

/// Forward paths with reflection increments.
///
/// Arrays are path-major and row-major: `x[(p * (n + 1) + i) * m + k]`,
/// `dk` and `db` use `n` rows per path, `k_var` one scalar per grid point.
#[derive(Clone, Debug)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub m: usize,
    pub n_paths: usize,
    pub epsilon: EpsilonTag,
    pub seed: u64,
    pub scheme_tag: &'static str,
    pub x: Vec<f64>,
    pub dk: Vec<f64>,
    pub k_var: Vec<f64>,
    /// Empty when the increments were not retained.
    pub db: Vec<f64>,
    pub invariants: InvariantReport,
}

impl PathEnsemble {
    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    pub fn x(&self, p: usize, i: usize) -> &[f64] {
        let o = (p * (self.grid.n_steps + 1) + i) * self.m;
        &self.x[o..o + self.m]
    }

    pub fn dk(&self, p: usize, i: usize) -> &[f64] {
        let o = (p * self.grid.n_steps + i) * self.m;
        &self.dk[o..o + self.m]
    }

    pub fn k_var(&self, p: usize, i: usize) -> f64 {
        self.k_var[p * (self.grid.n_steps + 1) + i]
    }

    /// `|K|` accrued over step `i`.
    pub fn dk_var(&self, p: usize, i: usize) -> f64 {
        self.k_var(p, i + 1) - self.k_var(p, i)
    }

    pub fn has_increments(&self) -> bool {
        !self.db.is_empty()
    }

    pub fn db(&self, p: usize, i: usize) -> &[f64] {
        let o = (p * self.grid.n_steps + i) * self.m;
        &self.db[o..o + self.m]
    }

    pub fn terminal(&self, p: usize) -> &[f64] {
        self.x(p, self.grid.n_steps)
    }

    /// Writes the documented binary layout: header `m, n_paths, n_steps`
    /// as little-endian `u64` and `dt` as `f64`, then `X`, `dK`, `K_var`
    /// as little-endian `f64` in the in-memory order.
    pub fn write_dump(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for v in [self.m as u64, self.n_paths as u64, self.grid.n_steps as u64] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.grid.dt().to_le_bytes())?;
        for arr in [&self.x, &self.dk, &self.k_var] {
            for v in arr.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuilds an ensemble from a dump. Brownian increments are not part of
    /// the dump, so the result has none.
    pub fn read_dump(
        path: impl AsRef<Path>,
        t_start: f64,
        epsilon: EpsilonTag,
        seed: u64,
    ) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut BufReader<File>| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let m = next_u64(&mut r)? as usize;
        let n_paths = next_u64(&mut r)? as usize;
        let n_steps = next_u64(&mut r)? as usize;
        let dt = f64::from_bits(next_u64(&mut r)?);
        if m == 0 || n_paths == 0 || n_steps == 0 || !(dt > 0.0) {
            return Err(Error::Validation("path dump header is malformed".into()));
        }
        let grid = TimeGrid::new(t_start, t_start + dt * n_steps as f64, n_steps)?;
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; len * 8];
            r.read_exact(&mut bytes)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight")))
                .collect())
        };
        let x = read_vec(n_paths * (n_steps + 1) * m)?;
        let dk = read_vec(n_paths * n_steps * m)?;
        let k_var = read_vec(n_paths * (n_steps + 1))?;
        Ok(Self {
            grid,
            m,
            n_paths,
            epsilon,
            seed,
            scheme_tag: SCHEME_TAG,
            x,
            dk,
            k_var,
            db: Vec::new(),
            invariants: InvariantReport::default(),
        })
    }
}

/// Terminal values and run statistics without the stored paths.
#[derive(Clone, Debug)]
pub struct TerminalSummary {
    pub grid: TimeGrid,
    pub m: usize,
    pub n_paths: usize,
    pub epsilon: EpsilonTag,
    pub seed: u64,
    /// `n_paths * m` terminal states.
    pub x_terminal: Vec<f64>,
    pub k_var_terminal: Vec<f64>,
    pub invariants: InvariantReport,
    pub diagnostics: DiagnosticsReport,
}

impl TerminalSummary {
    pub fn terminal(&self, p: usize) -> &[f64] {
        &self.x_terminal[p * self.m..(p + 1) * self.m]
    }
}

/// Coefficients seen by the kernel at grid time `t`.
trait StepCoefficients: Sync {
    fn eval(&self, t: f64, x: &[f64], b: &mut [f64], sigma: &mut [f64]) -> Result<()>;
}

struct FastTime<'a> {
    c: &'a CoefficientSet,
    inv_eps: f64,
}

impl StepCoefficients for FastTime<'_> {
    fn eval(&self, t: f64, x: &[f64], b: &mut [f64], sigma: &mut [f64]) -> Result<()> {
        let s = t * self.inv_eps;
        (self.c.b)(s, x, b);
        (self.c.sigma)(s, x, sigma);
        Ok(())
    }
}

impl StepCoefficients for AveragedCoefficients {
    fn eval(&self, _t: f64, x: &[f64], b: &mut [f64], sigma: &mut [f64]) -> Result<()> {
        self.forward_into(x, b, sigma)
    }
}

#[derive(Default)]
struct PathView<'a> {
    x: Option<&'a mut [f64]>,
    dk: Option<&'a mut [f64]>,
    k_var: Option<&'a mut [f64]>,
    db: Option<&'a mut [f64]>,
}

struct PathStats {
    terminal: Vec<f64>,
    k_var: f64,
    sup_x2: f64,
    reflections: usize,
    off_boundary: usize,
    max_angle: f64,
    min_monotonicity: f64,
}

fn with_step(e: Error, step: usize) -> Error {
    match e {
        Error::NumericalFailure {
            step: None,
            message,
        } => Error::numerical(Some(step), message),
        other => other,
    }
}

#[allow(clippy::too_many_arguments)]
fn run_path(
    coef: &dyn StepCoefficients,
    domain: &DomainSpec,
    grid: &TimeGrid,
    x0: &[f64],
    key: StreamKey,
    x_star: &[f64],
    mut view: PathView<'_>,
) -> Result<PathStats> {
    let m = x0.len();
    let dt = grid.dt();
    let scale = dt.sqrt();
    let mut stream = GaussianStream::new(key);
    let mut x = x0.to_vec();
    let mut b = vec![0.0; m];
    let mut sig = vec![0.0; m * m];
    let mut db = vec![0.0; m];
    let mut xt = vec![0.0; m];
    let mut dk = vec![0.0; m];
    let mut grad = vec![0.0; m];
    let mut st = PathStats {
        terminal: Vec::new(),
        k_var: 0.0,
        sup_x2: x.iter().map(|v| v * v).sum(),
        reflections: 0,
        off_boundary: 0,
        max_angle: 0.0,
        min_monotonicity: f64::INFINITY,
    };
    if let Some(xs) = view.x.as_deref_mut() {
        xs[..m].copy_from_slice(&x);
    }
    if let Some(kv) = view.k_var.as_deref_mut() {
        kv[0] = 0.0;
    }
    for i in 0..grid.n_steps {
        coef.eval(grid.time(i), &x, &mut b, &mut sig)
            .map_err(|e| with_step(e, i))?;
        stream.fill(&mut db, scale);
        for r in 0..m {
            let mut acc = x[r] + b[r] * dt;
            for j in 0..m {
                acc += sig[r * m + j] * db[j];
            }
            xt[r] = acc;
        }
        if !xt.iter().all(|v| v.is_finite()) {
            return Err(Error::numerical(Some(i), "non-finite forward state"));
        }
        x.copy_from_slice(&xt);
        domain.project_in_place(&mut x);
        let mut dk2 = 0.0;
        let mut mono = 0.0;
        let mut x2 = 0.0;
        for r in 0..m {
            dk[r] = x[r] - xt[r];
            dk2 += dk[r] * dk[r];
            mono -= (x[r] - x_star[r]) * dk[r];
            x2 += x[r] * x[r];
        }
        if dk2 > 0.0 {
            st.reflections += 1;
            if !domain.is_on_boundary(&x) {
                st.off_boundary += 1;
            }
            domain.grad_phi_into(&x, &mut grad);
            st.max_angle = st.max_angle.max(angle_between(&dk, &grad));
        }
        st.k_var += dk2.sqrt();
        st.min_monotonicity = st.min_monotonicity.min(mono);
        st.sup_x2 = st.sup_x2.max(x2);
        if let Some(xs) = view.x.as_deref_mut() {
            xs[(i + 1) * m..(i + 2) * m].copy_from_slice(&x);
        }
        if let Some(out) = view.dk.as_deref_mut() {
            out[i * m..(i + 1) * m].copy_from_slice(&dk);
        }
        if let Some(kv) = view.k_var.as_deref_mut() {
            kv[i + 1] = st.k_var;
        }
        if let Some(out) = view.db.as_deref_mut() {
            out[i * m..(i + 1) * m].copy_from_slice(&db);
        }
    }
    if st.min_monotonicity == f64::INFINITY {
        st.min_monotonicity = 0.0;
    }
    st.terminal = x;
    Ok(st)
}

fn check_start(domain: &DomainSpec, x0: &[f64], n_paths: usize) -> Result<Vec<f64>> {
    if x0.len() != domain.dimension() {
        return Err(Error::invalid(format!(
            "start point has dimension {}, domain has {}",
            x0.len(),
            domain.dimension()
        )));
    }
    if n_paths == 0 {
        return Err(Error::invalid("need at least one path"));
    }
    if !x0.iter().all(|v| v.is_finite()) || !domain.contains(x0) {
        return Err(Error::invalid(format!(
            "start point {x0:?} is outside the closed domain"
        )));
    }
    Ok(domain.project(x0))
}

fn aggregate(stats: &[PathStats], n_steps: usize) -> (InvariantReport, DiagnosticsReport) {
    let n = stats.len() as f64;
    let inv = InvariantReport {
        reflection_steps: stats.iter().map(|s| s.reflections).sum(),
        off_boundary_reflections: stats.iter().map(|s| s.off_boundary).sum(),
        max_normal_angle: stats.iter().map(|s| s.max_angle).fold(0.0, f64::max),
    };
    let diag = DiagnosticsReport {
        min_monotonicity: stats
            .iter()
            .map(|s| s.min_monotonicity)
            .fold(f64::INFINITY, f64::min),
        sup_moment: stats.iter().map(|s| s.sup_x2).sum::<f64>() / n,
        mean_k_var: stats.iter().map(|s| s.k_var).sum::<f64>() / n,
        reflection_fraction: inv.reflection_steps as f64 / (n * n_steps as f64),
    };
    (inv, diag)
}

#[allow(clippy::too_many_arguments)]
fn simulate_full(
    coef: &dyn StepCoefficients,
    domain: &DomainSpec,
    grid: &TimeGrid,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
    epsilon: EpsilonTag,
    keep_increments: bool,
) -> Result<PathEnsemble> {
    let x0 = check_start(domain, x0, n_paths)?;
    let m = x0.len();
    let n = grid.n_steps;
    let mut x = vec![0.0; n_paths * (n + 1) * m];
    let mut dk = vec![0.0; n_paths * n * m];
    let mut k_var = vec![0.0; n_paths * (n + 1)];
    let mut db = if keep_increments {
        vec![0.0; n_paths * n * m]
    } else {
        Vec::new()
    };
    let x_star = domain.interior_point();
    let mut views: Vec<PathView> = x
        .chunks_mut((n + 1) * m)
        .zip(dk.chunks_mut(n * m))
        .zip(k_var.chunks_mut(n + 1))
        .map(|((x, dk), kv)| PathView {
            x: Some(x),
            dk: Some(dk),
            k_var: Some(kv),
            db: None,
        })
        .collect();
    if keep_increments {
        for (v, chunk) in views.iter_mut().zip(db.chunks_mut(n * m)) {
            v.db = Some(chunk);
        }
    }
    let stats = views
        .into_par_iter()
        .enumerate()
        .map(|(p, view)| {
            run_path(
                coef,
                domain,
                grid,
                &x0,
                StreamKey::brownian(seed, p as u64),
                &x_star,
                view,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let (invariants, _) = aggregate(&stats, n);
    Ok(PathEnsemble {
        grid: *grid,
        m,
        n_paths,
        epsilon,
        seed,
        scheme_tag: SCHEME_TAG,
        x,
        dk,
        k_var,
        db,
        invariants,
    })
}

#[allow(clippy::too_many_arguments)]
fn simulate_summary(
    coef: &dyn StepCoefficients,
    domain: &DomainSpec,
    grid: &TimeGrid,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
    epsilon: EpsilonTag,
) -> Result<TerminalSummary> {
    let x0 = check_start(domain, x0, n_paths)?;
    let x_star = domain.interior_point();
    let stats = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            run_path(
                coef,
                domain,
                grid,
                &x0,
                StreamKey::brownian(seed, p as u64),
                &x_star,
                PathView::default(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let (invariants, diagnostics) = aggregate(&stats, grid.n_steps);
    Ok(TerminalSummary {
        grid: *grid,
        m: x0.len(),
        n_paths,
        epsilon,
        seed,
        x_terminal: stats
            .iter()
            .flat_map(|s| s.terminal.iter().copied())
            .collect(),
        k_var_terminal: stats.iter().map(|s| s.k_var).collect(),
        invariants,
        diagnostics,
    })
}

fn check_model(domain: &DomainSpec, c: &CoefficientSet, epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if c.m != domain.dimension() {
        return Err(Error::invalid("model and domain dimensions differ"));
    }
    Ok(())
}

/// Simulates the fast-time system with coefficients evaluated at `t_i / epsilon`.
pub fn simulate(
    domain: &DomainSpec,
    c: &CoefficientSet,
    epsilon: f64,
    grid: &TimeGrid,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_with(domain, c, epsilon, grid, x0, n_paths, seed, true)
}

/// As [`simulate`], optionally dropping the Brownian increments to save memory.
#[allow(clippy::too_many_arguments)]
pub fn simulate_with(
    domain: &DomainSpec,
    c: &CoefficientSet,
    epsilon: f64,
    grid: &TimeGrid,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
    keep_increments: bool,
) -> Result<PathEnsemble> {
    check_model(domain, c, epsilon)?;
    let coef = FastTime {
        c,
        inv_eps: 1.0 / epsilon,
    };
    simulate_full(
        &coef,
        domain,
        grid,
        x0,
        n_paths,
        seed,
        EpsilonTag::Epsilon(epsilon),
        keep_increments,
    )
}

pub fn simulate_averaged(
    domain: &DomainSpec,
    avg: &AveragedCoefficients,
    grid: &TimeGrid,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    simulate_averaged_with(domain, avg, grid, x0, n_paths, seed, true)
}

pub fn simulate_averaged_with(
    domain: &DomainSpec,
    avg: &AveragedCoefficients,
    grid: &TimeGrid,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
    keep_increments: bool,
) -> Result<PathEnsemble> {
    if avg.state_dim() != domain.dimension() {
        return Err(Error::invalid("model and domain dimensions differ"));
    }
    simulate_full(
        avg,
        domain,
        grid,
        x0,
        n_paths,
        seed,
        EpsilonTag::Averaged,
        keep_increments,
    )
}

/// Runs the fast-time system keeping only terminal values and statistics.
pub fn simulate_terminal(
    domain: &DomainSpec,
    c: &CoefficientSet,
    epsilon: f64,
    grid: &TimeGrid,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<TerminalSummary> {
    check_model(domain, c, epsilon)?;
    let coef = FastTime {
        c,
        inv_eps: 1.0 / epsilon,
    };
    simulate_summary(
        &coef,
        domain,
        grid,
        x0,
        n_paths,
        seed,
        EpsilonTag::Epsilon(epsilon),
    )
}

pub fn simulate_averaged_terminal(
    domain: &DomainSpec,
    avg: &AveragedCoefficients,
    grid: &TimeGrid,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<TerminalSummary> {
    if avg.state_dim() != domain.dimension() {
        return Err(Error::invalid("model and domain dimensions differ"));
    }
    simulate_summary(avg, domain, grid, x0, n_paths, seed, EpsilonTag::Averaged)
}

type Functional = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Scalar functional of the terminal state.
#[derive(Clone)]
pub struct TestFunction {
    pub name: String,
    f: Functional,
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "TestFunction({})", self.name)
    }
}

impl TestFunction {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// Built-ins: `x` (first coordinate), `x2` (squared norm), `cos`
    /// (cosine of the first coordinate) and `one`.
    pub fn builtin(name: &str) -> Result<Self> {
        Ok(match name {
            "x" => Self::new("x", |x| x[0]),
            "x2" => Self::new("x2", |x| x.iter().map(|v| v * v).sum()),
            "cos" => Self::new("cos", |x| x[0].cos()),
            "one" => Self::new("one", |_| 1.0),
            other => {
                return Err(Error::Validation(format!(
                    "unknown test function '{other}' (known: x, x2, cos, one)"
                )))
            }
        })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakGap {
    pub name: String,
    pub mean_epsilon: f64,
    pub mean_averaged: f64,
    /// `mean_epsilon - mean_averaged`.
    pub gap: f64,
    pub stderr: f64,
}

/// Gap between terminal functionals of two runs sharing a seed.
pub fn terminal_gaps(
    eps: &TerminalSummary,
    avg: &TerminalSummary,
    fs: &[TestFunction],
) -> Vec<WeakGap> {
    fs.iter()
        .map(|f| {
            let (me, se) = scalar_mean_stderr((0..eps.n_paths).map(|p| f.eval(eps.terminal(p))));
            let (ma, sa) = scalar_mean_stderr((0..avg.n_paths).map(|p| f.eval(avg.terminal(p))));
            WeakGap {
                name: f.name.clone(),
                mean_epsilon: me,
                mean_averaged: ma,
                gap: me - ma,
                stderr: pooled_stderr(se, sa),
            }
        })
        .collect()
}

/// `E[F(X^eps_T)] - E[F(X̄_T)]` for each test function, with common seeds.
#[allow(clippy::too_many_arguments)]
pub fn weak_gap(
    domain: &DomainSpec,
    c: &CoefficientSet,
    avg: &AveragedCoefficients,
    epsilon: f64,
    grid: &TimeGrid,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
    fs: &[TestFunction],
) -> Result<Vec<WeakGap>> {
    let e = simulate_terminal(domain, c, epsilon, grid, x0, n_paths, seed)?;
    let a = simulate_averaged_terminal(domain, avg, grid, x0, n_paths, seed)?;
    Ok(terminal_gaps(&e, &a, fs))
}

/// Monotonicity, moment and reflection diagnostics of an ensemble against an
/// interior reference point (the domain's own one when `x_star` is `None`).
pub fn path_diagnostics(
    ens: &PathEnsemble,
    domain: &DomainSpec,
    x_star: Option<&[f64]>,
) -> DiagnosticsReport {
    let x_star = x_star
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| domain.interior_point());
    let n = ens.n_steps();
    let per_path: Vec<(f64, f64, usize)> = (0..ens.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut min_mono = f64::INFINITY;
            let mut sup = 0.0f64;
            let mut refl = 0;
            for i in 0..=n {
                sup = sup.max(ens.x(p, i).iter().map(|v| v * v).sum());
            }
            for i in 0..n {
                let dk = ens.dk(p, i);
                let x = ens.x(p, i + 1);
                let mono: f64 = -x
                    .iter()
                    .zip(&x_star)
                    .zip(dk)
                    .map(|((a, s), k)| (a - s) * k)
                    .sum::<f64>();
                min_mono = min_mono.min(mono);
                if dk.iter().any(|v| *v != 0.0) {
                    refl += 1;
                }
            }
            (min_mono, sup, refl)
        })
        .collect();
    let np = ens.n_paths as f64;
    DiagnosticsReport {
        min_monotonicity: per_path.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        sup_moment: per_path.iter().map(|r| r.1).sum::<f64>() / np,
        mean_k_var: (0..ens.n_paths).map(|p| ens.k_var(p, n)).sum::<f64>() / np,
        reflection_fraction: per_path.iter().map(|r| r.2).sum::<usize>() as f64 / (np * n as f64),
    }
}
