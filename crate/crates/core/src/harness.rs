//! End-to-end experiments: epsilon sweeps of initial values and terminal
//! functionals, and value grids `u^eps(t, x)` against `u(t, x)`.
//!
//! All runs in one experiment share the configured seed, so the fast-time and
//! averaged systems are driven by the same Brownian increments.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backward::{
    martingale_check, norm_diff, pooled, solve, DriverMode, MartingaleCheck, MomentDiagnostics,
    RegressionConfig,
};
use crate::coefficients::{
    audit_assumptions, AuditConfig, AveragedCoefficients, CoefficientSet, ModelConfig,
    ModelRegistry,
};
use crate::domain::{DomainConfig, DomainSpec};
use crate::forward::{
    path_diagnostics, simulate_averaged_with, simulate_with, DiagnosticsReport, InvariantReport,
    PathEnsemble, StepRule, TestFunction, TimeGrid, WeakGap,
};
use crate::potential::{ConvexPotential, PotentialConfig};
use crate::rng::{pooled_stderr, scalar_mean_stderr};
use crate::{Error, Result};

const AUDIT_SAMPLES: usize = 500;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub json: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub domain: DomainConfig,
    pub model: ModelConfig,
    #[serde(default = "zero_potential")]
    pub phi: PotentialConfig,
    #[serde(default = "zero_potential")]
    pub psi: PotentialConfig,
    #[serde(default)]
    pub t: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub x_grid: Vec<Vec<f64>>,
    #[serde(default)]
    pub t_grid: Vec<f64>,
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub step_rule: StepRule,
    pub n_paths: usize,
    #[serde(default)]
    pub regression: RegressionConfig,
    pub seed: u64,
    #[serde(default = "default_test_functions")]
    pub test_functions: Vec<String>,
    #[serde(default)]
    pub outputs: OutputPaths,
}

fn zero_potential() -> PotentialConfig {
    PotentialConfig::Zero
}

fn default_test_functions() -> Vec<String> {
    vec!["x".into(), "x2".into(), "cos".into()]
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&bytes);
        let mut s = String::with_capacity(64);
        for b in digest.iter() {
            let _ = write!(s, "{b:02x}");
        }
        Ok(s)
    }

    fn check_scalars(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Validation("epsilons must not be empty".into()));
        }
        if self.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Validation("epsilons must be positive".into()));
        }
        if self.epsilons.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::Validation(
                "epsilons must be strictly decreasing".into(),
            ));
        }
        if !(self.t >= 0.0 && self.t_end > self.t && self.t_end.is_finite()) {
            return Err(Error::Validation(format!(
                "need T > t >= 0, got t = {}, T = {}",
                self.t, self.t_end
            )));
        }
        if self.t_grid.iter().any(|s| !(*s >= 0.0 && *s < self.t_end)) {
            return Err(Error::Validation("grid times must lie in [0, T)".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::Validation("n_paths must be positive".into()));
        }
        self.regression.validate()?;
        for name in &self.test_functions {
            TestFunction::builtin(name)?;
        }
        Ok(())
    }
}

/// Built objects of a validated config.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub domain: DomainSpec,
    pub model: CoefficientSet,
    pub averaged: AveragedCoefficients,
    pub phi: ConvexPotential,
    pub psi: ConvexPotential,
    pub test_functions: Vec<TestFunction>,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig, registry: &ModelRegistry) -> Result<Self> {
        config.check_scalars()?;
        let domain = config.domain.build()?;
        let model = registry.build(&config.model)?;
        if model.m != domain.dimension() {
            return Err(Error::Validation(format!(
                "model '{}' has state dimension {}, domain has {}",
                model.name,
                model.m,
                domain.dimension()
            )));
        }
        let inside = |x: &[f64]| {
            x.len() == domain.dimension() && x.iter().all(|v| v.is_finite()) && domain.contains(x)
        };
        if let Some(x0) = &config.x0 {
            if !inside(x0) {
                return Err(Error::Validation(format!(
                    "x0 = {x0:?} is not in the closed domain"
                )));
            }
        }
        if let Some(bad) = config.x_grid.iter().find(|x| !inside(x)) {
            return Err(Error::Validation(format!(
                "grid point {bad:?} is not in the closed domain"
            )));
        }
        let phi = config.phi.build(model.d)?;
        let psi = config.psi.build(model.d)?;
        let averaged = AveragedCoefficients::new(&model)?;
        let test_functions = config
            .test_functions
            .iter()
            .map(|n| TestFunction::builtin(n))
            .collect::<Result<_>>()?;
        Ok(Self {
            config: config.clone(),
            domain,
            model,
            averaged,
            phi,
            psi,
            test_functions,
        })
    }

    fn grid(&self, t: f64, epsilon: f64) -> Result<TimeGrid> {
        self.config
            .step_rule
            .grid(t, self.config.t_end, epsilon, self.model.period)
    }

    fn audit_warnings(&self) -> Result<Vec<String>> {
        let report = audit_assumptions(
            &self.model,
            &self.domain,
            &self.phi,
            &self.psi,
            &AuditConfig::new(AUDIT_SAMPLES, self.config.seed),
        )?;
        Ok(report
            .violations()
            .iter()
            .map(|e| format!("{} (estimate {})", e.name, e.estimate))
            .collect())
    }

    /// Forward and backward run of one system from `(t, x)`.
    fn run_cell(&self, grid: &TimeGrid, x: &[f64], epsilon: Option<f64>) -> Result<CellOutcome> {
        let (n_paths, seed) = (self.config.n_paths, self.config.seed);
        let ens = match epsilon {
            Some(eps) => simulate_with(
                &self.domain,
                &self.model,
                eps,
                grid,
                x,
                n_paths,
                seed,
                false,
            )?,
            None => {
                simulate_averaged_with(&self.domain, &self.averaged, grid, x, n_paths, seed, false)?
            }
        };
        let functionals = functional_stats(&ens, &self.test_functions);
        let diagnostics = path_diagnostics(&ens, &self.domain, None);
        let mode = match epsilon {
            Some(_) => DriverMode::FastTime,
            None => DriverMode::Averaged(&self.averaged),
        };
        let sol = solve(
            &ens,
            &self.domain,
            &self.model,
            &self.phi,
            &self.psi,
            &self.config.regression,
            mode,
            false,
        )?;
        Ok(CellOutcome {
            y_start: sol.y_start.clone(),
            y_start_stderr: sol.y_start_stderr.clone(),
            functionals,
            diagnostics,
            invariants: ens.invariants.clone(),
            martingale: martingale_check(&sol),
            moments: sol.moments.clone(),
            split: sol.split,
        })
    }
}

fn functional_stats(ens: &PathEnsemble, fs: &[TestFunction]) -> Vec<(f64, f64)> {
    fs.iter()
        .map(|f| scalar_mean_stderr((0..ens.n_paths).map(|p| f.eval(ens.terminal(p)))))
        .collect()
}

#[derive(Clone, Debug)]
struct CellOutcome {
    y_start: Vec<f64>,
    y_start_stderr: Vec<f64>,
    functionals: Vec<(f64, f64)>,
    diagnostics: DiagnosticsReport,
    invariants: InvariantReport,
    martingale: MartingaleCheck,
    moments: MomentDiagnostics,
    split: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemDiagnostics {
    pub forward: DiagnosticsReport,
    pub invariants: InvariantReport,
    pub martingale: MartingaleCheck,
    pub moments: MomentDiagnostics,
    pub split: bool,
}

impl From<&CellOutcome> for SystemDiagnostics {
    fn from(c: &CellOutcome) -> Self {
        Self {
            forward: c.diagnostics.clone(),
            invariants: c.invariants.clone(),
            martingale: c.martingale.clone(),
            moments: c.moments.clone(),
            split: c.split,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowValues {
    pub y_epsilon: Vec<f64>,
    pub y_averaged: Vec<f64>,
    pub error: f64,
    pub stderr: f64,
    pub gaps: Vec<WeakGap>,
    pub epsilon_diagnostics: SystemDiagnostics,
    pub averaged_diagnostics: SystemDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub epsilon: f64,
    pub n_steps: usize,
    /// `None` when the row failed; see `failure`.
    pub values: Option<RowValues>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Seconds since the Unix epoch; the only run-dependent field.
    pub timestamp: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub metadata: ReportMetadata,
    pub audit_warnings: Vec<String>,
    pub test_functions: Vec<String>,
    /// Ordered by epsilon, largest first.
    pub rows: Vec<ReportRow>,
}

fn metadata(cfg: &ExperimentConfig) -> Result<ReportMetadata> {
    Ok(ReportMetadata {
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    })
}

/// Failures that belong to a row rather than to the whole experiment.
fn row_local(e: &Error) -> bool {
    matches!(
        e,
        Error::NumericalFailure { .. }
            | Error::NonAveraging { .. }
            | Error::EllipticityViolation { .. }
    )
}

fn csv_escape(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

impl ConvergenceReport {
    /// One line per epsilon; numbers use shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let d = self
            .rows
            .iter()
            .find_map(|r| r.values.as_ref().map(|v| v.y_epsilon.len()))
            .unwrap_or(1);
        let mut out = String::from("epsilon,n_steps");
        for k in 0..d {
            let _ = write!(out, ",y_epsilon_{k},y_averaged_{k}");
        }
        out.push_str(",error,stderr");
        for name in &self.test_functions {
            let _ = write!(out, ",gap_{name},gap_{name}_stderr");
        }
        out.push_str(",status\n");
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.epsilon, r.n_steps);
            match &r.values {
                Some(v) => {
                    for k in 0..d {
                        let _ = write!(out, ",{},{}", v.y_epsilon[k], v.y_averaged[k]);
                    }
                    let _ = write!(out, ",{},{}", v.error, v.stderr);
                    for g in &v.gaps {
                        let _ = write!(out, ",{},{}", g.gap, g.stderr);
                    }
                    out.push_str(",ok\n");
                }
                None => {
                    out.push_str(&",".repeat(2 * d + 2 + 2 * self.test_functions.len()));
                    let _ = writeln!(
                        out,
                        ",{}",
                        csv_escape(&format!("failed: {}", r.failure.as_deref().unwrap_or("")))
                    );
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn row(&self, epsilon: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.epsilon == epsilon)
    }
}

fn write_outputs(
    outputs: &OutputPaths,
    csv: impl FnOnce() -> String,
    json: impl FnOnce() -> Result<String>,
) -> Result<()> {
    if let Some(p) = &outputs.csv {
        fs::write(p, csv())?;
    }
    if let Some(p) = &outputs.json {
        fs::write(p, json()?)?;
    }
    Ok(())
}

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    run_convergence_with(cfg, &ModelRegistry::default())
}

/// Epsilon sweep from `(t, x0)`: initial values and terminal functionals of
/// the fast-time system against the averaged one.
pub fn run_convergence_with(
    cfg: &ExperimentConfig,
    registry: &ModelRegistry,
) -> Result<ConvergenceReport> {
    let exp = Experiment::new(cfg, registry)?;
    let x0 = cfg
        .x0
        .clone()
        .ok_or_else(|| Error::Validation("the convergence sweep needs x0".into()))?;
    let audit_warnings = exp.audit_warnings()?;
    let mut averaged: Vec<(usize, std::result::Result<CellOutcome, String>)> = Vec::new();
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        let grid = exp.grid(cfg.t, eps)?;
        let row = |values, failure| ReportRow {
            epsilon: eps,
            n_steps: grid.n_steps,
            values,
            failure,
        };
        let fast = match exp.run_cell(&grid, &x0, Some(eps)) {
            Ok(c) => c,
            Err(e) if row_local(&e) => {
                rows.push(row(None, Some(e.to_string())));
                continue;
            }
            Err(e) => return Err(e),
        };
        let slow = match averaged.iter().find(|(n, _)| *n == grid.n_steps) {
            Some((_, r)) => r.clone(),
            None => {
                let r = match exp.run_cell(&grid, &x0, None) {
                    Ok(c) => Ok(c),
                    Err(e) if row_local(&e) => Err(e.to_string()),
                    Err(e) => return Err(e),
                };
                averaged.push((grid.n_steps, r.clone()));
                r
            }
        };
        let slow = match slow {
            Ok(s) => s,
            Err(msg) => {
                rows.push(row(None, Some(format!("averaged system: {msg}"))));
                continue;
            }
        };
        let gaps = exp
            .test_functions
            .iter()
            .zip(fast.functionals.iter().zip(&slow.functionals))
            .map(|(f, (&(me, se), &(ma, sa)))| WeakGap {
                name: f.name.clone(),
                mean_epsilon: me,
                mean_averaged: ma,
                gap: me - ma,
                stderr: pooled_stderr(se, sa),
            })
            .collect();
        rows.push(row(
            Some(RowValues {
                error: norm_diff(&fast.y_start, &slow.y_start),
                stderr: pooled(&fast.y_start_stderr, &slow.y_start_stderr),
                y_epsilon: fast.y_start.clone(),
                y_averaged: slow.y_start.clone(),
                gaps,
                epsilon_diagnostics: (&fast).into(),
                averaged_diagnostics: (&slow).into(),
            }),
            None,
        ));
    }
    rows.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    let report = ConvergenceReport {
        metadata: metadata(cfg)?,
        audit_warnings,
        test_functions: cfg.test_functions.clone(),
        rows,
    };
    write_outputs(&cfg.outputs, || report.to_csv(), || report.to_json())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub epsilon: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub u_epsilon: Vec<f64>,
    pub u_averaged: Vec<f64>,
    pub gap: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupGap {
    pub epsilon: f64,
    pub sup_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeGridReport {
    pub metadata: ReportMetadata,
    pub cells: Vec<GridCell>,
    pub sup_gaps: Vec<SupGap>,
}

impl PdeGridReport {
    /// One line per grid cell.
    pub fn to_csv(&self) -> String {
        let m = self.cells.first().map_or(1, |c| c.x.len());
        let d = self.cells.first().map_or(1, |c| c.u_epsilon.len());
        let mut out = String::from("epsilon,t");
        for k in 0..m {
            let _ = write!(out, ",x_{k}");
        }
        for k in 0..d {
            let _ = write!(out, ",u_epsilon_{k},u_averaged_{k}");
        }
        out.push_str(",gap,stderr\n");
        for c in &self.cells {
            let _ = write!(out, "{},{}", c.epsilon, c.t);
            for v in &c.x {
                let _ = write!(out, ",{v}");
            }
            for k in 0..d {
                let _ = write!(out, ",{},{}", c.u_epsilon[k], c.u_averaged[k]);
            }
            let _ = writeln!(out, ",{},{}", c.gap, c.stderr);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn run_pde_grid(cfg: &ExperimentConfig) -> Result<PdeGridReport> {
    run_pde_grid_with(cfg, &ModelRegistry::default())
}

/// `(n_steps, t bits, x index)` of an averaged-system cell.
type CellKey = (usize, u64, usize);

/// `u^eps(t, x)` and `u(t, x)` on the product of `t_grid` and `x_grid`
/// (falling back to `t` and `x0`), with the sup-norm gap per epsilon.
pub fn run_pde_grid_with(
    cfg: &ExperimentConfig,
    registry: &ModelRegistry,
) -> Result<PdeGridReport> {
    let exp = Experiment::new(cfg, registry)?;
    let ts = if cfg.t_grid.is_empty() {
        vec![cfg.t]
    } else {
        cfg.t_grid.clone()
    };
    let xs = if cfg.x_grid.is_empty() {
        vec![cfg
            .x0
            .clone()
            .ok_or_else(|| Error::Validation("the value grid needs x_grid or x0".into()))?]
    } else {
        cfg.x_grid.clone()
    };
    let mut averaged: HashMap<CellKey, (Vec<f64>, Vec<f64>)> = HashMap::new();
    let mut cells = Vec::new();
    let mut sup_gaps = Vec::new();
    for &eps in &cfg.epsilons {
        let mut sup = 0.0f64;
        for &t in &ts {
            let grid = exp.grid(t, eps)?;
            for (xi, x) in xs.iter().enumerate() {
                let fast = exp.run_cell(&grid, x, Some(eps))?;
                let key = (grid.n_steps, t.to_bits(), xi);
                let (ua, sa) = match averaged.get(&key) {
                    Some(v) => v.clone(),
                    None => {
                        let c = exp.run_cell(&grid, x, None)?;
                        let v = (c.y_start, c.y_start_stderr);
                        averaged.insert(key, v.clone());
                        v
                    }
                };
                let gap = norm_diff(&fast.y_start, &ua);
                sup = sup.max(gap);
                cells.push(GridCell {
                    epsilon: eps,
                    t,
                    x: x.clone(),
                    stderr: pooled(&fast.y_start_stderr, &sa),
                    u_epsilon: fast.y_start,
                    u_averaged: ua,
                    gap,
                });
            }
        }
        sup_gaps.push(SupGap {
            epsilon: eps,
            sup_gap: sup,
        });
    }
    let report = PdeGridReport {
        metadata: metadata(cfg)?,
        cells,
        sup_gaps,
    };
    write_outputs(&cfg.outputs, || report.to_csv(), || report.to_json())?;
    Ok(report)
}

/// The one-dimensional periodic benchmark on `[-1, 1]` used by the examples
/// and the acceptance run.
pub fn benchmark_config(n_paths: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        domain: DomainConfig::Interval { lo: -1.0, hi: 1.0 },
        model: ModelConfig::named("periodic_linear_1d"),
        phi: PotentialConfig::BoxIndicator {
            lo: Some(0.0),
            hi: None,
        },
        psi: PotentialConfig::PositivePart { c: 1.0 },
        t: 0.0,
        t_end: 1.0,
        x0: Some(vec![0.5]),
        x_grid: Vec::new(),
        t_grid: Vec::new(),
        epsilons: vec![1.0, 0.1, 0.01],
        step_rule: StepRule::default(),
        n_paths,
        regression: RegressionConfig::default(),
        seed,
        test_functions: default_test_functions(),
        outputs: OutputPaths::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(model: &str) -> ExperimentConfig {
        let mut c = benchmark_config(200, 7);
        c.model = ModelConfig::named(model);
        c.t_end = 0.2;
        c.epsilons = vec![1.0, 0.1];
        c.step_rule.max_dt = 0.01;
        c
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = benchmark_config(100, 3);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
        let minimal = r#"{"domain":{"kind":"interval","lo":-1,"hi":1},"model":"constant",
            "T":1,"x0":[0],"epsilons":[1],"n_paths":10,"seed":1}"#;
        let m = ExperimentConfig::from_json(minimal).unwrap();
        assert_eq!(m.phi, PotentialConfig::Zero);
        assert_eq!(m.step_rule, StepRule::default());
        assert_eq!(m.hash().unwrap().len(), 64);
    }

    #[test]
    fn validation_errors() {
        let reg = ModelRegistry::default();
        let mut c = small("constant");
        c.epsilons.clear();
        assert!(matches!(run_convergence(&c), Err(Error::Validation(_))));
        c.epsilons = vec![0.1, 1.0];
        assert!(matches!(run_convergence(&c), Err(Error::Validation(_))));
        let mut c = small("constant");
        c.x0 = Some(vec![2.0]);
        assert!(matches!(
            Experiment::new(&c, &reg),
            Err(Error::Validation(_))
        ));
        let mut c = small("constant");
        c.t = 0.5;
        assert!(matches!(
            Experiment::new(&c, &reg),
            Err(Error::Validation(_))
        ));
        let mut c = small("nope");
        c.model = ModelConfig::named("nope");
        assert!(matches!(
            Experiment::new(&c, &reg),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn degenerate_sweep_has_zero_columns() {
        let r = run_convergence(&small("constant")).unwrap();
        assert_eq!(r.rows.len(), 2);
        for row in &r.rows {
            let v = row.values.as_ref().unwrap();
            assert_eq!(v.error, 0.0);
            assert!(v.stderr > 0.0);
            assert!(v.gaps.iter().all(|g| g.gap == 0.0));
        }
        assert!(r.rows[0].epsilon > r.rows[1].epsilon);
    }

    #[test]
    fn csv_is_reproducible_and_json_parses() {
        let c = small("periodic_linear_1d");
        let a = run_convergence(&c).unwrap();
        let b = run_convergence(&c).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.metadata.config_hash, b.metadata.config_hash);
        let csv = a.to_csv();
        assert!(csv.starts_with("epsilon,n_steps,y_epsilon_0,y_averaged_0,error,stderr,gap_x,"));
        assert_eq!(csv.lines().count(), 3);
        let back: ConvergenceReport = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        assert_eq!(back.rows.len(), 2);
    }

    #[test]
    fn singleton_grid_matches_sweep() {
        let c = small("periodic_linear_1d");
        let sweep = run_convergence(&c).unwrap();
        let grid = run_pde_grid(&c).unwrap();
        for (row, cell) in sweep.rows.iter().zip(&grid.cells) {
            let v = row.values.as_ref().unwrap();
            assert_eq!(v.y_epsilon, cell.u_epsilon);
            assert_eq!(v.y_averaged, cell.u_averaged);
        }
    }

    #[test]
    fn constant_terminal_gives_constant_grid() {
        let mut c = small("constant");
        c.model = ModelConfig {
            name: "constant".into(),
            params: serde_json::json!({"terminal_offset": 1.0, "terminal_slope": 0.0}),
        };
        c.phi = PotentialConfig::Zero;
        c.psi = PotentialConfig::Zero;
        c.x_grid = vec![vec![-1.0], vec![0.0], vec![0.7]];
        c.t_grid = vec![0.0, 0.1];
        let mut reg = ModelRegistry::default();
        reg.register("flat", |_| {
            CoefficientSet::new("flat", 1, 1)?
                .with_terminal(|_, o| o[0] = 1.0)
                .with_period(1.0)
        });
        c.model = ModelConfig::named("flat");
        let r = run_pde_grid_with(&c, &reg).unwrap();
        assert_eq!(r.cells.len(), 2 * 2 * 3);
        for cell in &r.cells {
            assert!(
                (cell.u_epsilon[0] - 1.0).abs() < 1e-12 && (cell.u_averaged[0] - 1.0).abs() < 1e-12
            );
        }
        assert!(r.to_csv().lines().count() == 13);
    }

    #[test]
    fn outputs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small("constant");
        c.outputs.csv = Some(dir.path().join("r.csv"));
        c.outputs.json = Some(dir.path().join("r.json"));
        let r = run_convergence(&c).unwrap();
        assert_eq!(
            std::fs::read_to_string(dir.path().join("r.csv")).unwrap(),
            r.to_csv()
        );
        assert!(std::fs::metadata(dir.path().join("r.json")).unwrap().len() > 0);
    }
}
