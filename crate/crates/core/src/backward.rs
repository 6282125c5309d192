//! Least-squares Monte Carlo solver for the backward variational inequality.
//!
//! Going backward from `Y_n = Phi(X_T)`, each step
//!
//! 1. regresses `Y_{i+1}` on a polynomial basis in `X_i` to get `C_i`,
//! 2. forms `v_i = C_i + f(., X_i, C_i) dt + g(t_i, X_{i+1}, C_i) d|K|_i`,
//! 3. applies the composite resolvent with weights `dt` and `d|K|_i`,
//!    giving `Y_i + dU_i + dV_i = v_i`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{AveragedCoefficients, CoefficientSet};
use crate::domain::DomainSpec;
use crate::forward::{
    simulate_averaged_with, simulate_with, EpsilonTag, PathEnsemble, StepRule, TimeGrid,
};
use crate::potential::{composite_resolvent_into, ConvexPotential};
use crate::rng::{pooled_stderr, scalar_mean_stderr};
use crate::{Error, Result};

pub const MAX_DEGREE: usize = 6;
/// Martingale statistic above which a run is flagged.
pub const MARTINGALE_FLAG: f64 = 4.0;
const CHUNK: usize = 4096;
const MAX_RIDGE: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "default_true")]
    pub include_boundary_indicator: bool,
}

fn default_degree() -> usize {
    2
}

fn default_ridge() -> f64 {
    1e-10
}

fn default_true() -> bool {
    true
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            degree: default_degree(),
            ridge: default_ridge(),
            include_boundary_indicator: true,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.degree > MAX_DEGREE {
            return Err(Error::Validation(format!(
                "regression degree {} exceeds {MAX_DEGREE}",
                self.degree
            )));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Validation(format!(
                "ridge must be nonnegative, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// Which driver the backward sweep uses.
#[derive(Clone, Copy, Debug)]
pub enum DriverMode<'a> {
    /// `f(t_i / eps, ., .)` with `eps` taken from the ensemble.
    FastTime,
    /// `f̄(., .)`.
    Averaged(&'a AveragedCoefficients),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentDiagnostics {
    pub sup_y2: f64,
    /// `E[sum |dU_i|^2 / dt]`.
    pub u_energy: f64,
    /// `E[sum |dV_i|^2 / d|K|_i]` over reflecting steps.
    pub v_energy: f64,
}

/// Backward values along an ensemble.
///
/// Per-step arrays are step-major: `y[(i * n_paths + p) * d + k]`.
#[derive(Clone, Debug)]
pub struct BackwardSolution {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub d: usize,
    pub m: usize,
    pub y: Vec<f64>,
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
    /// `d x m` blocks per step and path when requested.
    pub z: Option<Vec<f64>>,
    pub y_start: Vec<f64>,
    /// Standard error of the realised pathwise values
    /// `Y_0 + sum_i (Y_{i+1} - C_i)`, whose mean is `y_start`.
    pub y_start_stderr: Vec<f64>,
    /// Per step, max over components of `|mean| / stderr` of `Y_{i+1} - C_i`.
    pub martingale_stats: Vec<f64>,
    pub split: bool,
    pub moments: MomentDiagnostics,
}

impl BackwardSolution {
    pub fn y(&self, p: usize, i: usize) -> &[f64] {
        let o = (i * self.n_paths + p) * self.d;
        &self.y[o..o + self.d]
    }

    pub fn du(&self, p: usize, i: usize) -> &[f64] {
        let o = (i * self.n_paths + p) * self.d;
        &self.du[o..o + self.d]
    }

    pub fn dv(&self, p: usize, i: usize) -> &[f64] {
        let o = (i * self.n_paths + p) * self.d;
        &self.dv[o..o + self.d]
    }

    pub fn z(&self, p: usize, i: usize) -> Option<&[f64]> {
        let w = self.d * self.m;
        self.z
            .as_ref()
            .map(|z| &z[(i * self.n_paths + p) * w..(i * self.n_paths + p + 1) * w])
    }

    /// `sum_{j < i} dU_j` along path `p`.
    pub fn u_cum(&self, p: usize, i: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.d];
        for j in 0..i {
            for (a, v) in acc.iter_mut().zip(self.du(p, j)) {
                *a += v;
            }
        }
        acc
    }

    /// `sum_{j < i} dV_j` along path `p`.
    pub fn v_cum(&self, p: usize, i: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.d];
        for j in 0..i {
            for (a, v) in acc.iter_mut().zip(self.dv(p, j)) {
                *a += v;
            }
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCheck {
    pub statistic: f64,
    pub worst_step: usize,
    pub flagged: bool,
}

/// Largest standardised mean of the one-step martingale increments.
pub fn martingale_check(sol: &BackwardSolution) -> MartingaleCheck {
    let (worst_step, statistic) = sol
        .martingale_stats
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
    MartingaleCheck {
        statistic,
        worst_step,
        flagged: statistic > MARTINGALE_FLAG,
    }
}

fn monomials(m: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(m: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            if cur.iter().any(|&e| e > 0) {
                out.push(cur.clone());
            }
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(m, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(m, degree, &mut Vec::new(), &mut out);
    out.sort_by_key(|e| e.iter().sum::<usize>());
    out
}

/// Deterministic sum of per-chunk partial results.
fn chunked_sum(n: usize, width: usize, f: impl Fn(usize, &mut [f64]) + Sync) -> Vec<f64> {
    let parts: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            for p in c * CHUNK..((c + 1) * CHUNK).min(n) {
                f(p, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; width];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

/// Cross-sectional least squares with an intercept: returns fitted values
/// (`n x q`) of the targets given the raw features (`n x p_raw`).
fn fit(
    features: &[f64],
    p_raw: usize,
    targets: &[f64],
    q: usize,
    n: usize,
    ridge: f64,
    step: usize,
) -> Result<Vec<f64>> {
    let nf = n as f64;
    let t_mean: Vec<f64> = chunked_sum(n, q, |p, acc| {
        for k in 0..q {
            acc[k] += targets[p * q + k];
        }
    })
    .into_iter()
    .map(|s| s / nf)
    .collect();

    // keep only columns that vary across paths
    let cols: Vec<usize> = (0..p_raw)
        .filter(|&j| {
            let first = features[j];
            (1..n).any(|p| features[p * p_raw + j] != first)
        })
        .collect();
    let pc = cols.len();
    let mut fitted = vec![0.0; n * q];
    if pc == 0 {
        for p in 0..n {
            fitted[p * q..(p + 1) * q].copy_from_slice(&t_mean);
        }
        return Ok(fitted);
    }
    let f_mean: Vec<f64> = chunked_sum(n, pc, |p, acc| {
        for (a, &j) in acc.iter_mut().zip(&cols) {
            *a += features[p * p_raw + j];
        }
    })
    .into_iter()
    .map(|s| s / nf)
    .collect();
    let width = pc * pc + pc * q;
    let sums = chunked_sum(n, width, |p, acc| {
        let row = &features[p * p_raw..(p + 1) * p_raw];
        for a in 0..pc {
            let za = row[cols[a]] - f_mean[a];
            for b in 0..pc {
                acc[a * pc + b] += za * (row[cols[b]] - f_mean[b]);
            }
            for k in 0..q {
                acc[pc * pc + a * q + k] += za * (targets[p * q + k] - t_mean[k]);
            }
        }
    });
    let gram = DMatrix::from_fn(pc, pc, |a, b| sums[a * pc + b] / nf);
    let rhs = DMatrix::from_fn(pc, q, |a, k| sums[pc * pc + a * q + k] / nf);
    let scale = (0..pc)
        .map(|a| gram[(a, a)])
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut lambda = ridge * scale;
    let beta = loop {
        let mut g = gram.clone();
        for a in 0..pc {
            g[(a, a)] += lambda;
        }
        if let Some(ch) = g.cholesky() {
            let b = ch.solve(&rhs);
            if b.iter().all(|v| v.is_finite()) {
                break b;
            }
        }
        lambda = if lambda > 0.0 {
            lambda * 100.0
        } else {
            1e-12 * scale
        };
        if lambda > MAX_RIDGE * scale {
            return Err(Error::numerical(
                Some(step),
                "regression matrix is singular beyond ridge rescue",
            ));
        }
    };
    fitted.par_chunks_mut(q).enumerate().for_each(|(p, out)| {
        let row = &features[p * p_raw..(p + 1) * p_raw];
        let z = DVector::from_fn(pc, |a, _| row[cols[a]] - f_mean[a]);
        for k in 0..q {
            out[k] = t_mean[k] + z.dot(&beta.column(k));
        }
    });
    Ok(fitted)
}

struct Basis {
    exps: Vec<Vec<usize>>,
    indicator: bool,
}

impl Basis {
    fn width(&self) -> usize {
        self.exps.len() + usize::from(self.indicator)
    }

    /// Raw features of every path at step `i`, with coordinates standardised.
    fn features(&self, ens: &PathEnsemble, domain: &DomainSpec, i: usize) -> Vec<f64> {
        let (n, m) = (ens.n_paths, ens.m);
        let nf = n as f64;
        let mean: Vec<f64> = chunked_sum(n, m, |p, acc| {
            for (a, v) in acc.iter_mut().zip(ens.x(p, i)) {
                *a += v;
            }
        })
        .into_iter()
        .map(|s| s / nf)
        .collect();
        let var = chunked_sum(n, m, |p, acc| {
            for ((a, v), mu) in acc.iter_mut().zip(ens.x(p, i)).zip(&mean) {
                *a += (v - mu) * (v - mu);
            }
        });
        let inv_sd: Vec<f64> = var
            .iter()
            .map(|v| {
                let sd = (v / nf).sqrt();
                if sd > 0.0 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        let w = self.width();
        let mut out = vec![0.0; n * w];
        out.par_chunks_mut(w).enumerate().for_each(|(p, row)| {
            let x = ens.x(p, i);
            let z: Vec<f64> = (0..m).map(|k| (x[k] - mean[k]) * inv_sd[k]).collect();
            for (slot, e) in row.iter_mut().zip(&self.exps) {
                *slot = e.iter().zip(&z).map(|(&pw, v)| v.powi(pw as i32)).product();
            }
            if self.indicator {
                row[w - 1] = if domain.is_on_boundary(x) { 1.0 } else { 0.0 };
            }
        });
        out
    }
}

/// Runs the backward sweep over `ens`.
#[allow(clippy::too_many_arguments)]
pub fn solve(
    ens: &PathEnsemble,
    domain: &DomainSpec,
    c: &CoefficientSet,
    p_phi: &ConvexPotential,
    p_psi: &ConvexPotential,
    reg: &RegressionConfig,
    mode: DriverMode<'_>,
    estimate_z: bool,
) -> Result<BackwardSolution> {
    reg.validate()?;
    let (n_paths, n, m, d) = (ens.n_paths, ens.n_steps(), ens.m, c.d);
    if c.m != m || domain.dimension() != m {
        return Err(Error::invalid(
            "ensemble, domain and model dimensions differ",
        ));
    }
    if p_phi.dimension() != d || p_psi.dimension() != d {
        return Err(Error::invalid(
            "potential dimension differs from the backward dimension",
        ));
    }
    if estimate_z && !ens.has_increments() {
        return Err(Error::invalid(
            "Z estimation needs retained Brownian increments",
        ));
    }
    let inv_eps = match (mode, ens.epsilon) {
        (DriverMode::FastTime, EpsilonTag::Epsilon(e)) => 1.0 / e,
        (DriverMode::FastTime, EpsilonTag::Averaged) => {
            return Err(Error::invalid(
                "fast-time driver needs an ensemble with an epsilon",
            ))
        }
        (DriverMode::Averaged(avg), _) => {
            if avg.value_dim() != d || avg.state_dim() != m {
                return Err(Error::invalid(
                    "averaged coefficients have the wrong dimensions",
                ));
            }
            0.0
        }
    };
    let dt = ens.grid.dt();
    let basis = Basis {
        exps: monomials(m, reg.degree),
        indicator: reg.include_boundary_indicator,
    };
    let zw = d * m;
    let q = if estimate_z { d + zw } else { d };

    let mut y = vec![0.0; (n + 1) * n_paths * d];
    let mut du = vec![0.0; n * n_paths * d];
    let mut dv = vec![0.0; n * n_paths * d];
    let mut z = if estimate_z {
        Some(vec![0.0; n * n_paths * zw])
    } else {
        None
    };
    let mut martingale_stats = vec![0.0; n];
    let mut split = false;

    y[n * n_paths * d..]
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(p, out)| (c.terminal)(ens.terminal(p), out));
    if !y[n * n_paths * d..].iter().all(|v| v.is_finite()) {
        return Err(Error::numerical(Some(n), "non-finite terminal value"));
    }

    // running sum of Y_{i+1} - C_i per path; Y_0 plus this sum is the
    // realised pathwise value whose spread gives the error of Y_start
    let mut mart_sum = vec![0.0; n_paths * d];
    for i in (0..n).rev() {
        let t = ens.grid.time(i);
        let (head, tail) = y.split_at_mut((i + 1) * n_paths * d);
        let y_next = &tail[..n_paths * d];
        let y_cur = &mut head[i * n_paths * d..];

        let targets: Vec<f64> = if estimate_z {
            let mut tg = vec![0.0; n_paths * q];
            tg.par_chunks_mut(q).enumerate().for_each(|(p, row)| {
                let yn = &y_next[p * d..(p + 1) * d];
                row[..d].copy_from_slice(yn);
                let db = ens.db(p, i);
                for a in 0..d {
                    for b in 0..m {
                        row[d + a * m + b] = yn[a] * db[b] / dt;
                    }
                }
            });
            tg
        } else {
            y_next.to_vec()
        };
        let feats = basis.features(ens, domain, i);
        let fitted = fit(&feats, basis.width(), &targets, q, n_paths, reg.ridge, i)?;

        // martingale increments Y_{i+1} - C_i
        let nf = n_paths as f64;
        let sums = chunked_sum(n_paths, 2 * d, |p, acc| {
            for k in 0..d {
                let r = y_next[p * d + k] - fitted[p * q + k];
                acc[k] += r;
                acc[d + k] += r * r;
            }
        });
        let mut stat = 0.0f64;
        for k in 0..d {
            let mean = sums[k] / nf;
            let var = if n_paths > 1 {
                ((sums[d + k] - nf * mean * mean) / (nf - 1.0)).max(0.0)
            } else {
                0.0
            };
            let se = (var / nf).sqrt();
            let scale = 1e-12 * (1.0 + mean.abs());
            if se > scale {
                stat = stat.max(mean.abs() / se);
            } else if mean.abs() > scale {
                stat = f64::INFINITY;
            }
        }
        martingale_stats[i] = stat;
        mart_sum.par_chunks_mut(d).enumerate().for_each(|(p, acc)| {
            for k in 0..d {
                acc[k] += y_next[p * d + k] - fitted[p * q + k];
            }
        });

        if let Some(zs) = z.as_mut() {
            zs[i * n_paths * zw..(i + 1) * n_paths * zw]
                .par_chunks_mut(zw)
                .enumerate()
                .for_each(|(p, out)| out.copy_from_slice(&fitted[p * q + d..(p + 1) * q]));
        }

        let du_i = &mut du[i * n_paths * d..(i + 1) * n_paths * d];
        let dv_i = &mut dv[i * n_paths * d..(i + 1) * n_paths * d];
        let step_split = y_cur
            .par_chunks_mut(d)
            .zip(du_i.par_chunks_mut(d))
            .zip(dv_i.par_chunks_mut(d))
            .enumerate()
            .map(|(p, ((yo, uo), vo))| -> Result<bool> {
                let ci = &fitted[p * q..p * q + d];
                let x = ens.x(p, i);
                let mut fv = vec![0.0; d];
                match mode {
                    DriverMode::FastTime => (c.f)(t * inv_eps, x, ci, &mut fv),
                    DriverMode::Averaged(avg) => {
                        avg.f_bar_into(x, ci, &mut fv).map_err(|e| match e {
                            Error::NumericalFailure {
                                step: None,
                                message,
                            } => Error::numerical(Some(i), message),
                            other => other,
                        })?
                    }
                }
                let dkv = ens.dk_var(p, i);
                let mut v: Vec<f64> = ci.iter().zip(&fv).map(|(a, b)| a + b * dt).collect();
                if dkv > 0.0 {
                    let mut gv = vec![0.0; d];
                    (c.g)(t, ens.x(p, i + 1), ci, &mut gv);
                    for (a, b) in v.iter_mut().zip(&gv) {
                        *a += b * dkv;
                    }
                }
                if !v.iter().all(|a| a.is_finite()) {
                    return Err(Error::numerical(Some(i), "non-finite backward predictor"));
                }
                let s = composite_resolvent_into(p_phi, p_psi, &v, dt, dkv.max(0.0), yo, uo, vo)
                    .map_err(|e| match e {
                        Error::NumericalFailure {
                            step: None,
                            message,
                        } => Error::numerical(Some(i), message),
                        other => other,
                    })?;
                if !yo.iter().all(|a| a.is_finite()) {
                    return Err(Error::numerical(Some(i), "non-finite backward value"));
                }
                Ok(s)
            })
            .collect::<Result<Vec<bool>>>()?;
        split |= step_split.into_iter().any(|s| s);
    }

    let nf = n_paths as f64;
    let y_start: Vec<f64> = chunked_sum(n_paths, d, |p, acc| {
        for k in 0..d {
            acc[k] += y[p * d + k];
        }
    })
    .into_iter()
    .map(|s| s / nf)
    .collect();
    let y_start_stderr: Vec<f64> = (0..d)
        .map(|k| scalar_mean_stderr((0..n_paths).map(|p| y[p * d + k] + mart_sum[p * d + k])).1)
        .collect();

    let moments = {
        let (sup, ue, ve) = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let mut sup = 0.0f64;
                let (mut ue, mut ve) = (0.0, 0.0);
                for i in 0..=n {
                    let o = (i * n_paths + p) * d;
                    sup = sup.max(y[o..o + d].iter().map(|v| v * v).sum());
                }
                for i in 0..n {
                    let o = (i * n_paths + p) * d;
                    ue += du[o..o + d].iter().map(|v| v * v).sum::<f64>() / dt;
                    let dkv = ens.dk_var(p, i);
                    if dkv > 0.0 {
                        ve += dv[o..o + d].iter().map(|v| v * v).sum::<f64>() / dkv;
                    }
                }
                (sup, ue, ve)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
        MomentDiagnostics {
            sup_y2: sup / nf,
            u_energy: ue / nf,
            v_energy: ve / nf,
        }
    };

    Ok(BackwardSolution {
        grid: ens.grid,
        n_paths,
        d,
        m,
        y,
        du,
        dv,
        z,
        y_start,
        y_start_stderr,
        martingale_stats,
        split,
        moments,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub n_steps: usize,
    pub y_epsilon: Vec<f64>,
    pub y_averaged: Vec<f64>,
    /// Euclidean distance between the two initial values.
    pub error: f64,
    pub stderr: f64,
}

pub(crate) fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn pooled(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| pooled_stderr(*x, *y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `|Y^eps_start - Ȳ_start|` for each epsilon, all runs sharing `seed`.
#[allow(clippy::too_many_arguments)]
pub fn initial_value_convergence(
    domain: &DomainSpec,
    c: &CoefficientSet,
    avg: &AveragedCoefficients,
    p_phi: &ConvexPotential,
    p_psi: &ConvexPotential,
    t: f64,
    x: &[f64],
    t_end: f64,
    epsilons: &[f64],
    rule: &StepRule,
    n_paths: usize,
    reg: &RegressionConfig,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if epsilons.is_empty() {
        return Err(Error::Validation("epsilon list is empty".into()));
    }
    let mut averaged: Vec<(TimeGrid, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let grid = rule.grid(t, t_end, eps, c.period)?;
        let ens = simulate_with(domain, c, eps, &grid, x, n_paths, seed, false)?;
        let sol = solve(
            &ens,
            domain,
            c,
            p_phi,
            p_psi,
            reg,
            DriverMode::FastTime,
            false,
        )?;
        drop(ens);
        let (ya, sa) = match averaged.iter().find(|(g, _, _)| *g == grid) {
            Some((_, ya, sa)) => (ya.clone(), sa.clone()),
            None => {
                let ens = simulate_averaged_with(domain, avg, &grid, x, n_paths, seed, false)?;
                let s = solve(
                    &ens,
                    domain,
                    c,
                    p_phi,
                    p_psi,
                    reg,
                    DriverMode::Averaged(avg),
                    false,
                )?;
                averaged.push((grid, s.y_start.clone(), s.y_start_stderr.clone()));
                (s.y_start, s.y_start_stderr)
            }
        };
        rows.push(ConvergenceRow {
            epsilon: eps,
            n_steps: grid.n_steps,
            error: norm_diff(&sol.y_start, &ya),
            stderr: pooled(&sol.y_start_stderr, &sa),
            y_epsilon: sol.y_start,
            y_averaged: ya,
        });
    }
    Ok(rows)
}
