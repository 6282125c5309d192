//! Sampling-based audit of the growth, Lipschitz, ellipticity and
//! potential-compatibility assumptions. Nothing here is a proof: every
//! check reports the worst ratio seen on the sample and flags it.

use serde::{Deserialize, Serialize};

use super::{outer_self, CoefficientSet};
use crate::domain::DomainSpec;
use crate::potential::{yosida_gradient, ConvexPotential};
use crate::rng::{GaussianStream, StreamKey, AUDIT_SUBSTREAM};
use crate::{Error, Result};

const GAMMAS: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];
const SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub sample_budget: usize,
    pub seed: u64,
    /// Time samples are drawn from `[0, s_max]`; defaults to the period or 10.
    #[serde(default)]
    pub s_max: Option<f64>,
    /// Backward values are drawn from `[-y_box, y_box]^d`.
    #[serde(default = "default_y_box")]
    pub y_box: f64,
}

fn default_y_box() -> f64 {
    2.0
}

impl AuditConfig {
    pub fn new(sample_budget: usize, seed: u64) -> Self {
        Self {
            sample_budget,
            seed,
            s_max: None,
            y_box: default_y_box(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub name: String,
    /// Worst sampled value of the checked quantity.
    pub estimate: f64,
    pub declared: Option<f64>,
    pub violated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub samples: usize,
    pub entries: Vec<AuditEntry>,
    pub l1_hat: f64,
    /// Lipschitz constant of `b` in `x` (not squared).
    pub drift_lipschitz_hat: f64,
    pub l2_hat: f64,
    pub l3_hat: f64,
    pub l4_hat: f64,
    pub iota_hat: f64,
}

impl AuditReport {
    pub fn violations(&self) -> Vec<&AuditEntry> {
        self.entries.iter().filter(|e| e.violated).collect()
    }

    pub fn entry(&self, name: &str) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

struct Sampler<'a> {
    stream: GaussianStream,
    domain: &'a DomainSpec,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Sampler<'_> {
    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.stream.uniform(lo, hi)
    }

    fn closure_point(&mut self) -> Vec<f64> {
        let z: Vec<f64> = (0..self.lo.len())
            .map(|k| self.stream.uniform(self.lo[k], self.hi[k]))
            .collect();
        self.domain.project(&z)
    }

    fn boundary_point(&mut self) -> Option<Vec<f64>> {
        for _ in 0..200 {
            let z: Vec<f64> = (0..self.lo.len())
                .map(|k| {
                    let c = 0.5 * (self.lo[k] + self.hi[k]);
                    let h = self.hi[k] - self.lo[k];
                    self.stream.uniform(c - h, c + h)
                })
                .collect();
            let p = self.domain.project(&z);
            if p != z {
                return Some(p);
            }
        }
        None
    }

    fn cube(&mut self, d: usize, r: f64) -> Vec<f64> {
        (0..d).map(|_| self.stream.uniform(-r, r)).collect()
    }

    fn unit(&mut self, m: usize) -> Vec<f64> {
        loop {
            let mut h = vec![0.0; m];
            self.stream.fill(&mut h, 1.0);
            let n = norm2(&h).sqrt();
            if n > 1e-8 {
                return h.iter().map(|v| v / n).collect();
            }
        }
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

fn diff2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst `lhs / scale` with the convention that a positive `lhs` against a
/// zero scale is infinite.
fn ratio(lhs: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        lhs / scale
    } else if lhs > 1e-12 {
        f64::INFINITY
    } else {
        0.0
    }
}

pub fn audit_assumptions(
    c: &CoefficientSet,
    domain: &DomainSpec,
    p_phi: &ConvexPotential,
    p_psi: &ConvexPotential,
    cfg: &AuditConfig,
) -> Result<AuditReport> {
    if cfg.sample_budget == 0 {
        return Err(Error::invalid("sample budget must be at least 1"));
    }
    if domain.dimension() != c.m || p_phi.dimension() != c.d || p_psi.dimension() != c.d {
        return Err(Error::invalid("audit inputs have inconsistent dimensions"));
    }
    let (m, d) = (c.m, c.d);
    let s_max = cfg.s_max.or(c.period).unwrap_or(10.0);
    let (lo, hi) = domain.sampling_box();
    let mut sm = Sampler {
        stream: GaussianStream::new(StreamKey::new(cfg.seed, 0, AUDIT_SUBSTREAM)),
        domain,
        lo,
        hi,
    };

    let mut b_lip2 = 0.0f64;
    let mut b_lip = 0.0f64;
    let mut b_growth = 0.0f64;
    let mut sigma_bound = 0.0f64;
    let mut iota_hat = f64::INFINITY;
    let mut f_lip = 0.0f64;
    let mut f_growth = 0.0f64;
    let mut g_lip = 0.0f64;
    let mut g_growth = 0.0f64;
    let mut phi_min = f64::INFINITY;
    let mut psi_min = f64::INFINITY;
    let mut terminal_sup = 0.0f64;
    let mut coupling_min = f64::INFINITY;
    let mut l2 = [0.0f64; 4];

    for _ in 0..cfg.sample_budget {
        let s = sm.uniform(0.0, s_max);
        let x1 = sm.closure_point();
        let x2 = sm.closure_point();
        let y1 = sm.cube(d, cfg.y_box);
        let y2 = sm.cube(d, cfg.y_box);

        let (b1, b2) = (c.drift(s, &x1), c.drift(s, &x2));
        let (s1, s2) = (c.diffusion(s, &x1), c.diffusion(s, &x2));
        let dx2 = diff2(&x1, &x2);
        if dx2 > 0.0 {
            b_lip2 = b_lip2.max((diff2(&b1, &b2) + diff2(&s1, &s2)) / dx2);
            b_lip = b_lip.max((diff2(&b1, &b2) / dx2).sqrt());
        }
        b_growth = b_growth.max(norm2(&b1) / (1.0 + norm2(&x1)));
        sigma_bound = sigma_bound.max(norm2(&s1));

        let h = sm.unit(m);
        let a = outer_self(&s1, m);
        let mut ah = vec![0.0; m];
        for i in 0..m {
            ah[i] = (0..m).map(|j| a[i * m + j] * h[j]).sum();
        }
        iota_hat = iota_hat.min(dot(&ah, &h));

        let (f1, f2) = (c.driver(s, &x1, &y1), c.driver(s, &x2, &y2));
        let dxy = dx2 + diff2(&y1, &y2);
        if dxy > 0.0 {
            f_lip = f_lip.max(diff2(&f1, &f2) / dxy);
        }
        f_growth = f_growth.max(norm2(&f1) / (1.0 + norm2(&x1) + norm2(&y1)));

        let boundary = sm.boundary_point().zip(sm.boundary_point());
        if let Some((z1, z2)) = &boundary {
            let (g1, g2) = (c.boundary_driver(s, z1, &y1), c.boundary_driver(s, z2, &y2));
            let dzy = diff2(z1, z2) + diff2(&y1, &y2);
            if dzy > 0.0 {
                g_lip = g_lip.max(diff2(&g1, &g2) / dzy);
            }
            g_growth = g_growth.max(norm2(&g1) / (1.0 + norm2(z1) + norm2(&y1)));
            terminal_sup = terminal_sup.max(p_psi.eval(&c.terminal_value(z1)).abs());
        }

        phi_min = phi_min.min(p_phi.eval(&y1));
        psi_min = psi_min.min(p_psi.eval(&y1));
        terminal_sup = terminal_sup.max(p_phi.eval(&c.terminal_value(&x1)).abs());

        let f0 = c.driver(s, &x1, &vec![0.0; d]);
        for &gamma in &GAMMAS {
            let gphi = yosida_gradient(p_phi, &y1, gamma)?;
            let gpsi = yosida_gradient(p_psi, &y1, gamma)?;
            let (nphi, npsi) = (norm2(&gphi).sqrt(), norm2(&gpsi).sqrt());
            coupling_min = coupling_min.min(dot(&gphi, &gpsi));
            l2[1] = l2[1].max(ratio(dot(&gpsi, &f1), nphi * (1.0 + norm2(&f1).sqrt())));
            l2[3] = l2[3].max(ratio(-dot(&gpsi, &f0), nphi * (1.0 + norm2(&f0).sqrt())));
            if let Some((z1, _)) = &boundary {
                let g = c.boundary_driver(s, z1, &y1);
                let g0 = c.boundary_driver(s, z1, &vec![0.0; d]);
                l2[0] = l2[0].max(ratio(dot(&gphi, &g), npsi * (1.0 + norm2(&g).sqrt())));
                l2[2] = l2[2].max(ratio(-dot(&gphi, &g0), npsi * (1.0 + norm2(&g0).sqrt())));
            }
        }
    }

    let declared = c.constants;
    let l1_hat = b_lip2.max(b_growth).max(sigma_bound);
    let l3_hat = f_lip.max(f_growth);
    let l4_hat = g_lip.max(g_growth);
    let l2_hat = l2.iter().cloned().fold(0.0, f64::max);

    let above = |est: f64, bound: f64| est > bound * (1.0 + SLACK) + SLACK;
    let mut entries = vec![
        AuditEntry {
            name: "b_sigma.lipschitz".into(),
            estimate: b_lip2,
            declared: Some(declared.l1),
            violated: above(b_lip2, declared.l1),
        },
        AuditEntry {
            name: "b_sigma.drift_growth".into(),
            estimate: b_growth,
            declared: Some(declared.l1),
            violated: above(b_growth, declared.l1),
        },
        AuditEntry {
            name: "b_sigma.diffusion_bound".into(),
            estimate: sigma_bound,
            declared: Some(declared.l1),
            violated: above(sigma_bound, declared.l1),
        },
        AuditEntry {
            name: "sigma.ellipticity".into(),
            estimate: iota_hat,
            declared: Some(declared.iota),
            violated: iota_hat < declared.iota * (1.0 - SLACK) - SLACK,
        },
        AuditEntry {
            name: "f.lipschitz".into(),
            estimate: f_lip,
            declared: Some(declared.l3),
            violated: above(f_lip, declared.l3),
        },
        AuditEntry {
            name: "f.growth".into(),
            estimate: f_growth,
            declared: Some(declared.l3),
            violated: above(f_growth, declared.l3),
        },
        AuditEntry {
            name: "g.lipschitz".into(),
            estimate: g_lip,
            declared: Some(declared.l4),
            violated: above(g_lip, declared.l4),
        },
        AuditEntry {
            name: "g.growth".into(),
            estimate: g_growth,
            declared: Some(declared.l4),
            violated: above(g_growth, declared.l4),
        },
    ];

    // normalisation: phi(0) = psi(0) = 0 is the minimum and 0 is interior to both domains
    let zero = vec![0.0; d];
    let mut interior = true;
    for k in 0..d {
        for sgn in [-1.0, 1.0] {
            let mut e = zero.clone();
            e[k] = sgn * 1e-6;
            interior &= p_phi.eval(&e).is_finite() && p_psi.eval(&e).is_finite();
        }
    }
    let normalised =
        p_phi.eval(&zero) == 0.0 && p_psi.eval(&zero) == 0.0 && phi_min >= 0.0 && psi_min >= 0.0;
    entries.push(AuditEntry {
        name: "potentials.normalisation".into(),
        estimate: phi_min.min(psi_min),
        declared: Some(0.0),
        violated: !normalised,
    });
    entries.push(AuditEntry {
        name: "potentials.zero_interior".into(),
        estimate: if interior { 1.0 } else { 0.0 },
        declared: None,
        violated: !interior,
    });
    entries.push(AuditEntry {
        name: "potentials.terminal_bounded".into(),
        estimate: terminal_sup,
        declared: None,
        violated: !terminal_sup.is_finite(),
    });
    entries.push(AuditEntry {
        name: "potentials.yosida_coupling".into(),
        estimate: coupling_min,
        declared: Some(0.0),
        violated: coupling_min < -1e-12,
    });
    for (i, name) in [
        "potentials.phi_against_g",
        "potentials.psi_against_f",
        "potentials.phi_against_g0",
        "potentials.psi_against_f0",
    ]
    .iter()
    .enumerate()
    {
        entries.push(AuditEntry {
            name: (*name).into(),
            estimate: l2[i],
            declared: None,
            violated: !l2[i].is_finite(),
        });
    }

    Ok(AuditReport {
        samples: cfg.sample_budget,
        entries,
        l1_hat,
        drift_lipschitz_hat: b_lip,
        l2_hat,
        l3_hat,
        l4_hat,
        iota_hat,
    })
}
