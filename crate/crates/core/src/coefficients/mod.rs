//! Time-dependent coefficient sets `b, sigma, f, g, Phi`, their time
//! averages, and an empirical assumption auditor.

mod audit;
mod averaging;
pub mod models;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use audit::{audit_assumptions, AuditConfig, AuditEntry, AuditReport};
pub use averaging::{
    average_diffusion, average_drift, average_driver, spd_sqrt, AveragedCoefficients,
    AveragingMethod, AveragingRule,
};
pub use models::{ModelConfig, ModelFactory, ModelRegistry};

use crate::{Error, Result};

/// `(s, x) -> out` for vectors, or for row-major `m x m` matrices.
pub type Field = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(s, x, y) -> out`.
pub type DriverField = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type TerminalMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Declared growth, Lipschitz and ellipticity constants; the auditor compares
/// sampled estimates against them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeclaredConstants {
    pub l1: f64,
    pub l3: f64,
    pub l4: f64,
    pub iota: f64,
}

impl Default for DeclaredConstants {
    fn default() -> Self {
        Self {
            l1: 1.0,
            l3: 1.0,
            l4: 1.0,
            iota: 1.0,
        }
    }
}

/// Coefficients of the coupled forward/backward system.
#[derive(Clone)]
pub struct CoefficientSet {
    pub name: String,
    /// State dimension `m`.
    pub m: usize,
    /// Value dimension `d` of the backward component.
    pub d: usize,
    pub b: Field,
    pub sigma: Field,
    pub f: DriverField,
    pub g: DriverField,
    pub terminal: TerminalMap,
    pub period: Option<f64>,
    pub constants: DeclaredConstants,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("m", &self.m)
            .field("d", &self.d)
            .field("period", &self.period)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    /// Starts from `b = 0`, `sigma = I`, `f = g = 0`, `Phi = 0`.
    pub fn new(name: impl Into<String>, m: usize, d: usize) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::invalid("coefficient dimensions must be positive"));
        }
        Ok(Self {
            name: name.into(),
            m,
            d,
            b: Arc::new(|_, _, out| out.fill(0.0)),
            sigma: Arc::new(move |_, _, out| {
                out.fill(0.0);
                for i in 0..m {
                    out[i * m + i] = 1.0;
                }
            }),
            f: Arc::new(|_, _, _, out| out.fill(0.0)),
            g: Arc::new(|_, _, _, out| out.fill(0.0)),
            terminal: Arc::new(|_, out| out.fill(0.0)),
            period: None,
            constants: DeclaredConstants::default(),
        })
    }

    pub fn with_drift(
        mut self,
        b: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.b = Arc::new(b);
        self
    }

    pub fn with_diffusion(
        mut self,
        sigma: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.sigma = Arc::new(sigma);
        self
    }

    pub fn with_driver(
        mut self,
        f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.f = Arc::new(f);
        self
    }

    pub fn with_boundary_driver(
        mut self,
        g: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.g = Arc::new(g);
        self
    }

    pub fn with_terminal(
        mut self,
        phi: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.terminal = Arc::new(phi);
        self
    }

    pub fn with_period(mut self, period: f64) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::invalid(format!(
                "period must be positive, got {period}"
            )));
        }
        self.period = Some(period);
        Ok(self)
    }

    pub fn with_constants(mut self, constants: DeclaredConstants) -> Result<Self> {
        let c = constants;
        if !(c.l1 > 0.0 && c.l3 > 0.0 && c.l4 > 0.0 && c.iota > 0.0) {
            return Err(Error::invalid("declared constants must be positive"));
        }
        self.constants = constants;
        Ok(self)
    }

    pub fn drift(&self, s: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        (self.b)(s, x, &mut out);
        out
    }

    pub fn diffusion(&self, s: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m * self.m];
        (self.sigma)(s, x, &mut out);
        out
    }

    pub fn driver(&self, s: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        (self.f)(s, x, y, &mut out);
        out
    }

    pub fn boundary_driver(&self, s: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        (self.g)(s, x, y, &mut out);
        out
    }

    pub fn terminal_value(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        (self.terminal)(x, &mut out);
        out
    }

    /// `sigma sigma^T` at `(s, x)`, row-major.
    pub fn diffusion_matrix(&self, s: f64, x: &[f64]) -> Vec<f64> {
        let sig = self.diffusion(s, x);
        outer_self(&sig, self.m)
    }
}

/// `A A^T` for a row-major square matrix.
pub(crate) fn outer_self(a: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..m {
                acc += a[i * m + k] * a[j * m + k];
            }
            out[i * m + j] = acc;
        }
    }
    out
}
