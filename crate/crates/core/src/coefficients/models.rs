//! Built-in coefficient models and the name-based registry used by configs.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CoefficientSet, DeclaredConstants};
use crate::{Error, Result};

/// Model selection in experiment configs: either a bare name or
/// `{"name": ..., "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawModelConfig")]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawModelConfig {
    Name(String),
    Full {
        name: String,
        #[serde(default)]
        params: Value,
    },
}

impl From<RawModelConfig> for ModelConfig {
    fn from(raw: RawModelConfig) -> Self {
        match raw {
            RawModelConfig::Name(name) => ModelConfig {
                name,
                params: Value::Null,
            },
            RawModelConfig::Full { name, params } => ModelConfig { name, params },
        }
    }
}

impl ModelConfig {
    pub fn named(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: Value::Null,
        }
    }
}

pub type ModelFactory = Arc<dyn Fn(&Value) -> Result<CoefficientSet> + Send + Sync>;

/// Name to factory map; pre-populated with the built-in models, extended
/// through [`ModelRegistry::register`].
#[derive(Clone)]
pub struct ModelRegistry {
    factories: BTreeMap<String, ModelFactory>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("periodic_linear", periodic_linear);
        r.register("periodic_linear_1d", periodic_linear);
        r.register("periodic_rotation", periodic_rotation);
        r.register("constant", constant);
        r
    }
}

impl ModelRegistry {
    pub fn register(
        &mut self,
        name: impl Into<String>,
        factory: impl Fn(&Value) -> Result<CoefficientSet> + Send + Sync + 'static,
    ) {
        self.factories.insert(name.into(), Arc::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, cfg: &ModelConfig) -> Result<CoefficientSet> {
        let factory = self.factories.get(&cfg.name).ok_or_else(|| {
            Error::Validation(format!(
                "unknown model '{}' (known: {})",
                cfg.name,
                self.names().join(", ")
            ))
        })?;
        factory(&cfg.params)
    }
}

fn param_f64(params: &Value, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| Error::Validation(format!("model parameter '{key}' must be a number"))),
    }
}

fn param_usize(params: &Value, key: &str, default: usize) -> Result<usize> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v.as_u64().map(|v| v as usize).ok_or_else(|| {
            Error::Validation(format!(
                "model parameter '{key}' must be a nonnegative integer"
            ))
        }),
    }
}

/// Affine terminal map `Phi(x) = a0 + a1 x_1`, defaulting to `(1 + x_1) / 2`.
fn terminal_coeffs(params: &Value) -> Result<(f64, f64)> {
    Ok((
        param_f64(params, "terminal_offset", 0.5)?,
        param_f64(params, "terminal_slope", 0.5)?,
    ))
}

/// One-dimensional benchmark with period `2π`:
///
/// ```text
/// b(s,x) = (1 + sin s)(-x/2)      sigma(s,x) = sqrt(1 + sin(s)/2)
/// f(s,x,y) = (1 + cos s)(x - y)   g(s,x,y) = -y/5
/// ```
///
/// Its averages are `b̄ = -x/2`, `σ̄ = 1`, `f̄ = x - y`.
pub fn periodic_linear(params: &Value) -> Result<CoefficientSet> {
    let (a0, a1) = terminal_coeffs(params)?;
    CoefficientSet::new("periodic_linear", 1, 1)?
        .with_drift(|s, x, out| out[0] = (1.0 + s.sin()) * (-0.5 * x[0]))
        .with_diffusion(|s, _, out| out[0] = (1.0 + 0.5 * s.sin()).sqrt())
        .with_driver(|s, x, y, out| out[0] = (1.0 + s.cos()) * (x[0] - y[0]))
        .with_boundary_driver(|_, _, y, out| out[0] = -0.2 * y[0])
        .with_terminal(move |x, out| out[0] = a0 + a1 * x[0])
        .with_period(2.0 * PI)?
        .with_constants(DeclaredConstants {
            l1: 1.5,
            l3: 8.0,
            l4: 0.04,
            iota: 0.5,
        })
}

/// Two-dimensional model whose diffusion rotates with time:
/// `sigma(s,x) = R(s) diag(1, 1/2)`, so `ā = (5/8) I`. Drift and drivers
/// follow [`periodic_linear`] on the first coordinate.
pub fn periodic_rotation(params: &Value) -> Result<CoefficientSet> {
    let (a0, a1) = terminal_coeffs(params)?;
    CoefficientSet::new("periodic_rotation", 2, 1)?
        .with_drift(|s, x, out| {
            let k = -0.5 * (1.0 + s.sin());
            out[0] = k * x[0];
            out[1] = k * x[1];
        })
        .with_diffusion(|s, _, out| {
            let (c, sn) = (s.cos(), s.sin());
            out[0] = c;
            out[1] = -0.5 * sn;
            out[2] = sn;
            out[3] = 0.5 * c;
        })
        .with_driver(|s, x, y, out| out[0] = (1.0 + s.cos()) * (x[0] - y[0]))
        .with_boundary_driver(|_, _, y, out| out[0] = -0.2 * y[0])
        .with_terminal(move |x, out| out[0] = a0 + a1 * x[0])
        .with_period(2.0 * PI)?
        .with_constants(DeclaredConstants {
            l1: 1.25,
            l3: 8.0,
            l4: 0.04,
            iota: 0.25,
        })
}

/// Time-frozen counterpart of [`periodic_linear`] in `m` dimensions: the
/// coefficients already equal their averages.
pub fn constant(params: &Value) -> Result<CoefficientSet> {
    let m = param_usize(params, "dim", 1)?;
    if m == 0 {
        return Err(Error::Validation(
            "model parameter 'dim' must be positive".into(),
        ));
    }
    let (a0, a1) = terminal_coeffs(params)?;
    CoefficientSet::new("constant", m, 1)?
        .with_drift(|_, x, out| {
            for (o, v) in out.iter_mut().zip(x) {
                *o = -0.5 * v;
            }
        })
        .with_driver(|_, x, y, out| out[0] = x[0] - y[0])
        .with_boundary_driver(|_, _, y, out| out[0] = -0.2 * y[0])
        .with_terminal(move |x, out| out[0] = a0 + a1 * x[0])
        // any period works for a time-constant model; 2π matches the benchmark grids
        .with_period(2.0 * PI)?
        .with_constants(DeclaredConstants {
            l1: m as f64,
            l3: 2.0,
            l4: 0.04,
            iota: 1.0,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{average_diffusion, average_drift, average_driver};

    #[test]
    fn registry_builds_builtins() {
        let r = ModelRegistry::default();
        for name in [
            "periodic_linear",
            "periodic_linear_1d",
            "periodic_rotation",
            "constant",
        ] {
            let c = r.build(&ModelConfig::named(name)).unwrap();
            assert!(c.period.is_some());
        }
        assert!(matches!(
            r.build(&ModelConfig::named("nope")),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn user_models_can_be_registered() {
        let mut r = ModelRegistry::default();
        r.register("user", |p| {
            let k = param_f64(p, "k", 1.0)?;
            Ok(CoefficientSet::new("user", 1, 1)?.with_drift(move |_, x, out| out[0] = k * x[0]))
        });
        let cfg: ModelConfig = serde_json::from_str(r#"{"name":"user","params":{"k":3}}"#).unwrap();
        let c = r.build(&cfg).unwrap();
        assert_eq!(c.drift(0.0, &[2.0]), vec![6.0]);
    }

    #[test]
    fn config_accepts_bare_name() {
        let cfg: ModelConfig = serde_json::from_str(r#""constant""#).unwrap();
        assert_eq!(cfg.name, "constant");
    }

    #[test]
    fn shipped_periodic_models_match_closed_form_averages() {
        let c = periodic_linear(&Value::Null).unwrap();
        for x in [-1.0, -0.3, 0.0, 0.55, 1.0] {
            assert!((average_drift(&c, &[x]).unwrap()[0] + 0.5 * x).abs() < 1e-12);
            let (a, s) = average_diffusion(&c, &[x]).unwrap();
            assert!((a[0] - 1.0).abs() < 1e-12 && (s[0] - 1.0).abs() < 1e-12);
            for y in [-1.0, 0.0, 2.0] {
                assert!((average_driver(&c, &[x], &[y]).unwrap()[0] - (x - y)).abs() < 1e-12);
            }
        }
        let r = periodic_rotation(&Value::Null).unwrap();
        let (a, _) = average_diffusion(&r, &[0.1, 0.2]).unwrap();
        assert!((a[0] - 0.625).abs() < 1e-12 && (a[3] - 0.625).abs() < 1e-12);
        assert!(a[1].abs() < 1e-12 && a[2].abs() < 1e-12);
    }
}
