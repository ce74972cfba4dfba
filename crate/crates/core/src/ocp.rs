//! Open-circuit potential curves.
//!
//! The model only needs `U(x)` and `dU/dx` on the open stoichiometry interval
//! `(0, 1)`. Two families ship with the crate: a smooth affine-plus-logistic
//! form, used for the built-in graphite-like and LCO-like defaults, and a
//! tabulated curve interpolated with monotone cubic Hermite splines. Anything
//! else can be plugged in through [`OcpFunction`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FdiError, Result};

/// A differentiable open-circuit potential `x ↦ U(x)` [V].
pub trait OcpFunction: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn slope(&self, x: f64) -> f64;
}

/// Shared handle to an OCP implementation plus a provenance label.
#[derive(Clone)]
pub struct OcpCurve {
    id: String,
    inner: Arc<dyn OcpFunction>,
}

impl fmt::Debug for OcpCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcpCurve").field("id", &self.id).finish()
    }
}

impl OcpCurve {
    pub fn new(id: impl Into<String>, inner: Arc<dyn OcpFunction>) -> Self {
        OcpCurve {
            id: id.into(),
            inner,
        }
    }

    pub fn identifier(&self) -> &str {
        &self.id
    }

    #[inline]
    pub fn evaluate(&self, x: f64) -> f64 {
        self.inner.value(x)
    }

    #[inline]
    pub fn slope(&self, x: f64) -> f64 {
        self.inner.slope(x)
    }

    /// Built-in sloping-carbon negative electrode curve (the default).
    pub fn carbon_synthetic() -> Self {
        LogisticOcp::carbon_like().into_curve("carbon-synthetic")
    }

    /// Built-in graphite-like negative electrode curve.
    pub fn graphite_synthetic() -> Self {
        LogisticOcp::graphite_like().into_curve("graphite-synthetic")
    }

    /// Built-in LiCoO2-like positive electrode curve.
    pub fn lco_synthetic() -> Self {
        LogisticOcp::lco_like().into_curve("lco-synthetic")
    }
}

/// Both electrode curves of a cell.
#[derive(Debug, Clone)]
pub struct OcpPair {
    pub pos: OcpCurve,
    pub neg: OcpCurve,
}

impl Default for OcpPair {
    fn default() -> Self {
        OcpPair {
            pos: OcpCurve::lco_synthetic(),
            neg: OcpCurve::carbon_synthetic(),
        }
    }
}

/// One logistic step `amplitude / (1 + exp(-(x - center) / width))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticStep {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

/// `U(x) = offset + slope·x + Σ steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticOcp {
    pub offset: f64,
    pub slope: f64,
    #[serde(default)]
    pub steps: Vec<LogisticStep>,
}

#[inline]
fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticOcp {
    pub fn graphite_like() -> Self {
        LogisticOcp {
            offset: 0.96,
            slope: -0.04,
            steps: vec![
                LogisticStep {
                    amplitude: -0.75,
                    center: 0.03,
                    width: 0.012,
                },
                LogisticStep {
                    amplitude: -0.07,
                    center: 0.12,
                    width: 0.03,
                },
                LogisticStep {
                    amplitude: -0.03,
                    center: 0.55,
                    width: 0.02,
                },
            ],
        }
    }

    /// Sloping carbon: a steep linear branch with a single low-stoichiometry
    /// step, so the surface concentration is visible in the voltage.
    pub fn carbon_like() -> Self {
        LogisticOcp {
            offset: 1.0,
            slope: -0.7,
            steps: vec![LogisticStep {
                amplitude: -0.2,
                center: 0.04,
                width: 0.015,
            }],
        }
    }

    pub fn lco_like() -> Self {
        LogisticOcp {
            offset: 4.55,
            slope: -0.8,
            steps: vec![LogisticStep {
                amplitude: -0.9,
                center: 0.985,
                width: 0.012,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.offset.is_finite()
            && self.slope.is_finite()
            && self
                .steps
                .iter()
                .all(|s| s.amplitude.is_finite() && s.center.is_finite() && s.width.is_finite());
        if !finite {
            return Err(FdiError::config("logistic OCP coefficients must be finite"));
        }
        if self.steps.iter().any(|s| s.width <= 0.0) {
            return Err(FdiError::config("logistic OCP step widths must be > 0"));
        }
        Ok(())
    }

    pub fn into_curve(self, id: impl Into<String>) -> OcpCurve {
        OcpCurve::new(id, Arc::new(self))
    }
}

impl OcpFunction for LogisticOcp {
    fn value(&self, x: f64) -> f64 {
        self.steps.iter().fold(self.offset + self.slope * x, |acc, s| {
            acc + s.amplitude * logistic((x - s.center) / s.width)
        })
    }

    fn slope(&self, x: f64) -> f64 {
        self.steps.iter().fold(self.slope, |acc, s| {
            let l = logistic((x - s.center) / s.width);
            acc + s.amplitude * l * (1.0 - l) / s.width
        })
    }
}

/// Tabulated curve with monotone (Fritsch–Carlson) cubic Hermite interpolation.
/// Outside the table the end segments are extended linearly.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedOcp {
    x: Vec<f64>,
    u: Vec<f64>,
    m: Vec<f64>,
}

impl TabulatedOcp {
    pub fn new(x: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        if x.len() != u.len() {
            return Err(FdiError::config("OCP table columns have different lengths"));
        }
        if x.len() < 2 {
            return Err(FdiError::config("OCP table needs at least two points"));
        }
        if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(FdiError::config("OCP table contains non-finite values"));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FdiError::config(
                "OCP table stoichiometries must be strictly increasing",
            ));
        }
        let m = monotone_slopes(&x, &u);
        Ok(TabulatedOcp { x, u, m })
    }

    /// Reads a two-column CSV `x,u` (header optional).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| FdiError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let rows = crate::harness::drive_cycle::parse_two_column_csv(&text).map_err(|message| {
            FdiError::Parse {
                path: path.to_path_buf(),
                message,
            }
        })?;
        let (x, u) = rows.into_iter().unzip();
        TabulatedOcp::new(x, u)
    }

    fn segment(&self, x: f64) -> usize {
        match self.x.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.x.len() - 2),
        }
    }
}

fn monotone_slopes(x: &[f64], u: &[f64]) -> Vec<f64> {
    let n = x.len();
    let delta: Vec<f64> = (0..n - 1)
        .map(|i| (u[i + 1] - u[i]) / (x[i + 1] - x[i]))
        .collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for i in 1..n - 1 {
        m[i] = if delta[i - 1] * delta[i] <= 0.0 {
            0.0
        } else {
            // weighted harmonic mean keeps the interpolant monotone
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            let w1 = 2.0 * h1 + h0;
            let w2 = h1 + 2.0 * h0;
            (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i])
        };
    }
    m
}

impl OcpFunction for TabulatedOcp {
    fn value(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x <= self.x[0] {
            return self.u[0] + self.m[0] * (x - self.x[0]);
        }
        if x >= self.x[n - 1] {
            return self.u[n - 1] + self.m[n - 1] * (x - self.x[n - 1]);
        }
        let i = self.segment(x);
        let h = self.x[i + 1] - self.x[i];
        let t = (x - self.x[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.u[i] + h10 * h * self.m[i] + h01 * self.u[i + 1] + h11 * h * self.m[i + 1]
    }

    fn slope(&self, x: f64) -> f64 {
        let n = self.x.len();
        if x <= self.x[0] {
            return self.m[0];
        }
        if x >= self.x[n - 1] {
            return self.m[n - 1];
        }
        let i = self.segment(x);
        let h = self.x[i + 1] - self.x[i];
        let t = (x - self.x[i]) / h;
        let t2 = t * t;
        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        (d00 * self.u[i] + d01 * self.u[i + 1]) / h + d10 * self.m[i] + d11 * self.m[i + 1]
    }
}

/// Config-file description of a curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OcpSpec {
    /// One of the built-in curves: `carbon-synthetic`, `graphite-synthetic` or
    /// `lco-synthetic`.
    Builtin { name: String },
    Logistic {
        #[serde(default)]
        id: Option<String>,
        #[serde(flatten)]
        curve: LogisticOcp,
    },
    /// Inline table (`x`, `u`) or a CSV file (`path`, resolved against the config directory).
    Table {
        #[serde(default)]
        id: Option<String>,
        #[serde(default)]
        x: Vec<f64>,
        #[serde(default)]
        u: Vec<f64>,
        #[serde(default)]
        path: Option<PathBuf>,
    },
}

impl OcpSpec {
    pub fn build(&self, base_dir: Option<&Path>) -> Result<OcpCurve> {
        match self {
            OcpSpec::Builtin { name } => match name.as_str() {
                "graphite-synthetic" => Ok(OcpCurve::graphite_synthetic()),
                "carbon-synthetic" => Ok(OcpCurve::carbon_synthetic()),
                "lco-synthetic" => Ok(OcpCurve::lco_synthetic()),
                other => Err(FdiError::config(format!("unknown builtin OCP curve '{other}'"))),
            },
            OcpSpec::Logistic { id, curve } => {
                curve.validate()?;
                Ok(curve
                    .clone()
                    .into_curve(id.clone().unwrap_or_else(|| "logistic".into())))
            }
            OcpSpec::Table { id, x, u, path } => {
                let table = match path {
                    Some(p) => {
                        let full = match base_dir {
                            Some(dir) if p.is_relative() => dir.join(p),
                            _ => p.clone(),
                        };
                        TabulatedOcp::from_csv(&full)?
                    }
                    None => TabulatedOcp::new(x.clone(), u.clone())?,
                };
                let label = id.clone().unwrap_or_else(|| match path {
                    Some(p) => p.display().to_string(),
                    None => "table".into(),
                });
                Ok(OcpCurve::new(label, Arc::new(table)))
            }
        }
    }
}
