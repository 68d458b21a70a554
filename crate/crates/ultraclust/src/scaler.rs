//! Scaling functions applied to cluster sizes in the cost of a hierarchy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Ultrametric;
use crate::pairs::PairTable;

#[derive(Debug, Error, PartialEq)]
pub enum ScalerError {
    #[error("table must start at 0 and be strictly increasing")]
    BadTable,
    #[error("scaler evaluated at {t}, but the table only covers 0..={max}")]
    OutOfTable { t: usize, max: usize },
    #[error("value {value} is not within tolerance of any f(t) for t <= {max_t}")]
    NotInImage { value: f64, max_t: usize },
    #[error("unknown scaler kind {0:?}")]
    UnknownKind(String),
}

/// A strictly increasing cost scaler with `f(0) = 0`.
///
/// The built-in choices are `x`, `x²`, `log(1+x)` and `eˣ−1`; arbitrary
/// monotone functions can be supplied as a value table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CostScaler {
    Linear,
    Quadratic,
    Log1p,
    Expm1,
    /// Values `f(0), f(1), ...` given explicitly.
    Tabulated(Vec<f64>),
}

impl CostScaler {
    pub fn tabulated(table: Vec<f64>) -> Result<Self, ScalerError> {
        if table.is_empty() || table[0] != 0.0 {
            return Err(ScalerError::BadTable);
        }
        if table.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ScalerError::BadTable);
        }
        Ok(CostScaler::Tabulated(table))
    }

    /// `f(t)`. Panics if a tabulated scaler is evaluated past its table.
    pub fn eval(&self, t: usize) -> f64 {
        match self {
            CostScaler::Linear => t as f64,
            CostScaler::Quadratic => (t * t) as f64,
            CostScaler::Log1p => (1.0 + t as f64).ln(),
            CostScaler::Expm1 => (t as f64).exp_m1(),
            CostScaler::Tabulated(v) => v[t],
        }
    }

    /// `f(t) − f(t−1)`, the weight of layer `t >= 1`.
    pub fn increment(&self, t: usize) -> f64 {
        assert!(t >= 1);
        self.eval(t) - self.eval(t - 1)
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, CostScaler::Linear)
    }

    /// Smallest `t <= max_t` with `f(t)` within relative tolerance of `value`.
    pub fn invert(&self, value: f64, max_t: usize, tol: f64) -> Result<usize, ScalerError> {
        if let CostScaler::Tabulated(v) = self {
            if max_t >= v.len() {
                return Err(ScalerError::OutOfTable {
                    t: max_t,
                    max: v.len() - 1,
                });
            }
        }
        for t in 0..=max_t {
            let ft = self.eval(t);
            if (value - ft).abs() <= tol * ft.abs().max(1.0) {
                return Ok(t);
            }
        }
        Err(ScalerError::NotInImage { value, max_t })
    }

    /// Entrywise `f(d)`. Monotone maps preserve the strong triangle
    /// inequality, so the result is again an ultrametric.
    pub fn apply(&self, d: &Ultrametric) -> Ultrametric {
        let n = d.n();
        Ultrametric::from_table_unchecked(PairTable::from_fn(n, |i, j| {
            self.eval_real(d.get(i, j))
        }))
    }

    /// Entrywise `f⁻¹(d)`, defined when every value lies in the image
    /// `{f(0), ..., f(max_t)}` up to `tol` (relative).
    pub fn apply_inverse(
        &self,
        d: &Ultrametric,
        max_t: usize,
        tol: f64,
    ) -> Result<Ultrametric, ScalerError> {
        let n = d.n();
        let mut table = PairTable::filled(n, 0.0);
        for (i, j, v) in d.iter() {
            table.set(i, j, self.invert(v, max_t, tol)? as f64);
        }
        Ok(Ultrametric::from_table_unchecked(table))
    }

    /// `f` extended to real arguments; agrees with [`Self::eval`] on integers.
    /// Tabulated scalers interpolate linearly between table entries.
    fn eval_real(&self, x: f64) -> f64 {
        match self {
            CostScaler::Linear => x,
            CostScaler::Quadratic => x * x,
            CostScaler::Log1p => (1.0 + x).ln(),
            CostScaler::Expm1 => x.exp_m1(),
            CostScaler::Tabulated(v) => {
                let lo = (x.floor() as usize).min(v.len() - 1);
                let hi = (x.ceil() as usize).min(v.len() - 1);
                let frac = x - lo as f64;
                v[lo] + (v[hi] - v[lo]) * frac
            }
        }
    }
}

impl std::str::FromStr for CostScaler {
    type Err = ScalerError;

    fn from_str(s: &str) -> Result<Self, ScalerError> {
        match s {
            "linear" => Ok(CostScaler::Linear),
            "quadratic" => Ok(CostScaler::Quadratic),
            "log1p" => Ok(CostScaler::Log1p),
            "expm1" => Ok(CostScaler::Expm1),
            other => Err(ScalerError::UnknownKind(other.to_string())),
        }
    }
}

impl std::fmt::Display for CostScaler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CostScaler::Linear => write!(f, "linear"),
            CostScaler::Quadratic => write!(f, "quadratic"),
            CostScaler::Log1p => write!(f, "log1p"),
            CostScaler::Expm1 => write!(f, "expm1"),
            CostScaler::Tabulated(_) => write!(f, "tabulated"),
        }
    }
}
