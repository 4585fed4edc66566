//! JSON problem descriptions.
//!
//! ```json
//! {
//!   "type": "neutral",
//!   "delays": [0.0, 1.0], "a": [0.0, 1.0], "d": [0.5],
//!   "y": 1.0,
//!   "x0": {"poly": [1.0, 1.0]}, "x0_deriv": {"const": 1.0},
//!   "epsilon": 0.3, "grid_h": 0.001
//! }
//! ```
//!
//! Systems use `"A"` (rows), `"b"`, a vector `"y"` and one history per
//! component in `"x0"`. Sampled histories are read on a uniform grid of
//! `[-1, 0]` and interpolated linearly onto the working grid.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::model::{DelayEquation, InitialState, RetardedSystem, SystemState};
use crate::optimal::{Problem, ProblemState};
use crate::spectral::to_companion;

/// Grid step used when the config and the caller leave it open.
pub const DEFAULT_H: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Retarded,
    Neutral,
    System,
}

/// Initial function on `[-1, 0]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum History {
    Const(f64),
    /// Coefficients `c_0, c_1, …` of `Σ c_j t^j`.
    Poly(Vec<f64>),
    /// Values on a uniform grid of `[-1, 0]`, endpoints included.
    Samples(Vec<f64>),
}

impl History {
    pub fn to_grid(&self, h: f64) -> Result<GridFunction> {
        match self {
            History::Const(v) => GridFunction::from_fn_with_step(-1.0, 0.0, h, |_| *v),
            History::Poly(c) => GridFunction::from_fn_with_step(-1.0, 0.0, h, |t| {
                c.iter().rev().fold(0.0, |acc, ck| acc * t + ck)
            }),
            History::Samples(s) => {
                if s.len() < 2 {
                    return Err(Error::Config("x0 samples need at least two values".into()));
                }
                let given = GridFunction::from_samples(-1.0, 0.0, s.clone())?;
                let steps = crate::grid::steps_between(-1.0, 0.0, h, "grid_h")?;
                given.resample(-1.0, 0.0, steps)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(rename = "type")]
    pub kind: ProblemKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<f64>>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    pub y: OneOrMany<f64>,
    pub x0: OneOrMany<History>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0_deriv: Option<History>,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_h: Option<f64>,
}

/// Problem ready for the solvers. Systems given outside companion form are
/// transformed, and `transform` holds the change of variables `G`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedProblem {
    pub problem: Problem,
    pub state: ProblemState,
    pub epsilon: f64,
    pub h: f64,
    pub transform: Option<DMatrix<f64>>,
}

fn need<'a, T>(field: &'a Option<T>, name: &str, kind: &str) -> Result<&'a T> {
    field
        .as_ref()
        .ok_or_else(|| Error::Config(format!("missing key `{name}` for type \"{kind}\"")))
}

fn forbid<T>(field: &Option<T>, name: &str, kind: &str) -> Result<()> {
    match field {
        Some(_) => Err(Error::Config(format!("key `{name}` is not used by type \"{kind}\""))),
        None => Ok(()),
    }
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }

    /// Builds the problem on step `h_override`, else `grid_h`, else [`DEFAULT_H`].
    pub fn load(&self, h_override: Option<f64>) -> Result<LoadedProblem> {
        let h = h_override.or(self.grid_h).unwrap_or(DEFAULT_H);
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("grid step {h} must be positive")));
        }
        match self.kind {
            ProblemKind::Retarded | ProblemKind::Neutral => self.load_scalar(h),
            ProblemKind::System => self.load_system(h),
        }
    }

    fn load_scalar(&self, h: f64) -> Result<LoadedProblem> {
        let kind = if self.kind == ProblemKind::Neutral { "neutral" } else { "retarded" };
        forbid(&self.matrix, "A", kind)?;
        forbid(&self.b, "b", kind)?;
        let delays = need(&self.delays, "delays", kind)?.clone();
        let a = need(&self.a, "a", kind)?.clone();
        let eq = if self.kind == ProblemKind::Neutral {
            let d = need(&self.d, "d", kind)?.clone();
            let eq = DelayEquation::new(delays, a, d)?;
            if !eq.is_neutral() {
                return Err(Error::Config("type \"neutral\" needs d_N != 0".into()));
            }
            eq
        } else {
            let d = self.d.clone().unwrap_or_default();
            if d.iter().any(|&v| v != 0.0) {
                return Err(Error::Config("type \"retarded\" needs every d_k = 0".into()));
            }
            DelayEquation::retarded(delays, a)?
        };
        let OneOrMany::One(y) = self.y else {
            return Err(Error::Config("`y` must be a number for scalar equations".into()));
        };
        let OneOrMany::One(x0) = &self.x0 else {
            return Err(Error::Config("`x0` must be a single history for scalar equations".into()));
        };
        let x0 = x0.to_grid(h)?;
        let state = match &self.x0_deriv {
            Some(d) => InitialState::new(y, x0)?.with_derivative(d.to_grid(h)?)?,
            None => InitialState::new(y, x0)?,
        };
        crate::model::validate_state(&eq, &state)?;
        eq.check_epsilon(self.epsilon)?;
        Ok(LoadedProblem {
            problem: Problem::Scalar(eq),
            state: ProblemState::Scalar(state),
            epsilon: self.epsilon,
            h,
            transform: None,
        })
    }

    fn load_system(&self, h: f64) -> Result<LoadedProblem> {
        for (field, name) in [(&self.delays, "delays"), (&self.a, "a"), (&self.d, "d")] {
            forbid(field, name, "system")?;
        }
        forbid(&self.x0_deriv, "x0_deriv", "system")?;
        let rows = need(&self.matrix, "A", "system")?;
        let b = need(&self.b, "b", "system")?;
        let n = b.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("`A` must be {n}x{n} to match `b`")));
        }
        let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        let sys = RetardedSystem::new(a, DVector::from_column_slice(b))?;
        let y = self.y.to_vec();
        let x0 = self
            .x0
            .to_vec()
            .iter()
            .map(|x| x.to_grid(h))
            .collect::<Result<Vec<_>>>()?;
        if y.len() != n || x0.len() != n {
            return Err(Error::Config(format!("`y` and `x0` need {n} components")));
        }
        let state = SystemState::new(y, x0)?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::EpsilonOutOfRange {
                epsilon: self.epsilon,
                max: 1.0,
            });
        }
        let (sys, state, transform) = if sys.companion_g().is_some() {
            (sys, state, None)
        } else {
            let (comp, g) = to_companion(&sys)?;
            let st = state.transform(&g)?;
            (comp, st, Some(g))
        };
        Ok(LoadedProblem {
            problem: Problem::System(sys),
            state: ProblemState::System(state),
            epsilon: self.epsilon,
            h,
            transform,
        })
    }
}
