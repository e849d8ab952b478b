//! JSON-friendly system descriptions.
//!
//! A system is described by its `kind` plus family parameters; matrices are
//! nested arrays in row-major order. Optional `lambda0` / `lambda1` entries
//! override the ellipticity bounds derived from the family (they are
//! mandatory for `custom-expression` systems, which have no derivable
//! bounds).
//!
//! ```json
//! { "kind": "linear", "state_matrix": [[0.0]], "input_matrix": [[1.0]] }
//! { "kind": "rnn", "tau": 1.0, "weights": [[0.5]], "noise": 0.7, "sigmoid": "tanh" }
//! { "kind": "custom-expression", "dim": 1, "drift": ["-x1^3"],
//!   "diffusion": [["1"]], "lambda0": 1.0, "lambda1": 1.0 }
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlAffineSystem, LinearParams, RnnParams, Sigmoid};
use crate::error::{Error, Result};
use crate::expr::Expression;

/// Declarative description of a control-affine system.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    /// `f(x) = A x`, `g(x) = G`.
    Linear {
        state_matrix: Vec<Vec<f64>>,
        input_matrix: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda1: Option<f64>,
    },
    /// `f(x) = -x/tau + A sigma(x)`, `g(x) = noise * I`.
    Rnn {
        tau: f64,
        weights: Vec<Vec<f64>>,
        noise: f64,
        /// `"tanh"` (default) or `"logistic"`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigmoid: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda1: Option<f64>,
    },
    /// Drift and diffusion entries as arithmetic expressions in `x1 ... xd`.
    /// Ellipticity bounds cannot be derived and must be supplied.
    CustomExpression {
        dim: usize,
        /// `dim` drift component expressions.
        drift: Vec<String>,
        /// `dim x dim` diffusion entries, row-major.
        diffusion: Vec<Vec<String>>,
        /// Optional analytic Jacobian entries, row-major; finite differences
        /// are used when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        jacobian: Option<Vec<Vec<String>>>,
        lambda0: f64,
        lambda1: f64,
    },
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidParameter(format!("{what}: matrix must be nonempty")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidParameter(format!("{what}: ragged or empty matrix rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl SystemConfig {
    /// Build the runtime system, applying any ellipticity overrides.
    pub fn build(&self) -> Result<ControlAffineSystem> {
        match self {
            Self::Linear {
                state_matrix,
                input_matrix,
                lambda0,
                lambda1,
            } => {
                let params = LinearParams::new(
                    matrix_from_rows(state_matrix, "state_matrix")?,
                    matrix_from_rows(input_matrix, "input_matrix")?,
                );
                let sys = ControlAffineSystem::from_linear(&params)?;
                apply_overrides(sys, *lambda0, *lambda1)
            }
            Self::Rnn {
                tau,
                weights,
                noise,
                sigmoid,
                lambda0,
                lambda1,
            } => {
                let sigmoid = match sigmoid {
                    Some(name) => Sigmoid::from_name(name)?,
                    None => Sigmoid::Tanh,
                };
                let params = RnnParams::new(*tau, matrix_from_rows(weights, "weights")?, *noise)
                    .with_sigmoid(sigmoid);
                let sys = ControlAffineSystem::from_rnn(&params)?;
                apply_overrides(sys, *lambda0, *lambda1)
            }
            Self::CustomExpression {
                dim,
                drift,
                diffusion,
                jacobian,
                lambda0,
                lambda1,
            } => build_custom(*dim, drift, diffusion, jacobian.as_deref(), *lambda0, *lambda1),
        }
    }

    /// The recurrent-net parameters, when this config describes that family.
    pub fn as_rnn_params(&self) -> Result<RnnParams> {
        match self {
            Self::Rnn {
                tau,
                weights,
                noise,
                sigmoid,
                ..
            } => {
                let sigmoid = match sigmoid {
                    Some(name) => Sigmoid::from_name(name)?,
                    None => Sigmoid::Tanh,
                };
                Ok(RnnParams::new(*tau, matrix_from_rows(weights, "weights")?, *noise)
                    .with_sigmoid(sigmoid))
            }
            _ => Err(Error::InvalidParameter("system is not of kind 'rnn'".into())),
        }
    }

    /// The linear parameters, when this config describes that family.
    pub fn as_linear_params(&self) -> Result<LinearParams> {
        match self {
            Self::Linear {
                state_matrix,
                input_matrix,
                ..
            } => Ok(LinearParams::new(
                matrix_from_rows(state_matrix, "state_matrix")?,
                matrix_from_rows(input_matrix, "input_matrix")?,
            )),
            _ => Err(Error::InvalidParameter("system is not of kind 'linear'".into())),
        }
    }
}

fn apply_overrides(
    sys: ControlAffineSystem,
    lambda0: Option<f64>,
    lambda1: Option<f64>,
) -> Result<ControlAffineSystem> {
    if lambda0.is_none() && lambda1.is_none() {
        return Ok(sys);
    }
    let lo = lambda0.unwrap_or(sys.lambda_min());
    let hi = lambda1.unwrap_or(sys.lambda_max());
    let dim = sys.dim();
    let constant = sys.is_constant_diffusion();
    let drift_sys = sys.clone();
    let diff_sys = sys.clone();
    let jac_sys = sys.clone();
    let rebuilt = ControlAffineSystem::new(
        dim,
        Arc::new(move |x| drift_sys.drift(x)),
        Arc::new(move |x| diff_sys.diffusion(x)),
        if sys.has_analytic_jacobian() {
            Some(Arc::new(move |x: &DVector<f64>| jac_sys.drift_jacobian(x)))
        } else {
            None
        },
        lo,
        hi,
    )?;
    Ok(if constant {
        rebuilt.with_constant_diffusion()
    } else {
        rebuilt
    })
}

fn build_custom(
    dim: usize,
    drift: &[String],
    diffusion: &[Vec<String>],
    jacobian: Option<&[Vec<String>]>,
    lambda0: f64,
    lambda1: f64,
) -> Result<ControlAffineSystem> {
    if dim == 0 {
        return Err(Error::InvalidParameter("custom system dimension must be positive".into()));
    }
    if drift.len() != dim {
        return Err(Error::InvalidParameter(format!(
            "custom drift needs {dim} component expressions, got {}",
            drift.len()
        )));
    }
    if diffusion.len() != dim || diffusion.iter().any(|row| row.len() != dim) {
        return Err(Error::InvalidParameter(format!(
            "custom diffusion must be a {dim}x{dim} expression matrix"
        )));
    }
    let drift_exprs: Vec<Expression> = drift
        .iter()
        .map(|s| Expression::parse(s, dim))
        .collect::<Result<_>>()?;
    let diffusion_exprs: Vec<Expression> = diffusion
        .iter()
        .flatten()
        .map(|s| Expression::parse(s, dim))
        .collect::<Result<_>>()?;
    let jacobian_exprs: Option<Vec<Expression>> = match jacobian {
        None => None,
        Some(rows) => {
            if rows.len() != dim || rows.iter().any(|row| row.len() != dim) {
                return Err(Error::InvalidParameter(format!(
                    "custom jacobian must be a {dim}x{dim} expression matrix"
                )));
            }
            Some(
                rows.iter()
                    .flatten()
                    .map(|s| Expression::parse(s, dim))
                    .collect::<Result<_>>()?,
            )
        }
    };

    let drift_fn = Arc::new(move |x: &DVector<f64>| {
        DVector::from_iterator(dim, drift_exprs.iter().map(|e| e.eval(x.as_slice())))
    });
    let diffusion_fn = Arc::new(move |x: &DVector<f64>| {
        DMatrix::from_row_iterator(dim, dim, diffusion_exprs.iter().map(|e| e.eval(x.as_slice())))
    });
    let jacobian_fn = jacobian_exprs.map(|exprs| {
        Arc::new(move |x: &DVector<f64>| {
            DMatrix::from_row_iterator(dim, dim, exprs.iter().map(|e| e.eval(x.as_slice())))
        }) as Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>
    });
    ControlAffineSystem::new(dim, drift_fn, diffusion_fn, jacobian_fn, lambda0, lambda1)
}
