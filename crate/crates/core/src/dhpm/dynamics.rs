//! Evaluators with the call signature of a dynamics network.

use ndarray::{Array1, Array2, Axis};

use super::{DhpmError, FeatureConfig};
use crate::nn::{JetBatch, JetTape, MlpParams};

/// Right-hand side `N(features)` of one channel equation, evaluated row-wise.
pub trait Dynamics {
    fn input_dim(&self) -> usize;

    fn evaluate(&self, features: &Array2<f64>) -> Result<DynamicsEval<'_>, DhpmError>;

    fn forward(&self, features: &[f64]) -> Result<f64, DhpmError> {
        if features.len() != self.input_dim() {
            return Err(DhpmError::Config(format!(
                "{} features for an evaluator taking {}",
                features.len(),
                self.input_dim()
            )));
        }
        let row = Array2::from_shape_vec((1, features.len()), features.to_vec()).unwrap();
        Ok(self.evaluate(&row)?.values[0])
    }
}

enum Pull<'a> {
    Tape(&'a MlpParams, JetTape),
    Jacobian(Array2<f64>),
}

/// Values of `N` on a batch plus what is needed to pull cotangents back.
pub struct DynamicsEval<'a> {
    pub values: Array1<f64>,
    pull: Pull<'a>,
}

impl DynamicsEval<'_> {
    /// Maps `∂L/∂N` (one entry per row) to `∂L/∂features` and, for networks, `∂L/∂θ`.
    pub fn pullback(&self, cot: &Array1<f64>) -> (Array2<f64>, Option<Vec<f64>>) {
        match &self.pull {
            Pull::Tape(params, tape) => {
                let adj = JetBatch::values(cot.clone().insert_axis(Axis(1)));
                let (grad, input) = tape.backward(params, &adj, true);
                (input.expect("input adjoint requested").value().clone(), Some(grad))
            }
            Pull::Jacobian(j) => (j * &cot.view().insert_axis(Axis(1)), None),
        }
    }
}

impl Dynamics for MlpParams {
    fn input_dim(&self) -> usize {
        MlpParams::input_dim(self)
    }

    fn evaluate(&self, features: &Array2<f64>) -> Result<DynamicsEval<'_>, DhpmError> {
        let tape = self.tape(JetBatch::values(features.clone()))?;
        if let Some(row) = tape.first_non_finite() {
            return Err(DhpmError::Numeric {
                point: features.row(row).to_vec(),
            });
        }
        let values = tape.output().value().column(0).to_owned();
        Ok(DynamicsEval {
            values,
            pull: Pull::Tape(self, tape),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Expr {
    Zero,
    /// `u_xx`
    Heat,
    /// `-u u_x + 0.1 u_xx`
    Burgers,
    /// `-u u_x - u_xxx`
    Kdv,
    /// `-u u_x - u_xx - u_xxxx`
    Ks,
    /// `-0.5 v_xx - (u² + v²) v`
    NlsReal,
    /// `0.5 u_xx + (u² + v²) u`
    NlsImag,
    /// `-u w_x - v w_y + 0.01 (w_xx + w_yy)`
    NavierStokes,
}

/// Closed-form right-hand side reading its arguments from fixed feature columns.
#[derive(Clone, Debug, PartialEq)]
pub struct KnownDynamics {
    expr: Expr,
    cols: Vec<usize>,
    dim: usize,
}

impl KnownDynamics {
    /// Value and partials with respect to `cols` at one feature row.
    fn eval_row(&self, a: &[f64], g: &mut [f64]) -> f64 {
        match self.expr {
            Expr::Zero => 0.0,
            Expr::Heat => {
                g[0] = 1.0;
                a[0]
            }
            Expr::Burgers => {
                let (u, ux, uxx) = (a[0], a[1], a[2]);
                g.copy_from_slice(&[-ux, -u, 0.1]);
                -u * ux + 0.1 * uxx
            }
            Expr::Kdv => {
                let (u, ux, uxxx) = (a[0], a[1], a[2]);
                g.copy_from_slice(&[-ux, -u, -1.0]);
                -u * ux - uxxx
            }
            Expr::Ks => {
                let (u, ux, uxx, uxxxx) = (a[0], a[1], a[2], a[3]);
                g.copy_from_slice(&[-ux, -u, -1.0, -1.0]);
                -u * ux - uxx - uxxxx
            }
            Expr::NlsReal => {
                let (u, v, vxx) = (a[0], a[1], a[3]);
                let m = u * u + v * v;
                g.copy_from_slice(&[-2.0 * u * v, -(m + 2.0 * v * v), 0.0, -0.5]);
                -0.5 * vxx - m * v
            }
            Expr::NlsImag => {
                let (u, v, uxx) = (a[0], a[1], a[2]);
                let m = u * u + v * v;
                g.copy_from_slice(&[m + 2.0 * u * u, 2.0 * u * v, 0.5, 0.0]);
                0.5 * uxx + m * u
            }
            Expr::NavierStokes => {
                let (u, v, wx, wy, wxx, wyy) = (a[0], a[1], a[2], a[3], a[4], a[5]);
                g.copy_from_slice(&[-wx, -wy, -u, -v, 0.01, 0.01]);
                -u * wx - v * wy + 0.01 * (wxx + wyy)
            }
        }
    }
}

impl Dynamics for KnownDynamics {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, features: &Array2<f64>) -> Result<DynamicsEval<'_>, DhpmError> {
        if features.ncols() != self.dim {
            return Err(DhpmError::Config(format!(
                "{} feature columns for an evaluator taking {}",
                features.ncols(),
                self.dim
            )));
        }
        let n = features.nrows();
        let mut values = Array1::zeros(n);
        let mut jac = Array2::zeros((n, self.dim));
        let mut args = vec![0.0; self.cols.len()];
        let mut g = vec![0.0; self.cols.len()];
        for i in 0..n {
            for (a, &c) in args.iter_mut().zip(&self.cols) {
                *a = features[[i, c]];
            }
            values[i] = self.eval_row(&args, &mut g);
            for (&gk, &c) in g.iter().zip(&self.cols) {
                jac[[i, c]] += gk;
            }
            if !values[i].is_finite() {
                return Err(DhpmError::Numeric {
                    point: features.row(i).to_vec(),
                });
            }
        }
        Ok(DynamicsEval {
            values,
            pull: Pull::Jacobian(jac),
        })
    }
}

/// Exact right-hand sides of the benchmark equations, one evaluator per channel
/// equation, wired to the columns of `cfg`'s feature layout.
///
/// Names: `zero`, `heat`, `burgers`, `kdv`, `ks`, `nls`, `navier_stokes`.
pub fn inject_known_dynamics(name: &str, cfg: &FeatureConfig) -> Result<Vec<KnownDynamics>, DhpmError> {
    cfg.validate()?;
    let dim = cfg.len();
    let names = cfg.names();
    let col = |n: String| {
        names.iter().position(|m| *m == n).ok_or_else(|| {
            DhpmError::Config(format!("{name} dynamics need feature {n}, layout is {names:?}"))
        })
    };
    let ch = &cfg.channels;
    let expect_channels = |k: usize| {
        if ch.len() == k {
            Ok(())
        } else {
            Err(DhpmError::Config(format!("{name} dynamics need {k} channel(s), got {}", ch.len())))
        }
    };
    let one = |expr: Expr, suffixes: &[&str]| -> Result<Vec<KnownDynamics>, DhpmError> {
        expect_channels(1)?;
        let cols = suffixes
            .iter()
            .map(|s| col(if s.is_empty() { ch[0].clone() } else { format!("{}_{s}", ch[0]) }))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(vec![KnownDynamics { expr, cols, dim }])
    };
    match name {
        "zero" => Ok((0..ch.len())
            .map(|_| KnownDynamics {
                expr: Expr::Zero,
                cols: vec![],
                dim,
            })
            .collect()),
        "heat" => one(Expr::Heat, &["xx"]),
        "burgers" => one(Expr::Burgers, &["", "x", "xx"]),
        "kdv" => one(Expr::Kdv, &["", "x", "xxx"]),
        "ks" => one(Expr::Ks, &["", "x", "xx", "xxxx"]),
        "nls" => {
            expect_channels(2)?;
            let (u, v) = (&ch[0], &ch[1]);
            let cols = vec![
                col(u.clone())?,
                col(v.clone())?,
                col(format!("{u}_xx"))?,
                col(format!("{v}_xx"))?,
            ];
            Ok(vec![
                KnownDynamics {
                    expr: Expr::NlsReal,
                    cols: cols.clone(),
                    dim,
                },
                KnownDynamics {
                    expr: Expr::NlsImag,
                    cols,
                    dim,
                },
            ])
        }
        "navier_stokes" | "ns" => {
            expect_channels(1)?;
            if cfg.aux_channels.len() < 2 {
                return Err(DhpmError::Config(
                    "navier_stokes dynamics need two aux velocity channels".into(),
                ));
            }
            let w = &ch[0];
            let cols = vec![
                col(cfg.aux_channels[0].clone())?,
                col(cfg.aux_channels[1].clone())?,
                col(format!("{w}_x"))?,
                col(format!("{w}_y"))?,
                col(format!("{w}_xx"))?,
                col(format!("{w}_yy"))?,
            ];
            Ok(vec![KnownDynamics {
                expr: Expr::NavierStokes,
                cols,
                dim,
            }])
        }
        other => Err(DhpmError::Config(format!("unknown dynamics {other}"))),
    }
}
