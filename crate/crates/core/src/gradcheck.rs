//! Central finite-difference verification of parameter gradients.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::Result;
use crate::params::{Ctx, Mode, ParamGrads, ParamStore};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Differences below this are treated as exact (near-zero gradients).
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub num_params: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Entry with the largest relative error.
    pub worst: Option<Mismatch>,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < REL_TOL
    }
}

/// Relative error with the absolute floor applied.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff < ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Compares the autodiff gradient of every trainable scalar in `store`
/// against central differences of `loss`.
pub fn check_param_gradients<F>(store: &mut ParamStore<f64>, mode: Mode, loss: F) -> Result<GradCheck>
where
    F: Fn(&mut Ctx<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut ctx = Ctx::new(store, mode, true, None);
        let l = loss(&mut ctx)?;
        ctx.backward(l)?
    };
    compare_gradients(store, &analytic, mode, loss)
}

/// Compares given gradients against central differences of `loss`.
pub fn compare_gradients<F>(
    store: &mut ParamStore<f64>,
    analytic: &ParamGrads<f64>,
    mode: Mode,
    loss: F,
) -> Result<GradCheck>
where
    F: Fn(&mut Ctx<'_, f64>) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut ctx = Ctx::new(store, mode, false, None);
        let l = loss(&mut ctx)?;
        Ok(ctx.tape.value(l).item())
    };

    let mut report = GradCheck {
        num_params: store.num_trainable(),
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        worst: None,
    };
    for id in store.trainable_ids() {
        let n = store.get(id).len();
        let grad = analytic.get(id).map(<[f64]>::to_vec).unwrap_or(vec![0.0; n]);
        for k in 0..n {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + STEP;
            let up = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig - STEP;
            let down = eval(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let rel = relative_error(grad[k], numeric);
            report.max_abs_err = report.max_abs_err.max((grad[k] - numeric).abs());
            if report.worst.is_none() || rel > report.max_rel_err {
                report.max_rel_err = report.max_rel_err.max(rel);
                report.worst = Some(Mismatch {
                    param: store.entries()[id.index()].name.clone(),
                    index: k,
                    analytic: grad[k],
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
