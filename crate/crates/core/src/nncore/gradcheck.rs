//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::nncore::params::ParamSet;

/// Denominator floor for relative error, so near-zero gradients are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst: CoordCheck,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    /// Every coordinate above tolerance.
    pub failures: Vec<CoordCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.per_param.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
            .map(|p| &p.worst)
    }
}

/// Compares the gradients stored in `params` against central differences of `loss_fn`.
///
/// `loss_fn` is evaluated twice at the unperturbed point; differing results mean the
/// function is not deterministic and the check is refused.
pub fn finite_difference_check<F>(
    mut loss_fn: F,
    params: &ParamSet,
    eps: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet) -> f64,
{
    let base_a = loss_fn(params);
    let base_b = loss_fn(params);
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::invalid(format!(
            "loss function is not deterministic ({base_a} vs {base_b})"
        )));
    }
    if !base_a.is_finite() {
        return Err(Error::NonFinite(format!("loss at check point is {base_a}")));
    }

    let mut probe = params.clone();
    let mut per_param = Vec::new();
    let mut failures = Vec::new();
    let ids: Vec<_> = params.iter().map(|p| params.id(&p.name).unwrap()).collect();
    for id in ids {
        let name = params.iter().nth(id.0).unwrap().name.clone();
        let analytic = params.grad(id).data().to_vec();
        let mut worst: Option<CoordCheck> = None;
        for (i, &a) in analytic.iter().enumerate() {
            let orig = probe.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = orig + eps;
            let fp = loss_fn(&probe);
            probe.value_mut(id).data_mut()[i] = orig - eps;
            let fm = loss_fn(&probe);
            probe.value_mut(id).data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let c = CoordCheck {
                param: name.clone(),
                index: i,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            };
            if !(c.rel_err <= tolerance) {
                failures.push(c.clone());
            }
            if worst.as_ref().is_none_or(|w| c.rel_err > w.rel_err) {
                worst = Some(c);
            }
        }
        if let Some(w) = worst {
            per_param.push(ParamCheck {
                name,
                max_rel_err: w.rel_err,
                worst: w,
            });
        }
    }
    Ok(GradCheckReport {
        per_param,
        failures,
        tolerance,
    })
}
