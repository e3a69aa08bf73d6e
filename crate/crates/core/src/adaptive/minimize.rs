use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::cost::CostEvaluation;
use crate::error::{Error, Result};
use crate::localization::RadiiVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    /// Stop once the projected gradient norm falls below this fraction of
    /// its initial value.
    pub grad_tol: f64,
    pub lower_bound: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iters: 50,
            grad_tol: 1e-6,
            lower_bound: 1e-3,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 40,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_iters > 0
            && self.grad_tol > 0.0
            && self.lower_bound > 0.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.sufficient_decrease > 0.0
            && self.sufficient_decrease < 1.0
            && self.max_backtracks > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    StepCollapse,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct MinimizeReport {
    pub upsilon: RadiiVector,
    pub value: f64,
    /// Cost at the starting point.
    pub initial_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
    /// Accepted cost values, starting with `initial_value`; non-increasing.
    pub history: Vec<f64>,
    pub evaluation: CostEvaluation,
}

fn projected_gradient(x: &DVector<f64>, g: &DVector<f64>, lb: f64) -> f64 {
    x.iter()
        .zip(g.iter())
        .map(|(&xi, &gi)| {
            let p = (xi - gi).max(lb) - xi;
            p * p
        })
        .sum::<f64>()
        .sqrt()
}

/// Projected gradient descent on `[lower_bound, ∞)^g` with Armijo
/// backtracking and Barzilai–Borwein trial steps. `objective` must return a
/// gradient. Failures at trial points count as infinite cost.
pub fn minimize_with<F>(
    settings: &OptimizerSettings,
    start: &[f64],
    mut objective: F,
) -> Result<MinimizeReport>
where
    F: FnMut(&RadiiVector) -> Result<CostEvaluation>,
{
    settings.validate()?;
    let lb = settings.lower_bound;
    let mut x = DVector::from_iterator(start.len(), start.iter().map(|&v| v.max(lb)));
    let mut current = objective(&RadiiVector::new(x.as_slice().to_vec())?)?;
    if !current.value.is_finite() {
        return Err(Error::NonFiniteCost);
    }
    let mut evaluations = 1;
    let mut grad = take_gradient(&current)?;
    let initial_value = current.value;
    let mut history = vec![initial_value];
    let pg0 = projected_gradient(&x, &grad, lb);
    let gnorm = grad.amax();
    let mut step = if gnorm > 0.0 {
        0.1 * x.amax().max(1.0) / gnorm
    } else {
        1.0
    };
    let mut iterations = 0;
    let reason = loop {
        let pg = projected_gradient(&x, &grad, lb);
        if pg == 0.0 || pg <= settings.grad_tol * pg0 {
            break StopReason::GradientTolerance;
        }
        if iterations >= settings.max_iters {
            break StopReason::MaxIterations;
        }
        let mut accepted = None;
        for _ in 0..settings.max_backtracks {
            let trial = (&x - &grad * step).map(|v| v.max(lb));
            let dx = &trial - &x;
            if dx.norm() <= 1e-12 * x.norm().max(1.0) {
                break;
            }
            let decrease = settings.sufficient_decrease * grad.dot(&dx);
            let radii = RadiiVector::new(trial.as_slice().to_vec())?;
            evaluations += 1;
            if let Ok(ev) = objective(&radii) {
                if ev.value.is_finite() && ev.value <= current.value + decrease {
                    accepted = Some((trial, ev));
                    break;
                }
            }
            step *= settings.shrink;
        }
        let Some((trial, ev)) = accepted else {
            break StopReason::StepCollapse;
        };
        let new_grad = take_gradient(&ev)?;
        let s = &trial - &x;
        let y = &new_grad - &grad;
        let sy = s.dot(&y);
        step = if sy > 0.0 { s.dot(&s) / sy } else { step * 2.0 };
        x = trial;
        grad = new_grad;
        current = ev;
        history.push(current.value);
        iterations += 1;
    };
    Ok(MinimizeReport {
        upsilon: RadiiVector::new(x.as_slice().to_vec())?,
        value: current.value,
        initial_value,
        iterations,
        evaluations,
        reason,
        history,
        evaluation: current,
    })
}

fn take_gradient(ev: &CostEvaluation) -> Result<DVector<f64>> {
    let g = ev
        .gradient
        .clone()
        .ok_or_else(|| Error::InvalidArgument("objective returned no gradient".into()))?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteCost);
    }
    Ok(g)
}
