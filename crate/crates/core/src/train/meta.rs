//! Bi-level gradient through an unrolled inner loop.
//!
//! The inner loop runs `eta` plain gradient steps u_{i+1} = u_i - a*g_i(u_i)
//! on a per-step inner objective, then an outer objective is evaluated at
//! u_eta. The exact gradient of the outer loss w.r.t. u_0 follows from the
//! chain rule through every step:
//!
//!   d u_{i+1} / d u_i = I - a * H_i(u_i)
//!
//! so a reverse sweep multiplies the outer gradient by each transpose factor.
//! H_i is symmetric, which turns every factor into one Hessian-vector
//! product: g <- g - a * H_i g. First-order mode skips the sweep and uses
//! the outer gradient unchanged.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetaGradMode {
    Exact,
    FirstOrder,
}

impl MetaGradMode {
    pub fn parse(s: &str) -> Result<MetaGradMode> {
        match s {
            "exact" => Ok(MetaGradMode::Exact),
            "first-order" => Ok(MetaGradMode::FirstOrder),
            _ => Err(Error::Config(format!("meta_grad_mode '{s}' not in [\"exact\", \"first-order\"]"))),
        }
    }
}

/// One episode's pair of objectives over a flat parameter vector `u`.
///
/// `inner_grad` must be deterministic per `step`: any sampled quantity
/// (pseudo-label, rotation draw) is fixed on the first visit to that step and
/// reused on revisits, otherwise the reverse sweep would differentiate a
/// different function than the unroll evaluated.
pub trait BilevelTask {
    fn dim(&self) -> usize;

    /// Inner loss, gradient, and (when `dir` is given) the exact
    /// Hessian-vector product H(u) * dir, all at step `step`.
    fn inner_grad(
        &mut self,
        step: usize,
        u: &[f64],
        dir: Option<&[f64]>,
    ) -> Result<(f64, Vec<f64>, Option<Vec<f64>>)>;

    /// Outer loss and its gradient w.r.t. `u` at the adapted point.
    fn outer_grad(&mut self, u: &[f64]) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug)]
pub struct MetaResult {
    pub inner_losses: Vec<f64>,
    pub outer_loss: f64,
    pub grad_u0: Vec<f64>,
    pub u_final: Vec<f64>,
}

fn check_finite(name: &str, step: usize, loss: f64, vec: &[f64]) -> Result<()> {
    if !loss.is_finite() || vec.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingFault(format!("non-finite {name} at step {step}")));
    }
    Ok(())
}

pub fn meta_gradient(
    task: &mut dyn BilevelTask,
    u0: &[f64],
    eta: usize,
    inner_lr: f64,
    mode: MetaGradMode,
) -> Result<MetaResult> {
    let dim = task.dim();
    assert_eq!(u0.len(), dim);
    let mut trajectory: Vec<Vec<f64>> = Vec::with_capacity(eta + 1);
    trajectory.push(u0.to_vec());
    let mut inner_losses = Vec::with_capacity(eta);
    for i in 0..eta {
        let (loss, grad, _) = task.inner_grad(i, &trajectory[i], None)?;
        check_finite("inner gradient", i, loss, &grad)?;
        inner_losses.push(loss);
        let mut next = trajectory[i].clone();
        for (p, g) in next.iter_mut().zip(grad.iter()) {
            *p -= inner_lr * g;
        }
        trajectory.push(next);
    }

    let (outer_loss, mut g) = task.outer_grad(&trajectory[eta])?;
    check_finite("outer gradient", eta, outer_loss, &g)?;

    if mode == MetaGradMode::Exact {
        for i in (0..eta).rev() {
            let (_, _, hv) = task.inner_grad(i, &trajectory[i], Some(&g))?;
            let hv = hv.expect("task must return a Hessian-vector product when dir is given");
            check_finite("Hessian-vector product", i, 0.0, &hv)?;
            for (gj, hj) in g.iter_mut().zip(hv.iter()) {
                *gj -= inner_lr * hj;
            }
        }
    }

    Ok(MetaResult {
        inner_losses,
        outer_loss,
        grad_u0: g,
        u_final: trajectory.pop().unwrap(),
    })
}
