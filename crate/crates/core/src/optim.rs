//! First-order optimizers over flat parameter slices.
//!
//! The momentum rule is the heavy-ball update
//!
//! ```text
//! v <- alpha v - lr g
//! theta <- theta + v
//! ```
//!
//! where the `alpha v` term plays the role of viscous drag on the velocity.

use crate::{Error, Result};

fn check_gradient(params: &[f64], grad: &[f64]) -> Result<()> {
    if params.len() != grad.len() {
        return Err(Error::shape(format!(
            "{} parameters but {} gradient entries",
            params.len(),
            grad.len()
        )));
    }
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

/// `theta <- theta - lr g`.
pub fn gd_step(params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    check_gradient(params, grad)?;
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

/// Velocity and hyperparameters of the momentum update.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    velocity: Vec<f64>,
    alpha: f64,
    lr: f64,
}

impl MomentumState {
    /// Zero velocity for `len` parameters.
    pub fn new(len: usize, alpha: f64, lr: f64) -> Result<Self> {
        Self::with_velocity(vec![0.0; len], alpha, lr)
    }

    pub fn with_velocity(velocity: Vec<f64>, alpha: f64, lr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::param(format!("momentum coefficient must lie in [0, 1), got {alpha}")));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::param(format!("learning rate must be positive, got {lr}")));
        }
        if let Some(index) = velocity.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { velocity, alpha, lr })
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// One momentum update of `params` in place.
    ///
    /// On error (shape mismatch or a non-finite gradient entry) neither the
    /// velocity nor the parameters are touched.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_gradient(params, grad)?;
        if self.velocity.len() != params.len() {
            return Err(Error::shape(format!(
                "velocity has {} entries for {} parameters",
                self.velocity.len(),
                params.len()
            )));
        }
        for ((v, p), g) in self.velocity.iter_mut().zip(params.iter_mut()).zip(grad) {
            *v = self.alpha * *v - self.lr * g;
            *p += *v;
        }
        Ok(())
    }
}

/// Free-function form of [`MomentumState::step`].
pub fn momentum_step(state: &mut MomentumState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    state.step(params, grad)
}

/// Either plain gradient descent or momentum, chosen at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Momentum(MomentumState),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => gd_step(params, grad, *lr),
            Optimizer::Momentum(state) => state.step(params, grad),
        }
    }
}

/// Stopping rule for full-batch minimisation runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Convergence {
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeOutcome {
    pub params: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after every iteration, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Runs `optimizer` on a differentiable objective until `stop` says to halt
/// or `target` (when given) is reached. `objective` returns `(f, grad)`.
pub fn minimize(
    mut optimizer: Optimizer,
    initial: Vec<f64>,
    mut objective: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    stop: Convergence,
    target: Option<f64>,
) -> Result<MinimizeOutcome> {
    let mut params = initial;
    let (mut f, mut g) = objective(&params);
    let mut trace = vec![f];
    let done = |f: f64, g: &[f64]| {
        target.is_some_and(|t| f < t) || g.iter().fold(0.0_f64, |m, x| m.max(x.abs())) < stop.grad_tol
    };
    let mut iterations = 0;
    while !done(f, &g) && iterations < stop.max_iters {
        optimizer.step(&mut params, &g)?;
        (f, g) = objective(&params);
        trace.push(f);
        iterations += 1;
        if !f.is_finite() {
            break;
        }
    }
    let converged = done(f, &g);
    Ok(MinimizeOutcome {
        params,
        iterations,
        converged,
        trace,
    })
}
