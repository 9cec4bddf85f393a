//! Optimizers: Riemannian Adam for sphere-constrained vectors (embedding
//! rows live on their unit spheres; momentum is parallel-transported, the
//! second moment is a transport-free scalar) and textbook Adam for the
//! Euclidean parameters.

use crate::error::{CoreError, Result};
use crate::manifold::{
    dot, exp_map, norm, normalize, parallel_transport, project_to_tangent, TangentVector,
    UnitVector, NORM_EPS,
};

/// Shared Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eta: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eta: 1e-3,
            eps: 1e-8,
        }
    }
}

/// Tolerated drift of a constrained point's norm before renormalization.
pub const DRIFT_GUARD: f64 = 1e-7;

/// State for one sphere-constrained vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RiemannianAdamState {
    /// First moment, tangent at the current point.
    pub m: Vec<f64>,
    /// Scalar second moment.
    pub v: f64,
    /// Step count.
    pub t: u64,
    pub hyper: AdamHyper,
}

impl RiemannianAdamState {
    pub fn new(dim: usize, hyper: AdamHyper) -> Self {
        RiemannianAdamState {
            m: vec![0.0; dim],
            v: 0.0,
            t: 0,
            hyper,
        }
    }
}

/// One constrained update: project the ambient gradient, advance the Adam
/// moments, move along the exponential map, and transport the momentum to
/// the new point.
pub fn riemannian_adam_step(
    state: &mut RiemannianAdamState,
    z: &UnitVector,
    euclid_grad: &[f64],
) -> Result<UnitVector> {
    if euclid_grad.iter().any(|g| !g.is_finite()) {
        return Err(CoreError::Diverged);
    }
    let h = state.hyper;
    let g = project_to_tangent(z, euclid_grad)?;
    let g = g.direction();
    state.t += 1;
    for (m, &gi) in state.m.iter_mut().zip(g) {
        *m = h.beta1 * *m + (1.0 - h.beta1) * gi;
    }
    let g_sq = dot(g, g);
    state.v = h.beta2 * state.v + (1.0 - h.beta2) * g_sq;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);
    let v_hat = state.v / bc2;
    let scale = -h.eta / (bc1 * (v_hat.sqrt() + h.eps));
    let step: Vec<f64> = state.m.iter().map(|m| m * scale).collect();
    // A geodesic step of more than ~1e6 radians has no usable direction
    // left in f64 trigonometry; the run has diverged.
    if !norm(&step).is_finite() || norm(&step) > 1e6 {
        return Err(CoreError::Diverged);
    }
    let next = exp_map(z, &TangentVector::from_parts(z.clone(), step));
    let next = if (norm(next.as_slice()) - 1.0).abs() > DRIFT_GUARD {
        normalize(next.as_slice(), NORM_EPS)?
    } else {
        next
    };
    // Transport the momentum into the tangent space of the new point.
    if state.m.iter().any(|&m| m != 0.0) {
        let carried = parallel_transport(z, &next, &TangentVector::from_parts(
            z.clone(),
            state.m.clone(),
        ))?;
        state.m = carried.direction().to_vec();
    }
    Ok(next)
}

/// State for a flat Euclidean parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(len: usize, hyper: AdamHyper) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            hyper,
        }
    }
}

/// Textbook Adam update, in place.
pub fn adam_step(state: &mut AdamState, p: &mut [f64], grad: &[f64]) -> Result<()> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(CoreError::Diverged);
    }
    debug_assert_eq!(p.len(), grad.len());
    debug_assert_eq!(state.m.len(), p.len());
    let h = state.hyper;
    state.t += 1;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);
    for i in 0..p.len() {
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * grad[i];
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        p[i] -= h.eta * m_hat / (v_hat.sqrt() + h.eps);
    }
    Ok(())
}
