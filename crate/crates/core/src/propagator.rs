//! Exact single-spin propagators for the two central-spin branches.

use nalgebra::Vector3;

use crate::coupling::CouplingSet;
use crate::error::{Error, Result};
use crate::linalg::{pauli_dot, Mat2, I};
use crate::C64;

/// `U±_k = exp(i (ω σz ± g_k·σ) τ)` for one bath spin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorPair {
    pub plus: Mat2,
    pub minus: Mat2,
}

/// `exp(i n·σ t)` in closed form: `cos(|n|t) 𝟙 + i sin(|n|t)/|n| · n·σ`.
pub fn precession(n: Vector3<f64>, t: f64) -> Mat2 {
    let delta = n.norm();
    let angle = delta * t;
    if delta == 0.0 || angle == 0.0 {
        return Mat2::identity();
    }
    let s = angle.sin() / delta;
    Mat2::identity() * C64::from(angle.cos()) + pauli_dot([n.x, n.y, n.z]) * (I * s)
}

pub fn single_spin_propagators(g: Vector3<f64>, omega: f64, tau: f64) -> Result<PropagatorPair> {
    if !(tau >= 0.0) {
        return Err(Error::Domain(format!("dwell time must be non-negative, got {tau}")));
    }
    let field = Vector3::new(0.0, 0.0, omega);
    Ok(PropagatorPair {
        plus: precession(field + g, tau),
        minus: precession(field - g, tau),
    })
}

/// Propagator pairs for every spin of a coupling set at its own `ω`.
pub fn bath_propagators(c: &CouplingSet, tau: f64) -> Result<Vec<PropagatorPair>> {
    c.vectors
        .iter()
        .map(|&g| single_spin_propagators(g, c.omega, tau))
        .collect()
}
