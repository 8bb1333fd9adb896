//! Hyperfine couplings between the central spin and each bath spin.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::SpinGeometry;

/// Per-spin coupling vectors `g_k` and the Larmor frequency `ω` of the bath
/// (both in rad/s, or in units of the effective coupling).
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSet {
    pub vectors: Vec<Vector3<f64>>,
    pub omega: f64,
}

impl CouplingSet {
    pub fn new(vectors: Vec<Vector3<f64>>, omega: f64) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::Geometry("a bath needs at least one spin".into()));
        }
        if !omega.is_finite() || vectors.iter().any(|g| !g.iter().all(|v| v.is_finite())) {
            return Err(Error::Domain("couplings and field must be finite".into()));
        }
        Ok(Self { vectors, omega })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn with_omega(&self, omega: f64) -> Self {
        Self {
            vectors: self.vectors.clone(),
            omega,
        }
    }

    /// All couplings multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            vectors: self.vectors.iter().map(|g| g * factor).collect(),
            omega: self.omega,
        }
    }
}

/// Secular dipolar field of a `z`-polarized central spin:
/// `g_k = prefactor / r_k³ · (3 (ẑ·r̂_k) r̂_k − ẑ)`.
pub fn dipolar_couplings(geom: &SpinGeometry, prefactor: f64) -> Result<CouplingSet> {
    let vectors = geom
        .positions()
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let r = p.norm();
            if r == 0.0 {
                return Err(Error::SpinAtOrigin { index });
            }
            let unit = p / r;
            let strength = prefactor / (r * r * r);
            Ok((unit * (3.0 * unit.z) - Vector3::z()) * strength)
        })
        .collect::<Result<Vec<_>>>()?;
    CouplingSet::new(vectors, 0.0)
}

/// `g_eff = sqrt(mean_k |g_k|²)`, the unit of the ω–τ maps.
pub fn effective_coupling(c: &CouplingSet) -> f64 {
    let n = c.len() as f64;
    (c.vectors.iter().map(|g| g.norm_squared()).sum::<f64>() / n).sqrt()
}

/// Field and dwell time that favour fast pairing with high success
/// probability: `ω = (1/2N) Σ_k Σ_l |g_k^l|`, `τ = 1/ω`.
pub fn optimal_params(c: &CouplingSet) -> Result<(f64, f64)> {
    let n = c.len() as f64;
    let total: f64 = c.vectors.iter().map(|g| g.abs().sum()).sum();
    if total == 0.0 {
        return Err(Error::ZeroCouplings);
    }
    let omega = total / (2.0 * n);
    Ok((omega, 1.0 / omega))
}
