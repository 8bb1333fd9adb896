//! Bath spin positions relative to the central spin (at the origin, with the
//! quantization axis along `z`).

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Positions of the bath spins, in nanometres.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinGeometry {
    positions: Vec<Vector3<f64>>,
}

impl SpinGeometry {
    pub fn new(positions: Vec<Vector3<f64>>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Geometry("a bath needs at least one spin".into()));
        }
        for (index, p) in positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::Geometry(format!(
                    "spin {index} has a non-finite coordinate"
                )));
            }
            if p.norm() == 0.0 {
                return Err(Error::SpinAtOrigin { index });
            }
        }
        Ok(Self { positions })
    }

    /// Linear chain along `x` at height `z0`: spin `k` (0-based) sits at
    /// `x = (k + 1) · spacing`.
    pub fn chain(n: usize, spacing: f64, z0: f64) -> Result<Self> {
        Self::new(
            (1..=n)
                .map(|k| Vector3::new(k as f64 * spacing, 0.0, z0))
                .collect(),
        )
    }

    /// `n` spins uniformly distributed over the square `[-side/2, side/2]²`
    /// of the plane at height `z0`.
    pub fn plane(n: usize, side: f64, z0: f64, seed: u64) -> Result<Self> {
        if !(side > 0.0) {
            return Err(Error::Geometry("plane side length must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..n)
            .map(|_| {
                let x = (rng.random::<f64>() - 0.5) * side;
                let y = (rng.random::<f64>() - 0.5) * side;
                Vector3::new(x, y, z0)
            })
            .collect();
        Self::new(positions)
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Rotate every position about the `z` axis.
    pub fn rotated_about_z(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            positions: self
                .positions
                .iter()
                .map(|p| Vector3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z))
                .collect(),
        }
    }
}
