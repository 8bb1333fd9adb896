//! Entanglement and correlation diagnostics of bath states.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;

use crate::coupling::CouplingSet;
use crate::dense::BathState;
use crate::error::{Error, Result};
use crate::linalg::{apply_product_left, apply_product_right_adjoint, hermitian_eigen, sigma_y, Mat2, Mat4, ZERO};
use crate::par::Execution;
use crate::rdm::PairRdms;
use crate::C64;

/// Best-phase fidelity above which a pair counts as entangled.
pub const DEFAULT_PAIR_THRESHOLD: f64 = 0.5;

const PSD_TOLERANCE: f64 = 1e-8;

fn hermitian_parts(rho: &Mat4) -> (Vec<f64>, Mat4) {
    let eig = rho.symmetric_eigen();
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

/// Wootters concurrence of a two-spin state.
pub fn concurrence(rho: &Mat4) -> Result<f64> {
    let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if herm > PSD_TOLERANCE {
        return Err(Error::Domain("two-spin state is not Hermitian".into()));
    }
    let (vals, vecs) = hermitian_parts(rho);
    if vals.iter().any(|&l| l < -PSD_TOLERANCE) {
        return Err(Error::Domain("two-spin state is not positive semidefinite".into()));
    }
    let sqrt_rho = vecs * Mat4::from_diagonal(&nalgebra::Vector4::from_iterator(vals.iter().map(|&l| C64::from(l.max(0.0).sqrt())))) * vecs.adjoint();
    let yy = sigma_y().kronecker(&sigma_y());
    let flipped = yy * rho.conjugate() * yy;
    let r = sqrt_rho * flipped * sqrt_rho;
    let (mut lambdas, _) = hermitian_parts(&((r + r.adjoint()) * C64::from(0.5)));
    for l in &mut lambdas {
        *l = l.max(0.0).sqrt();
    }
    lambdas.sort_by(|a, b| b.total_cmp(a));
    Ok((lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).max(0.0))
}

/// `⟨S̃(φ)|ρ|S̃(φ)⟩` with `|S̃(φ)⟩ = (|1,−1⟩ − e^{iφ}|−1,1⟩)/√2`.
pub fn pair_fidelity(rho: &Mat4, phi: f64) -> f64 {
    let phase = C64::from_polar(1.0, phi);
    0.5 * (rho[(1, 1)].re + rho[(2, 2)].re) - (phase * rho[(1, 2)]).re
}

/// Phase in `[0, 2π)` maximizing [`pair_fidelity`], and that fidelity.
pub fn best_phase(rho: &Mat4) -> (f64, f64) {
    let coherence = rho[(1, 2)];
    let fidelity = 0.5 * (rho[(1, 1)].re + rho[(2, 2)].re) + coherence.norm();
    let phi = if coherence.norm() == 0.0 { 0.0 } else { (PI - coherence.arg()).rem_euclid(TAU) };
    (phi, fidelity)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub i: usize,
    pub j: usize,
    pub phase: f64,
    pub fidelity: f64,
}

/// Greedy matching of the bath into phased-singlet pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAssignment {
    /// Disjoint pairs in the order they were selected (best first).
    pub pairs: Vec<MatchedPair>,
    /// Spins left over (one for odd `N`).
    pub leftover: Vec<usize>,
    pub threshold: f64,
}

impl PairAssignment {
    /// Pairs whose fidelity exceeds the threshold.
    pub fn paired(&self) -> impl Iterator<Item = &MatchedPair> {
        self.pairs.iter().filter(move |p| p.fidelity > self.threshold)
    }

    pub fn is_fully_paired(&self) -> bool {
        !self.pairs.is_empty() && self.paired().count() == self.pairs.len()
    }

    /// Index pairs sorted ascending, for comparing against a pattern.
    pub fn sorted_pairs(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = self.pairs.iter().map(|p| (p.i, p.j)).collect();
        v.sort_unstable();
        v
    }
}

/// Repeatedly match the unmatched pair of highest best-phase fidelity; ties
/// go to the lexicographically smallest pair.
pub fn detect_pairing(rdms: &PairRdms, threshold: f64) -> PairAssignment {
    let mut candidates: Vec<MatchedPair> = rdms
        .iter()
        .map(|((i, j), rho)| {
            let (phase, fidelity) = best_phase(rho);
            MatchedPair { i, j, phase, fidelity }
        })
        .collect();
    candidates.sort_by(|a, b| b.fidelity.total_cmp(&a.fidelity).then((a.i, a.j).cmp(&(b.i, b.j))));
    let mut used = vec![false; rdms.spins()];
    let mut pairs = Vec::new();
    for c in candidates {
        if !used[c.i] && !used[c.j] {
            used[c.i] = true;
            used[c.j] = true;
            pairs.push(c);
        }
    }
    let leftover = (0..rdms.spins()).filter(|&k| !used[k]).collect();
    PairAssignment { pairs, leftover, threshold }
}

/// Mean concurrence over the given pairs.
pub fn mean_concurrence<'a>(rdms: &PairRdms, pairs: impl IntoIterator<Item = &'a MatchedPair>) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for p in pairs {
        total += concurrence(&rdms.get(p.i, p.j))?;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Diagnostics of a steady state reached without external field.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalReport {
    /// Frobenius norm of the off-diagonal part in the eigenbasis of `Σ_k g_k·σ_k`.
    pub off_diagonal_norm: f64,
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    pub purity: f64,
    /// Number of eigenvalues above the support tolerance.
    pub rank: usize,
    /// Coupling-eigenbasis configurations carrying weight, as `(index, weight)`.
    pub support: Vec<(usize, f64)>,
    /// Whether the support is closed under flipping every spin, i.e. made
    /// of the two-branch superposition pairs.
    pub support_complement_closed: bool,
    /// Largest `|Σ_k s_k|` over the support, `s_k = ±1` along each coupling.
    pub max_support_magnetization: i64,
}

const SUPPORT_TOLERANCE: f64 = 1e-6;

pub fn classical_steady_state_check(state: &BathState, c: &CouplingSet) -> Result<ClassicalReport> {
    if c.omega != 0.0 {
        return Err(Error::Domain(format!("the classical check needs omega = 0, got {}", c.omega)));
    }
    let n = state.spins();
    if c.len() != n {
        return Err(Error::Dimension { expected: n, found: c.len() });
    }
    // Rotate each spin so that bit 0 is the +|g_k| eigenvector of g_k·σ.
    let rotations: Vec<Mat2> = c.vectors.iter().map(|g| coupling_eigenbasis(*g).adjoint()).collect();
    let mut rho = state.matrix().clone();
    apply_product_left(&mut rho, &rotations, Execution::default());
    apply_product_right_adjoint(&mut rho, &rotations, Execution::default());

    let dim = rho.nrows();
    let mut off = 0.0;
    for col in 0..dim {
        for row in 0..dim {
            if row != col {
                off += rho[(row, col)].norm_sqr();
            }
        }
    }
    let (mut eigenvalues, _) = hermitian_eigen(state.matrix());
    eigenvalues.reverse();
    let rank = eigenvalues.iter().filter(|&&l| l > SUPPORT_TOLERANCE).count();
    let support: Vec<(usize, f64)> = (0..dim)
        .map(|k| (k, rho[(k, k)].re))
        .filter(|&(_, w)| w > SUPPORT_TOLERANCE)
        .collect();
    let mask = dim - 1;
    let closed = support.iter().all(|&(k, _)| rho[(k ^ mask, k ^ mask)].re > SUPPORT_TOLERANCE);
    let max_mag = support
        .iter()
        .map(|&(k, _)| (n as i64 - 2 * k.count_ones() as i64).abs())
        .max()
        .unwrap_or(0);
    Ok(ClassicalReport {
        off_diagonal_norm: off.sqrt(),
        eigenvalues,
        purity: state.purity(),
        rank,
        support,
        support_complement_closed: closed,
        max_support_magnetization: max_mag,
    })
}

/// Unitary whose columns are the `+|g|` and `−|g|` eigenvectors of `g·σ`
/// (the standard basis when `g = 0`).
pub fn coupling_eigenbasis(g: Vector3<f64>) -> Mat2 {
    let r = g.norm();
    if r == 0.0 {
        return Mat2::identity();
    }
    let theta = (g.z / r).clamp(-1.0, 1.0).acos();
    let phi = g.y.atan2(g.x);
    let (s, co) = (0.5 * theta).sin_cos();
    let e = C64::from_polar(1.0, phi);
    Mat2::new(C64::from(co), -C64::from(s) * e.conj(), e * s, C64::from(co))
}

/// Singlet with relative phase, `(|1,−1⟩ − e^{iφ}|−1,1⟩)/√2`, as a density matrix.
pub fn phased_singlet(phi: f64) -> Mat4 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let v = nalgebra::Vector4::new(ZERO, C64::from(h), -C64::from_polar(h, phi), ZERO);
    v * v.adjoint()
}

pub fn maximally_mixed_pair() -> Mat4 {
    Mat4::identity() * C64::from(0.25)
}
