//! Echo-type pulse sequences on the central spin: verification of singlet
//! pairs, central-spin coherence and multi-species spectroscopy.
//!
//! Pulses are instantaneous rotations `exp(−iθσx/2)` of the central spin and
//! the central spin has no Hamiltonian of its own, so between the framing
//! π/2 pulses each central basis state follows a single path. Each path
//! drives the bath with a product operator `W_p = ⊗_k W_{p,k}`, and the
//! central spin's final state only depends on the overlaps
//! `Tr[W_q† W_p ρ_bath]`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Vector2, Vector3};

use crate::coupling::CouplingSet;
use crate::error::{Error, Result};
use crate::linalg::{sigma_x, Mat2, Mat4, ONE, ZERO};
use crate::propagator::{single_spin_propagators, PropagatorPair};
use crate::C64;

/// Default flip probability defining the repetition count `m*`.
pub const DEFAULT_FLIP_THRESHOLD: f64 = 0.5;

/// `exp(−iθσx/2)`.
pub fn central_rotation(theta: f64) -> Mat2 {
    let (s, c) = (0.5 * theta).sin_cos();
    Mat2::identity() * C64::from(c) - sigma_x() * C64::new(0.0, s)
}

/// A bath state that factorizes into one- and two-spin blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    Single { spin: usize, rho: Mat2 },
    Pair { first: usize, second: usize, rho: Mat4 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockState {
    n: usize,
    blocks: Vec<Block>,
}

fn mixed_spin() -> Mat2 {
    Mat2::identity() * C64::from(0.5)
}

impl BlockState {
    /// Blocks must cover `0..n` exactly once.
    pub fn new(n: usize, blocks: Vec<Block>) -> Result<Self> {
        let mut seen = vec![false; n];
        let mut claim = |k: usize| -> Result<()> {
            if k >= n || seen[k] {
                return Err(Error::Config(format!("spin {k} is missing from the bath or listed twice")));
            }
            seen[k] = true;
            Ok(())
        };
        for b in &blocks {
            match *b {
                Block::Single { spin, .. } => claim(spin)?,
                Block::Pair { first, second, .. } => {
                    claim(first)?;
                    claim(second)?;
                }
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("spin {k} is not assigned to any block")));
        }
        Ok(Self { n, blocks })
    }

    pub fn maximally_mixed(n: usize) -> Self {
        Self { n, blocks: (0..n).map(|spin| Block::Single { spin, rho: mixed_spin() }).collect() }
    }

    /// Every spin in `|+1⟩`.
    pub fn polarized(n: usize) -> Self {
        let up = Mat2::new(ONE, ZERO, ZERO, ZERO);
        Self { n, blocks: (0..n).map(|spin| Block::Single { spin, rho: up }).collect() }
    }

    /// Listed pairs in phased singlets, every other spin maximally mixed.
    pub fn singlet_paired(n: usize, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        let mut paired = vec![false; n];
        let mut blocks = Vec::new();
        for &(first, second, phase) in pairs {
            for k in [first, second] {
                if k >= n || paired[k] {
                    return Err(Error::Config(format!("spin {k} is missing from the bath or paired twice")));
                }
                paired[k] = true;
            }
            blocks.push(Block::Pair { first, second, rho: crate::analysis::phased_singlet(phase) });
        }
        blocks.extend((0..n).filter(|&k| !paired[k]).map(|spin| Block::Single { spin, rho: mixed_spin() }));
        Self::new(n, blocks)
    }

    /// Neighbouring spins `(0,1), (2,3), …` in plain singlets.
    pub fn adjacent_singlets(n: usize) -> Self {
        let pairs: Vec<_> = (0..n / 2).map(|p| (2 * p, 2 * p + 1, 0.0)).collect();
        Self::singlet_paired(n, &pairs).expect("adjacent pairs are disjoint")
    }

    pub fn spins(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// `Tr[(⊗_k ops[k]) ρ]`.
    pub fn expectation(&self, ops: &[Mat2]) -> C64 {
        debug_assert_eq!(ops.len(), self.n);
        self.blocks
            .iter()
            .map(|b| match b {
                Block::Single { spin, rho } => (ops[*spin] * rho).trace(),
                Block::Pair { first, second, rho } => (ops[*first].kronecker(&ops[*second]) * rho).trace(),
            })
            .product()
    }

    /// Dense matrix in register order (small `N` only).
    pub fn to_dense(&self) -> nalgebra::DMatrix<C64> {
        let n = self.n;
        let dim = 1usize << n;
        let bit = |x: usize, k: usize| (x >> (n - 1 - k)) & 1;
        nalgebra::DMatrix::from_fn(dim, dim, |r, c| {
            self.blocks
                .iter()
                .map(|b| match b {
                    Block::Single { spin, rho } => rho[(bit(r, *spin), bit(c, *spin))],
                    Block::Pair { first, second, rho } => {
                        let lr = 2 * bit(r, *first) + bit(r, *second);
                        let lc = 2 * bit(c, *first) + bit(c, *second);
                        rho[(lr, lc)]
                    }
                })
                .product()
        })
    }
}

/// `U_{π/2} − (U(τ) − U_π − U(τ))^m − U_{π/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSequence {
    pub repetitions: usize,
    pub tau: f64,
}

/// Final central-spin vector and bath operator of one central path.
struct Path {
    central: Vector2<C64>,
    bath: Vec<Mat2>,
}

impl PulseSequence {
    pub fn new(repetitions: usize, tau: f64) -> Result<Self> {
        if repetitions == 0 {
            return Err(Error::Config("a pulse sequence needs at least one repetition".into()));
        }
        if !(tau >= 0.0) {
            return Err(Error::Config(format!("inter-pulse time must be non-negative, got {tau}")));
        }
        Ok(Self { repetitions, tau })
    }

    /// Paths starting from the central `|0⟩` (index 0) and `|1⟩` components.
    fn paths(&self, props: &[PropagatorPair]) -> [Path; 2] {
        let half = central_rotation(FRAC_PI_2);
        let start = half * Vector2::new(ONE, ZERO);
        let flip = C64::new(0.0, -1.0);
        let mut out = [0usize, 1].map(|s0| {
            let mut s = s0;
            let mut amp = start[s0];
            let mut bath: Vec<Mat2> = vec![Mat2::identity(); props.len()];
            let evolve = |s: usize, bath: &mut Vec<Mat2>| {
                for (w, p) in bath.iter_mut().zip(props) {
                    *w = if s == 0 { p.plus } else { p.minus } * *w;
                }
            };
            for _ in 0..self.repetitions {
                evolve(s, &mut bath);
                s = 1 - s;
                amp *= flip;
                evolve(s, &mut bath);
            }
            let mut e = Vector2::zeros();
            e[s] = amp;
            Path { central: e, bath }
        });
        for p in &mut out {
            p.central = half * p.central;
        }
        out
    }

    /// Probability that the central spin does not end where it would without
    /// a bath.
    pub fn flip_probability(&self, props: &[PropagatorPair], bath: &BlockState) -> f64 {
        let paths = self.paths(props);
        let reference = paths[0].central + paths[1].central;
        let reference = reference / C64::from(reference.norm());
        let mut stay = 0.0;
        for p in 0..2 {
            for q in 0..2 {
                let ops: Vec<Mat2> = paths[q].bath.iter().zip(&paths[p].bath).map(|(wq, wp)| wq.adjoint() * wp).collect();
                let overlap = if p == q { ONE } else { bath.expectation(&ops) };
                stay += (reference.dotc(&paths[p].central) * paths[q].central.dotc(&reference) * overlap).re;
            }
        }
        (1.0 - stay).clamp(0.0, 1.0)
    }
}

/// Propagators for spins with individual Larmor frequencies.
pub fn species_propagators(spins: &[(Vector3<f64>, f64)], tau: f64) -> Result<Vec<PropagatorPair>> {
    spins.iter().map(|&(g, omega)| single_spin_propagators(g, omega, tau)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Crossing {
    Reached(usize),
    NotReached { max_probability: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationScan {
    /// Flip probability for `m = 1..=m_max`.
    pub curve: Vec<f64>,
    pub crossing: Crossing,
}

/// Two-spin verification bath `H = S^z (g₁ I^x₁ + g₂ I^x₂) + ω (I^z₁ + I^z₂)`.
pub fn verification_couplings(g1: f64, g2: f64, omega: f64) -> CouplingSet {
    CouplingSet { vectors: vec![Vector3::new(g1, 0.0, 0.0), Vector3::new(g2, 0.0, 0.0)], omega }
}

/// Inter-pulse time at the decoupling resonance with the bath precession.
pub fn default_verification_tau(omega: f64) -> f64 {
    PI / (4.0 * omega)
}

/// Flip probability after `m = 1..=m_max` repetitions and the first `m`
/// exceeding `threshold`.
pub fn verification_scan(
    c: &CouplingSet,
    bath: &BlockState,
    tau: f64,
    m_max: usize,
    threshold: f64,
) -> Result<VerificationScan> {
    if bath.spins() != c.len() {
        return Err(Error::Dimension { expected: c.len(), found: bath.spins() });
    }
    let props: Vec<PropagatorPair> = c.vectors.iter().map(|&g| single_spin_propagators(g, c.omega, tau)).collect::<Result<_>>()?;
    let curve = (1..=m_max)
        .map(|m| Ok(PulseSequence::new(m, tau)?.flip_probability(&props, bath)))
        .collect::<Result<Vec<f64>>>()?;
    let crossing = match curve.iter().position(|&p| p > threshold) {
        Some(i) => Crossing::Reached(i + 1),
        None => Crossing::NotReached { max_probability: curve.iter().copied().fold(0.0, f64::max) },
    };
    Ok(VerificationScan { curve, crossing })
}

/// `L(t) = |Tr[U⁻(t)† U⁺(t) ρ]|`, the coherence left in a central spin
/// prepared in `(|1⟩ + |−1⟩)/√2`.
pub fn coherence_trace(bath: &BlockState, c: &CouplingSet, times: &[f64]) -> Result<Vec<f64>> {
    if bath.spins() != c.len() {
        return Err(Error::Dimension { expected: c.len(), found: bath.spins() });
    }
    times
        .iter()
        .map(|&t| {
            let ops: Vec<Mat2> = c
                .vectors
                .iter()
                .map(|&g| single_spin_propagators(g, c.omega, t).map(|p| p.minus.adjoint() * p.plus))
                .collect::<Result<_>>()?;
            Ok(bath.expectation(&ops).norm().min(1.0))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preparation {
    Unpolarized,
    Polarized,
    /// Consecutive spins of the group in singlets.
    SingletPaired,
}

/// Spins sharing a Larmor frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesGroup {
    pub omega: f64,
    pub couplings: Vec<Vector3<f64>>,
    pub preparation: Preparation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesBath {
    pub groups: Vec<SpeciesGroup>,
}

impl SpeciesBath {
    /// Spins in group order with their own Larmor frequency.
    pub fn spins(&self) -> Vec<(Vector3<f64>, f64)> {
        self.groups.iter().flat_map(|g| g.couplings.iter().map(move |&v| (v, g.omega))).collect()
    }

    pub fn state(&self) -> Result<BlockState> {
        let n: usize = self.groups.iter().map(|g| g.couplings.len()).sum();
        let mut blocks = Vec::with_capacity(n);
        let mut offset = 0;
        let up = Mat2::new(ONE, ZERO, ZERO, ZERO);
        for g in &self.groups {
            let len = g.couplings.len();
            match g.preparation {
                Preparation::Unpolarized => blocks.extend((offset..offset + len).map(|spin| Block::Single { spin, rho: mixed_spin() })),
                Preparation::Polarized => blocks.extend((offset..offset + len).map(|spin| Block::Single { spin, rho: up })),
                Preparation::SingletPaired => {
                    let singlet = crate::analysis::phased_singlet(0.0);
                    for p in 0..len / 2 {
                        blocks.push(Block::Pair { first: offset + 2 * p, second: offset + 2 * p + 1, rho: singlet });
                    }
                    if len % 2 == 1 {
                        blocks.push(Block::Single { spin: offset + len - 1, rho: mixed_spin() });
                    }
                }
            }
            offset += len;
        }
        BlockState::new(n, blocks)
    }

    /// The same bath with the given groups removed.
    pub fn without_groups(&self, remove: &[usize]) -> Self {
        Self {
            groups: self.groups.iter().enumerate().filter(|(i, _)| !remove.contains(i)).map(|(_, g)| g.clone()).collect(),
        }
    }

    pub fn with_preparation(&self, group: usize, preparation: Preparation) -> Self {
        let mut out = self.clone();
        out.groups[group].preparation = preparation;
        out
    }
}

/// Central-spin transition probability after a fixed echo sequence of
/// `repetitions` blocks, as a function of the inter-pulse time.
pub fn spectroscopy_scan(bath: &SpeciesBath, taus: &[f64], repetitions: usize) -> Result<Vec<f64>> {
    let state = bath.state()?;
    let spins = bath.spins();
    taus.iter()
        .map(|&tau| {
            let props = species_propagators(&spins, tau)?;
            Ok(PulseSequence::new(repetitions, tau)?.flip_probability(&props, &state))
        })
        .collect()
}

/// Inter-pulse time at which a species with Larmor frequency `omega`
/// resonates with the echo sequence.
pub fn resonant_tau(omega: f64) -> f64 {
    PI / (4.0 * omega)
}

/// A local maximum of a sampled curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub index: usize,
    pub x: f64,
    pub height: f64,
    pub prominence: f64,
}

/// Interior local maxima whose prominence (height above the higher of the
/// two surrounding minima) exceeds `min_prominence`. Plateaus count once.
pub fn find_features(xs: &[f64], ys: &[f64], min_prominence: f64) -> Vec<Feature> {
    let n = ys.len().min(xs.len());
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if ys[i] > ys[i - 1] {
            let mut j = i;
            while j + 1 < n && ys[j + 1] == ys[i] {
                j += 1;
            }
            if j + 1 < n && ys[j + 1] < ys[i] {
                let peak = ys[i];
                let left = ys[..i].iter().rev().take_while(|&&y| y <= peak).fold(peak, |m, &y| m.min(y));
                let right = ys[j + 1..].iter().take_while(|&&y| y <= peak).fold(peak, |m, &y| m.min(y));
                let prominence = peak - left.max(right);
                if prominence > min_prominence {
                    out.push(Feature { index: i, x: xs[i], height: peak, prominence });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Whether the features are exactly one per expected position, each within
/// `tolerance`.
pub fn features_resolve(features: &[Feature], expected: &[f64], tolerance: f64) -> bool {
    features.len() == expected.len()
        && expected.iter().all(|&x| features.iter().filter(|f| (f.x - x).abs() <= tolerance).count() == 1)
}
