//! Sum-of-product-states engine.
//!
//! For a product input `|ψ₀⟩ = ⊗_k |ψ_k⟩`, `V^m |ψ₀⟩` expands into `2^m`
//! weighted product states, one per branch string: bit 0 applies `U⁺` to
//! every spin (weight `|α|²`), bit 1 applies `U⁻` (weight `|β|²`). Norms and
//! reduced states follow from the per-spin overlap (Gram) matrices
//! `G_k[a, b] = ⟨v_{a,k}|v_{b,k}⟩`.
//!
//! Cost of step `m`: `O(2^m · N)` vector updates and `O(4^m · N)` overlaps,
//! of which only the cross-branch quarter is new; the same-branch blocks
//! are copied because the propagators are unitary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coupling::CouplingSet;
use crate::dense::ProtocolConfig;
use crate::error::{Error, Result};
use crate::linalg::{kron_vec, Mat2, Mat4, Spinor, ZERO};
use crate::par::Execution;
use crate::propagator::{bath_propagators, PropagatorPair};
use crate::rdm::PairRdms;
use crate::C64;

use nalgebra::{DVector, Vector4};

pub const DEFAULT_MAX_BRANCHES: usize = 1 << 20;
/// Complex overlap entries kept across all spins (1 GiB).
pub const DEFAULT_MAX_GRAM_ENTRIES: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub max_branches: usize,
    pub max_gram_entries: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_branches: DEFAULT_MAX_BRANCHES, max_gram_entries: DEFAULT_MAX_GRAM_ENTRIES }
    }
}

/// `V^m |ψ₀⟩` as `Σ_a w_a ⊗_k |v_{a,k}⟩`.
#[derive(Debug, Clone)]
pub struct BranchEnsemble {
    n: usize,
    weights: Vec<f64>,
    /// `vectors[k][a]`: spin `k` of branch `a`.
    vectors: Vec<Vec<Spinor>>,
    /// `gram[k][a * B + b] = ⟨v_{a,k}|v_{b,k}⟩`.
    gram: Vec<Vec<C64>>,
    /// Squared norm after each step, starting with the input (1).
    norms: Vec<f64>,
    limits: Limits,
}

impl BranchEnsemble {
    /// Unextended ensemble for a product state; each spinor is normalized.
    pub fn product(states: &[Spinor]) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Geometry("a bath needs at least one spin".into()));
        }
        let mut vectors = Vec::with_capacity(states.len());
        for (k, s) in states.iter().enumerate() {
            let norm = s.norm();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::Domain(format!("spin {k} has a zero or non-finite state")));
            }
            vectors.push(vec![s / C64::from(norm)]);
        }
        Ok(Self {
            n: states.len(),
            weights: vec![1.0],
            gram: vec![vec![C64::from(1.0)]; states.len()],
            vectors,
            norms: vec![1.0],
            limits: Limits::default(),
        })
    }

    pub fn with_limits(mut self, limits: Limits) -> Self {
        self.limits = limits;
        self
    }

    pub fn spins(&self) -> usize {
        self.n
    }

    pub fn branch_count(&self) -> usize {
        self.weights.len()
    }

    pub fn measurements(&self) -> usize {
        self.norms.len() - 1
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Spin `k` of branch `a`.
    pub fn vector(&self, a: usize, k: usize) -> Spinor {
        self.vectors[k][a]
    }

    /// `‖V^m ψ₀‖²`, the probability that all `m` readouts succeed.
    pub fn success_probability(&self) -> f64 {
        *self.norms.last().expect("norm history is never empty")
    }

    /// Probability of the last readout given the earlier ones.
    pub fn conditional_probability(&self) -> f64 {
        match self.norms.len() {
            0 | 1 => 1.0,
            l => self.norms[l - 1] / self.norms[l - 2],
        }
    }

    pub fn norm_history(&self) -> &[f64] {
        &self.norms
    }

    /// One more application of `V`.
    pub fn extend(&self, props: &[PropagatorPair], alpha: C64, beta: C64, exec: Execution) -> Result<Self> {
        if props.len() != self.n {
            return Err(Error::Dimension { expected: self.n, found: props.len() });
        }
        let (wp, wm) = (alpha.norm_sqr(), beta.norm_sqr());
        if (wp + wm - 1.0).abs() > 1e-12 {
            return Err(Error::Config("projection amplitudes must satisfy |alpha|^2 + |beta|^2 = 1".into()));
        }
        let b = self.branch_count();
        let b2 = 2 * b;
        if b2 > self.limits.max_branches {
            return Err(Error::Capacity { what: "branches", requested: b2, limit: self.limits.max_branches });
        }
        let entries = b2.saturating_mul(b2).saturating_mul(self.n);
        if entries > self.limits.max_gram_entries {
            return Err(Error::Capacity { what: "overlap entries", requested: entries, limit: self.limits.max_gram_entries });
        }

        let weights: Vec<f64> = self.weights.iter().map(|w| w * wp).chain(self.weights.iter().map(|w| w * wm)).collect();
        let vectors: Vec<Vec<Spinor>> = exec.map_indexed(self.n, |k| {
            let p = &props[k];
            self.vectors[k].iter().map(|v| p.plus * v).chain(self.vectors[k].iter().map(|v| p.minus * v)).collect()
        });
        let gram = exec.map_indexed(self.n, |k| {
            let old = &self.gram[k];
            let vs = &vectors[k];
            let mut g = vec![ZERO; b2 * b2];
            for a in 0..b {
                let row = &old[a * b..(a + 1) * b];
                g[a * b2..a * b2 + b].copy_from_slice(row);
                g[(a + b) * b2 + b..(a + b) * b2 + b2].copy_from_slice(row);
            }
            for a in 0..b {
                let va = vs[a];
                for c in 0..b {
                    let cross = va.dotc(&vs[b + c]);
                    g[a * b2 + b + c] = cross;
                    g[(b + c) * b2 + a] = cross.conj();
                }
            }
            g
        });
        let mut next = Self { n: self.n, weights, vectors, gram, norms: self.norms.clone(), limits: self.limits };
        let norm = next.gram_norm(exec);
        next.norms.push(norm);
        Ok(next)
    }

    /// `Σ_{a,b} w_a w_b ∏_k G_k[a, b]`, row sums combined in index order.
    fn gram_norm(&self, exec: Execution) -> f64 {
        let b = self.branch_count();
        let rows = exec.map_indexed(b, |a| {
            let mut acc = ZERO;
            for c in 0..b {
                let mut prod = C64::from(self.weights[a] * self.weights[c]);
                for g in &self.gram {
                    prod *= g[a * b + c];
                }
                acc += prod;
            }
            acc
        });
        rows.into_iter().fold(ZERO, |s, r| s + r).re
    }

    /// Rebuild every overlap from the stored vectors.
    pub fn recompute_gram(&self) -> Vec<Vec<C64>> {
        let b = self.branch_count();
        self.vectors
            .iter()
            .map(|vs| {
                let mut g = vec![ZERO; b * b];
                for a in 0..b {
                    for c in 0..b {
                        g[a * b + c] = vs[a].dotc(&vs[c]);
                    }
                }
                g
            })
            .collect()
    }

    pub fn gram(&self) -> &[Vec<C64>] {
        &self.gram
    }

    /// Normalized reduced state of spins `i` (first factor) and `j`.
    pub fn reduced_density_matrix(&self, i: usize, j: usize) -> Result<Mat4> {
        if i == j || i >= self.n || j >= self.n {
            return Err(Error::Domain(format!("invalid spin pair ({i}, {j}) for {} spins", self.n)));
        }
        let raw = self.unnormalized_rdm(i, j);
        let tr = raw.trace().re;
        if !(tr > 0.0) {
            return Err(Error::Domain("ensemble has zero norm".into()));
        }
        Ok(raw / C64::from(tr))
    }

    /// `Σ_{a,b} w_a w_b ∏_{k∉{i,j}} G_k[b, a] |v_ai v_aj⟩⟨v_bi v_bj|`.
    fn unnormalized_rdm(&self, i: usize, j: usize) -> Mat4 {
        let b = self.branch_count();
        let pair = |a: usize| -> Vector4<C64> {
            let (x, y) = (self.vectors[i][a], self.vectors[j][a]);
            Vector4::new(x[0] * y[0], x[0] * y[1], x[1] * y[0], x[1] * y[1])
        };
        let kets: Vec<Vector4<C64>> = (0..b).map(pair).collect();
        let others: Vec<&Vec<C64>> = self.gram.iter().enumerate().filter(|&(k, _)| k != i && k != j).map(|(_, g)| g).collect();
        let mut out = Mat4::zeros();
        for a in 0..b {
            let mut bra = Vector4::<C64>::zeros();
            for c in 0..b {
                let mut coef = C64::from(self.weights[c]);
                for g in &others {
                    coef *= g[c * b + a];
                }
                bra += kets[c].map(|z| z.conj()) * coef;
            }
            out += kets[a] * bra.transpose() * C64::from(self.weights[a]);
        }
        out
    }

    /// Normalized reduced states of all pairs.
    pub fn pair_rdms(&self, exec: Execution) -> Result<PairRdms> {
        let tr = self.success_probability();
        if !(tr > 0.0) {
            return Err(Error::Domain("ensemble has zero norm".into()));
        }
        let raw = self.unnormalized_pair_rdms(exec);
        Ok(PairRdms::from_fn(self.n, Execution::Sequential, |i, j| {
            let m = raw.get(i, j);
            m / m.trace()
        }))
    }

    /// Pair reduced states of the unnormalized `V^m|ψ₀⟩⟨ψ₀|V†^m`.
    pub fn unnormalized_pair_rdms(&self, exec: Execution) -> PairRdms {
        PairRdms::from_fn(self.n, exec, |i, j| self.unnormalized_rdm(i, j))
    }

    /// `⟨self|other⟩` between two ensembles on the same spins.
    pub fn overlap(&self, other: &Self, exec: Execution) -> Result<C64> {
        if other.n != self.n {
            return Err(Error::Dimension { expected: self.n, found: other.n });
        }
        let (ba, bb) = (self.branch_count(), other.branch_count());
        let rows = exec.map_indexed(ba, |a| {
            let mut acc = ZERO;
            for c in 0..bb {
                let mut prod = C64::from(self.weights[a] * other.weights[c]);
                for k in 0..self.n {
                    prod *= self.vectors[k][a].dotc(&other.vectors[k][c]);
                }
                acc += prod;
            }
            acc
        });
        Ok(rows.into_iter().fold(ZERO, |s, r| s + r))
    }

    /// Explicit `2^N` state vector (small `N` only; used for cross-checks).
    pub fn to_state_vector(&self) -> DVector<C64> {
        let dim = 1usize << self.n;
        let mut out = DVector::zeros(dim);
        for a in 0..self.branch_count() {
            let parts: Vec<Spinor> = (0..self.n).map(|k| self.vectors[k][a]).collect();
            out += kron_vec(&parts) * C64::from(self.weights[a]);
        }
        out
    }
}

/// Apply `cfg.measurements` rounds to a product state. Dephasing cannot be
/// represented by a single pure branch sum and is rejected.
pub fn run_pure(states: &[Spinor], c: &CouplingSet, cfg: &ProtocolConfig, exec: Execution) -> Result<BranchEnsemble> {
    cfg.validate()?;
    if cfg.dephasing_rate > 0.0 {
        return Err(Error::Config("the factored engine does not support dephasing; use the dense engine".into()));
    }
    if states.len() != c.len() {
        return Err(Error::Dimension { expected: c.len(), found: states.len() });
    }
    let props = bath_propagators(&c.with_omega(cfg.omega), cfg.tau)?;
    let mut ens = BranchEnsemble::product(states)?;
    for step in 1..=cfg.measurements {
        ens = ens.extend(&props, cfg.alpha, cfg.beta, exec)?;
        let p = ens.conditional_probability();
        if !(p >= cfg.extinction_floor) {
            return Err(Error::Extinct { step, probability: p, floor: cfg.extinction_floor });
        }
    }
    Ok(ens)
}

/// How product inputs are drawn to unravel the unpolarized bath.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// Independent Haar-random spin directions.
    #[default]
    Haar,
    /// Independent uniformly random `|±1⟩` states.
    ZBasis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloOptions {
    pub samples: usize,
    pub seed: u64,
    pub sampling: Sampling,
    pub pair_rdms: bool,
}

impl MonteCarloOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed, sampling: Sampling::Haar, pair_rdms: true }
    }
}

/// Estimates for the post-selected evolution of the maximally mixed bath.
#[derive(Debug, Clone)]
pub struct MonteCarloEstimate {
    pub samples: usize,
    /// Mean `‖V^m ψ‖²` after each step `m = 1..M`.
    pub cumulative: Vec<f64>,
    /// Ratios of consecutive entries of `cumulative`.
    pub conditional: Vec<f64>,
    pub success_probability: f64,
    pub standard_error: f64,
    /// `Tr ρ²` of the normalized state after each step, from overlaps of
    /// independent sample pairs; empty with fewer than two samples.
    pub purity: Vec<f64>,
    /// Standard error of the final purity estimate.
    pub purity_standard_error: Option<f64>,
    /// Pair reduced states of the normalized output.
    pub pair_rdms: Option<PairRdms>,
}

fn sample_states(n: usize, sampling: Sampling, rng: &mut ChaCha8Rng) -> Vec<Spinor> {
    (0..n)
        .map(|_| match sampling {
            Sampling::Haar => {
                let z: f64 = rng.random_range(-1.0..=1.0);
                let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let (c, s) = (((1.0 + z) / 2.0).sqrt(), ((1.0 - z) / 2.0).max(0.0).sqrt());
                Spinor::new(C64::from(c), C64::from_polar(s, phi))
            }
            Sampling::ZBasis => {
                if rng.random::<bool>() {
                    Spinor::new(C64::from(1.0), ZERO)
                } else {
                    Spinor::new(ZERO, C64::from(1.0))
                }
            }
        })
        .collect()
}

/// Draw the `index`-th input of a seeded run. Each sample has its own
/// stream, so results do not depend on how samples are scheduled.
pub fn sample_input(n: usize, sampling: Sampling, seed: u64, index: usize) -> Vec<Spinor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    sample_states(n, sampling, &mut rng)
}

/// Unravel `V^M (𝟙/2^N) V†^M` over random product inputs. Samples are
/// processed in independent pairs; each pair's overlap gives an unbiased
/// estimate of `Tr[(V^M ρ₀ V†^M)²]`.
pub fn mixed_state_monte_carlo(
    c: &CouplingSet,
    cfg: &ProtocolConfig,
    opts: &MonteCarloOptions,
    exec: Execution,
) -> Result<MonteCarloEstimate> {
    cfg.validate()?;
    if opts.samples == 0 {
        return Err(Error::Config("Monte Carlo needs at least one sample".into()));
    }
    if cfg.dephasing_rate > 0.0 {
        return Err(Error::Config("the factored engine does not support dephasing; use the dense engine".into()));
    }
    let n = c.len();
    let props = bath_propagators(&c.with_omega(cfg.omega), cfg.tau)?;
    let start = |index: usize| BranchEnsemble::product(&sample_input(n, opts.sampling, opts.seed, index));
    struct Sample {
        norms: Vec<f64>,
        rdms: Option<PairRdms>,
        /// `|⟨φ_first|φ_second⟩|²` after each step, stored on the first of a pair.
        overlaps: Option<Vec<f64>>,
    }
    let groups = opts.samples.div_ceil(2);
    let per_group = exec.map_indexed(groups, |gidx| -> Result<Vec<Sample>> {
        let mut first = start(2 * gidx)?;
        let mut second = if 2 * gidx + 1 < opts.samples { Some(start(2 * gidx + 1)?) } else { None };
        let mut overlaps = second.as_ref().map(|_| Vec::with_capacity(cfg.measurements));
        for _ in 0..cfg.measurements {
            first = first.extend(&props, cfg.alpha, cfg.beta, Execution::Sequential)?;
            if let Some(s) = second.as_mut() {
                *s = s.extend(&props, cfg.alpha, cfg.beta, Execution::Sequential)?;
                let o = first.overlap(s, Execution::Sequential)?.norm_sqr();
                overlaps.as_mut().expect("paired sample").push(o);
            }
        }
        let mut out = Vec::with_capacity(2);
        for (k, ens) in std::iter::once(&first).chain(second.iter()).enumerate() {
            out.push(Sample {
                norms: ens.norms[1..].to_vec(),
                rdms: opts.pair_rdms.then(|| ens.unnormalized_pair_rdms(Execution::Sequential)),
                overlaps: if k == 0 { overlaps.take() } else { None },
            });
        }
        Ok(out)
    });
    let mut samples = Vec::with_capacity(opts.samples);
    for g in per_group {
        samples.extend(g?);
    }

    let r = samples.len() as f64;
    let m = cfg.measurements;
    let mut cumulative = vec![0.0; m];
    for s in &samples {
        for (acc, v) in cumulative.iter_mut().zip(&s.norms) {
            *acc += v;
        }
    }
    cumulative.iter_mut().for_each(|v| *v /= r);
    let conditional = (0..m).map(|k| if k == 0 { cumulative[0] } else { cumulative[k] / cumulative[k - 1] }).collect();
    let p = cumulative[m - 1];
    let variance = if samples.len() > 1 {
        samples.iter().map(|s| (s.norms[m - 1] - p).powi(2)).sum::<f64>() / (r - 1.0)
    } else {
        0.0
    };
    let standard_error = (variance / r).sqrt();

    let overlaps: Vec<&Vec<f64>> = samples.iter().filter_map(|s| s.overlaps.as_ref()).collect();
    let (purity, purity_standard_error) = if overlaps.is_empty() {
        (Vec::new(), None)
    } else {
        let k = overlaps.len() as f64;
        let per_step = (0..m)
            .map(|step| {
                let mean = overlaps.iter().map(|o| o[step]).sum::<f64>() / k;
                mean / (cumulative[step] * cumulative[step])
            })
            .collect();
        let last: Vec<f64> = overlaps.iter().map(|o| o[m - 1]).collect();
        let mean = last.iter().sum::<f64>() / k;
        let var = if last.len() > 1 { last.iter().map(|o| (o - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
        (per_step, Some((var / k).sqrt() / (p * p)))
    };

    let pair_rdms = if opts.pair_rdms && n >= 2 {
        let tables: Vec<&PairRdms> = samples.iter().filter_map(|s| s.rdms.as_ref()).collect();
        Some(PairRdms::from_fn(n, Execution::Sequential, |i, j| {
            let mut acc = Mat4::zeros();
            for t in &tables {
                acc += t.get(i, j);
            }
            let tr = acc.trace();
            if tr.norm() > 0.0 { acc / tr } else { acc }
        }))
    } else {
        None
    };

    Ok(MonteCarloEstimate {
        samples: opts.samples,
        cumulative,
        conditional,
        success_probability: p,
        standard_error,
        purity,
        purity_standard_error,
        pair_rdms,
    })
}

/// Per-spin `|ψ_k⟩⟨ψ_k|` of a product input, for dense comparisons.
pub fn product_density(states: &[Spinor]) -> Vec<Mat2> {
    states
        .iter()
        .map(|s| {
            let v = s / C64::from(s.norm());
            v * v.adjoint()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{run_protocol, BathState};
    use crate::linalg::{kron_all, ONE};
    use nalgebra::Vector3;

    fn random_couplings(n: usize, omega: f64, seed: u64) -> CouplingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        CouplingSet::new(v, omega).unwrap()
    }

    fn half() -> C64 {
        C64::from(std::f64::consts::FRAC_1_SQRT_2)
    }

    #[test]
    fn first_step_splits_into_two_branches() {
        let c = random_couplings(3, 0.4, 1);
        let props = bath_propagators(&c, 0.7).unwrap();
        let states = sample_input(3, Sampling::Haar, 5, 0);
        let ens = BranchEnsemble::product(&states).unwrap().extend(&props, half(), half(), Execution::Sequential).unwrap();
        assert_eq!(ens.branch_count(), 2);
        assert!(ens.weights().iter().all(|w| (w - 0.5).abs() < 1e-15));
        for k in 0..3 {
            let s = states[k].normalize();
            assert!((ens.vector(0, k) - props[k].plus * s).norm() < 1e-15);
            assert!((ens.vector(1, k) - props[k].minus * s).norm() < 1e-15);
        }
    }

    #[test]
    fn longitudinal_spin_norm_decays_as_cosine_power() {
        let (g, tau) = (0.6, 0.9);
        let c = CouplingSet::new(vec![Vector3::new(0.0, 0.0, g)], 0.0).unwrap();
        let props = bath_propagators(&c, tau).unwrap();
        let mut ens = BranchEnsemble::product(&[Spinor::new(ONE, C64::new(0.3, 0.4))]).unwrap();
        for m in 1..=6 {
            ens = ens.extend(&props, half(), half(), Execution::Sequential).unwrap();
            assert!((ens.success_probability() - (g * tau).cos().powi(2 * m)).abs() < 1e-13);
        }
    }

    #[test]
    fn agrees_with_dense_engine() {
        let n = 6;
        let c = random_couplings(n, 0.9, 2);
        let cfg = ProtocolConfig::new(0.9, 0.8, 8);
        let states = sample_input(n, Sampling::Haar, 3, 0);
        let ens = run_pure(&states, &c, &cfg, Execution::Parallel).unwrap();
        let rho0 = BathState::product(&states).unwrap();
        let traj = run_protocol(&rho0, &cfg, &c, Execution::Parallel).unwrap();
        for (m, r) in traj.records.iter().enumerate() {
            assert!((ens.norm_history()[m + 1] - r.cumulative_p).abs() < 1e-10);
        }
        let dense = traj.final_state.pair_rdms(Execution::Parallel);
        let fact = ens.pair_rdms(Execution::Parallel).unwrap();
        for ((i, j), m) in dense.iter() {
            assert!((m - fact.get(i, j)).norm() < 1e-10, "pair ({i},{j})");
        }
        let swapped = ens.reduced_density_matrix(3, 1).unwrap();
        assert!((swapped - traj.final_state.pair_rdm(3, 1).unwrap()).norm() < 1e-10);
    }

    #[test]
    fn state_vector_matches_explicit_power() {
        let n = 3;
        let c = random_couplings(n, 0.3, 4);
        let (a, b) = (C64::new(0.6, 0.0), C64::new(0.0, 0.8));
        let v = crate::dense::build_v(&c, 1.3, a, b).unwrap().to_dense();
        let props = bath_propagators(&c, 1.3).unwrap();
        let states = sample_input(n, Sampling::Haar, 9, 2);
        let mut ens = BranchEnsemble::product(&states).unwrap();
        let mut psi = kron_vec(&states.iter().map(|s| s.normalize()).collect::<Vec<_>>());
        for _ in 0..4 {
            ens = ens.extend(&props, a, b, Execution::Sequential).unwrap();
            psi = &v * psi;
        }
        assert!((ens.to_state_vector() - &psi).norm() < 1e-12);
        assert!((ens.success_probability() - psi.norm_squared()).abs() < 1e-12);
        let self_overlap = ens.overlap(&ens, Execution::Sequential).unwrap();
        assert!((self_overlap.re - psi.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn incremental_gram_equals_recomputed() {
        let c = random_couplings(4, 0.5, 6);
        let cfg = ProtocolConfig::new(0.5, 1.0, 6);
        let ens = run_pure(&sample_input(4, Sampling::Haar, 1, 1), &c, &cfg, Execution::Parallel).unwrap();
        let fresh = ens.recompute_gram();
        for (a, b) in ens.gram().iter().zip(&fresh) {
            let worst = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(worst < 1e-12);
        }
    }

    #[test]
    fn parallel_and_sequential_reductions_agree() {
        let c = random_couplings(5, 0.7, 7);
        let cfg = ProtocolConfig::new(0.7, 0.9, 7);
        let states = sample_input(5, Sampling::Haar, 2, 0);
        let seq = run_pure(&states, &c, &cfg, Execution::Sequential).unwrap();
        let par = run_pure(&states, &c, &cfg, Execution::Parallel).unwrap();
        for (a, b) in seq.norm_history().iter().zip(par.norm_history()) {
            assert!((a - b).abs() < 1e-12);
        }
        for threads in [1, 2, 3, 8] {
            let p = crate::par::with_threads(threads, || run_pure(&states, &c, &cfg, Execution::Parallel).unwrap());
            assert_eq!(p.norm_history(), par.norm_history());
        }
    }

    #[test]
    fn unextended_rdm_is_product() {
        let states = sample_input(3, Sampling::Haar, 4, 0);
        let ens = BranchEnsemble::product(&states).unwrap();
        let rho = product_density(&states);
        let got = ens.reduced_density_matrix(0, 2).unwrap();
        assert!((got - rho[0].kronecker(&rho[2])).norm() < 1e-14);
        assert!(ens.reduced_density_matrix(1, 1).is_err());
    }

    #[test]
    fn branch_cap_is_enforced() {
        let c = random_couplings(2, 0.5, 8);
        let props = bath_propagators(&c, 1.0).unwrap();
        let limits = Limits { max_branches: 4, max_gram_entries: usize::MAX };
        let mut ens = BranchEnsemble::product(&sample_input(2, Sampling::Haar, 0, 0)).unwrap().with_limits(limits);
        for _ in 0..2 {
            ens = ens.extend(&props, half(), half(), Execution::Sequential).unwrap();
        }
        let err = ens.extend(&props, half(), half(), Execution::Sequential).unwrap_err();
        assert!(matches!(err, Error::Capacity { requested: 8, limit: 4, .. }));
    }

    #[test]
    fn dephasing_rejected() {
        let c = random_couplings(2, 0.5, 8);
        let mut cfg = ProtocolConfig::new(0.5, 1.0, 2);
        cfg.dephasing_rate = 0.1;
        assert!(matches!(run_pure(&sample_input(2, Sampling::Haar, 0, 0), &c, &cfg, Execution::Sequential), Err(Error::Config(_))));
    }

    #[test]
    fn single_unitary_sample_reproduces_unitary_evolution() {
        let n = 3;
        let c = random_couplings(n, 0.4, 9);
        let mut cfg = ProtocolConfig::new(0.4, 0.6, 5);
        cfg.alpha = ONE;
        cfg.beta = ZERO;
        let opts = MonteCarloOptions::new(1, 17);
        let est = mixed_state_monte_carlo(&c, &cfg, &opts, Execution::Sequential).unwrap();
        assert!((est.success_probability - 1.0).abs() < 1e-12);
        assert!(est.purity.is_empty());

        let states = sample_input(n, Sampling::Haar, 17, 0);
        let props = bath_propagators(&c, 0.6).unwrap();
        let mut psi = kron_vec(&states);
        let u = kron_all(&props.iter().map(|p| p.plus).collect::<Vec<_>>());
        for _ in 0..5 {
            psi = &u * psi;
        }
        let rho = &psi * psi.adjoint();
        let dense = BathState::from_matrix(n, rho).unwrap();
        let rdms = est.pair_rdms.unwrap();
        for ((i, j), m) in rdms.iter() {
            assert!((m - dense.pair_rdm(i, j).unwrap()).norm() < 1e-12);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let c = random_couplings(4, 0.6, 10);
        let cfg = ProtocolConfig::new(0.6, 1.0, 4);
        let opts = MonteCarloOptions::new(33, 99);
        let a = mixed_state_monte_carlo(&c, &cfg, &opts, Execution::Parallel).unwrap();
        let b = crate::par::with_threads(3, || mixed_state_monte_carlo(&c, &cfg, &opts, Execution::Parallel).unwrap());
        let s = mixed_state_monte_carlo(&c, &cfg, &opts, Execution::Sequential).unwrap();
        for other in [&b, &s] {
            assert_eq!(a.cumulative, other.cumulative);
            assert_eq!(a.purity, other.purity);
            assert_eq!(a.pair_rdms, other.pair_rdms);
        }
    }

    #[test]
    fn z_basis_samples_are_basis_states() {
        let s = sample_input(6, Sampling::ZBasis, 1, 3);
        assert!(s.iter().all(|v| (v[0].norm() == 1.0 && v[1] == ZERO) || (v[1].norm() == 1.0 && v[0] == ZERO)));
    }
}
