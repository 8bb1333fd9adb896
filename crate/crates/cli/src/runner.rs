//! Scenario execution for the `run`, `scan`, `verify` and `sense` commands.

use std::path::Path;

use spinbath::analysis::{best_phase, concurrence, detect_pairing, PairAssignment};
use spinbath::dense::{run_protocol, BathState, ProtocolConfig, RunStatus, StepRecord};
use spinbath::factored::{mixed_state_monte_carlo, sample_input, BranchEnsemble, MonteCarloOptions, Sampling};
use spinbath::linalg::{Spinor, ONE, ZERO};
use spinbath::propagator::bath_propagators;
use spinbath::protocols::{
    coherence_trace, find_features, features_resolve, resonant_tau, spectroscopy_scan, verification_couplings,
    verification_scan, BlockState, Crossing, Feature, Preparation, SpeciesBath, SpeciesGroup,
};
use spinbath::rdm::PairRdms;
use spinbath::Execution;
use toml::{Table, Value};

use crate::config::{ConfigError, EngineKind, Initial, Resolved, SamplingKind, SpectroscopySpec};
use crate::output::{ensure_dir, num, write_manifest, write_table};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Core(#[from] spinbath::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    /// Outputs up to `step - 1` were written.
    #[error("extinction at step {step}: conditional probability {probability:e} below the floor")]
    Extinct { step: usize, probability: f64 },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Core(spinbath::Error::Config(_)) => 2,
            RunError::Extinct { .. } | RunError::Core(spinbath::Error::Extinct { .. }) => 3,
            RunError::Core(spinbath::Error::Capacity { .. }) => 4,
            _ => 1,
        }
    }
}

/// Result of one engine run.
#[derive(Debug, Clone)]
pub struct EngineResult {
    pub records: Vec<StepRecord>,
    pub status: RunStatus,
    /// Initial purity, reported when no step succeeded.
    pub initial_purity: f64,
    pub pairs: Option<PairRdms>,
    /// Engine-specific diagnostics for the manifest.
    pub notes: Table,
}

impl EngineResult {
    pub fn final_purity(&self) -> f64 {
        self.records.last().map_or(self.initial_purity, |r| r.purity)
    }

    pub fn cumulative_probability(&self) -> f64 {
        self.records.last().map_or(1.0, |r| r.cumulative_p)
    }

    pub fn status_label(&self) -> String {
        match self.status {
            RunStatus::Completed => "completed".into(),
            RunStatus::Extinct { step, .. } => format!("extinct@{step}"),
        }
    }
}

fn product_input(res: &Resolved) -> Vec<Spinor> {
    let n = res.spins();
    match res.config.protocol.initial {
        Initial::Haar => sample_input(n, Sampling::Haar, res.config.seed, 0),
        Initial::Up | Initial::Mixed => vec![Spinor::new(ONE, ZERO); n],
    }
}

/// Run the configured engine with `protocol` (which may differ from the
/// resolved one in a scan).
pub fn execute(res: &Resolved, protocol: &ProtocolConfig, want_pairs: bool, exec: Execution) -> Result<EngineResult, spinbath::Error> {
    let n = res.spins();
    let want_pairs = want_pairs && n >= 2;
    let mut notes = Table::new();
    match res.config.engine {
        EngineKind::Dense => {
            let rho0 = match res.config.protocol.initial {
                Initial::Mixed => BathState::maximally_mixed(n),
                _ => BathState::product(&product_input(res))?,
            };
            let traj = run_protocol(&rho0, protocol, &res.couplings, exec)?;
            let pairs = want_pairs.then(|| traj.final_state.pair_rdms(exec));
            Ok(EngineResult { records: traj.records, status: traj.status, initial_purity: rho0.purity(), pairs, notes })
        }
        EngineKind::Factored => {
            let props = bath_propagators(&res.couplings.with_omega(protocol.omega), protocol.tau)?;
            let mut ens = BranchEnsemble::product(&product_input(res))?;
            let mut records = Vec::with_capacity(protocol.measurements);
            let mut status = RunStatus::Completed;
            for step in 1..=protocol.measurements {
                let next = ens.extend(&props, protocol.alpha, protocol.beta, exec)?;
                let p = next.conditional_probability();
                if !(p >= protocol.extinction_floor) {
                    status = RunStatus::Extinct { step, probability: p };
                    break;
                }
                ens = next;
                records.push(StepRecord { step, conditional_p: p, cumulative_p: ens.success_probability(), purity: 1.0 });
            }
            notes.insert("branches".into(), Value::Integer(ens.branch_count() as i64));
            let pairs = if want_pairs { Some(ens.pair_rdms(exec)?) } else { None };
            Ok(EngineResult { records, status, initial_purity: 1.0, pairs, notes })
        }
        EngineKind::Montecarlo => {
            let mut opts = MonteCarloOptions::new(res.config.montecarlo.samples, res.config.seed);
            opts.sampling = match res.config.montecarlo.sampling {
                SamplingKind::Haar => Sampling::Haar,
                SamplingKind::Zbasis => Sampling::ZBasis,
            };
            opts.pair_rdms = want_pairs;
            let est = mixed_state_monte_carlo(&res.couplings, protocol, &opts, exec)?;
            let mut records = Vec::with_capacity(protocol.measurements);
            let mut status = RunStatus::Completed;
            for k in 0..protocol.measurements {
                let p = est.conditional[k];
                if !(p >= protocol.extinction_floor) {
                    status = RunStatus::Extinct { step: k + 1, probability: p };
                    break;
                }
                let purity = est.purity.get(k).copied().unwrap_or(f64::NAN);
                records.push(StepRecord { step: k + 1, conditional_p: p, cumulative_p: est.cumulative[k], purity });
            }
            notes.insert("samples".into(), Value::Integer(est.samples as i64));
            notes.insert("success_standard_error".into(), Value::Float(est.standard_error));
            if let Some(se) = est.purity_standard_error {
                notes.insert("purity_standard_error".into(), Value::Float(se));
            }
            let pairs = if matches!(status, RunStatus::Completed) { est.pair_rdms } else { None };
            Ok(EngineResult { records, status, initial_purity: 0.5f64.powi(n as i32), pairs, notes })
        }
    }
}

fn trajectory_rows(records: &[StepRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| vec![r.step.to_string(), num(r.conditional_p), num(r.cumulative_p), num(r.purity)])
        .collect()
}

fn pair_rows(rdms: &PairRdms) -> Vec<Vec<String>> {
    rdms.iter()
        .map(|((i, j), rho)| {
            let (phase, fidelity) = best_phase(rho);
            let c = concurrence(rho).unwrap_or(f64::NAN);
            vec![i.to_string(), j.to_string(), num(fidelity), num(phase), num(c)]
        })
        .collect()
}

fn pairing_rows(a: &PairAssignment) -> Vec<Vec<String>> {
    a.pairs
        .iter()
        .map(|p| {
            let paired = p.fidelity > a.threshold;
            vec![p.i.to_string(), p.j.to_string(), num(p.fidelity), num(p.phase), paired.to_string()]
        })
        .collect()
}

fn base_derived(res: &Resolved, command: &str) -> Table {
    let mut t = Table::new();
    let g = res.g_eff;
    t.insert("command".into(), command.into());
    t.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    t.insert("spins".into(), Value::Integer(res.spins() as i64));
    t.insert("g_eff".into(), g.into());
    t.insert("omega".into(), res.protocol.omega.into());
    t.insert("tau".into(), res.protocol.tau.into());
    t.insert("omega_geff".into(), (res.protocol.omega / g).into());
    t.insert("tau_geff".into(), (res.protocol.tau * g).into());
    t.insert("gamma_tau".into(), (res.protocol.dephasing_rate * res.protocol.tau).into());
    t
}

/// `run`: one trajectory, its pair table and greedy pairing.
pub fn run_command(res: &Resolved, out: &Path, exec: Execution) -> Result<EngineResult, RunError> {
    ensure_dir(out)?;
    let result = execute(res, &res.protocol, true, exec)?;
    write_table(&out.join("trajectory.csv"), &["step", "conditional_p", "cumulative_p", "purity"], &trajectory_rows(&result.records))?;
    let mut derived = base_derived(res, "run");
    if let Some(rdms) = &result.pairs {
        write_table(&out.join("pairs.csv"), &["spin_i", "spin_j", "fidelity", "phase", "concurrence"], &pair_rows(rdms))?;
        let assignment = detect_pairing(rdms, res.config.analysis.pair_threshold);
        write_table(&out.join("pairing.csv"), &["spin_i", "spin_j", "fidelity", "phase", "paired"], &pairing_rows(&assignment))?;
        derived.insert("pairs_detected".into(), Value::Integer(assignment.paired().count() as i64));
    }
    derived.insert("status".into(), result.status_label().into());
    derived.insert("steps_completed".into(), Value::Integer(result.records.len() as i64));
    derived.insert("final_purity".into(), result.final_purity().into());
    derived.insert("cumulative_p".into(), result.cumulative_probability().into());
    if !result.notes.is_empty() {
        derived.insert("engine".into(), Value::Table(result.notes.clone()));
    }
    write_manifest(&out.join("manifest.toml"), &res.config, derived)?;
    match result.status {
        RunStatus::Completed => Ok(result),
        RunStatus::Extinct { step, probability } => Err(RunError::Extinct { step, probability }),
    }
}

/// `scan`: the ω–τ grid, one row per point, ω outer and τ inner.
pub fn scan_command(res: &Resolved, out: &Path, exec: Execution) -> Result<(), RunError> {
    if !(res.g_eff > 0.0) {
        return Err(ConfigError { issues: vec![crate::config::Issue { line: None, message: "scan grids are in g_eff units, which need nonzero couplings".into() }] }.into());
    }
    ensure_dir(out)?;
    let g = res.g_eff;
    let omegas = res.config.scan.omega.values();
    let taus = res.config.scan.tau.values();
    let m = res.scan_measurements();
    let threshold = res.config.scan.pair_threshold;
    // Points run concurrently, each one sequentially inside; rows are
    // assembled in grid order.
    let rows = exec.map_indexed(omegas.len() * taus.len(), |k| -> Result<Vec<String>, spinbath::Error> {
        let (w, t) = (omegas[k / taus.len()], taus[k % taus.len()]);
        let mut pc = res.protocol.clone();
        pc.omega = w * g;
        pc.tau = t / g;
        pc.measurements = m;
        let r = execute(res, &pc, true, Execution::Sequential)?;
        let n_pairs = r.pairs.as_ref().map_or(0, |p| detect_pairing(p, threshold).paired().count());
        Ok(vec![
            num(pc.omega),
            num(pc.tau),
            num(w),
            num(t),
            num(r.final_purity()),
            num(r.cumulative_probability()),
            n_pairs.to_string(),
            r.status_label(),
        ])
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    write_table(&out.join("scan.csv"), &["omega", "tau", "omega_geff", "tau_geff", "purity", "cumulative_p", "n_pairs", "status"], &rows)?;
    let mut derived = base_derived(res, "scan");
    derived.insert("points".into(), Value::Integer(rows.len() as i64));
    derived.insert("measurements".into(), Value::Integer(m as i64));
    write_manifest(&out.join("manifest.toml"), &res.config, derived)?;
    Ok(())
}

/// Crossing steps of the verification experiment for both bath preparations.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub unpolarized: Crossing,
    pub singlet: Crossing,
    pub curves: (Vec<f64>, Vec<f64>),
}

impl VerificationReport {
    pub fn ratio(&self) -> Option<f64> {
        match (self.unpolarized, self.singlet) {
            (Crossing::Reached(u), Crossing::Reached(s)) => Some(s as f64 / u as f64),
            _ => None,
        }
    }
}

pub fn verification(g1: f64, g2: f64, omega: f64, tau: f64, m_max: usize, threshold: f64) -> Result<VerificationReport, spinbath::Error> {
    let c = verification_couplings(g1, g2, omega);
    let u = verification_scan(&c, &BlockState::maximally_mixed(2), tau, m_max, threshold)?;
    let s = verification_scan(&c, &BlockState::adjacent_singlets(2), tau, m_max, threshold)?;
    Ok(VerificationReport { unpolarized: u.crossing, singlet: s.crossing, curves: (u.curve, s.curve) })
}

fn crossing_value(c: Crossing) -> Value {
    match c {
        Crossing::Reached(m) => Value::Integer(m as i64),
        Crossing::NotReached { .. } => "not reached".into(),
    }
}

/// `verify`: flip probability against repetition count.
pub fn verify_command(res: &Resolved, out: &Path) -> Result<VerificationReport, RunError> {
    ensure_dir(out)?;
    let v = &res.config.verify;
    let tau = v.tau.expect("resolved verify tau");
    let report = verification(v.g1, v.g2, v.omega, tau, v.m_max, v.threshold)?;
    let rows: Vec<Vec<String>> = (0..v.m_max)
        .map(|k| vec![(k + 1).to_string(), num(report.curves.0[k]), num(report.curves.1[k])])
        .collect();
    write_table(&out.join("verification.csv"), &["m", "unpolarized", "singlet"], &rows)?;
    let mut derived = Table::new();
    derived.insert("command".into(), "verify".into());
    derived.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    derived.insert("m_star_unpolarized".into(), crossing_value(report.unpolarized));
    derived.insert("m_star_singlet".into(), crossing_value(report.singlet));
    if let Some(r) = report.ratio() {
        derived.insert("ratio".into(), r.into());
    }
    derived.insert("predicted_ratio".into(), ((v.g1 * v.g1 + v.g2 * v.g2).sqrt() / (v.g1 - v.g2).abs()).into());
    write_manifest(&out.join("manifest.toml"), &res.config, derived)?;
    Ok(report)
}

/// Coherence curves for the mixed, polarized and adjacent-singlet baths.
pub struct CoherenceCurves {
    pub times: Vec<f64>,
    pub mixed: Vec<f64>,
    pub polarized: Vec<f64>,
    pub paired: Vec<f64>,
}

pub fn coherence_curves(res: &Resolved) -> Result<CoherenceCurves, spinbath::Error> {
    let n = res.spins();
    let s = &res.config.sense;
    let span = s.coherence_window * res.protocol.tau;
    let times: Vec<f64> = (1..=s.coherence_points).map(|k| span * k as f64 / s.coherence_points as f64).collect();
    let c = &res.couplings;
    Ok(CoherenceCurves {
        mixed: coherence_trace(&BlockState::maximally_mixed(n), c, &times)?,
        polarized: coherence_trace(&BlockState::polarized(n), c, &times)?,
        paired: coherence_trace(&BlockState::adjacent_singlets(n), c, &times)?,
        times,
    })
}

/// Strong species at `ω` with the given preparation, flanked by one
/// unpolarized spin at each of `ω(1 ± ε)`.
pub fn spectroscopy_bath(spec: &SpectroscopySpec, strong: Preparation) -> SpeciesBath {
    let v = |g: [f64; 3]| nalgebra::Vector3::new(g[0], g[1], g[2]);
    let side = |omega: f64| SpeciesGroup { omega, couplings: vec![v(spec.weak)], preparation: Preparation::Unpolarized };
    SpeciesBath {
        groups: vec![
            SpeciesGroup { omega: spec.omega, couplings: spec.strong.iter().map(|&g| v(g)).collect(), preparation: strong },
            side(spec.omega * (1.0 + spec.epsilon_ratio)),
            side(spec.omega * (1.0 - spec.epsilon_ratio)),
        ],
    }
}

pub struct SpectroscopyResult {
    pub taus: Vec<f64>,
    pub paired: Vec<f64>,
    pub unpolarized: Vec<f64>,
    /// Side species alone, the strong pair removed.
    pub strong_removed: Vec<f64>,
    /// Inter-pulse times resonant with the two side species.
    pub expected: [f64; 2],
    pub paired_features: Vec<Feature>,
    pub unpolarized_features: Vec<Feature>,
    pub tolerance: f64,
}

impl SpectroscopyResult {
    pub fn paired_resolves(&self) -> bool {
        features_resolve(&self.paired_features, &self.expected, self.tolerance)
    }

    pub fn unpolarized_resolves(&self) -> bool {
        features_resolve(&self.unpolarized_features, &self.expected, self.tolerance)
    }
}

pub fn spectroscopy(spec: &SpectroscopySpec) -> Result<SpectroscopyResult, spinbath::Error> {
    let taus = spec.tau.values();
    let paired_bath = spectroscopy_bath(spec, Preparation::SingletPaired);
    let paired = spectroscopy_scan(&paired_bath, &taus, spec.repetitions)?;
    let unpolarized = spectroscopy_scan(&spectroscopy_bath(spec, Preparation::Unpolarized), &taus, spec.repetitions)?;
    let strong_removed = spectroscopy_scan(&paired_bath.without_groups(&[0]), &taus, spec.repetitions)?;
    let step = taus[1] - taus[0];
    Ok(SpectroscopyResult {
        expected: [resonant_tau(spec.omega * (1.0 + spec.epsilon_ratio)), resonant_tau(spec.omega * (1.0 - spec.epsilon_ratio))],
        paired_features: find_features(&taus, &paired, spec.prominence),
        unpolarized_features: find_features(&taus, &unpolarized, spec.prominence),
        tolerance: 3.0 * step,
        taus,
        paired,
        unpolarized,
        strong_removed,
    })
}

fn feature_list(features: &[Feature]) -> Value {
    Value::Array(features.iter().map(|f| f.x.into()).collect())
}

/// `sense`: coherence decay and the three-species spectroscopy scan.
pub fn sense_command(res: &Resolved, out: &Path) -> Result<(CoherenceCurves, SpectroscopyResult), RunError> {
    ensure_dir(out)?;
    let coh = coherence_curves(res)?;
    let g = res.g_eff;
    let rows: Vec<Vec<String>> = (0..coh.times.len())
        .map(|k| vec![num(coh.times[k]), num(coh.times[k] * g), num(coh.mixed[k]), num(coh.polarized[k]), num(coh.paired[k])])
        .collect();
    write_table(&out.join("coherence.csv"), &["t", "t_geff", "mixed", "polarized", "paired"], &rows)?;

    let spec = &res.config.sense.spectroscopy;
    let sp = spectroscopy(spec)?;
    let rows: Vec<Vec<String>> = (0..sp.taus.len())
        .map(|k| vec![num(sp.taus[k]), num(sp.taus[k] * spec.omega), num(sp.paired[k]), num(sp.unpolarized[k]), num(sp.strong_removed[k])])
        .collect();
    write_table(&out.join("spectroscopy.csv"), &["tau", "tau_omega", "paired", "unpolarized", "strong_removed"], &rows)?;

    let mut derived = base_derived(res, "sense");
    derived.insert("expected_features".into(), Value::Array(sp.expected.iter().map(|&x| x.into()).collect()));
    derived.insert("paired_features".into(), feature_list(&sp.paired_features));
    derived.insert("unpolarized_features".into(), feature_list(&sp.unpolarized_features));
    derived.insert("paired_resolves".into(), sp.paired_resolves().into());
    derived.insert("unpolarized_resolves".into(), sp.unpolarized_resolves().into());
    write_manifest(&out.join("manifest.toml"), &res.config, derived)?;
    Ok((coh, sp))
}
