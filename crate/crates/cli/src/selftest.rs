//! The acceptance suite, shared by `spinbath selftest` and the
//! `acceptance` test target.

use std::f64::consts::FRAC_PI_4;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spinbath::analysis::{classical_steady_state_check, detect_pairing, mean_concurrence, PairAssignment};
use spinbath::coupling::{dipolar_couplings, effective_coupling, optimal_params, CouplingSet};
use spinbath::dense::{apply_projection, build_v, run_protocol, BathState, ProtocolConfig, RunStatus, DEFAULT_EXTINCTION_FLOOR};
use spinbath::factored::{sample_input, BranchEnsemble, Sampling};
use spinbath::geometry::SpinGeometry;
use spinbath::linalg::{hermitian_eigen, kron_all, max_abs_diff, pauli_dot, sigma_x, sigma_z, Mat2, Mat4};
use spinbath::propagator::bath_propagators;
use spinbath::protocols::{default_verification_tau, Crossing};
use spinbath::{Execution, C64};

use crate::config::{self, DEFAULT_CHAIN_Z0};
use crate::runner;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!("criterion {} {}: {} ({})", self.id, if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub const NAMES: [&str; 9] = [
    "joint-space oracle equivalence",
    "dense vs factored equivalence",
    "chain purification and plateau",
    "nearest-neighbour singlet pairing",
    "classical regime at zero field",
    "verification ratio law",
    "dephasing trend",
    "sensing",
    "determinism and performance",
];

fn outcome(id: u8, passed: bool, detail: String) -> Outcome {
    Outcome { id, name: NAMES[id as usize - 1], passed, detail }
}

fn failed(id: u8, err: impl std::fmt::Display) -> Outcome {
    outcome(id, false, format!("error: {err}"))
}

/// Run one criterion by number (1..=9).
pub fn run_criterion(id: u8, exec: Execution) -> Outcome {
    match id {
        1 => joint_oracle(exec),
        2 => dense_vs_factored(exec),
        3 => chain_purification(),
        4 => chain_pairing(),
        5 => classical_regime(exec),
        6 => verification_ratio(),
        7 => dephasing_trend(exec),
        8 => sensing(),
        9 => determinism(),
        _ => panic!("no criterion {id}"),
    }
}

pub fn run_all(exec: Execution) -> Vec<Outcome> {
    (1..=9).map(|id| run_criterion(id, exec)).collect()
}

fn random_couplings(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

fn random_density(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<C64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let rho = &a * a.adjoint();
    let tr = rho.trace();
    rho / tr
}

fn mat4_diff(a: &Mat4, b: &Mat4) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Post-selected bath state from the explicit joint sequence: central spin
/// in `|0⟩`, π/2 pulse, joint evolution, inverse π/2 pulse, projection on `|0⟩`.
fn joint_sequence(c: &CouplingSet, tau: f64, rho: &DMatrix<C64>) -> (DMatrix<C64>, f64) {
    let n = c.len();
    let dim = 1usize << n;
    let mut coupling = DMatrix::zeros(dim, dim);
    let mut zeeman = DMatrix::zeros(dim, dim);
    for k in 0..n {
        let mut ops = vec![Mat2::identity(); n];
        let g = c.vectors[k];
        ops[k] = pauli_dot([g.x, g.y, g.z]);
        coupling += kron_all(&ops);
        ops[k] = sigma_z();
        zeeman += kron_all(&ops) * C64::from(c.omega);
    }
    let h = kron_all(&[sigma_z()]).kronecker(&coupling) + kron_all(&[Mat2::identity()]).kronecker(&zeeman);
    let (vals, vecs) = hermitian_eigen(&h);
    let phases = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(vals.len(), vals.iter().map(|&l| C64::from_polar(1.0, l * tau))));
    let u = &vecs * phases * vecs.adjoint();
    let half = Mat2::identity() * C64::from(FRAC_PI_4.cos()) - sigma_x() * C64::new(0.0, FRAC_PI_4.sin());
    let r = kron_all(&[half]).kronecker(&DMatrix::<C64>::identity(dim, dim));
    let seq = r.adjoint() * u * &r;
    let mut up = DMatrix::zeros(2, 2);
    up[(0, 0)] = C64::from(1.0);
    let joint = seq.clone() * up.kronecker(rho) * seq.adjoint();
    let block = joint.view((0, 0), (dim, dim)).into_owned();
    let p = block.trace().re;
    (block / C64::from(p), p)
}

fn joint_oracle(exec: Execution) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_rho, mut worst_p) = (0.0f64, 0.0f64);
    let mut cases = 0;
    for n in 1..=4 {
        for _ in 0..20 {
            let omega = rng.random_range(0.0..2.0);
            let tau = rng.random_range(0.1..2.0);
            let c = match CouplingSet::new(random_couplings(&mut rng, n), omega) {
                Ok(c) => c,
                Err(e) => return failed(1, e),
            };
            let rho = random_density(&mut rng, 1 << n);
            let (expected, p_joint) = joint_sequence(&c, tau, &rho);
            let h = C64::from(std::f64::consts::FRAC_1_SQRT_2);
            let result = BathState::from_matrix(n, rho)
                .and_then(|s| Ok((s, build_v(&c, tau, h, h)?)))
                .and_then(|(s, v)| apply_projection(&s, &v, DEFAULT_EXTINCTION_FLOOR, exec));
            match result {
                Ok((state, p)) => {
                    worst_rho = worst_rho.max(max_abs_diff(state.matrix(), &expected));
                    worst_p = worst_p.max((p - p_joint).abs());
                }
                Err(e) => return failed(1, e),
            }
            cases += 1;
        }
    }
    let passed = worst_rho <= 1e-10 && worst_p <= 1e-10;
    outcome(1, passed, format!("{cases} coupling sets, N = 1..4: max |rho' diff| = {worst_rho:.2e}, max |p diff| = {worst_p:.2e}, tolerance 1e-10"))
}

fn dense_vs_factored(exec: Execution) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (n, m) = (6, 8);
    let (mut worst_p, mut worst_rho) = (0.0f64, 0.0f64);
    for set in 0..20 {
        let omega = rng.random_range(0.2..2.0);
        let tau = rng.random_range(0.2..2.0);
        let c = match CouplingSet::new(random_couplings(&mut rng, n), omega) {
            Ok(c) => c,
            Err(e) => return failed(2, e),
        };
        let states = sample_input(n, Sampling::Haar, 202, set);
        let mut cfg = ProtocolConfig::new(omega, tau, m);
        cfg.record_pairs = true;
        let mut run = || -> spinbath::Result<()> {
            let traj = run_protocol(&BathState::product(&states)?, &cfg, &c, exec)?;
            if traj.records.len() != m {
                return Err(spinbath::Error::Domain("dense run stopped early".into()));
            }
            let props = bath_propagators(&c, tau)?;
            let mut ens = BranchEnsemble::product(&states)?;
            for step in 0..m {
                ens = ens.extend(&props, cfg.alpha, cfg.beta, exec)?;
                worst_p = worst_p.max((ens.success_probability() - traj.records[step].cumulative_p).abs());
                let rdms = ens.pair_rdms(exec)?;
                for ((i, j), rho) in rdms.iter() {
                    worst_rho = worst_rho.max(mat4_diff(rho, &traj.pair_history[step].get(i, j)));
                }
            }
            Ok(())
        };
        if let Err(e) = run() {
            return failed(2, e);
        }
    }
    let passed = worst_p <= 1e-10 && worst_rho <= 1e-10;
    outcome(2, passed, format!("20 coupling sets, N = 6, M = 8: max |P_S diff| = {worst_p:.2e}, max pair-RDM diff = {worst_rho:.2e}, tolerance 1e-10"))
}

/// The N = 10 chain run shared by criteria 3 and 4.
struct ChainRun {
    first_above: Option<usize>,
    final_purity: f64,
    steps: usize,
    last_ten_min_p: f64,
    assignment: PairAssignment,
}

pub const CHAIN_SPINS: usize = 10;
pub const CHAIN_MEASUREMENTS: usize = 100;

fn chain_run() -> &'static Result<ChainRun, String> {
    static RUN: OnceLock<Result<ChainRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let go = || -> spinbath::Result<ChainRun> {
            let geom = SpinGeometry::chain(CHAIN_SPINS, 1.0, DEFAULT_CHAIN_Z0)?;
            let c = dipolar_couplings(&geom, 1.0)?;
            let (omega, tau) = optimal_params(&c)?;
            let cfg = ProtocolConfig::new(omega, tau, CHAIN_MEASUREMENTS);
            let traj = run_protocol(&BathState::maximally_mixed(CHAIN_SPINS), &cfg, &c, Execution::default())?;
            let records = &traj.records;
            let tail = &records[records.len().saturating_sub(10)..];
            Ok(ChainRun {
                first_above: records.iter().find(|r| r.purity > 0.9).map(|r| r.step),
                final_purity: traj.final_purity(),
                steps: records.len(),
                last_ten_min_p: tail.iter().map(|r| r.conditional_p).fold(1.0, f64::min),
                assignment: detect_pairing(&traj.final_state.pair_rdms(Execution::default()), 0.9),
            })
        };
        go().map_err(|e| e.to_string())
    })
}

fn chain_purification() -> Outcome {
    match chain_run() {
        Err(e) => failed(3, e),
        Ok(r) => {
            let passed = r.steps == CHAIN_MEASUREMENTS && r.first_above.is_some() && r.last_ten_min_p > 0.99;
            let reached = r.first_above.map_or("never".to_string(), |m| format!("at M = {m}"));
            outcome(3, passed, format!("chain N = 10, z0 = {DEFAULT_CHAIN_Z0}: purity > 0.9 {reached}, final purity {:.4}, min conditional p over last 10 steps {:.4}", r.final_purity, r.last_ten_min_p))
        }
    }
}

fn chain_pairing() -> Outcome {
    match chain_run() {
        Err(e) => failed(4, e),
        Ok(r) => {
            let expected: Vec<(usize, usize)> = (0..CHAIN_SPINS / 2).map(|k| (2 * k, 2 * k + 1)).collect();
            let matched = r.assignment.sorted_pairs();
            let mut fids: Vec<((usize, usize), f64)> = r.assignment.pairs.iter().map(|p| ((p.i, p.j), p.fidelity)).collect();
            fids.sort_by_key(|f| f.0);
            let passed = matched == expected && r.assignment.pairs.iter().all(|p| p.fidelity > 0.9);
            let listing: Vec<String> = fids.iter().map(|((i, j), f)| format!("({i},{j}) {f:.3}")).collect();
            outcome(4, passed, format!("greedy matching {}", listing.join(", ")))
        }
    }
}

fn random_direction_couplings(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            Vector3::new(s * phi.cos(), s * phi.sin(), z) * rng.random_range(0.5..1.5)
        })
        .collect()
}

fn classical_regime(exec: Execution) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut passed = true;
    let mut details = Vec::new();
    for n in [4, 6] {
        let mut go = || -> spinbath::Result<(f64, f64, f64)> {
            let c = CouplingSet::new(random_direction_couplings(&mut rng, n), 0.0)?;
            let tau = 1.0 / effective_coupling(&c);
            let traj = run_protocol(&BathState::maximally_mixed(n), &ProtocolConfig::new(0.0, tau, 5000), &c, exec)?;
            if traj.status != RunStatus::Completed {
                return Err(spinbath::Error::Domain("run went extinct".into()));
            }
            let report = classical_steady_state_check(&traj.final_state, &c)?;
            Ok((report.purity, report.eigenvalues[0], report.eigenvalues[1]))
        };
        match go() {
            Ok((purity, l0, l1)) => {
                passed &= (purity - 0.5).abs() <= 0.05 && (l0 - 0.5).abs() <= 0.05 && (l1 - 0.5).abs() <= 0.05;
                details.push(format!("N = {n}: purity {purity:.4}, leading eigenvalues {l0:.4}, {l1:.4}"));
            }
            Err(e) => return failed(5, e),
        }
    }
    let identical = || -> spinbath::Result<(f64, usize, i64)> {
        let g = Vector3::new(0.3, 0.0, 0.4);
        let c = CouplingSet::new(vec![g; 4], 0.0)?;
        let tau = 0.5 / g.norm();
        let traj = run_protocol(&BathState::maximally_mixed(4), &ProtocolConfig::new(0.0, tau, 200), &c, exec)?;
        let report = classical_steady_state_check(&traj.final_state, &c)?;
        Ok((report.purity, report.support.len(), report.max_support_magnetization))
    };
    match identical() {
        Ok((purity, support, mag)) => {
            passed &= (purity - 1.0 / 6.0).abs() <= 1e-6 && support == 6 && mag == 0;
            details.push(format!("identical N = 4: purity {purity:.8}, support {support} states, max magnetization {mag}"));
        }
        Err(e) => return failed(5, e),
    }
    outcome(5, passed, details.join("; "))
}

fn verification_ratio() -> Outcome {
    let defaults = config::VerifySpec::default();
    let (omega, threshold) = (10.0, defaults.threshold);
    let tau = default_verification_tau(omega);
    let main = runner::verification(3.0, 4.0, omega, tau, 60, threshold);
    let equal = runner::verification(3.0, 3.0, omega, tau, 50, threshold);
    match (main, equal) {
        (Ok(main), Ok(equal)) => {
            let predicted = 5.0;
            let ratio = main.ratio();
            let within = ratio.is_some_and(|r| (r / predicted - 1.0).abs() <= 0.25);
            let dark = matches!(equal.singlet, Crossing::NotReached { .. });
            let max_equal = equal.curves.1.iter().copied().fold(0.0, f64::max);
            outcome(
                6,
                within && dark,
                format!(
                    "threshold {threshold}: m*_unpolarized {:?}, m*_singlet {:?}, ratio {}, predicted 5; equal couplings max singlet flip {max_equal:.2e} for m <= 50",
                    main.unpolarized,
                    main.singlet,
                    ratio.map_or("undefined".into(), |r| format!("{r:.3}"))
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => failed(6, e),
    }
}

pub const DEPHASING_POINTS: [f64; 5] = [0.0, 0.01, 0.03, 0.1, 0.3];

/// Mean concurrence over greedily matched pairs after `M = 300` steps of
/// the N = 6 chain, for each `γτ`.
pub fn dephasing_curve(exec: Execution) -> spinbath::Result<Vec<f64>> {
    let geom = SpinGeometry::chain(6, 1.0, DEFAULT_CHAIN_Z0)?;
    let c = dipolar_couplings(&geom, 1.0)?;
    let (omega, tau) = optimal_params(&c)?;
    DEPHASING_POINTS
        .iter()
        .map(|&gt| {
            let mut cfg = ProtocolConfig::new(omega, tau, 300);
            cfg.dephasing_rate = gt / tau;
            let traj = run_protocol(&BathState::maximally_mixed(6), &cfg, &c, exec)?;
            let rdms = traj.final_state.pair_rdms(exec);
            let assignment = detect_pairing(&rdms, 0.0);
            mean_concurrence(&rdms, &assignment.pairs)
        })
        .collect()
}

fn dephasing_trend(exec: Execution) -> Outcome {
    match dephasing_curve(exec) {
        Ok(curve) => {
            let monotone = curve.windows(2).all(|w| w[1] <= w[0] + 1e-12);
            let listing: Vec<String> = DEPHASING_POINTS.iter().zip(&curve).map(|(g, c)| format!("{g}: {c:.4}")).collect();
            outcome(7, monotone, format!("mean matched-pair concurrence by gamma*tau {}", listing.join(", ")))
        }
        Err(e) => failed(7, e),
    }
}

/// The N = 10 chain scenario used by the coherence check.
pub fn sensing_scenario() -> config::Resolved {
    let src = "[geometry]\nkind = \"chain\"\nspins = 10\n";
    config::validate(&config::parse(src).expect("built-in config"), src).expect("built-in config is valid")
}

fn sensing() -> Outcome {
    let res = sensing_scenario();
    let coh = match runner::coherence_curves(&res) {
        Ok(c) => c,
        Err(e) => return failed(8, e),
    };
    let margin = coh.paired.iter().zip(&coh.mixed).map(|(p, m)| p - m).fold(f64::INFINITY, f64::min);
    let spec = &res.config.sense.spectroscopy;
    let sp = match runner::spectroscopy(spec) {
        Ok(s) => s,
        Err(e) => return failed(8, e),
    };
    let xs = |f: &[spinbath::protocols::Feature]| f.iter().map(|f| format!("{:.3}", f.x)).collect::<Vec<_>>().join(" ");
    let passed = margin > 0.0 && sp.paired_resolves() && !sp.unpolarized_resolves();
    outcome(
        8,
        passed,
        format!(
            "expected side features at tau {:.3} and {:.3}; paired features [{}], unpolarized features [{}]; min coherence margin paired - mixed {margin:.4} over (0, {}tau]",
            sp.expected[0],
            sp.expected[1],
            xs(&sp.paired_features),
            xs(&sp.unpolarized_features),
            res.config.sense.coherence_window
        ),
    )
}

/// The 16 × 16 scan at N = 8.
pub fn guardrail_scenario() -> config::Resolved {
    let src = "engine = \"dense\"\n[geometry]\nkind = \"chain\"\nspins = 8\n[scan]\nmeasurements = 50\n";
    config::validate(&config::parse(src).expect("built-in config"), src).expect("built-in config is valid")
}

pub const GUARDRAIL_LIMIT: Duration = Duration::from_secs(30 * 60);

fn determinism() -> Outcome {
    let res = guardrail_scenario();
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return failed(9, e),
    };
    let mut tables = Vec::new();
    let mut times = Vec::new();
    for (k, threads) in [(0, 0usize), (1, 3)] {
        let out = dir.path().join(format!("scan{k}"));
        let start = Instant::now();
        let r = spinbath::par::with_threads(threads, || runner::scan_command(&res, &out, Execution::default()));
        times.push(start.elapsed());
        if let Err(e) = r {
            return failed(9, e);
        }
        match std::fs::read(out.join("scan.csv")) {
            Ok(bytes) => tables.push(bytes),
            Err(e) => return failed(9, e),
        }
    }
    let identical = tables[0] == tables[1];
    let rows = tables[0].iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
    let slowest = times.iter().max().copied().unwrap_or_default();
    outcome(
        9,
        identical && rows == 256 && slowest < GUARDRAIL_LIMIT,
        format!("16x16 grid, N = 8, M = 50: {rows} rows, byte-identical across thread counts: {identical}, slowest run {:.1} s (limit 1800 s)", slowest.as_secs_f64()),
    )
}
