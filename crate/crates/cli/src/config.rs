//! Scenario configuration: TOML schema, defaults and validation.
//!
//! Frequencies and times in `[protocol]` are read in units of the effective
//! coupling `g_eff` (and `1/g_eff`) unless `units = "absolute"`. Validation
//! resolves every default and converts to absolute units once; the result
//! is echoed into the run manifest, which can be fed back as a config.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use spinbath::coupling::{dipolar_couplings, effective_coupling, optimal_params, CouplingSet};
use spinbath::dense::ProtocolConfig;
use spinbath::geometry::SpinGeometry;
use spinbath::C64;

pub const DEFAULT_DENSE_LIMIT: usize = 12;
pub const DEFAULT_CHAIN_Z0: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    #[default]
    Dense,
    Factored,
    Montecarlo,
}

impl std::str::FromStr for EngineKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(Self::Dense),
            "factored" => Ok(Self::Factored),
            "montecarlo" => Ok(Self::Montecarlo),
            other => Err(format!("unknown engine `{other}` (expected dense, factored or montecarlo)")),
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Dense => "dense",
            Self::Factored => "factored",
            Self::Montecarlo => "montecarlo",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeometrySpec {
    /// Spins at `x = k·spacing`, `k = 1..=spins`, height `z0`.
    Chain {
        spins: usize,
        #[serde(default = "one")]
        spacing: f64,
        #[serde(default = "default_chain_z0")]
        z0: f64,
        #[serde(default = "one")]
        prefactor: f64,
    },
    /// Uniform random positions in a square of side `side` at height `z0`.
    Plane {
        spins: usize,
        #[serde(default = "default_side")]
        side: f64,
        #[serde(default = "one")]
        z0: f64,
        seed: Option<u64>,
        #[serde(default = "one")]
        prefactor: f64,
    },
    /// Coupling vectors given directly.
    Explicit { couplings: Vec<[f64; 3]> },
}

impl GeometrySpec {
    pub fn spins(&self) -> usize {
        match self {
            Self::Chain { spins, .. } | Self::Plane { spins, .. } => *spins,
            Self::Explicit { couplings } => couplings.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Geff,
    Absolute,
}

/// A number or the keyword `"optimal"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Value(f64),
    Keyword(String),
}

impl Default for Param {
    fn default() -> Self {
        Param::Keyword("optimal".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Initial {
    /// Maximally mixed bath.
    #[default]
    Mixed,
    /// Haar-random product state drawn from the run seed.
    Haar,
    /// Every spin in `|+1⟩`.
    Up,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSpec {
    pub units: Units,
    pub omega: Param,
    pub tau: Param,
    pub measurements: usize,
    /// `[re, im]`.
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub dephasing_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub readout_time: Option<f64>,
    pub extinction_floor: f64,
    pub initial: Initial,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            units: Units::Geff,
            omega: Param::default(),
            tau: Param::default(),
            measurements: 100,
            alpha: [FRAC_1_SQRT_2, 0.0],
            beta: [FRAC_1_SQRT_2, 0.0],
            dephasing_rate: 0.0,
            readout_time: None,
            extinction_floor: spinbath::dense::DEFAULT_EXTINCTION_FLOOR,
            initial: Initial::Mixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplingKind {
    #[default]
    Haar,
    Zbasis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloSpec {
    pub samples: usize,
    pub sampling: SamplingKind,
}

impl Default for MonteCarloSpec {
    fn default() -> Self {
        Self { samples: 1000, sampling: SamplingKind::Haar }
    }
}

/// `points` values evenly spaced over `[min, max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points).map(|k| self.min + step * k as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSpec {
    /// Field grid in units of `g_eff`.
    pub omega: Grid,
    /// Dwell-time grid in units of `1/g_eff`.
    pub tau: Grid,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurements: Option<usize>,
    /// Fidelity above which a matched pair counts as a singlet pair.
    pub pair_threshold: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            omega: Grid { min: 0.25, max: 4.0, points: 16 },
            tau: Grid { min: 0.25, max: 4.0, points: 16 },
            measurements: None,
            pair_threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    pub pair_threshold: f64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self { pair_threshold: spinbath::analysis::DEFAULT_PAIR_THRESHOLD }
    }
}

/// Two-spin verification experiment, natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub g1: f64,
    pub g2: f64,
    pub omega: f64,
    /// Inter-pulse time; defaults to `π/(4ω)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub m_max: usize,
    pub threshold: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            g1: 3.0,
            g2: 4.0,
            omega: 10.0,
            tau: None,
            m_max: 60,
            threshold: spinbath::protocols::DEFAULT_FLIP_THRESHOLD,
        }
    }
}

/// Three-species bath for the spectroscopy scan, natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectroscopySpec {
    pub omega: f64,
    /// Side species sit at `ω (1 ± epsilon_ratio)`.
    pub epsilon_ratio: f64,
    /// Couplings of the species at `ω`, prepared as consecutive pairs.
    pub strong: Vec<[f64; 3]>,
    /// Coupling of each side-species spin.
    pub weak: [f64; 3],
    pub repetitions: usize,
    pub tau: Grid,
    pub prominence: f64,
}

impl Default for SpectroscopySpec {
    fn default() -> Self {
        Self {
            omega: 1.0,
            epsilon_ratio: 0.1,
            strong: vec![[0.3, 0.0, 0.1], [0.298, 0.0, 0.1]],
            weak: [0.03, 0.0, 0.0],
            repetitions: 40,
            tau: Grid { min: 0.6, max: 1.0, points: 201 },
            prominence: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SenseSpec {
    /// Coherence window in units of the protocol `τ`.
    pub coherence_window: f64,
    pub coherence_points: usize,
    pub spectroscopy: SpectroscopySpec,
}

impl Default for SenseSpec {
    fn default() -> Self {
        Self { coherence_window: 2.0, coherence_points: 100, spectroscopy: SpectroscopySpec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub engine: EngineKind,
    #[serde(default = "default_out")]
    pub out: String,
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_dense_limit")]
    pub dense_limit: usize,
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub montecarlo: MonteCarloSpec,
    #[serde(default)]
    pub scan: ScanSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub sense: SenseSpec,
    /// Written into manifests; ignored when read back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived: Option<toml::Table>,
}

fn one() -> f64 {
    1.0
}
fn default_chain_z0() -> f64 {
    DEFAULT_CHAIN_Z0
}
fn default_side() -> f64 {
    4.0
}
fn default_seed() -> u64 {
    1
}
fn default_out() -> String {
    "spinbath-out".into()
}
fn default_dense_limit() -> usize {
    DEFAULT_DENSE_LIMIT
}

/// One validation problem, with the config line it refers to when known.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub issues: Vec<Issue>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl ConfigError {
    fn single(line: Option<usize>, message: impl Into<String>) -> Self {
        Self { issues: vec![Issue { line, message: message.into() }] }
    }
}

/// Parse TOML text. Syntax and schema errors carry their line number.
pub fn parse(source: &str) -> Result<ScenarioConfig, ConfigError> {
    toml::from_str(source).map_err(|e| {
        let message = e.message().trim().to_string();
        let line = e.span().map(|s| unknown_key_line(source, s.start, &message).unwrap_or_else(|| line_at(source, s.start)));
        ConfigError::single(line, message)
    })
}

/// Spans of unknown-field errors can cover a whole table; point at the key.
fn unknown_key_line(source: &str, from: usize, message: &str) -> Option<usize> {
    let key = message.strip_prefix("unknown field `")?.split('`').next()?;
    let first = line_at(source, from);
    source
        .lines()
        .enumerate()
        .skip(first - 1)
        .find(|(_, l)| l.split('=').next().map(str::trim) == Some(key))
        .map(|(i, _)| i + 1)
}

pub fn load(path: &Path) -> Result<(ScenarioConfig, String), ConfigError> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::single(None, format!("cannot read {}: {e}", path.display())))?;
    Ok((parse(&source)?, source))
}

fn line_at(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[table]` (`""` for the top level), or of the table
/// header when the key is absent.
pub fn line_of(source: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (idx, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim().trim_start_matches('[').to_string();
            if current == table {
                header = Some(idx + 1);
            }
            continue;
        }
        if current == table {
            let name = line.split('=').next().unwrap_or("").trim();
            if name == key {
                return Some(idx + 1);
            }
        }
    }
    header
}

/// A validated scenario in absolute units.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// Normalized config (`units = "absolute"`, all defaults explicit).
    pub config: ScenarioConfig,
    /// Couplings with `omega` set to the protocol field.
    pub couplings: CouplingSet,
    pub g_eff: f64,
    pub protocol: ProtocolConfig,
}

impl Resolved {
    pub fn scan_measurements(&self) -> usize {
        self.config.scan.measurements.unwrap_or(self.protocol.measurements)
    }

    pub fn spins(&self) -> usize {
        self.couplings.len()
    }
}

struct Collector<'a> {
    source: &'a str,
    issues: Vec<Issue>,
}

impl Collector<'_> {
    fn push(&mut self, table: &str, key: &str, message: impl Into<String>) {
        let line = line_of(self.source, table, key);
        self.issues.push(Issue { line, message: message.into() });
    }

    fn check(&mut self, ok: bool, table: &str, key: &str, message: impl FnOnce() -> String) {
        if !ok {
            self.push(table, key, message());
        }
    }
}

fn build_geometry(spec: &GeometrySpec, seed: u64) -> Result<CouplingSet, String> {
    let coupled = |geom: Result<SpinGeometry, spinbath::Error>, prefactor: f64| {
        geom.and_then(|g| dipolar_couplings(&g, prefactor)).map_err(|e| e.to_string())
    };
    match spec {
        GeometrySpec::Chain { spins, spacing, z0, prefactor } => coupled(SpinGeometry::chain(*spins, *spacing, *z0), *prefactor),
        GeometrySpec::Plane { spins, side, z0, seed: s, prefactor } => {
            coupled(SpinGeometry::plane(*spins, *side, *z0, s.unwrap_or(seed)), *prefactor)
        }
        GeometrySpec::Explicit { couplings } => CouplingSet::new(
            couplings.iter().map(|g| nalgebra::Vector3::new(g[0], g[1], g[2])).collect(),
            0.0,
        )
        .map_err(|e| e.to_string()),
    }
}

/// Check every invariant, report all violations, and resolve defaults and
/// units. `source` is the original text, used for line numbers.
pub fn validate(cfg: &ScenarioConfig, source: &str) -> Result<Resolved, ConfigError> {
    let mut c = Collector { source, issues: Vec::new() };
    let mut norm = cfg.clone();
    norm.derived = None;

    let n = cfg.geometry.spins();
    c.check(n >= 1, "geometry", "spins", || "geometry needs at least one spin".into());
    match &cfg.geometry {
        GeometrySpec::Chain { spacing, z0, prefactor, .. } => {
            c.check(spacing.is_finite() && *spacing > 0.0, "geometry", "spacing", || format!("chain spacing must be positive, got {spacing}"));
            c.check(z0.is_finite(), "geometry", "z0", || "chain offset z0 must be finite".into());
            c.check(prefactor.is_finite() && *prefactor > 0.0, "geometry", "prefactor", || "dipolar prefactor must be positive".into());
        }
        GeometrySpec::Plane { side, z0, prefactor, seed, .. } => {
            c.check(side.is_finite() && *side > 0.0, "geometry", "side", || format!("plane side must be positive, got {side}"));
            c.check(z0.is_finite(), "geometry", "z0", || "plane height z0 must be finite".into());
            c.check(prefactor.is_finite() && *prefactor > 0.0, "geometry", "prefactor", || "dipolar prefactor must be positive".into());
            if seed.is_none() {
                if let GeometrySpec::Plane { seed, .. } = &mut norm.geometry {
                    *seed = Some(cfg.seed);
                }
            }
        }
        GeometrySpec::Explicit { couplings } => {
            c.check(couplings.iter().flatten().all(|v| v.is_finite()), "geometry", "couplings", || "couplings must be finite".into());
        }
    }
    if cfg.engine == EngineKind::Dense && n > cfg.dense_limit {
        c.push("", "engine", format!("engine dense supports at most {} spins (dense limit), got {n}; use factored or montecarlo", cfg.dense_limit));
    }

    let p = &cfg.protocol;
    c.check(p.measurements >= 1, "protocol", "measurements", || "at least one measurement is required".into());
    let weight = p.alpha[0].powi(2) + p.alpha[1].powi(2) + p.beta[0].powi(2) + p.beta[1].powi(2);
    c.check((weight - 1.0).abs() <= 1e-12, "protocol", "alpha", || format!("|alpha|^2 + |beta|^2 must be 1, got {weight}"));
    c.check(p.dephasing_rate >= 0.0 && p.dephasing_rate.is_finite(), "protocol", "dephasing_rate", || format!("dephasing_rate must be non-negative, got {}", p.dephasing_rate));
    if let Some(t) = p.readout_time {
        c.check(t >= 0.0 && t.is_finite(), "protocol", "readout_time", || format!("readout_time must be non-negative, got {t}"));
    }
    c.check(p.extinction_floor > 0.0, "protocol", "extinction_floor", || "extinction_floor must be positive".into());
    for (key, param) in [("omega", &p.omega), ("tau", &p.tau)] {
        match param {
            Param::Keyword(k) if k != "optimal" => c.push("protocol", key, format!("{key} must be a number or \"optimal\", got \"{k}\"")),
            Param::Value(v) if !v.is_finite() || (key == "tau" && *v < 0.0) => c.push("protocol", key, format!("{key} must be finite{}, got {v}", if key == "tau" { " and non-negative" } else { "" })),
            _ => {}
        }
    }
    if cfg.engine != EngineKind::Dense && p.dephasing_rate > 0.0 {
        c.push("protocol", "dephasing_rate", format!("engine {} does not support dephasing; use the dense engine", cfg.engine));
    }
    if cfg.engine == EngineKind::Factored && p.initial == Initial::Mixed {
        c.push("protocol", "initial", "engine factored needs a product initial state (initial = \"haar\" or \"up\"); use montecarlo for the mixed bath");
    }
    if cfg.engine == EngineKind::Montecarlo && p.initial != Initial::Mixed {
        c.push("protocol", "initial", "engine montecarlo unravels the mixed bath; set initial = \"mixed\"");
    }
    c.check(cfg.montecarlo.samples >= 1, "montecarlo", "samples", || "Monte Carlo needs at least one sample".into());

    for (key, grid, positive) in [("omega", &cfg.scan.omega, false), ("tau", &cfg.scan.tau, true)] {
        let ok = grid.points >= 1 && grid.min.is_finite() && grid.max.is_finite() && grid.min <= grid.max && (!positive || grid.min > 0.0) && grid.min >= 0.0;
        c.check(ok, "scan", key, || format!("scan {key} grid needs points >= 1 and 0 {} min <= max", if positive { "<" } else { "<=" }));
    }
    if let Some(m) = cfg.scan.measurements {
        c.check(m >= 1, "scan", "measurements", || "scan needs at least one measurement".into());
    }
    c.check((0.0..1.0).contains(&cfg.scan.pair_threshold), "scan", "pair_threshold", || "pair_threshold must lie in [0, 1)".into());
    c.check((0.0..1.0).contains(&cfg.analysis.pair_threshold), "analysis", "pair_threshold", || "pair_threshold must lie in [0, 1)".into());

    let v = &cfg.verify;
    c.check(v.omega > 0.0 && v.omega.is_finite(), "verify", "omega", || "verify omega must be positive".into());
    c.check(v.g1.is_finite() && v.g2.is_finite(), "verify", "g1", || "verify couplings must be finite".into());
    c.check(v.m_max >= 1, "verify", "m_max", || "verify m_max must be at least 1".into());
    c.check(v.threshold > 0.0 && v.threshold < 1.0, "verify", "threshold", || "verify threshold must lie in (0, 1)".into());
    if let Some(t) = v.tau {
        c.check(t > 0.0, "verify", "tau", || "verify tau must be positive".into());
    } else if v.omega > 0.0 {
        norm.verify.tau = Some(spinbath::protocols::default_verification_tau(v.omega));
    }

    let s = &cfg.sense;
    c.check(s.coherence_window > 0.0 && s.coherence_points >= 1, "sense", "coherence_window", || "coherence window and points must be positive".into());
    let sp = &s.spectroscopy;
    c.check(sp.omega > 0.0, "sense.spectroscopy", "omega", || "spectroscopy omega must be positive".into());
    c.check(sp.epsilon_ratio >= 0.0 && sp.epsilon_ratio < 1.0, "sense.spectroscopy", "epsilon_ratio", || "epsilon_ratio must lie in [0, 1)".into());
    c.check(sp.repetitions >= 1, "sense.spectroscopy", "repetitions", || "spectroscopy needs at least one repetition".into());
    c.check(sp.tau.points >= 3 && sp.tau.min > 0.0 && sp.tau.min < sp.tau.max, "sense.spectroscopy", "tau", || "spectroscopy tau grid needs 0 < min < max and at least 3 points".into());

    let couplings = match build_geometry(&cfg.geometry, cfg.seed) {
        Ok(cs) if n >= 1 => Some(cs),
        Ok(_) => None,
        Err(e) => {
            c.push("geometry", "kind", e);
            None
        }
    };

    let mut resolved = None;
    if let Some(cs) = couplings {
        let g_eff = effective_coupling(&cs);
        let optimal = optimal_params(&cs);
        let scale = if p.units == Units::Geff { g_eff } else { 1.0 };
        let mut value = |key: &str, param: &Param, pick: fn((f64, f64)) -> f64, to_abs: f64| -> Option<f64> {
            match param {
                Param::Value(v) => Some(v * to_abs),
                Param::Keyword(k) if k == "optimal" => match &optimal {
                    Ok(o) => Some(pick(*o)),
                    Err(e) => {
                        c.push("protocol", key, format!("cannot derive optimal {key}: {e}"));
                        None
                    }
                },
                Param::Keyword(_) => None,
            }
        };
        let omega = value("omega", &p.omega, |o| o.0, scale);
        let tau = value("tau", &p.tau, |o| o.1, 1.0 / scale);
        if p.units == Units::Geff && g_eff == 0.0 && (matches!(p.omega, Param::Value(_)) || matches!(p.tau, Param::Value(_))) {
            c.push("protocol", "units", "g_eff is zero, so g_eff units are undefined; use units = \"absolute\"");
        }
        if let (Some(omega), Some(tau)) = (omega, tau) {
            let mut pc = ProtocolConfig::new(omega, tau, p.measurements.max(1));
            pc.alpha = C64::new(p.alpha[0], p.alpha[1]);
            pc.beta = C64::new(p.beta[0], p.beta[1]);
            pc.dephasing_rate = p.dephasing_rate * scale;
            pc.readout_time = p.readout_time.map(|t| t / scale);
            pc.extinction_floor = p.extinction_floor;
            norm.protocol.units = Units::Absolute;
            norm.protocol.omega = Param::Value(omega);
            norm.protocol.tau = Param::Value(tau);
            norm.protocol.dephasing_rate = pc.dephasing_rate;
            norm.protocol.readout_time = pc.readout_time;
            if norm.scan.measurements.is_none() {
                norm.scan.measurements = Some(p.measurements);
            }
            resolved = Some(Resolved { config: norm, couplings: cs.with_omega(omega), g_eff, protocol: pc });
        }
    }

    match resolved {
        Some(r) if c.issues.is_empty() => Ok(r),
        _ => {
            if c.issues.is_empty() {
                c.issues.push(Issue { line: None, message: "configuration could not be resolved".into() });
            }
            Err(ConfigError { issues: c.issues })
        }
    }
}
