//! Scenario configuration: TOML in, fully resolved and validated struct out.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kinetic_core::collision::CollisionParams;
use kinetic_core::lemma_lab::FamilyKind;
use kinetic_core::linearized::DEFAULT_MAX_NODES;
use kinetic_core::norms::{self, NormOrder, NormSpec, ParameterReport};
use kinetic_core::solver::{InitialDataSpec, Scheme};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    #[default]
    Homogeneous,
    Slab,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    March,
    Picard,
    Lemmas,
    Kernel,
    Bench,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Velocity box half-width `R`.
    pub extent: f64,
    /// Nodes per velocity axis.
    pub n: usize,
    #[serde(default)]
    pub mode: GridMode,
    #[serde(default = "one")]
    pub nx: usize,
    /// Slab length `L`.
    #[serde(default = "one_f")]
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    pub gamma: f64,
    #[serde(default = "one_f")]
    pub c_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    #[serde(default = "two")]
    pub n_theta: usize,
    #[serde(default = "four")]
    pub n_phi: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { n_theta: 2, n_phi: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: RunMode,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// March end time `T`.
    #[serde(default = "one_f")]
    pub t_end: f64,
    /// Picard window `T*`.
    #[serde(default = "default_t_star")]
    pub t_star: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default)]
    pub scheme: Scheme,
    /// Picard ball radius `M`; defaults to twice the initial norm.
    #[serde(default)]
    pub ball: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormEntry {
    pub r: f64,
    pub l: f64,
    #[serde(default = "default_order")]
    pub order: NormOrder,
}

impl NormEntry {
    pub fn spec(&self) -> Result<NormSpec, String> {
        NormSpec::new(self.r, self.l, self.order).map_err(|e| format!("norm (r = {}, l = {}): {e}; norms need r ∈ (1, ∞]", self.r, self.l))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out")]
    pub dir: PathBuf,
    /// Write a snapshot every this many steps; 0 keeps only the last state.
    #[serde(default)]
    pub snapshot_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out(),
            snapshot_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// `c` in `ε_H = c·(Δt² + quad_tol)`.
    #[serde(default = "default_eps_c")]
    pub eps_c: f64,
    #[serde(default = "default_quad_tol")]
    pub quad_tol: f64,
    /// Exponent `m` of `ℰ₀ = [|M₀|+|E₀|+|H₀|]^{1/m}`.
    #[serde(default = "one_f")]
    pub m: f64,
    /// Evaluate the smallness functionals every this many steps; 0 disables.
    #[serde(default)]
    pub smallness_every: usize,
    #[serde(default = "eight")]
    pub smallness_times_a: usize,
    #[serde(default = "eight")]
    pub smallness_times_b: usize,
    #[serde(default = "ten_f")]
    pub smallness_horizon: f64,
    /// Random positive samples used to calibrate `ε_cons` for the drift
    /// check; 0 disables it.
    #[serde(default = "sixteen")]
    pub conservation_samples: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaConfig {
    #[serde(default = "all_families")]
    pub families: Vec<FamilyKind>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: [f64; 2],
    /// Also evaluate on `N + refine_step` nodes per axis.
    #[serde(default = "default_refine")]
    pub refine_step: usize,
    /// `(r, l)` pairs for the gain inequality, `r ≥ 4/(3−γ)`.
    #[serde(default = "default_gain")]
    pub gain: Vec<[f64; 2]>,
    /// `(r, l)` pairs for the low-`r` variant.
    #[serde(default = "default_lowr")]
    pub lowr: Vec<[f64; 2]>,
    /// `(r, l, n)` triples for the `L¹` bounds.
    #[serde(default = "default_nonlinear")]
    pub nonlinear: Vec<[f64; 3]>,
    #[serde(default = "default_etas")]
    pub etas: Vec<f64>,
    #[serde(default = "default_nu_gammas")]
    pub nu_gammas: Vec<f64>,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default = "default_kernel_ls")]
    pub ls: Vec<f64>,
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Grid sizes timed in increasing order.
    #[serde(default = "default_bench_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default = "one")]
    pub repeats: usize,
    /// Also time the smallest size with `n_φ` doubled.
    #[serde(default = "yes")]
    pub phi_doubling: bool,
    /// Allowed deviation from the `N⁶` work prediction.
    #[serde(default = "two_f")]
    pub size_factor: f64,
    /// Allowed deviation from the linear `n_φ` prediction.
    #[serde(default = "default_phi_factor")]
    pub phi_factor: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    pub run: RunConfig,
    #[serde(default = "default_norms")]
    pub norm: Vec<NormEntry>,
    #[serde(default)]
    pub data: InitialDataSpec,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub lemmas: LemmaConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

const REQUIRED: [(&str, &str); 4] = [("grid", "extent"), ("grid", "n"), ("physics", "gamma"), ("run", "mode")];

pub fn parse_config(path: impl AsRef<Path>) -> Result<ScenarioConfig, CliError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_str(&text)
}

/// Parses and validates; every violation found is reported.
pub fn parse_str(text: &str) -> Result<ScenarioConfig, CliError> {
    let table: toml::Table = text.parse().map_err(|e| CliError::Config(vec![format!("malformed TOML: {e}")]))?;
    let mut missing = Vec::new();
    for section in ["grid", "physics", "run"] {
        if !table.contains_key(section) {
            missing.push(format!("missing section [{section}]"));
        }
    }
    for (section, key) in REQUIRED {
        if let Some(t) = table.get(section).and_then(|s| s.as_table()) {
            if !t.contains_key(key) {
                missing.push(format!("missing key {section}.{key}"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Config(missing));
    }
    let mut cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::Config(vec![e.message().to_string()]))?;
    cfg.data.seed = cfg.seed;
    let violations = cfg.violations();
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Config(violations))
    }
}

impl ScenarioConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let g = &self.grid;
        if !(g.extent > 0.0 && g.extent.is_finite()) {
            out.push(format!("grid.extent must be positive, got {}", g.extent));
        }
        if g.n < 3 || g.n.is_multiple_of(2) {
            out.push(format!("grid.n must be odd and at least 3, got {}", g.n));
        }
        match g.mode {
            GridMode::Homogeneous if g.nx != 1 => out.push(format!("grid.nx must be 1 in homogeneous mode, got {}", g.nx)),
            GridMode::Slab if g.nx < 2 => out.push(format!("grid.nx must be at least 2 in slab mode, got {}", g.nx)),
            _ => {}
        }
        if !(g.length > 0.0 && g.length.is_finite()) {
            out.push(format!("grid.length must be positive, got {}", g.length));
        }
        if let Err(e) = CollisionParams::new(self.physics.gamma, self.physics.c_b) {
            out.push(format!("physics: {e}"));
        }
        let q = &self.quadrature;
        if q.n_theta == 0 || q.n_phi < 2 || q.n_phi % 2 == 1 {
            out.push(format!("quadrature needs n_theta ≥ 1 and even n_phi ≥ 2, got ({}, {})", q.n_theta, q.n_phi));
        }
        let r = &self.run;
        if !(r.dt > 0.0 && r.dt.is_finite()) {
            out.push(format!("run.dt must be positive, got {}", r.dt));
        }
        if !(r.t_end >= 0.0 && r.t_end.is_finite()) {
            out.push(format!("run.t_end must be nonnegative, got {}", r.t_end));
        }
        if !(r.t_star > 0.0 && r.t_star.is_finite()) {
            out.push(format!("run.t_star must be positive, got {}", r.t_star));
        }
        for (name, t) in [("t_end", r.t_end), ("t_star", r.t_star)] {
            if r.dt > 0.0 && t.is_finite() && ((t / r.dt).round() * r.dt - t).abs() > 1e-9 * t.max(1.0) {
                out.push(format!("run.{name} = {t} is not a whole number of steps of run.dt = {}", r.dt));
            }
        }
        if !(r.tol >= 0.0) {
            out.push(format!("run.tol must be nonnegative, got {}", r.tol));
        }
        if r.n_max == 0 {
            out.push("run.n_max must be at least 1".into());
        }
        if let Some(m) = r.ball {
            if !(m > 0.0) {
                out.push(format!("run.ball must be positive, got {m}"));
            }
        }
        if self.norm.is_empty() {
            out.push("at least one [[norm]] is required".into());
        }
        for n in &self.norm {
            if let Err(e) = n.spec() {
                out.push(e);
            }
        }
        out.extend(self.data.violations());
        let d = &self.diagnostics;
        if !(d.m > 0.0 && d.m <= 1.0) {
            out.push(format!("diagnostics.m must lie in (0, 1], got {}", d.m));
        }
        if !(d.eps_c >= 0.0 && d.quad_tol >= 0.0) {
            out.push("diagnostics.eps_c and quad_tol must be nonnegative".into());
        }
        if !(d.smallness_horizon >= 1.0) {
            out.push(format!("diagnostics.smallness_horizon must be at least 1, got {}", d.smallness_horizon));
        }
        let l = &self.lemmas;
        if l.samples == 0 {
            out.push("lemmas.samples must be at least 1".into());
        }
        if !(l.amplitude[0] > 0.0 && l.amplitude[1] >= l.amplitude[0]) {
            out.push(format!("lemmas.amplitude must be an increasing positive range, got {:?}", l.amplitude));
        }
        if l.refine_step % 2 == 1 {
            out.push(format!("lemmas.refine_step must be even, got {}", l.refine_step));
        }
        for &[r, _] in l.gain.iter().chain(&l.lowr) {
            if let Err(e) = norms::conjugate_exponent(r) {
                out.push(format!("lemmas: {e}"));
            }
        }
        for &[r, _, n] in &l.nonlinear {
            if let Err(e) = norms::conjugate_exponent(r) {
                out.push(format!("lemmas: {e}"));
            }
            if !(n > 3.0) {
                out.push(format!("lemmas.nonlinear needs n > 3, got {n}"));
            }
        }
        for &gamma in &l.nu_gammas {
            if !(0.0..=1.0).contains(&gamma) {
                out.push(format!("lemmas.nu_gammas: {gamma} outside hard potentials 0 ≤ γ ≤ 1"));
            }
        }
        if self.kernel.ls.iter().any(|l| !l.is_finite()) {
            out.push("kernel.ls must be finite".into());
        }
        let b = &self.bench;
        if b.sizes.is_empty() || b.sizes.iter().any(|&n| n < 3 || n % 2 == 0) {
            out.push(format!("bench.sizes must be odd and at least 3, got {:?}", b.sizes));
        }
        if !(b.size_factor >= 1.0 && b.phi_factor >= 1.0) {
            out.push("bench factors must be at least 1".into());
        }
        out
    }

    pub fn norm_specs(&self) -> Vec<NormSpec> {
        self.norm.iter().map(|n| n.spec().expect("validated")).collect()
    }

    pub fn params(&self) -> CollisionParams {
        CollisionParams::new(self.physics.gamma, self.physics.c_b).expect("validated")
    }

    /// Parameter-range report for each configured norm.
    pub fn parameter_reports(&self) -> Vec<ParameterReport> {
        self.norm
            .iter()
            .filter_map(|n| norms::validate_parameters(n.r, n.l, self.physics.gamma).ok())
            .collect()
    }

    /// The resolved configuration as TOML.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn four() -> usize {
    4
}
fn eight() -> usize {
    8
}
fn sixteen() -> usize {
    16
}
fn one_f() -> f64 {
    1.0
}
fn two_f() -> f64 {
    2.0
}
fn ten_f() -> f64 {
    10.0
}
fn yes() -> bool {
    true
}
fn default_dt() -> f64 {
    0.01
}
fn default_t_star() -> f64 {
    0.1
}
fn default_tol() -> f64 {
    1e-10
}
fn default_n_max() -> usize {
    30
}
fn default_order() -> NormOrder {
    NormOrder::LinfTLrVLinfX
}
fn default_norms() -> Vec<NormEntry> {
    vec![NormEntry {
        r: 2.0,
        l: 2.0,
        order: NormOrder::LinfTLrVLinfX,
    }]
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_eps_c() -> f64 {
    10.0
}
fn default_quad_tol() -> f64 {
    1e-8
}
fn all_families() -> Vec<FamilyKind> {
    vec![FamilyKind::MaxwellianModulated, FamilyKind::CompactBump, FamilyKind::RandomPositive]
}
fn default_samples() -> usize {
    64
}
fn default_amplitude() -> [f64; 2] {
    [0.5, 2.0]
}
fn default_refine() -> usize {
    8
}
fn default_gain() -> Vec<[f64; 2]> {
    vec![[2.0, 2.0]]
}
fn default_lowr() -> Vec<[f64; 2]> {
    vec![[1.2, 2.0]]
}
fn default_nonlinear() -> Vec<[f64; 3]> {
    vec![[2.0, 2.0, 4.0]]
}
fn default_etas() -> Vec<f64> {
    vec![0.1, 0.01]
}
fn default_nu_gammas() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}
fn default_kernel_ls() -> Vec<f64> {
    vec![0.0, 3.0, 5.0, -2.0]
}
fn default_max_nodes() -> usize {
    DEFAULT_MAX_NODES
}
fn default_bench_sizes() -> Vec<usize> {
    vec![17, 25]
}
fn default_phi_factor() -> f64 {
    2.2
}
