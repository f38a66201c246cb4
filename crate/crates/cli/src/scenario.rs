//! One function per run mode; each writes its artifacts and returns a typed
//! outcome.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use kinetic_core::bench::{time_gain, GainCase, ScalingCheck};
use kinetic_core::collision::{self, CollisionOperator, ConservationCheck};
use kinetic_core::diagnostics::{self, DiagnosticsRecord, DriftCheck, EntropyBudget};
use kinetic_core::exec::{self, Exec};
use kinetic_core::grid::{DistributionField, SpatialGrid, SphereQuadrature, VelocityGrid};
use kinetic_core::lemma_lab::{self, ConstantReport, EvaluatedFamily, FamilyKind, NonlinearGainReport, NuGrowth, SampleFamily, ScalingSpot};
use kinetic_core::linearized::{self, KernelBoundReport, KernelMatrix};
use kinetic_core::norms::{self, ParameterReport, SmallnessSampling};
use kinetic_core::snapshot::Snapshot;
use kinetic_core::solver::{self, MarchSettings, PicardReport, PicardSettings, SmallnessSchedule, StepOptions};

use crate::config::{GridMode, RunMode, ScenarioConfig};
use crate::output::{hash_values, write_json, write_series};
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output.dir`.
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses the pool default.
    pub threads: Option<usize>,
    /// One worker and sequential loops.
    pub deterministic: bool,
}

impl RunOptions {
    fn exec(&self) -> Exec {
        if self.deterministic {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    fn threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads
                .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        }
    }
}

#[derive(Debug)]
pub enum Outcome {
    March(MarchOutcome),
    Picard(PicardOutcome),
    Lemmas(LemmaOutcome),
    Kernel(KernelOutcome),
    Bench(BenchOutcome),
}

pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Outcome, CliError> {
    let out = opts.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), cfg.echo())?;
    log::info!("memory estimate: {:.1} MiB", memory_estimate(cfg) as f64 / (1024.0 * 1024.0));
    if cfg.run.mode == RunMode::Bench {
        return run_bench(cfg, opts, &out).map(Outcome::Bench);
    }
    exec::with_threads(opts.threads(), || match cfg.run.mode {
        RunMode::March => run_march(cfg, opts, &out).map(Outcome::March),
        RunMode::Picard => run_picard(cfg, opts, &out).map(Outcome::Picard),
        RunMode::Lemmas => run_lemmas(cfg, opts, &out).map(Outcome::Lemmas),
        RunMode::Kernel => run_kernel(cfg, opts, &out).map(Outcome::Kernel),
        RunMode::Bench => unreachable!(),
    })
}

/// Rough peak bytes of the fields a run keeps alive.
pub fn memory_estimate(cfg: &ScenarioConfig) -> u64 {
    let m = (cfg.grid.n as u64).pow(3);
    let field = 8 * m * cfg.grid.nx as u64;
    match cfg.run.mode {
        RunMode::March => field * (steps(cfg.run.t_end, cfg.run.dt) / cfg.output.snapshot_every.max(1) as u64 + 8),
        RunMode::Picard => 3 * field * (steps(cfg.run.t_star, cfg.run.dt) + 1),
        RunMode::Lemmas => 5 * 8 * m * cfg.lemmas.samples as u64,
        RunMode::Kernel => 8 * m * m,
        RunMode::Bench => 8 * 4 * cfg.bench.sizes.iter().map(|&n| (n as u64).pow(3)).max().unwrap_or(0),
    }
}

fn steps(t: f64, dt: f64) -> u64 {
    (t / dt).round().max(0.0) as u64
}

fn grids(cfg: &ScenarioConfig) -> Result<(Arc<SpatialGrid>, Arc<VelocityGrid>), CliError> {
    let spatial = match cfg.grid.mode {
        GridMode::Homogeneous => SpatialGrid::homogeneous(),
        GridMode::Slab => SpatialGrid::slab(cfg.grid.length, cfg.grid.nx)?,
    };
    Ok((Arc::new(spatial), Arc::new(VelocityGrid::new(cfg.grid.extent, cfg.grid.n)?)))
}

fn operator(cfg: &ScenarioConfig, grid: &Arc<VelocityGrid>, exec: Exec) -> Result<CollisionOperator, CliError> {
    let sphere = SphereQuadrature::aligned(cfg.quadrature.n_theta, cfg.quadrature.n_phi)?;
    Ok(CollisionOperator::with_exec(Arc::clone(grid), cfg.params(), sphere, exec)?)
}

fn write_snapshot(path: &Path, field: &DistributionField, gamma: f64, t: f64) -> Result<(), CliError> {
    Snapshot::of_field(field, gamma, t).save(path)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct InitialSummary {
    pub amplitude_used: f64,
    pub clamped: bool,
}

#[derive(Debug, Serialize)]
pub struct MarchOutcome {
    pub config: String,
    pub parameters: Vec<ParameterReport>,
    pub initial: InitialSummary,
    pub dt: f64,
    pub steps: usize,
    pub completed_steps: usize,
    pub blow_up: Option<String>,
    pub entropy_budget: EntropyBudget,
    /// `max_k |M(t_k) − M₀|`, `max_k |E(t_k) − E₀|`.
    pub mass_drift: f64,
    pub energy_drift: f64,
    pub min_f: f64,
    pub clamped_nodes: usize,
    /// `ε_cons` calibration on the run's velocity grid, per unit `C_b`.
    pub conservation: Option<ConservationCheck>,
    pub drift: Option<DriftCheck>,
    #[serde(skip)]
    pub records: Vec<DiagnosticsRecord>,
}

fn run_march(cfg: &ScenarioConfig, opts: &RunOptions, out: &Path) -> Result<MarchOutcome, CliError> {
    let (spatial, velocity) = grids(cfg)?;
    let op = operator(cfg, &velocity, opts.exec())?;
    let init = solver::build_initial_data(&cfg.data, &spatial, &velocity)?;
    if init.clamped {
        log::warn!("initial amplitude clamped to {} to keep F₀ ≥ 0", init.amplitude_used);
    }
    let dt = cfg.run.dt;
    let steps = steps(cfg.run.t_end, dt) as usize;
    let stride = if cfg.output.snapshot_every == 0 { steps.max(1) } else { cfg.output.snapshot_every };
    let d = &cfg.diagnostics;
    let settings = MarchSettings {
        dt,
        steps,
        options: StepOptions {
            scheme: cfg.run.scheme,
            ..StepOptions::default()
        },
        norms: cfg.norm_specs(),
        smallness: (d.smallness_every > 0).then(|| SmallnessSchedule {
            every: d.smallness_every,
            t_star: cfg.run.t_star,
            sampling: sampling(cfg),
        }),
        store_every: stride,
    };
    let (traj, err) = solver::run_march_partial(init.field, &op, &settings)?;
    let records = traj.records().to_vec();
    let labels: Vec<String> = settings.norms.iter().map(|n| n.label()).collect();
    write_series(&out.join("series.csv"), &labels, &records)?;
    let snaps = out.join("snapshots");
    fs::create_dir_all(&snaps)?;
    for (i, (f, &t)) in traj.fields().iter().zip(traj.times()).enumerate() {
        write_snapshot(&snaps.join(format!("step_{:06}.kmx", i * stride)), f, cfg.physics.gamma, t)?;
    }
    let eps_h = diagnostics::entropy_tolerance(d.eps_c, dt, d.quad_tol);
    let conservation = (d.conservation_samples > 0)
        .then(|| calibrate_conservation(cfg, &velocity, opts.exec()))
        .transpose()?;
    let drift = conservation
        .as_ref()
        .map(|c| diagnostics::conservation_drift(&records, c.eps_cons, cfg.physics.c_b));
    let (m0, e0) = records.first().map(|r| (r.mass, r.energy)).unwrap_or_default();
    let outcome = MarchOutcome {
        config: cfg.echo(),
        parameters: cfg.parameter_reports(),
        initial: InitialSummary {
            amplitude_used: init.amplitude_used,
            clamped: init.clamped,
        },
        dt,
        steps,
        completed_steps: records.len() - 1,
        blow_up: err.as_ref().map(|e| e.to_string()),
        entropy_budget: diagnostics::excess_entropy_budget(&records, eps_h, d.m),
        mass_drift: records.iter().map(|r| (r.mass - m0).abs()).fold(0.0, f64::max),
        energy_drift: records.iter().map(|r| (r.energy - e0).abs()).fold(0.0, f64::max),
        min_f: records.iter().map(|r| r.min_f).fold(f64::INFINITY, f64::min),
        clamped_nodes: records.iter().map(|r| r.clamped).max().unwrap_or(0),
        conservation,
        drift,
        records,
    };
    write_json(&out.join("run.json"), &outcome)?;
    match err {
        Some(e) => Err(e.into()),
        None => Ok(outcome),
    }
}

/// `ε_cons` with `C_b = 1` on seeded random positive samples.
fn calibrate_conservation(cfg: &ScenarioConfig, grid: &Arc<VelocityGrid>, exec: Exec) -> Result<ConservationCheck, CliError> {
    let mut unit = cfg.clone();
    unit.physics.c_b = 1.0;
    let op = operator(&unit, grid, exec)?;
    let family = SampleFamily::new(FamilyKind::RandomPositive, cfg.diagnostics.conservation_samples, cfg.seed);
    let samples: Vec<_> = (0..family.count).map(|i| family.pair(grid, i).0).collect();
    Ok(collision::check_conservation(&op, &samples)?)
}

fn sampling(cfg: &ScenarioConfig) -> SmallnessSampling {
    let d = &cfg.diagnostics;
    SmallnessSampling {
        times_a: d.smallness_times_a,
        times_b: d.smallness_times_b,
        horizon_factor: d.smallness_horizon,
    }
}

#[derive(Debug, Serialize)]
pub struct PicardOutcome {
    pub config: String,
    pub parameters: Vec<ParameterReport>,
    pub initial: InitialSummary,
    pub steps: usize,
    pub mean_ratio: Option<f64>,
    pub report: PicardReport,
    pub cross_check: CrossCheck,
    #[serde(skip)]
    pub records: Vec<DiagnosticsRecord>,
}

fn run_picard(cfg: &ScenarioConfig, opts: &RunOptions, out: &Path) -> Result<PicardOutcome, CliError> {
    let (spatial, velocity) = grids(cfg)?;
    let op = operator(cfg, &velocity, opts.exec())?;
    let init = solver::build_initial_data(&cfg.data, &spatial, &velocity)?;
    let norm = cfg.norm_specs()[0];
    let ball = cfg.run.ball.unwrap_or_else(|| {
        let n0 = norms::mixed_norm_field(&init.field, &norm);
        if n0 > 0.0 {
            2.0 * n0
        } else {
            1.0
        }
    });
    let steps = steps(cfg.run.t_star, cfg.run.dt) as usize;
    let settings = PicardSettings {
        t_star: cfg.run.t_star,
        steps,
        tol: cfg.run.tol,
        n_max: cfg.run.n_max,
        norm,
        ball,
    };
    let report = solver::run_picard(&init.field, &op, &settings)?;
    let specs = cfg.norm_specs();
    let traj = &report.trajectory;
    let records: Vec<DiagnosticsRecord> = traj
        .fields()
        .iter()
        .zip(traj.times())
        .map(|(f, &t)| DiagnosticsRecord::of(t, f, &specs))
        .collect();
    let labels: Vec<String> = specs.iter().map(|n| n.label()).collect();
    write_series(&out.join("picard_series.csv"), &labels, &records)?;
    let snaps = out.join("snapshots");
    fs::create_dir_all(&snaps)?;
    let stride = if cfg.output.snapshot_every == 0 { steps.max(1) } else { cfg.output.snapshot_every };
    for (k, (f, &t)) in traj.fields().iter().zip(traj.times()).enumerate() {
        if k % stride == 0 || k == steps {
            write_snapshot(&snaps.join(format!("picard_{k:06}.kmx")), f, cfg.physics.gamma, t)?;
        }
    }
    let cross_check = cross_check(traj.fields(), init.field, &op, cfg)?;
    let outcome = PicardOutcome {
        config: cfg.echo(),
        parameters: cfg.parameter_reports(),
        initial: InitialSummary {
            amplitude_used: init.amplitude_used,
            clamped: init.clamped,
        },
        steps,
        mean_ratio: report.mean_ratio(),
        cross_check,
        report,
        records,
    };
    write_json(&out.join("picard.json"), &outcome)?;
    Ok(outcome)
}

/// Picard fixed point against the march at the same `Δt` on `[0, T*]`.
#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    /// Mixed norm of the difference.
    pub gap: f64,
    /// `max(tol, 5 Δt ‖f‖)` with `f` the marched solution.
    pub bound: f64,
    pub pass: bool,
}

fn cross_check(
    picard: &[DistributionField],
    init: DistributionField,
    op: &CollisionOperator,
    cfg: &ScenarioConfig,
) -> Result<CrossCheck, CliError> {
    let norm = cfg.norm_specs()[0];
    let settings = MarchSettings {
        dt: cfg.run.dt,
        steps: picard.len() - 1,
        options: StepOptions {
            scheme: cfg.run.scheme,
            ..StepOptions::default()
        },
        norms: Vec::new(),
        smallness: None,
        store_every: 1,
    };
    let march = solver::run_march(init, op, &settings)?;
    let diff: Vec<DistributionField> = picard
        .iter()
        .zip(march.fields())
        .map(|(p, q)| {
            let mut d = p.clone();
            d.values_mut().iter_mut().zip(q.values()).for_each(|(a, b)| *a -= b);
            d
        })
        .collect();
    let gap = norms::mixed_norm(&diff, &norm);
    let bound = cfg.run.tol.max(5.0 * cfg.run.dt * norms::mixed_norm(march.fields(), &norm));
    Ok(CrossCheck {
        gap,
        bound,
        pass: gap <= bound,
    })
}

/// Coarse and refined report for one inequality setting.
#[derive(Debug, Serialize)]
pub struct LemmaEntry {
    pub coarse: ConstantReport,
    pub fine: Option<ConstantReport>,
    /// `|C_coarse − C_fine| / max`.
    pub change: Option<f64>,
}

impl LemmaEntry {
    fn new(coarse: ConstantReport, fine: Option<ConstantReport>) -> Self {
        let change = fine.as_ref().map(|f| lemma_lab::relative_change(coarse.constant, f.constant));
        Self { coarse, fine, change }
    }
}

#[derive(Debug, Serialize)]
pub struct LemmaOutcome {
    pub config: String,
    pub entries: Vec<LemmaEntry>,
    pub frontiers: Vec<NonlinearGainReport>,
    pub scaling: Vec<ScalingSpot>,
    pub nu_growth: Vec<NuGrowth>,
    /// `(ρ, ‖g‖₁, loss ratio)` for a centred bump of shrinking radius.
    pub shrinking_bump: Vec<(f64, f64, f64)>,
    pub note: &'static str,
}

impl LemmaOutcome {
    /// Largest refinement change over all entries.
    pub fn worst_change(&self) -> Option<f64> {
        self.entries.iter().filter_map(|e| e.change).reduce(f64::max)
    }
}

fn run_lemmas(cfg: &ScenarioConfig, opts: &RunOptions, out: &Path) -> Result<LemmaOutcome, CliError> {
    let l = &cfg.lemmas;
    let extent = cfg.grid.extent;
    let mut sizes = vec![cfg.grid.n];
    if l.refine_step > 0 {
        sizes.push(cfg.grid.n + l.refine_step);
    }
    let ops: Vec<CollisionOperator> = sizes
        .iter()
        .map(|&n| operator(cfg, &Arc::new(VelocityGrid::new(extent, n)?), opts.exec()))
        .collect::<Result<_, _>>()?;
    let gain: Vec<(f64, f64)> = l.gain.iter().map(|p| (p[0], p[1])).collect();
    let lowr: Vec<(f64, f64)> = l.lowr.iter().map(|p| (p[0], p[1])).collect();
    let nonlinear: Vec<(f64, f64, f64)> = l.nonlinear.iter().map(|p| (p[0], p[1], p[2])).collect();

    let mut entries = Vec::new();
    let mut frontiers = Vec::new();
    let mut scaling = Vec::new();
    for &kind in &l.families {
        let family = SampleFamily {
            kind,
            count: l.samples,
            seed: cfg.seed,
            amplitude: (l.amplitude[0], l.amplitude[1]),
        };
        scaling.extend(lemma_lab::scaling_spot_checks(&family, &ops[0], &gain, &lowr, &nonlinear)?);
        let evaluated: Vec<EvaluatedFamily> = ops
            .iter()
            .map(|op| {
                log::info!("lemmas: {kind:?} on N = {}", op.grid().n());
                EvaluatedFamily::evaluate(&family, op)
            })
            .collect::<Result<_, _>>()?;
        let pair = |f: &dyn Fn(&EvaluatedFamily) -> kinetic_core::Result<ConstantReport>| -> Result<LemmaEntry, CliError> {
            let coarse = f(&evaluated[0])?;
            let fine = evaluated.get(1).map(f).transpose()?;
            Ok(LemmaEntry::new(coarse, fine))
        };
        for &(r, lw) in &gain {
            entries.push(pair(&|e| lemma_lab::estimate_gain_constant(e, r, lw))?);
        }
        for &(r, lw) in &lowr {
            entries.push(pair(&|e| lemma_lab::estimate_gain_constant_lowr(e, r, lw))?);
        }
        for &(r, lw, n) in &nonlinear {
            let runs: Vec<(ConstantReport, NonlinearGainReport)> = evaluated
                .iter()
                .map(|e| lemma_lab::estimate_nonlinear_bounds(e, r, lw, n, &l.etas))
                .collect::<Result<_, _>>()?;
            let mut runs = runs.into_iter();
            let (loss0, gain0) = runs.next().expect("coarse run");
            let fine = runs.next();
            let (loss1, gain1) = match fine {
                Some((a, b)) => (Some(a), Some(b)),
                None => (None, None),
            };
            entries.push(LemmaEntry::new(loss0, loss1));
            entries.push(LemmaEntry::new(gain0.leading.clone(), gain1.as_ref().map(|g| g.leading.clone())));
            frontiers.push(gain0);
            frontiers.extend(gain1);
        }
    }
    let sphere = SphereQuadrature::aligned(cfg.quadrature.n_theta, cfg.quadrature.n_phi)?;
    let nu_growth = lemma_lab::estimate_nu_growth(&l.nu_gammas, extent, cfg.grid.n, cfg.physics.c_b, &sphere)?;
    let radii: Vec<f64> = (0..4).map(|i| 0.5 * extent / 2f64.powi(i)).collect();
    let (r0, l0) = nonlinear.first().map(|t| (t.0, t.1)).unwrap_or((2.0, 2.0));
    let shrinking_bump = lemma_lab::shrinking_bump_sweep(ops.last().expect("one grid"), r0, l0, &radii)?;
    let outcome = LemmaOutcome {
        config: cfg.echo(),
        entries,
        frontiers,
        scaling,
        nu_growth,
        shrinking_bump,
        note: lemma_lab::REPORT_NOTE,
    };
    write_json(&out.join("lemmas.json"), &outcome)?;
    Ok(outcome)
}

#[derive(Debug, Serialize)]
pub struct KernelOutcome {
    pub config: String,
    pub nodes: usize,
    pub symmetry_defect: f64,
    pub reports: Vec<KernelBoundReport>,
}

fn run_kernel(cfg: &ScenarioConfig, opts: &RunOptions, out: &Path) -> Result<KernelOutcome, CliError> {
    let (_, velocity) = grids(cfg)?;
    let op = operator(cfg, &velocity, opts.exec())?;
    let m = velocity.len();
    log::info!("kernel matrix: {m}×{m}, {:.1} MiB", (8 * m * m) as f64 / (1024.0 * 1024.0));
    let k = KernelMatrix::from_operator(&op, cfg.kernel.max_nodes)?;
    let reports = cfg
        .kernel
        .ls
        .iter()
        .map(|&l| linearized::check_kernel_bounds(&k, l))
        .collect::<Result<Vec<_>, _>>()?;
    let snap = Snapshot {
        nx: m as u64,
        n: velocity.n() as u64,
        extent: velocity.extent(),
        gamma: cfg.physics.gamma,
        t: 0.0,
        values: k.entries().to_vec(),
    };
    snap.save(out.join("kernel.kmx"))?;
    let outcome = KernelOutcome {
        config: cfg.echo(),
        nodes: m,
        symmetry_defect: k.symmetry_defect(),
        reports,
    };
    write_json(&out.join("kernel.json"), &outcome)?;
    Ok(outcome)
}

#[derive(Debug, Serialize)]
pub struct TimingRow {
    pub case: GainCase,
    pub seconds: f64,
    pub node_rate: f64,
    pub hash: String,
}

#[derive(Debug, Serialize)]
pub struct BenchOutcome {
    pub config: String,
    pub timings: Vec<TimingRow>,
    /// Time ratio of the two largest sizes against `(N₂/N₁)⁶`.
    pub size_scaling: Option<ScalingCheck>,
    /// Time ratio for doubled `n_φ` against 2.
    pub phi_scaling: Option<ScalingCheck>,
    /// Sequential single-thread and parallel outputs hash identically.
    pub hash_match: bool,
}

fn run_bench(cfg: &ScenarioConfig, opts: &RunOptions, out: &Path) -> Result<BenchOutcome, CliError> {
    let b = &cfg.bench;
    let case = |n: usize, n_phi: usize, threads: usize, exec: Exec| GainCase {
        extent: cfg.grid.extent,
        n,
        n_theta: cfg.quadrature.n_theta,
        n_phi,
        gamma: cfg.physics.gamma,
        threads,
        exec,
    };
    let threads = opts.threads();
    let n_phi = cfg.quadrature.n_phi;
    let mut timings = Vec::new();
    let mut run = |c: GainCase| -> Result<f64, CliError> {
        log::info!("bench: N = {}, n_φ = {}, {} thread(s)", c.n, c.n_phi, c.threads);
        let t = time_gain(c, b.repeats)?;
        timings.push(TimingRow {
            case: c,
            seconds: t.seconds,
            node_rate: t.node_rate,
            hash: hash_values(t.output.values()),
        });
        Ok(t.seconds)
    };
    let mut times = Vec::new();
    for &n in &b.sizes {
        times.push(run(case(n, n_phi, threads, opts.exec()))?);
    }
    let smallest = b.sizes[0];
    run(case(smallest, n_phi, 1, Exec::Sequential))?;
    let size_scaling = (times.len() >= 2).then(|| {
        let k = times.len();
        let (n1, n2) = (b.sizes[k - 2] as f64, b.sizes[k - 1] as f64);
        ScalingCheck::new((n2 / n1).powi(6), times[k - 1] / times[k - 2], b.size_factor)
    });
    let phi_scaling = if b.phi_doubling {
        let t2 = run(case(smallest, 2 * n_phi, threads, opts.exec()))?;
        Some(ScalingCheck::new(2.0, t2 / times[0], b.phi_factor))
    } else {
        None
    };
    let hash_match = timings[0].hash == timings[b.sizes.len()].hash;
    let outcome = BenchOutcome {
        config: cfg.echo(),
        timings,
        size_scaling,
        phi_scaling,
        hash_match,
    };
    write_json(&out.join("bench.json"), &outcome)?;
    Ok(outcome)
}
