//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the lines always
//! reach the output.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use kinetic_cli::scenario::{BenchOutcome, KernelOutcome, LemmaOutcome, MarchOutcome, PicardOutcome};
use kinetic_cli::{parse_config, run_scenario, Outcome, RunOptions, ScenarioConfig};
use kinetic_core::collision::{self, reference, CollisionOperator, CollisionParams};
use kinetic_core::grid::{GridFunction, SpatialGrid, SphereQuadrature, VelocityGrid};
use kinetic_core::lemma_lab::{FamilyKind, SampleFamily};
use kinetic_core::norms::weighted_lr;
use kinetic_core::snapshot::Snapshot;
use kinetic_core::{maxwellian, Result as CoreResult};

// Tolerances.
const EQUILIBRIUM_TOL: f64 = 1e-3;
const ROUNDOFF_FLOOR: f64 = 1e-10;
const ORACLE_TOL: f64 = 1e-12;
const NU_REL_TOL: f64 = 1e-4;
const GAUSS_TOL: f64 = 1e-6;
const LEMMA_CHANGE: f64 = 0.2;
const SCALING_TOL: f64 = 1e-12;
const POSITIVITY_FLOOR: f64 = -1e-6;
const KERNEL_LS: [f64; 3] = [0.0, 3.0, 5.0];

type Verdict = Result<String, String>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn config(name: &str) -> ScenarioConfig {
    parse_config(configs().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn run(cfg: &ScenarioConfig, out: &Path) -> Outcome {
    let opts = RunOptions {
        out: Some(out.to_path_buf()),
        ..RunOptions::default()
    };
    run_scenario(cfg, &opts).unwrap_or_else(|e| panic!("{:?} run failed: {e}", cfg.run.mode))
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn operator(extent: f64, n: usize, gamma: f64, sphere: (usize, usize)) -> CollisionOperator {
    let grid = Arc::new(VelocityGrid::new(extent, n).unwrap());
    let sphere = SphereQuadrature::aligned(sphere.0, sphere.1).unwrap();
    CollisionOperator::new(grid, CollisionParams::new(gamma, 1.0).unwrap(), sphere).unwrap()
}

fn equilibrium_residual(n: usize) -> f64 {
    let op = operator(6.0, n, 1.0, (8, 16));
    let mu = op.grid().sample(maxwellian);
    let q = op.q_full(&mu, &mu).unwrap();
    q.values().iter().fold(0.0f64, |a, b| a.max(b.abs())) / maxwellian([0.0; 3])
}

fn c1_equilibrium() -> Verdict {
    let r25 = equilibrium_residual(25);
    let r33 = equilibrium_residual(33);
    let ok = r25 <= EQUILIBRIUM_TOL && (r33 <= r25 || r33 <= ROUNDOFF_FLOOR);
    verdict(ok, format!("max|q(μ,μ)|/max μ = {r25:.2e} at N=25, {r33:.2e} at N=33"))
}

fn random_samples(grid: &Arc<VelocityGrid>, count: usize, seed: u64) -> Vec<GridFunction> {
    let family = SampleFamily::new(FamilyKind::RandomPositive, count, seed);
    (0..count).map(|i| family.pair(grid, i).0).collect()
}

fn c2_invariants() -> Verdict {
    let coarse = operator(4.0, 11, 1.0, (2, 4));
    let check = collision::check_conservation(&coarse, &random_samples(coarse.grid(), 16, 2)).unwrap();
    let fine = operator(4.0, 15, 1.0, (4, 8));
    let refined = random_samples(fine.grid(), 16, 2)
        .iter()
        .map(|f| collision::conservation_defect(&fine.q_full(f, f).unwrap(), f))
        .fold(0.0, f64::max);
    let fast = check.fast.iter().cloned().fold(0.0, f64::max);
    verdict(
        check.pass && refined < check.eps_cons,
        format!(
            "ε_cons = {:.3} at N=11 (2,4), fast max {fast:.3}; N=15 (4,8) defect {refined:.3}",
            check.eps_cons
        ),
    )
}

fn norm_sq(v: [f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn max_diff(a: &GridFunction, b: &GridFunction) -> f64 {
    let scale = b.values().iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn c3_oracle() -> Verdict {
    let mut worst = 0.0f64;
    for gamma in [0.0, 0.5, 1.0] {
        let op = operator(4.0, 9, gamma, (2, 4));
        let grid = op.grid();
        let g = grid.sample(|v| (1.0 + 0.3 * v[0] - 0.2 * v[1] * v[2]) * (-0.6 * norm_sq(v)).exp());
        let h = grid.sample(|v| (0.5 * v[2] + (v[0] - v[1]).sin()) * (-0.4 * norm_sq(v)).exp());
        let (p, s) = (op.params(), op.sphere());
        let pairs: [(CoreResult<GridFunction>, CoreResult<GridFunction>); 3] = [
            (op.gamma_gain(&g, &h), reference::gamma_gain(&g, &h, p, s)),
            (op.gamma_loss(&g, &h), reference::gamma_loss(&g, &h, p, s)),
            (op.apply_k(&h), reference::apply_k(&h, p, s)),
        ];
        for (fast, naive) in pairs {
            worst = worst.max(max_diff(&fast.unwrap(), &naive.unwrap()));
        }
    }
    verdict(worst <= ORACLE_TOL, format!("max relative node difference {worst:.2e} (γ ∈ {{0, 0.5, 1}})"))
}

fn c4_constants() -> Verdict {
    let pi = std::f64::consts::PI;
    let fine = VelocityGrid::new(6.0, 65).unwrap();
    let sphere = SphereQuadrature::aligned(2, 4).unwrap();
    let nu = |gamma: f64| collision::nu_at(&fine, &CollisionParams::new(gamma, 1.0).unwrap(), &sphere, fine.center_index()).unwrap();
    let e0 = (nu(0.0) / (2.0 * pi * pi.powf(1.5)) - 1.0).abs();
    let e1 = (nu(1.0) / (4.0 * pi * pi) - 1.0).abs();
    let grid = Arc::new(VelocityGrid::new(6.0, 33).unwrap());
    let mu = grid.sample(maxwellian);
    let g1 = (weighted_lr(&mu, 1.0, 0.0) - pi.powf(1.5)).abs();
    let g2 = (weighted_lr(&mu, 2.0, 0.0) - (pi / 2.0).powf(0.75)).abs();
    let ok = e0 <= NU_REL_TOL && e1 <= NU_REL_TOL && g1 <= GAUSS_TOL && g2 <= GAUSS_TOL;
    verdict(
        ok,
        format!("ν(γ=0) rel {e0:.1e}, ν(γ=1,0) rel {e1:.1e}, ‖μ‖₁ err {g1:.1e}, ‖μ‖₂ err {g2:.1e}"),
    )
}

fn picard(t_star: f64, out: &Path) -> PicardOutcome {
    let mut cfg = config("picard.toml");
    cfg.run.t_star = t_star;
    match run(&cfg, out) {
        Outcome::Picard(p) => p,
        _ => unreachable!(),
    }
}

fn c5_c6_picard(out: &Path) -> (Verdict, Verdict) {
    let runs: Vec<PicardOutcome> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&t| picard(t, &out.join(format!("picard_{t}"))))
        .collect();
    let contracting = runs.iter().all(|p| p.report.converged && p.report.ratios.iter().all(|&r| r < 1.0));
    let means: Vec<f64> = runs.iter().map(|p| p.mean_ratio.unwrap_or(f64::NAN)).collect();
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    let worst = runs.iter().flat_map(|p| p.report.ratios.iter().copied()).fold(0.0, f64::max);
    let c5 = verdict(
        contracting && decreasing,
        format!("max ratio {worst:.3}; mean ratio {:.3} → {:.3} → {:.3} for T* = 0.1, 0.05, 0.025", means[0], means[1], means[2]),
    );
    let x = &runs[0].cross_check;
    let c6 = verdict(x.pass, format!("‖f_picard − f_march‖ = {:.2e} ≤ {:.2e}", x.gap, x.bound));
    (c5, c6)
}

fn march(cfg: &ScenarioConfig, out: &Path) -> MarchOutcome {
    match run(cfg, out) {
        Outcome::March(m) => m,
        _ => unreachable!(),
    }
}

fn c7_c10_march(out: &Path) -> (Verdict, Verdict) {
    let cfg = config("small_data.toml");
    let coarse = march(&cfg, &out.join("march_9"));
    let mut fine_cfg = cfg.clone();
    fine_cfg.grid.n = 13;
    fine_cfg.diagnostics.conservation_samples = 0;
    let fine = march(&fine_cfg, &out.join("march_13"));
    let b = &coarse.entropy_budget;
    let drift = coarse.drift.as_ref().expect("drift check configured");
    let shrinks = fine.mass_drift < coarse.mass_drift && fine.energy_drift < coarse.energy_drift;
    let c7 = verdict(
        b.ok && drift.ok && shrinks && coarse.completed_steps == coarse.steps,
        format!(
            "max ΔH {:.2e} ≤ ε_H {:.1e}; drift/bound mass {:.3}, energy {:.3}; drift M {:.2e} → {:.2e}, E {:.2e} → {:.2e} (N=9 → 13)",
            b.max_increase,
            b.eps_h,
            drift.mass_ratio,
            drift.energy_ratio,
            coarse.mass_drift,
            fine.mass_drift,
            coarse.energy_drift,
            fine.energy_drift
        ),
    );
    let c10 = verdict(coarse.min_f >= POSITIVITY_FLOOR, format!("min F = {:.3e}", coarse.min_f));
    (c7, c10)
}

fn c8_kernel(out: &Path) -> Verdict {
    let k: KernelOutcome = match run(&config("kernel.toml"), out) {
        Outcome::Kernel(k) => k,
        _ => unreachable!(),
    };
    let chosen: Vec<_> = k.reports.iter().filter(|r| KERNEL_LS.contains(&r.l)).collect();
    let ok = chosen.len() == KERNEL_LS.len() && chosen.iter().all(|r| r.pass && r.n == 13);
    let slopes: Vec<String> = chosen.iter().map(|r| format!("l={}: {:.2}", r.l, r.slope)).collect();
    verdict(
        ok,
        format!("slopes {}; c1 {:.2e}, c2 {:.2e}", slopes.join(", "), chosen[0].c1, chosen[0].c2),
    )
}

fn c9_lemmas(out: &Path) -> Verdict {
    let l: LemmaOutcome = match run(&config("lemmas.toml"), out) {
        Outcome::Lemmas(l) => l,
        _ => unreachable!(),
    };
    let worst = l.worst_change().unwrap_or(f64::INFINITY);
    let complete = l.entries.iter().all(|e| e.change.is_some());
    let scaling = l.scaling.iter().map(|s| s.relative).fold(0.0, f64::max);
    verdict(
        complete && worst <= LEMMA_CHANGE && scaling <= SCALING_TOL,
        format!(
            "{} constants, worst refinement change {:.1}%; {} scaling checks, worst {scaling:.1e}",
            l.entries.len(),
            100.0 * worst,
            l.scaling.len()
        ),
    )
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn c11_determinism(out: &Path) -> Verdict {
    let cfg = configs().join("small_data.toml");
    let dirs = [out.join("det_a"), out.join("det_b")];
    for d in &dirs {
        let status = Command::new(env!("CARGO_BIN_EXE_kmx"))
            .args(["--deterministic", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(d)
            .arg("run")
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success(), "kmx exited with {status}");
    }
    let (a, b) = (files(&dirs[0]), files(&dirs[1]));
    let same_set = a.iter().map(|p| p.strip_prefix(&dirs[0]).unwrap()).eq(b.iter().map(|p| p.strip_prefix(&dirs[1]).unwrap()));
    let identical = same_set && a.iter().zip(&b).all(|(x, y)| fs::read(x).unwrap() == fs::read(y).unwrap());

    let snaps: Vec<PathBuf> = a.into_iter().filter(|p| p.extension().is_some_and(|e| e == "kmx")).collect();
    let mut round_trip = !snaps.is_empty();
    for p in &snaps {
        let bytes = fs::read(p).unwrap();
        let snap = Snapshot::read_from(bytes.as_slice()).unwrap();
        let field = snap.to_field(Arc::new(SpatialGrid::homogeneous())).unwrap();
        let mut again = Vec::new();
        Snapshot::of_field(&field, snap.gamma, snap.t).write_to(&mut again).unwrap();
        round_trip &= again == bytes;
    }

    let bench: BenchOutcome = match run(&config("bench.toml"), &out.join("bench")) {
        Outcome::Bench(b) => b,
        _ => unreachable!(),
    };
    let size = bench.size_scaling.as_ref().expect("two sizes");
    let phi = bench.phi_scaling.as_ref().expect("phi doubling");
    verdict(
        identical && round_trip && size.pass && phi.pass && bench.hash_match,
        format!(
            "reruns identical: {identical}; {} snapshots round-trip: {round_trip}; N⁶ ratio {:.2} vs {:.2} (×{}), n_φ ratio {:.2} vs 2 (×{}); seq/par hash match: {}",
            snaps.len(),
            size.measured,
            size.predicted,
            size.factor,
            phi.measured,
            phi.factor,
            bench.hash_match
        ),
    )
}

fn main() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path();
    let mut failed = 0;
    let mut report = |id: usize, name: &str, v: Verdict, secs: f64| {
        match v {
            Ok(d) => println!("PASS criterion {id:>2} {name}: {d} [{secs:.0} s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {id:>2} {name}: {d} [{secs:.0} s]");
            }
        }
    };

    let t = Instant::now();
    report(1, "equilibrium identity", c1_equilibrium(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    report(2, "collision invariants", c2_invariants(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    report(3, "oracle equivalence", c3_oracle(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    report(4, "analytic constants", c4_constants(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let (c5, c6) = c5_c6_picard(dir);
    let picard_secs = t.elapsed().as_secs_f64();
    report(5, "picard contraction", c5, picard_secs);
    report(6, "picard-march agreement", c6, picard_secs);
    let t = Instant::now();
    let (c7, c10) = c7_c10_march(dir);
    let march_secs = t.elapsed().as_secs_f64();
    report(7, "entropy and drift", c7, march_secs);
    let t = Instant::now();
    report(8, "kernel bounds", c8_kernel(&dir.join("kernel")), t.elapsed().as_secs_f64());
    let t = Instant::now();
    report(9, "lemma constants", c9_lemmas(&dir.join("lemmas")), t.elapsed().as_secs_f64());
    report(10, "positivity", c10, march_secs);
    let t = Instant::now();
    report(11, "determinism and formats", c11_determinism(dir), t.elapsed().as_secs_f64());

    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
