//! Mild-form time integration: exponential marching and the Picard sequence.
//!
//! State is the perturbation `f` with `F = μ + √μ f`. In slab mode transport
//! acts along `v₁` on the periodic interval `[0, L)`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::CollisionOperator;
use crate::diagnostics::DiagnosticsRecord;
use crate::grid::{DistributionField, SpatialGrid, VelocityGrid};
use crate::norms::{self, NormSpec, SmallnessSampling};
use crate::{norm_sq, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    #[default]
    Zero,
    GaussianBump,
    TwoTemperature,
    RandomSmooth,
}

/// Initial perturbation `f₀`. Every kind is multiplied by
/// `1 + κ cos(2πx/L)` in slab mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialDataSpec {
    pub kind: DataKind,
    pub amplitude: f64,
    /// `two_temperature`: `f₀ = a(e^{−|v|²/2T₁} − e^{−|v|²/2T₂})/√μ`.
    pub t1: f64,
    pub t2: f64,
    /// `gaussian_bump`: `f₀ = a e^{−|v−c|²/2σ²}`.
    pub center: [f64; 3],
    pub width: f64,
    /// Spatial modulation depth `κ`.
    pub kappa: f64,
    /// `random_smooth`: number of random modes.
    pub modes: usize,
    pub seed: u64,
}

impl Default for InitialDataSpec {
    fn default() -> Self {
        Self {
            kind: DataKind::Zero,
            amplitude: 0.0,
            t1: 0.4,
            t2: 0.5,
            center: [0.5, 0.0, 0.0],
            width: 0.8,
            kappa: 0.0,
            modes: 4,
            seed: 0,
        }
    }
}

impl InitialDataSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.amplitude.is_finite() {
            out.push(format!("data.amplitude must be finite, got {}", self.amplitude));
        }
        if !(self.t1 > 0.0 && self.t2 > 0.0) {
            out.push(format!("data.t1, data.t2 must be positive, got {}, {}", self.t1, self.t2));
        }
        if !(self.width > 0.0) {
            out.push(format!("data.width must be positive, got {}", self.width));
        }
        if !(self.kappa.abs() <= 1.0) {
            out.push(format!("data.kappa must lie in [-1, 1], got {}", self.kappa));
        }
        if self.kind == DataKind::RandomSmooth && self.modes == 0 {
            out.push("data.modes must be at least 1".into());
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct InitialData {
    pub field: DistributionField,
    pub amplitude_used: f64,
    /// Amplitude was reduced to keep `μ + √μ f₀ ≥ 0`.
    pub clamped: bool,
}

/// Safety factor applied when the amplitude has to be clamped.
const CLAMP_MARGIN: f64 = 0.999;

pub fn build_initial_data(
    spec: &InitialDataSpec,
    spatial: &Arc<SpatialGrid>,
    velocity: &Arc<VelocityGrid>,
) -> Result<InitialData> {
    let bad = spec.violations();
    if !bad.is_empty() {
        return Err(Error::Config(bad.join("; ")));
    }
    let nodes = velocity.nodes();
    let l = spatial.length();
    let shape: Box<dyn Fn(f64, [f64; 3]) -> f64> = match spec.kind {
        DataKind::Zero => Box::new(|_, _| 0.0),
        DataKind::GaussianBump => {
            let (c, w) = (spec.center, spec.width);
            Box::new(move |_, v| {
                let d = [v[0] - c[0], v[1] - c[1], v[2] - c[2]];
                (-norm_sq(d) / (2.0 * w * w)).exp()
            })
        }
        DataKind::TwoTemperature => {
            let (t1, t2) = (spec.t1, spec.t2);
            Box::new(move |_, v| {
                let r2 = norm_sq(v);
                ((-r2 / (2.0 * t1)).exp() - (-r2 / (2.0 * t2)).exp()) / (-0.5 * r2).exp()
            })
        }
        DataKind::RandomSmooth => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let modes: Vec<(usize, f64, usize, f64)> = (0..spec.modes)
                .map(|_| {
                    (
                        rng.gen_range(0..8usize),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(0..3usize),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect();
            let slab = spatial.nx() > 1;
            Box::new(move |x, v| {
                let r2 = norm_sq(v);
                let env = (-0.75 * r2).exp();
                modes
                    .iter()
                    .map(|&(p, c, k, phase)| {
                        let poly = match p {
                            0 => 1.0,
                            1 => v[0],
                            2 => v[1],
                            3 => v[2],
                            4 => r2 - 1.5,
                            5 => v[0] * v[1],
                            6 => v[0] * v[2],
                            _ => v[1] * v[2],
                        };
                        let xs = if slab {
                            (std::f64::consts::TAU * k as f64 * x / l + phase).cos()
                        } else {
                            1.0
                        };
                        c * poly * xs
                    })
                    .sum::<f64>()
                    * env
            })
        }
    };
    let slab = spatial.nx() > 1;
    let mut values = Vec::with_capacity(spatial.nx() * velocity.len());
    for j in 0..spatial.nx() {
        let x = spatial.position(j);
        let modulation = if slab {
            1.0 + spec.kappa * (std::f64::consts::TAU * x / l).cos()
        } else {
            1.0
        };
        values.extend(nodes.iter().map(|&v| modulation * shape(x, v)));
    }

    // largest scale keeping μ + √μ·a·shape ≥ 0
    let mut limit = f64::INFINITY;
    for (i, s) in values.iter().enumerate() {
        let v = nodes[i % velocity.len()];
        let d = spec.amplitude * (-0.5 * norm_sq(v)).exp() * s;
        if d < 0.0 {
            limit = limit.min(crate::maxwellian(v) / -d);
        }
    }
    let clamped = limit < 1.0;
    let amplitude_used = if clamped {
        log::warn!(
            "initial amplitude {} violates F0 >= 0; clamped to {}",
            spec.amplitude,
            spec.amplitude * limit * CLAMP_MARGIN
        );
        spec.amplitude * limit * CLAMP_MARGIN
    } else {
        spec.amplitude
    };
    for x in values.iter_mut() {
        *x *= amplitude_used;
    }
    let field = DistributionField::new(Arc::clone(spatial), Arc::clone(velocity), values)?;
    Ok(InitialData {
        field,
        amplitude_used,
        clamped,
    })
}

/// `f(x − v₁Δt, v)` with periodic linear interpolation in x.
pub fn free_stream(field: &DistributionField, dt: f64) -> DistributionField {
    let spatial = field.spatial();
    if spatial.nx() == 1 {
        return field.clone();
    }
    let grid = field.velocity();
    let m = grid.len();
    let nodes = grid.nodes();
    let mut out = vec![0.0; field.values().len()];
    for (j, row) in out.chunks_mut(m).enumerate() {
        let x = spatial.position(j);
        for (i, o) in row.iter_mut().enumerate() {
            let (j0, j1, th) = spatial.periodic_stencil(x - nodes[i][0] * dt);
            let a = field.slice(j0)[i];
            *o = if th == 0.0 { a } else { (1.0 - th) * a + th * field.slice(j1)[i] };
        }
    }
    DistributionField::new(Arc::clone(spatial), Arc::clone(grid), out).expect("same shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Damping `ν(v)`, source `Kf + Γ_gain(f,f) − Γ_loss(f,f)`.
    NuIntegrator,
    /// Damping `g_f = ν + L(f)`, source `Kf + Γ_gain(f,f)`.
    #[default]
    GIntegrator,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub scheme: Scheme,
    /// Largest admissible step; `None` means `0.5 / max ν`.
    pub dt_max: Option<f64>,
    /// With `false` the step is pure damped streaming.
    pub collisions: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            scheme: Scheme::GIntegrator,
            dt_max: None,
            collisions: true,
        }
    }
}

pub fn default_dt_max(op: &CollisionOperator) -> f64 {
    0.5 / op.nu().max_abs()
}

/// `(1 − e^{−z})/z`.
#[inline]
fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        -(-z).exp_m1() / z
    }
}

/// `∫₀¹ e^{−zσ} σ dσ`.
#[inline]
fn psi1(z: f64) -> f64 {
    if z.abs() < 0.1 {
        // Σ (−z)^k / (k! (k+2))
        let mut term = 1.0;
        let mut sum = 0.5;
        for k in 1..10 {
            term *= -z / k as f64;
            sum += term / (k + 2) as f64;
        }
        sum
    } else {
        (1.0 - (1.0 + z) * (-z).exp()) / (z * z)
    }
}

/// One exponential step: `f⁺ = e^{−aΔt} S f + Δt φ₁(aΔt) S s` with `S` the
/// free streaming, `a` the damping rate and `s` the source of the scheme.
pub fn march_step(
    state: &DistributionField,
    dt: f64,
    op: &CollisionOperator,
    options: &StepOptions,
) -> Result<DistributionField> {
    let limit = options.dt_max.unwrap_or_else(|| default_dt_max(op));
    if !(dt > 0.0) || dt > limit {
        return Err(Error::Stability { dt, limit });
    }
    if !state.velocity().same_as(op.grid()) {
        return Err(Error::Contract("state and operator use different velocity grids".into()));
    }
    let m = op.grid().len();
    let nu = op.nu().values();
    let mut rate = Vec::with_capacity(state.values().len());
    let mut source = Vec::with_capacity(state.values().len());
    for x in 0..state.nx() {
        let f = state.slice(x);
        if !options.collisions {
            rate.extend_from_slice(nu);
            source.extend(std::iter::repeat_n(0.0, m));
            continue;
        }
        let s = op.source_raw(f);
        let l = op.loss_frequency(f);
        match options.scheme {
            Scheme::NuIntegrator => {
                rate.extend_from_slice(nu);
                source.extend(s.values().iter().zip(f).zip(&l).map(|((s, f), l)| s - f * l));
            }
            Scheme::GIntegrator => {
                rate.extend(nu.iter().zip(&l).map(|(n, l)| n + l));
                source.extend_from_slice(s.values());
            }
        }
    }
    let spatial = state.spatial();
    let velocity = state.velocity();
    // A non-finite rate, source or result is a blow-up of this step; the
    // caller fills in the step index.
    let wrap = |v: Vec<f64>| {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::BlowUp { step: 1, time: dt });
        }
        DistributionField::new(Arc::clone(spatial), Arc::clone(velocity), v)
    };
    let f_s = free_stream(state, dt);
    let r_s = free_stream(&wrap(rate)?, dt);
    let s_s = free_stream(&wrap(source)?, dt);
    let out = f_s
        .values()
        .iter()
        .zip(r_s.values())
        .zip(s_s.values())
        .map(|((f, a), s)| {
            let z = a * dt;
            (-z).exp() * f + dt * phi1(z) * s
        })
        .collect();
    wrap(out)
}

/// Stored time series. Fields sit on the uniform grid `t_k = kΔt`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dt: f64,
    times: Vec<f64>,
    fields: Vec<DistributionField>,
    records: Vec<DiagnosticsRecord>,
}

impl Trajectory {
    pub fn new(dt: f64, fields: Vec<DistributionField>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Contract(format!("time step must be positive, got {dt}")));
        }
        if let Some(f) = fields.first() {
            if !fields.iter().all(|g| g.compatible(f)) {
                return Err(Error::Contract("trajectory fields must share grids".into()));
            }
        }
        let times = (0..fields.len()).map(|k| k as f64 * dt).collect();
        Ok(Self {
            dt,
            times,
            fields,
            records: Vec::new(),
        })
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn fields(&self) -> &[DistributionField] {
        &self.fields
    }
    /// Diagnostics of every computed step, including unstored ones.
    pub fn records(&self) -> &[DiagnosticsRecord] {
        &self.records
    }
    pub fn last(&self) -> Option<&DistributionField> {
        self.fields.last()
    }
    pub fn len(&self) -> usize {
        self.fields.len()
    }
    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

/// When to evaluate the smallness functionals along a march.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallnessSchedule {
    pub every: usize,
    pub t_star: f64,
    pub sampling: SmallnessSampling,
}

#[derive(Debug, Clone)]
pub struct MarchSettings {
    pub dt: f64,
    pub steps: usize,
    pub options: StepOptions,
    pub norms: Vec<NormSpec>,
    pub smallness: Option<SmallnessSchedule>,
    /// Keep every `store_every`-th field.
    pub store_every: usize,
}

/// March `steps` steps; stops at the first non-finite state.
pub fn run_march(initial: DistributionField, op: &CollisionOperator, settings: &MarchSettings) -> Result<Trajectory> {
    match run_march_partial(initial, op, settings)? {
        (traj, None) => Ok(traj),
        (_, Some(err)) => Err(err),
    }
}

/// Like [`run_march`], but hands back the trajectory up to the last good
/// step together with the blow-up error.
pub fn run_march_partial(
    initial: DistributionField,
    op: &CollisionOperator,
    settings: &MarchSettings,
) -> Result<(Trajectory, Option<Error>)> {
    let stride = settings.store_every.max(1);
    let mut traj = Trajectory::new(settings.dt * stride as f64, vec![initial.clone()])?;
    let record = |k: usize, f: &DistributionField| -> Result<DiagnosticsRecord> {
        let t = k as f64 * settings.dt;
        let mut r = DiagnosticsRecord::of(t, f, &settings.norms);
        if let Some(s) = &settings.smallness {
            if s.every > 0 && k.is_multiple_of(s.every) {
                r.smallness = Some(norms::smallness_functionals(f, s.t_star, op, &s.sampling)?);
            }
        }
        Ok(r)
    };
    traj.records.push(record(0, &initial)?);
    let mut state = initial;
    for k in 1..=settings.steps {
        let next = match march_step(&state, settings.dt, op, &settings.options) {
            Err(Error::BlowUp { .. }) => {
                let err = Error::BlowUp {
                    step: k,
                    time: k as f64 * settings.dt,
                };
                return Ok((traj, Some(err)));
            }
            other => other?,
        };
        traj.records.push(record(k, &next)?);
        if k % stride == 0 {
            traj.times.push(traj.fields.len() as f64 * traj.dt);
            traj.fields.push(next.clone());
        }
        state = next;
    }
    Ok((traj, None))
}

#[derive(Debug, Clone)]
pub struct PicardSettings {
    pub t_star: f64,
    /// Number of time intervals on `[0, T*]`.
    pub steps: usize,
    pub tol: f64,
    pub n_max: usize,
    /// Distances use this norm with weight `w^{l/2}`.
    pub norm: NormSpec,
    /// Ball radius `M` for the iterate bound.
    pub ball: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PicardReport {
    pub iterations: usize,
    /// `d_n = ‖w^{l/2}(f^{n+1} − f^n)‖`.
    pub distances: Vec<f64>,
    /// `d_{n+1}/d_n`.
    pub ratios: Vec<f64>,
    pub converged: bool,
    /// Three consecutive increases of `d_n`.
    pub non_contraction: bool,
    /// `sup_t ‖w^l f^n(t)‖_{L^r_v L^∞_x}` per iterate.
    pub iterate_norms: Vec<f64>,
    pub ball: f64,
    pub within_ball: bool,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

impl PicardReport {
    /// Mean contraction ratio; `None` without ratios.
    pub fn mean_ratio(&self) -> Option<f64> {
        let r: Vec<f64> = self.ratios.iter().copied().filter(|x| x.is_finite()).collect();
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }
}

/// The Picard sequence with `f⁰ = 0`: damping from `g_{fⁿ}`, sources
/// `Kfⁿ + Γ_gain(fⁿ,fⁿ)` along characteristics. In time, `g` is integrated
/// by the trapezoid rule and the source is linear between stored levels,
/// integrated exactly against the exponential.
pub fn run_picard(f0: &DistributionField, op: &CollisionOperator, settings: &PicardSettings) -> Result<PicardReport> {
    if !(settings.t_star > 0.0) || settings.steps == 0 {
        return Err(Error::Config("picard needs T* > 0 and at least one step".into()));
    }
    if !f0.velocity().same_as(op.grid()) {
        return Err(Error::Contract("data and operator use different velocity grids".into()));
    }
    let kmax = settings.steps;
    let dt = settings.t_star / kmax as f64;
    let spatial = Arc::clone(f0.spatial());
    let velocity = Arc::clone(f0.velocity());
    let (nx, m) = (spatial.nx(), velocity.len());
    let half = settings.norm.with_l(0.5 * settings.norm.l());
    let full = NormSpec::new(settings.norm.r(), settings.norm.l(), crate::norms::NormOrder::LinfTLrVLinfX)?;
    let nu = op.nu().values();
    let nodes = velocity.nodes();

    let zero = DistributionField::zeros(Arc::clone(&spatial), Arc::clone(&velocity));
    let mut current: Vec<DistributionField> = vec![zero; kmax + 1];
    let mut distances = Vec::new();
    let mut iterate_norms = vec![0.0];
    let mut converged = false;
    let mut non_contraction = false;
    let mut rises = 0;

    for n in 0..settings.n_max.max(1) {
        // sources and damping of fⁿ at every level
        let mut src = Vec::with_capacity(kmax + 1);
        let mut rate = Vec::with_capacity(kmax + 1);
        for f in &current {
            let mut s = Vec::with_capacity(nx * m);
            let mut g = Vec::with_capacity(nx * m);
            for x in 0..nx {
                let fx = f.slice(x);
                if fx.iter().all(|&a| a == 0.0) {
                    s.extend(std::iter::repeat_n(0.0, m));
                    g.extend_from_slice(nu);
                } else {
                    s.extend_from_slice(op.source_raw(fx).values());
                    g.extend(op.loss_frequency(fx).iter().zip(nu).map(|(l, n)| n + l));
                }
            }
            src.push(s);
            rate.push(g);
        }
        let next: Vec<DistributionField> = (0..=kmax)
            .map(|k| {
                let tk = k as f64 * dt;
                let values = op.exec().map(nx * m, |node| {
                    let (x, i) = (node / m, node % m);
                    let xpos = spatial.position(x);
                    let v1 = nodes[i][0];
                    let at = |arr: &[f64], j: usize| {
                        let (j0, j1, th) = spatial.periodic_stencil(xpos - v1 * (tk - j as f64 * dt));
                        let a = arr[j0 * m + i];
                        if th == 0.0 { a } else { (1.0 - th) * a + th * arr[j1 * m + i] }
                    };
                    let mut big_g = 0.0f64;
                    let mut acc = 0.0;
                    if k > 0 {
                        let (mut g_hi, mut s_hi) = (at(&rate[k], k), at(&src[k], k));
                        for j in (0..k).rev() {
                            let (g_lo, s_lo) = (at(&rate[j], j), at(&src[j], j));
                            let a = 0.5 * dt * (g_lo + g_hi);
                            let p1 = psi1(a);
                            let p0 = phi1(a) - p1;
                            acc += (-big_g).exp() * dt * (s_hi * p0 + s_lo * p1);
                            big_g += a;
                            g_hi = g_lo;
                            s_hi = s_lo;
                        }
                    }
                    (-big_g).exp() * at(f0.values(), 0) + acc
                });
                DistributionField::new(Arc::clone(&spatial), Arc::clone(&velocity), values)
            })
            .collect::<Result<_>>()
            .map_err(|_| Error::BlowUp {
                step: n + 1,
                time: settings.t_star,
            })?;

        let diffs: Vec<DistributionField> = next
            .iter()
            .zip(&current)
            .map(|(a, b)| {
                let v = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
                DistributionField::new(Arc::clone(&spatial), Arc::clone(&velocity), v)
            })
            .collect::<Result<_>>()?;
        let d = norms::mixed_norm(&diffs, &half);
        iterate_norms.push(norms::mixed_norm(&next, &full));
        if let Some(&prev) = distances.last() {
            rises = if d > prev { rises + 1 } else { 0 };
        }
        distances.push(d);
        current = next;
        if d <= settings.tol {
            converged = true;
            break;
        }
        if rises >= 3 {
            non_contraction = true;
            break;
        }
    }

    let ratios = distances
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { f64::NAN })
        .collect();
    let data_norm = norms::mixed_norm_field(f0, &full);
    let within_ball = data_norm > settings.ball / 2.0 || iterate_norms.iter().all(|&x| x <= settings.ball);
    let mut trajectory = Trajectory::new(dt, current)?;
    trajectory.records = trajectory
        .fields
        .iter()
        .enumerate()
        .map(|(k, f)| DiagnosticsRecord::of(k as f64 * dt, f, std::slice::from_ref(&settings.norm)))
        .collect();
    Ok(PicardReport {
        iterations: distances.len(),
        distances,
        ratios,
        converged,
        non_contraction,
        iterate_norms,
        ball: settings.ball,
        within_ball,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::CollisionParams;
    use crate::grid::SphereQuadrature;
    use crate::norms::NormOrder;

    fn op(r: f64, n: usize, gamma: f64) -> CollisionOperator {
        let grid = Arc::new(VelocityGrid::new(r, n).unwrap());
        CollisionOperator::new(grid, CollisionParams::new(gamma, 1.0).unwrap(), SphereQuadrature::aligned(2, 4).unwrap())
            .unwrap()
    }

    fn hom() -> Arc<SpatialGrid> {
        Arc::new(SpatialGrid::homogeneous())
    }

    #[test]
    fn phi_and_psi_series_match_closed_forms() {
        for z in [1e-9f64, 1e-4, 0.05, 0.0999, 0.1001, 0.7, 3.0, 40.0] {
            let p1 = -(-z).exp_m1() / z;
            assert!((phi1(z) - p1).abs() < 1e-9 * p1.max(1e-3), "{z}");
        }
        let s = psi1(0.0999);
        let c = (1.0 - (1.0 + 0.0999) * (-0.0999f64).exp()) / (0.0999 * 0.0999);
        assert!((s - c).abs() < 1e-12);
        assert!((psi1(0.0) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn initial_data_kinds() {
        let grid = Arc::new(VelocityGrid::new(4.0, 9).unwrap());
        let spec = InitialDataSpec::default();
        let z = build_initial_data(&spec, &hom(), &grid).unwrap();
        assert!(z.field.values().iter().all(|&x| x == 0.0));

        let spec = InitialDataSpec {
            kind: DataKind::TwoTemperature,
            amplitude: 0.3,
            ..Default::default()
        };
        let d = build_initial_data(&spec, &hom(), &grid).unwrap();
        assert!(!d.clamped);
        for (f, &v) in d.field.values().iter().zip(grid.nodes()) {
            let r2 = norm_sq(v);
            let want = 0.3 * ((-r2 / 0.8).exp() - (-r2).exp()) / (-0.5 * r2).exp();
            assert!((f - want).abs() <= 1e-15 * want.abs().max(1.0));
            assert!(crate::maxwellian(v) + (-0.5 * r2).exp() * f >= 0.0);
        }

        let slab = Arc::new(SpatialGrid::slab(2.0, 5).unwrap());
        let spec = InitialDataSpec {
            kind: DataKind::RandomSmooth,
            amplitude: 50.0,
            seed: 7,
            ..Default::default()
        };
        let a = build_initial_data(&spec, &slab, &grid).unwrap();
        let b = build_initial_data(&spec, &slab, &grid).unwrap();
        assert_eq!(a.field.values(), b.field.values());
        assert!(a.clamped && a.amplitude_used < 50.0);
        assert!(crate::diagnostics::positivity_min(&a.field) >= 0.0);

        let bad = InitialDataSpec {
            width: -1.0,
            kappa: 2.0,
            ..Default::default()
        };
        let msg = build_initial_data(&bad, &hom(), &grid).unwrap_err().to_string();
        assert!(msg.contains("width") && msg.contains("kappa"));
    }

    fn slab_field(nx: usize, grid: &Arc<VelocityGrid>) -> DistributionField {
        let sp = Arc::new(SpatialGrid::slab(2.0, nx).unwrap());
        let mut v = Vec::new();
        for j in 0..nx {
            let x = sp.position(j);
            v.extend(grid.nodes().iter().map(|&u| (1.0 + (std::f64::consts::PI * x).sin()) * (-norm_sq(u)).exp()));
        }
        DistributionField::new(sp, Arc::clone(grid), v).unwrap()
    }

    #[test]
    fn streaming() {
        let grid = Arc::new(VelocityGrid::new(2.0, 5).unwrap());
        let f = DistributionField::uniform(hom(), &grid.sample(|v| v[0]));
        assert_eq!(free_stream(&f, 0.3).values(), f.values());

        let nx = 8;
        let f = slab_field(nx, &grid);
        let dx = 2.0 / nx as f64;
        // v₁ = 1 on the slab i = 3, so Δt = dx shifts by one cell
        let shifted = free_stream(&f, dx);
        let m = grid.len();
        for j in 0..nx {
            for i in 0..m {
                let v1 = grid.nodes()[i][0];
                if v1 == 1.0 {
                    assert_eq!(shifted.slice(j)[i], f.slice((j + nx - 1) % nx)[i]);
                }
            }
        }
        // lattice-commensurate halves compose
        let two = free_stream(&free_stream(&f, dx), dx);
        let one = free_stream(&f, 2.0 * dx);
        for (a, b) in two.values().iter().zip(one.values()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_is_fixed_and_damped_streaming() {
        let o = op(4.0, 7, 1.0);
        let grid = Arc::clone(o.grid());
        let sp = Arc::new(SpatialGrid::slab(2.0, 4).unwrap());
        let zero = DistributionField::zeros(Arc::clone(&sp), Arc::clone(&grid));
        for scheme in [Scheme::NuIntegrator, Scheme::GIntegrator] {
            let opts = StepOptions { scheme, ..Default::default() };
            let out = march_step(&zero, 1e-3, &o, &opts).unwrap();
            assert!(out.values().iter().all(|&x| x == 0.0));
        }
        let f = slab_field(4, &grid);
        let dt = 1e-3;
        let opts = StepOptions {
            collisions: false,
            ..Default::default()
        };
        let out = march_step(&f, dt, &o, &opts).unwrap();
        let streamed = free_stream(&f, dt);
        let m = grid.len();
        for (k, (a, b)) in out.values().iter().zip(streamed.values()).enumerate() {
            let want = (-o.nu().values()[k % m] * dt).exp() * b;
            assert!((a - want).abs() <= 1e-15 * want.abs().max(1e-300));
        }
        assert!(matches!(march_step(&f, 1.0, &o, &opts), Err(Error::Stability { .. })));
    }

    #[test]
    fn schemes_agree_to_second_order() {
        let o = op(4.0, 7, 0.0);
        let grid = Arc::clone(o.grid());
        let spec = InitialDataSpec {
            kind: DataKind::GaussianBump,
            amplitude: 0.05,
            ..Default::default()
        };
        let f = build_initial_data(&spec, &hom(), &grid).unwrap().field;
        let defect = |dt: f64| {
            let a = StepOptions {
                scheme: Scheme::NuIntegrator,
                dt_max: Some(1.0),
                collisions: true,
            };
            let b = StepOptions {
                scheme: Scheme::GIntegrator,
                ..a
            };
            let fa = march_step(&f, dt, &o, &a).unwrap();
            let fb = march_step(&f, dt, &o, &b).unwrap();
            fa.values().iter().zip(fb.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        };
        let d: Vec<f64> = [0.02, 0.01, 0.005].iter().map(|&dt| defect(dt)).collect();
        let slope = (d[0] / d[2]).log2() / 2.0;
        assert!((slope - 2.0).abs() < 0.35, "defects {d:?}, slope {slope}");
    }

    fn picard_settings(t_star: f64, steps: usize) -> PicardSettings {
        PicardSettings {
            t_star,
            steps,
            tol: 1e-12,
            n_max: 40,
            norm: NormSpec::new(2.0, 3.0, NormOrder::LrVLinfTx).unwrap(),
            ball: 1.0,
        }
    }

    #[test]
    fn picard_zero_data_converges_at_once() {
        let o = op(4.0, 7, 1.0);
        let zero = DistributionField::zeros(hom(), Arc::clone(o.grid()));
        let rep = run_picard(&zero, &o, &picard_settings(0.05, 5)).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        assert!(rep.trajectory.fields().iter().all(|f| f.max_abs() == 0.0));
    }

    #[test]
    fn picard_matches_march_on_small_data() {
        // C_b = 0.1 stretches the relaxation time so that νΔt stays small
        let grid = Arc::new(VelocityGrid::new(4.0, 7).unwrap());
        let params = CollisionParams::new(1.0, 0.1).unwrap();
        let o = CollisionOperator::new(Arc::clone(&grid), params, SphereQuadrature::aligned(2, 4).unwrap()).unwrap();
        let spec = InitialDataSpec {
            kind: DataKind::TwoTemperature,
            amplitude: 0.05,
            ..Default::default()
        };
        let f0 = build_initial_data(&spec, &hom(), &grid).unwrap().field;
        let settings = picard_settings(0.5, 50);
        let rep = run_picard(&f0, &o, &settings).unwrap();
        assert!(rep.converged, "{:?}", rep.distances);
        assert!(rep.ratios.iter().all(|&r| r < 1.0));
        let march = MarchSettings {
            dt: settings.t_star / 50.0,
            steps: 50,
            options: StepOptions::default(),
            norms: vec![],
            smallness: None,
            store_every: 1,
        };
        let traj = run_march(f0, &o, &march).unwrap();
        let diffs: Vec<DistributionField> = traj
            .fields()
            .iter()
            .zip(rep.trajectory.fields())
            .map(|(a, b)| {
                let v = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
                DistributionField::new(Arc::clone(a.spatial()), Arc::clone(a.velocity()), v).unwrap()
            })
            .collect();
        let gap = norms::mixed_norm(&diffs, &settings.norm);
        let size = norms::mixed_norm(traj.fields(), &settings.norm);
        assert!(gap <= 5.0 * march.dt * size, "gap {gap}, size {size}");
    }
}
