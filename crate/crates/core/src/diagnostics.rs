//! Excess mass, energy and entropy of `F = μ + √μ f`, and positivity.

use serde::Serialize;

use crate::grid::DistributionField;
use crate::norms::{self, NormSpec, Smallness};
use crate::{maxwellian, norm_sq};

/// `(∫∫ F − μ, ∫∫ |v|²(F − μ))`.
pub fn excess_moments(field: &DistributionField) -> (f64, f64) {
    let grid = field.velocity();
    let cw = field.spatial().cell_weight();
    let (mut m, mut e) = (0.0, 0.0);
    for x in 0..field.nx() {
        for ((f, &v), q) in field.slice(x).iter().zip(grid.nodes()).zip(grid.weights()) {
            let d = q * (-0.5 * norm_sq(v)).exp() * f;
            m += d;
            e += d * norm_sq(v);
        }
    }
    (cw * m, cw * e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Entropy {
    /// `∫∫ F ln F − μ ln μ`.
    pub value: f64,
    /// Nodes where `F < 0` was clamped to 0.
    pub clamped: usize,
}

pub fn entropy(field: &DistributionField) -> Entropy {
    let grid = field.velocity();
    let cw = field.spatial().cell_weight();
    let mut value = 0.0;
    let mut clamped = 0;
    for x in 0..field.nx() {
        for ((f, &v), q) in field.slice(x).iter().zip(grid.nodes()).zip(grid.weights()) {
            let r2 = norm_sq(v);
            let mu = (-r2).exp();
            let mut big = mu + (-0.5 * r2).exp() * f;
            if big < 0.0 {
                big = 0.0;
                clamped += 1;
            }
            let xlnx = |a: f64| if a > 0.0 { a * a.ln() } else { 0.0 };
            value += q * (xlnx(big) - xlnx(mu));
        }
    }
    Entropy {
        value: cw * value,
        clamped,
    }
}

/// `min_{x,v} μ + √μ f`.
pub fn positivity_min(field: &DistributionField) -> f64 {
    let grid = field.velocity();
    let mut lo = f64::INFINITY;
    for x in 0..field.nx() {
        for (f, &v) in field.slice(x).iter().zip(grid.nodes()) {
            lo = lo.min(maxwellian(v) + (-0.5 * norm_sq(v)).exp() * f);
        }
    }
    lo
}

/// `Σ_x |cell| a_x (2‖μ‖₁ + a_x)` with `a_x = ‖√μ f(x)‖₁`. Bounds
/// `‖F‖₁² − ‖μ‖₁²`, the part of the collision-invariant defect the
/// perturbation can drive; `Q(μ,μ)` itself conserves to roundoff.
pub fn drift_scale(field: &DistributionField) -> f64 {
    let grid = field.velocity();
    let mu: f64 = grid.nodes().iter().zip(grid.weights()).map(|(&v, q)| q * maxwellian(v)).sum();
    let mut total = 0.0;
    for x in 0..field.nx() {
        let a: f64 = field
            .slice(x)
            .iter()
            .zip(grid.nodes())
            .zip(grid.weights())
            .map(|((f, &v), q)| q * ((-0.5 * norm_sq(v)).exp() * f).abs())
            .sum();
        total += a * (2.0 * mu + a);
    }
    field.spatial().cell_weight() * total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub entropy: f64,
    pub clamped: usize,
    pub min_f: f64,
    /// [`drift_scale`] of the field.
    pub drift_scale: f64,
    /// One value per configured norm.
    pub norms: Vec<f64>,
    pub smallness: Option<Smallness>,
}

impl DiagnosticsRecord {
    pub fn of(t: f64, field: &DistributionField, specs: &[NormSpec]) -> Self {
        let (mass, energy) = excess_moments(field);
        let h = entropy(field);
        Self {
            t,
            mass,
            energy,
            entropy: h.value,
            clamped: h.clamped,
            min_f: positivity_min(field),
            drift_scale: drift_scale(field),
            norms: specs.iter().map(|s| norms::mixed_norm_field(field, s)).collect(),
            smallness: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyBudget {
    pub entropy: Vec<f64>,
    pub eps_h: f64,
    /// Largest `H(t_{k+1}) − H(t_k)`.
    pub max_increase: f64,
    /// Steps with `H(t_{k+1}) > H(t_k) + ε_H`.
    pub violations: Vec<usize>,
    pub ok: bool,
    pub m0: f64,
    pub e0: f64,
    pub h0: f64,
    /// `|M₀| + |E₀| + |H₀|`.
    pub raw: f64,
    pub m: f64,
    /// `raw^{1/m}`.
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftCheck {
    pub eps_cons: f64,
    pub c_b: f64,
    /// Largest `|M(t_k) − M₀| / bound_k` and the same for energy.
    pub mass_ratio: f64,
    pub energy_ratio: f64,
    pub ok: bool,
}

/// Checks `|M(t_k) − M₀|, |E(t_k) − E₀| ≤ ε_cons·C_b·t_k·max_{j≤k} scale_j`.
/// `ε_cons` is per unit `C_b`, as calibrated by
/// [`crate::collision::check_conservation`].
pub fn conservation_drift(records: &[DiagnosticsRecord], eps_cons: f64, c_b: f64) -> DriftCheck {
    let (mut mass_ratio, mut energy_ratio) = (0.0f64, 0.0f64);
    if let Some(first) = records.first() {
        let mut scale = first.drift_scale;
        for r in &records[1..] {
            scale = scale.max(r.drift_scale);
            let bound = eps_cons * c_b * (r.t - first.t) * scale;
            let q = |d: f64| if d == 0.0 { 0.0 } else if bound > 0.0 { d / bound } else { f64::INFINITY };
            mass_ratio = mass_ratio.max(q((r.mass - first.mass).abs()));
            energy_ratio = energy_ratio.max(q((r.energy - first.energy).abs()));
        }
    }
    DriftCheck {
        eps_cons,
        c_b,
        mass_ratio,
        energy_ratio,
        ok: mass_ratio <= 1.0 && energy_ratio <= 1.0,
    }
}

/// `ε_H = c·(Δt² + tol)`.
pub fn entropy_tolerance(c: f64, dt: f64, tol: f64) -> f64 {
    c * (dt * dt + tol)
}

/// Checks `H(t_{k+1}) ≤ H(t_k) + ε_H` along `records`.
pub fn excess_entropy_budget(records: &[DiagnosticsRecord], eps_h: f64, m: f64) -> EntropyBudget {
    let entropy: Vec<f64> = records.iter().map(|r| r.entropy).collect();
    let mut max_increase = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    for (k, w) in entropy.windows(2).enumerate() {
        let d = w[1] - w[0];
        max_increase = max_increase.max(d);
        if d > eps_h {
            violations.push(k);
        }
    }
    if entropy.len() < 2 {
        max_increase = 0.0;
    }
    let (m0, e0, h0) = records
        .first()
        .map(|r| (r.mass, r.energy, r.entropy))
        .unwrap_or((0.0, 0.0, 0.0));
    let raw = m0.abs() + e0.abs() + h0.abs();
    EntropyBudget {
        ok: violations.is_empty(),
        entropy,
        eps_h,
        max_increase,
        violations,
        m0,
        e0,
        h0,
        raw,
        m,
        scale: raw.powf(1.0 / m),
    }
}
