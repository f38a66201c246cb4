//! Weighted mixed norms with `w(v) = 1+|v|` and the smallness functionals
//! of the global theorem.

use serde::{Deserialize, Serialize};

use crate::collision::CollisionOperator;
use crate::grid::{DistributionField, GridFunction, VelocityGrid};
use crate::{norm_sq, Error, Result};

/// Nesting of the time, velocity and space norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    /// `sup_t ‖ sup_x |·| ‖_{L^r_v}`.
    LinfTLrVLinfX,
    /// `‖ sup_{t,x} |·| ‖_{L^r_v}`.
    LrVLinfTx,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    r: f64,
    l: f64,
    order: NormOrder,
}

impl NormSpec {
    /// `r` may be `f64::INFINITY`.
    pub fn new(r: f64, l: f64, order: NormOrder) -> Result<Self> {
        conjugate_exponent(r)?;
        if !l.is_finite() {
            return Err(Error::Domain(format!("weight exponent l must be finite, got {l}")));
        }
        Ok(Self { r, l, order })
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn order(&self) -> NormOrder {
        self.order
    }
    pub fn conjugate(&self) -> f64 {
        conjugate_exponent(self.r).expect("validated at construction")
    }
    /// Same norm with weight exponent `l`.
    pub fn with_l(&self, l: f64) -> Self {
        Self { l, ..*self }
    }
    /// Short label such as `w3_L2v_Linfx`.
    pub fn label(&self) -> String {
        let r = if self.r.is_infinite() { "inf".to_string() } else { format!("{}", self.r) };
        match self.order {
            NormOrder::LinfTLrVLinfX => format!("w{}_Linft_L{r}v_Linfx", self.l),
            NormOrder::LrVLinfTx => format!("w{}_L{r}v_Linftx", self.l),
        }
    }
}

/// `r′ = r/(r−1)`, with `∞′ = 1`.
pub fn conjugate_exponent(r: f64) -> Result<f64> {
    if r.is_nan() || r <= 1.0 {
        return Err(Error::Domain(format!("exponent r must satisfy r ∈ (1, ∞], got {r}")));
    }
    Ok(if r.is_infinite() { 1.0 } else { r / (r - 1.0) })
}

/// `w(v) = 1+|v|`.
#[inline]
pub fn weight(v: [f64; 3]) -> f64 {
    1.0 + norm_sq(v).sqrt()
}

/// `(Σ_j q_j |a_j|^r)^{1/r}`, or `max |a_j|` for `r = ∞`. Any `r ≥ 1`.
pub fn lr_sum(grid: &VelocityGrid, a: &[f64], r: f64) -> f64 {
    if r.is_infinite() {
        return a.iter().fold(0.0, |m, x| m.max(x.abs()));
    }
    let s: f64 = a.iter().zip(grid.weights()).map(|(x, q)| q * x.abs().powf(r)).sum();
    s.powf(1.0 / r)
}

/// `‖w^l g‖_{L^r_v}` for any `r ≥ 1`.
pub fn weighted_lr(g: &GridFunction, r: f64, l: f64) -> f64 {
    let grid = g.grid();
    let a: Vec<f64> = g
        .values()
        .iter()
        .zip(grid.nodes())
        .map(|(x, &v)| x * weight(v).powf(l))
        .collect();
    lr_sum(grid, &a, r)
}

/// `sup_x |w^l f(x, v)|` per velocity node.
fn sup_x(field: &DistributionField, l: f64) -> Vec<f64> {
    let nodes = field.velocity().nodes();
    let mut out = vec![0.0f64; nodes.len()];
    for x in 0..field.nx() {
        for (o, a) in out.iter_mut().zip(field.slice(x)) {
            *o = o.max(a.abs());
        }
    }
    for (o, &v) in out.iter_mut().zip(nodes) {
        *o *= weight(v).powf(l);
    }
    out
}

/// Norm of one field; both orders coincide.
pub fn mixed_norm_field(field: &DistributionField, spec: &NormSpec) -> f64 {
    lr_sum(field.velocity(), &sup_x(field, spec.l), spec.r)
}

/// Norm of a sequence of fields sharing grids.
pub fn mixed_norm(fields: &[DistributionField], spec: &NormSpec) -> f64 {
    let Some(first) = fields.first() else {
        return 0.0;
    };
    let grid = first.velocity();
    match spec.order {
        NormOrder::LinfTLrVLinfX => fields
            .iter()
            .map(|f| mixed_norm_field(f, spec))
            .fold(0.0, f64::max),
        NormOrder::LrVLinfTx => {
            let mut sup = vec![0.0f64; grid.len()];
            for f in fields {
                for (s, a) in sup.iter_mut().zip(sup_x(f, spec.l)) {
                    *s = s.max(a);
                }
            }
            lr_sum(grid, &sup, spec.r)
        }
    }
}

/// Which hypotheses of the existence theorems hold for `(r, l, γ)`.
#[derive(Debug, Clone, Serialize)]
pub struct ParameterReport {
    pub r: f64,
    pub l: f64,
    pub gamma: f64,
    pub r_conj: f64,
    /// `max{3/r′, 1/r′ + (γ+1)/2, 2γ}`.
    pub local_threshold: f64,
    pub local_ok: bool,
    /// `3/r′ + γ`.
    pub global_threshold: f64,
    pub global_ok: bool,
    /// `4/(3−γ)`.
    pub r_critical: f64,
    /// The extra smallness assumption is needed for `r < 4/(3−γ)`.
    pub smallness_required: bool,
}

pub fn validate_parameters(r: f64, l: f64, gamma: f64) -> Result<ParameterReport> {
    let rc = conjugate_exponent(r)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!("gamma = {gamma} outside hard potentials 0 ≤ γ ≤ 1")));
    }
    let local_threshold = (3.0 / rc).max(1.0 / rc + 0.5 * (gamma + 1.0)).max(2.0 * gamma);
    let global_threshold = 3.0 / rc + gamma;
    let r_critical = 4.0 / (3.0 - gamma);
    Ok(ParameterReport {
        r,
        l,
        gamma,
        r_conj: rc,
        local_threshold,
        local_ok: l > local_threshold,
        global_threshold,
        global_ok: l > global_threshold,
        r_critical,
        smallness_required: r < r_critical,
    })
}

/// Sampling of the smallness functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallnessSampling {
    /// Uniform samples of `[0, T*]` for the first functional.
    pub times_a: usize,
    /// Geometric samples of `[T*, t_max]` for the second.
    pub times_b: usize,
    /// `t_max = factor · T*`.
    pub horizon_factor: f64,
}

impl Default for SmallnessSampling {
    fn default() -> Self {
        Self {
            times_a: 8,
            times_b: 8,
            horizon_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Smallness {
    /// `sup_{t ≤ T*, x} ∫ e^{−|v|²/4} |f₀(x−vt, v)| dv` over the samples.
    pub a: f64,
    /// `sup_{T* ≤ t ≤ t_max, x} ∫ e^{−ν(v)t} |f₀(x−vt, v)| dv` over the samples.
    pub b: f64,
    /// Analytic bound on the second functional beyond `t_max`:
    /// `e^{−ν_min t_max} sup_x ∫|f₀| dv`.
    pub b_tail: f64,
}

/// Sampled sups are lower bounds of the continuum sups.
pub fn smallness_functionals(
    f0: &DistributionField,
    t_star: f64,
    op: &CollisionOperator,
    sampling: &SmallnessSampling,
) -> Result<Smallness> {
    if !(t_star > 0.0) {
        return Err(Error::Domain(format!("T* must be positive, got {t_star}")));
    }
    if !f0.velocity().same_as(op.grid()) {
        return Err(Error::Contract("field and operator use different velocity grids".into()));
    }
    let grid = f0.velocity();
    let nodes = grid.nodes();
    let q = grid.weights();
    let spatial = f0.spatial();
    let nu = op.nu().values();
    let integral = |t: f64, damp: &dyn Fn(usize) -> f64| {
        (0..f0.nx())
            .map(|x| {
                let xpos = spatial.position(x);
                (0..grid.len())
                    .map(|i| {
                        let (j0, j1, th) = spatial.periodic_stencil(xpos - nodes[i][0] * t);
                        let f = (1.0 - th) * f0.slice(j0)[i] + th * f0.slice(j1)[i];
                        q[i] * damp(i) * f.abs()
                    })
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    };
    let gauss: Vec<f64> = nodes.iter().map(|&v| (-0.25 * norm_sq(v)).exp()).collect();
    let na = sampling.times_a.max(1);
    let a = (0..=na)
        .map(|k| integral(t_star * k as f64 / na as f64, &|i| gauss[i]))
        .fold(0.0, f64::max);
    let t_max = sampling.horizon_factor.max(1.0) * t_star;
    let nb = sampling.times_b.max(1);
    let b = (0..=nb)
        .map(|k| {
            let t = t_star * (t_max / t_star).powf(k as f64 / nb as f64);
            integral(t, &|i| (-nu[i] * t).exp())
        })
        .fold(0.0, f64::max);
    let nu_min = nu.iter().cloned().fold(f64::INFINITY, f64::min);
    let b_tail = (-nu_min * t_max).exp() * integral(0.0, &|_| 1.0);
    Ok(Smallness { a, b, b_tail })
}
