//! Empirical constants of the gain and loss inequalities.
//!
//! Every constant here is the largest ratio seen over a seeded sample
//! family, i.e. a lower bound on the best constant: no counterexample found
//! up to grid resolution.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::collision::{CollisionOperator, CollisionParams};
use crate::grid::{GridFunction, SphereQuadrature, VelocityGrid};
use crate::linearized::minimax_two_shapes;
use crate::norms::{conjugate_exponent, weight, weighted_lr};
use crate::{norm_sq, Error, Result};

pub const REPORT_NOTE: &str = "no counterexample found up to grid resolution";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    MaxwellianModulated,
    CompactBump,
    RandomPositive,
}

/// Seeded family of nonnegative test pairs `(g, h)`. Sample `i` depends only
/// on `(seed, i)`, so a longer family extends a shorter one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFamily {
    pub kind: FamilyKind,
    pub count: usize,
    pub seed: u64,
    pub amplitude: (f64, f64),
}

impl SampleFamily {
    pub fn new(kind: FamilyKind, count: usize, seed: u64) -> Self {
        Self {
            kind,
            count,
            seed,
            amplitude: (0.5, 2.0),
        }
    }

    fn one(&self, rng: &mut ChaCha8Rng, grid: &Arc<VelocityGrid>) -> GridFunction {
        let (lo, hi) = self.amplitude;
        let a = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        match self.kind {
            FamilyKind::MaxwellianModulated => {
                let c = point(rng, 1.0);
                let k = point(rng, 1.5);
                let t = rng.gen_range(0.25..0.75);
                let beta = rng.gen_range(0.0..0.9);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                grid.sample(|v| {
                    let d = [v[0] - c[0], v[1] - c[1], v[2] - c[2]];
                    let kv = k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
                    a * (-norm_sq(d) / (2.0 * t)).exp() * (1.0 + beta * (kv + phase).sin())
                })
            }
            FamilyKind::CompactBump => {
                let c = point(rng, 1.0);
                let rho = rng.gen_range(1.2..2.5);
                grid.sample(|v| bump(v, c, rho) * a)
            }
            FamilyKind::RandomPositive => {
                let parts: Vec<(f64, [f64; 3], f64)> = (0..3)
                    .map(|_| (rng.gen_range(0.0..1.0), point(rng, 1.5), rng.gen_range(0.2..0.8)))
                    .collect();
                grid.sample(|v| {
                    a * parts
                        .iter()
                        .map(|&(alpha, c, t)| {
                            let d = [v[0] - c[0], v[1] - c[1], v[2] - c[2]];
                            alpha * (-norm_sq(d) / (2.0 * t)).exp()
                        })
                        .sum::<f64>()
                })
            }
        }
    }

    /// The pair `(g_i, h_i)`.
    pub fn pair(&self, grid: &Arc<VelocityGrid>, i: usize) -> (GridFunction, GridFunction) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        let g = self.one(&mut rng, grid);
        let h = self.one(&mut rng, grid);
        (g, h)
    }
}

fn point(rng: &mut ChaCha8Rng, s: f64) -> [f64; 3] {
    [rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s)]
}

/// `(1 − |v−c|²/ρ²)₊²`.
pub fn bump(v: [f64; 3], c: [f64; 3], rho: f64) -> f64 {
    let d = [v[0] - c[0], v[1] - c[1], v[2] - c[2]];
    let t = 1.0 - norm_sq(d) / (rho * rho);
    if t > 0.0 {
        t * t
    } else {
        0.0
    }
}

/// A sample family with its collision terms evaluated once on one grid.
#[derive(Debug, Clone)]
pub struct EvaluatedFamily {
    family: SampleFamily,
    gamma: f64,
    grid_n: usize,
    extent: f64,
    samples: Vec<EvaluatedSample>,
}

#[derive(Debug, Clone)]
struct EvaluatedSample {
    g: GridFunction,
    h: GridFunction,
    gain_gh: GridFunction,
    gain_gg: GridFunction,
    loss_gg: GridFunction,
}

impl EvaluatedFamily {
    /// Evaluates `Γ_gain(g,h)`, `Γ_gain(g,g)` and `Γ_loss(g,g)` per sample.
    pub fn evaluate(family: &SampleFamily, op: &CollisionOperator) -> Result<Self> {
        let grid = op.grid();
        let samples = op
            .exec()
            .map(family.count, |i| {
                let (g, h) = family.pair(grid, i);
                Ok(EvaluatedSample {
                    gain_gh: op.gamma_gain(&g, &h)?,
                    gain_gg: op.gamma_gain(&g, &g)?,
                    loss_gg: op.gamma_loss(&g, &g)?,
                    g,
                    h,
                })
            })
            .into_iter()
            .collect::<Result<_>>()?;
        Ok(Self {
            family: family.clone(),
            gamma: op.params().gamma,
            grid_n: grid.n(),
            extent: grid.extent(),
            samples,
        })
    }

    pub fn family(&self) -> &SampleFamily {
        &self.family
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn report(&self, id: &str, ratios: Vec<Option<f64>>, r: f64, l: f64, output_weight: f64) -> ConstantReport {
        let constant = ratios.iter().flatten().fold(0.0, |m: f64, &x| m.max(x));
        ConstantReport {
            id: id.into(),
            family: Some(self.family.kind),
            skipped: ratios.iter().filter(|x| x.is_none()).count(),
            ratios,
            constant,
            r,
            l,
            gamma: self.gamma,
            n: None,
            output_weight,
            grid_n: self.grid_n,
            extent: self.extent,
            note: REPORT_NOTE,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstantReport {
    pub id: String,
    pub family: Option<FamilyKind>,
    /// Ratio per sample; `None` for skipped (degenerate) samples.
    pub ratios: Vec<Option<f64>>,
    pub skipped: usize,
    /// Largest ratio.
    pub constant: f64,
    pub r: f64,
    pub l: f64,
    pub gamma: f64,
    pub n: Option<f64>,
    /// Weight exponent on the left-hand side.
    pub output_weight: f64,
    pub grid_n: usize,
    pub extent: f64,
    pub note: &'static str,
}

impl ConstantReport {
    /// Running maximum of the ratios.
    pub fn running_max(&self) -> Vec<f64> {
        let mut m = 0.0f64;
        self.ratios
            .iter()
            .map(|r| {
                if let Some(x) = r {
                    m = m.max(*x);
                }
                m
            })
            .collect()
    }
}

/// `|a − b| / max(a, b)`.
pub fn relative_change(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0 && den.is_finite() && num.is_finite()).then(|| num / den)
}

/// `‖w^k Γ_gain(g,h)‖_r / (‖w^l g‖_r ‖w^l h‖_r)`.
pub fn gain_ratio(op: &CollisionOperator, g: &GridFunction, h: &GridFunction, r: f64, l: f64, k: f64) -> Result<Option<f64>> {
    let den = weighted_lr(g, r, l) * weighted_lr(h, r, l);
    if den == 0.0 {
        return Ok(None);
    }
    let gain = op.gamma_gain(g, h)?;
    Ok(ratio(weighted_lr(&gain, r, k), den))
}

fn gain_ratio_of(s: &EvaluatedSample, r: f64, l: f64, k: f64) -> Option<f64> {
    ratio(weighted_lr(&s.gain_gh, r, k), weighted_lr(&s.g, r, l) * weighted_lr(&s.h, r, l))
}

fn check_exponents(r: f64, l: f64) -> Result<f64> {
    if !l.is_finite() {
        return Err(Error::Domain(format!("weight exponent l must be finite, got {l}")));
    }
    conjugate_exponent(r)
}

/// Gain inequality for `r ∈ [4/(3−γ), ∞]`, `l > 3/r′`.
pub fn estimate_gain_constant(family: &EvaluatedFamily, r: f64, l: f64) -> Result<ConstantReport> {
    let rc = check_exponents(r, l)?;
    let r_crit = 4.0 / (3.0 - family.gamma);
    if r < r_crit {
        return Err(Error::Domain(format!(
            "r = {r} is below 4/(3−γ) = {r_crit:.4}; use estimate_gain_constant_lowr"
        )));
    }
    if l <= 3.0 / rc {
        return Err(Error::Domain(format!("l = {l} must exceed 3/r′ = {}", 3.0 / rc)));
    }
    let ratios = family.samples.iter().map(|s| gain_ratio_of(s, r, l, l)).collect();
    Ok(family.report("gain", ratios, r, l, l))
}

/// Output weight `l − (γ+1)/2 + 2/r′` of the low-`r` gain inequality.
pub fn lowr_output_weight(r: f64, l: f64, gamma: f64) -> Result<f64> {
    Ok(l - 0.5 * (gamma + 1.0) + 2.0 / conjugate_exponent(r)?)
}

/// Gain inequality for `r ∈ (1, 4/(3−γ))`, `l > 1/r′ + (γ+1)/2`, with the
/// reduced output weight.
pub fn estimate_gain_constant_lowr(family: &EvaluatedFamily, r: f64, l: f64) -> Result<ConstantReport> {
    let rc = check_exponents(r, l)?;
    let gamma = family.gamma;
    let r_crit = 4.0 / (3.0 - gamma);
    if r >= r_crit {
        return Err(Error::Domain(format!(
            "r = {r} is at least 4/(3−γ) = {r_crit:.4}; use estimate_gain_constant"
        )));
    }
    let need = 1.0 / rc + 0.5 * (gamma + 1.0);
    if l <= need {
        return Err(Error::Domain(format!("l = {l} must exceed 1/r′ + (γ+1)/2 = {need}")));
    }
    let k = lowr_output_weight(r, l, gamma)?;
    let ratios = family.samples.iter().map(|s| gain_ratio_of(s, r, l, k)).collect();
    Ok(family.report("gain_lowr", ratios, r, l, k))
}

/// Per-sample terms of the nonlinear gain inequality.
#[derive(Debug, Clone, Serialize)]
pub struct NonlinearGainReport {
    pub n: f64,
    /// `‖w^{l−γ} Γ_gain(g,g)‖_r`.
    pub lhs: Vec<f64>,
    /// `‖g‖₁^{1/(n r′)} ‖w^l g‖_r^{1 + 1/r + 1/(n′ r′)}`.
    pub lead: Vec<f64>,
    /// `Σ_{p∈{1,r}} ‖w^l g‖_r^{1 + 1/p}`.
    pub tail: Vec<f64>,
    /// Scale-invariant ratio `lhs / lead`, i.e. the fit with `C₂ = 0`.
    pub leading: ConstantReport,
    /// Minimax `(η, C₁, C₂)` with `lhs ≤ C₁·lead + C₂·η·tail`.
    pub frontier: Vec<(f64, f64, f64)>,
}

/// Loss and gain bounds in terms of `‖g‖₁`; `n > 3`.
pub fn estimate_nonlinear_bounds(
    family: &EvaluatedFamily,
    r: f64,
    l: f64,
    n: f64,
    etas: &[f64],
) -> Result<(ConstantReport, NonlinearGainReport)> {
    let rc = check_exponents(r, l)?;
    if !(n > 3.0) {
        return Err(Error::Domain(format!("n = {n} must exceed 3")));
    }
    if l <= 3.0 / rc {
        return Err(Error::Domain(format!("l = {l} must exceed 3/r′ = {}", 3.0 / rc)));
    }
    let gamma = family.gamma;
    let rows: Vec<Option<NonlinearTerms>> = family
        .samples
        .iter()
        .map(|s| NonlinearTerms::of(&s.g, &s.gain_gg, &s.loss_gg, r, l, n, gamma))
        .collect();

    let mut loss = family.report("loss_l1", rows.iter().map(|x| x.map(|t| t.loss_ratio)).collect(), r, l, l - gamma);
    loss.n = Some(n);
    let lead_ratios = rows.iter().map(|x| x.and_then(|t| ratio(t.lhs, t.lead))).collect();
    let mut leading = family.report("gain_l1_leading", lead_ratios, r, l, l - gamma);
    leading.n = Some(n);
    let used: Vec<NonlinearTerms> = rows.iter().flatten().copied().collect();
    let frontier = etas
        .iter()
        .map(|&eta| {
            let triples: Vec<(f64, f64, f64)> = used.iter().map(|t| (t.lhs, t.lead, eta * t.tail)).collect();
            let (c1, c2) = minimax_two_shapes(&triples);
            (eta, c1, c2)
        })
        .collect();
    Ok((
        loss,
        NonlinearGainReport {
            n,
            lhs: used.iter().map(|t| t.lhs).collect(),
            lead: used.iter().map(|t| t.lead).collect(),
            tail: used.iter().map(|t| t.tail).collect(),
            leading,
            frontier,
        },
    ))
}

#[derive(Debug, Clone, Copy)]
struct NonlinearTerms {
    loss_ratio: f64,
    lhs: f64,
    lead: f64,
    tail: f64,
}

impl NonlinearTerms {
    /// `None` for `g = 0`.
    fn of(g: &GridFunction, gain: &GridFunction, loss: &GridFunction, r: f64, l: f64, n: f64, gamma: f64) -> Option<Self> {
        let l1 = weighted_lr(g, 1.0, 0.0);
        let wg = weighted_lr(g, r, l);
        if l1 == 0.0 || wg == 0.0 {
            return None;
        }
        let rc = conjugate_exponent(r).ok()?;
        let inv_r = if r.is_infinite() { 0.0 } else { 1.0 / r };
        let n_conj = n / (n - 1.0);
        Some(Self {
            loss_ratio: weighted_lr(loss, r, l - gamma) / (l1 * wg),
            lhs: weighted_lr(gain, r, l - gamma),
            lead: l1.powf(1.0 / (n * rc)) * wg.powf(1.0 + inv_r + 1.0 / (n_conj * rc)),
            tail: wg.powi(2) + wg.powf(1.0 + inv_r),
        })
    }
}

/// One positive-scaling spot check: the ratio for `(g, h)` against the ratio
/// for `(2g, 3h)`.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingSpot {
    pub id: String,
    pub base: f64,
    pub scaled: f64,
    pub relative: f64,
}

/// Scaling checks on sample 0 of `family` for each gain, low-`r` and `L¹`
/// setting. The `L¹` gain is checked on its leading term only, since the
/// full bound mixes degrees.
pub fn scaling_spot_checks(
    family: &SampleFamily,
    op: &CollisionOperator,
    gain: &[(f64, f64)],
    lowr: &[(f64, f64)],
    nonlinear: &[(f64, f64, f64)],
) -> Result<Vec<ScalingSpot>> {
    let (g, h) = family.pair(op.grid(), 0);
    let (g2, h3) = (g.scaled(2.0), h.scaled(3.0));
    let gamma = op.params().gamma;
    let mut out = Vec::new();
    let mut push = |id: String, a: Option<f64>, b: Option<f64>| {
        if let (Some(a), Some(b)) = (a, b) {
            out.push(ScalingSpot {
                id,
                base: a,
                scaled: b,
                relative: relative_change(a, b),
            });
        }
    };
    let (gh, gh23) = (op.gamma_gain(&g, &h)?, op.gamma_gain(&g2, &h3)?);
    let ratio_of = |gain: &GridFunction, g: &GridFunction, h: &GridFunction, r: f64, l: f64, k: f64| {
        ratio(weighted_lr(gain, r, k), weighted_lr(g, r, l) * weighted_lr(h, r, l))
    };
    for &(r, l) in gain {
        push(format!("gain r={r} l={l}"), ratio_of(&gh, &g, &h, r, l, l), ratio_of(&gh23, &g2, &h3, r, l, l));
    }
    for &(r, l) in lowr {
        let k = lowr_output_weight(r, l, gamma)?;
        push(format!("gain_lowr r={r} l={l}"), ratio_of(&gh, &g, &h, r, l, k), ratio_of(&gh23, &g2, &h3, r, l, k));
    }
    if !nonlinear.is_empty() {
        let (gg, gg2) = (op.gamma_gain(&g, &g)?, op.gamma_gain(&g2, &g2)?);
        let (lg, lg2) = (op.gamma_loss(&g, &g)?, op.gamma_loss(&g2, &g2)?);
        for &(r, l, n) in nonlinear {
            let a = NonlinearTerms::of(&g, &gg, &lg, r, l, n, gamma);
            let b = NonlinearTerms::of(&g2, &gg2, &lg2, r, l, n, gamma);
            push(format!("loss_l1 r={r} l={l}"), a.map(|t| t.loss_ratio), b.map(|t| t.loss_ratio));
            push(
                format!("gain_l1_leading r={r} l={l} n={n}"),
                a.and_then(|t| ratio(t.lhs, t.lead)),
                b.and_then(|t| ratio(t.lhs, t.lead)),
            );
        }
    }
    Ok(out)
}

/// Loss ratios for the bump `(1 − |v|²/ρ²)₊²` as `ρ` shrinks.
pub fn shrinking_bump_sweep(op: &CollisionOperator, r: f64, l: f64, radii: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
    let gamma = op.params().gamma;
    radii
        .iter()
        .map(|&rho| {
            let g = op.grid().sample(|v| bump(v, [0.0; 3], rho));
            let l1 = weighted_lr(&g, 1.0, 0.0);
            let loss = op.gamma_loss(&g, &g)?;
            let ratio = weighted_lr(&loss, r, l - gamma) / (l1 * weighted_lr(&g, r, l));
            Ok((rho, l1, ratio))
        })
        .collect()
}

/// `ν(v)/(1+|v|)^γ` bounds for one `γ` on a coarse and a refined grid.
#[derive(Debug, Clone, Serialize)]
pub struct NuGrowth {
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
    pub c1_fine: f64,
    pub c2_fine: f64,
    /// Largest relative change of `c₁`, `c₂` under refinement.
    pub change: f64,
    pub center: f64,
}

/// Refinement goes from `n` to `2n − 1` nodes per axis.
pub fn estimate_nu_growth(gammas: &[f64], extent: f64, n: usize, c_b: f64, sphere: &SphereQuadrature) -> Result<Vec<NuGrowth>> {
    gammas
        .iter()
        .map(|&gamma| {
            let bounds = |n: usize| -> Result<(f64, f64, f64)> {
                let grid = Arc::new(VelocityGrid::new(extent, n)?);
                let op = CollisionOperator::new(Arc::clone(&grid), CollisionParams::new(gamma, c_b)?, sphere.clone())?;
                let q: Vec<f64> = op
                    .nu()
                    .values()
                    .iter()
                    .zip(grid.nodes())
                    .map(|(nu, &v)| nu / weight(v).powf(gamma))
                    .collect();
                let lo = q.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = q.iter().cloned().fold(0.0, f64::max);
                Ok((lo, hi, q[grid.center_index()]))
            };
            let (c1, c2, center) = bounds(n)?;
            let (c1_fine, c2_fine, _) = bounds(2 * n - 1)?;
            Ok(NuGrowth {
                gamma,
                c1,
                c2,
                c1_fine,
                c2_fine,
                change: relative_change(c1, c1_fine).max(relative_change(c2, c2_fine)),
                center,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn op(n: usize, gamma: f64) -> CollisionOperator {
        let grid = Arc::new(VelocityGrid::new(4.0, n).unwrap());
        CollisionOperator::new(grid, CollisionParams::new(gamma, 1.0).unwrap(), SphereQuadrature::aligned(2, 4).unwrap())
            .unwrap()
    }

    fn terms(o: &CollisionOperator, g: &GridFunction) -> Option<NonlinearTerms> {
        let (gain, loss) = (o.gamma_gain(g, g).unwrap(), o.gamma_loss(g, g).unwrap());
        NonlinearTerms::of(g, &gain, &loss, 2.0, 3.0, 4.0, 1.0)
    }

    #[test]
    fn families_are_nonnegative_and_seeded() {
        let o = op(7, 1.0);
        for kind in [FamilyKind::MaxwellianModulated, FamilyKind::CompactBump, FamilyKind::RandomPositive] {
            let fam = SampleFamily::new(kind, 4, 11);
            for i in 0..4 {
                let (g, h) = fam.pair(o.grid(), i);
                assert!(g.values().iter().chain(h.values()).all(|&x| x >= 0.0));
                assert!(g.max_abs() > 0.0);
                assert_eq!(fam.pair(o.grid(), i).0.values(), g.values());
            }
            let longer = SampleFamily::new(kind, 8, 11);
            assert_eq!(longer.pair(o.grid(), 3).1.values(), fam.pair(o.grid(), 3).1.values());
        }
    }

    #[test]
    fn ranges_are_enforced() {
        let o = op(5, 1.0);
        let fam = EvaluatedFamily::evaluate(&SampleFamily::new(FamilyKind::CompactBump, 2, 1), &o).unwrap();
        assert!(matches!(estimate_gain_constant(&fam, 1.5, 3.0), Err(Error::Domain(m)) if m.contains("lowr")));
        assert!(estimate_gain_constant(&fam, 2.0, 1.0).is_err());
        assert!(estimate_gain_constant_lowr(&fam, 2.0, 3.0).is_err());
        assert!(estimate_gain_constant_lowr(&fam, 1.2, 1.0).is_err());
        assert!(matches!(estimate_nonlinear_bounds(&fam, 2.0, 3.0, 3.0, &[0.1]), Err(Error::Domain(_))));
        assert!((lowr_output_weight(1.2, 2.0, 1.0).unwrap() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_pairs_are_skipped() {
        let o = op(5, 1.0);
        let z = GridFunction::zeros(Arc::clone(o.grid()));
        assert_eq!(gain_ratio(&o, &z, &z, 2.0, 3.0, 3.0).unwrap(), None);
        let g = o.grid().sample(|v| bump(v, [0.0; 3], 2.0));
        assert!(terms(&o, &z).is_none());
        assert!(terms(&o, &g).is_some());
    }

    #[test]
    fn ratios_are_scale_invariant() {
        let o = op(7, 1.0);
        let fam = SampleFamily::new(FamilyKind::MaxwellianModulated, 1, 5);
        let (g, h) = fam.pair(o.grid(), 0);
        let (g2, h3) = (g.scaled(2.0), h.scaled(3.0));
        for (r, l, k) in [(f64::INFINITY, 3.0, 3.0), (1.2, 2.0, 4.0 / 3.0)] {
            let a = gain_ratio(&o, &g, &h, r, l, k).unwrap().unwrap();
            let b = gain_ratio(&o, &g2, &h3, r, l, k).unwrap().unwrap();
            assert!(relative_change(a, b) < 1e-12, "{a} {b}");
        }
        let (t1, t2) = (terms(&o, &g).unwrap(), terms(&o, &g2).unwrap());
        assert!(relative_change(t1.loss_ratio, t2.loss_ratio) < 1e-12);
        assert!(relative_change(t1.lhs / t1.lead, t2.lhs / t2.lead) < 1e-12);
    }

    #[test]
    fn spot_checks_cover_every_setting() {
        let o = op(7, 1.0);
        let fam = SampleFamily::new(FamilyKind::CompactBump, 1, 9);
        let spots = scaling_spot_checks(&fam, &o, &[(2.0, 2.0)], &[(1.2, 2.0)], &[(2.0, 2.0, 4.0)]).unwrap();
        assert_eq!(spots.len(), 4);
        assert!(spots.iter().all(|s| s.relative < 1e-12), "{spots:?}");
    }

    #[test]
    fn root_mu_baselines() {
        let o = op(9, 1.0);
        let s = o.sqrt_mu().clone();
        let r = gain_ratio(&o, &s, &s, f64::INFINITY, 3.0, 3.0).unwrap().unwrap();
        assert!(r.is_finite() && r > 0.0);
        let (l1, wg) = (weighted_lr(&s, 1.0, 0.0), weighted_lr(&s, 2.0, 3.0));
        let t = terms(&o, &s).unwrap();
        let direct = weighted_lr(&o.gamma_loss(&s, &s).unwrap(), 2.0, 2.0) / (l1 * wg);
        assert!(relative_change(t.loss_ratio, direct) < 1e-12);
    }

    #[test]
    fn reports_are_consistent() {
        let o = op(7, 1.0);
        let fam = EvaluatedFamily::evaluate(&SampleFamily::new(FamilyKind::RandomPositive, 6, 3), &o).unwrap();
        let rep = estimate_gain_constant(&fam, 2.0, 3.0).unwrap();
        let run = rep.running_max();
        assert!(run.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(*run.last().unwrap(), rep.constant);
        let first = fam.samples.iter().map(|s| gain_ratio_of(s, 2.0, 3.0, 3.0).unwrap());
        for (x, want) in first.zip(&rep.ratios) {
            assert_eq!(Some(x), *want);
        }
        let (loss, gain) = estimate_nonlinear_bounds(&fam, 2.0, 3.0, 4.0, &[0.1, 0.01]).unwrap();
        assert!(loss.constant > 0.0 && gain.leading.constant > 0.0);
        for &(eta, c1, c2) in &gain.frontier {
            for i in 0..gain.lhs.len() {
                assert!(gain.lhs[i] <= (c1 * gain.lead[i] + c2 * eta * gain.tail[i]) * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn loss_ratio_survives_shrinking_support() {
        let grid = Arc::new(VelocityGrid::new(3.0, 25).unwrap());
        let o = CollisionOperator::new(grid, CollisionParams::default(), SphereQuadrature::aligned(2, 4).unwrap()).unwrap();
        let rows = shrinking_bump_sweep(&o, 2.0, 3.0, &[2.0, 1.0, 0.5]).unwrap();
        assert!(rows.windows(2).all(|w| w[1].1 < w[0].1));
        let worst = rows.iter().map(|r| r.2).fold(0.0, f64::max);
        assert!(worst < 2.0 * rows[0].2, "{rows:?}");
    }

    #[test]
    fn nu_growth_constant_case() {
        let sphere = SphereQuadrature::aligned(2, 4).unwrap();
        let rows = estimate_nu_growth(&[0.0], 6.0, 9, 1.0, &sphere).unwrap();
        let want = 2.0 * PI * PI.powf(1.5);
        let fine = &rows[0];
        assert!(relative_change(fine.c1_fine, want) < 1e-4);
        assert!(relative_change(fine.c2_fine, want) < 1e-4);
        assert_eq!(fine.center, fine.c1.max(fine.center).min(fine.c2));
    }
}
