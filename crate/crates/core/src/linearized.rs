//! The linearized integral operator `K`, its kernel matrix, and the damping
//! rate `g_f` of the mild form.

use std::sync::Arc;

use serde::Serialize;

use crate::collision::{CollisionOperator, CollisionParams};
use crate::grid::{DistributionField, GridFunction, SphereQuadrature, VelocityGrid};
use crate::solver::Trajectory;
use crate::{norm_sq, Error, Result};

/// Largest node count accepted by [`extract_kernel_matrix`] unless the
/// caller passes its own cap.
pub const DEFAULT_MAX_NODES: usize = 17 * 17 * 17;

/// `K f` on the grid of `f`.
pub fn apply_k(f: &GridFunction, params: &CollisionParams, sphere: &SphereQuadrature) -> Result<GridFunction> {
    let op = CollisionOperator::new(Arc::clone(f.grid()), *params, sphere.clone())?;
    op.apply_k(f)
}

/// Dense kernel of `K` with quadrature weights divided out, so that
/// `(K f)(v_i) ≈ Σ_j k_ij f(u_j) q_j`.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    grid: Arc<VelocityGrid>,
    entries: Vec<f64>,
}

impl KernelMatrix {
    pub fn from_operator(op: &CollisionOperator, max_nodes: usize) -> Result<Self> {
        let grid = Arc::clone(op.grid());
        let m = grid.len();
        if m > max_nodes {
            return Err(Error::Resource(format!(
                "kernel matrix needs {m}² entries ({} MiB); cap is {max_nodes} nodes",
                (m * m * 8) >> 20
            )));
        }
        let mut entries = op.k_matrix();
        let q = grid.weights();
        for row in entries.chunks_mut(m) {
            for (k, w) in row.iter_mut().zip(q) {
                *k /= w;
            }
        }
        Ok(Self { grid, entries })
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }
    pub fn len(&self) -> usize {
        self.grid.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.len() + j]
    }
    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.len();
        &self.entries[i * m..(i + 1) * m]
    }

    /// `Σ_j k_ij f_j q_j`.
    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        if !f.grid().same_as(&self.grid) {
            return Err(Error::Contract("kernel matrix and function live on different grids".into()));
        }
        let fq: Vec<f64> = f.values().iter().zip(self.grid.weights()).map(|(a, q)| a * q).collect();
        let out = (0..self.len())
            .map(|i| self.row(i).iter().zip(&fq).map(|(k, x)| k * x).sum())
            .collect();
        GridFunction::new(Arc::clone(&self.grid), out)
    }

    /// `max_{i≠j} |k_ij − k_ji| / (1 + |k_ij|)`.
    pub fn symmetry_defect(&self) -> f64 {
        let m = self.len();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in (i + 1)..m {
                let (a, b) = (self.get(i, j), self.get(j, i));
                let d = (a - b).abs();
                worst = worst.max(d / (1.0 + a.abs())).max(d / (1.0 + b.abs()));
            }
        }
        worst
    }
}

/// `|⟨φ, Kψ⟩ − ⟨Kφ, ψ⟩| / |⟨φ, Kψ⟩|` in the grid inner product.
pub fn weak_symmetry_defect(op: &CollisionOperator, phi: &GridFunction, psi: &GridFunction) -> Result<f64> {
    let q = op.grid().weights();
    let kphi = op.apply_k(phi)?;
    let kpsi = op.apply_k(psi)?;
    let dot = |a: &GridFunction, b: &GridFunction| -> f64 {
        a.values().iter().zip(b.values()).zip(q).map(|((x, y), w)| x * y * w).sum()
    };
    let a = dot(phi, &kpsi);
    Ok((a - dot(&kphi, psi)).abs() / a.abs())
}

pub fn extract_kernel_matrix(
    grid: &Arc<VelocityGrid>,
    params: &CollisionParams,
    sphere: &SphereQuadrature,
    max_nodes: usize,
) -> Result<KernelMatrix> {
    let op = CollisionOperator::new(Arc::clone(grid), *params, sphere.clone())?;
    KernelMatrix::from_operator(&op, max_nodes)
}

/// `|v−u| e^{−(|v|²+|u|²)/8}`.
pub fn shape_smooth(v: [f64; 3], u: [f64; 3]) -> f64 {
    let d = sub(v, u);
    norm_sq(d).sqrt() * (-(norm_sq(v) + norm_sq(u)) / 8.0).exp()
}

/// `|v−u|⁻¹ e^{−|v−u|²/8 − (|v|²−|u|²)²/(8|v−u|²)}`; infinite on the diagonal.
pub fn shape_singular(v: [f64; 3], u: [f64; 3]) -> f64 {
    let r2 = norm_sq(sub(v, u));
    if r2 == 0.0 {
        return f64::INFINITY;
    }
    let e = norm_sq(v) - norm_sq(u);
    (-r2 / 8.0 - e * e / (8.0 * r2)).exp() / r2.sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelBoundReport {
    pub l: f64,
    pub n: usize,
    pub extent: f64,
    /// Minimax constants with `|k| ≤ c1·s₁ + c2·s₂` off the diagonal.
    pub c1: f64,
    pub c2: f64,
    /// `max |k| / s₂` over `0 < |v−u| ≤ 2h`.
    pub band_ratio: f64,
    /// `band_ratio / c2`; at most 1 when the singular summand alone bounds
    /// the band.
    pub band_share: f64,
    pub diagonal_excluded: bool,
    /// `|v_i|` per node.
    pub speeds: Vec<f64>,
    /// `I_l(v_i) = Σ_j |k_ij| w^l(v_i)/w^l(u_j) q_j`.
    pub profile: Vec<f64>,
    /// Least-squares slope of `ln I_l` against `ln(1+|v|)`, all nodes.
    pub slope: f64,
    /// The same fit restricted to `|v| ≤ R`, away from the box corners.
    pub slope_ball: f64,
    pub profile_max: f64,
    pub profile_finite: bool,
    pub fit_finite: bool,
    pub slope_pass: bool,
    pub pass: bool,
}

/// Slope threshold for the weighted row integral.
pub const SLOPE_LIMIT: f64 = -0.8;

pub fn check_kernel_bounds(k: &KernelMatrix, l: f64) -> Result<KernelBoundReport> {
    let grid = k.grid();
    let m = k.len();
    let nodes = grid.nodes();
    let q = grid.weights();
    if k.entries().iter().all(|&x| x == 0.0) {
        return Err(Error::Diagnostic("kernel matrix is identically zero".into()));
    }

    // (|k|, s₁, s₂) for every nonzero off-diagonal entry
    let mut triples = Vec::new();
    let h = grid.spacing();
    let band = 2.0 * h * (1.0 + 1e-9);
    let mut band_ratio: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            let kij = k.get(i, j).abs();
            if i == j || kij == 0.0 {
                continue;
            }
            let (v, u) = (nodes[i], nodes[j]);
            let s1 = shape_smooth(v, u);
            let s2 = shape_singular(v, u);
            if norm_sq(sub(v, u)).sqrt() <= band && s2 > 0.0 {
                band_ratio = band_ratio.max(kij / s2);
            }
            triples.push((kij, s1, s2));
        }
    }
    let (c1, c2) = minimax_two_shapes(&triples);

    let w = |v: [f64; 3]| 1.0 + norm_sq(v).sqrt();
    let wl: Vec<f64> = nodes.iter().map(|&v| w(v).powf(l)).collect();
    let profile: Vec<f64> = (0..m)
        .map(|i| {
            k.row(i)
                .iter()
                .zip(&wl)
                .zip(q)
                .map(|((kij, wu), qj)| kij.abs() * wl[i] / wu * qj)
                .sum()
        })
        .collect();
    let speeds: Vec<f64> = nodes.iter().map(|&v| norm_sq(v).sqrt()).collect();
    let slope = loglog_slope(&speeds, &profile, f64::INFINITY);
    let slope_ball = loglog_slope(&speeds, &profile, grid.extent() * (1.0 + 1e-9));
    let profile_finite = profile.iter().all(|x| x.is_finite() && *x >= 0.0);
    let fit_finite = c1.is_finite() && c2.is_finite();
    let slope_pass = slope <= SLOPE_LIMIT;
    Ok(KernelBoundReport {
        l,
        n: grid.n(),
        extent: grid.extent(),
        c1,
        c2,
        band_ratio,
        band_share: if c2 > 0.0 { band_ratio / c2 } else { f64::INFINITY },
        diagonal_excluded: true,
        profile_max: profile.iter().cloned().fold(0.0, f64::max),
        speeds,
        profile,
        slope,
        slope_ball,
        profile_finite,
        fit_finite,
        slope_pass,
        pass: profile_finite && fit_finite && slope_pass,
    })
}

/// Smallest `c1 + c2` with `a ≤ c1·s₁ + c2·s₂` for every triple, searched
/// over the ratio `θ = c2/c1` on a log grid and then by golden section.
pub(crate) fn minimax_two_shapes(triples: &[(f64, f64, f64)]) -> (f64, f64) {
    let t = |theta: f64| {
        triples
            .iter()
            .map(|&(a, s1, s2)| a / (s1 + theta * s2))
            .fold(0.0, f64::max)
    };
    let cost = |lt: f64| {
        let th = lt.exp();
        t(th) * (1.0 + th)
    };
    let grid: Vec<f64> = (0..=48).map(|i| (-12.0 + 0.5 * i as f64) * std::f64::consts::LN_10 / 2.0).collect();
    let (mut best, mut best_cost) = (grid[0], f64::INFINITY);
    for &lt in &grid {
        let c = cost(lt);
        if c < best_cost {
            best = lt;
            best_cost = c;
        }
    }
    let step = grid[1] - grid[0];
    let (mut a, mut b) = (best - step, best + step);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (cost(x1), cost(x2));
    for _ in 0..40 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = cost(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = cost(x2);
        }
    }
    let lt = if f1.min(f2) < best_cost {
        if f1 <= f2 { x1 } else { x2 }
    } else {
        best
    };
    let th = lt.exp();
    let c1 = t(th);
    (c1, th * c1)
}

/// Least-squares slope of `ln y` against `ln(1+x)` over points with
/// `x ≤ cut` and `y > 0`.
pub fn loglog_slope(x: &[f64], y: &[f64], cut: f64) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(x, y)| **x <= cut && **y > 0.0)
        .map(|(x, y)| ((1.0 + x).ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// `g_f(x, v) = ν(v) + L(f(x,·))(v)`, the loss frequency of `μ + √μ f`.
pub fn compute_g(field: &DistributionField, op: &CollisionOperator) -> Result<DistributionField> {
    if !field.velocity().same_as(op.grid()) {
        return Err(Error::Contract("field and operator use different velocity grids".into()));
    }
    let nu = op.nu().values();
    let mut out = Vec::with_capacity(field.values().len());
    for x in 0..field.nx() {
        let l = op.loss_frequency(field.slice(x));
        out.extend(l.iter().zip(nu).map(|(l, n)| n + l));
    }
    DistributionField::new(Arc::clone(field.spatial()), Arc::clone(field.velocity()), out)
}

/// Outcome of checking `−∫_s^t g_f ≤ −ν(t−s)/2` along characteristics.
#[derive(Debug, Clone, Serialize)]
pub struct GBoundReport {
    pub pairs: usize,
    pub satisfied: usize,
    pub fraction: f64,
    /// Largest `ν(t−s)/2 − ∫_s^t g_f`; nonpositive when the bound holds.
    pub worst_margin: f64,
    /// Per `(x, v)` node: bound held for every sampled pair.
    pub per_node: Vec<bool>,
}

/// Number of time levels sampled by [`check_g_lower_bound`].
const MAX_LEVELS: usize = 17;

pub fn check_g_lower_bound(traj: &Trajectory, op: &CollisionOperator) -> Result<GBoundReport> {
    let fields = traj.fields();
    if fields.is_empty() {
        return Err(Error::Contract("empty trajectory".into()));
    }
    let times = traj.times();
    let gs = fields.iter().map(|f| compute_g(f, op)).collect::<Result<Vec<_>>>()?;
    let spatial = fields[0].spatial();
    let vgrid = op.grid();
    let (nx, m) = (spatial.nx(), vgrid.len());
    let stride = (times.len() - 1).div_ceil(MAX_LEVELS - 1).max(1);
    let mut levels: Vec<usize> = (0..times.len()).step_by(stride).collect();
    if *levels.last().unwrap() != times.len() - 1 {
        levels.push(times.len() - 1);
    }
    let nu = op.nu().values();
    let nodes = vgrid.nodes();

    let results: Vec<(usize, usize, f64, bool)> = op.exec().map(nx * m, |node| {
        let (x, iv) = (node / m, node % m);
        let xpos = spatial.position(x);
        let v1 = nodes[iv][0];
        let (mut pairs, mut ok, mut worst, mut all) = (0, 0, f64::NEG_INFINITY, true);
        for (a, &ks) in levels.iter().enumerate() {
            for &kt in &levels[a + 1..] {
                let t = times[kt];
                // g along the characteristic ending at (t, x)
                let along = |k: usize| {
                    let (j0, j1, th) = spatial.periodic_stencil(xpos - v1 * (t - times[k]));
                    let g = &gs[k];
                    (1.0 - th) * g.slice(j0)[iv] + th * g.slice(j1)[iv]
                };
                let mut integral = 0.0;
                for k in ks..kt {
                    integral += 0.5 * (times[k + 1] - times[k]) * (along(k) + along(k + 1));
                }
                let margin = 0.5 * nu[iv] * (t - times[ks]) - integral;
                pairs += 1;
                if margin <= 0.0 {
                    ok += 1;
                } else {
                    all = false;
                }
                worst = worst.max(margin);
            }
        }
        (pairs, ok, worst, all)
    });
    let pairs: usize = results.iter().map(|r| r.0).sum();
    let satisfied: usize = results.iter().map(|r| r.1).sum();
    let worst_margin = if pairs == 0 {
        0.0
    } else {
        results.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max)
    };
    Ok(GBoundReport {
        pairs,
        satisfied,
        fraction: if pairs == 0 { 1.0 } else { satisfied as f64 / pairs as f64 },
        worst_margin,
        per_node: results.iter().map(|r| r.3).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::reference;
    use crate::grid::SpatialGrid;
    use std::f64::consts::PI;

    fn op(r: f64, n: usize, gamma: f64) -> CollisionOperator {
        let grid = Arc::new(VelocityGrid::new(r, n).unwrap());
        let params = CollisionParams::new(gamma, 1.0).unwrap();
        CollisionOperator::new(grid, params, SphereQuadrature::aligned(2, 4).unwrap()).unwrap()
    }

    #[test]
    fn apply_k_is_linear_and_matches_oracle() {
        let o = op(3.0, 9, 0.5);
        let f = o.grid().sample(|v| (v[0] - 0.3 * v[1] * v[2]) * (-0.3 * norm_sq(v)).exp());
        let g = o.grid().sample(|v| (1.0 + v[2]).cos() * (-0.5 * norm_sq(v)).exp());
        let kf = o.apply_k(&f).unwrap();
        let kg = o.apply_k(&g).unwrap();
        let mix = GridFunction::new(
            Arc::clone(o.grid()),
            f.values().iter().zip(g.values()).map(|(a, b)| 2.0 * a - 0.7 * b).collect(),
        )
        .unwrap();
        let kmix = o.apply_k(&mix).unwrap();
        let scale = kmix.max_abs();
        for ((m, a), b) in kmix.values().iter().zip(kf.values()).zip(kg.values()) {
            assert!((m - (2.0 * a - 0.7 * b)).abs() <= 1e-12 * scale);
        }
        let slow = reference::apply_k(&f, o.params(), o.sphere()).unwrap();
        for (a, b) in kf.values().iter().zip(slow.values()) {
            assert!((a - b).abs() <= 1e-12 * slow.max_abs());
        }
        let zero = o.apply_k(&GridFunction::zeros(Arc::clone(o.grid()))).unwrap();
        assert!(zero.values().iter().all(|&x| x == 0.0));
        let free = apply_k(&f, o.params(), o.sphere()).unwrap();
        assert_eq!(free.values(), kf.values());
    }

    #[test]
    fn matrix_reconstructs_apply_k() {
        let o = op(3.0, 7, 1.0);
        let k = KernelMatrix::from_operator(&o, DEFAULT_MAX_NODES).unwrap();
        let f = o.grid().sample(|v| (0.5 + v[0] * v[1]) * (-0.4 * norm_sq(v)).exp());
        let a = k.apply(&f).unwrap();
        let b = o.apply_k(&f).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-10 * b.max_abs());
        }
        let z = k.apply(&GridFunction::zeros(Arc::clone(o.grid()))).unwrap();
        assert!(z.values().iter().all(|&x| x == 0.0));
        assert!(k.entries().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn matrix_respects_cap() {
        let o = op(3.0, 5, 1.0);
        assert!(matches!(KernelMatrix::from_operator(&o, 100), Err(Error::Resource(_))));
    }

    #[test]
    fn symmetry_defects() {
        let sphere = SphereQuadrature::aligned(4, 8).unwrap();
        let weak = |n: usize| {
            let grid = Arc::new(VelocityGrid::new(4.0, n).unwrap());
            let o = CollisionOperator::new(Arc::clone(&grid), CollisionParams::default(), sphere.clone()).unwrap();
            let phi = grid.sample(|v| (-(v[0] - 0.7).powi(2) - v[1] * v[1] - (v[2] + 0.3).powi(2)).exp());
            let psi = grid.sample(|v| (1.0 + v[1]) * (-0.8 * (v[0] * v[0] + (v[1] - 0.4).powi(2) + v[2] * v[2])).exp());
            weak_symmetry_defect(&o, &phi, &psi).unwrap()
        };
        let (a, b) = (weak(9), weak(13));
        assert!(b < a, "{a} -> {b}");
        assert!(b < 1e-2);
        // the pointwise defect is recorded, not bounded
        let k = KernelMatrix::from_operator(&op(4.0, 9, 1.0), DEFAULT_MAX_NODES).unwrap();
        assert!(k.symmetry_defect().is_finite());
    }

    #[test]
    fn kernel_profile_basics() {
        let o = op(4.0, 9, 1.0);
        let k = KernelMatrix::from_operator(&o, DEFAULT_MAX_NODES).unwrap();
        for l in [0.0, 3.0, 5.0, -2.0] {
            let r = check_kernel_bounds(&k, l).unwrap();
            assert!(r.profile_finite && r.fit_finite, "l = {l}");
            assert!(r.c1 > 0.0 && r.c2 >= 0.0);
        }
        let r = check_kernel_bounds(&k, 0.0).unwrap();
        let q = o.grid().weights();
        for i in [0, o.grid().center_index(), k.len() - 1] {
            let plain: f64 = k.row(i).iter().zip(q).map(|(a, w)| a.abs() * w).sum();
            assert!((plain - r.profile[i]).abs() <= 1e-14 * plain);
        }
        let zero = KernelMatrix {
            grid: Arc::clone(o.grid()),
            entries: vec![0.0; k.len() * k.len()],
        };
        assert!(matches!(check_kernel_bounds(&zero, 0.0), Err(Error::Diagnostic(_))));
    }

    #[test]
    fn minimax_recovers_planted_constants() {
        let triples: Vec<(f64, f64, f64)> = (1..200)
            .map(|i| {
                let s1 = (i as f64 * 0.37).sin().abs() + 0.01;
                let s2 = (i as f64 * 0.11).cos().abs() + 0.01;
                (2.0 * s1 + 0.5 * s2, s1, s2)
            })
            .collect();
        let (c1, c2) = minimax_two_shapes(&triples);
        for &(a, s1, s2) in &triples {
            assert!(a <= (c1 * s1 + c2 * s2) * (1.0 + 1e-12));
        }
        assert!(c1 + c2 <= 2.5 * (1.0 + 1e-6));
    }

    #[test]
    fn g_of_zero_is_nu_and_g_of_root_mu_doubles() {
        let o = op(6.0, 25, 0.0);
        let spatial = Arc::new(SpatialGrid::slab(1.0, 3).unwrap());
        let zero = DistributionField::zeros(Arc::clone(&spatial), Arc::clone(o.grid()));
        let g = compute_g(&zero, &o).unwrap();
        for x in 0..3 {
            assert_eq!(g.slice(x), o.nu().values());
        }
        let root = DistributionField::uniform(spatial, o.sqrt_mu());
        let g = compute_g(&root, &o).unwrap();
        let want = 4.0 * PI * PI.powf(1.5);
        let c = o.grid().center_index();
        assert!((g.slice(1)[c] / want - 1.0).abs() < 1e-4);
        assert!(g.values().iter().all(|&x| x >= 0.0));
    }
}
