//! Velocity lattice, periodic slab, sphere rules and the interpolation and
//! integration primitives built on them.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Uniform tensor lattice on `[-R, R]³` with trapezoidal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    extent: f64,
    n: usize,
    spacing: f64,
    axis: Vec<f64>,
    axis_weights: Vec<f64>,
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

/// Out-of-box tolerance in lattice units: points this close to the box are
/// treated as lying on it.
pub(crate) const BOX_TOL: f64 = 1e-9;

pub fn build_velocity_grid(extent: f64, n: usize) -> Result<VelocityGrid> {
    VelocityGrid::new(extent, n)
}

impl VelocityGrid {
    pub fn new(extent: f64, n: usize) -> Result<Self> {
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::Config(format!(
                "velocity extent R must be positive, got {extent}"
            )));
        }
        if n < 2 {
            return Err(Error::Config(format!(
                "nodes per axis N must be at least 2, got {n}"
            )));
        }
        let spacing = 2.0 * extent / (n - 1) as f64;
        let mid = (n - 1) as f64 / 2.0;
        // Symmetric construction keeps the lattice exactly odd-symmetric.
        let axis: Vec<f64> = (0..n).map(|i| (i as f64 - mid) * spacing).collect();
        let mut axis_weights = vec![spacing; n];
        axis_weights[0] *= 0.5;
        axis_weights[n - 1] *= 0.5;

        let mut nodes = Vec::with_capacity(n * n * n);
        let mut weights = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    nodes.push([axis[i], axis[j], axis[k]]);
                    weights.push(axis_weights[i] * axis_weights[j] * axis_weights[k]);
                }
            }
        }
        Ok(Self {
            extent,
            n,
            spacing,
            axis,
            axis_weights,
            nodes,
            weights,
        })
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn spacing(&self) -> f64 {
        self.spacing
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn axis(&self) -> &[f64] {
        &self.axis
    }
    pub fn axis_weights(&self) -> &[f64] {
        &self.axis_weights
    }
    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let n = self.n;
        (idx / (n * n), (idx / n) % n, idx % n)
    }

    /// Index of the node nearest to the origin (the center node when N is odd).
    pub fn center_index(&self) -> usize {
        let c = (self.n - 1) / 2;
        self.index(c, c, c)
    }

    /// Evaluate `f` at every node.
    pub fn sample(self: &Arc<Self>, f: impl Fn([f64; 3]) -> f64) -> GridFunction {
        let values = self.nodes.iter().map(|&v| f(v)).collect();
        GridFunction {
            grid: Arc::clone(self),
            values,
        }
    }

    pub(crate) fn same_as(&self, other: &VelocityGrid) -> bool {
        self.n == other.n && self.extent == other.extent
    }
}

/// Physical space: a single point, or a periodic slab `[0, L)` along x₁.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialMode {
    Homogeneous,
    Slab1d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    mode: SpatialMode,
    length: f64,
    nx: usize,
}

impl SpatialGrid {
    pub fn homogeneous() -> Self {
        Self {
            mode: SpatialMode::Homogeneous,
            length: 1.0,
            nx: 1,
        }
    }

    pub fn slab(length: f64, nx: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Config(format!(
                "slab length L must be positive, got {length}"
            )));
        }
        if nx == 0 {
            return Err(Error::Config("slab needs at least one x-node".into()));
        }
        Ok(Self {
            mode: SpatialMode::Slab1d,
            length,
            nx,
        })
    }

    pub fn mode(&self) -> SpatialMode {
        self.mode
    }
    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn dx(&self) -> f64 {
        self.length / self.nx as f64
    }

    pub fn position(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    /// Linear interpolation stencil `(j0, j1, θ)` of the periodic point `x`,
    /// so that `f(x) ≈ (1−θ) f[j0] + θ f[j1]`.
    pub fn periodic_stencil(&self, x: f64) -> (usize, usize, f64) {
        if self.mode == SpatialMode::Homogeneous || self.nx == 1 {
            return (0, 0, 0.0);
        }
        let mut t = x / self.dx();
        // lattice-commensurate shifts land exactly on nodes
        if (t - t.round()).abs() < 1e-9 {
            t = t.round();
        }
        let t = t.rem_euclid(self.nx as f64);
        let j0 = (t.floor() as usize).min(self.nx - 1);
        let frac = t - j0 as f64;
        (j0, (j0 + 1) % self.nx, frac)
    }

    /// Measure of Ω; unit measure in homogeneous mode.
    pub fn measure(&self) -> f64 {
        match self.mode {
            SpatialMode::Homogeneous => 1.0,
            SpatialMode::Slab1d => self.length,
        }
    }

    /// Quadrature weight of one x-node.
    pub fn cell_weight(&self) -> f64 {
        self.measure() / self.nx as f64
    }
}

/// A product rule on S². Nodes are stored in a local frame whose polar axis
/// is e₃. A `Fixed` rule uses them as they are; an `Aligned` rule is rotated
/// so that its polar axis follows the relative velocity of each collision.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereQuadrature {
    n_theta: usize,
    n_phi: usize,
    kind: SphereKind,
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereKind {
    /// Gauss–Legendre in cos θ ∈ [−1, 1] about a fixed e₃ axis.
    Fixed,
    /// Hemisphere about the relative velocity, Gauss–Legendre in cos²θ on
    /// [0, 1], weights doubled. The collision map is even in ω, so the
    /// folded rule integrates over the full sphere. The measure
    /// `|cos θ| dω = ½ d(cos²θ) dφ` is what the nodes are exact for, and it
    /// is invariant under `cos θ ↔ sin θ`, `φ ↔ φ+π`, which swaps v′ and u′.
    Aligned,
}

pub fn build_sphere_quadrature(n_theta: usize, n_phi: usize) -> Result<SphereQuadrature> {
    SphereQuadrature::fixed(n_theta, n_phi)
}

impl SphereQuadrature {
    pub fn fixed(n_theta: usize, n_phi: usize) -> Result<Self> {
        Self::build(n_theta, n_phi, SphereKind::Fixed)
    }

    pub fn aligned(n_theta: usize, n_phi: usize) -> Result<Self> {
        Self::build(n_theta, n_phi, SphereKind::Aligned)
    }

    fn build(n_theta: usize, n_phi: usize, kind: SphereKind) -> Result<Self> {
        if n_theta == 0 || n_phi == 0 {
            return Err(Error::Config(format!(
                "sphere rule needs n_theta, n_phi >= 1, got ({n_theta}, {n_phi})"
            )));
        }
        let (x, w) = gauss_legendre(n_theta);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (xi, wi) in x.iter().zip(&w) {
            let (c, wc) = match kind {
                SphereKind::Fixed => (*xi, *wi),
                // x = cos²θ = (1+ξ)/2; |cos θ| dω = ½ dx dφ, doubled for the fold
                SphereKind::Aligned => {
                    let c = (0.5 * (1.0 + xi)).sqrt();
                    (c, 0.5 * wi / c)
                }
            };
            let s = (1.0 - c * c).max(0.0).sqrt();
            for m in 0..n_phi {
                let (sp, cp) = (m as f64 * dphi).sin_cos();
                nodes.push([s * cp, s * sp, c]);
                weights.push(wc * dphi);
            }
        }
        Ok(Self {
            n_theta,
            n_phi,
            kind,
            nodes,
            weights,
        })
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }
    pub fn n_phi(&self) -> usize {
        self.n_phi
    }
    pub fn kind(&self) -> SphereKind {
        self.kind
    }
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn integrate(&self, f: impl Fn([f64; 3]) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&w, &q)| q * f(w))
            .sum()
    }

    /// Directions used for relative velocity `z`, as `(ω, |cos θ|, weight)`.
    /// For `Aligned` rules `z` must be nonzero.
    pub fn directions(&self, z: [f64; 3]) -> impl Iterator<Item = ([f64; 3], f64, f64)> + '_ {
        let nz = crate::norm_sq(z).sqrt();
        let zh = if nz > 0.0 {
            [z[0] / nz, z[1] / nz, z[2] / nz]
        } else {
            [0.0, 0.0, 1.0]
        };
        let (e1, e2) = match self.kind {
            SphereKind::Aligned => frame(zh),
            SphereKind::Fixed => ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
        };
        let e3 = match self.kind {
            SphereKind::Aligned => zh,
            SphereKind::Fixed => [0.0, 0.0, 1.0],
        };
        let kind = self.kind;
        self.nodes.iter().zip(&self.weights).map(move |(l, &w)| {
            let om = [
                l[0] * e1[0] + l[1] * e2[0] + l[2] * e3[0],
                l[0] * e1[1] + l[1] * e2[1] + l[2] * e3[1],
                l[0] * e1[2] + l[1] * e2[2] + l[2] * e3[2],
            ];
            let c = match kind {
                SphereKind::Aligned => l[2],
                SphereKind::Fixed => crate::dot(om, zh).abs(),
            };
            (om, c, w)
        })
    }

    /// Partner of node `k` under `cos θ ↔ sin θ`, `φ ↔ φ+π`, when the rule
    /// has that symmetry (aligned, even `n_φ`).
    pub fn partner(&self, k: usize) -> Option<usize> {
        if self.kind != SphereKind::Aligned || self.n_phi % 2 == 1 {
            return None;
        }
        let (i, m) = (k / self.n_phi, k % self.n_phi);
        Some((self.n_theta - 1 - i) * self.n_phi + (m + self.n_phi / 2) % self.n_phi)
    }

    /// `Σ_k w_k |cos θ_k|` for relative velocity `z`; 2π up to roundoff for
    /// the aligned rule.
    pub fn cos_sum(&self, z: [f64; 3]) -> f64 {
        self.directions(z).map(|(_, c, w)| w * c).sum()
    }
}

/// Orthonormal pair completing the unit vector `zh` to a right-handed frame.
pub(crate) fn frame(zh: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let a = if zh[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let c = cross(zh, a);
    let nc = crate::norm_sq(c).sqrt();
    let e1 = [c[0] / nc, c[1] / nc, c[2] / nc];
    (e1, cross(zh, e1))
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Gauss–Legendre nodes and weights on [−1, 1], ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// A function on the velocity lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Arc<VelocityGrid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<VelocityGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Contract(format!(
                "grid function needs {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<VelocityGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, values }
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn([f64; 3], f64) -> f64) -> Self {
        let values = self
            .grid
            .nodes()
            .iter()
            .zip(&self.values)
            .map(|(&v, &g)| f(v, g))
            .collect();
        Self {
            grid: Arc::clone(&self.grid),
            values,
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        self.map(|_, g| a * g)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub(crate) fn check_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "grid mismatch: (R={}, N={}) vs (R={}, N={})",
                self.grid.extent(),
                self.grid.n(),
                other.grid.extent(),
                other.grid.n()
            )))
        }
    }
}

/// Locate `p` on one axis: base cell index and fractional offset, or `None`
/// outside the box.
#[inline]
pub(crate) fn locate(t: f64, n: usize) -> Option<(usize, f64)> {
    let last = (n - 1) as f64;
    if !(t >= -BOX_TOL && t <= last + BOX_TOL) {
        return None;
    }
    let t = t.clamp(0.0, last);
    let base = (t.floor() as usize).min(n - 2);
    Some((base, t - base as f64))
}

/// Trilinear interpolation inside the box, zero outside it.
pub fn interpolate(g: &GridFunction, p: [f64; 3]) -> f64 {
    let grid = &g.grid;
    let n = grid.n;
    let inv_h = 1.0 / grid.spacing;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        match locate((p[a] + grid.extent) * inv_h, n) {
            Some((b, f)) => {
                base[a] = b;
                frac[a] = f;
            }
            None => return 0.0,
        }
    }
    let vals = &g.values;
    let mut acc = 0.0;
    for di in 0..2 {
        let wi = if di == 0 { 1.0 - frac[0] } else { frac[0] };
        for dj in 0..2 {
            let wj = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
            for dk in 0..2 {
                let wk = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
                let w = wi * wj * wk;
                if w != 0.0 {
                    acc += w * vals[grid.index(base[0] + di, base[1] + dj, base[2] + dk)];
                }
            }
        }
    }
    acc
}

/// `Σ_i weight(v_i)·g(v_i)·q_i`, with `weight ≡ 1` when absent.
pub fn integrate_v(g: &GridFunction, weight: Option<&dyn Fn([f64; 3]) -> f64>) -> f64 {
    let grid = &g.grid;
    match weight {
        None => g.values.iter().zip(grid.weights()).map(|(x, q)| x * q).sum(),
        Some(wf) => g
            .values
            .iter()
            .zip(grid.weights())
            .zip(grid.nodes())
            .map(|((x, q), &v)| wf(v) * x * q)
            .sum(),
    }
}

/// Values of a function of `(x, v)`, x-major then lexicographic in v.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionField {
    spatial: Arc<SpatialGrid>,
    velocity: Arc<VelocityGrid>,
    values: Vec<f64>,
}

impl DistributionField {
    pub fn new(
        spatial: Arc<SpatialGrid>,
        velocity: Arc<VelocityGrid>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let want = spatial.nx() * velocity.len();
        if values.len() != want {
            return Err(Error::Contract(format!(
                "field needs {want} values, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|x| !x.is_finite()) {
            return Err(Error::Contract(format!("non-finite field value at {bad}")));
        }
        Ok(Self {
            spatial,
            velocity,
            values,
        })
    }

    pub fn zeros(spatial: Arc<SpatialGrid>, velocity: Arc<VelocityGrid>) -> Self {
        let values = vec![0.0; spatial.nx() * velocity.len()];
        Self {
            spatial,
            velocity,
            values,
        }
    }

    /// Field equal to `g` at every x-node.
    pub fn uniform(spatial: Arc<SpatialGrid>, g: &GridFunction) -> Self {
        let mut values = Vec::with_capacity(spatial.nx() * g.values.len());
        for _ in 0..spatial.nx() {
            values.extend_from_slice(&g.values);
        }
        Self {
            spatial,
            velocity: Arc::clone(&g.grid),
            values,
        }
    }

    pub fn spatial(&self) -> &Arc<SpatialGrid> {
        &self.spatial
    }
    pub fn velocity(&self) -> &Arc<VelocityGrid> {
        &self.velocity
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn nx(&self) -> usize {
        self.spatial.nx()
    }

    pub fn slice(&self, x: usize) -> &[f64] {
        let m = self.velocity.len();
        &self.values[x * m..(x + 1) * m]
    }

    pub fn slice_mut(&mut self, x: usize) -> &mut [f64] {
        let m = self.velocity.len();
        &mut self.values[x * m..(x + 1) * m]
    }

    pub fn at_x(&self, x: usize) -> GridFunction {
        GridFunction {
            grid: Arc::clone(&self.velocity),
            values: self.slice(x).to_vec(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Same grids (by value).
    pub fn compatible(&self, other: &DistributionField) -> bool {
        self.spatial == other.spatial && self.velocity.same_as(&other.velocity)
    }
}
