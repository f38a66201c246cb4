//! Collision operator `Q(F,G)` for hard potentials with angular cutoff
//! `B = |v−u|^γ·C_b·|cos θ|`, and its perturbation split
//! `Γ = Γ_gain − Γ_loss` around `μ = exp(−|v|²)`.
//!
//! Post-collision values are read from the lattice by trilinear
//! interpolation, corrected by the interpolated `√μ`:
//!
//! ```text
//! g(p) ≈ I(g)(p) · √μ(p) / I(√μ)(p)
//! ```
//!
//! Combined with `μ(v′)μ(u′) = μ(v)μ(u)` this gives
//!
//! ```text
//! Γ_gain(g,h)(v) = √μ(v) Σ_u q_u μ(u) Σ_ω B · I(g)(v′) I(h)(u′) / (I(√μ)(v′) I(√μ)(u′))
//! ```
//!
//! which never divides by `√μ(v)` and reproduces the equilibrium `Q(μ,μ)=0`
//! to roundoff. The sphere rule normally used here is
//! [`SphereQuadrature::aligned`]; any rule is accepted.
//!
//! At `u = v` the angular integral of `|cos θ|` is direction independent,
//! so the diagonal contributes `0^γ · C_b · Σ_k w_k|cos θ_k|`, which is
//! nonzero only for `γ = 0`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::grid::{GridFunction, SphereQuadrature, VelocityGrid};
use crate::{dot, norm_sq, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionParams {
    pub gamma: f64,
    pub c_b: f64,
}

impl Default for CollisionParams {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            c_b: 1.0,
        }
    }
}

impl CollisionParams {
    pub fn new(gamma: f64, c_b: f64) -> Result<Self> {
        let p = Self { gamma, c_b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma = {} outside hard potentials 0 ≤ γ ≤ 1",
                self.gamma
            )));
        }
        if !(self.c_b > 0.0 && self.c_b.is_finite()) {
            return Err(Error::Config(format!(
                "angular constant C_b must be positive, got {}",
                self.c_b
            )));
        }
        Ok(())
    }
}

/// Post-collision velocities `(v′, u′)`.
pub fn post_collision(v: [f64; 3], u: [f64; 3], omega: [f64; 3]) -> Result<([f64; 3], [f64; 3])> {
    let n = norm_sq(omega).sqrt();
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::Contract(format!("|ω| = {n}, expected 1")));
    }
    let d = dot([u[0] - v[0], u[1] - v[1], u[2] - v[2]], omega);
    Ok((
        [v[0] + d * omega[0], v[1] + d * omega[1], v[2] + d * omega[2]],
        [u[0] - d * omega[0], u[1] - d * omega[1], u[2] - d * omega[2]],
    ))
}

/// `|v−u|^γ · C_b·|cos θ|`, zero at `u = v`.
pub fn kinetic_kernel(v: [f64; 3], u: [f64; 3], omega: [f64; 3], params: &CollisionParams) -> f64 {
    let z = [v[0] - u[0], v[1] - u[1], v[2] - u[2]];
    let nz = norm_sq(z).sqrt();
    if nz == 0.0 {
        return 0.0;
    }
    let cos = dot(z, omega) / nz;
    nz.powf(params.gamma) * params.c_b * cos.abs()
}

/// Cached collision machinery on one velocity grid.
#[derive(Debug, Clone)]
pub struct CollisionOperator {
    grid: Arc<VelocityGrid>,
    params: CollisionParams,
    sphere: SphereQuadrature,
    exec: Exec,
    sqrt_mu: GridFunction,
    /// `q_u μ(u)`
    wmu: Vec<f64>,
    /// `q_u √μ(u)`
    ws: Vec<f64>,
    /// `|z|^γ C_b Σ_k w_k|cos θ_k|` over lattice differences, side `2N−1`.
    loss_table: Vec<f64>,
    nu: GridFunction,
}

/// Lattice values on an `(N+1)³` array whose last layer is zero, plus a
/// zero tail, so a stencil may read one node past the box where its weight
/// vanishes and a chunk of lanes may run past the end of a row.
struct Padded(Vec<f64>);

const LANES: usize = 4;

impl Padded {
    fn new(grid: &VelocityGrid, values: &[f64]) -> Self {
        let n = grid.n();
        let p = n + 1;
        let mut data = vec![0.0; p * p * p + LANES];
        for i in 0..n {
            for j in 0..n {
                let src = &values[grid.index(i, j, 0)..][..n];
                data[(i * p + j) * p..][..n].copy_from_slice(src);
            }
        }
        Self(data)
    }

    /// Trilinear values at `LANES` consecutive stencil bases.
    #[inline(always)]
    fn interp(&self, base: usize, offs: &[usize; 8], w: &[f64; 8]) -> [f64; LANES] {
        assert!(base + offs[7] + LANES <= self.0.len());
        let mut r = [0.0; LANES];
        for t in 0..8 {
            // SAFETY: offsets are increasing, so the assertion above bounds
            // every read.
            let src = unsafe { self.0.as_ptr().add(base + offs[t]) };
            for (l, x) in r.iter_mut().enumerate() {
                *x += w[t] * unsafe { *src.add(l) };
            }
        }
        r
    }
}

/// Split an offset in lattice units into floor and fraction, snapping
/// near-integers so lattice-aligned shifts stay exact.
#[inline]
fn split(t: f64) -> (isize, f64) {
    let r = t.round();
    if (t - r).abs() < crate::grid::BOX_TOL {
        (r as isize, 0.0)
    } else {
        let f = t.floor();
        (f as isize, t - f)
    }
}

/// Valid range of an output index `j` such that `j + off` is a stencil base
/// inside the box.
#[inline]
fn shift_range(off: isize, frac: f64, n: isize) -> (isize, isize) {
    let last = if frac == 0.0 { n - 1 } else { n - 2 };
    (-off, last - off)
}

struct Pair {
    coef: f64,
    paired: bool,
    rows: usize,
    len: usize,
    /// first output node, offset within the slab
    out: usize,
    /// first `u` node
    u: usize,
    /// first stencil bases of `v′` and `u′` in the padded layout
    base1: usize,
    base2: usize,
    w1: [f64; 8],
    w2: [f64; 8],
}

#[inline]
fn stencil_offsets(p: usize) -> [usize; 8] {
    [0, 1, p, p + 1, p * p, p * p + 1, p * p + p, p * p + p + 1]
}

enum GainInputs<'a> {
    /// `I(g)(v′) I(h)(u′) / (I(√μ)(v′) I(√μ)(u′))`
    Bilinear { g: &'a Padded, h: &'a Padded },
    /// The bilinear form with `g = h`.
    Square { g: &'a Padded },
    /// `I(f)(v′)/I(√μ)(v′) + I(f)(u′)/I(√μ)(u′)`, which is
    /// `Γ_gain(f,√μ) + Γ_gain(√μ,f)`.
    Linear { f: &'a Padded },
    /// `Linear` plus `Square`, one sweep.
    Source { f: &'a Padded },
}

impl CollisionOperator {
    pub fn new(
        grid: Arc<VelocityGrid>,
        params: CollisionParams,
        sphere: SphereQuadrature,
    ) -> Result<Self> {
        Self::with_exec(grid, params, sphere, Exec::default())
    }

    pub fn with_exec(
        grid: Arc<VelocityGrid>,
        params: CollisionParams,
        sphere: SphereQuadrature,
        exec: Exec,
    ) -> Result<Self> {
        params.validate()?;
        let sqrt_mu = grid.sample(|v| (-0.5 * norm_sq(v)).exp());
        let wmu = grid
            .nodes()
            .iter()
            .zip(grid.weights())
            .map(|(&v, q)| q * crate::maxwellian(v))
            .collect();
        let ws = sqrt_mu
            .values()
            .iter()
            .zip(grid.weights())
            .map(|(s, q)| s * q)
            .collect();

        let n = grid.n() as isize;
        let side = (2 * n - 1) as usize;
        let h = grid.spacing();
        let mut loss_table = Vec::with_capacity(side * side * side);
        for a in -(n - 1)..n {
            for b in -(n - 1)..n {
                for c in -(n - 1)..n {
                    let z = [a as f64 * h, b as f64 * h, c as f64 * h];
                    let nz = norm_sq(z).sqrt();
                    loss_table.push(nz.powf(params.gamma) * params.c_b * sphere.cos_sum(z));
                }
            }
        }
        let mut op = Self {
            nu: GridFunction::zeros(Arc::clone(&grid)),
            grid,
            params,
            sphere,
            exec,
            sqrt_mu,
            wmu,
            ws,
            loss_table,
        };
        let nu = op.loss_frequency(op.sqrt_mu.values());
        op.nu = GridFunction::new(Arc::clone(&op.grid), nu)?;
        Ok(op)
    }

    pub fn grid(&self) -> &Arc<VelocityGrid> {
        &self.grid
    }
    pub fn params(&self) -> &CollisionParams {
        &self.params
    }
    pub fn sphere(&self) -> &SphereQuadrature {
        &self.sphere
    }
    pub fn exec(&self) -> Exec {
        self.exec
    }
    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }
    pub fn sqrt_mu(&self) -> &GridFunction {
        &self.sqrt_mu
    }
    /// Collision frequency `ν = Γ_loss(1, √μ)`.
    pub fn nu(&self) -> &GridFunction {
        &self.nu
    }

    fn check(&self, g: &GridFunction) -> Result<()> {
        g.check_same_grid(&self.sqrt_mu)
    }

    /// `L(h)(v) = Σ_u q_u ∫B dω · √μ(u) h(u)`, so that
    /// `Γ_loss(g,h) = g · L(h)`.
    pub fn loss_frequency(&self, h: &[f64]) -> Vec<f64> {
        let n = self.grid.n();
        let side = 2 * n - 1;
        let wh: Vec<f64> = self.ws.iter().zip(h).map(|(w, h)| w * h).collect();
        let table = &self.loss_table;
        let mut out = vec![0.0; self.grid.len()];
        self.exec.for_each_chunk(&mut out, n * n, |i, slab| {
            for j in 0..n {
                for k in 0..n {
                    let mut acc = 0.0;
                    for ui in 0..n {
                        let ta = (ui + n - 1 - i) * side;
                        for uj in 0..n {
                            let tb = (ta + uj + n - 1 - j) * side + n - 1 - k;
                            let row = &table[tb..tb + n];
                            let src = &wh[(ui * n + uj) * n..][..n];
                            acc += row.iter().zip(src).map(|(t, x)| t * x).sum::<f64>();
                        }
                    }
                    slab[j * n + k] = acc;
                }
            }
        });
        out
    }

    /// Visit every `(z, ω)` pair feeding output slab `i`.
    ///
    /// For fixed `z = u − v` and sphere node the offsets `v′ − v` and
    /// `u′ − v` are fixed, so the stencil weights are shared by every output
    /// node in the box of nodes whose `u`, `v′`, `u′` all lie in the grid.
    /// Sphere nodes that swap `v′` and `u′` are visited once, flagged
    /// `paired`.
    fn for_each_pair(&self, i: usize, mut visit: impl FnMut(&Pair)) {
        let grid = &*self.grid;
        let n = grid.n();
        let ni = n as isize;
        let ii = i as isize;
        let h = grid.spacing();
        let inv_h = 1.0 / h;
        let p = n + 1;
        let sphere = &self.sphere;
        let partners: Vec<Option<usize>> = (0..sphere.len()).map(|k| sphere.partner(k)).collect();
        for a in -ii..(ni - ii) {
            for b in -(ni - 1)..ni {
                for c in -(ni - 1)..ni {
                    let zl = [a as f64, b as f64, c as f64];
                    let z = [zl[0] * h, zl[1] * h, zl[2] * h];
                    // 0^0 = 1 keeps the γ = 0 diagonal
                    let radial = norm_sq(z).sqrt().powf(self.params.gamma) * self.params.c_b;
                    if radial == 0.0 {
                        continue;
                    }
                    for (k, (om, cos, w)) in sphere.directions(z).enumerate() {
                        let paired = match partners[k] {
                            Some(q) if q < k => continue,
                            Some(_) => true,
                            None => false,
                        };
                        let coef = radial * w * cos;
                        if coef == 0.0 {
                            continue;
                        }
                        let d = dot(z, om) * inv_h;
                        let t1 = [d * om[0], d * om[1], d * om[2]];
                        let s1 = [split(t1[0]), split(t1[1]), split(t1[2])];
                        let s2 = [
                            split(zl[0] - t1[0]),
                            split(zl[1] - t1[1]),
                            split(zl[2] - t1[2]),
                        ];
                        let (lo1, hi1) = shift_range(s1[0].0, s1[0].1, ni);
                        let (lo2, hi2) = shift_range(s2[0].0, s2[0].1, ni);
                        if ii < lo1 || ii > hi1 || ii < lo2 || ii > hi2 {
                            continue;
                        }
                        let mut lo = [0isize; 2];
                        let mut hi = [0isize; 2];
                        let zb = [b, c];
                        for ax in 0..2 {
                            let (l1, h1) = shift_range(s1[ax + 1].0, s1[ax + 1].1, ni);
                            let (l2, h2) = shift_range(s2[ax + 1].0, s2[ax + 1].1, ni);
                            lo[ax] = 0.max(-zb[ax]).max(l1).max(l2);
                            hi[ax] = (ni - 1).min(ni - 1 - zb[ax]).min(h1).min(h2);
                        }
                        if lo[0] > hi[0] || lo[1] > hi[1] {
                            continue;
                        }
                        let k0 = lo[1];
                        let j0 = lo[0];
                        let base = |s: &[(isize, f64); 3]| {
                            ((ii + s[0].0) as usize * p + (j0 + s[1].0) as usize) * p + (k0 + s[2].0) as usize
                        };
                        visit(&Pair {
                            coef,
                            paired,
                            rows: (hi[0] - lo[0] + 1) as usize,
                            len: (hi[1] - lo[1] + 1) as usize,
                            out: j0 as usize * n + k0 as usize,
                            u: grid.index((ii + a) as usize, (j0 + b) as usize, (k0 + c) as usize),
                            base1: base(&s1),
                            base2: base(&s2),
                            w1: stencil(s1),
                            w2: stencil(s2),
                        });
                    }
                }
            }
        }
    }

    /// `Σ_u Σ_ω q_u μ(u) B · R(v′, u′)` for every output node, before the
    /// `√μ(v)` prefactor.
    fn gain_sum(&self, inputs: GainInputs<'_>) -> Vec<f64> {
        let grid = &*self.grid;
        let n = grid.n();
        let p = n + 1;
        let offs = stencil_offsets(p);
        let s = Padded::new(grid, self.sqrt_mu.values());
        let wmu = &self.wmu;
        let symmetric = !matches!(inputs, GainInputs::Bilinear { .. });

        let mut out = vec![0.0; grid.len()];
        self.exec.for_each_chunk(&mut out, n * n, |i, slab| {
            self.for_each_pair(i, |pr| {
                // a symmetric integrand takes the same value at both nodes
                let coef = if pr.paired && symmetric { 2.0 * pr.coef } else { pr.coef };
                let (w1, w2, len) = (&pr.w1, &pr.w2, pr.len);
                for r in 0..pr.rows {
                    let base1 = pr.base1 + r * p;
                    let base2 = pr.base2 + r * p;
                    let ubase = pr.u + r * n;
                    let obase = pr.out + r * n;
                    let o = &mut slab[obase..obase + len];
                    let wm = &wmu[ubase..ubase + len];
                    let mut m0 = 0;
                    while m0 < len {
                        let (b1, b2) = (base1 + m0, base2 + m0);
                        let sa = s.interp(b1, &offs, w1);
                        let sb = s.interp(b2, &offs, w2);
                        let mut val = [0.0; LANES];
                        match inputs {
                            GainInputs::Bilinear { g, h } => {
                                let ga = g.interp(b1, &offs, w1);
                                let hb = h.interp(b2, &offs, w2);
                                if pr.paired {
                                    let ha = h.interp(b1, &offs, w1);
                                    let gb = g.interp(b2, &offs, w2);
                                    for l in 0..LANES {
                                        val[l] = (ga[l] * hb[l] + ha[l] * gb[l]) / (sa[l] * sb[l]);
                                    }
                                } else {
                                    for l in 0..LANES {
                                        val[l] = ga[l] * hb[l] / (sa[l] * sb[l]);
                                    }
                                }
                            }
                            GainInputs::Square { g } => {
                                let ga = g.interp(b1, &offs, w1);
                                let gb = g.interp(b2, &offs, w2);
                                for l in 0..LANES {
                                    val[l] = ga[l] * gb[l] / (sa[l] * sb[l]);
                                }
                            }
                            GainInputs::Linear { f } => {
                                let fa = f.interp(b1, &offs, w1);
                                let fb = f.interp(b2, &offs, w2);
                                for l in 0..LANES {
                                    val[l] = fa[l] / sa[l] + fb[l] / sb[l];
                                }
                            }
                            GainInputs::Source { f } => {
                                let fa = f.interp(b1, &offs, w1);
                                let fb = f.interp(b2, &offs, w2);
                                for l in 0..LANES {
                                    let (x, y) = (fa[l] / sa[l], fb[l] / sb[l]);
                                    val[l] = x + y + x * y;
                                }
                            }
                        }
                        let take = (len - m0).min(LANES);
                        for l in 0..take {
                            if sa[l] > 0.0 && sb[l] > 0.0 {
                                o[m0 + l] += coef * wm[m0 + l] * val[l];
                            }
                        }
                        m0 += LANES;
                    }
                }
            });
        });
        out
    }

    /// Dense matrix of `K` acting on nodal values, row-major; entry `(i, j)`
    /// is the coefficient of `f(v_j)` in `(K f)(v_i)`.
    pub fn k_matrix(&self) -> Vec<f64> {
        let grid = &*self.grid;
        let n = grid.n();
        let m = grid.len();
        let p = n + 1;
        let offs = stencil_offsets(p);
        let s = self.sqrt_mu.values();
        let sp = Padded::new(grid, s);
        // padded index -> node index
        let unpad = |q: usize| {
            let (i, r) = (q / (p * p), q % (p * p));
            grid.index(i, r / p, r % p)
        };
        let wmu = &self.wmu;
        let n_side = 2 * n - 1;
        let mut mat = vec![0.0; m * m];
        self.exec.for_each_chunk(&mut mat, n * n * m, |i, rows| {
            self.for_each_pair(i, |pr| {
                let coef = if pr.paired { 2.0 * pr.coef } else { pr.coef };
                for r in 0..pr.rows {
                    for l in 0..pr.len {
                        let b1 = pr.base1 + r * p + l;
                        let b2 = pr.base2 + r * p + l;
                        let sa = sp.interp(b1, &offs, &pr.w1)[0];
                        let sb = sp.interp(b2, &offs, &pr.w2)[0];
                        if !(sa > 0.0 && sb > 0.0) {
                            continue;
                        }
                        let out = pr.out + r * n + l;
                        let c = coef * wmu[pr.u + r * n + l] * s[i * n * n + out];
                        let row = &mut rows[out * m..(out + 1) * m];
                        for t in 0..8 {
                            if pr.w1[t] != 0.0 {
                                row[unpad(b1 + offs[t])] += c * pr.w1[t] / sa;
                            }
                            if pr.w2[t] != 0.0 {
                                row[unpad(b2 + offs[t])] += c * pr.w2[t] / sb;
                            }
                        }
                    }
                }
            });
            // loss part: −√μ(v) L(f)(v)
            for j in 0..n {
                for k in 0..n {
                    let out = j * n + k;
                    let sv = s[i * n * n + out];
                    let row = &mut rows[out * m..(out + 1) * m];
                    for (col, x) in row.iter_mut().enumerate() {
                        let (ui, uj, uk) = grid.coords(col);
                        let t = ((ui + n - 1 - i) * n_side + uj + n - 1 - j) * n_side + uk + n - 1 - k;
                        *x -= sv * self.loss_table[t] * self.ws[col];
                    }
                }
            }
        });
        mat
    }

    /// `Γ_gain(g, h)`.
    pub fn gamma_gain(&self, g: &GridFunction, h: &GridFunction) -> Result<GridFunction> {
        self.check(g)?;
        self.check(h)?;
        Ok(self.gain_raw(g.values(), h.values()))
    }

    pub(crate) fn gain_raw(&self, g: &[f64], h: &[f64]) -> GridFunction {
        let pg = Padded::new(&self.grid, g);
        let mut out = if g == h {
            self.gain_sum(GainInputs::Square { g: &pg })
        } else {
            let ph = Padded::new(&self.grid, h);
            self.gain_sum(GainInputs::Bilinear { g: &pg, h: &ph })
        };
        for (o, s) in out.iter_mut().zip(self.sqrt_mu.values()) {
            *o *= s;
        }
        GridFunction::new(Arc::clone(&self.grid), out).expect("grid-sized output")
    }

    /// `Γ_gain(f, √μ) + Γ_gain(√μ, f)` in one pass.
    pub fn linear_gain(&self, f: &GridFunction) -> Result<GridFunction> {
        self.check(f)?;
        Ok(self.linear_gain_raw(f.values()))
    }

    pub(crate) fn linear_gain_raw(&self, f: &[f64]) -> GridFunction {
        let pf = Padded::new(&self.grid, f);
        let mut out = self.gain_sum(GainInputs::Linear { f: &pf });
        for (o, s) in out.iter_mut().zip(self.sqrt_mu.values()) {
            *o *= s;
        }
        GridFunction::new(Arc::clone(&self.grid), out).expect("grid-sized output")
    }

    /// `K f + Γ_gain(f, f)`, the source of the mild form, with one gain sweep.
    pub fn source(&self, f: &GridFunction) -> Result<GridFunction> {
        self.check(f)?;
        Ok(self.source_raw(f.values()))
    }

    pub(crate) fn source_raw(&self, f: &[f64]) -> GridFunction {
        let pf = Padded::new(&self.grid, f);
        let mut out = self.gain_sum(GainInputs::Source { f: &pf });
        let l = self.loss_frequency(f);
        for ((o, s), l) in out.iter_mut().zip(self.sqrt_mu.values()).zip(&l) {
            *o = s * *o - s * l;
        }
        GridFunction::new(Arc::clone(&self.grid), out).expect("grid-sized output")
    }

    /// `Γ_loss(g, h) = g(v) ∫∫ B √μ(u) h(u)`.
    pub fn gamma_loss(&self, g: &GridFunction, h: &GridFunction) -> Result<GridFunction> {
        self.check(g)?;
        self.check(h)?;
        let l = self.loss_frequency(h.values());
        let out = g.values().iter().zip(&l).map(|(g, l)| g * l).collect();
        GridFunction::new(Arc::clone(&self.grid), out)
    }

    /// Linearized integral operator `K f = Γ_gain(f,√μ) + Γ_gain(√μ,f) − Γ_loss(√μ,f)`.
    pub fn apply_k(&self, f: &GridFunction) -> Result<GridFunction> {
        self.check(f)?;
        Ok(self.apply_k_raw(f.values()))
    }

    pub(crate) fn apply_k_raw(&self, f: &[f64]) -> GridFunction {
        let mut out = self.linear_gain_raw(f);
        let l = self.loss_frequency(f);
        for ((o, s), l) in out.values_mut().iter_mut().zip(self.sqrt_mu.values()).zip(&l) {
            *o -= s * l;
        }
        out
    }

    /// Full operator `Q(F, G) = √μ Γ(F/√μ, G/√μ)`.
    pub fn q_full(&self, f: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
        self.check(f)?;
        self.check(g)?;
        let s = self.sqrt_mu.values();
        let fs: Vec<f64> = f.values().iter().zip(s).map(|(a, b)| a / b).collect();
        let gs: Vec<f64> = g.values().iter().zip(s).map(|(a, b)| a / b).collect();
        let gain = self.gain_raw(&fs, &gs);
        let l = self.loss_frequency(&gs);
        let out = gain
            .values()
            .iter()
            .zip(s)
            .zip(f.values().iter().zip(&l))
            .map(|((gn, s), (fv, l))| s * gn - fv * l)
            .collect();
        GridFunction::new(Arc::clone(&self.grid), out)
    }

    /// Gain and loss parts of `Q(F, G)` separately.
    pub fn q_parts(&self, f: &GridFunction, g: &GridFunction) -> Result<(GridFunction, GridFunction)> {
        self.check(f)?;
        self.check(g)?;
        let s = self.sqrt_mu.values();
        let fs: Vec<f64> = f.values().iter().zip(s).map(|(a, b)| a / b).collect();
        let gs: Vec<f64> = g.values().iter().zip(s).map(|(a, b)| a / b).collect();
        let gain = self.gain_raw(&fs, &gs);
        let gain_vals = gain.values().iter().zip(s).map(|(x, s)| x * s).collect();
        let l = self.loss_frequency(&gs);
        let loss = f.values().iter().zip(&l).map(|(a, b)| a * b).collect();
        Ok((
            GridFunction::new(Arc::clone(&self.grid), gain_vals)?,
            GridFunction::new(Arc::clone(&self.grid), loss)?,
        ))
    }
}

#[inline]
fn stencil(s: [(isize, f64); 3]) -> [f64; 8] {
    let (fx, fy, fz) = (s[0].1, s[1].1, s[2].1);
    let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
    [
        gx * gy * gz,
        gx * gy * fz,
        gx * fy * gz,
        gx * fy * fz,
        fx * gy * gz,
        fx * gy * fz,
        fx * fy * gz,
        fx * fy * fz,
    ]
}

fn operator(grid: &Arc<VelocityGrid>, params: &CollisionParams, sphere: &SphereQuadrature) -> Result<CollisionOperator> {
    CollisionOperator::new(Arc::clone(grid), *params, sphere.clone())
}

pub fn q_full(f: &GridFunction, g: &GridFunction, params: &CollisionParams, sphere: &SphereQuadrature) -> Result<GridFunction> {
    f.check_same_grid(g)?;
    operator(f.grid(), params, sphere)?.q_full(f, g)
}

pub fn gamma_gain(g: &GridFunction, h: &GridFunction, params: &CollisionParams, sphere: &SphereQuadrature) -> Result<GridFunction> {
    g.check_same_grid(h)?;
    operator(g.grid(), params, sphere)?.gamma_gain(g, h)
}

pub fn gamma_loss(g: &GridFunction, h: &GridFunction, params: &CollisionParams, sphere: &SphereQuadrature) -> Result<GridFunction> {
    g.check_same_grid(h)?;
    operator(g.grid(), params, sphere)?.gamma_loss(g, h)
}

pub fn compute_nu(grid: &Arc<VelocityGrid>, params: &CollisionParams, sphere: &SphereQuadrature) -> Result<GridFunction> {
    Ok(operator(grid, params, sphere)?.nu().clone())
}

/// `ν` at a single node, in `O(N³)`; for grids too large for the full field.
pub fn nu_at(grid: &VelocityGrid, params: &CollisionParams, sphere: &SphereQuadrature, idx: usize) -> Result<f64> {
    params.validate()?;
    let v = grid.nodes()[idx];
    let mut acc = 0.0;
    for (u, q) in grid.nodes().iter().zip(grid.weights()) {
        let z = [u[0] - v[0], u[1] - v[1], u[2] - v[2]];
        let radial = norm_sq(z).sqrt().powf(params.gamma) * params.c_b;
        if radial != 0.0 {
            acc += q * radial * sphere.cos_sum(z) * crate::maxwellian(*u);
        }
    }
    Ok(acc)
}

/// `∫ Q ψ dv` for `ψ ∈ {1, v₁, v₂, v₃, |v|²}`.
pub fn collision_moments(q: &GridFunction) -> [f64; 5] {
    let grid = q.grid();
    let mut m = [0.0; 5];
    for ((v, w), x) in grid.nodes().iter().zip(grid.weights()).zip(q.values()) {
        let d = w * x;
        m[0] += d;
        m[1] += d * v[0];
        m[2] += d * v[1];
        m[3] += d * v[2];
        m[4] += d * norm_sq(*v);
    }
    m
}

/// `max_ψ |∫ Q(F,F) ψ| / ‖F‖₁²`, the relative collision-invariant defect.
pub fn conservation_defect(q: &GridFunction, f: &GridFunction) -> f64 {
    let l1: f64 = f.values().iter().zip(f.grid().weights()).map(|(x, w)| w * x.abs()).sum();
    let worst = collision_moments(q).iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if l1 > 0.0 {
        worst / (l1 * l1)
    } else {
        0.0
    }
}


#[derive(Debug, Clone, Serialize)]
pub struct ConservationCheck {
    /// Largest reference defect, the tolerance for this grid and rule.
    pub eps_cons: f64,
    pub reference: Vec<f64>,
    pub fast: Vec<f64>,
    pub pass: bool,
}

/// Calibrates `ε_cons` with the reference evaluator (gain and loss summed
/// separately, then differenced) and checks the fast operator against it.
pub fn check_conservation(op: &CollisionOperator, samples: &[GridFunction]) -> Result<ConservationCheck> {
    let mut reference = Vec::with_capacity(samples.len());
    let mut fast = Vec::with_capacity(samples.len());
    for f in samples {
        let (g, l) = reference::q_parts(f, f, op.params(), op.sphere())?;
        let d: Vec<f64> = g.values().iter().zip(l.values()).map(|(a, b)| a - b).collect();
        reference.push(conservation_defect(&GridFunction::new(Arc::clone(f.grid()), d)?, f));
        fast.push(conservation_defect(&op.q_full(f, f)?, f));
    }
    let eps_cons = reference.iter().cloned().fold(0.0, f64::max);
    let pass = fast.iter().all(|&d| d <= eps_cons * (1.0 + 1e-9) + 1e-14);
    Ok(ConservationCheck {
        eps_cons,
        reference,
        fast,
        pass,
    })
}


/// Direct node-by-node evaluation: for each `v`, loop over every `u`, every
/// sphere node, and interpolate `g`, `h` and `√μ` at `v′`, `u′` point by
/// point. Cost is `O(N⁶·n_ω)` with a large constant; meant for `N ≤ 11`.
pub mod reference {
    use super::*;
    use crate::grid::interpolate;

    struct Ctx<'a> {
        grid: &'a VelocityGrid,
        s: GridFunction,
        params: &'a CollisionParams,
        sphere: &'a SphereQuadrature,
    }

    fn ctx<'a>(grid: &'a Arc<VelocityGrid>, params: &'a CollisionParams, sphere: &'a SphereQuadrature) -> Ctx<'a> {
        Ctx {
            grid,
            s: grid.sample(|v| (-0.5 * norm_sq(v)).exp()),
            params,
            sphere,
        }
    }

    /// `∫∫ B(v,u,ω) dω` with the diagonal convention.
    fn angular(c: &Ctx<'_>, v: [f64; 3], u: [f64; 3]) -> f64 {
        if v == u {
            if c.params.gamma == 0.0 {
                return c.params.c_b * c.sphere.cos_sum([0.0; 3]);
            }
            return 0.0;
        }
        let z = [u[0] - v[0], u[1] - v[1], u[2] - v[2]];
        c.sphere
            .directions(z)
            .map(|(om, _, w)| w * kinetic_kernel(v, u, om, c.params))
            .sum()
    }

    fn gain_one(c: &Ctx<'_>, g: &GridFunction, h: &GridFunction, v: [f64; 3]) -> f64 {
        let mut acc = 0.0;
        for (u, q) in c.grid.nodes().iter().zip(c.grid.weights()) {
            let mu_u = crate::maxwellian(*u);
            if *u == v {
                if c.params.gamma == 0.0 {
                    let sv = interpolate(&c.s, v);
                    acc += q * mu_u * angular(c, v, *u) * interpolate(g, v) * interpolate(h, v) / (sv * sv);
                }
                continue;
            }
            let z = [u[0] - v[0], u[1] - v[1], u[2] - v[2]];
            for (om, _, w) in c.sphere.directions(z) {
                let b = kinetic_kernel(v, *u, om, c.params);
                if b == 0.0 {
                    continue;
                }
                let (vp, up) = post_collision(v, *u, om).expect("unit sphere node");
                let den = interpolate(&c.s, vp) * interpolate(&c.s, up);
                if den > 0.0 {
                    acc += q * mu_u * w * b * interpolate(g, vp) * interpolate(h, up) / den;
                }
            }
        }
        acc * (-0.5 * norm_sq(v)).exp()
    }

    fn loss_one(c: &Ctx<'_>, h: &GridFunction, v: [f64; 3]) -> f64 {
        let mut acc = 0.0;
        for ((u, q), hu) in c.grid.nodes().iter().zip(c.grid.weights()).zip(h.values()) {
            acc += q * angular(c, v, *u) * (-0.5 * norm_sq(*u)).exp() * hu;
        }
        acc
    }

    pub fn gamma_gain(g: &GridFunction, h: &GridFunction, params: &CollisionParams, sphere: &SphereQuadrature) -> Result<GridFunction> {
        g.check_same_grid(h)?;
        let c = ctx(g.grid(), params, sphere);
        let out = c.grid.nodes().iter().map(|&v| gain_one(&c, g, h, v)).collect();
        GridFunction::new(Arc::clone(g.grid()), out)
    }

    pub fn gamma_loss(g: &GridFunction, h: &GridFunction, params: &CollisionParams, sphere: &SphereQuadrature) -> Result<GridFunction> {
        g.check_same_grid(h)?;
        let c = ctx(g.grid(), params, sphere);
        let out = c
            .grid
            .nodes()
            .iter()
            .zip(g.values())
            .map(|(&v, gv)| gv * loss_one(&c, h, v))
            .collect();
        GridFunction::new(Arc::clone(g.grid()), out)
    }

    pub fn apply_k(f: &GridFunction, params: &CollisionParams, sphere: &SphereQuadrature) -> Result<GridFunction> {
        let c = ctx(f.grid(), params, sphere);
        let s = &c.s;
        let out = c
            .grid
            .nodes()
            .iter()
            .zip(s.values())
            .map(|(&v, sv)| gain_one(&c, f, s, v) + gain_one(&c, s, f, v) - sv * loss_one(&c, f, v))
            .collect();
        GridFunction::new(Arc::clone(f.grid()), out)
    }

    /// `Q(F,G)` split as `(gain, loss)` from the same interpolation rule.
    pub fn q_parts(f: &GridFunction, g: &GridFunction, params: &CollisionParams, sphere: &SphereQuadrature) -> Result<(GridFunction, GridFunction)> {
        f.check_same_grid(g)?;
        let c = ctx(f.grid(), params, sphere);
        let fs = f.map(|v, x| x * (0.5 * norm_sq(v)).exp());
        let gs = g.map(|v, x| x * (0.5 * norm_sq(v)).exp());
        let mut gain = Vec::with_capacity(c.grid.len());
        let mut loss = Vec::with_capacity(c.grid.len());
        for (&v, fv) in c.grid.nodes().iter().zip(f.values()) {
            gain.push((-0.5 * norm_sq(v)).exp() * gain_one(&c, &fs, &gs, v));
            loss.push(fv * loss_one(&c, &gs, v));
        }
        Ok((
            GridFunction::new(Arc::clone(f.grid()), gain)?,
            GridFunction::new(Arc::clone(f.grid()), loss)?,
        ))
    }
}
