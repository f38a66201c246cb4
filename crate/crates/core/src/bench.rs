//! Wall-clock timing of the gain quadrature.

use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::collision::{CollisionOperator, CollisionParams};
use crate::exec::{self, Exec};
use crate::grid::{GridFunction, SphereQuadrature, VelocityGrid};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainCase {
    pub extent: f64,
    pub n: usize,
    pub n_theta: usize,
    pub n_phi: usize,
    pub gamma: f64,
    pub threads: usize,
    pub exec: Exec,
}

impl GainCase {
    /// `N⁶·n_θ·n_φ`, the nominal quadrature work.
    pub fn work(&self) -> f64 {
        (self.n as f64).powi(6) * (self.n_theta * self.n_phi) as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GainTiming {
    pub case: GainCase,
    pub repeats: usize,
    /// Best wall time of one evaluation, seconds.
    pub seconds: f64,
    /// Output nodes per second.
    pub node_rate: f64,
    #[serde(skip)]
    pub output: GridFunction,
}

/// Smooth positive input `√μ·(1 + ½ sin v₁ cos v₂)`.
pub fn bench_input(grid: &Arc<VelocityGrid>) -> GridFunction {
    grid.sample(|v| (-0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp() * (1.0 + 0.5 * v[0].sin() * v[1].cos()))
}

/// Times `repeats` evaluations of `Γ_gain(g,g)` and keeps the fastest.
pub fn time_gain(case: GainCase, repeats: usize) -> Result<GainTiming> {
    let grid = Arc::new(VelocityGrid::new(case.extent, case.n)?);
    let mut op = CollisionOperator::new(
        Arc::clone(&grid),
        CollisionParams::new(case.gamma, 1.0)?,
        SphereQuadrature::aligned(case.n_theta, case.n_phi)?,
    )?;
    op.set_exec(case.exec);
    let g = bench_input(&grid);
    exec::with_threads(case.threads, || {
        let mut best = f64::INFINITY;
        let mut output = None;
        for _ in 0..repeats.max(1) {
            let start = Instant::now();
            let out = op.gamma_gain(&g, &g)?;
            best = best.min(start.elapsed().as_secs_f64());
            output = Some(out);
        }
        Ok(GainTiming {
            case,
            repeats: repeats.max(1),
            seconds: best,
            node_rate: grid.len() as f64 / best,
            output: output.expect("at least one repeat"),
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingCheck {
    pub predicted: f64,
    pub measured: f64,
    /// Allowed multiplicative deviation from `predicted`.
    pub factor: f64,
    pub pass: bool,
}

impl ScalingCheck {
    pub fn new(predicted: f64, measured: f64, factor: f64) -> Self {
        let pass = measured.is_finite() && measured <= predicted * factor && measured >= predicted / factor;
        Self {
            predicted,
            measured,
            factor,
            pass,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_is_positive_and_output_independent_of_exec() {
        let case = |exec, threads| GainCase {
            extent: 4.0,
            n: 7,
            n_theta: 2,
            n_phi: 4,
            gamma: 1.0,
            threads,
            exec,
        };
        let a = time_gain(case(Exec::Sequential, 1), 1).unwrap();
        let b = time_gain(case(Exec::Parallel, 3), 2).unwrap();
        assert!(a.seconds > 0.0 && a.node_rate > 0.0);
        assert_eq!(a.output.values(), b.output.values());
        assert_eq!(case(Exec::Parallel, 1).work(), 7f64.powi(6) * 8.0);
    }

    #[test]
    fn scaling_window() {
        assert!(ScalingCheck::new(10.0, 15.0, 2.0).pass);
        assert!(ScalingCheck::new(10.0, 5.0, 2.0).pass);
        assert!(!ScalingCheck::new(10.0, 4.0, 2.0).pass);
        assert!(!ScalingCheck::new(10.0, f64::NAN, 2.0).pass);
    }
}
