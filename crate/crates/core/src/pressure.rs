//! Pressure recovery per mode.
//!
//! Π = p + ½(u² + v²) satisfies Π̂'' − k²Π̂ = −ikQ̂₁ − ∂ₜQ̂₀ with Π̂'(1) = −ikω̂(1) − Q̂₀(1)
//! and Π̂ → 0 as t → ∞. The Q̂₀' term is integrated by parts against the Neumann Green's
//! function, which removes every 1/|k| factor. Gauge: p → 0 as y → ∞ (the grid has no k = 0
//! node, so the constant mode is never solved for).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::expint::Panels;
use crate::solver::{fd_t, Solver, SolverState};
use crate::spectral::{ModeField, C64, I};

/// Convolution-type sweeps with e^{−a|t−s|} and e^{−a(t+s−2)} on one t-grid.
struct Sweeps<'a> {
    panels: &'a Panels,
    a: C64,
}

impl Sweeps<'_> {
    /// (∫₁ᵗ e^{−a(t−s)} f ds, ∫ₜ^∞ e^{−a(s−t)} f ds)
    fn split(&self, f: &[C64]) -> (Vec<C64>, Vec<C64>) {
        (self.panels.forward(-self.a, self.a, 0, f), self.panels.backward(self.a, -self.a, 0, f))
    }

    /// ∫₁^∞ e^{−a(t+s−2)} f ds
    fn image(&self, f: &[C64]) -> Vec<C64> {
        let c = self.panels.backward(C64::new(0.0, 0.0), -self.a, 0, f)[0];
        self.panels.t.iter().map(|&t| c * (-self.a * (t - 1.0)).exp()).collect()
    }
}

/// Solves p'' − a²p = rhs on [1, ∞) with p'(1) = g and p → 0, by variation of constants with
/// the e^{∓a t} pair. The right-hand side is taken as zero beyond the last node.
pub fn neumann_solve(panels: &Panels, a: f64, rhs: &[C64], g: C64) -> Vec<C64> {
    let s = Sweeps { panels, a: C64::new(a, 0.0) };
    let (lo, hi) = s.split(rhs);
    let im = s.image(rhs);
    panels
        .t
        .iter()
        .enumerate()
        .map(|(i, &t)| -(lo[i] + hi[i] + im[i]) / (2.0 * a) - g / a * (-a * (t - 1.0)).exp())
        .collect()
}

fn bernoulli_column(panels: &Panels, k: f64, omega1: C64, q0: &[C64], q1: &[C64]) -> Vec<C64> {
    let a = k.abs();
    let sg = k.signum();
    let s = Sweeps { panels, a: C64::new(a, 0.0) };
    let (l1, h1) = s.split(q1);
    let i1 = s.image(q1);
    let (l0, h0) = s.split(q0);
    let i0 = s.image(q0);
    panels
        .t
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            0.5 * I * sg * (l1[i] + h1[i] + i1[i]) - 0.5 * (l0[i] - h0[i] - i0[i])
                + I * sg * omega1 * (-a * (t - 1.0)).exp()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PressureField {
    /// Π̂ = p̂ + ½(û∗û + v̂∗v̂)
    pub bernoulli: ModeField,
    pub p: ModeField,
    pub diagnostics: PressureDiagnostics,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PressureDiagnostics {
    /// sup|Π̂ + φ̂| / sup|φ̂|: the Green's-function route against the companion identity Π = −φ.
    pub companion_mismatch: f64,
    /// sup|∂ₜΠ̂ + ikω̂ − ikv̂ + Q̂₀| over sup|∂ₜΠ̂| (y-momentum, FD in t).
    pub momentum_residual: f64,
}

/// Recovers Π̂ and p̂ from a converged state.
pub fn pressure_solve(solver: &Solver, state: &SolverState) -> Result<PressureField> {
    let g = solver.grid.clone();
    let panels = Panels::new(&g.t_nodes);
    let cols: Vec<Vec<C64>> = (0..g.nk())
        .into_par_iter()
        .map(|ik| {
            bernoulli_column(&panels, g.k_nodes[ik], state.omega.at(ik, 0), state.q0.column(ik), state.q1.column(ik))
        })
        .collect();
    let bernoulli = ModeField::from_columns(&g, 0, cols);
    let uu = solver.conv().convolve(&state.u, &state.u)?;
    let vv = solver.conv().convolve(&state.v, &state.v)?;
    let p = bernoulli.axpy(C64::new(-0.5, 0.0), &uu.axpy(C64::new(1.0, 0.0), &vv));

    let phi_sup = state.phi.sup_abs();
    let mismatch = bernoulli.axpy(C64::new(1.0, 0.0), &state.phi).sup_abs();
    let mut res: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for ik in 0..g.nk() {
        let k = g.k_nodes[ik];
        let col = bernoulli.column(ik);
        for it in 0..g.nt() {
            let d = fd_t(&g.t_nodes, col, it);
            let rhs = -I * k * state.omega.at(ik, it) + I * k * state.v.at(ik, it) - state.q0.at(ik, it);
            res = res.max((d - rhs).norm());
            scale = scale.max(d.norm());
        }
    }
    let ratio = |a: f64, b: f64| if b == 0.0 { a } else { a / b };
    Ok(PressureField {
        bernoulli,
        p,
        diagnostics: PressureDiagnostics {
            companion_mismatch: ratio(mismatch, phi_sup),
            momentum_residual: ratio(res, scale),
        },
    })
}
