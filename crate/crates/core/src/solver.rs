//! Integral operators for ω̂ and ∂ₖω̂, companion fields, the Picard loop and the affine
//! fixed point for d̂ = ∂ₖω̂.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::convolution::ConvPlan;
use crate::error::{Error, Result};
use crate::expint::Panels;
use crate::force::{force_spectrum, ForceFields, ForceSpec};
use crate::kernels::{fused_terms, Rate};
use crate::spectral::{ModeField, SpectralGrid, C64, I};

/// Below this the residual sequence is at round-off and is left out of ratio estimates.
const RESIDUAL_FLOOR: f64 = 1e-13;
/// Consecutive residual increases tolerated before giving up.
const MAX_INCREASES: usize = 3;

/// Where the k-derivative lands in a kernel product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    /// K̆ₙ f̆ₙ,ₘ (used for ω̂ and, applied to ∂ₖQ̂, for d̂₃).
    Plain,
    /// ∂ₖK̆ₙ f̆ₙ,ₘ.
    DkPropagator,
    /// K̆ₙ ∂ₖf̆ₙ,ₘ.
    DkKernel,
}

impl Piece {
    fn code(self) -> u8 {
        match self {
            Piece::Plain => 0,
            Piece::DkPropagator => 1,
            Piece::DkKernel => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative sup-norm change of successive iterates at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Under-relaxation factor in (0, 1]; 1 means plain Picard.
    pub relaxation: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-12, max_iter: 60, relaxation: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct Companions {
    pub eta: ModeField,
    pub phi: ModeField,
    pub psi: ModeField,
    pub u: ModeField,
    pub v: ModeField,
    /// max_k |û(k,1)| / sup|û|; the construction imposes v̂(k,1) = 0 only.
    pub wall_u: f64,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub omega: ModeField,
    pub eta: ModeField,
    pub phi: ModeField,
    pub psi: ModeField,
    pub u: ModeField,
    pub v: ModeField,
    pub q0: ModeField,
    pub q1: ModeField,
    pub residuals: Vec<f64>,
    pub wall_u: f64,
    pub derivative: Option<DerivativeState>,
}

#[derive(Debug, Clone)]
pub struct DerivativeState {
    /// κ·∂ₖω̂ pieces; `d = d1 + d2 + d3`.
    pub d1: ModeField,
    pub d2: ModeField,
    pub d3: ModeField,
    pub d: ModeField,
    pub residuals: Vec<f64>,
    /// Geometric mean of successive-correction ratios.
    pub contraction: Option<f64>,
}

impl SolverState {
    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }

    /// Geometric mean of r_{i+1}/r_i over the iterations after the first, while above
    /// round-off.
    pub fn contraction(&self) -> Option<f64> {
        contraction_estimate(&self.residuals[1.min(self.residuals.len())..])
    }
}

fn contraction_estimate(r: &[f64]) -> Option<f64> {
    let logs: Vec<f64> = r
        .windows(2)
        .take_while(|w| w[1] > RESIDUAL_FLOOR && w[0] > 0.0)
        .map(|w| (w[1] / w[0]).ln())
        .collect();
    if logs.is_empty() {
        None
    } else {
        Some((logs.iter().sum::<f64>() / logs.len() as f64).exp())
    }
}

fn relative_change(new: &ModeField, old: &ModeField) -> f64 {
    let s = new.sup_abs();
    if s == 0.0 {
        if old.sup_abs() == 0.0 { 0.0 } else { 1.0 }
    } else {
        new.sup_diff(old) / s
    }
}

fn increasing_run(r: &[f64]) -> bool {
    r.len() > MAX_INCREASES && r[r.len() - MAX_INCREASES - 1..].windows(2).all(|w| w[1] > w[0])
}

/// Operators bound to one grid.
pub struct Solver {
    pub grid: Arc<SpectralGrid>,
    panels: Panels,
    conv: ConvPlan,
    kappas: Vec<C64>,
}

type GroupKey = (bool, Rate, Rate, u8, u8);

impl Solver {
    pub fn new(grid: &Arc<SpectralGrid>) -> Self {
        Solver {
            grid: grid.clone(),
            panels: Panels::new(&grid.t_nodes),
            conv: ConvPlan::new(grid),
            kappas: grid.kappas(),
        }
    }

    pub fn conv(&self) -> &ConvPlan {
        &self.conv
    }

    /// Σₙ,ₘ (piece of K̆ₙ f̆ₙ,ₘ) applied to the sources (q₀, q₁) for one k-column.
    fn kernel_column(&self, piece: Piece, ik: usize, q0: &[C64], q1: &[C64]) -> Vec<C64> {
        let k = self.grid.k_nodes[ik];
        let kk = self.kappas[ik];
        let nt = self.grid.nt();
        let mut groups: BTreeMap<GroupKey, Vec<C64>> = BTreeMap::new();
        for n in 1..=3u8 {
            for m in 0..=1u8 {
                let q = if m == 0 { q0 } else { q1 };
                for term in fused_terms(piece.code(), n, m, k, kk) {
                    let key = (n == 1, term.a.unwrap(), term.b.unwrap(), term.tau_pow, term.sigma_pow);
                    let src = groups.entry(key).or_insert_with(|| vec![C64::new(0.0, 0.0); nt]);
                    for (s, v) in src.iter_mut().zip(q) {
                        *s += term.coef * v;
                    }
                }
            }
        }
        let mut out = vec![C64::new(0.0, 0.0); nt];
        for ((forward, a, b, tau_pow, sigma_pow), src) in groups {
            if src.iter().all(|v| *v == C64::new(0.0, 0.0)) {
                continue;
            }
            let (av, bv) = (a.value(k, kk), b.value(k, kk));
            let vals = if forward {
                self.panels.forward(av, bv, sigma_pow, &src)
            } else {
                self.panels.backward(av, bv, sigma_pow, &src)
            };
            for ((o, v), &t) in out.iter_mut().zip(&vals).zip(&self.grid.t_nodes) {
                *o += v * (t - 1.0).powi(tau_pow as i32);
            }
        }
        out
    }

    /// Applies one kernel piece on every k-column; the result is stored with `order`
    /// (order 1 multiplies by κ).
    pub fn kernel_apply(&self, piece: Piece, q0: &ModeField, q1: &ModeField, order: u8) -> Result<ModeField> {
        q0.same_grid(q1)?;
        for q in [q0, q1] {
            if q.order != 0 {
                return Err(Error::OrderMismatch { field: q.order, expected: 0 });
            }
        }
        let cols: Vec<Vec<C64>> = (0..self.grid.nk())
            .into_par_iter()
            .map(|ik| {
                let mut c = self.kernel_column(piece, ik, q0.column(ik), q1.column(ik));
                if order == 1 {
                    for v in c.iter_mut() {
                        *v *= self.kappas[ik];
                    }
                }
                c
            })
            .collect();
        Ok(ModeField::from_columns(&self.grid, order, cols))
    }

    /// ω̂ = Σₙ,ₘ K̆ₙ ∫_{Iₙ} f̆ₙ,ₘ Q̂ₘ.
    pub fn omega_apply(&self, q0: &ModeField, q1: &ModeField) -> Result<ModeField> {
        self.kernel_apply(Piece::Plain, q0, q1, 0)
    }

    fn companion_column(&self, ik: usize, omega: &[C64], q0: &[C64], q1: &[C64]) -> [Vec<C64>; 3] {
        let k = self.grid.k_nodes[ik];
        let kk = self.kappas[ik];
        let a = k.abs();
        let sg = k.signum();
        let rho = C64::new(1.0, k) / kk;
        let nt = self.grid.nt();

        // growing-mode projection ω + η/ρ must vanish at infinity
        let src: Vec<C64> = (0..nt).map(|i| q1[i] + q0[i] / rho).collect();
        let wp = self.panels.backward(kk, -kk, 0, &src);
        let eta: Vec<C64> = (0..nt).map(|i| rho * (-wp[i] - omega[i])).collect();

        let src_m: Vec<C64> = (0..nt).map(|i| q0[i] + I * sg * q1[i]).collect();
        let chi_m: Vec<C64> =
            self.panels.backward(C64::new(a, 0.0), C64::new(-a, 0.0), 0, &src_m).iter().map(|v| -v).collect();
        let src_p: Vec<C64> = (0..nt).map(|i| q0[i] - I * sg * q1[i]).collect();
        let part = self.panels.forward(C64::new(-a, 0.0), C64::new(a, 0.0), 0, &src_p);
        // v̂(k,1) = ω̂ + ψ̂ = 0 fixes the homogeneous constant
        let c = chi_m[0] - 2.0 * I * sg * omega[0];
        let chi_p: Vec<C64> = (0..nt).map(|i| c * (-a * (self.grid.t_nodes[i] - 1.0)).exp() + part[i]).collect();
        let phi = (0..nt).map(|i| 0.5 * (chi_p[i] + chi_m[i])).collect();
        let psi = (0..nt).map(|i| (chi_p[i] - chi_m[i]) / (2.0 * I * sg)).collect();
        [eta, phi, psi]
    }

    /// η̂, φ̂, ψ̂ and û = −η̂ + φ̂, v̂ = ω̂ + ψ̂.
    pub fn companion_fields(&self, omega: &ModeField, q0: &ModeField, q1: &ModeField) -> Result<Companions> {
        omega.same_grid(q0)?;
        omega.same_grid(q1)?;
        let cols: Vec<[Vec<C64>; 3]> = (0..self.grid.nk())
            .into_par_iter()
            .map(|ik| self.companion_column(ik, omega.column(ik), q0.column(ik), q1.column(ik)))
            .collect();
        let mut e = Vec::with_capacity(cols.len());
        let mut f = Vec::with_capacity(cols.len());
        let mut p = Vec::with_capacity(cols.len());
        for [a, b, c] in cols {
            e.push(a);
            f.push(b);
            p.push(c);
        }
        let eta = ModeField::from_columns(&self.grid, 0, e);
        let phi = ModeField::from_columns(&self.grid, 0, f);
        let psi = ModeField::from_columns(&self.grid, 0, p);
        let u = phi.axpy(C64::new(-1.0, 0.0), &eta);
        let v = omega.axpy(C64::new(1.0, 0.0), &psi);
        let su = u.sup_abs();
        let wall = (0..self.grid.nk()).fold(0.0f64, |m, ik| m.max(u.at(ik, 0).norm()));
        let wall_u = if su == 0.0 { 0.0 } else { wall / su };
        Ok(Companions { eta, phi, psi, u, v, wall_u })
    }

    /// Q̂₀ = û∗ω̂ + F̂₂, Q̂₁ = v̂∗ω̂ − F̂₁.
    pub fn q_assembly(&self, u: &ModeField, v: &ModeField, omega: &ModeField, force: &ForceFields) -> Result<(ModeField, ModeField)> {
        let uw = self.conv.convolve(u, omega)?;
        let vw = self.conv.convolve(v, omega)?;
        Ok((uw.axpy(C64::new(1.0, 0.0), &force.f2), vw.axpy(C64::new(-1.0, 0.0), &force.f1)))
    }

    fn linear_sources(force: &ForceFields) -> (ModeField, ModeField) {
        (force.f2.clone(), force.f1.scaled(C64::new(-1.0, 0.0)))
    }

    fn state_from(&self, omega: ModeField, q0: ModeField, q1: ModeField, residuals: Vec<f64>) -> Result<SolverState> {
        let c = self.companion_fields(&omega, &q0, &q1)?;
        Ok(SolverState {
            omega,
            eta: c.eta,
            phi: c.phi,
            psi: c.psi,
            u: c.u,
            v: c.v,
            q0,
            q1,
            residuals,
            wall_u: c.wall_u,
            derivative: None,
        })
    }

    /// The first Picard iterate: sources (F̂₂, −F̂₁) only.
    pub fn linear_solve(&self, force: &ForceFields) -> Result<SolverState> {
        let (q0, q1) = Self::linear_sources(force);
        let omega = self.omega_apply(&q0, &q1)?;
        let r = if omega.sup_abs() == 0.0 { 0.0 } else { 1.0 };
        self.state_from(omega, q0, q1, vec![r])
    }

    /// Picard iteration Q̂ → ω̂ → (η̂, φ̂, ψ̂) → (û, v̂) → Q̂ until the relative change of ω̂
    /// drops below `opts.tol`. The returned Q̂ is assembled from the returned ω̂, û, v̂.
    pub fn picard_solve(&self, force: &ForceFields, opts: &SolverOptions) -> Result<SolverState> {
        let (mut q0, mut q1) = Self::linear_sources(force);
        let mut omega = ModeField::zeros(&self.grid, 0);
        let mut residuals = Vec::new();
        for _ in 0..opts.max_iter {
            let mut next = self.omega_apply(&q0, &q1)?;
            if opts.relaxation != 1.0 {
                next = omega.scaled(C64::new(1.0 - opts.relaxation, 0.0)).axpy(C64::new(opts.relaxation, 0.0), &next);
            }
            let r = relative_change(&next, &omega);
            residuals.push(r);
            omega = next;
            if !r.is_finite() {
                return Err(Error::ContractionLost { iterations: residuals.len(), residuals });
            }
            let c = self.companion_fields(&omega, &q0, &q1)?;
            let (n0, n1) = self.q_assembly(&c.u, &c.v, &omega, force)?;
            q0 = n0;
            q1 = n1;
            if r < opts.tol {
                let mut state = self.state_from(omega, q0, q1, residuals)?;
                // companions consistent with the final sources
                state.wall_u = state.wall_u.max(c.wall_u);
                return Ok(state);
            }
            if increasing_run(&residuals) {
                return Err(Error::ContractionLost { iterations: residuals.len(), residuals });
            }
        }
        let last = *residuals.last().unwrap_or(&f64::NAN);
        Err(Error::NoConvergence { iterations: residuals.len(), residual: last })
    }

    /// d̂₁ (derivative on the propagator) and d̂₂ (on the kernel), stored as κ·d̂.
    pub fn d12_compute(&self, state: &SolverState) -> Result<(ModeField, ModeField)> {
        Ok((
            self.kernel_apply(Piece::DkPropagator, &state.q0, &state.q1, 1)?,
            self.kernel_apply(Piece::DkKernel, &state.q0, &state.q1, 1)?,
        ))
    }

    /// 𝔏₁[d] = (û∗d, v̂∗d).
    pub fn l1_apply(&self, d: &ModeField, state: &SolverState) -> Result<(ModeField, ModeField)> {
        if d.order != 1 {
            return Err(Error::OrderMismatch { field: d.order, expected: 1 });
        }
        Ok((self.conv.convolve(&state.u, d)?, self.conv.convolve(&state.v, d)?))
    }

    /// 𝔏₂[(P₀, P₁)] = Σ K̆ₙ ∫ f̆ₙ,ₘ Pₘ, stored as κ·(·).
    pub fn l2_apply(&self, p0: &ModeField, p1: &ModeField) -> Result<ModeField> {
        self.kernel_apply(Piece::Plain, p0, p1, 1)
    }

    /// Solves x = 𝔏₂[𝔏₁[d̂₁ + d̂₂ + x] + (∂ₖF̂₂, −∂ₖF̂₁)] by iteration from 0.
    pub fn dk_fixed_point(&self, state: &SolverState, force: &ForceFields, opts: &SolverOptions) -> Result<DerivativeState> {
        let (d1, d2) = self.d12_compute(state)?;
        let d12 = d1.axpy(C64::new(1.0, 0.0), &d2);
        let mut x = ModeField::zeros(&self.grid, 1);
        let mut residuals = Vec::new();
        let mut norms = Vec::new();
        let mut steps = Vec::new();
        for _ in 0..opts.max_iter {
            let (p0, p1) = self.l1_apply(&d12.axpy(C64::new(1.0, 0.0), &x), state)?;
            let p0 = p0.axpy(C64::new(1.0, 0.0), &force.dk_f2);
            let p1 = p1.axpy(C64::new(-1.0, 0.0), &force.dk_f1);
            let next = self.l2_apply(&p0, &p1)?;
            let step = next.sup_diff(&x);
            let r = relative_change(&next, &x);
            residuals.push(r);
            steps.push(step);
            norms.push(next.sup_abs());
            x = next;
            if !r.is_finite() || increasing_run(&residuals) {
                return Err(Error::DerivativeContractionLost { norms });
            }
            if r < opts.tol {
                let d = d12.axpy(C64::new(1.0, 0.0), &x);
                let contraction = contraction_estimate(&steps);
                return Ok(DerivativeState { d1, d2, d3: x, d, residuals, contraction });
            }
        }
        Err(Error::NoConvergence { iterations: residuals.len(), residual: *residuals.last().unwrap_or(&f64::NAN) })
    }

    /// Full solve: Picard for ω̂ and companions, then the d̂ fixed point.
    pub fn solve(&self, force: &ForceFields, opts: &SolverOptions) -> Result<SolverState> {
        let mut state = self.picard_solve(force, opts)?;
        state.derivative = Some(self.dk_fixed_point(&state, force, opts)?);
        Ok(state)
    }
}

/// Three-point derivative in k on the (non-uniform) grid at interior node `ik`.
pub fn fd_k(grid: &SpectralGrid, f: impl Fn(usize) -> C64, ik: usize) -> C64 {
    let (xm, x0, xp) = (grid.k_nodes[ik - 1], grid.k_nodes[ik], grid.k_nodes[ik + 1]);
    let (hm, hp) = (x0 - xm, xp - x0);
    f(ik + 1) * (hm / (hp * (hm + hp))) - f(ik - 1) * (hp / (hm * (hm + hp))) + f(ik) * ((hp - hm) / (hm * hp))
}

/// sup over |k| ∈ [k_lo, k_hi] and all t of |d̂ − FDₖ ω̂|, relative to sup |d̂| there.
pub fn derivative_fd_mismatch(omega: &ModeField, d: &ModeField, k_lo: f64, k_hi: f64) -> f64 {
    let g = &omega.grid;
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for ik in 1..g.nk() - 1 {
        let k = g.k_nodes[ik].abs();
        if k < k_lo || k > k_hi {
            continue;
        }
        for it in 0..g.nt() {
            let fd = fd_k(g, |j| omega.at(j, it), ik);
            let dv = d.raw(ik, it);
            diff = diff.max((dv - fd).norm());
            scale = scale.max(dv.norm());
        }
    }
    if scale == 0.0 { diff } else { diff / scale }
}

/// Second derivative in t at interior node `it` (non-uniform three-point stencil).
pub fn fd_tt(t: &[f64], f: &[C64], it: usize) -> C64 {
    let (hm, hp) = (t[it] - t[it - 1], t[it + 1] - t[it]);
    2.0 * (f[it + 1] * hm - f[it] * (hm + hp) + f[it - 1] * hp) / (hm * hp * (hm + hp))
}

/// Five-point first derivative in t (fourth order on smooth non-uniform grids).
pub fn fd_t(t: &[f64], f: &[C64], it: usize) -> C64 {
    let n = t.len();
    let lo = it.saturating_sub(2).min(n - 5);
    let x0 = t[it];
    let mut acc = C64::new(0.0, 0.0);
    for j in lo..lo + 5 {
        // derivative of the j-th Lagrange basis polynomial at x0
        let mut dsum = 0.0;
        for m in lo..lo + 5 {
            if m == j {
                continue;
            }
            let mut p = 1.0 / (t[j] - t[m]);
            for l in lo..lo + 5 {
                if l != j && l != m {
                    p *= (x0 - t[l]) / (t[j] - t[l]);
                }
            }
            dsum += p;
        }
        acc += f[j] * dsum;
    }
    acc
}

/// Spectral identity residuals: max|∂ₜv̂ − ikû| and max|−∂ₜû − ikv̂ − ω̂|, each relative to
/// the sup of the corresponding derivative term.
pub fn identity_residuals(state: &SolverState) -> (f64, f64) {
    let g = &state.omega.grid;
    let t = &g.t_nodes;
    let mut div: f64 = 0.0;
    let mut vort: f64 = 0.0;
    let mut sdv: f64 = 0.0;
    let mut sdu: f64 = 0.0;
    for ik in 0..g.nk() {
        let k = g.k_nodes[ik];
        let (u, v, w) = (state.u.column(ik), state.v.column(ik), state.omega.column(ik));
        for it in 0..t.len() {
            let dv = fd_t(t, v, it);
            let du = fd_t(t, u, it);
            div = div.max((dv - I * k * u[it]).norm());
            vort = vort.max((-du - I * k * v[it] - w[it]).norm());
            sdv = sdv.max(dv.norm());
            sdu = sdu.max(du.norm());
        }
    }
    (if sdv == 0.0 { div } else { div / sdv }, if sdu == 0.0 { vort } else { vort / sdu })
}

/// t-resolution error of the derivative terms entering [`identity_residuals`]: the linear
/// problem is solved again with 2n−1 t-nodes (same k-nodes), and FD ∂ₜv̂, ∂ₜû on the two
/// grids are compared at the shared nodes, relative to their sups.
pub fn identity_tolerance(grid: &Arc<SpectralGrid>, spec: &ForceSpec) -> Result<(f64, f64)> {
    let fine = Arc::new(SpectralGrid::new(grid.k_min, grid.k_max, grid.n_half, grid.t_max(), 2 * grid.nt() - 1)?);
    let a = Solver::new(grid).linear_solve(&force_spectrum(spec, grid)?)?;
    let b = Solver::new(&fine).linear_solve(&force_spectrum(spec, &fine)?)?;
    let (t, tf) = (&grid.t_nodes, &fine.t_nodes);
    let mut ev: f64 = 0.0;
    let mut eu: f64 = 0.0;
    let mut sv: f64 = 0.0;
    let mut su: f64 = 0.0;
    for ik in 0..grid.nk() {
        for it in 0..t.len() {
            let dv = fd_t(tf, b.v.column(ik), 2 * it);
            let du = fd_t(tf, b.u.column(ik), 2 * it);
            ev = ev.max((fd_t(t, a.v.column(ik), it) - dv).norm());
            eu = eu.max((fd_t(t, a.u.column(ik), it) - du).norm());
            sv = sv.max(dv.norm());
            su = su.max(du.norm());
        }
    }
    Ok((if sv == 0.0 { ev } else { ev / sv }, if su == 0.0 { eu } else { eu / su }))
}
