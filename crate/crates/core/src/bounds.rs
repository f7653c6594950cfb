//! Ratio sweeps for the convolution and semigroup propositions, the weight inequalities
//! used throughout the kernel estimates, and the (p, q) bookkeeping for products.
//!
//! Every report is a coarse sweep plus the same sweep on the 2x refined grid; a report
//! passes when both maxima are finite and within `REFINEMENT_TOL` of each other.

use std::sync::Arc;

use quadrature::double_exponential;
use rayon::prelude::*;
use serde::Serialize;

use crate::convolution::ConvPlan;
use crate::error::{Error, Result};
use crate::direct::loglog_slope;
use crate::report::BoundReport;
use crate::spectral::{kap, lambda_minus, mu_weight, ModeField, SpectralGrid, WeightEnvelope, C64};

// ---------------------------------------------------------------- convolution

fn sweep_ratio(
    name: &str,
    conv: &ModeField,
    bound: impl Fn(f64, f64) -> f64,
) -> BoundReport {
    let g = &conv.grid;
    let mut rep = BoundReport::new(name, &["k", "t", "ratio"]);
    for ik in g.n_half..g.nk() {
        let k = g.k_nodes[ik];
        for (it, &t) in g.t_nodes.iter().enumerate() {
            let b = bound(k, t);
            rep.push(vec![k, t, conv.at(ik, it).norm() / b]);
        }
    }
    rep
}

fn conv_sweep(alpha: f64, beta: f64, r: f64, s: f64, grid: &Arc<SpectralGrid>) -> Result<BoundReport> {
    let plan = ConvPlan::new(grid);
    let a = ModeField::from_fn(grid, 0, |k, t| C64::new(mu_weight(alpha, r, k, t), 0.0));
    let b = ModeField::from_fn(grid, 0, |k, t| C64::new(mu_weight(beta, s, k, t), 0.0));
    let ab = plan.convolve(&a, &b)?;
    Ok(sweep_ratio(&format!("convHW a={alpha} b={beta} r={r} s={s}"), &ab, |k, t| {
        mu_weight(beta, s, k, t) / t.powf(r) + mu_weight(alpha, r, k, t) / t.powf(s)
    }))
}

/// |μ_{α,r} ∗ μ_{β,s}| against t^{-r}μ_{β,s} + t^{-s}μ_{α,r}.
pub fn conv_bound_report(alpha: f64, beta: f64, r: f64, s: f64, grid: &Arc<SpectralGrid>) -> Result<BoundReport> {
    if !(alpha > 1.0 && beta > 1.0 && r >= 0.0 && s >= 0.0) {
        return Err(Error::Params(format!("convHW needs α, β > 1 and r, s ≥ 0 (got {alpha}, {beta}, {r}, {s})")));
    }
    let coarse = conv_sweep(alpha, beta, r, s, grid)?;
    let fine = conv_sweep(alpha, beta, r, s, &Arc::new(grid.refined()))?;
    Ok(coarse.with_refinement(&fine))
}

/// Which display of the |κ|⁻¹-singular convolution bound is checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RootDisplay {
    /// max{t^{-s̃/2}, t^{-(s̃+r-s̃')/2}} μ_{β̃,s̃'} + t^{-s̃/2} μ_{α,r}
    Plain { s_prime: f64 },
    /// max{t^{-s̃/2}, t^{-(r-c s̃')}} μ_{β̃+c,s̃'} + t^{-s̃/2} μ_{α,r}
    GainBeta { c: f64, s_prime: f64 },
}

fn root_bound(alpha: f64, beta_t: f64, r: f64, s_t: f64, d: RootDisplay, k: f64, t: f64) -> f64 {
    let tail = mu_weight(alpha, r, k, t) / t.powf(0.5 * s_t);
    match d {
        RootDisplay::Plain { s_prime } => {
            let m = t.powf(-0.5 * s_t).max(t.powf(-0.5 * (s_t + r - s_prime)));
            m * mu_weight(beta_t, s_prime, k, t) + tail
        }
        RootDisplay::GainBeta { c, s_prime } => {
            let m = t.powf(-0.5 * s_t).max(t.powf(-(r - c * s_prime)));
            m * mu_weight(beta_t + c, s_prime, k, t) + tail
        }
    }
}

fn root_sweep(alpha: f64, beta_t: f64, r: f64, s_t: f64, d: RootDisplay, grid: &Arc<SpectralGrid>) -> Result<BoundReport> {
    let plan = ConvPlan::new(grid);
    let a = ModeField::from_fn(grid, 0, |k, t| C64::new(mu_weight(alpha, r, k, t), 0.0));
    // b̃ = |κ|⁻¹ μ, stored as κ·b̃
    let b = ModeField::from_fn(grid, 1, |k, t| {
        let kk = kap(k);
        kk / kk.norm() * mu_weight(beta_t, s_t, k, t)
    });
    let ab = plan.convolve(&a, &b)?;
    let name = match d {
        RootDisplay::Plain { s_prime } => format!("convwithroot a={alpha} b={beta_t} r={r} s={s_t} s'={s_prime}"),
        RootDisplay::GainBeta { c, s_prime } => {
            format!("convwithrootgainbeta c={c} a={alpha} b={beta_t} r={r} s={s_t} s'={s_prime}")
        }
    };
    Ok(sweep_ratio(&name, &ab, |k, t| root_bound(alpha, beta_t, r, s_t, d, k, t)))
}

/// μ_{α,r} ∗ |κ|⁻¹μ_{β̃,s̃} against one of the two displayed bounds.
pub fn singular_conv_bound_report(
    alpha: f64,
    beta_t: f64,
    r: f64,
    s_t: f64,
    display: RootDisplay,
    grid: &Arc<SpectralGrid>,
) -> Result<BoundReport> {
    let sp = match display {
        RootDisplay::Plain { s_prime } => s_prime,
        RootDisplay::GainBeta { c, s_prime } => {
            if c != 0.5 && c != 1.0 {
                return Err(Error::Params(format!("c must be 1/2 or 1, got {c}")));
            }
            s_prime
        }
    };
    if !(alpha > 1.0 && beta_t > 1.0 && r >= 0.0 && s_t >= 0.0 && sp <= s_t) {
        return Err(Error::Params("convwithroot needs α, β̃ > 1, r, s̃ ≥ 0 and s̃' ≤ s̃".into()));
    }
    let coarse = root_sweep(alpha, beta_t, r, s_t, display, grid)?;
    let fine = root_sweep(alpha, beta_t, r, s_t, display, &Arc::new(grid.refined()))?;
    Ok(coarse.with_refinement(&fine))
}

/// (α, p, q) of f ∗ g for f ∈ ℬ_{α,p₁,q₁} and g ∈ 𝒟¹_{α−1,p₂,q₂}.
pub fn envelope_product_map(alpha: f64, p1: f64, q1: f64, p2: f64, q2: f64) -> Result<WeightEnvelope> {
    if alpha <= 2.0 {
        return Err(Error::Params(format!("product map needs α > 2, got {alpha}")));
    }
    if [p1, q1, p2, q2].iter().any(|v| *v < 0.0) {
        return Err(Error::Params("decay exponents must be non-negative".into()));
    }
    let p = (p1 + p2 + 0.5).min(p1 + q2 + 1.0).min(q1 + p2 + 0.5);
    let q = (q1 + q2 + 1.0).min(q1 + p2 + 0.5);
    Ok(WeightEnvelope::new(alpha, p, q, 0))
}

// ---------------------------------------------------------------- weight inequalities

fn weight_sweep(name: &str, grid: &SpectralGrid, f: impl Fn(f64, f64) -> f64) -> BoundReport {
    let mut rep = BoundReport::new(name, &["k", "t", "ratio"]);
    for &k in grid.k_pos() {
        for &t in &grid.t_nodes {
            rep.push(vec![k, t, f(k, t)]);
        }
    }
    rep
}

/// e^{Λ₋(t−1)} μ_{α,r} ≤ C μ̃_α, for r ∈ {1, 2}.
pub fn mu_to_mu_tilde_report(alpha: f64, grid: &SpectralGrid) -> BoundReport {
    let f = |k: f64, t: f64| {
        [1.0, 2.0]
            .iter()
            .map(|&r| (lambda_minus(k) * (t - 1.0)).exp() * mu_weight(alpha, r, k, t) / mu_weight(alpha, 2.0, k, t))
            .fold(0.0, f64::max)
    };
    let name = format!("mutomutilde a={alpha}");
    weight_sweep(&name, grid, f).with_refinement(&weight_sweep(&name, &grid.refined(), f))
}

/// |k|^ρ μ_{α,r} ≤ C t^{−ρr} μ_{α−ρ,r}, for ρ ∈ {½, 1}, r ∈ {1, 2}.
pub fn k_sacrifice_report(alpha: f64, grid: &SpectralGrid) -> BoundReport {
    let f = |k: f64, t: f64| {
        let mut m: f64 = 0.0;
        for rho in [0.5, 1.0] {
            for r in [1.0, 2.0] {
                let lhs = k.abs().powf(rho) * mu_weight(alpha, r, k, t);
                m = m.max(lhs / (t.powf(-rho * r) * mu_weight(alpha - rho, r, k, t)));
            }
        }
        m
    };
    let name = format!("ksacrificealphafort a={alpha}");
    weight_sweep(&name, grid, f).with_refinement(&weight_sweep(&name, &grid.refined(), f))
}

// ---------------------------------------------------------------- semigroups

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Semigroup {
    /// e^{Λ₋(t−1)} ∫₁^{(t+1)/2} e^{|Λ₋|(s−1)} |Λ₋|^β (s−1)^γ s^{−δ} μ_{α,r} ds
    L1,
    /// e^{Λ₋(t−1)} ∫_{(t+1)/2}^t e^{|Λ₋|(s−1)} |Λ₋|^β s^{−δ} μ_{α,r} ds
    L2,
    /// e^{|Λ₋|(t−1)} ∫_t^∞ e^{Λ₋(s−1)} |Λ₋|^β s^{−δ} μ_{α,r} ds
    L3,
    /// e^{|k|(t−1)} ∫_t^∞ e^{−|k|(s−1)} |k|^β s^{−δ} μ_{α,r} ds
    K3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SgParams {
    pub alpha: f64,
    pub r: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

/// Width (in units of the decay length) of the boundary layer given its own quadrature piece.
const LAYER: f64 = 40.0;

fn integrate(f: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
    let mut total = 0.0;
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let rough = double_exponential::integrate(&f, w[0], w[1], 1e-6).integral;
        let target = (1e-10 * rough.abs()).max(1e-300);
        total += double_exponential::integrate(&f, w[0], w[1], target).integral;
    }
    total
}

/// ∫_t^∞ e^{−λ(s−t)} g(s) ds for g decaying like s^{−decay}, decay > 1. The layer
/// [t, t + LAYER/λ] is integrated directly; the rest in u with s = u^{−1/(decay−1)}, which
/// turns the algebraic tail into a bounded integrand.
fn tail_integral(lambda: f64, t: f64, decay: f64, g: impl Fn(f64) -> f64) -> f64 {
    let m = 1.0 / (decay - 1.0);
    let tail = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let s = u.powf(-m);
        let w = m * s / u;
        (-lambda * (s - t)).exp() * g(s) * w
    };
    let cut = if lambda > 0.0 { t + LAYER / lambda } else { t };
    let near = if lambda > 0.0 { integrate(|s| (-lambda * (s - t)).exp() * g(s), &[t, cut]) } else { 0.0 };
    near + integrate(tail, &[0.0, cut.powf(-1.0 / m)])
}

/// Left-hand side of a semigroup proposition at (k, t), by adaptive quadrature.
pub fn sg_lhs(which: Semigroup, p: &SgParams, k: f64, t: f64) -> f64 {
    let lam = lambda_minus(k).abs();
    let mu = |s: f64| mu_weight(p.alpha, p.r, k, s);
    match which {
        Semigroup::L1 => {
            let m = 0.5 * (t + 1.0);
            let f = |s: f64| {
                (-lam * (t - s)).exp() * lam.powf(p.beta) * (s - 1.0).powf(p.gamma) * s.powf(-p.delta) * mu(s)
            };
            let layer = if lam > 0.0 { (m - LAYER / lam).max(1.0) } else { 1.0 };
            integrate(f, &[1.0, layer, m])
        }
        Semigroup::L2 => {
            let m = 0.5 * (t + 1.0);
            let f = |s: f64| (-lam * (t - s)).exp() * lam.powf(p.beta) * s.powf(-p.delta) * mu(s);
            let layer = if lam > 0.0 { (t - LAYER / lam).max(m) } else { m };
            integrate(f, &[m, layer, t])
        }
        Semigroup::L3 => lam.powf(p.beta) * tail_integral(lam, t, p.delta, |s| s.powf(-p.delta) * mu(s)),
        Semigroup::K3 => {
            let a = k.abs();
            let w = if p.beta == 0.0 { 1.0 } else { a.powf(p.beta) };
            w * tail_integral(a, t, p.delta, |s| s.powf(-p.delta) * mu(s))
        }
    }
}

/// Right-hand side shape (without the constant).
pub fn sg_rhs(which: Semigroup, p: &SgParams, k: f64, t: f64) -> f64 {
    match which {
        Semigroup::L1 => {
            let g = if p.delta > p.gamma + 1.0 {
                1.0
            } else if p.delta == p.gamma + 1.0 {
                (1.0 + t).ln()
            } else {
                t.powf(p.gamma + 1.0 - p.delta)
            };
            g / t.powf(p.beta) * mu_weight(p.alpha, 2.0, k, t)
        }
        _ => mu_weight(p.alpha, p.r, k, t) / t.powf(p.delta - 1.0 + p.beta),
    }
}

fn check_params(which: Semigroup, p: &SgParams) -> Result<()> {
    let ok = p.alpha >= 0.0
        && p.r >= 0.0
        && match which {
            Semigroup::L1 => p.delta >= 0.0 && p.gamma + 1.0 >= p.beta && p.beta >= 0.0,
            Semigroup::L2 => p.beta == 0.0 || p.beta == 1.0,
            Semigroup::L3 => p.delta > 1.0 && (p.beta == 0.0 || p.beta == 1.0),
            Semigroup::K3 => p.delta > 1.0 && (0.0..=1.0).contains(&p.beta),
        };
    if ok {
        Ok(())
    } else {
        Err(Error::Params(format!("{which:?}: parameters outside the proposition's range: {p:?}")))
    }
}

fn sg_sweep(name: &str, which: Semigroup, params: &[SgParams], grid: &SpectralGrid) -> BoundReport {
    let pts: Vec<(f64, f64)> = grid.k_pos().iter().flat_map(|&k| grid.t_nodes.iter().map(move |&t| (k, t))).collect();
    let rows: Vec<Vec<f64>> = pts
        .par_iter()
        .map(|&(k, t)| {
            let r = params.iter().map(|p| sg_lhs(which, p, k, t) / sg_rhs(which, p, k, t)).fold(0.0, f64::max);
            vec![k, t, r]
        })
        .collect();
    let mut rep = BoundReport::new(name, &["k", "t", "ratio"]);
    for row in rows {
        rep.push(row);
    }
    rep
}

/// Max of LHS/RHS over the positive-k half of the grid and all t-nodes, for every
/// parameter set, with the refinement check.
pub fn semigroup_bound_report(name: &str, which: Semigroup, params: &[SgParams], grid: &SpectralGrid) -> Result<BoundReport> {
    for p in params {
        check_params(which, p)?;
    }
    let coarse = sg_sweep(name, which, params, grid);
    let fine = sg_sweep(name, which, params, &grid.refined());
    Ok(coarse.with_refinement(&fine))
}

/// Log-log slope tolerance for the three sgL1 cases.
pub const SLOPE_TOL: f64 = 0.1;

#[derive(Debug, Clone, Serialize)]
pub struct SlopeCase {
    pub delta: f64,
    pub gamma: f64,
    /// slope of ln LHS(0,t)
    pub raw_slope: f64,
    /// slope of ln(LHS(0,t)/g(t)) where g is the case's factor 1, log(1+t) or t^{γ+1−δ}
    pub normalized_slope: f64,
    pub pass: bool,
}

/// At k = 0 and β = 0 the sgL1 integral carries exactly the case factor g(t); fits
/// ln(LHS/g) against ln t on t ∈ [10², 10⁴]. The log case must also be visibly non-flat.
pub fn sgl1_slope_case(gamma: f64, delta: f64) -> SlopeCase {
    let p = SgParams { alpha: 4.0, r: 2.0, beta: 0.0, gamma, delta };
    let ts: Vec<f64> = (0..25).map(|i| 10f64.powf(2.0 + 2.0 * i as f64 / 24.0)).collect();
    let lhs: Vec<f64> = ts.iter().map(|&t| sg_lhs(Semigroup::L1, &p, 0.0, t)).collect();
    let norm: Vec<f64> = ts.iter().zip(&lhs).map(|(&t, &l)| l / sg_rhs(Semigroup::L1, &p, 0.0, t)).collect();
    let raw_slope = loglog_slope(&ts, &lhs, 0.0, f64::INFINITY).unwrap_or(f64::NAN);
    let normalized_slope = loglog_slope(&ts, &norm, 0.0, f64::INFINITY).unwrap_or(f64::NAN);
    let log_case = delta == gamma + 1.0;
    let pass = normalized_slope.abs() <= SLOPE_TOL && (!log_case || raw_slope >= SLOPE_TOL);
    SlopeCase { delta, gamma, raw_slope, normalized_slope, pass }
}
