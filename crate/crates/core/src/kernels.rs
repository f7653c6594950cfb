//! Propagators K̆ₙ, kernels f̆ₙ,ₘ, their k-derivatives, and exponent-fused products.
//!
//! Every kernel is also available as a list of [`ExpTerm`]s, `coef · τ^i · σ^j · exp(aτ + bσ)`
//! with symbolic rates. The solver only ever touches that form, where the exponents of
//! propagator and kernel are combined before `exp` is called.

use crate::error::{Error, Result};
use crate::spectral::{dk_kappa, kap, kappa, lambda_minus, SpectralGrid, C64, I};
use crate::report::BoundReport;

/// Raw evaluations refuse exponents with |Re| above this.
pub const OVERFLOW_LIMIT: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rate {
    PlusKappa,
    MinusKappa,
    MinusAbsK,
}

impl Rate {
    #[inline]
    pub fn value(self, k: f64, kk: C64) -> C64 {
        match self {
            Rate::PlusKappa => kk,
            Rate::MinusKappa => -kk,
            Rate::MinusAbsK => C64::new(-k.abs(), 0.0),
        }
    }
}

/// `coef · τ^tau_pow · σ^sigma_pow · exp(a τ + b σ)`; a propagator term has no σ part and
/// a kernel term no τ part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTerm {
    pub coef: C64,
    pub tau_pow: u8,
    pub sigma_pow: u8,
    pub a: Option<Rate>,
    pub b: Option<Rate>,
}

impl ExpTerm {
    fn prop(coef: C64, tau_pow: u8, a: Rate) -> Self {
        ExpTerm { coef, tau_pow, sigma_pow: 0, a: Some(a), b: None }
    }
    fn kern(coef: C64, sigma_pow: u8, b: Rate) -> Self {
        ExpTerm { coef, tau_pow: 0, sigma_pow, a: None, b: Some(b) }
    }
    fn times(&self, o: &ExpTerm) -> ExpTerm {
        ExpTerm {
            coef: self.coef * o.coef,
            tau_pow: self.tau_pow + o.tau_pow,
            sigma_pow: self.sigma_pow + o.sigma_pow,
            a: self.a.or(o.a),
            b: self.b.or(o.b),
        }
    }
    /// Value with the exponents summed before exponentiation.
    pub fn eval(&self, k: f64, kk: C64, tau: f64, sigma: f64) -> C64 {
        let mut e = C64::new(0.0, 0.0);
        if let Some(a) = self.a {
            e += a.value(k, kk) * tau;
        }
        if let Some(b) = self.b {
            e += b.value(k, kk) * sigma;
        }
        self.coef * tau.powi(self.tau_pow as i32) * sigma.powi(self.sigma_pow as i32) * e.exp()
    }
}

fn check_branch(n: u8, m: u8) -> Result<()> {
    if !(1..=3).contains(&n) || m > 1 {
        return Err(Error::Params(format!("no kernel with n = {n}, m = {m}")));
    }
    Ok(())
}

fn nonzero(k: f64) -> Result<C64> {
    if k == 0.0 || !k.is_finite() {
        return Err(Error::Domain(format!("kernels undefined at k = {k}")));
    }
    Ok(kap(k))
}

fn guard(exponents: &[C64]) -> Result<()> {
    for e in exponents {
        if e.re.abs() > OVERFLOW_LIMIT {
            return Err(Error::Overflow { exponent: e.re, limit: OVERFLOW_LIMIT });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- term lists

/// K̆ₙ(k,τ) as terms.
pub fn propagator_terms(n: u8, kk: C64, k: f64) -> Vec<ExpTerm> {
    let _ = (kk, k);
    match n {
        1 | 2 => vec![ExpTerm::prop(C64::new(0.5, 0.0), 0, Rate::MinusKappa)],
        _ => vec![
            ExpTerm::prop(C64::new(0.5, 0.0), 0, Rate::PlusKappa),
            ExpTerm::prop(C64::new(-0.5, 0.0), 0, Rate::MinusKappa),
        ],
    }
}

/// ∂ₖK̆ₙ(k,τ) as terms (note the factor τ from differentiating the exponent).
pub fn dk_propagator_terms(n: u8, kk: C64, k: f64) -> Vec<ExpTerm> {
    let c = C64::new(2.0 * k, -1.0) / (4.0 * kk);
    match n {
        1 | 2 => vec![ExpTerm::prop(-c, 1, Rate::MinusKappa)],
        _ => vec![ExpTerm::prop(c, 1, Rate::PlusKappa), ExpTerm::prop(c, 1, Rate::MinusKappa)],
    }
}

/// f̆ₙ,ₘ(k,σ) as terms.
pub fn f_terms(n: u8, m: u8, kk: C64, k: f64) -> Vec<ExpTerm> {
    use Rate::*;
    let a = k.abs();
    let ik = I * k;
    let apk = a + kk;
    let t = ExpTerm::kern;
    match (n, m) {
        (1, 0) => vec![t(ik / kk, 0, PlusKappa), t(-apk * apk / kk, 0, MinusKappa), t(2.0 * apk, 0, MinusAbsK)],
        (2, 0) => vec![t(2.0 * apk, 0, MinusAbsK), t(-2.0 * apk, 0, MinusKappa)],
        (3, 0) => vec![t(ik / kk, 0, MinusKappa)],
        (1, 1) => vec![
            t(C64::new(1.0, 0.0), 0, PlusKappa),
            t(apk * apk / ik, 0, MinusKappa),
            t(-2.0 * a * apk / ik, 0, MinusAbsK),
        ],
        (2, 1) => vec![t(2.0 * (a * apk / ik - 1.0), 0, MinusKappa), t(-2.0 * a * apk / ik, 0, MinusAbsK)],
        _ => vec![t(C64::new(-1.0, 0.0), 0, MinusKappa)],
    }
}

/// ∂ₖf̆ₙ,ₘ(k,σ) as terms.
pub fn dk_f_terms(n: u8, m: u8, kk: C64, k: f64) -> Vec<ExpTerm> {
    use Rate::*;
    let a = k.abs();
    let k2 = k * k;
    let apk = a + kk;
    let s = k2 + kk * kk;
    let p = (k2 + a * kk) / k;
    let t = ExpTerm::kern;
    match (n, m) {
        (1, 0) => {
            let c1 = I / (2.0 * kk);
            let c2 = I * k2 / (2.0 * kk * kk * kk);
            let c3 = I * s / (2.0 * kk * kk);
            vec![
                t(c1 - c2, 0, PlusKappa),
                t(c1 + c2 - 2.0 * p / kk, 0, MinusKappa),
                t(-2.0 * c1 + 2.0 * p / kk, 0, MinusAbsK),
                t(c3, 1, PlusKappa),
                t(-c3 + p * s / (kk * kk), 1, MinusKappa),
                t(-2.0 * p, 1, MinusAbsK),
            ]
        }
        (2, 0) => {
            let c = apk * apk / (kk * k);
            vec![
                t(c, 0, MinusAbsK),
                t(-c, 0, MinusKappa),
                t(-2.0 * apk * a / k, 1, MinusAbsK),
                t(apk * s / (kk * k), 1, MinusKappa),
            ]
        }
        (3, 0) => vec![t(k / (2.0 * kk * kk * kk), 0, MinusKappa), t(-I * s / (2.0 * kk * kk), 1, MinusKappa)],
        (1, 1) => {
            let c = I * apk * apk / (kk * a);
            let d = s / (2.0 * kk * k);
            let r = 2.0 * I * (k2 + a * kk) / k2;
            vec![
                t(c, 0, MinusAbsK),
                t(-c, 0, MinusKappa),
                t(d, 1, PlusKappa),
                t(d + r * s / (2.0 * kk), 1, MinusKappa),
                t(-r * a, 1, MinusAbsK),
            ]
        }
        (2, 1) => {
            let c = (2.0 * I * apk + k.signum()) / kk;
            vec![
                t(c, 0, MinusAbsK),
                t(-c, 0, MinusKappa),
                t(I * apk * s / k2, 1, MinusKappa),
                t(-2.0 * I * apk, 1, MinusAbsK),
            ]
        }
        _ => vec![t(s / (2.0 * kk * k), 1, MinusKappa)],
    }
}

/// Product terms for the l-th piece: l = 0 (and l = 3, same kernel) K̆f̆, l = 1 ∂ₖK̆ f̆, l = 2 K̆ ∂ₖf̆.
pub fn fused_terms(l: u8, n: u8, m: u8, k: f64, kk: C64) -> Vec<ExpTerm> {
    let props = if l == 1 { dk_propagator_terms(n, kk, k) } else { propagator_terms(n, kk, k) };
    let kerns = if l == 2 { dk_f_terms(n, m, kk, k) } else { f_terms(n, m, kk, k) };
    let mut out = Vec::with_capacity(props.len() * kerns.len());
    for p in &props {
        for q in &kerns {
            out.push(p.times(q));
        }
    }
    out
}

// ---------------------------------------------------------------- raw closed forms

/// K̆ₙ(k,τ), closed form.
pub fn propagator(n: u8, k: f64, tau: f64) -> Result<C64> {
    check_branch(n, 0)?;
    let kk = nonzero(k)?;
    if tau < 0.0 {
        return Err(Error::Domain(format!("tau = {tau} < 0")));
    }
    let e = kk * tau;
    match n {
        1 | 2 => {
            guard(&[e])?;
            Ok(0.5 * (-e).exp())
        }
        _ => {
            guard(&[e])?;
            Ok(0.5 * (e.exp() - (-e).exp()))
        }
    }
}

/// ∂ₖK̆ₙ(k,τ), closed form.
pub fn dk_propagator(n: u8, k: f64, tau: f64) -> Result<C64> {
    check_branch(n, 0)?;
    let kk = nonzero(k)?;
    if tau < 0.0 {
        return Err(Error::Domain(format!("tau = {tau} < 0")));
    }
    let e = kk * tau;
    guard(&[e])?;
    let c = 0.25 * tau * C64::new(2.0 * k, -1.0) / kk;
    match n {
        1 | 2 => Ok(-c * (-e).exp()),
        _ => Ok(c * (e.exp() + (-e).exp())),
    }
}

/// f̆ₙ,ₘ(k,σ), closed form.
pub fn f_kernel(n: u8, m: u8, k: f64, sigma: f64) -> Result<C64> {
    check_branch(n, m)?;
    let kk = nonzero(k)?;
    if sigma < 0.0 {
        return Err(Error::Domain(format!("sigma = {sigma} < 0")));
    }
    let a = k.abs();
    let ik = I * k;
    let ep = (kk * sigma).exp();
    let em = (-kk * sigma).exp();
    let ea = (-a * sigma).exp();
    guard(&[kk * sigma, C64::new(a * sigma, 0.0)])?;
    let apk = a + kk;
    Ok(match (n, m) {
        (1, 0) => ik / kk * ep - apk * apk / kk * em + 2.0 * apk * ea,
        (2, 0) => 2.0 * apk * (ea - em),
        (3, 0) => ik / kk * em,
        (1, 1) => ep + apk * apk / ik * em - 2.0 * (a * apk / ik) * ea,
        (2, 1) => 2.0 * (a * apk / ik - 1.0) * em - 2.0 * (a * apk / ik) * ea,
        _ => -em,
    })
}

/// ∂ₖf̆ₙ,ₘ(k,σ), closed form.
pub fn dk_f_kernel(n: u8, m: u8, k: f64, sigma: f64) -> Result<C64> {
    check_branch(n, m)?;
    let kk = nonzero(k)?;
    if sigma < 0.0 {
        return Err(Error::Domain(format!("sigma = {sigma} < 0")));
    }
    guard(&[kk * sigma, C64::new(k.abs() * sigma, 0.0)])?;
    let a = k.abs();
    let k2 = k * k;
    let s = sigma;
    let ep = (kk * s).exp();
    let em = (-kk * s).exp();
    let ea = (-a * s).exp();
    let apk = a + kk;
    let sum = k2 + kk * kk;
    let p = (k2 + a * kk) / k;
    Ok(match (n, m) {
        (1, 0) => {
            I / (2.0 * kk) * (ep + em - 2.0 * ea) - I * k2 / (2.0 * kk.powu(3)) * (ep - em)
                + 2.0 / kk * p * (ea - em)
                + I * sum / (2.0 * kk * kk) * (ep - em) * s
                + p * sum / (kk * kk) * em * s
                - 2.0 * p * ea * s
        }
        (2, 0) => {
            apk * apk / (kk * k) * (ea - em) - 2.0 * apk / (kk * k) * (a * kk * ea - sum / 2.0 * em) * s
        }
        (3, 0) => k / (2.0 * kk.powu(3)) * em - I * sum / (2.0 * kk * kk) * s * em,
        (1, 1) => {
            I * apk * apk / (kk * a) * (ea - em)
                + sum / (2.0 * kk * k) * (ep + em) * s
                + 2.0 * I * (k2 + a * kk) / k2 * (sum / (2.0 * kk) * em - a * ea) * s
        }
        (2, 1) => {
            (2.0 * I * apk + k.signum()) / kk * (ea - em) + I * apk * sum / k2 * em * s
                - 2.0 * I * apk * ea * s
        }
        _ => sum / (2.0 * kk * k) * em * s,
    })
}

/// Propagator × kernel for piece `l` at (k, t, s), exponents fused.
/// Requires s ∈ [1, t] for n = 1 and s ≥ t for n = 2, 3.
pub fn fused_integrand(l: u8, n: u8, m: u8, k: f64, t: f64, s: f64) -> Result<C64> {
    check_branch(n, m)?;
    if l > 3 {
        return Err(Error::Params(format!("no piece l = {l}")));
    }
    let kk = nonzero(k)?;
    if t < 1.0 || s < 1.0 {
        return Err(Error::Domain(format!("need t, s ≥ 1 (t = {t}, s = {s})")));
    }
    let inside = if n == 1 { s <= t } else { s >= t };
    if !inside {
        return Err(Error::Domain(format!("s = {s} outside I_{n} for t = {t}")));
    }
    let (tau, sigma) = (t - 1.0, s - 1.0);
    Ok(fused_terms(l, n, m, k, kk).iter().map(|term| term.eval(k, kk, tau, sigma)).sum())
}

/// The same product from the raw closed forms (overflow guarded); used as an oracle.
pub fn naive_integrand(l: u8, n: u8, m: u8, k: f64, t: f64, s: f64) -> Result<C64> {
    let (tau, sigma) = (t - 1.0, s - 1.0);
    let prop = if l == 1 { dk_propagator(n, k, tau)? } else { propagator(n, k, tau)? };
    let kern = if l == 2 { dk_f_kernel(n, m, k, sigma)? } else { f_kernel(n, m, k, sigma)? };
    Ok(prop * kern)
}

// ---------------------------------------------------------------- kernel bounds

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelBoundSet {
    /// |fₙ,ₘ| bounds, with fₙ,ₘ = f̆ₙ,ₘ for n = 1, 2 and f₃,ₘ = (ik/κ) f̆₃,ₘ.
    F,
    /// |κ ∂ₖf̆ₙ,ₘ| bounds.
    KappaDkF,
}

const SIGMAS: [f64; 5] = [0.0, 0.1, 1.0, 10.0, 100.0];

/// Exponential rate (real) and algebraic prefactor of a bound.
fn bound_shape(set: KernelBoundSet, n: u8, m: u8, k: f64, sigma: f64) -> (f64, f64) {
    let l = lambda_minus(k).abs();
    let a = k.abs();
    match (set, n, m) {
        (KernelBoundSet::F, 1, 0) => (l, l.min(l.powi(3) * sigma * sigma)),
        (KernelBoundSet::F, 2, 0) => (-a, a + a.sqrt()),
        (KernelBoundSet::F, 3, 0) => (-l, 1f64.min(l * l)),
        (KernelBoundSet::F, 1, 1) => (l, (1.0 + l) * 1f64.min(l * sigma)),
        (KernelBoundSet::F, 2, 1) => (-a, 1.0 + a),
        (KernelBoundSet::F, _, _) => (-l, 1f64.min(l)),
        // the bound mixes s and σ; s is read as σ + 1
        (KernelBoundSet::KappaDkF, 1, 0) => (l, (1.0 + l * sigma).min((sigma + 1.0 + l) * l * l * sigma)),
        (KernelBoundSet::KappaDkF, 2, 0) => (-a, (a.sqrt() + a * a) * sigma),
        (KernelBoundSet::KappaDkF, 3, 0) => (-l, 1.0 + l * sigma),
        (KernelBoundSet::KappaDkF, 1, 1) => (l, (1.0 + l * l) * sigma),
        (KernelBoundSet::KappaDkF, 2, 1) => (-a, (1.0 + a * a) * sigma),
        (KernelBoundSet::KappaDkF, _, _) => (-l, (1.0 + l) * sigma),
    }
}

/// |LHS| · e^{-rate σ} and the magnitude scale of the summed terms.
fn scaled_lhs(set: KernelBoundSet, n: u8, m: u8, k: f64, sigma: f64, rate: f64) -> (f64, f64) {
    let kk = kap(k);
    let (terms, pre) = match set {
        KernelBoundSet::F => (f_terms(n, m, kk, k), if n == 3 { I * k / kk } else { C64::new(1.0, 0.0) }),
        KernelBoundSet::KappaDkF => (dk_f_terms(n, m, kk, k), kk),
    };
    let mut sum = C64::new(0.0, 0.0);
    let mut scale = 0.0;
    for t in &terms {
        let b = t.b.unwrap().value(k, kk) - rate;
        let v = pre * t.coef * sigma.powi(t.sigma_pow as i32) * (b * sigma).exp();
        sum += v;
        scale += v.norm();
    }
    (sum.norm(), scale)
}

fn kernel_sweep(grid: &SpectralGrid, set: KernelBoundSet, n: u8, m: u8) -> BoundReport {
    let name = match set {
        KernelBoundSet::F => format!("f{n}{m}_bound"),
        KernelBoundSet::KappaDkF => format!("kappa_dkf{n}{m}_bound"),
    };
    let mut rep = BoundReport::new(name, &["k", "sigma", "ratio"]);
    for &k in &grid.k_nodes {
        for &sigma in &SIGMAS {
            let (rate, pref) = bound_shape(set, n, m, k, sigma);
            let (lhs, scale) = scaled_lhs(set, n, m, k, sigma, rate);
            let ratio = if pref > 0.0 {
                lhs / pref
            } else if lhs <= 1e-12 * scale.max(1e-300) {
                0.0
            } else {
                f64::INFINITY
            };
            rep.push(vec![k, sigma, ratio]);
        }
    }
    rep
}

/// Sweeps all six bounds of one set over grid k × σ ∈ {0, 0.1, 1, 10, 100}, and again on
/// the 2x refined grid.
pub fn kernel_bound_report(grid: &SpectralGrid, set: KernelBoundSet) -> Vec<BoundReport> {
    let fine = grid.refined();
    let mut out = Vec::new();
    for n in 1..=3u8 {
        for m in 0..=1u8 {
            let coarse = kernel_sweep(grid, set, n, m);
            let refined = kernel_sweep(&fine, set, n, m);
            let mut rep = coarse.with_refinement(&refined);
            if let Some(&k) = rep.argmax.first() {
                if k.abs() == grid.k_min || k.abs() == grid.k_max {
                    rep.notes.push(format!("max ratio sits at the grid edge |k| = {:e}", k.abs()));
                }
            }
            out.push(rep);
        }
    }
    out
}

// ---------------------------------------------------------------- consistency checks

/// Allowed relative error of an analytic ∂ₖ formula against a centered difference.
pub const DK_FD_TOL: f64 = 1e-6;
/// Allowed relative difference between fused and naive kernel products.
pub const FUSED_TOL: f64 = 1e-12;

const SPOT_K: [f64; 8] = [-20.0, -2.0, -0.5, -0.05, 0.05, 0.5, 2.0, 20.0];
const SPOT_S: [f64; 3] = [0.1, 1.0, 5.0];
const FD_H: f64 = 1e-5;

fn rel_diff(a: C64, b: C64) -> f64 {
    (a - b).norm() / b.norm().max(a.norm()).max(1e-300)
}

fn fd_check(name: &str, f: impl Fn(f64, f64) -> Result<C64>, df: impl Fn(f64, f64) -> Result<C64>) -> Result<BoundReport> {
    let mut rep = BoundReport::new(name, &["k", "s", "rel_err"]);
    for &k in &SPOT_K {
        for &s in &SPOT_S {
            // e^{+|Λ|σ} at |k|σ > 60 leaves no significant digits for a centered difference
            if name.starts_with("dkf1") && k.abs() * s > 60.0 {
                continue;
            }
            let fd = (f(k + FD_H, s)? - f(k - FD_H, s)?) / (2.0 * FD_H);
            rep.push(vec![k, s, rel_diff(df(k, s)?, fd)]);
        }
    }
    rep.pass = rep.max_ratio < DK_FD_TOL;
    Ok(rep)
}

/// ∂ₖκ, ∂ₖKₙ (n = 1, 2, 3) and ∂ₖf̆ₙ,ₘ against centered differences of their parents on
/// k ∈ ±{0.05, 0.5, 2, 20}, τ or σ ∈ {0.1, 1, 5}.
pub fn derivative_consistency_report() -> Result<Vec<BoundReport>> {
    let mut out = vec![fd_check("dkappa", |k, _| kappa(k), |k, _| dk_kappa(k))?];
    for n in 1..=3u8 {
        out.push(fd_check(&format!("dK{n}"), |k, s| propagator(n, k, s), |k, s| dk_propagator(n, k, s))?);
    }
    for n in 1..=3u8 {
        for m in 0..=1u8 {
            out.push(fd_check(&format!("dkf{n}{m}"), |k, s| f_kernel(n, m, k, s), |k, s| dk_f_kernel(n, m, k, s))?);
        }
    }
    Ok(out)
}

/// Fused against naive products for all 24 (l, n, m) on a k × (t, s) sweep where the naive
/// form does not overflow, relative to the larger of the product and its summed term sizes, plus finiteness of the fused form at t = 128, |k| = 64.
pub fn fused_equivalence_report() -> Result<Vec<BoundReport>> {
    let ks = [-8.0, -1.0, -0.1, 0.01, 0.3, 1.0, 4.0];
    let ts = [1.0, 1.5, 3.0, 10.0];
    let mut out = Vec::new();
    for l in 0..=3u8 {
        for n in 1..=3u8 {
            for m in 0..=1u8 {
                let mut rep = BoundReport::new(format!("fused{l}{n}{m}"), &["k", "t", "s", "rel_diff"]);
                for &k in &ks {
                    for &t in &ts {
                        for &ds in &[0.0, 0.25, 2.0] {
                            let s = if n == 1 { t - ds * (t - 1.0) / 2.0 } else { t + ds };
                            match naive_integrand(l, n, m, k, t, s) {
                                Ok(b) => {
                                    let a = fused_integrand(l, n, m, k, t, s)?;
                                    // where the terms cancel (f̆₁₀ at σ = 0) the size of the
                                    // individual terms sets the relative scale
                                    let kk = kap(k);
                                    let scale: f64 = fused_terms(l, n, m, k, kk)
                                        .iter()
                                        .map(|term| term.eval(k, kk, t - 1.0, s - 1.0).norm())
                                        .sum();
                                    let r = (a - b).norm() / a.norm().max(b.norm()).max(scale).max(1e-300);
                                    rep.push(vec![k, t, s, r]);
                                }
                                Err(Error::Overflow { .. }) => {}
                                Err(e) => return Err(e),
                            }
                        }
                    }
                }
                let far = if n == 1 { (64.0, 128.0, 127.0) } else { (-64.0, 128.0, 128.5) };
                let v = fused_integrand(l, n, m, far.0, far.1, far.2)?;
                let finite = v.re.is_finite() && v.im.is_finite();
                rep.constant("far_abs", v.norm());
                rep.pass = rep.max_ratio < FUSED_TOL && finite && !rep.samples.is_empty();
                out.push(rep);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use super::*;

    fn rel(a: C64, b: C64) -> f64 {
        (a - b).norm() / b.norm().max(a.norm()).max(1e-300)
    }

    #[test]
    fn propagator_examples() {
        assert_eq!(propagator(1, 0.7, 0.0).unwrap(), C64::new(0.5, 0.0));
        assert_eq!(propagator(3, 0.7, 0.0).unwrap(), C64::new(0.0, 0.0));
        let v = propagator(2, 1.0, 2.0).unwrap();
        let expected = 0.5 * (-2.0 * 0.5 * (2.0 * 2f64.sqrt() + 2.0).sqrt()).exp();
        assert!((v.norm() - expected).abs() < 1e-15);
        assert!(propagator(3, 64.0, 127.0).is_err());
        assert!(propagator(1, 0.0, 1.0).is_err());
    }

    #[test]
    fn propagator_decay_bound() {
        for k in [-10.0, -0.1, 0.01, 1.0, 5.0] {
            for tau in [0.0, 0.5, 3.0, 20.0] {
                let v = propagator(1, k, tau).unwrap();
                assert!(v.norm() <= 0.5 * (lambda_minus(k) * tau).exp() * (1.0 + 1e-14));
            }
        }
    }

    #[test]
    fn f_kernel_examples() {
        for k in [-3.0, -0.2, 0.01, 1.0, 7.0] {
            assert!(f_kernel(2, 0, k, 0.0).unwrap().norm() < 1e-14);
            assert_eq!(f_kernel(3, 1, k, 0.0).unwrap(), C64::new(-1.0, 0.0));
            assert_eq!(dk_f_kernel(3, 1, k, 0.0).unwrap(), C64::new(0.0, 0.0));
        }
        let kk = kap(1.0);
        let v = f_kernel(3, 0, 1.0, 1.0).unwrap();
        assert!(rel(v, I / kk * (-kk).exp()) < 1e-15);
        assert!(f_kernel(1, 0, 64.0, 10.0).is_err());
    }

    #[test]
    fn dk_propagator_at_zero_tau_vanishes() {
        // differentiating e^{-κτ} brings down τ, so the τ = 0 value is 0
        assert_eq!(dk_propagator(1, 1.0, 0.0).unwrap(), C64::new(0.0, 0.0));
        assert_eq!(dk_propagator(3, 1.0, 0.0).unwrap(), C64::new(0.0, 0.0));
    }

    fn fd_k(f: impl Fn(f64) -> C64, k: f64, h: f64) -> C64 {
        (f(k + h) - f(k - h)) / (2.0 * h)
    }

    #[test]
    fn derivative_formulas_match_finite_differences() {
        let h = 1e-5;
        for &k in &[-20.0, -2.0, -0.5, -0.05, 0.05, 0.5, 2.0, 20.0] {
            for &s in &[0.1, 1.0, 5.0] {
                for n in 1..=3u8 {
                    let fd = fd_k(|kk| propagator(n, kk, s).unwrap(), k, h);
                    let an = dk_propagator(n, k, s).unwrap();
                    assert!(rel(an, fd) < 1e-6, "dK{n} k={k} tau={s}: {an} vs {fd}");
                    for m in 0..=1u8 {
                        if n == 1 && k.abs() * s > 60.0 {
                            continue;
                        }
                        let fd = fd_k(|kk| f_kernel(n, m, kk, s).unwrap(), k, h);
                        let an = dk_f_kernel(n, m, k, s).unwrap();
                        assert!(rel(an, fd) < 1e-6, "dkf{n}{m} k={k} s={s}: {an} vs {fd}");
                    }
                }
            }
        }
    }

    #[test]
    fn dk_f10_spot_value() {
        let fd = fd_k(|kk| f_kernel(1, 0, kk, 1.0).unwrap(), 0.5, 1e-5);
        assert!(rel(dk_f_kernel(1, 0, 0.5, 1.0).unwrap(), fd) < 1e-6);
    }

    #[test]
    fn term_lists_reproduce_closed_forms() {
        for &k in &[-3.0, -0.3, 0.01, 0.8, 5.0] {
            let kk = kap(k);
            for &s in &[0.0, 0.3, 2.0] {
                for n in 1..=3u8 {
                    let p: C64 = propagator_terms(n, kk, k).iter().map(|t| t.eval(k, kk, s, 0.0)).sum();
                    assert!(rel(p, propagator(n, k, s).unwrap()) < 1e-13 || p.norm() < 1e-15);
                    let dp: C64 = dk_propagator_terms(n, kk, k).iter().map(|t| t.eval(k, kk, s, 0.0)).sum();
                    assert!((dp - dk_propagator(n, k, s).unwrap()).norm() < 1e-13 * (1.0 + dp.norm()));
                    for m in 0..=1u8 {
                        let f: C64 = f_terms(n, m, kk, k).iter().map(|t| t.eval(k, kk, 0.0, s)).sum();
                        assert!((f - f_kernel(n, m, k, s).unwrap()).norm() < 1e-12 * (1.0 + f.norm()));
                        let d: C64 = dk_f_terms(n, m, kk, k).iter().map(|t| t.eval(k, kk, 0.0, s)).sum();
                        let dd = dk_f_kernel(n, m, k, s).unwrap();
                        assert!((d - dd).norm() < 1e-11 * (1.0 + dd.norm()), "dkf{n}{m} k={k} s={s}");
                    }
                }
            }
        }
    }

    #[test]
    fn fused_examples() {
        for &k in &[-2.0, 0.3, 1.0] {
            let kk = kap(k);
            let t = 3.5;
            let v = fused_integrand(0, 3, 1, k, t, t).unwrap();
            let expected = -0.5 * (1.0 - (-2.0 * kk * (t - 1.0)).exp());
            assert!(rel(v, expected) < 1e-14);
            assert!(v.norm() <= 1.0);
            let w = fused_integrand(0, 1, 0, k, t, 1.0).unwrap();
            let a = k.abs();
            let f0 = I * k / kk - (a + kk) * (a + kk) / kk + 2.0 * (a + kk);
            assert!((w - 0.5 * (-kk * (t - 1.0)).exp() * f0).norm() < 1e-14);
        }
        assert!(fused_integrand(0, 1, 0, 1.0, 2.0, 2.5).is_err());
        assert!(fused_integrand(0, 2, 0, 1.0, 2.0, 1.5).is_err());
    }

    #[test]
    fn fused_matches_naive_at_spot_point() {
        for l in 0..=3u8 {
            for n in 1..=3u8 {
                for m in 0..=1u8 {
                    let (t, s) = if n == 1 { (2.0, 1.5) } else { (1.5, 2.0) };
                    let a = fused_integrand(l, n, m, 1.0, t, s).unwrap();
                    let b = naive_integrand(l, n, m, 1.0, t, s).unwrap();
                    assert!(rel(a, b) < 1e-12, "l={l} n={n} m={m}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn consistency_reports_pass() {
        for r in derivative_consistency_report().unwrap() {
            assert!(r.pass, "{} {}", r.name, r.max_ratio);
        }
        let f = fused_equivalence_report().unwrap();
        assert_eq!(f.len(), 24);
        for r in f {
            assert!(r.pass, "{} {} at {:?}", r.name, r.max_ratio, r.argmax);
        }
    }

    #[test]
    fn fused_finite_where_naive_overflows() {
        for l in 0..=3u8 {
            for m in 0..=1u8 {
                let v = fused_integrand(l, 1, m, 64.0, 128.0, 127.0).unwrap();
                assert!(v.re.is_finite() && v.im.is_finite());
                assert!(naive_integrand(l, 1, m, 64.0, 128.0, 127.0).is_err());
                let w = fused_integrand(l, 3, m, -64.0, 128.0, 128.5).unwrap();
                assert!(w.re.is_finite() && w.im.is_finite());
            }
        }
    }

    #[test]
    fn checked_three_products_agree_with_unchecked() {
        for &k in &[-4.0, -0.1, 0.02, 1.3] {
            let kk = kap(k);
            for m in 0..=1u8 {
                let tau = 0.7;
                let sig = 1.9;
                let kc = propagator(3, k, tau).unwrap();
                let fc = f_kernel(3, m, k, sig).unwrap();
                let k3 = kk / (I * k) * kc;
                let f3 = I * k / kk * fc;
                assert!(rel(k3 * f3, kc * fc) < 1e-12);
            }
        }
    }

    #[test]
    fn bound_sigma_zero_rows_are_zero() {
        let g = SpectralGrid::new(1e-6, 32.0, 40, 8.0, 8).unwrap();
        for set in [KernelBoundSet::F, KernelBoundSet::KappaDkF] {
            for rep in kernel_bound_report(&g, set) {
                for row in &rep.samples {
                    assert!(row[2].is_finite(), "{} at k={} sigma={}", rep.name, row[0], row[1]);
                }
            }
        }
    }

    #[test]
    fn f31_ratio_bounded() {
        let g = SpectralGrid::new(1e-8, 64.0, 64, 8.0, 8).unwrap();
        let reps = kernel_bound_report(&g, KernelBoundSet::F);
        let f31 = reps.iter().find(|r| r.name == "f31_bound").unwrap();
        assert!(f31.max_ratio < 2.0, "{}", f31.max_ratio);
    }

    proptest! {
        #[test]
        fn derivatives_match_fd_everywhere(k in 0.05f64..20.0, neg in any::<bool>(), s in 0.1f64..5.0, n in 1u8..=3, m in 0u8..=1) {
            let k = if neg { -k } else { k };
            let h = 1e-5;
            let fd = fd_k(|kk| propagator(n, kk, s).unwrap(), k, h);
            prop_assert!(rel(dk_propagator(n, k, s).unwrap(), fd) < 1e-6);
            prop_assume!(!(n == 1 && k.abs() * s > 60.0));
            let fd = fd_k(|kk| f_kernel(n, m, kk, s).unwrap(), k, h);
            prop_assert!(rel(dk_f_kernel(n, m, k, s).unwrap(), fd) < 1e-6);
        }

        #[test]
        fn checked_product_invariant(k in 0.01f64..10.0, neg in any::<bool>(), tau in 0.0f64..5.0, sig in 0.0f64..5.0, m in 0u8..=1) {
            let k = if neg { -k } else { k };
            let kk = kap(k);
            let kc = propagator(3, k, tau).unwrap();
            let fc = f_kernel(3, m, k, sig).unwrap();
            let direct = kc * fc;
            let rescaled = (kk / (I * k) * kc) * (I * k / kk * fc);
            prop_assert!((direct - rescaled).norm() <= 1e-12 * direct.norm().max(1e-300));
        }

        #[test]
        fn fused_matches_naive(l in 0u8..=3, n in 1u8..=3, m in 0u8..=1, k in 0.01f64..6.0, neg in any::<bool>(), t in 1.0f64..6.0, ds in 0.0f64..4.0) {
            let k = if neg { -k } else { k };
            let s = if n == 1 { 1.0 + (t - 1.0) * (ds / 4.0) } else { t + ds };
            let kk = kap(k);
            // overflow-free regime: every raw exponent below 30
            let l_abs = lambda_minus(k).abs().max(k.abs());
            prop_assume!(l_abs * (t - 1.0).max(s - 1.0) < 30.0);
            let a = fused_integrand(l, n, m, k, t, s).unwrap();
            let b = naive_integrand(l, n, m, k, t, s).unwrap();
            let scale: f64 = fused_terms(l, n, m, k, kk).iter().map(|x| x.eval(k, kk, t - 1.0, s - 1.0).norm()).sum();
            prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(b.norm()).max(scale).max(1e-300));
        }
    }
}
