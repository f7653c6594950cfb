//! Inverse transform to (x, y), the decay certificate and log-log slope fits.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expint::Panels;
use crate::solver::SolverState;
use crate::spectral::{ModeField, SpectralGrid, C64, I};

/// Imaginary residue (relative to the real sup) accepted silently.
pub const IMAG_WARN: f64 = 1e-10;
/// Imaginary residue above which the reconstruction is refused.
pub const IMAG_FAIL: f64 = 1e-8;
/// Relative slack in |f(x,t)| ≤ (1/2π)∫|f̂|: the two sides use different k-rules.
const CHAIN_SLACK: f64 = 1e-3;

/// Symmetric x nodes: step `h` up to `x_lin`, then geometric with `ratio` up to `x_max`.
pub fn x_nodes(h: f64, x_lin: f64, ratio: f64, x_max: f64) -> Vec<f64> {
    let mut pos = Vec::new();
    let mut x = 0.0;
    while x < x_lin - 1e-12 {
        x += h;
        pos.push(x.min(x_lin));
    }
    let mut x = *pos.last().unwrap_or(&h);
    while x < x_max {
        x = (x * ratio).min(x_max);
        pos.push(x);
    }
    let mut out: Vec<f64> = pos.iter().rev().map(|v| -v).collect();
    out.push(0.0);
    out.extend(pos);
    out
}

/// Default x nodes for a grid: step 0.25 to 8, then ratio 1.04 out to t_max²/2, where the
/// sup over x of the vorticity sits (x grows like t²).
pub fn default_x_nodes(grid: &SpectralGrid) -> Vec<f64> {
    x_nodes(0.25, 8.0, 1.04, 0.5 * grid.t_max() * grid.t_max())
}

/// A real field sampled on x_nodes × t_nodes, stored row-major in t.
#[derive(Debug, Clone)]
pub struct RealField {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    /// Imaginary parts left by quadrature, same layout as `values`.
    pub imag: Vec<f64>,
    /// max |Im| / max |Re|.
    pub imag_residue: f64,
}

impl RealField {
    pub fn at(&self, ix: usize, it: usize) -> f64 {
        self.values[it * self.x.len() + ix]
    }
    pub fn row(&self, it: usize) -> &[f64] {
        let nx = self.x.len();
        &self.values[it * nx..(it + 1) * nx]
    }
}

/// (∫₀¹ e^{ws} ds, ∫₀¹ s e^{ws} ds).
fn filon_moments(w: C64) -> (C64, C64) {
    if w.norm() < 0.5 {
        let mut a0 = C64::new(0.0, 0.0);
        let mut a1 = C64::new(0.0, 0.0);
        let mut p = C64::new(1.0, 0.0); // wⁿ/n!
        for n in 0..20 {
            a0 += p / (n + 1) as f64;
            a1 += p / (n + 2) as f64;
            p = p * w / (n + 1) as f64;
        }
        (a0, a1)
    } else {
        let e = w.exp();
        ((e - 1.0) / w, (e * (w - 1.0) + 1.0) / (w * w))
    }
}

/// Weights wⱼ with ∫ f̂(k) e^{−ikx} dk ≈ Σⱼ wⱼ f̂(kⱼ): on each half-line f̂ is replaced by
/// its piecewise-cubic interpolant and the oscillatory factor is integrated exactly; the
/// central gap is linear. For order-1 fields the two halves of the gap carry the |k|^{-1/2}
/// profile, which doubles their weight.
fn filon_weights(grid: &SpectralGrid, panels: &Panels, x: f64, order: u8) -> Vec<C64> {
    let nh = grid.n_half;
    let kp = grid.k_pos();
    let mut w = vec![C64::new(0.0, 0.0); grid.nk()];
    for i in 0..nh - 1 {
        let h = kp[i + 1] - kp[i];
        for sign in [1.0, -1.0] {
            let c0 = -I * (sign * kp[i] * x);
            let c1 = -I * (sign * h * x);
            let (idx, pw) = panels.panel_weights(i, 0, c0, c1);
            for m in 0..4 {
                let j = if sign > 0.0 { nh + idx[m] } else { nh - 1 - idx[m] };
                w[j] += pw[m];
            }
        }
    }
    let k0 = grid.k_nodes[nh - 1];
    let h = grid.k_min - k0;
    let (a0, a1) = filon_moments(-I * x * h);
    let e = C64::from_polar(h, -k0 * x);
    let gap = if order == 1 { 2.0 } else { 1.0 };
    w[nh - 1] += gap * e * (a0 - a1);
    w[nh] += gap * e * a1;
    w
}

/// Trapezoid ∫|f̂(k,t)| dk, with the same gap treatment as `inverse_transform`.
pub fn abs_integral(f: &ModeField, it: usize) -> f64 {
    let g = &f.grid;
    let mut s = 0.0;
    for j in 0..g.nk() - 1 {
        let h = g.k_nodes[j + 1] - g.k_nodes[j];
        let gap = if f.order == 1 && j + 1 == g.n_half { 2.0 } else { 1.0 };
        s += 0.5 * h * gap * (f.raw(j, it).norm() + f.raw(j + 1, it).norm());
    }
    s
}

/// f(x,t) = (1/2π) ∫ e^{−ikx} f̂(k,t) dk on `x` × t_nodes. Order-1 fields are divided by κ
/// first. Errors when the imaginary residue exceeds `IMAG_FAIL`.
pub fn inverse_transform(f: &ModeField, x: &[f64]) -> Result<RealField> {
    let g = &f.grid;
    let nt = g.nt();
    let raw: Vec<Vec<C64>> = (0..g.nk()).map(|ik| (0..nt).map(|it| f.raw(ik, it)).collect()).collect();
    let panels = Panels::new(g.k_pos());
    let cols: Vec<Vec<C64>> = x
        .par_iter()
        .map(|&xv| {
            let w = filon_weights(g, &panels, xv, f.order);
            let mut out = vec![C64::new(0.0, 0.0); nt];
            for (wj, rj) in w.iter().zip(&raw) {
                for (o, r) in out.iter_mut().zip(rj) {
                    *o += wj * r;
                }
            }
            out
        })
        .collect();
    let nx = x.len();
    let mut values = vec![0.0; nx * nt];
    let mut imag = vec![0.0; nx * nt];
    let mut re_max: f64 = 0.0;
    let mut im_max: f64 = 0.0;
    for (ix, col) in cols.iter().enumerate() {
        for (it, v) in col.iter().enumerate() {
            let v = v / (2.0 * std::f64::consts::PI);
            values[it * nx + ix] = v.re;
            imag[it * nx + ix] = v.im;
            re_max = re_max.max(v.re.abs());
            im_max = im_max.max(v.im.abs());
        }
    }
    let imag_residue = if im_max == 0.0 { 0.0 } else { im_max / re_max.max(f64::MIN_POSITIVE) };
    if imag_residue > IMAG_FAIL {
        return Err(Error::Symmetry { residue: imag_residue, limit: IMAG_FAIL });
    }
    Ok(RealField { x: x.to_vec(), t: g.t_nodes.clone(), values, imag, imag_residue })
}

/// FD divergence ∂ₓu + ∂ₜv of reconstructed fields on the uniform part of the x-nodes
/// (|x| ≤ x_half), relative to sup|∂ₓu| there. Returns the residual with the native steps and
/// with x-step and t-spacing doubled; a truncation-limited residual drops by about 2⁴ between
/// the two.
pub fn direct_divergence(u: &RealField, v: &RealField, x_half: f64) -> (f64, f64) {
    let x = &u.x;
    let run = |sx: usize, st: usize| {
        let ts: Vec<f64> = u.t.iter().step_by(st).cloned().collect();
        let its: Vec<usize> = (0..u.t.len()).step_by(st).collect();
        let mut res: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for ix in 2 * sx..x.len() - 2 * sx {
            if x[ix].abs() > x_half {
                continue;
            }
            let h = x[ix + sx] - x[ix];
            if ((x[ix] - x[ix - sx]) - h).abs() > 1e-12 || ((x[ix + 2 * sx] - x[ix + sx]) - h).abs() > 1e-12 {
                continue;
            }
            let vcol: Vec<C64> = its.iter().map(|&it| C64::new(v.at(ix, it), 0.0)).collect();
            for (j, &it) in its.iter().enumerate() {
                let dx = (-u.at(ix + 2 * sx, it) + 8.0 * u.at(ix + sx, it) - 8.0 * u.at(ix - sx, it) + u.at(ix - 2 * sx, it)) / (12.0 * h);
                let dt = crate::solver::fd_t(&ts, &vcol, j).re;
                res = res.max((dx + dt).abs());
                scale = scale.max(dx.abs());
            }
        }
        if scale == 0.0 { res } else { res / scale }
    };
    (run(1, 1), run(2, 2))
}

/// Least-squares slope of ln y against ln x over the points with x in [lo, hi] and y > 0.
pub fn loglog_slope(x: &[f64], y: &[f64], lo: f64, hi: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(&a, &b)| a >= lo && a <= hi && b > 0.0 && b.is_finite())
        .map(|(&a, &b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Some(sxy / sxx)
}

/// Per-t row of the decay certificate.
#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub t: f64,
    /// t^{3/2} sup_x |u|
    pub u: f64,
    /// t^{3/2} sup_x |v|
    pub v: f64,
    /// t³ sup_x |ω|
    pub omega: f64,
    /// t sup_x |xω|
    pub x_omega: f64,
    /// |ω(0,t)|
    pub omega_at_0: f64,
    /// t^e (1/2π) ∫|f̂| dk with the chain exponent e of each field (ω, u, v, ∂ₖω̂).
    pub chain: [f64; 4],
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainEntry {
    pub field: String,
    pub exponent: f64,
    pub sup: f64,
    /// value at t_max over value at the node nearest t_max/2
    pub last_octave_growth: f64,
    /// sup_x |f(x,t)| ≤ (1/2π)∫|f̂(k,t)|dk at every t
    pub pointwise_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayCertificate {
    pub m_u: f64,
    pub m_v: f64,
    pub m_omega: f64,
    pub m_x_omega: f64,
    /// slope of ln|ω(0,t)| over the last decade of t
    pub slope_omega_at_0: Option<f64>,
    /// slope of ln sup_x|ω| over the last decade
    pub slope_sup_omega: Option<f64>,
    /// slope of ln ∫|ω̂|dk over the last decade
    pub slope_int_omega: Option<f64>,
    pub chain: Vec<ChainEntry>,
    /// max over |x| ≤ 4 of |x·ω − (xω from ∂ₖω̂)| relative to sup|xω|
    pub x_omega_consistency: f64,
    pub imag_residue: f64,
    /// `direct_divergence` of (u, v) over |x| ≤ 8: native steps, doubled steps
    pub divergence: (f64, f64),
    #[serde(skip)]
    pub rows: Vec<DecayRow>,
}

/// Chain exponents: for ℬⁿ_{α,p,q} fields ∫|f̂|dk ≲ t^{−min(p+1−n/2, q+2−n)}.
pub fn chain_exponent(p: f64, q: f64, n: u8) -> f64 {
    let n = n as f64;
    (p + 1.0 - 0.5 * n).min(q + 2.0 - n)
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Weighted suprema of u, v, ω and xω over x_nodes × t_nodes, with the Fourier-side chain.
pub fn decay_certificate(state: &SolverState, x: &[f64]) -> Result<DecayCertificate> {
    let d = state
        .derivative
        .as_ref()
        .ok_or_else(|| Error::Params("decay certificate needs the derivative field".into()))?;
    let g = state.omega.grid.clone();
    let xd = d.d.scaled(-I);
    let u = inverse_transform(&state.u, x)?;
    let v = inverse_transform(&state.v, x)?;
    let w = inverse_transform(&state.omega, x)?;
    let xw = inverse_transform(&xd, x)?;
    let ix0 = x.iter().position(|&v| v == 0.0);

    let specs: [(&str, &ModeField, &RealField, f64); 4] = [
        ("omega", &state.omega, &w, chain_exponent(2.5, 1.0, 0)),
        ("u", &state.u, &u, chain_exponent(0.5, 0.0, 0)),
        ("v", &state.v, &v, chain_exponent(0.5, 1.0, 0)),
        ("dk_omega", &d.d, &xw, chain_exponent(1.5, 0.0, 1)),
    ];
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut pointwise_ok = [true; 4];
    let mut rows = Vec::with_capacity(g.nt());
    let mut xcons: f64 = 0.0;
    let mut xscale: f64 = 0.0;
    for (it, &t) in g.t_nodes.iter().enumerate() {
        let mut chain = [0.0; 4];
        for (i, (_, f, _, e)) in specs.iter().enumerate() {
            let int = abs_integral(f, it) / two_pi;
            chain[i] = t.powf(*e) * int;
            // the dk entry bounds xω, the others bound their own field
            let sup = sup_abs(specs[i].2.row(it));
            if sup > int * (1.0 + CHAIN_SLACK) + 1e-300 {
                pointwise_ok[i] = false;
            }
        }
        let xw_row = xw.row(it);
        for (ix, &xv) in x.iter().enumerate() {
            if xv.abs() <= 4.0 {
                xcons = xcons.max((xv * w.at(ix, it) - xw_row[ix]).abs());
            }
            xscale = xscale.max(xw_row[ix].abs());
        }
        rows.push(DecayRow {
            t,
            u: t.powf(1.5) * sup_abs(u.row(it)),
            v: t.powf(1.5) * sup_abs(v.row(it)),
            omega: t.powi(3) * sup_abs(w.row(it)),
            x_omega: t * sup_abs(xw_row),
            omega_at_0: ix0.map_or(f64::NAN, |i| w.at(i, it).abs()),
            chain,
        });
    }
    let tm = g.t_max();
    let ih = g.t_nodes.iter().enumerate().min_by(|a, b| (a.1 - 0.5 * tm).abs().total_cmp(&(b.1 - 0.5 * tm).abs())).unwrap().0;
    let chain = specs
        .iter()
        .enumerate()
        .map(|(i, (name, _, _, e))| {
            let col: Vec<f64> = rows.iter().map(|r| r.chain[i]).collect();
            let last = *col.last().unwrap();
            ChainEntry {
                field: name.to_string(),
                exponent: *e,
                sup: col.iter().fold(0.0f64, |m, v| m.max(*v)),
                last_octave_growth: if col[ih] == 0.0 { 0.0 } else { last / col[ih] },
                pointwise_ok: pointwise_ok[i],
            }
        })
        .collect();
    let ts: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let fit = |vals: Vec<f64>| loglog_slope(&ts, &vals, 0.1 * tm, tm);
    let max_of = |f: fn(&DecayRow) -> f64| rows.iter().map(f).fold(0.0f64, f64::max);
    Ok(DecayCertificate {
        m_u: max_of(|r| r.u),
        m_v: max_of(|r| r.v),
        m_omega: max_of(|r| r.omega),
        m_x_omega: max_of(|r| r.x_omega),
        slope_omega_at_0: fit(rows.iter().map(|r| r.omega_at_0).collect()),
        slope_sup_omega: fit(rows.iter().map(|r| r.omega / r.t.powi(3)).collect()),
        slope_int_omega: fit(rows.iter().map(|r| r.chain[0] / r.t.powi(3)).collect()),
        chain,
        x_omega_consistency: if xscale == 0.0 { 0.0 } else { xcons / xscale },
        imag_residue: [u.imag_residue, v.imag_residue, w.imag_residue, xw.imag_residue].into_iter().fold(0.0, f64::max),
        divergence: direct_divergence(&u, &v, 8.0),
        rows,
    })
}
