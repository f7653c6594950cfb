//! Convolution in k at fixed t: `(f∗g)(k) = (1/2π) ∫ f(k−x) g(x) dx`.
//!
//! The line is split at x = k/2. On each half the factor evaluated near its own origin is
//! taken on its native nodes (which resolve a kink or |x|^{-1/2} singularity there) and the
//! other factor is cubic-interpolated in log|z| at z = k − x ≥ k/2. Order-1 factors enter as
//! h = |x|^{1/2} ĝ, with product weights for |x|^{-1/2} on every cell and the exact primitive
//! over the central gap. Targets k < 0 are handled by reflecting both factors.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spectral::{kap, ModeField, SpectralGrid, C64};

/// Lagrange interpolation points in log|z|.
const STENCIL: usize = 6;

#[derive(Debug, Clone, Copy)]
struct Interp {
    /// Full-array indices of `STENCIL` consecutive positive nodes.
    idx: [usize; STENCIL],
    c: [f64; STENCIL],
    inv_sqrt: f64,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    node: usize,
    /// `w[own order][other order]`; an order-1 native factor enters as h.
    w: [[f64; 2]; 2],
    other: Interp,
}

#[derive(Debug, Clone, Copy)]
struct EndEntry {
    /// Indexed by the native order only.
    w: [f64; 2],
    own: Interp,
    other: Interp,
}

#[derive(Debug, Clone, Default)]
struct PlanRow {
    entries: Vec<Entry>,
    end: Option<EndEntry>,
}

/// Precomputed weights and stencils for one grid.
#[derive(Debug, Clone)]
pub struct ConvPlan {
    grid: Arc<SpectralGrid>,
    rows: Vec<PlanRow>,
}

/// Weights at s-offsets (−2, −1, 0, δ) (in units of the log step) of the integral over
/// [0, δ] of the cubic through those four points.
fn partial_cubic_weights(delta: f64) -> [f64; 4] {
    let nodes = [-2.0, -1.0, 0.0, delta];
    let mut w = [0.0; 4];
    for m in 0..4 {
        // monomial coefficients of the m-th Lagrange basis polynomial
        let mut c = [1.0, 0.0, 0.0, 0.0];
        let mut denom = 1.0;
        for l in 0..4 {
            if l != m {
                let mut next = [0.0; 4];
                for p in 0..4 {
                    next[p] -= nodes[l] * c[p];
                    if p + 1 < 4 {
                        next[p + 1] += c[p];
                    }
                }
                c = next;
                denom *= nodes[m] - nodes[l];
            }
        }
        w[m] = (0..4).map(|p| c[p] * delta.powi(p as i32 + 1) / (p + 1) as f64).sum::<f64>() / denom;
    }
    w
}

fn interp_at(grid: &SpectralGrid, z: f64) -> Option<Interp> {
    if z > grid.k_max * (1.0 + 1e-12) || z <= 0.0 {
        return None;
    }
    let n = grid.n_half;
    let s = (z / grid.k_min).ln() / grid.log_ratio;
    let p0 = ((s.floor() as i64) - (STENCIL as i64 / 2 - 1)).clamp(0, (n - STENCIL) as i64) as usize;
    let mut c = [0.0; STENCIL];
    let mut idx = [0; STENCIL];
    for m in 0..STENCIL {
        idx[m] = n + p0 + m;
        let mut v = 1.0;
        for l in 0..STENCIL {
            if l != m {
                v *= (s - (p0 + l) as f64) / (m as f64 - l as f64);
            }
        }
        c[m] = v;
    }
    Some(Interp { idx, c, inv_sqrt: 1.0 / z.sqrt() })
}

impl ConvPlan {
    pub fn new(grid: &Arc<SpectralGrid>) -> Self {
        assert!(grid.n_half >= STENCIL, "convolution needs at least {STENCIL} positive k-nodes");
        let rows = (0..grid.n_half).into_par_iter().map(|p| Self::build_row(grid, p)).collect();
        ConvPlan { grid: grid.clone(), rows }
    }

    fn build_row(grid: &SpectralGrid, p: usize) -> PlanRow {
        let n = grid.n_half;
        let x = &grid.k_nodes;
        let lr = grid.log_ratio;
        let k = x[n + p];
        let half = 0.5 * k;
        let kmin = grid.k_min;
        // weights in s = log|x|, later multiplied by the Jacobian |x| (order 0) or
        // |x|^{1/2} (order 1, acting on h)
        let mut sw = vec![0.0; grid.nk()];

        for (j, w) in sw.iter_mut().enumerate().take(n) {
            *w = if j == 0 || j == n - 1 { 0.5 * lr } else { lr };
        }
        let last = (0..n).take_while(|&q| x[n + q] < half).last();
        let mut end = None;
        if let Some(l) = last {
            for q in 0..=l {
                sw[n + q] = if q == 0 || q == l { 0.5 * lr } else { lr };
            }
            if l == 0 {
                sw[n] = 0.0;
            }
            let delta = ((half / x[n + l]).ln() / lr).min(1.0);
            let mut w_end = 0.0;
            if l >= 2 {
                sw[n + l] -= lr / 8.0;
                sw[n + l - 1] += lr / 6.0;
                sw[n + l - 2] -= lr / 24.0;
                if delta > 1e-9 {
                    let pw = partial_cubic_weights(delta);
                    sw[n + l - 2] += lr * pw[0];
                    sw[n + l - 1] += lr * pw[1];
                    sw[n + l] += lr * pw[2];
                    w_end = lr * pw[3];
                }
            } else if delta > 1e-9 {
                sw[n + l] += 0.5 * lr * delta;
                w_end = 0.5 * lr * delta;
            }
            if w_end != 0.0 {
                let at_half = interp_at(grid, half).expect("k/2 lies inside the grid");
                end = Some(EndEntry { w: [w_end * half, w_end * half.sqrt()], own: at_half, other: at_half });
            }
        }

        let mut entries = Vec::new();
        for j in 0..grid.nk() {
            if sw[j] == 0.0 {
                continue;
            }
            let ax = x[j].abs();
            if let Some(other) = interp_at(grid, k - x[j]) {
                let w = [sw[j] * ax, sw[j] * ax.sqrt()];
                entries.push(Entry { node: j, w: [[w[0]; 2], [w[1]; 2]], other });
            }
        }
        // central gap [−k_min, min(k/2, k_min)]: the regular part of each factor is frozen
        // (native at ±k_min, other at z = k) and the |·|^{-1/2} singularity, whichever
        // factor carries it, is integrated exactly
        if let Some(other) = interp_at(grid, k) {
            let c = half.min(kmin);
            let sk = k.sqrt();
            let minus = [[kmin, 2.0 * (sk * (k + kmin).sqrt() - k)], [2.0 * kmin.sqrt(), 0.0]];
            let plus = [[c, 2.0 * (k - sk * (k - c).sqrt())], [2.0 * c.sqrt(), 0.0]];
            entries.push(Entry { node: n - 1, w: minus, other });
            entries.push(Entry { node: n, w: plus, other });
        }
        PlanRow { entries, end }
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.grid
    }

    /// One half of the split for a positive target: `own` on native nodes, `other`
    /// interpolated. Arrays are k-major with `m` columns.
    #[allow(clippy::too_many_arguments)]
    fn half_line(
        row: &PlanRow,
        own: &[C64],
        own_order: usize,
        other: &[C64],
        other_order: usize,
        m: usize,
        acc: &mut [C64],
    ) {
        let eval = |it: &Interp, data: &[C64], order: usize, col: usize| -> C64 {
            let mut v = C64::new(0.0, 0.0);
            for q in 0..STENCIL {
                v += data[it.idx[q] * m + col] * it.c[q];
            }
            if order == 1 {
                v * it.inv_sqrt
            } else {
                v
            }
        };
        for e in &row.entries {
            let w = e.w[own_order][other_order];
            for col in 0..m {
                acc[col] += w * own[e.node * m + col] * eval(&e.other, other, other_order, col);
            }
        }
        if let Some(e) = &row.end {
            let w = e.w[own_order];
            for col in 0..m {
                // the native factor's endpoint value is interpolated too (h stays h)
                let a = eval(&e.own, own, 0, col);
                acc[col] += w * a * eval(&e.other, other, other_order, col);
            }
        }
    }

    /// `native` values for quadrature: raw f̂ for order 0, h = |k|^{1/2} f̂ for order 1.
    fn native_values(field: &ModeField, cols: &[usize]) -> Vec<C64> {
        let g = &field.grid;
        let nt = g.nt();
        let m = cols.len();
        let mut out = vec![C64::new(0.0, 0.0); g.nk() * m];
        for ik in 0..g.nk() {
            let k = g.k_nodes[ik];
            let scale = match field.order {
                0 => C64::new(1.0, 0.0),
                _ => k.abs().sqrt() / kap(k),
            };
            for (c, &it) in cols.iter().enumerate() {
                out[ik * m + c] = field.values[ik * nt + it] * scale;
            }
        }
        out
    }

    fn reflect(data: &[C64], nk: usize, m: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); data.len()];
        for ik in 0..nk {
            out[ik * m..(ik + 1) * m].copy_from_slice(&data[(nk - 1 - ik) * m..(nk - ik) * m]);
        }
        out
    }

    /// Convolution on the t-columns `cols`; returns k-major values with `cols.len()` columns.
    fn run(&self, f: &ModeField, g: &ModeField, cols: &[usize]) -> Result<Vec<C64>> {
        if f.order != 0 {
            return Err(Error::OrderMismatch { field: f.order, expected: 0 });
        }
        if g.order > 1 {
            return Err(Error::OrderMismatch { field: g.order, expected: 1 });
        }
        f.same_grid(g)?;
        if *f.grid != *self.grid {
            return Err(Error::GridMismatch("plan built for another grid".into()));
        }
        let nk = self.grid.nk();
        let n = self.grid.n_half;
        let m = cols.len();
        let fv = Self::native_values(f, cols);
        let gv = Self::native_values(g, cols);
        let fr = Self::reflect(&fv, nk, m);
        let gr = Self::reflect(&gv, nk, m);
        let go = g.order as usize;
        let per_k: Vec<Vec<C64>> = (0..nk)
            .into_par_iter()
            .map(|ik| {
                let (p, fa, ga) = if ik >= n { (ik - n, &fv, &gv) } else { (n - 1 - ik, &fr, &gr) };
                let row = &self.rows[p];
                let mut acc = vec![C64::new(0.0, 0.0); m];
                Self::half_line(row, ga, go, fa, 0, m, &mut acc);
                Self::half_line(row, fa, 0, ga, go, m, &mut acc);
                for a in acc.iter_mut() {
                    *a /= 2.0 * PI;
                }
                acc
            })
            .collect();
        Ok(per_k.into_iter().flatten().collect())
    }

    /// f̂∗ĝ on every t-node; f must have order 0, g order 0 or 1. Result has order 0.
    pub fn convolve(&self, f: &ModeField, g: &ModeField) -> Result<ModeField> {
        let cols: Vec<usize> = (0..self.grid.nt()).collect();
        let values = self.run(f, g, &cols)?;
        Ok(ModeField { grid: self.grid.clone(), order: 0, values })
    }

    /// f̂∗ĝ at the single t-node `it`, indexed by k.
    pub fn convolve_at(&self, f: &ModeField, g: &ModeField, it: usize) -> Result<Vec<C64>> {
        if it >= self.grid.nt() {
            return Err(Error::Params(format!("t index {it} out of range")));
        }
        self.run(f, g, &[it])
    }
}

/// One-shot convolution (builds a plan).
pub fn convolve(f: &ModeField, g: &ModeField) -> Result<ModeField> {
    ConvPlan::new(&f.grid).convolve(f, g)
}

/// One-shot convolution at a single t-node.
pub fn convolve_at(f: &ModeField, g: &ModeField, it: usize) -> Result<Vec<C64>> {
    ConvPlan::new(&f.grid).convolve_at(f, g, it)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use super::*;
    use crate::spectral::mu_weight;

    fn grid(n: usize) -> Arc<SpectralGrid> {
        Arc::new(SpectralGrid::new(1e-6, 32.0, n, 16.0, 6).unwrap())
    }

    /// Tanh-sinh oracle on pieces whose ends carry the kinks and singularities.
    fn de(f: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
        breaks
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| quadrature::double_exponential::integrate(&f, w[0], w[1], 1e-13).integral)
            .sum()
    }

    #[test]
    fn partial_weights_exact_for_cubics() {
        for delta in [1e-3, 0.4, 1.0] {
            let w = partial_cubic_weights(delta);
            let nodes = [-2.0, -1.0, 0.0, delta];
            for p in 0..4 {
                let q: f64 = (0..4).map(|m| w[m] * f64::powi(nodes[m], p)).sum();
                let exact = delta.powi(p + 1) / (p + 1) as f64;
                assert!((q - exact).abs() < 1e-14, "delta={delta} p={p}");
            }
        }
    }

    #[test]
    fn zero_factor_gives_zero() {
        let g = grid(48);
        let f = ModeField::from_fn(&g, 0, |k, t| C64::new(mu_weight(3.0, 1.0, k, t), 0.0));
        let z = ModeField::zeros(&g, 0);
        assert!(convolve(&f, &z).unwrap().sup_abs() == 0.0);
        let z1 = ModeField::zeros(&g, 1);
        assert!(convolve(&f, &z1).unwrap().sup_abs() == 0.0);
    }

    #[test]
    fn even_positive_peaked() {
        let g = grid(64);
        let f = ModeField::from_fn(&g, 0, |k, t| C64::new(mu_weight(3.0, 1.0, k, t), 0.0));
        let c = convolve_at(&f, &f, 0).unwrap();
        let nk = g.nk();
        let n = g.n_half;
        for ik in 0..nk {
            assert!(c[ik].re > 0.0);
            assert!((c[ik] - c[nk - 1 - ik]).norm() < 1e-14 * c[ik].norm());
        }
        for q in 1..n {
            assert!(c[n + q].re <= c[n].re * (1.0 + 1e-8));
        }
    }

    #[test]
    fn order_zero_matches_oracle() {
        let g = grid(128);
        let t = g.t_nodes[3];
        let a = |k: f64| mu_weight(3.0, 1.0, k, t);
        let b = |k: f64| mu_weight(3.0, 2.0, k, t);
        let f = ModeField::from_fn(&g, 0, |k, tt| C64::new(mu_weight(3.0, 1.0, k, tt), 0.0));
        let h = ModeField::from_fn(&g, 0, |k, tt| C64::new(mu_weight(3.0, 2.0, k, tt), 0.0));
        let c = convolve_at(&f, &h, 3).unwrap();
        let km = g.k_max;
        for &ik in &[g.n_half, g.n_half + 60, g.n_half + 100, 10] {
            let k = g.k_nodes[ik];
            let lo = (k - km).max(-km);
            let hi = (k + km).min(km);
            let exact = de(|x| a(k - x) * b(x), &[lo, k.min(0.0), k.max(0.0), hi]) / (2.0 * PI);
            assert!((c[ik].re - exact).abs() < 1e-4 * exact, "k={k}: {} vs {exact}", c[ik].re);
        }
    }

    #[test]
    fn order_one_matches_oracle() {
        let g = grid(128);
        let t = g.t_nodes[2];
        let a = |k: f64| mu_weight(3.0, 1.0, k, t);
        // stored κ ĝ = μ₃,₂, so raw ĝ = μ/κ with the |k|^{-1/2} singularity
        let f = ModeField::from_fn(&g, 0, |k, tt| C64::new(mu_weight(3.0, 1.0, k, tt), 0.0));
        let h = ModeField::from_fn(&g, 1, |k, tt| C64::new(mu_weight(3.0, 2.0, k, tt), 0.0));
        let c = convolve_at(&f, &h, 2).unwrap();
        let km = g.k_max;
        for &ik in &[g.n_half, g.n_half + 50, g.n_half + 110, 20] {
            let k = g.k_nodes[ik];
            let lo = (k - km).max(-km);
            let hi = (k + km).min(km);
            let br = [lo, k.min(0.0), k.max(0.0), hi];
            let gre = |x: f64| (mu_weight(3.0, 2.0, x, t) / kap(x)).re;
            let gim = |x: f64| (mu_weight(3.0, 2.0, x, t) / kap(x)).im;
            let ex = C64::new(de(|x| a(k - x) * gre(x), &br), de(|x| a(k - x) * gim(x), &br)) / (2.0 * PI);
            assert!((c[ik] - ex).norm() < 1e-4 * ex.norm(), "k={k}: {} vs {ex}", c[ik]);
        }
    }

    #[test]
    fn refinement_oracle_at_smallest_k() {
        let coarse = grid(96);
        let fine = Arc::new(SpectralGrid::new(1e-6, 32.0, 4 * 96 - 3, 16.0, 6).unwrap());
        let run = |g: &Arc<SpectralGrid>| {
            let f = ModeField::from_fn(g, 0, |k, t| C64::new(mu_weight(3.0, 1.0, k, t), 0.0));
            let h = ModeField::from_fn(g, 0, |k, t| C64::new(mu_weight(3.0, 2.0, k, t), 0.0));
            // t = 4 is not a node of this t-grid; use the node nearest to it
            let it = g.t_nodes.iter().enumerate().min_by(|a, b| (a.1 - 4.0).abs().total_cmp(&(b.1 - 4.0).abs())).unwrap().0;
            (convolve_at(&f, &h, it).unwrap()[g.n_half], g.t_nodes[it])
        };
        let (c, tc) = run(&coarse);
        let (r, tr) = run(&fine);
        assert_eq!(tc, tr);
        assert!((c - r).norm() < 5e-3 * r.norm(), "{c} vs {r}");
    }

    #[test]
    fn commutative_for_order_zero() {
        let g = grid(48);
        let f = ModeField::from_fn(&g, 0, |k, t| C64::new(mu_weight(3.0, 1.0, k, t), 0.1 * k / t));
        let h = ModeField::from_fn(&g, 0, |k, t| C64::new((-k * k * t).exp(), (-k.abs()).exp() * k));
        let a = convolve(&f, &h).unwrap();
        let b = convolve(&h, &f).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).norm() <= 1e-12 * x.norm().max(1e-300));
        }
    }

    #[test]
    fn linear_in_second_factor() {
        let g = grid(40);
        let f = ModeField::from_fn(&g, 0, |k, t| C64::new(mu_weight(3.0, 1.0, k, t), 0.0));
        let x = ModeField::from_fn(&g, 1, |k, t| C64::new(mu_weight(2.0, 2.0, k, t), k));
        let y = ModeField::from_fn(&g, 1, |k, t| C64::new((-k.abs() * t).exp(), 0.0));
        let s = C64::new(0.7, -1.3);
        let lhs = convolve(&f, &x.axpy(s, &y)).unwrap();
        let rhs = convolve(&f, &x).unwrap().axpy(s, &convolve(&f, &y).unwrap());
        let scale = lhs.sup_abs();
        assert!(lhs.sup_diff(&rhs) < 1e-13 * scale);
    }

    #[test]
    fn reality_preserved() {
        let g = grid(40);
        let f = ModeField::from_fn(&g, 0, |k, t| C64::new((-k * k).exp(), k / (1.0 + k * k * t)));
        let h = ModeField::from_fn(&g, 1, |k, t| kap(k) * C64::new((-k.abs() * t).exp(), 0.0));
        let c = convolve(&f, &h).unwrap();
        assert!(c.reality_residue() < 1e-12);
    }

    #[test]
    fn rejects_bad_orders() {
        let g = grid(20);
        let f1 = ModeField::zeros(&g, 1);
        assert!(convolve(&f1, &f1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn bilinear_and_symmetric(w1 in 0.2f64..3.0, w2 in 0.2f64..3.0, ar in -2.0f64..2.0, ai in -2.0f64..2.0) {
            let g = grid(24);
            let f = ModeField::from_fn(&g, 0, |k, t| C64::new((-w1 * k * k * t).exp(), 0.0));
            let h = ModeField::from_fn(&g, 0, |k, t| C64::new(mu_weight(3.0, 1.0, k * w2, t), 0.0));
            let y = ModeField::from_fn(&g, 0, |k, t| C64::new((-k.abs() * t).exp(), 0.0));
            let a = C64::new(ar, ai);
            let fh = convolve(&f, &h).unwrap();
            prop_assert!(fh.sup_diff(&convolve(&h, &f).unwrap()) <= 1e-12 * fh.sup_abs());
            let lhs = convolve(&f, &h.axpy(a, &y)).unwrap();
            let rhs = fh.axpy(a, &convolve(&f, &y).unwrap());
            prop_assert!(lhs.sup_diff(&rhs) <= 1e-13 * lhs.sup_abs().max(1e-300));
        }
    }
}
