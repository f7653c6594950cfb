//! Scalar symbols (κ, Λ₋, μ), the spectral grid, mode fields and weighted sup-norms.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::report::BoundReport;

pub type C64 = Complex64;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// κ = √(k² − ik), principal branch.
pub fn kappa(k: f64) -> Result<C64> {
    if k == 0.0 || !k.is_finite() {
        return Err(Error::Domain(format!("kappa undefined at k = {k}")));
    }
    Ok(kap(k))
}

#[inline]
pub(crate) fn kap(k: f64) -> C64 {
    C64::new(k * k, -k).sqrt()
}

/// ∂ₖκ = (2k − i)/(2κ).
pub fn dk_kappa(k: f64) -> Result<C64> {
    let kk = kappa(k)?;
    Ok(C64::new(2.0 * k, -1.0) / (2.0 * kk))
}

/// Λ₋ = −Re κ in closed form.
pub fn lambda_minus(k: f64) -> f64 {
    let k2 = k * k;
    -0.5 * (2.0 * (k2 + k2 * k2).sqrt() + 2.0 * k2).sqrt()
}

/// μ_{α,r}(k,t) = 1/(1 + (|k| tʳ)^α).
pub fn mu_weight(alpha: f64, r: f64, k: f64, t: f64) -> f64 {
    let z = k.abs() * t.powf(r);
    if z == 0.0 {
        return 1.0;
    }
    1.0 / (1.0 + z.powf(alpha))
}

/// Default grid parameters.
pub const DEFAULT_K_MIN: f64 = 1e-8;
pub const DEFAULT_K_MAX: f64 = 64.0;
pub const DEFAULT_NK_HALF: usize = 256;
pub const DEFAULT_T_MAX: f64 = 128.0;
pub const DEFAULT_NT: usize = 256;

/// Symmetric log-graded k nodes × geometric t nodes starting at t = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    pub k_nodes: Vec<f64>,
    pub t_nodes: Vec<f64>,
    pub k_weights: Vec<f64>,
    pub t_weights: Vec<f64>,
    pub k_min: f64,
    pub k_max: f64,
    pub n_half: usize,
    /// ln of the ratio between consecutive positive k nodes.
    pub log_ratio: f64,
}

impl SpectralGrid {
    pub fn new(k_min: f64, k_max: f64, n_half: usize, t_max: f64, n_t: usize) -> Result<Self> {
        if !(k_min > 0.0 && k_max > k_min) {
            return Err(Error::Params(format!("need 0 < k_min < k_max, got {k_min}, {k_max}")));
        }
        if n_half < 4 || n_t < 4 {
            return Err(Error::Params("need at least 4 nodes per k half-line and in t".into()));
        }
        if !(t_max > 1.0) {
            return Err(Error::Params(format!("t_max must exceed 1, got {t_max}")));
        }
        let log_ratio = (k_max / k_min).ln() / (n_half - 1) as f64;
        let pos: Vec<f64> = (0..n_half)
            .map(|j| if j == n_half - 1 { k_max } else { k_min * (log_ratio * j as f64).exp() })
            .collect();
        let mut k_nodes: Vec<f64> = pos.iter().rev().map(|&k| -k).collect();
        k_nodes.extend_from_slice(&pos);
        let lt = t_max.ln();
        let t_nodes: Vec<f64> = (0..n_t)
            .map(|j| match j {
                0 => 1.0,
                _ if j == n_t - 1 => t_max,
                _ => (lt * j as f64 / (n_t - 1) as f64).exp(),
            })
            .collect();
        // the central gap [-k_min, k_min] is bridged by the trapezoid cell across it
        let k_weights = trapezoid_weights(&k_nodes);
        let t_weights = trapezoid_weights(&t_nodes);
        Ok(SpectralGrid { k_nodes, t_nodes, k_weights, t_weights, k_min, k_max, n_half, log_ratio })
    }

    pub fn default_grid() -> Self {
        Self::new(DEFAULT_K_MIN, DEFAULT_K_MAX, DEFAULT_NK_HALF, DEFAULT_T_MAX, DEFAULT_NT)
            .expect("default grid parameters are valid")
    }

    /// Same extent, 2n−1 nodes on each axis, so the old nodes are a subset.
    pub fn refined(&self) -> Self {
        Self::new(self.k_min, self.k_max, 2 * self.n_half - 1, self.t_max(), 2 * self.nt() - 1)
            .expect("refinement of a valid grid is valid")
    }

    pub fn nk(&self) -> usize {
        self.k_nodes.len()
    }
    pub fn nt(&self) -> usize {
        self.t_nodes.len()
    }
    pub fn t_max(&self) -> f64 {
        *self.t_nodes.last().unwrap()
    }
    /// Positive half-line nodes, ascending.
    pub fn k_pos(&self) -> &[f64] {
        &self.k_nodes[self.n_half..]
    }
    /// Full-array index of the mirror node −k.
    pub fn mirror(&self, ik: usize) -> usize {
        self.nk() - 1 - ik
    }
    pub fn kappas(&self) -> Vec<C64> {
        self.k_nodes.iter().map(|&k| kap(k)).collect()
    }
}

pub(crate) fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = x[i + 1] - x[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Names the space ℬⁿ_{α,p,q}; `q = ∞` drops the μ̃ term.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct WeightEnvelope {
    pub alpha: f64,
    pub p: f64,
    pub q: f64,
    pub n: u8,
}

impl WeightEnvelope {
    pub fn new(alpha: f64, p: f64, q: f64, n: u8) -> Self {
        WeightEnvelope { alpha, p, q, n }
    }

    /// t^{-p} μ̄_α + t^{-q} μ̃_α.
    pub fn eval(&self, k: f64, t: f64) -> f64 {
        let bar = t.powf(-self.p) * mu_weight(self.alpha, 1.0, k, t);
        if self.q.is_infinite() {
            return bar;
        }
        bar + t.powf(-self.q) * mu_weight(self.alpha, 2.0, k, t)
    }
}

/// Sum of the three envelopes of 𝒟¹_{α−1,p,q} = ℬ¹_{α,p,q} × ℬ¹_{α−½,p+½,q+½} × ℬ¹_{α−1,p+½,q+1}.
pub fn d1_envelope(alpha: f64, p: f64, q: f64, k: f64, t: f64) -> f64 {
    WeightEnvelope::new(alpha, p, q, 1).eval(k, t)
        + WeightEnvelope::new(alpha - 0.5, p + 0.5, q + 0.5, 1).eval(k, t)
        + WeightEnvelope::new(alpha - 1.0, p + 0.5, q + 1.0, 1).eval(k, t)
}

/// Complex field on the grid carrying singularity order n; stores κⁿ·f̂, k-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeField {
    pub grid: Arc<SpectralGrid>,
    pub order: u8,
    pub values: Vec<C64>,
}

impl ModeField {
    pub fn zeros(grid: &Arc<SpectralGrid>, order: u8) -> Self {
        ModeField { grid: grid.clone(), order, values: vec![C64::new(0.0, 0.0); grid.nk() * grid.nt()] }
    }

    /// Build from the regularised values κⁿ f̂ given by `f(k, t)`.
    pub fn from_fn(grid: &Arc<SpectralGrid>, order: u8, f: impl Fn(f64, f64) -> C64 + Sync) -> Self {
        let nt = grid.nt();
        let values: Vec<C64> = (0..grid.nk() * nt)
            .into_par_iter()
            .map(|idx| f(grid.k_nodes[idx / nt], grid.t_nodes[idx % nt]))
            .collect();
        ModeField { grid: grid.clone(), order, values }
    }

    /// Assemble from per-k columns (each of length nt).
    pub fn from_columns(grid: &Arc<SpectralGrid>, order: u8, cols: Vec<Vec<C64>>) -> Self {
        debug_assert_eq!(cols.len(), grid.nk());
        let values = cols.into_iter().flatten().collect::<Vec<_>>();
        debug_assert_eq!(values.len(), grid.nk() * grid.nt());
        ModeField { grid: grid.clone(), order, values }
    }

    #[inline]
    pub fn at(&self, ik: usize, it: usize) -> C64 {
        self.values[ik * self.grid.nt() + it]
    }
    pub fn column(&self, ik: usize) -> &[C64] {
        let nt = self.grid.nt();
        &self.values[ik * nt..(ik + 1) * nt]
    }
    /// Values across k at fixed t.
    pub fn row(&self, it: usize) -> Vec<C64> {
        let nt = self.grid.nt();
        (0..self.grid.nk()).map(|ik| self.values[ik * nt + it]).collect()
    }
    /// Raw f̂ = stored / κⁿ.
    pub fn raw(&self, ik: usize, it: usize) -> C64 {
        let v = self.at(ik, it);
        match self.order {
            0 => v,
            n => v / kap(self.grid.k_nodes[ik]).powu(n as u32),
        }
    }
    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }
    pub fn same_grid(&self, other: &ModeField) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch("fields live on different grids".into()))
        }
    }
    pub fn scaled(&self, s: C64) -> ModeField {
        ModeField { grid: self.grid.clone(), order: self.order, values: self.values.iter().map(|v| v * s).collect() }
    }
    /// self + s·other (orders must agree).
    pub fn axpy(&self, s: C64, other: &ModeField) -> ModeField {
        assert_eq!(self.order, other.order, "axpy on fields of different order");
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect();
        ModeField { grid: self.grid.clone(), order: self.order, values }
    }
    pub fn sup_diff(&self, other: &ModeField) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }
    /// Convert to order-0 raw storage, or lift order-0 storage to order n.
    pub fn with_order(&self, order: u8) -> ModeField {
        if order == self.order {
            return self.clone();
        }
        let nt = self.grid.nt();
        let kappas = self.grid.kappas();
        let shift = order as i32 - self.order as i32;
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(idx, v)| v * kappas[idx / nt].powi(shift))
            .collect();
        ModeField { grid: self.grid.clone(), order, values }
    }
    /// max |f̂(−k) − conj f̂(k)| relative to sup|f̂|.
    pub fn reality_residue(&self) -> f64 {
        let nt = self.grid.nt();
        let nk = self.grid.nk();
        let mut m: f64 = 0.0;
        for ik in 0..nk / 2 {
            let jk = self.grid.mirror(ik);
            for it in 0..nt {
                m = m.max((self.values[ik * nt + it] - self.values[jk * nt + it].conj()).norm());
            }
        }
        let s = self.sup_abs();
        if s == 0.0 { 0.0 } else { m / s }
    }
}

/// Fitted norm with the count of nodes skipped for envelope underflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormFit {
    pub norm: f64,
    pub excluded: usize,
}

const ENVELOPE_TINY: f64 = 1e-300;

/// Grid max of |κⁿ f̂| / envelope.
pub fn weighted_norm(f: &ModeField, env: &WeightEnvelope) -> Result<NormFit> {
    if f.order != env.n {
        return Err(Error::OrderMismatch { field: f.order, expected: env.n });
    }
    Ok(fit_norm(f, |k, t| env.eval(k, t)))
}

/// Fitted 𝒟¹_{α−1,p,q} norm of an order-1 field: |κ f̂| over the summed component envelopes.
pub fn d1_norm(f: &ModeField, alpha: f64, p: f64, q: f64) -> Result<NormFit> {
    if f.order != 1 {
        return Err(Error::OrderMismatch { field: f.order, expected: 1 });
    }
    Ok(fit_norm(f, |k, t| d1_envelope(alpha, p, q, k, t)))
}

fn fit_norm(f: &ModeField, env: impl Fn(f64, f64) -> f64) -> NormFit {
    let g = &f.grid;
    let nt = g.nt();
    let mut norm: f64 = 0.0;
    let mut excluded = 0;
    for (ik, &k) in g.k_nodes.iter().enumerate() {
        for (it, &t) in g.t_nodes.iter().enumerate() {
            let e = env(k, t);
            if !(e > ENVELOPE_TINY) {
                excluded += 1;
                continue;
            }
            norm = norm.max(f.values[ik * nt + it].norm() / e);
        }
    }
    NormFit { norm, excluded }
}

/// Checks the three κ inequality chains at every k node.
pub fn kappa_inequality_report(grid: &SpectralGrid) -> BoundReport {
    const SLACK: f64 = 1e-12;
    let c34 = 2f64.powf(0.75);
    let mut rep = BoundReport::new("kappa_inequalities", &["k", "chain_ratio"]);
    let mut violations = 0usize;
    let mut best_sqrt: f64 = 0.0;
    let mut chain_max: f64 = 0.0;
    for &k in &grid.k_nodes {
        let a = k.abs();
        let mk = kap(k).norm();
        let mid = a.sqrt() + a;
        let links = [mk / mid, mid / (c34 * mk), (c34 * mk) / (c34 * (1.0 + a))];
        let worst = links.iter().cloned().fold(0.0, f64::max);
        if worst > 1.0 + SLACK {
            violations += 1;
        }
        chain_max = chain_max.max(worst);
        best_sqrt = best_sqrt.max(a.sqrt() / mk);
        let lam = lambda_minus(k);
        for sigma in [0.0, 1.0, 10.0] {
            let lhs = (lam * sigma).exp();
            let rhs = (-a * sigma).exp();
            if lhs > rhs * (1.0 + SLACK) {
                violations += 1;
            }
        }
        rep.push(vec![k, worst]);
    }
    rep.constant("bk1_max_link_ratio", chain_max);
    rep.constant("sqrt_k_over_kappa_best_constant", best_sqrt);
    rep.constant("violations", violations as f64);
    rep.pass = violations == 0;
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kappa_modulus_at_one() {
        // oracle: (k² + k⁴)^{1/4}
        let k = kappa(1.0).unwrap();
        assert!((k.norm() - 2f64.powf(0.25)).abs() < 1e-15);
        assert!((k.norm() - 1.189207115002721).abs() < 1e-12);
    }

    #[test]
    fn kappa_real_part_matches_lambda() {
        // oracle: ½√(2√2 + 2) evaluated independently
        let expected = 0.5 * (2.0 * 2f64.sqrt() + 2.0).sqrt();
        assert!((kappa(1.0).unwrap().re - expected).abs() < 1e-15);
        assert!((expected - 1.098684113467810).abs() < 1e-12);
        assert!((lambda_minus(1.0) + expected).abs() < 1e-15);
    }

    #[test]
    fn kappa_rejects_zero() {
        assert!(kappa(0.0).is_err());
        assert!(dk_kappa(0.0).is_err());
    }

    #[test]
    fn kappa_small_k_scaling() {
        for k in [1e-6, 1e-8, 1e-10] {
            let r = kappa(k).unwrap().norm() / k.sqrt();
            assert!((r - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn dk_kappa_at_one() {
        let k = kappa(1.0).unwrap();
        let d = dk_kappa(1.0).unwrap();
        assert!((d - C64::new(2.0, -1.0) / (2.0 * k)).norm() < 1e-15);
    }

    #[test]
    fn dk_kappa_finite_difference() {
        let h = 1e-6;
        for k in [-20.0, -2.0, -0.3, -0.01, 0.01, 0.05, 0.7, 3.0, 40.0] {
            let fd = (kappa(k + h).unwrap() - kappa(k - h).unwrap()) / (2.0 * h);
            let d = dk_kappa(k).unwrap();
            assert!((d - fd).norm() < 1e-8 * (1.0 + k.abs()) * d.norm().max(1.0), "k={k}");
        }
    }

    #[test]
    fn lambda_zero_and_grid_sweep() {
        assert_eq!(lambda_minus(0.0), 0.0);
        let g = SpectralGrid::default_grid();
        for &k in &g.k_nodes {
            let l = lambda_minus(k);
            assert!(l.abs() >= k.abs());
            assert!((l + kap(k).re).abs() <= 1e-13 * l.abs());
            assert_eq!(l, lambda_minus(-k));
        }
    }

    #[test]
    fn mu_examples() {
        assert_eq!(mu_weight(2.0, 1.0, 1.0, 1.0), 0.5);
        assert_eq!(mu_weight(3.7, 2.0, 0.0, 9.0), 1.0);
        assert!((mu_weight(3.0, 2.0, 0.5, 4.0) - 1.0 / 513.0).abs() < 1e-17);
    }

    #[test]
    fn grid_invariants() {
        let g = SpectralGrid::default_grid();
        assert_eq!(g.nk(), 512);
        assert_eq!(g.t_nodes[0], 1.0);
        assert_eq!(g.t_max(), 128.0);
        assert!(g.k_nodes.windows(2).all(|w| w[1] > w[0]));
        assert!(g.t_nodes.windows(2).all(|w| w[1] > w[0]));
        for ik in 0..g.nk() {
            assert_eq!(g.k_nodes[ik], -g.k_nodes[g.mirror(ik)]);
            assert_ne!(g.k_nodes[ik], 0.0);
        }
        assert_eq!(g.k_pos()[0], 1e-8);
        let total: f64 = g.k_weights.iter().sum();
        assert!((total - 128.0).abs() < 1e-12);
    }

    #[test]
    fn refined_grid_nests() {
        let g = SpectralGrid::new(1e-4, 8.0, 16, 16.0, 12).unwrap();
        let r = g.refined();
        for (j, &k) in g.k_pos().iter().enumerate() {
            assert!((r.k_pos()[2 * j] - k).abs() <= 1e-14 * k);
        }
        for (j, &t) in g.t_nodes.iter().enumerate() {
            assert!((r.t_nodes[2 * j] - t).abs() <= 1e-13 * t);
        }
    }

    #[test]
    fn weighted_norm_examples() {
        let g = Arc::new(SpectralGrid::new(1e-6, 32.0, 64, 64.0, 32).unwrap());
        let env = WeightEnvelope::new(3.0, 1.5, 0.5, 0);
        let z = ModeField::zeros(&g, 0);
        assert_eq!(weighted_norm(&z, &env).unwrap().norm, 0.0);
        let f = ModeField::from_fn(&g, 0, |k, t| C64::new(t.powf(-1.5) * mu_weight(3.0, 1.0, k, t), 0.0));
        let n = weighted_norm(&f, &env).unwrap().norm;
        assert!(n > 0.5 && n <= 1.0 + 1e-15, "norm {n}");
        assert!(weighted_norm(&f, &WeightEnvelope::new(3.0, 1.5, 0.5, 1)).is_err());
    }

    #[test]
    fn kappa_report_default_grid_passes() {
        let rep = kappa_inequality_report(&SpectralGrid::default_grid());
        assert!(rep.pass);
        let c = rep.constants.iter().find(|c| c.0 == "sqrt_k_over_kappa_best_constant").unwrap().1;
        assert!(c <= 1.0 && c > 0.999);
    }

    #[test]
    fn chain_tight_at_one() {
        let mk = kap(1.0).norm();
        assert!((2.0 - 2f64.powf(0.75) * mk).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn mu_even_and_in_unit_interval(alpha in 0.0f64..6.0, r in 0.0f64..3.0, k in -50.0f64..50.0, t in 1.0f64..100.0) {
            let m = mu_weight(alpha, r, k, t);
            prop_assert!(m > 0.0 && m <= 1.0);
            prop_assert_eq!(m, mu_weight(alpha, r, -k, t));
        }

        #[test]
        fn envelope_monotone(k in 0.0f64..20.0, dk in 0.0f64..5.0, t in 1.0f64..50.0, dt in 0.0f64..10.0) {
            let env = WeightEnvelope::new(3.5, 1.0, 2.0, 0);
            prop_assert!(env.eval(k + dk, t) <= env.eval(k, t) * (1.0 + 1e-14));
            prop_assert!(env.eval(k, t + dt) <= env.eval(k, t) * (1.0 + 1e-14));
        }

        #[test]
        fn dk_kappa_conjugate_symmetry(k in 0.001f64..100.0) {
            let a = dk_kappa(-k).unwrap();
            let b = -dk_kappa(k).unwrap().conj();
            prop_assert!((a - b).norm() <= 1e-14 * a.norm());
        }

        #[test]
        fn space_nesting(p in 0.0f64..3.0, dp in 0.0f64..1.0, q in 0.0f64..3.0, dq in 0.0f64..1.0) {
            // weaker envelope dominates the stronger one pointwise up to a factor 2
            let g = SpectralGrid::new(1e-4, 16.0, 24, 32.0, 16).unwrap();
            let strong = WeightEnvelope::new(4.0, p + dp, q + dq, 0);
            let weak = WeightEnvelope::new(3.0, p, q, 0);
            for &k in &g.k_nodes {
                for &t in &g.t_nodes {
                    prop_assert!(strong.eval(k, t) <= 2.0 * weak.eval(k, t));
                }
            }
        }
    }
}
