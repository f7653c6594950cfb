//! Product integration of `exp(aτ + bσ) σ^j Q(s)` over the t-grid.
//!
//! Q is replaced by its piecewise-cubic Lagrange interpolant (four nodes around each panel,
//! clamped at the ends); the exponential is integrated exactly against it. Both sweeps are
//! O(N) recursions in which every exponential evaluated has non-positive real part.

use crate::spectral::C64;

/// Cut-over between the power series and the upward recurrence for the moments.
const SERIES_RADIUS: f64 = 4.0;

/// `m_j(w) = ∫₀¹ u^j e^{-wu} du` for j = 0..=4. Requires Re w ≥ 0 for the recurrence branch.
pub fn moments(w: C64) -> [C64; 5] {
    let mut m = [C64::new(0.0, 0.0); 5];
    if w.norm() <= SERIES_RADIUS {
        // Σ_n (-w)^n / (n! (n + j + 1))
        let mut term = C64::new(1.0, 0.0);
        for n in 0..60 {
            for (j, mj) in m.iter_mut().enumerate() {
                *mj += term / (n + j + 1) as f64;
            }
            term *= -w / (n + 1) as f64;
            if term.norm() < 1e-18 {
                break;
            }
        }
    } else {
        let e = (-w).exp();
        m[0] = (1.0 - e) / w;
        for j in 1..5 {
            m[j] = (j as f64 * m[j - 1] - e) / w;
        }
    }
    m
}

/// Panel geometry and interpolation stencils for a fixed t-grid.
#[derive(Debug, Clone)]
pub struct Panels {
    pub t: Vec<f64>,
    h: Vec<f64>,
    stencil: Vec<[usize; 4]>,
    /// `basis[j][i][m][p]`: monomial coefficient of u^p in L_m(u) · σ(u)^j on panel i.
    basis: [Vec<[[f64; 5]; 4]>; 2],
}

fn poly_mul_linear(c: &[f64; 5], c0: f64, c1: f64) -> [f64; 5] {
    let mut out = [0.0; 5];
    for p in 0..5 {
        out[p] += c0 * c[p];
        if p + 1 < 5 {
            out[p + 1] += c1 * c[p];
        }
    }
    out
}

impl Panels {
    pub fn new(t: &[f64]) -> Self {
        let n = t.len();
        assert!(n >= 4, "need at least four t-nodes");
        let mut h = Vec::with_capacity(n - 1);
        let mut stencil = Vec::with_capacity(n - 1);
        let mut b0 = Vec::with_capacity(n - 1);
        let mut b1 = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let hi = t[i + 1] - t[i];
            let first = i.saturating_sub(1).min(n - 4);
            let idx = [first, first + 1, first + 2, first + 3];
            let u: Vec<f64> = idx.iter().map(|&j| (t[j] - t[i]) / hi).collect();
            let mut lag = [[0.0; 5]; 4];
            for m in 0..4 {
                let mut c = [0.0; 5];
                c[0] = 1.0;
                for l in 0..4 {
                    if l != m {
                        let d = u[m] - u[l];
                        c = poly_mul_linear(&c, -u[l] / d, 1.0 / d);
                    }
                }
                lag[m] = c;
            }
            let sig = t[i] - 1.0;
            let mut lag1 = [[0.0; 5]; 4];
            for m in 0..4 {
                lag1[m] = poly_mul_linear(&lag[m], sig, hi);
            }
            h.push(hi);
            stencil.push(idx);
            b0.push(lag);
            b1.push(lag1);
        }
        Panels { t: t.to_vec(), h, stencil, basis: [b0, b1] }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Node weights of ∫ over panel i of `e^{c0 + c1 u} P(u) du` (times h), where P is the
    /// cubic interpolant of σ^j·src. The exponent is referenced at whichever end has the
    /// larger real part, which must be non-positive.
    pub(crate) fn panel_weights(&self, i: usize, j: usize, c0: C64, c1: C64) -> ([usize; 4], [C64; 4]) {
        let (c_ref, w) = if c1.re <= 0.0 { (c0, -c1) } else { (c0 + c1, c1) };
        let mo = moments(w);
        let weights: [C64; 5] = if c1.re <= 0.0 {
            mo
        } else {
            // ∫ u^p e^{c1(u-1)} du = Σ_r C(p,r) (-1)^r m_r(c1)
            let mut out = [C64::new(0.0, 0.0); 5];
            const BINOM: [[f64; 5]; 5] = [
                [1.0, 0.0, 0.0, 0.0, 0.0],
                [1.0, -1.0, 0.0, 0.0, 0.0],
                [1.0, -2.0, 1.0, 0.0, 0.0],
                [1.0, -3.0, 3.0, -1.0, 0.0],
                [1.0, -4.0, 6.0, -4.0, 1.0],
            ];
            for p in 0..5 {
                for r in 0..=p {
                    out[p] += BINOM[p][r] * mo[r];
                }
            }
            out
        };
        let b = &self.basis[j][i];
        let scale = c_ref.exp() * self.h[i];
        let mut out = [C64::new(0.0, 0.0); 4];
        for m in 0..4 {
            for p in 0..5 {
                out[m] += weights[p] * b[m][p];
            }
            out[m] *= scale;
        }
        (self.stencil[i], out)
    }

    #[inline]
    fn panel(&self, i: usize, j: usize, c0: C64, c1: C64, src: &[C64]) -> C64 {
        let (idx, w) = self.panel_weights(i, j, c0, c1);
        (0..4).map(|m| w[m] * src[idx[m]]).sum()
    }

    /// `F_i = ∫_1^{t_i} e^{aτ_i + bσ} σ^j Q(s) ds` with τ = t−1, σ = s−1.
    /// Requires Re a ≤ 0 and Re(a+b) ≤ 0.
    pub fn forward(&self, a: C64, b: C64, j: u8, src: &[C64]) -> Vec<C64> {
        debug_assert!(a.re <= 1e-12 && (a + b).re <= 1e-12);
        let n = self.t.len();
        let mut out = vec![C64::new(0.0, 0.0); n];
        for i in 0..n - 1 {
            let h = self.h[i];
            let tau_next = self.t[i + 1] - 1.0;
            let sig = self.t[i] - 1.0;
            let c0 = a * tau_next + b * sig;
            let c1 = b * h;
            out[i + 1] = (a * h).exp() * out[i] + self.panel(i, j as usize, c0, c1, src);
        }
        out
    }

    /// `G_i = ∫_{t_i}^{t_max} e^{aτ_i + bσ} σ^j Q(s) ds`. Requires Re b ≤ 0 and Re(a+b) ≤ 0.
    pub fn backward(&self, a: C64, b: C64, j: u8, src: &[C64]) -> Vec<C64> {
        debug_assert!(b.re <= 1e-12 && (a + b).re <= 1e-12);
        let n = self.t.len();
        let mut inner = vec![C64::new(0.0, 0.0); n];
        for i in (0..n - 1).rev() {
            let h = self.h[i];
            let c1 = b * h;
            inner[i] = (b * h).exp() * inner[i + 1] + self.panel(i, j as usize, C64::new(0.0, 0.0), c1, src);
        }
        inner
            .iter()
            .zip(&self.t)
            .map(|(v, &t)| ((a + b) * (t - 1.0)).exp() * v)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::kap;
    use gauss_quad::GaussLegendre;

    /// Composite Gauss-Legendre oracle for complex integrands.
    fn gl(f: impl Fn(f64) -> C64, a: f64, b: f64, panels: usize) -> C64 {
        let rule = GaussLegendre::new(20).unwrap();
        let h = (b - a) / panels as f64;
        let mut acc = C64::new(0.0, 0.0);
        for p in 0..panels {
            let lo = a + p as f64 * h;
            for &(x, w) in rule.as_node_weight_pairs() {
                acc += f(lo + 0.5 * h * (x + 1.0)) * (0.5 * h * w);
            }
        }
        acc
    }

    #[test]
    fn moments_match_quadrature() {
        for w in [
            C64::new(0.0, 0.0),
            C64::new(0.3, -1.2),
            C64::new(1e-9, 3.9),
            C64::new(4.5, 0.0),
            C64::new(0.0, 7.0),
            C64::new(60.0, -80.0),
        ] {
            let m = moments(w);
            for (j, mj) in m.iter().enumerate() {
                let r = gl(|u| u.powi(j as i32) * (-w * u).exp(), 0.0, 1.0, 40);
                assert!((mj - r).norm() < 1e-14, "w={w} j={j}: {mj} vs {r}");
            }
        }
    }

    fn geometric(n: usize, tmax: f64) -> Vec<f64> {
        (0..n).map(|i| (tmax.ln() * i as f64 / (n - 1) as f64).exp()).collect()
    }

    #[test]
    fn cubic_sources_integrate_exactly() {
        let t = geometric(40, 6.0);
        let p = Panels::new(&t);
        let q = |s: f64| C64::new(1.0 - 0.3 * s + 0.1 * s * s, 0.05 * s * s * s);
        let src: Vec<C64> = t.iter().map(|&s| q(s)).collect();
        let kk = kap(0.8);
        for (a, b, j) in [(-kk, kk, 0u8), (-kk, -kk, 1), (-kk, C64::new(-0.8, 0.0), 0)] {
            let f = p.forward(a, b, j, &src);
            for i in [0, 7, 39] {
                let ti = t[i];
                let r = gl(|s| (a * (ti - 1.0) + b * (s - 1.0)).exp() * (s - 1.0).powi(j as i32) * q(s), 1.0, ti, 30);
                assert!((f[i] - r).norm() < 1e-12 * (1.0 + r.norm()), "fwd i={i}: {} vs {r}", f[i]);
            }
        }
        for (a, b, j) in [(kk, -kk, 0u8), (-kk, -kk, 1), (C64::new(0.8, 0.0), C64::new(-0.8, 0.0), 1)] {
            let g = p.backward(a, b, j, &src);
            for i in [0, 20, 39] {
                let ti = t[i];
                let r = gl(|s| (a * (ti - 1.0) + b * (s - 1.0)).exp() * (s - 1.0).powi(j as i32) * q(s), ti, 6.0, 30);
                assert!((g[i] - r).norm() < 1e-12 * (1.0 + r.norm()), "bwd i={i}: {} vs {r}", g[i]);
            }
        }
    }

    #[test]
    fn smooth_source_converges_at_fourth_order() {
        let q = |s: f64| C64::new((-(s - 2.0) * (s - 2.0)).exp(), (0.7 * s).sin());
        let kk = kap(2.5);
        let exact = gl(|s| (-kk * 4.0 + kk * (s - 1.0)).exp() * q(s), 1.0, 5.0, 40);
        let err = |n: usize| {
            let t = geometric(n, 5.0);
            let src: Vec<C64> = t.iter().map(|&s| q(s)).collect();
            (Panels::new(&t).forward(-kk, kk, 0, &src)[n - 1] - exact).norm()
        };
        let (e1, e2) = (err(81), err(161));
        assert!(e1 / e2 > 10.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn large_rates_stay_finite() {
        let t = geometric(256, 128.0);
        let p = Panels::new(&t);
        let src: Vec<C64> = t.iter().map(|&s| C64::new(1.0 / (s * s), 0.0)).collect();
        let kk = kap(64.0);
        for v in p.forward(-kk, kk, 1, &src).iter().chain(p.backward(kk, -kk, 1, &src).iter()) {
            assert!(v.re.is_finite() && v.im.is_finite());
        }
        // ∫_t^∞ e^{-κ(s-t)} s^{-2} ds ≈ 1/(κ t²) for large κ
        let g = p.backward(kk, -kk, 0, &src);
        let approx = 1.0 / (kk * 16.0 * 16.0);
        let i = t.iter().position(|&s| s >= 16.0).unwrap();
        let approx = approx * (16.0 / t[i]).powi(2);
        assert!((g[i] - approx).norm() < 0.02 * approx.norm());
    }

    #[test]
    fn sweeps_are_linear() {
        let t = geometric(30, 10.0);
        let p = Panels::new(&t);
        let x: Vec<C64> = t.iter().map(|&s| C64::new(s.sin(), s.cos())).collect();
        let y: Vec<C64> = t.iter().map(|&s| C64::new(1.0 / s, -s)).collect();
        let c = C64::new(0.3, -2.0);
        let xy: Vec<C64> = x.iter().zip(&y).map(|(a, b)| a + c * b).collect();
        let kk = kap(-1.5);
        let (fx, fy, fxy) = (p.forward(-kk, kk, 1, &x), p.forward(-kk, kk, 1, &y), p.forward(-kk, kk, 1, &xy));
        for i in 0..t.len() {
            assert!((fxy[i] - fx[i] - c * fy[i]).norm() < 1e-13 * (1.0 + fxy[i].norm()));
        }
    }
}
