//! Independent per-mode check of the linear ω̂ operator: second-order finite differences for
//! ω'' − κ²ω = −ikQ₀ + ∂ₜQ₁ with Q = (F̂₂, −F̂₁), Dirichlet data taken from the spectral
//! solution at both ends of [1, T_box].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::force::ForceSpec;
use crate::spectral::{kap, ModeField, C64, I};

/// Solves the tridiagonal system with sub/super-diagonal 1 and diagonal `diag` (Thomas).
fn thomas_unit_offdiag(diag: C64, rhs: &[C64]) -> Result<Vec<C64>> {
    let n = rhs.len();
    let mut c = vec![C64::new(0.0, 0.0); n];
    let mut d = vec![C64::new(0.0, 0.0); n];
    let mut denom = diag;
    c[0] = 1.0 / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag - c[i - 1];
        if denom.norm() < 1e-300 {
            return Err(Error::Domain("singular tridiagonal system in oracle".into()));
        }
        c[i] = 1.0 / denom;
        d[i] = (rhs[i] - d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] = d[i] - c[i] * d[i + 1];
    }
    Ok(d)
}

/// FD solution on the uniform grid tⱼ = 1 + j(T_box − 1)/n, j = 0..=n.
pub fn oseen_oracle(spec: &ForceSpec, k: f64, t_box: f64, n: usize, left: C64, right: C64) -> Result<(Vec<f64>, Vec<C64>)> {
    spec.validate()?;
    if k == 0.0 || n < 2 || t_box <= 1.0 {
        return Err(Error::Params(format!("oracle needs k ≠ 0, n ≥ 2, T_box > 1 (k={k}, n={n}, T={t_box})")));
    }
    let kk = kap(k);
    let h = (t_box - 1.0) / n as f64;
    let (x, _) = spec.x_transform(k);
    let t: Vec<f64> = (0..=n).map(|j| 1.0 + j as f64 * h).collect();
    let mut rhs: Vec<C64> = t[1..n]
        .iter()
        .map(|&tv| {
            let (y, dy) = spec.y_profile(tv);
            let q0 = x * (spec.eps * spec.a2 * y);
            let dq1 = -x * (spec.eps * spec.a1 * dy);
            (-I * k * q0 + dq1) * h * h
        })
        .collect();
    rhs[0] -= left;
    rhs[n - 2] -= right;
    let diag = C64::new(-2.0, 0.0) - kk * kk * h * h;
    let inner = thomas_unit_offdiag(diag, &rhs)?;
    let mut w = Vec::with_capacity(n + 1);
    w.push(left);
    w.extend(inner);
    w.push(right);
    Ok((t, w))
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    pub k: f64,
    pub t_box: f64,
    pub n: usize,
    /// interior relative L² difference, oracle vs spectral, on the spectral t-nodes
    pub rel_l2: f64,
}

/// Compares column `ik` of a linear-solve ω̂ with the FD oracle at resolution `n` on
/// [1, t_nodes[it_box]]. The oracle is linearly interpolated onto the spectral nodes.
pub fn compare_with_spectral(omega: &ModeField, ik: usize, it_box: usize, spec: &ForceSpec, n: usize) -> Result<OracleComparison> {
    let g = &omega.grid;
    let k = g.k_nodes[ik];
    let t_box = g.t_nodes[it_box];
    let col = omega.column(ik);
    let (tf, wf) = oseen_oracle(spec, k, t_box, n, col[0], col[it_box])?;
    let h = tf[1] - tf[0];
    let mut num = 0.0;
    let mut den = 0.0;
    for it in 1..it_box {
        let tv = g.t_nodes[it];
        let j = (((tv - 1.0) / h).floor() as usize).min(n - 1);
        let s = (tv - tf[j]) / h;
        let o = wf[j] * (1.0 - s) + wf[j + 1] * s;
        let w = g.t_weights[it];
        num += w * (o - col[it]).norm_sqr();
        den += w * col[it].norm_sqr();
    }
    let rel_l2 = if den == 0.0 { num.sqrt() } else { (num / den).sqrt() };
    Ok(OracleComparison { k, t_box, n, rel_l2 })
}

/// max|w_n − w_{2n}| / max|w_{2n} − w_{4n}| on the common nodes; ≈ 4 for a second-order
/// scheme in its asymptotic range.
pub fn self_convergence_ratio(spec: &ForceSpec, k: f64, t_box: f64, n: usize, left: C64, right: C64) -> Result<f64> {
    let sols: Vec<Vec<C64>> =
        [n, 2 * n, 4 * n].iter().map(|&m| oseen_oracle(spec, k, t_box, m, left, right).map(|r| r.1)).collect::<Result<_>>()?;
    let diff = |a: &[C64], b: &[C64]| (0..=n).map(|j| (a[j * (a.len() - 1) / n] - b[j * (b.len() - 1) / n]).norm()).fold(0.0, f64::max);
    Ok(diff(&sols[0], &sols[1]) / diff(&sols[1], &sols[2]))
}

/// Index of the grid node nearest `k` (positive half when k > 0).
pub fn nearest_k(omega: &ModeField, k: f64) -> usize {
    let g = &omega.grid;
    (0..g.nk()).min_by(|&a, &b| (g.k_nodes[a] - k).abs().total_cmp(&(g.k_nodes[b] - k).abs())).unwrap()
}

/// Index of the t-node nearest `t`.
pub fn nearest_t(omega: &ModeField, t: f64) -> usize {
    let g = &omega.grid;
    (0..g.nt()).min_by(|&a, &b| (g.t_nodes[a] - t).abs().total_cmp(&(g.t_nodes[b] - t).abs())).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::force::force_spectrum;
    use crate::solver::Solver;
    use crate::spectral::SpectralGrid;
    use std::sync::Arc;

    #[test]
    fn zero_force_gives_zero() {
        let s = ForceSpec::default().with_eps(0.0);
        let (_, w) = oseen_oracle(&s, 1.0, 8.0, 64, C64::new(0.0, 0.0), C64::new(0.0, 0.0)).unwrap();
        assert!(w.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn homogeneous_solution_is_reproduced() {
        // ω = e^{−κ(t−1)} solves the homogeneous problem
        let s = ForceSpec::default().with_eps(0.0);
        let k = 0.7;
        let kk = kap(k);
        let t_box = 6.0;
        let mut prev = f64::NAN;
        for n in [200, 400] {
            let (t, w) = oseen_oracle(&s, k, t_box, n, C64::new(1.0, 0.0), (-kk * (t_box - 1.0)).exp()).unwrap();
            let err = t.iter().zip(&w).map(|(&tv, v)| (v - (-kk * (tv - 1.0)).exp()).norm()).fold(0.0, f64::max);
            assert!(err < 1e-4);
            if prev.is_finite() {
                assert!((prev / err - 4.0).abs() < 0.2, "{}", prev / err);
            }
            prev = err;
        }
    }

    #[test]
    fn thomas_matches_dense_solution() {
        let diag = C64::new(-2.5, 0.3);
        let rhs: Vec<C64> = (0..6).map(|i| C64::new(i as f64, 1.0)).collect();
        let x = thomas_unit_offdiag(diag, &rhs).unwrap();
        for i in 0..6 {
            let mut r = diag * x[i];
            if i > 0 {
                r += x[i - 1];
            }
            if i < 5 {
                r += x[i + 1];
            }
            assert!((r - rhs[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn oracle_agrees_with_spectral_linear_solve() {
        let g = Arc::new(SpectralGrid::new(1e-6, 32.0, 48, 32.0, 200).unwrap());
        let s = Solver::new(&g);
        let spec = ForceSpec::default();
        let f = force_spectrum(&spec, &g).unwrap();
        let st = s.linear_solve(&f).unwrap();
        let ik = nearest_k(&st.omega, 1.0);
        let it = nearest_t(&st.omega, 8.0);
        let a = compare_with_spectral(&st.omega, ik, it, &spec, 1024).unwrap();
        assert!(a.rel_l2 < 1e-3, "{a:?}");
        let col = st.omega.column(ik);
        let r = self_convergence_ratio(&spec, a.k, a.t_box, 256, col[0], col[it]).unwrap();
        assert!((r - 4.0).abs() < 0.4, "{r}");
    }
}
