//! Compactly supported smooth forcing and its Fourier transform in x.

use std::sync::Arc;

use gauss_quad::GaussLegendre;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{ModeField, SpectralGrid, C64, I};

const X_PANELS: usize = 64;
const X_NODES_PER_PANEL: usize = 16;

/// Standard bump exp(−1/(1−z²)) on (−1, 1) and its derivative.
pub fn bump(z: f64) -> (f64, f64) {
    if z.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let d = 1.0 - z * z;
    let b = (-1.0 / d).exp();
    (b, b * (-2.0 * z / (d * d)))
}

/// F_i(x, y) = ε A_i B((x−x_c)/w_x) B((y−y_c)/w_y) on the box [x0,x1]×[y0,y1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForceSpec {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub eps: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Default for ForceSpec {
    fn default() -> Self {
        ForceSpec { x0: -1.0, x1: 1.0, y0: 1.5, y1: 3.0, eps: 1e-3, a1: 1.0, a2: 0.5 }
    }
}

impl ForceSpec {
    pub fn with_eps(self, eps: f64) -> Self {
        ForceSpec { eps, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x0, self.x1, self.y0, self.y1, self.eps, self.a1, self.a2];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Force("non-finite parameter".into()));
        }
        if self.x1 <= self.x0 || self.y1 <= self.y0 {
            return Err(Error::Force(format!(
                "empty support box [{}, {}]×[{}, {}]",
                self.x0, self.x1, self.y0, self.y1
            )));
        }
        if self.y0 <= 1.0 {
            return Err(Error::Force(format!("support must stay off the wall y = 1 (y0 = {})", self.y0)));
        }
        Ok(())
    }

    fn xc(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.x1 - self.x0))
    }

    /// Wall-normal profile B((t−y_c)/w_y) and its t-derivative.
    pub fn y_profile(&self, t: f64) -> (f64, f64) {
        let yc = 0.5 * (self.y0 + self.y1);
        let wy = 0.5 * (self.y1 - self.y0);
        let (b, db) = bump((t - yc) / wy);
        (b, db / wy)
    }

    /// Quadrature nodes and weights covering [x0, x1].
    fn x_rule(&self) -> Vec<(f64, f64)> {
        let rule = GaussLegendre::new(X_NODES_PER_PANEL).expect("degree ≥ 2");
        let h = (self.x1 - self.x0) / X_PANELS as f64;
        let mut out = Vec::with_capacity(X_PANELS * X_NODES_PER_PANEL);
        for p in 0..X_PANELS {
            let lo = self.x0 + p as f64 * h;
            for &(x, w) in rule.as_node_weight_pairs() {
                out.push((lo + 0.5 * h * (x + 1.0), 0.5 * h * w));
            }
        }
        out
    }

    /// X(k) = ∫ e^{ikx} B((x−x_c)/w_x) dx and ∂ₖX = ∫ ix e^{ikx} B dx.
    pub fn x_transform(&self, k: f64) -> (C64, C64) {
        let (xc, wx) = self.xc();
        let mut x_hat = C64::new(0.0, 0.0);
        let mut dx_hat = C64::new(0.0, 0.0);
        for (x, w) in self.x_rule() {
            let b = bump((x - xc) / wx).0 * w;
            let e = C64::from_polar(1.0, k * x);
            x_hat += e * b;
            dx_hat += I * x * e * b;
        }
        (x_hat, dx_hat)
    }

    /// Direct-space force at a point.
    pub fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        let (xc, wx) = self.xc();
        let p = self.eps * bump((x - xc) / wx).0 * self.y_profile(y).0;
        (self.a1 * p, self.a2 * p)
    }
}

/// F̂₁, F̂₂ and their k-derivatives on the grid (all order 0).
#[derive(Debug, Clone)]
pub struct ForceFields {
    pub spec: ForceSpec,
    pub f1: ModeField,
    pub f2: ModeField,
    pub dk_f1: ModeField,
    pub dk_f2: ModeField,
}

pub fn force_spectrum(spec: &ForceSpec, grid: &Arc<SpectralGrid>) -> Result<ForceFields> {
    spec.validate()?;
    let xs: Vec<(C64, C64)> = grid.k_nodes.par_iter().map(|&k| spec.x_transform(k)).collect();
    let ys: Vec<f64> = grid.t_nodes.iter().map(|&t| spec.y_profile(t).0).collect();
    let nt = grid.nt();
    let build = |amp: f64, deriv: bool| {
        let cols = (0..grid.nk())
            .map(|ik| {
                let x = if deriv { xs[ik].1 } else { xs[ik].0 };
                ys.iter().map(|&y| x * (spec.eps * amp * y)).collect::<Vec<_>>()
            })
            .collect();
        ModeField::from_columns(grid, 0, cols)
    };
    let out = ForceFields {
        spec: *spec,
        f1: build(spec.a1, false),
        f2: build(spec.a2, false),
        dk_f1: build(spec.a1, true),
        dk_f2: build(spec.a2, true),
    };
    debug_assert_eq!(out.f1.values.len(), grid.nk() * nt);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> Arc<SpectralGrid> {
        Arc::new(SpectralGrid::new(1e-4, 32.0, 24, 8.0, 16).unwrap())
    }

    #[test]
    fn zero_amplitude_gives_zero_fields() {
        let f = force_spectrum(&ForceSpec::default().with_eps(0.0), &small_grid()).unwrap();
        for m in [&f.f1, &f.f2, &f.dk_f1, &f.dk_f2] {
            assert_eq!(m.sup_abs(), 0.0);
        }
    }

    #[test]
    fn wall_touching_support_rejected() {
        let s = ForceSpec { y0: 1.0, ..ForceSpec::default() };
        assert!(force_spectrum(&s, &small_grid()).is_err());
        let s = ForceSpec { x1: -2.0, ..ForceSpec::default() };
        assert!(s.validate().is_err());
    }

    #[test]
    fn real_force_gives_conjugate_symmetric_spectrum() {
        let s = ForceSpec { x0: -0.3, x1: 1.9, ..ForceSpec::default() };
        let f = force_spectrum(&s, &small_grid()).unwrap();
        assert!(f.f1.reality_residue() < 1e-13);
        // x·F is real too, so it is −i ∂ₖF̂ that is conjugate-symmetric
        assert!(f.dk_f2.scaled(-I).reality_residue() < 1e-13);
    }

    #[test]
    fn zero_mode_matches_one_dimensional_oracle() {
        let s = ForceSpec::default();
        let (x0, _) = s.x_transform(0.0);
        let oracle = quadrature::double_exponential::integrate(|x| bump(x).0, -1.0, 1.0, 1e-15).integral;
        assert!((x0.re - oracle).abs() < 1e-13 && x0.im.abs() < 1e-14);
        // the mass of the standard bump
        assert!((oracle - 0.443_993_816_168_079_4).abs() < 1e-12);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let s = ForceSpec { x0: -0.5, x1: 2.0, ..ForceSpec::default() };
        for k in [-7.0, -0.3, 0.01, 1.0, 12.0] {
            let h = 1e-5;
            let fd = (s.x_transform(k + h).0 - s.x_transform(k - h).0) / (2.0 * h);
            assert!((s.x_transform(k).1 - fd).norm() < 1e-8, "k={k}");
        }
    }

    #[test]
    fn profile_derivative_matches_finite_difference() {
        let s = ForceSpec::default();
        for t in [1.6, 2.0, 2.7] {
            let h = 1e-6;
            let fd = (s.y_profile(t + h).0 - s.y_profile(t - h).0) / (2.0 * h);
            assert!((s.y_profile(t).1 - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
        assert_eq!(s.y_profile(1.2), (0.0, 0.0));
    }
}
