//! Run configuration. Every field has a default; an empty file is a valid config.

use std::path::Path;

use halfplane::force::ForceSpec;
use halfplane::solver::SolverOptions;
use halfplane::SpectralGrid;
use serde::{Deserialize, Serialize};

use crate::RunError;

/// Which check suites run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CheckLevel {
    /// Everything, including the proposition sweeps and the domain-inflation run.
    All,
    /// Kernel consistency, bookkeeping, solver identities, oracle, derivative, pressure.
    Fast,
    /// Solve and write fields only.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Weight exponent α of the envelopes (> 3).
    pub alpha: f64,
    pub grid: GridConfig,
    /// Force: ε A_i B((x−x_c)/w_x) B((y−y_c)/w_y) on the box [x0,x1]×[y0,y1].
    pub force: ForceSpec,
    pub solver: SolverConfig,
    pub checks: ChecksConfig,
    /// Grid for the proposition ratio sweeps (and its 2x refinement).
    pub bounds_grid: GridConfig,
    pub oracle: OracleConfig,
    pub derivative: DerivativeConfig,
    pub decay: DecayConfig,
    pub identities: IdentityConfig,
    pub pressure: PressureConfig,
    pub output: OutputConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            alpha: 4.0,
            grid: GridConfig::default(),
            force: ForceSpec::default(),
            solver: SolverConfig::default(),
            checks: ChecksConfig::default(),
            bounds_grid: GridConfig { k_min: 1e-5, k_max: 64.0, n_half: 40, t_max: 256.0, nt: 24 },
            oracle: OracleConfig::default(),
            derivative: DerivativeConfig::default(),
            decay: DecayConfig::default(),
            identities: IdentityConfig::default(),
            pressure: PressureConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Log-graded ±k nodes in [k_min, k_max] (n_half per side), geometric t nodes in [1, t_max].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub k_min: f64,
    pub k_max: f64,
    pub n_half: usize,
    pub t_max: f64,
    pub nt: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { k_min: 1e-8, k_max: 64.0, n_half: 256, t_max: 128.0, nt: 256 }
    }
}

impl GridConfig {
    pub fn build(&self) -> halfplane::Result<SpectralGrid> {
        SpectralGrid::new(self.k_min, self.k_max, self.n_half, self.t_max, self.nt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Relative sup change of successive Picard iterates at which iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Under-relaxation in (0, 1].
    pub relaxation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolverOptions::default();
        SolverConfig { tol: o.tol, max_iter: o.max_iter, relaxation: o.relaxation }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions { tol: self.tol, max_iter: self.max_iter, relaxation: self.relaxation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    /// Overridden by `--checks` on the command line.
    pub level: CheckLevel,
    /// Whether the |ω(0,t)| slope check counts toward the exit code. The slope is always
    /// computed and reported.
    pub gate_axis_slope: bool,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig { level: CheckLevel::All, gate_axis_slope: false }
    }
}

/// Per-mode finite-difference BVP comparison of the linear solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Modes checked (nearest grid nodes are used).
    pub k: Vec<f64>,
    /// Right end of the oracle box (nearest t-node).
    pub t_box: f64,
    /// FD intervals on [1, t_box].
    pub n: usize,
    /// Relative interior L² tolerance.
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { k: vec![0.25, 1.0, 4.0], t_box: 8.0, n: 1024, tol: 1e-2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DerivativeConfig {
    /// |k| window of the FD-in-k comparison.
    pub k_lo: f64,
    pub k_hi: f64,
    /// Relative tolerance of d̂ against FD of ω̂.
    pub fd_tol: f64,
}

impl Default for DerivativeConfig {
    fn default() -> Self {
        DerivativeConfig { k_lo: 0.1, k_hi: 5.0, fd_tol: 1e-2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    /// The inflation run uses t_max / factor with the same geometric t-spacing.
    pub inflation_factor: f64,
    /// Allowed relative change of each weighted sup under inflation.
    pub stability_tol: f64,
    /// Target log-slope of |ω(0,t)| and its tolerance.
    pub slope_target: f64,
    pub slope_tol: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig { inflation_factor: 2.0, stability_tol: 0.05, slope_target: -3.0, slope_tol: 0.15 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentityConfig {
    /// Identity residuals must stay below factor × the estimated t-truncation error.
    pub factor: f64,
    /// Reality residue limit of every spectral field.
    pub reality_tol: f64,
}

impl Default for IdentityConfig {
    fn default() -> Self {
        IdentityConfig { factor: 10.0, reality_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PressureConfig {
    pub enabled: bool,
    /// Relative sup of Π̂ + φ̂.
    pub companion_tol: f64,
}

impl Default for PressureConfig {
    fn default() -> Self {
        PressureConfig { enabled: true, companion_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Spectral fields (k, t, re, im).
    pub spectral_fields: bool,
    /// Direct-space fields (x, t, re, im).
    pub direct_fields: bool,
    /// Full ratio sweeps under bounds/.
    pub bound_sweeps: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { spectral_fields: true, direct_fields: true, bound_sweeps: true }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config, RunError> {
        let cfg: Config = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if !(self.alpha > 3.0) {
            return bad(format!("alpha must exceed 3, got {}", self.alpha));
        }
        self.grid.build().map_err(|e| RunError::Config(format!("grid: {e}")))?;
        self.bounds_grid.build().map_err(|e| RunError::Config(format!("bounds_grid: {e}")))?;
        self.force.validate().map_err(|e| RunError::Config(e.to_string()))?;
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 || !(self.solver.relaxation > 0.0 && self.solver.relaxation <= 1.0) {
            return bad("solver: need tol > 0, max_iter ≥ 1, relaxation in (0, 1]".into());
        }
        if !(self.decay.inflation_factor > 1.0) || self.grid.t_max / self.decay.inflation_factor <= 2.0 {
            return bad("decay.inflation_factor must exceed 1 and leave t_max / factor > 2".into());
        }
        if self.oracle.n < 2 || !(self.oracle.t_box > 1.0) || self.oracle.k.iter().any(|&k| k <= 0.0) {
            return bad("oracle: need n ≥ 2, t_box > 1, k > 0".into());
        }
        if !(self.derivative.k_lo < self.derivative.k_hi) {
            return bad("derivative: need k_lo < k_hi".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn defaults_round_trip() {
        let text = toml::to_string(&Config::default()).unwrap();
        assert_eq!(Config::parse(&text).unwrap(), Config::default());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(matches!(Config::parse("gird = 1"), Err(RunError::Config(_))));
        assert!(matches!(Config::parse("alpha = 2.5"), Err(RunError::Config(_))));
        assert!(matches!(Config::parse("[force]\ny0 = 0.5"), Err(RunError::Config(_))));
        assert!(matches!(Config::parse("[grid]\nk_min = -1.0"), Err(RunError::Config(_))));
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let c = Config::parse("[force]\neps = 0.0\n[checks]\nlevel = \"fast\"").unwrap();
        assert_eq!(c.force.eps, 0.0);
        assert_eq!(c.force.a1, ForceSpec::default().a1);
        assert_eq!(c.checks.level, CheckLevel::Fast);
        assert_eq!(c.grid, GridConfig::default());
    }
}
