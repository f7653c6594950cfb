//! Per-check verification records.

use serde::Serialize;

/// Relative change allowed between a sweep and its 2x refinement.
pub const REFINEMENT_TOL: f64 = 0.10;

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub max_ratio: f64,
    pub refined_max_ratio: Option<f64>,
    /// Coordinates (column meaning given by `columns`) where the max ratio sits.
    pub argmax: Vec<f64>,
    pub pass: bool,
    pub constants: Vec<(String, f64)>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub columns: Vec<String>,
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

impl BoundReport {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        BoundReport {
            name: name.into(),
            max_ratio: 0.0,
            refined_max_ratio: None,
            argmax: Vec::new(),
            pass: false,
            constants: Vec::new(),
            notes: Vec::new(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            samples: Vec::new(),
        }
    }

    /// Record one sample row; the last column is the ratio.
    pub fn push(&mut self, row: Vec<f64>) {
        let r = *row.last().expect("sample row needs a ratio column");
        if r > self.max_ratio || r.is_nan() || (self.argmax.is_empty() && r >= self.max_ratio) {
            self.max_ratio = r;
            self.argmax = row[..row.len() - 1].to_vec();
        }
        self.samples.push(row);
    }

    pub fn constant(&mut self, name: &str, v: f64) {
        self.constants.push((name.to_string(), v));
    }

    /// Finalise a coarse/refined pair: pass iff both finite and within `REFINEMENT_TOL`.
    pub fn with_refinement(mut self, refined: &BoundReport) -> Self {
        self.refined_max_ratio = Some(refined.max_ratio);
        self.pass = refinement_stable(self.max_ratio, refined.max_ratio);
        self
    }
}

pub fn refinement_stable(coarse: f64, fine: f64) -> bool {
    if !coarse.is_finite() || !fine.is_finite() {
        return false;
    }
    let scale = coarse.abs().max(fine.abs());
    if scale == 0.0 {
        return true;
    }
    (fine - coarse).abs() / scale < REFINEMENT_TOL
}
