//! Server power models.
//!
//! Two model families are supported:
//!
//! * `LC_MLR`: a multiple linear regression over CPU, memory, disk and
//!   network utilization, locally corrected by interpolating the regression
//!   residuals stored on a calibration lattice.
//! * `LINEAR_CPU_MEM`: a plain linear model over CPU and memory only, used by
//!   the baseline scheduler.

mod calibration;
mod fit;
mod grid;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::UtilizationVector;

pub use calibration::{read_calibration_csv, write_calibration_csv, CalibrationSample};
pub use fit::{fit_linear_cpu_mem, fit_mlr};
pub use grid::{build_residual_grid, residual_correction, ResidualGrid};

pub(crate) const AXIS_NAMES: [&str; 4] = ["cpu_pct", "mem_mb", "disk_bps", "net_bps"];

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("{axis} = {value} outside calibrated range [{min}, {max}]")]
    OutOfRange { axis: &'static str, value: f64, min: f64, max: f64 },
    #[error("expected a {expected} model, got {found}")]
    WrongKind { expected: PowerModelKind, found: PowerModelKind },
    #[error("invalid power model: {0}")]
    InvalidModel(String),
    #[error("need at least {needed} calibration samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("design matrix is rank deficient; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("invalid residual grid: {0}")]
    InvalidGrid(String),
    #[error("incomplete calibration lattice, {} node(s) missing: {}", .missing.len(), format_nodes(.missing))]
    IncompleteLattice { missing: Vec<[f64; 4]> },
    #[error("calibration node {0:?} sampled more than once")]
    DuplicateNode([f64; 4]),
    #[error("calibration record {record}: {reason}")]
    InvalidSample { record: usize, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_nodes(nodes: &[[f64; 4]]) -> String {
    let mut s: Vec<String> = nodes.iter().take(8).map(|n| format!("{n:?}")).collect();
    if nodes.len() > 8 {
        s.push("...".to_string());
    }
    s.join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PowerModelKind {
    #[serde(rename = "LC_MLR")]
    LcMlr,
    #[serde(rename = "LINEAR_CPU_MEM")]
    LinearCpuMem,
}

impl fmt::Display for PowerModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LcMlr => "LC_MLR",
            Self::LinearCpuMem => "LINEAR_CPU_MEM",
        })
    }
}

/// Regression intercept and per-resource slopes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlrCoefficients {
    pub intercept_w: f64,
    pub beta_cpu: f64,
    pub beta_mem: f64,
    #[serde(default)]
    pub beta_disk: f64,
    #[serde(default)]
    pub beta_net: f64,
}

impl MlrCoefficients {
    pub fn new(intercept_w: f64, beta_cpu: f64, beta_mem: f64, beta_disk: f64, beta_net: f64) -> Self {
        Self { intercept_w, beta_cpu, beta_mem, beta_disk, beta_net }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.intercept_w, self.beta_cpu, self.beta_mem, self.beta_disk, self.beta_net]
    }

    pub fn validate(&self) -> Result<(), PowerError> {
        if !self.as_array().iter().all(|c| c.is_finite()) {
            return Err(PowerError::InvalidModel(format!("non-finite coefficient in {self:?}")));
        }
        if self.intercept_w < 0.0 {
            return Err(PowerError::InvalidModel(format!("negative intercept {}", self.intercept_w)));
        }
        Ok(())
    }
}

/// Plain regression prediction in watts.
pub fn mlr_predict(coeffs: &MlrCoefficients, util: &UtilizationVector) -> f64 {
    coeffs.intercept_w
        + coeffs.beta_cpu * util.cpu_pct
        + coeffs.beta_mem * util.mem_mb
        + coeffs.beta_disk * util.disk_bps
        + coeffs.beta_net * util.net_bps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    kind: PowerModelKind,
    coefficients: MlrCoefficients,
    grid: Option<ResidualGrid>,
}

impl PowerModel {
    pub fn lc_mlr(coefficients: MlrCoefficients, grid: ResidualGrid) -> Result<Self, PowerError> {
        coefficients.validate()?;
        Ok(Self { kind: PowerModelKind::LcMlr, coefficients, grid: Some(grid) })
    }

    pub fn linear_cpu_mem(coefficients: MlrCoefficients) -> Result<Self, PowerError> {
        coefficients.validate()?;
        if coefficients.beta_disk != 0.0 || coefficients.beta_net != 0.0 {
            return Err(PowerError::InvalidModel(
                "LINEAR_CPU_MEM model must have zero disk and network coefficients".into(),
            ));
        }
        Ok(Self { kind: PowerModelKind::LinearCpuMem, coefficients, grid: None })
    }

    /// Fits an `LC_MLR` model from lattice samples: regression over all
    /// samples, then residuals at every lattice node.
    pub fn fit_lc_mlr(samples: &[CalibrationSample]) -> Result<Self, PowerError> {
        let coeffs = fit_mlr(samples)?;
        let grid = build_residual_grid(&coeffs, samples)?;
        Self::lc_mlr(coeffs, grid)
    }

    pub fn kind(&self) -> PowerModelKind {
        self.kind
    }

    pub fn coefficients(&self) -> &MlrCoefficients {
        &self.coefficients
    }

    pub fn grid(&self) -> Option<&ResidualGrid> {
        self.grid.as_ref()
    }

    /// Predicted power in watts. Errors when an `LC_MLR` model is queried
    /// outside its calibration lattice.
    pub fn predict(&self, util: &UtilizationVector) -> Result<f64, PowerError> {
        match self.kind {
            PowerModelKind::LcMlr => lcmlr_predict(self, util),
            PowerModelKind::LinearCpuMem => linear_cpu_mem_predict(self, util),
        }
    }

    /// Like [`PowerModel::predict`], but clamps out-of-range utilization onto
    /// the calibration lattice first. The flag reports whether clamping
    /// happened.
    pub fn predict_clamped(&self, util: &UtilizationVector) -> (f64, bool) {
        match (&self.grid, self.kind) {
            (Some(grid), PowerModelKind::LcMlr) => {
                let (inside, clamped) = grid.clamp(util);
                let watts = lcmlr_predict(self, &inside).expect("clamped query lies inside the grid");
                (watts, clamped)
            }
            _ => (linear_cpu_mem_predict(self, util).expect("kind checked"), false),
        }
    }
}

/// Regression prediction plus local residual correction, floored at 0 W.
pub fn lcmlr_predict(model: &PowerModel, util: &UtilizationVector) -> Result<f64, PowerError> {
    let grid = match (model.kind, &model.grid) {
        (PowerModelKind::LcMlr, Some(grid)) => grid,
        _ => return Err(PowerError::WrongKind { expected: PowerModelKind::LcMlr, found: model.kind }),
    };
    let watts = mlr_predict(&model.coefficients, util) + residual_correction(grid, util)?;
    Ok(watts.max(0.0))
}

/// CPU and memory terms only; disk and network never contribute.
pub fn linear_cpu_mem_predict(model: &PowerModel, util: &UtilizationVector) -> Result<f64, PowerError> {
    if model.kind != PowerModelKind::LinearCpuMem {
        return Err(PowerError::WrongKind { expected: PowerModelKind::LinearCpuMem, found: model.kind });
    }
    let c = &model.coefficients;
    Ok(c.intercept_w + c.beta_cpu * util.cpu_pct + c.beta_mem * util.mem_mb)
}
