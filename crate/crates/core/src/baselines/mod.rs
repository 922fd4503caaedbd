//! Reference solvers used to judge the learned optimizer.

mod minrate;
mod mrt;
mod naive_dnn;
mod wmmse;
mod zf;

pub use minrate::{balance_uplink, optimal_minrate};
pub use mrt::{mrt_power, project_simplex};
pub use naive_dnn::{NaiveDnn, NaiveTrainConfig};
pub use wmmse::wmmse;
pub use zf::{water_fill, zf_waterfill};

use crate::beamcore::{rates, Utility};
use crate::channel::BipartiteChannel;
use crate::linalg::CMatrix;

#[derive(Clone, Debug)]
pub struct BaselineResult {
    pub v: CMatrix,
    pub rates: Vec<f64>,
    pub utility: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Utility after each iteration, for iterative solvers.
    pub trace: Vec<f64>,
}

impl BaselineResult {
    fn new(inst: &BipartiteChannel, v: CMatrix, mode: Utility, iterations: usize, converged: bool, trace: Vec<f64>) -> Self {
        let rates = rates(inst.h(), &v, inst.noise());
        let utility = mode.apply(&rates);
        Self { v, rates, utility, iterations, converged, trace }
    }
}

/// Names accepted by the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Baseline {
    Wmmse,
    Zf,
    Mrt,
    Optimal,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Wmmse => "wmmse",
            Baseline::Zf => "zf",
            Baseline::Mrt => "mrt",
            Baseline::Optimal => "optimal",
        }
    }

    /// Runs the solver with its default tolerances.
    pub fn solve(self, inst: &BipartiteChannel, mode: Utility) -> crate::Result<BaselineResult> {
        match self {
            Baseline::Wmmse => wmmse(inst, 1e-6, 500),
            Baseline::Zf => zf_waterfill(inst),
            Baseline::Mrt => Ok(mrt_power(inst, mode)),
            Baseline::Optimal => optimal_minrate(inst, 1e-6, 1000),
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "wmmse" => Ok(Baseline::Wmmse),
            "zf" => Ok(Baseline::Zf),
            "mrt" => Ok(Baseline::Mrt),
            "optimal" => Ok(Baseline::Optimal),
            other => Err(crate::Error::Config(format!("unknown baseline `{other}` (expected wmmse, zf, mrt or optimal)"))),
        }
    }
}
