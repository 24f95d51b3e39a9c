use serde::{Deserialize, Serialize};

use crate::backend::{OptimizerConfig, WeightMode};
use crate::error::{Error, Result};
use crate::tracker::TrackerConfig;

/// Parameters for one run, with the defaults used by the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Grid cell side in meters.
    pub cell_size: f64,
    /// Balance between the information and geometric weight terms.
    pub s: f64,
    pub weight_mode: WeightMode,
    /// Side of the square loop-candidate submap in meters.
    pub submap_side: f64,
    /// Unregistered nodes gathered before a temporal node is formed.
    pub window: usize,
    pub huber_delta: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub deadline_ms: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cell_size: 1.0,
            s: 0.5,
            weight_mode: WeightMode::EdgeInfo,
            submap_side: 10.0,
            window: 5,
            huber_delta: 1.0,
            max_iter: 100,
            tol: 1e-9,
            deadline_ms: 50.0,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cell_size", self.cell_size),
            ("submap_side", self.submap_side),
            ("huber_delta", self.huber_delta),
            ("tol", self.tol),
            ("deadline_ms", self.deadline_ms),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.s) {
            return Err(Error::InvalidConfig(format!("s must lie in [0, 1], got {}", self.s)));
        }
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be at least 1".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            max_iter: self.max_iter,
            tol: self.tol,
            huber_delta: self.huber_delta,
            ..OptimizerConfig::default()
        }
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            deadline_ms: self.deadline_ms,
            submap_side: self.submap_side,
            huber_delta: self.huber_delta,
        }
    }
}
