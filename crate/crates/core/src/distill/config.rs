use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Temperatures searched by default.
pub const TAU_GRID: [f64; 4] = [1.0, 2.0, 3.0, 5.0];

/// Distillation hyperparameters and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub tau: f64,
    /// Weight of the soft-target loss; `None` means `tau^2`.
    pub lambda: Option<f64>,
    pub gamma: f64,
    pub delta: f64,
    pub top_k: usize,
    pub ensemble_size: usize,
    pub margin: f64,
    pub max_span_len: usize,
    pub use_kd: bool,
    pub use_ans: bool,
    pub use_att: bool,
    /// Warm the student up on the attention loss alone before the full objective.
    pub stagewise: bool,
    pub warmup_epochs: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            lambda: None,
            gamma: 0.3,
            delta: 0.1,
            top_k: 4,
            ensemble_size: 3,
            margin: 1.0,
            max_span_len: 15,
            use_kd: true,
            use_ans: true,
            use_att: true,
            stagewise: false,
            warmup_epochs: 5,
        }
    }
}

impl DistillConfig {
    /// All distillation terms disabled: plain cross-entropy training.
    pub fn ce_only() -> Self {
        Self {
            use_kd: false,
            use_ans: false,
            use_att: false,
            stagewise: false,
            ..Self::default()
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(self.tau * self.tau)
    }

    pub fn any_distillation(&self) -> bool {
        self.use_kd || self.use_ans || self.use_att
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        for (name, w) in [("lambda", self.lambda()), ("gamma", self.gamma), ("delta", self.delta)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {w}")));
            }
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble_size must be at least 1".into()));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if self.max_span_len == 0 {
            return Err(Error::Config("max_span_len must be at least 1".into()));
        }
        if self.stagewise && !self.use_att {
            return Err(Error::Config("stagewise warm-up needs the attention loss enabled".into()));
        }
        if !TAU_GRID.contains(&self.tau) {
            log::warn!("tau {} is outside the usual grid {TAU_GRID:?}", self.tau);
        }
        Ok(())
    }
}
