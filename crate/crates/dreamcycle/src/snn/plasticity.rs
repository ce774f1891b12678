//! Synapses, STDP parameters, and eligibility bookkeeping.
//!
//! Pair-based STDP writes into a per-synapse eligibility trace instead of
//! the weight; dopamine later converts eligibility into lasting change
//! (see `consolidate`). Eligibility decay is lazy: each synapse remembers
//! the tick its stored value refers to and folds the pending exponential
//! decay in on access, so quiet synapses cost nothing per step.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlasticityParams {
    pub a_plus: f64,
    pub a_minus: f64,
    pub tau_plus_ms: f64,
    pub tau_minus_ms: f64,
    pub tau_elig_ms: f64,
    /// Consolidation learning rate.
    pub eta: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for PlasticityParams {
    fn default() -> Self {
        PlasticityParams {
            a_plus: 0.01,
            a_minus: 0.012,
            tau_plus_ms: 20.0,
            tau_minus_ms: 20.0,
            tau_elig_ms: 1000.0,
            eta: 0.1,
            w_min: 0.0,
            w_max: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synapse {
    pub pre: u32,
    pub post: u32,
    pub w: f64,
    /// Conduction delay in ticks, at least 1.
    pub delay: u32,
    /// Eligibility as of `elig_tick`; read through [`Synapse::elig_at`].
    pub elig: f64,
    #[serde(skip)]
    pub elig_tick: u64,
}

impl Synapse {
    pub fn new(pre: u32, post: u32, w: f64, delay: u32) -> Self {
        debug_assert!(delay >= 1);
        Synapse {
            pre,
            post,
            w,
            delay,
            elig: 0.0,
            elig_tick: 0,
        }
    }

    /// Fold lazy decay up to `tick`; `lambda` is the per-tick decay factor
    /// exp(−dt/tau_elig).
    pub fn fold_elig(&mut self, tick: u64, lambda: f64) {
        debug_assert!(tick >= self.elig_tick);
        let steps = tick - self.elig_tick;
        if steps > 0 && self.elig != 0.0 {
            self.elig *= pow_steps(lambda, steps);
            // Flush vanishing values so long-idle synapses never produce
            // denormals in the hot path.
            if self.elig.abs() < 1e-300 {
                self.elig = 0.0;
            }
        }
        self.elig_tick = tick;
    }

    /// Eligibility valued at `tick` without mutating.
    pub fn elig_at(&self, tick: u64, lambda: f64) -> f64 {
        let steps = tick.saturating_sub(self.elig_tick);
        if steps == 0 || self.elig == 0.0 {
            self.elig
        } else {
            self.elig * pow_steps(lambda, steps)
        }
    }
}

/// `lambda^steps` for potentially large step counts.
fn pow_steps(lambda: f64, steps: u64) -> f64 {
    if steps <= i32::MAX as u64 {
        lambda.powi(steps as i32)
    } else {
        0.0
    }
}
