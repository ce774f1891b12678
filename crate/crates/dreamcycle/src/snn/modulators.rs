//! Global neuromodulators and emotional appraisal.
//!
//! Two scalar modulators, dopamine and a pain modulator, are stored as
//! offsets above their baselines. Injections raise the offset; every step
//! decays it exponentially toward zero. Storing offsets keeps the
//! consolidation gate `dopamine − d_baseline` exactly 0.0 at rest, so a
//! never-rewarded network provably never changes a weight.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModKind {
    Dopamine,
    Pain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulatorParams {
    pub tau_d_ms: f64,
    pub tau_p_ms: f64,
    pub d_baseline: f64,
    pub p_baseline: f64,
    /// Denominator guard in the valence ratio.
    pub epsilon: f64,
    /// Combined level at which arousal saturates to 1.
    pub a_sat: f64,
}

impl Default for ModulatorParams {
    fn default() -> Self {
        ModulatorParams {
            tau_d_ms: 200.0,
            tau_p_ms: 200.0,
            d_baseline: 0.1,
            p_baseline: 0.0,
            epsilon: 1e-6,
            a_sat: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulatorState {
    pub params: ModulatorParams,
    /// Offsets above baseline; non-negative, decay toward 0.
    d_offset: f64,
    p_offset: f64,
}

impl ModulatorState {
    pub fn new(params: ModulatorParams) -> Self {
        ModulatorState {
            params,
            d_offset: 0.0,
            p_offset: 0.0,
        }
    }

    /// Absolute dopamine level.
    pub fn dopamine(&self) -> f64 {
        self.params.d_baseline + self.d_offset
    }

    /// Absolute pain-modulator level.
    pub fn pain(&self) -> f64 {
        self.params.p_baseline + self.p_offset
    }

    /// Dopamine excess over baseline; the consolidation gate.
    pub fn dopamine_offset(&self) -> f64 {
        self.d_offset
    }

    pub fn pain_offset(&self) -> f64 {
        self.p_offset
    }

    pub fn inject(&mut self, kind: ModKind, amount: f64) {
        debug_assert!(amount >= 0.0 && amount.is_finite());
        match kind {
            ModKind::Dopamine => self.d_offset += amount,
            ModKind::Pain => self.p_offset += amount,
        }
    }

    /// One step of exponential decay toward baseline.
    pub fn decay(&mut self, dt_ms: f64) {
        self.d_offset *= (-dt_ms / self.params.tau_d_ms).exp();
        self.p_offset *= (-dt_ms / self.params.tau_p_ms).exp();
    }
}

/// Valence/arousal readout of the modulator levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionalState {
    /// In [-1, 1]: positive when dopamine dominates pain.
    pub valence: f64,
    /// In [0, 1]: combined modulator drive, saturating at `a_sat`.
    pub arousal: f64,
}

/// `valence = clamp((D − P)/(D + P + ε), −1, 1)`,
/// `arousal = clamp((D + P)/A_sat, 0, 1)`, on absolute levels.
pub fn emotional_appraisal(mods: &ModulatorState) -> EmotionalState {
    let d = mods.dopamine();
    let p = mods.pain();
    let eps = mods.params.epsilon;
    EmotionalState {
        valence: ((d - p) / (d + p + eps)).clamp(-1.0, 1.0),
        arousal: ((d + p) / mods.params.a_sat).clamp(0.0, 1.0),
    }
}
