//! Training objectives for both time modes.
//!
//! Every per-element loss returns its value together with the gradient with
//! respect to the model output `f` for that element, so model backends only
//! need a vector-Jacobian product through their softmax.

use serde::{Deserialize, Serialize};

pub mod continuous;
pub mod discrete;

/// A scalar loss and its gradient with respect to one element's `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl ElementLoss {
    pub fn zero(k: usize) -> Self {
        ElementLoss {
            value: 0.0,
            grad: vec![0.0; k],
        }
    }

    /// Non-finite value with a zero gradient; the caller is expected to
    /// reject it.
    pub fn infinite(k: usize) -> Self {
        ElementLoss {
            value: f64::INFINITY,
            grad: vec![0.0; k],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }

    /// `self += w * other`.
    pub fn add_scaled(&mut self, w: f64, other: &ElementLoss) {
        if w == 0.0 {
            return;
        }
        self.value += w * other.value;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += w * o;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Variational term plus a small cross-entropy weight.
    Usd3,
    /// Simplified quadratic term plus cross-entropy.
    Usd3Star,
    CeOnly,
    VlbOnly,
}

impl LossMode {
    pub fn default_ce_weight(self) -> f64 {
        match self {
            LossMode::Usd3 => 0.001,
            LossMode::Usd3Star | LossMode::CeOnly => 1.0,
            LossMode::VlbOnly => 0.0,
        }
    }

    /// Weights applied to `(vlb, ce, l2)`.
    pub fn weights(self, ce_weight: f64) -> (f64, f64, f64) {
        match self {
            LossMode::Usd3 => (1.0, ce_weight, 0.0),
            LossMode::Usd3Star => (0.0, ce_weight, 1.0),
            LossMode::CeOnly => (0.0, 1.0, 0.0),
            LossMode::VlbOnly => (1.0, 0.0, 0.0),
        }
    }
}

/// Loss components summed over elements.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub vlb: f64,
    pub ce: f64,
    pub l2: f64,
    pub total: f64,
    pub ce_weight: f64,
}

impl LossBreakdown {
    pub fn scaled(self, w: f64) -> Self {
        LossBreakdown {
            vlb: self.vlb * w,
            ce: self.ce * w,
            l2: self.l2 * w,
            total: self.total * w,
            ..self
        }
    }

    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.vlb += other.vlb;
        self.ce += other.ce;
        self.l2 += other.l2;
        self.total += other.total;
        self.ce_weight = other.ce_weight;
    }
}

/// Loss selection shared by both time modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mode: LossMode,
    pub ce_weight: f64,
    /// Clip `phi` to `min(1, phi)` in the quadratic loss.
    pub phi_clip: bool,
    /// `s = s_ratio * t` for the quadratic loss in continuous time.
    pub s_ratio: f64,
    pub ctmc: continuous::CtmcLoss,
    pub aux: continuous::AuxKind,
    /// Use `max(1, beta)` in the continuous objectives.
    pub clip_beta: bool,
}

impl LossConfig {
    pub fn new(mode: LossMode) -> Self {
        LossConfig {
            mode,
            ce_weight: mode.default_ce_weight(),
            phi_clip: true,
            s_ratio: 0.95,
            ctmc: continuous::CtmcLoss::SinglePass,
            aux: continuous::AuxKind::Uniform,
            clip_beta: false,
        }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::new(LossMode::Usd3)
    }
}
