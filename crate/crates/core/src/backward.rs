//! Closed-form backward transition `p(x_s | x_t)` and its reparameterized
//! sampler.
//!
//! The model predicts `f = p(x_0 | x_t)` per element. Marginalizing the
//! forward posterior over `x_0` under `f` collapses into a mixture of three
//! branches: follow the prediction, keep `x_t`, or draw from `m`.

use crate::error::{Error, Result};
use crate::forward::{Alphas, PosteriorCoefficients, Sequence, Stationary};
use crate::prob::{sample_categorical, ProbVector, Rng};
use crate::schedule::NoiseSchedule;

/// `gamma = (mu - lambda - mu * abar_{t|s}) <f, x_t>`.
pub fn gamma_with(c: &PosteriorCoefficients, f: &[f64], x_t: usize) -> f64 {
    (c.mu - c.lambda - c.mu * c.abar_cond) * f[x_t]
}

pub fn gamma_coeff(
    f: &ProbVector,
    x_t: usize,
    s: f64,
    t: f64,
    m: &ProbVector,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let c = PosteriorCoefficients::new(Alphas::new(sched, s, t)?, m[x_t]);
    Ok(gamma_with(&c, f.as_slice(), x_t))
}

/// Mixture weights of the three backward branches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackwardBranchProbs {
    pub p_pred: f64,
    pub p_keep: f64,
    pub p_noise: f64,
}

impl BackwardBranchProbs {
    /// Branch weights, with floating-point negatives clamped and the triple
    /// renormalized.
    pub fn new(c: &PosteriorCoefficients, f: &[f64], x_t: usize) -> Self {
        let gamma = gamma_with(c, f, x_t);
        let raw = [
            1.0 - c.mu,
            c.mu * c.abar_cond + gamma,
            c.mu * (1.0 - c.abar_cond) - gamma,
        ];
        debug_assert!(raw.iter().all(|&v| v >= -1e-9), "branch weights {raw:?}");
        let clamped = raw.map(|v| v.max(0.0));
        let sum: f64 = clamped.iter().sum();
        BackwardBranchProbs {
            p_pred: clamped[0] / sum,
            p_keep: clamped[1] / sum,
            p_noise: clamped[2] / sum,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p_pred, self.p_keep, self.p_noise]
    }
}

/// `(1-mu) f + (mu abar_{t|s} + gamma) e_{x_t} + (mu (1-abar_{t|s}) - gamma) m`.
pub fn p_theta_with(
    c: &PosteriorCoefficients,
    f: &[f64],
    x_t: usize,
    m: &ProbVector,
) -> ProbVector {
    let gamma = gamma_with(c, f, x_t);
    let keep = c.mu * c.abar_cond + gamma;
    let noise = c.mu * (1.0 - c.abar_cond) - gamma;
    let v = f
        .iter()
        .zip(m.as_slice())
        .enumerate()
        .map(|(k, (&fk, &mk))| (1.0 - c.mu) * fk + noise * mk + if k == x_t { keep } else { 0.0 })
        .collect();
    ProbVector::from_closed_form(v).expect("backward transition is a convex mixture")
}

pub fn p_theta_s_given_t(
    f: &ProbVector,
    x_t: usize,
    s: f64,
    t: f64,
    m: &ProbVector,
    sched: &NoiseSchedule,
) -> Result<ProbVector> {
    if f.len() != m.len() {
        return Err(Error::LengthMismatch {
            expected: m.len(),
            got: f.len(),
        });
    }
    let c = PosteriorCoefficients::new(Alphas::new(sched, s, t)?, m[x_t]);
    Ok(p_theta_with(&c, f.as_slice(), x_t, m))
}

/// One reparameterized backward draw for every element, given survival
/// probabilities for the step.
pub fn backward_step_alphas(
    f_outs: &[ProbVector],
    x_t: &[usize],
    alphas: Alphas,
    m: &Stationary,
    rng: &mut Rng,
) -> Result<Sequence> {
    if f_outs.len() != x_t.len() {
        return Err(Error::LengthMismatch {
            expected: x_t.len(),
            got: f_outs.len(),
        });
    }
    x_t.iter()
        .zip(f_outs)
        .enumerate()
        .map(|(d, (&x, f))| {
            let md = m.element(d);
            let c = PosteriorCoefficients::new(alphas, md[x]);
            let b = BackwardBranchProbs::new(&c, f.as_slice(), x);
            match sample_categorical(&b.as_array(), rng)? {
                0 => sample_categorical(f.as_slice(), rng),
                1 => Ok(x),
                _ => sample_categorical(md.as_slice(), rng),
            }
        })
        .collect()
}

pub fn backward_step(
    f_outs: &[ProbVector],
    x_t: &[usize],
    s: f64,
    t: f64,
    m: &Stationary,
    sched: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Sequence> {
    backward_step_alphas(f_outs, x_t, Alphas::new(sched, s, t)?, m, rng)
}
