//! The forward noising process shared by discrete and continuous time.
//!
//! Every transition has the form `abar * I + (1 - abar) * 1 m^T`: an element
//! survives with probability `abar` and is otherwise redrawn from the
//! stationary distribution `m`. Matrices are kept implicit as `(abar, m)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{sample_categorical, ProbVector, Rng};
use crate::schedule::NoiseSchedule;

/// A sequence of `D` category indices.
pub type Sequence = Vec<usize>;

/// Stationary distribution, shared by all elements or given per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stationary {
    Shared(ProbVector),
    PerElement(Vec<ProbVector>),
}

impl Stationary {
    pub fn uniform(k: usize) -> Self {
        Stationary::Shared(ProbVector::uniform(k))
    }

    /// `m^d`.
    pub fn element(&self, d: usize) -> &ProbVector {
        match self {
            Stationary::Shared(m) => m,
            Stationary::PerElement(ms) => &ms[d],
        }
    }

    pub fn k(&self) -> usize {
        self.element(0).len()
    }

    /// Checks that the distribution fits `D` elements over `K` categories.
    pub fn validate(&self, k: usize, d: usize) -> Result<()> {
        let ms: Vec<&ProbVector> = match self {
            Stationary::Shared(m) => vec![m],
            Stationary::PerElement(ms) => {
                if ms.len() != d {
                    return Err(Error::LengthMismatch {
                        expected: d,
                        got: ms.len(),
                    });
                }
                ms.iter().collect()
            }
        };
        for m in ms {
            if m.len() != k {
                return Err(Error::LengthMismatch {
                    expected: k,
                    got: m.len(),
                });
            }
        }
        Ok(())
    }
}

/// `abar * I + (1 - abar) * 1 m^T`, stored implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub abar: f64,
    pub m: ProbVector,
}

impl TransitionMatrix {
    /// Probability of moving from `from` to `to`.
    pub fn entry(&self, from: usize, to: usize) -> f64 {
        let keep = if from == to { self.abar } else { 0.0 };
        keep + (1.0 - self.abar) * self.m[to]
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        let k = self.m.len();
        (0..k)
            .map(|i| (0..k).map(|j| self.entry(i, j)).collect())
            .collect()
    }
}

pub fn transition_matrix(abar: f64, m: &ProbVector) -> TransitionMatrix {
    TransitionMatrix { abar, m: m.clone() }
}

/// `abar_t * e_{x0} + (1 - abar_t) * m`.
pub fn marginal_t_given_0(x0: usize, abar_t: f64, m: &ProbVector) -> ProbVector {
    let v = m
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, &mk)| (1.0 - abar_t) * mk + if k == x0 { abar_t } else { 0.0 })
        .collect();
    ProbVector::from_closed_form(v).expect("convex mixture of distributions")
}

/// Forward sample: each element keeps its value with probability `abar_t`,
/// otherwise it is redrawn from `m^d`.
pub fn sample_forward_abar(
    x0: &[usize],
    abar_t: f64,
    m: &Stationary,
    rng: &mut Rng,
) -> Result<Sequence> {
    x0.iter()
        .enumerate()
        .map(|(d, &x)| {
            if rng.bernoulli(abar_t) {
                Ok(x)
            } else {
                sample_categorical(m.element(d).as_slice(), rng)
            }
        })
        .collect()
}

pub fn sample_forward(
    x0: &[usize],
    t: f64,
    sched: &NoiseSchedule,
    m: &Stationary,
    rng: &mut Rng,
) -> Result<Sequence> {
    let abar = sched.alpha_bar(t)?;
    sample_forward_abar(x0, abar, m, rng)
}

/// Survival probabilities for a step `s -> t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alphas {
    pub s: f64,
    pub t: f64,
    pub cond: f64,
}

impl Alphas {
    pub fn new(sched: &NoiseSchedule, s: f64, t: f64) -> Result<Self> {
        Ok(Alphas {
            s: sched.alpha_bar(s)?,
            t: sched.alpha_bar(t)?,
            cond: sched.alpha_bar_cond(s, t)?,
        })
    }

    /// From raw values, for hand-worked cases.
    pub fn from_values(abar_s: f64, abar_t: f64) -> Self {
        Alphas {
            s: abar_s,
            t: abar_t,
            cond: abar_t / abar_s.max(1e-300),
        }
    }
}

/// `(lambda, mu, abar_{t|s}, phi)` for a step `s -> t` at a given `<m, x_t>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoefficients {
    pub lambda: f64,
    pub mu: f64,
    pub abar_cond: f64,
    pub phi: f64,
}

impl PosteriorCoefficients {
    /// `m_xt` is `<m, x_t>`. At `abar_s = 1` all three coefficients are
    /// exactly zero.
    pub fn new(alphas: Alphas, m_xt: f64) -> Self {
        if alphas.s >= 1.0 {
            return PosteriorCoefficients {
                lambda: 0.0,
                mu: 0.0,
                abar_cond: alphas.cond,
                phi: 0.0,
            };
        }
        let denom = alphas.t + (1.0 - alphas.t) * m_xt;
        let one_minus_s = 1.0 - alphas.s;
        PosteriorCoefficients {
            lambda: one_minus_s * (1.0 - alphas.cond) * m_xt / denom,
            mu: one_minus_s / (1.0 - alphas.t),
            abar_cond: alphas.cond,
            phi: one_minus_s * alphas.cond / denom,
        }
    }
}

pub fn posterior_coefficients(
    s: f64,
    t: f64,
    x_t: usize,
    m: &ProbVector,
    sched: &NoiseSchedule,
) -> Result<PosteriorCoefficients> {
    let alphas = Alphas::new(sched, s, t)?;
    Ok(PosteriorCoefficients::new(alphas, m[x_t]))
}

/// Closed-form `q(x_s | x_t, x_0)` for one element.
pub fn posterior_q_with(
    c: &PosteriorCoefficients,
    x_t: usize,
    x0: usize,
    m: &ProbVector,
) -> ProbVector {
    let v = if x_t == x0 {
        m.as_slice()
            .iter()
            .enumerate()
            .map(|(k, &mk)| c.lambda * mk + if k == x_t { 1.0 - c.lambda } else { 0.0 })
            .collect()
    } else {
        let keep = c.mu * c.abar_cond;
        let noise = c.mu * (1.0 - c.abar_cond);
        m.as_slice()
            .iter()
            .enumerate()
            .map(|(k, &mk)| {
                let mut v = noise * mk;
                if k == x0 {
                    v += 1.0 - c.mu;
                }
                if k == x_t {
                    v += keep;
                }
                v
            })
            .collect()
    };
    ProbVector::from_closed_form(v).expect("posterior is a convex mixture")
}

pub fn posterior_q(
    x_t: usize,
    x0: usize,
    s: f64,
    t: f64,
    m: &ProbVector,
    sched: &NoiseSchedule,
) -> Result<ProbVector> {
    let c = posterior_coefficients(s, t, x_t, m, sched)?;
    Ok(posterior_q_with(&c, x_t, x0, m))
}

/// Rate row `r(. | x) = beta (m - e_x)` and column `r(x | .) = beta (<x,m> 1 - e_x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRates {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
}

pub fn forward_rates_at(x: usize, beta: f64, m: &ProbVector) -> ForwardRates {
    let row = m
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, &mk)| beta * (mk - if k == x { 1.0 } else { 0.0 }))
        .collect();
    let col = (0..m.len())
        .map(|k| beta * (m[x] - if k == x { 1.0 } else { 0.0 }))
        .collect();
    ForwardRates { row, col }
}

/// Forward rates at time `t` of a continuous schedule.
pub fn forward_rate_row(
    x: usize,
    t: f64,
    m: &ProbVector,
    sched: &NoiseSchedule,
) -> Result<ForwardRates> {
    let beta = sched.beta_rate(t, false)?.value;
    Ok(forward_rates_at(x, beta, m))
}
