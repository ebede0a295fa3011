//! Brute-force reference computations.
//!
//! Everything here works from materialized transition matrices, explicit
//! sums over `x_0`, exhaustive enumeration of small joint state spaces, or
//! event-driven simulation. None of it calls the closed forms in
//! [`crate::forward`], [`crate::backward`] or [`crate::loss`], so agreement
//! between the two code paths is meaningful.

use crate::error::{Error, Result};
use crate::model::Denoiser;
use crate::prob::{sample_categorical, ProbVector, Rng};
use crate::schedule::{NoiseSchedule, BETA_CAP};

type Matrix = Vec<Vec<f64>>;

/// Dense `abar I + (1 - abar) 1 m^T`, row `i` = distribution of the next
/// state given `i`.
pub fn dense_transition(abar: f64, m: &[f64]) -> Matrix {
    let k = m.len();
    let mut q = vec![vec![0.0; k]; k];
    for (i, row) in q.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (1.0 - abar) * m[j];
            if i == j {
                *v += abar;
            }
        }
    }
    q
}

fn normalize(v: Vec<f64>) -> Result<Vec<f64>> {
    let z: f64 = v.iter().sum();
    if !(z > 0.0) {
        return Err(Error::OracleDeviation("zero normalizer".into()));
    }
    Ok(v.into_iter().map(|x| x / z).collect())
}

/// Bayes posterior `q(x_s | x_t, x_0)` from dense matrices:
/// `q(x_t | x_s) q(x_s | x_0)`, normalized.
pub fn posterior_bayes(
    x_t: usize,
    x0: usize,
    s: f64,
    t: f64,
    m: &ProbVector,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    posterior_bayes_abar(
        x_t,
        x0,
        sched.alpha_bar(s)?,
        sched.alpha_bar(t)?,
        m.as_slice(),
    )
}

/// Same as [`posterior_bayes`] from raw survival probabilities.
pub fn posterior_bayes_abar(
    x_t: usize,
    x0: usize,
    abar_s: f64,
    abar_t: f64,
    m: &[f64],
) -> Result<Vec<f64>> {
    let q_s = dense_transition(abar_s, m);
    let q_ts = dense_transition(abar_t / abar_s, m);
    normalize((0..m.len()).map(|k| q_ts[k][x_t] * q_s[x0][k]).collect())
}

/// `sum_{x0} q(x_s | x_t, x0) f[x0]` by explicit summation.
pub fn p_theta_marginalized(
    f: &ProbVector,
    x_t: usize,
    s: f64,
    t: f64,
    m: &ProbVector,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    p_theta_marginalized_abar(
        f.as_slice(),
        x_t,
        sched.alpha_bar(s)?,
        sched.alpha_bar(t)?,
        m.as_slice(),
    )
}

pub fn p_theta_marginalized_abar(
    f: &[f64],
    x_t: usize,
    abar_s: f64,
    abar_t: f64,
    m: &[f64],
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; m.len()];
    for (x0, &w) in f.iter().enumerate() {
        let post = posterior_bayes_abar(x_t, x0, abar_s, abar_t, m)?;
        for (o, p) in out.iter_mut().zip(post) {
            *o += w * p;
        }
    }
    Ok(out)
}

/// Ratio estimator as the explicit sum `sum_{x0} f[x0] q_t(y|x0) / q_t(x|x0)`.
pub fn g_sum(
    f: &ProbVector,
    x: &[usize],
    d: usize,
    t: f64,
    m: &ProbVector,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    Ok(g_sum_abar(
        f.as_slice(),
        x[d],
        sched.alpha_bar(t)?,
        m.as_slice(),
    ))
}

pub fn g_sum_abar(f: &[f64], x: usize, abar: f64, m: &[f64]) -> Vec<f64> {
    let q = dense_transition(abar, m);
    (0..m.len())
        .map(|y| {
            f.iter()
                .enumerate()
                .map(|(x0, &w)| w * q[x0][y] / q[x0][x])
                .sum()
        })
        .collect()
}

/// `KL(q || p)` with `0 log 0 = 0`; infinite when `q` has mass where `p` does not.
pub fn exact_kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .filter(|(qi, _)| **qi > 0.0)
        .map(|(&qi, &pi)| {
            if pi > 0.0 {
                qi * (qi / pi).ln()
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Result of an event-driven forward simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct GillespieRun {
    pub state: Vec<usize>,
    /// Accepted jumps summed over elements.
    pub jumps: usize,
    /// Times the thinning envelope had to be raised.
    pub envelope_rebuilds: usize,
}

/// Exact simulation of the forward chain up to `t_end` by thinning. Each
/// element leaves category `x` at rate `beta(t) (1 - m[x])` and lands on
/// `y != x` with probability proportional to `m[y]`.
pub fn gillespie_forward(
    x0: &[usize],
    t_end: f64,
    sched: &NoiseSchedule,
    m: &ProbVector,
    rng: &mut Rng,
) -> Result<GillespieRun> {
    if !(t_end >= 0.0 && t_end <= sched.t_max()) {
        return Err(Error::TimeOutOfRange(format!(
            "t_end={t_end} outside [0, {}]",
            sched.t_max()
        )));
    }
    let grid = 1000;
    let mut envelope: f64 = (0..=grid)
        .map(|i| {
            sched
                .beta_rate(t_end * i as f64 / grid as f64, false)
                .map(|b| b.value)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max)
        * 1.1;
    let mut run = GillespieRun {
        state: x0.to_vec(),
        jumps: 0,
        envelope_rebuilds: 0,
    };
    if envelope <= 0.0 {
        return Ok(run);
    }
    for x in run.state.iter_mut() {
        let mut t = 0.0;
        loop {
            t += rng.exponential() / envelope;
            if t >= t_end {
                break;
            }
            let rate = sched.beta_rate(t, false)?.value.min(BETA_CAP) * (1.0 - m[*x]);
            if rate > envelope {
                envelope = rate * 1.1;
                run.envelope_rebuilds += 1;
                continue;
            }
            if rng.uniform() * envelope < rate {
                let mut w: Vec<f64> = m.as_slice().to_vec();
                w[*x] = 0.0;
                let total: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= total);
                *x = sample_categorical(&w, rng)?;
                run.jumps += 1;
            }
        }
    }
    Ok(run)
}

/// A distribution over all `K^D` sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    pub k: usize,
    pub d: usize,
    pub probs: Vec<f64>,
}

impl JointDistribution {
    pub fn new(k: usize, d: usize, probs: Vec<f64>) -> Result<Self> {
        let n = (0..d)
            .try_fold(1usize, |a, _| a.checked_mul(k))
            .filter(|&n| n <= 1 << 16);
        if n != Some(probs.len()) {
            return Err(Error::LengthMismatch {
                expected: n.unwrap_or(usize::MAX),
                got: probs.len(),
            });
        }
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidDistribution(
                "joint probabilities must be a distribution".into(),
            ));
        }
        Ok(JointDistribution { k, d, probs })
    }

    /// Point mass on one sequence.
    pub fn point(k: usize, d: usize, x: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; k.pow(d as u32)];
        probs[x.iter().fold(0, |a, &v| a * k + v)] = 1.0;
        JointDistribution::new(k, d, probs)
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    /// Sequence with joint index `i`, first element most significant.
    pub fn state(&self, mut i: usize) -> Vec<usize> {
        let mut x = vec![0; self.d];
        for slot in x.iter_mut().rev() {
            *slot = i % self.k;
            i /= self.k;
        }
        x
    }

    pub fn index(&self, x: &[usize]) -> usize {
        x.iter().fold(0, |a, &v| a * self.k + v)
    }

    /// `q(x_t | x_0)` as a product over elements of dense-matrix entries.
    pub fn transition_prob(&self, x0: &[usize], x_t: &[usize], q: &[Matrix]) -> f64 {
        (0..self.d).map(|d| q[d][x0[d]][x_t[d]]).product()
    }

    fn matrices(&self, abar: f64, m: &[&[f64]]) -> Vec<Matrix> {
        (0..self.d).map(|d| dense_transition(abar, m[d])).collect()
    }

    /// Marginal `q_t` over all sequences.
    pub fn q_t(&self, abar: f64, m: &[&[f64]]) -> Vec<f64> {
        let q = self.matrices(abar, m);
        let states: Vec<Vec<usize>> = (0..self.num_states()).map(|i| self.state(i)).collect();
        (0..self.num_states())
            .map(|j| {
                (0..self.num_states())
                    .filter(|&i| self.probs[i] > 0.0)
                    .map(|i| self.probs[i] * self.transition_prob(&states[i], &states[j], &q))
                    .sum()
            })
            .collect()
    }

    /// Joint posterior `q(x_0 | x_t)` over all sequences.
    pub fn posterior_joint(&self, x_t: &[usize], abar: f64, m: &[&[f64]]) -> Vec<f64> {
        let q = self.matrices(abar, m);
        let w: Vec<f64> = (0..self.num_states())
            .map(|i| self.probs[i] * self.transition_prob(&self.state(i), x_t, &q))
            .collect();
        let z: f64 = w.iter().sum();
        if z > 0.0 {
            w.into_iter().map(|v| v / z).collect()
        } else {
            let mut v = vec![0.0; self.num_states()];
            v[self.index(x_t)] = 1.0;
            v
        }
    }

    /// Per-element marginals of `q(x_0 | x_t)`.
    pub fn posterior_marginals(&self, x_t: &[usize], abar: f64, m: &[&[f64]]) -> Vec<Vec<f64>> {
        let joint = self.posterior_joint(x_t, abar, m);
        let mut out = vec![vec![0.0; self.k]; self.d];
        for (i, p) in joint.into_iter().enumerate() {
            for (d, &v) in self.state(i).iter().enumerate() {
                out[d][v] += p;
            }
        }
        out
    }

    /// Marginal of element `d`.
    pub fn element_marginal(&self, d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (i, p) in self.probs.iter().enumerate() {
            out[self.state(i)[d]] += p;
        }
        out
    }
}

/// Per-element stationary rows as slices.
pub fn stationary_rows(m: &crate::forward::Stationary, d: usize) -> Vec<&[f64]> {
    (0..d).map(|i| m.element(i).as_slice()).collect()
}

/// The exact posterior `q(x_0^d | x_t)` of a known data distribution,
/// usable wherever a trained model is.
pub struct ExactPosterior {
    pub joint: JointDistribution,
    pub sched: NoiseSchedule,
    pub m: crate::forward::Stationary,
}

impl Denoiser for ExactPosterior {
    fn num_categories(&self) -> usize {
        self.joint.k
    }

    fn num_elements(&self) -> usize {
        self.joint.d
    }

    fn predict(&self, x: &[usize], t: f64) -> Result<Vec<ProbVector>> {
        let abar = self.sched.alpha_bar(t)?;
        let rows = stationary_rows(&self.m, self.joint.d);
        self.joint
            .posterior_marginals(x, abar, &rows)
            .into_iter()
            .map(ProbVector::from_closed_form)
            .collect()
    }
}

/// `log p(x0)` of a two-latent chain `x_t -> x_s -> x0` with prior `m` on
/// `x_t`, transition `p_s_given_t[x_t]` and decoder `p0_given_s[x_s]`, by
/// summing over all latent pairs.
pub fn two_step_log_likelihood(
    x0: usize,
    prior: &[f64],
    p_s_given_t: &[Vec<f64>],
    p0_given_s: &[Vec<f64>],
) -> f64 {
    let k = prior.len();
    let mut total = 0.0;
    for xt in 0..k {
        for xs in 0..k {
            total += prior[xt] * p_s_given_t[xt][xs] * p0_given_s[xs][x0];
        }
    }
    total.ln()
}
