//! Continuous-time objectives built on the ratio estimator
//! `g(y | x) ~ q_t(y) / q_t(x)` for single-element changes.
//!
//! The two-pass form evaluates the model at `x_t` and at an auxiliary state
//! `z_t` that differs from `x_t` in one element; the single-pass form folds
//! the auxiliary expectation back into one evaluation. Both drop the same
//! additive constant, so they agree in expectation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{marginal_t_given_0, Sequence, Stationary};
use crate::prob::{sample_categorical, ProbVector, Rng};
use crate::schedule::NoiseSchedule;

use super::ElementLoss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtmcLoss {
    SinglePass,
    TwoPass,
}

/// Unnormalized weight `S^d(y | x)` for replacing element `d` by `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxKind {
    /// `S = 1` for every `y != x`.
    Uniform,
    /// `S = m^d[y]`, proportional to the forward jump rate.
    ForwardRate,
}

impl AuxKind {
    pub fn weight(self, y: usize, md: &ProbVector) -> f64 {
        match self {
            AuxKind::Uniform => 1.0,
            AuxKind::ForwardRate => md[y],
        }
    }

    /// Total weight of leaving category `x` in one element.
    pub fn element_total(self, x: usize, md: &ProbVector) -> f64 {
        match self {
            AuxKind::Uniform => (md.len() - 1) as f64,
            AuxKind::ForwardRate => 1.0 - md[x],
        }
    }

    /// Total weight of all single-element changes of `x`.
    pub fn total(self, x: &[usize], m: &Stationary) -> f64 {
        x.iter()
            .enumerate()
            .map(|(d, &xd)| self.element_total(xd, m.element(d)))
            .sum()
    }
}

/// Schedule quantities needed at one time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtmcContext {
    pub abar: f64,
    pub beta: f64,
    pub t_max: f64,
}

impl CtmcContext {
    pub fn new(sched: &NoiseSchedule, t: f64, clip_beta: bool) -> Result<Self> {
        Ok(CtmcContext {
            abar: sched.alpha_bar(t)?,
            beta: sched.beta_rate(t, clip_beta)?.value,
            t_max: sched.t_max(),
        })
    }
}

/// Ratio estimator for element `d` at category `x`, with its Jacobian
/// applied lazily by [`g_backward`].
pub fn g_element(f: &[f64], x: usize, abar: f64, md: &ProbVector) -> Result<Vec<f64>> {
    let mx = md[x];
    if mx <= 0.0 {
        return Err(Error::Domain(format!(
            "stationary mass at category {x} is zero"
        )));
    }
    let den = abar + (1.0 - abar) * mx;
    let shrink = 1.0 - abar * f[x] / den;
    let rho = abar / (1.0 - abar);
    Ok((0..f.len())
        .map(|y| {
            if y == x {
                1.0
            } else {
                (shrink * md[y] + rho * f[y]) / mx
            }
        })
        .collect())
}

/// Pulls `dL/dg` back to `dL/df` for [`g_element`].
pub fn g_backward(dg: &[f64], x: usize, abar: f64, md: &ProbVector) -> Vec<f64> {
    let mx = md[x];
    let den = abar + (1.0 - abar) * mx;
    let rho = abar / (1.0 - abar);
    let mut grad = vec![0.0; dg.len()];
    let mut at_x = 0.0;
    for y in 0..dg.len() {
        if y == x {
            continue;
        }
        grad[y] = dg[y] * rho / mx;
        at_x -= dg[y] * abar * md[y] / (den * mx);
    }
    grad[x] = at_x;
    grad
}

/// `g^d(. | x)` at time `t` of a continuous schedule.
pub fn g_theta(
    f: &ProbVector,
    x: &[usize],
    d: usize,
    t: f64,
    m: &Stationary,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    g_element(f.as_slice(), x[d], sched.alpha_bar(t)?, m.element(d))
}

/// Single-pass term for one element:
/// `T r(x | .)^T (g - q0 log g / q0[x])`.
pub fn single_pass_element(
    f: &[f64],
    x: usize,
    x0: usize,
    ctx: &CtmcContext,
    md: &ProbVector,
) -> Result<ElementLoss> {
    let k = f.len();
    let g = g_element(f, x, ctx.abar, md)?;
    let q0 = marginal_t_given_0(x0, ctx.abar, md);
    if q0[x] <= 0.0 {
        return Err(Error::Domain(format!(
            "zero forward likelihood at category {x}"
        )));
    }
    let scale = ctx.t_max * ctx.beta;
    // Diagonal of the rate column: g = 1 and log g = 0.
    let mut value = scale * (md[x] - 1.0);
    let mut dg = vec![0.0; k];
    for y in 0..k {
        if y == x {
            continue;
        }
        let r = scale * md[x];
        if r == 0.0 {
            continue;
        }
        let ratio = q0[y] / q0[x];
        if g[y] <= 0.0 {
            if ratio > 0.0 {
                return Ok(ElementLoss::infinite(k));
            }
            value += r * g[y];
            dg[y] = r;
            continue;
        }
        value += r * (g[y] - ratio * g[y].ln());
        dg[y] = r * (1.0 - ratio / g[y]);
    }
    Ok(ElementLoss {
        value,
        grad: g_backward(&dg, x, ctx.abar, md),
    })
}

fn check<F: AsRef<[f64]>>(f_outs: &[F], x: &[usize], x0: &[usize]) -> Result<()> {
    if f_outs.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: f_outs.len(),
        });
    }
    if x0.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: x0.len(),
        });
    }
    Ok(())
}

/// Single-pass objective summed over elements, with per-element gradients.
pub fn single_pass<F: AsRef<[f64]>>(
    f_outs: &[F],
    x0: &[usize],
    x_t: &[usize],
    ctx: &CtmcContext,
    m: &Stationary,
) -> Result<(f64, Vec<Vec<f64>>)> {
    check(f_outs, x_t, x0)?;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(x_t.len());
    for d in 0..x_t.len() {
        let e = single_pass_element(f_outs[d].as_ref(), x_t[d], x0[d], ctx, m.element(d))?;
        value += e.value;
        grads.push(e.grad);
    }
    Ok((value, grads))
}

pub fn ctmc_vlb_single_pass<F: AsRef<[f64]>>(
    f_outs: &[F],
    x0: &[usize],
    x_t: &[usize],
    t: f64,
    m: &Stationary,
    sched: &NoiseSchedule,
) -> Result<f64> {
    Ok(single_pass(f_outs, x0, x_t, &CtmcContext::new(sched, t, false)?, m)?.0)
}

/// Normalizer of the auxiliary importance weight:
/// `sum_d sum_{y != z^d} q0^d(y) / q0^d(z^d) * S^d(z^d | y) / S_total(y o z)`
/// where `y o z` replaces element `d` of `z` by `y`.
pub fn aux_normalizer(kind: AuxKind, z: &[usize], x0: &[usize], abar: f64, m: &Stationary) -> f64 {
    let total_z = kind.total(z, m);
    let mut acc = 0.0;
    for d in 0..z.len() {
        let md = m.element(d);
        let q0 = marginal_t_given_0(x0[d], abar, md);
        for y in 0..md.len() {
            if y == z[d] {
                continue;
            }
            let total_y = total_z - kind.element_total(z[d], md) + kind.element_total(y, md);
            acc += q0[y] / q0[z[d]] * kind.weight(z[d], md) / total_y;
        }
    }
    acc
}

/// Two-pass objective value and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPassLoss {
    pub value: f64,
    /// Gradient with respect to the model output at `x_t`.
    pub grad_x: Vec<Vec<f64>>,
    /// Gradient with respect to the model output at `z_t`.
    pub grad_z: Vec<Vec<f64>>,
}

/// Index of the single element where `a` and `b` differ.
pub fn single_difference(a: &[usize], b: &[usize]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let diffs: Vec<usize> = (0..a.len()).filter(|&d| a[d] != b[d]).collect();
    match diffs.as_slice() {
        [d] => Ok(*d),
        _ => Err(Error::Domain(format!(
            "auxiliary state differs in {} elements, need exactly 1",
            diffs.len()
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn two_pass<F: AsRef<[f64]>, G: AsRef<[f64]>>(
    f_x: &[F],
    f_z: &[G],
    x0: &[usize],
    x_t: &[usize],
    z_t: &[usize],
    ctx: &CtmcContext,
    kind: AuxKind,
    m: &Stationary,
) -> Result<TwoPassLoss> {
    check(f_x, x_t, x0)?;
    check(f_z, z_t, x0)?;
    single_difference(x_t, z_t)?;
    let scale = ctx.t_max * ctx.beta;
    let norm = aux_normalizer(kind, z_t, x0, ctx.abar, m);
    let mut value = 0.0;
    let mut grad_x = Vec::with_capacity(x_t.len());
    let mut grad_z = Vec::with_capacity(x_t.len());
    for d in 0..x_t.len() {
        let md = m.element(d);
        let k = md.len();

        let (x, fx) = (x_t[d], f_x[d].as_ref());
        let g = g_element(fx, x, ctx.abar, md)?;
        value += scale * (md[x] - 1.0);
        let mut dg = vec![0.0; k];
        for y in (0..k).filter(|&y| y != x) {
            value += scale * md[x] * g[y];
            dg[y] = scale * md[x];
        }
        grad_x.push(g_backward(&dg, x, ctx.abar, md));

        let (z, fz) = (z_t[d], f_z[d].as_ref());
        let gz = g_element(fz, z, ctx.abar, md)?;
        let q0 = marginal_t_given_0(x0[d], ctx.abar, md);
        let mut dgz = vec![0.0; k];
        for y in (0..k).filter(|&y| y != z) {
            let w = scale * md[z] * q0[y] / (q0[z] * norm);
            if w == 0.0 {
                continue;
            }
            if gz[y] <= 0.0 {
                return Ok(TwoPassLoss {
                    value: f64::INFINITY,
                    grad_x,
                    grad_z: vec![vec![0.0; k]; x_t.len()],
                });
            }
            value -= w * gz[y].ln();
            dgz[y] = -w / gz[y];
        }
        grad_z.push(g_backward(&dgz, z, ctx.abar, md));
    }
    Ok(TwoPassLoss {
        value,
        grad_x,
        grad_z,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn ctmc_vlb_two_pass<F: AsRef<[f64]>, G: AsRef<[f64]>>(
    f_x: &[F],
    f_z: &[G],
    x0: &[usize],
    x_t: &[usize],
    z_t: &[usize],
    t: f64,
    kind: AuxKind,
    m: &Stationary,
    sched: &NoiseSchedule,
) -> Result<f64> {
    Ok(two_pass(
        f_x,
        f_z,
        x0,
        x_t,
        z_t,
        &CtmcContext::new(sched, t, false)?,
        kind,
        m,
    )?
    .value)
}

/// All single-element changes of `x` with their sampling probabilities, in
/// ascending `(d, y)` order.
pub fn aux_candidates(x: &[usize], kind: AuxKind, m: &Stationary) -> Vec<(Sequence, f64)> {
    let total = kind.total(x, m);
    let mut out = Vec::new();
    for d in 0..x.len() {
        let md = m.element(d);
        for y in (0..md.len()).filter(|&y| y != x[d]) {
            let mut z = x.to_vec();
            z[d] = y;
            out.push((z, kind.weight(y, md) / total));
        }
    }
    out
}

/// Draws an auxiliary state that differs from `x` in exactly one element.
pub fn sample_auxiliary(
    x: &[usize],
    kind: AuxKind,
    m: &Stationary,
    rng: &mut Rng,
) -> Result<Sequence> {
    if m.k() < 2 {
        return Err(Error::Domain("auxiliary sampling needs K >= 2".into()));
    }
    let mut candidates = aux_candidates(x, kind, m);
    let probs: Vec<f64> = candidates.iter().map(|(_, p)| *p).collect();
    let i = sample_categorical(&probs, rng)?;
    Ok(candidates.swap_remove(i).0)
}
