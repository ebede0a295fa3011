//! Discrete-time objectives: the exact KL term, cross-entropy, the closed-form
//! difference `p - q`, its quadratic KL approximation and the simplified
//! squared-norm loss.
//!
//! The per-element functions accept `f` as a raw slice so gradients can be
//! checked off the simplex; the backward transition is then the affine map
//! `f -> (1-mu) f + gamma(f) (e_{x_t} - m) + mu e_{x_t} ...` extended to all
//! of `R^K`.

use crate::error::{Error, Result};
use crate::forward::{posterior_q_with, Alphas, PosteriorCoefficients, Stationary};
use crate::prob::ProbVector;
use crate::schedule::NoiseSchedule;

use super::{ElementLoss, LossBreakdown, LossConfig};

fn kappa(c: &PosteriorCoefficients) -> f64 {
    c.mu - c.lambda - c.mu * c.abar_cond
}

/// Backward transition evaluated without validation.
pub(crate) fn p_theta_raw(
    c: &PosteriorCoefficients,
    f: &[f64],
    x_t: usize,
    m: &ProbVector,
) -> Vec<f64> {
    let gamma = kappa(c) * f[x_t];
    let keep = c.mu * c.abar_cond + gamma;
    let noise = c.mu * (1.0 - c.abar_cond) - gamma;
    f.iter()
        .zip(m.as_slice())
        .enumerate()
        .map(|(k, (&fk, &mk))| (1.0 - c.mu) * fk + noise * mk + if k == x_t { keep } else { 0.0 })
        .collect()
}

/// `KL(q(x_s | x_t, x_0) || p(x_s | x_t))` for one element.
pub fn vlb_element(
    c: &PosteriorCoefficients,
    f: &[f64],
    x_t: usize,
    x0: usize,
    m: &ProbVector,
) -> ElementLoss {
    let q = posterior_q_with(c, x_t, x0, m);
    let p = p_theta_raw(c, f, x_t, m);
    let k = f.len();
    let mut value = 0.0;
    let mut w = vec![0.0; k];
    for i in 0..k {
        let qi = q[i];
        if qi > 0.0 {
            if p[i] <= 0.0 {
                return ElementLoss::infinite(k);
            }
            value += qi * (qi.ln() - p[i].ln());
            w[i] = -qi / p[i];
        }
    }
    let wm: f64 = w.iter().zip(m.as_slice()).map(|(a, b)| a * b).sum();
    let mut grad: Vec<f64> = w.iter().map(|wi| (1.0 - c.mu) * wi).collect();
    grad[x_t] += kappa(c) * (w[x_t] - wm);
    ElementLoss { value, grad }
}

/// `-log f[x0]`.
pub fn ce_element(f: &[f64], x0: usize) -> ElementLoss {
    let mut grad = vec![0.0; f.len()];
    if f[x0] <= 0.0 {
        return ElementLoss::infinite(f.len());
    }
    grad[x0] = -1.0 / f[x0];
    ElementLoss {
        value: -f[x0].ln(),
        grad,
    }
}

/// `(1-mu) [f - e_{x0} + phi <f - e_{x0}, e_{x_t}> (e_{x_t} - m)]`.
pub fn delta_p_with(
    c: &PosteriorCoefficients,
    f: &[f64],
    x_t: usize,
    x0: usize,
    m: &ProbVector,
) -> Vec<f64> {
    let a = f[x_t] - if x_t == x0 { 1.0 } else { 0.0 };
    (0..f.len())
        .map(|k| {
            let diff = f[k] - if k == x0 { 1.0 } else { 0.0 };
            let dir = if k == x_t { 1.0 } else { 0.0 } - m[k];
            (1.0 - c.mu) * (diff + c.phi * a * dir)
        })
        .collect()
}

/// `sum_k delta_p[k]^2 / q[k]`, without the conventional one-half.
pub fn kl_approx_element(
    c: &PosteriorCoefficients,
    f: &[f64],
    x_t: usize,
    x0: usize,
    m: &ProbVector,
) -> ElementLoss {
    let q = posterior_q_with(c, x_t, x0, m);
    let delta = delta_p_with(c, f, x_t, x0, m);
    let k = f.len();
    let mut value = 0.0;
    let mut u = vec![0.0; k];
    for i in 0..k {
        if q[i] > 0.0 {
            value += delta[i] * delta[i] / q[i];
            u[i] = 2.0 * delta[i] / q[i];
        } else if delta[i] != 0.0 {
            return ElementLoss::infinite(k);
        }
    }
    let proj: f64 = (0..k)
        .map(|i| u[i] * (if i == x_t { 1.0 } else { 0.0 } - m[i]))
        .sum();
    let mut grad: Vec<f64> = u.iter().map(|ui| (1.0 - c.mu) * ui).collect();
    grad[x_t] += (1.0 - c.mu) * c.phi * proj;
    ElementLoss { value, grad }
}

/// `||f - e_{x0} + phi' <f - e_{x0}, e_{x_t}> (e_{x_t} - m)||^2` with
/// `phi' = min(1, phi)` when `phi_clip` is set.
pub fn l2_element(
    c: &PosteriorCoefficients,
    f: &[f64],
    x_t: usize,
    x0: usize,
    m: &ProbVector,
    phi_clip: bool,
) -> ElementLoss {
    let phi = if phi_clip { c.phi.min(1.0) } else { c.phi };
    let a = f[x_t] - if x_t == x0 { 1.0 } else { 0.0 };
    let dir: Vec<f64> = (0..f.len())
        .map(|k| if k == x_t { 1.0 } else { 0.0 } - m[k])
        .collect();
    let v: Vec<f64> = (0..f.len())
        .map(|k| f[k] - if k == x0 { 1.0 } else { 0.0 } + phi * a * dir[k])
        .collect();
    let value = v.iter().map(|x| x * x).sum();
    let proj: f64 = v.iter().zip(&dir).map(|(a, b)| 2.0 * a * b).sum();
    let mut grad: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
    grad[x_t] += phi * proj;
    ElementLoss { value, grad }
}

fn check_lengths<F: AsRef<[f64]>>(f_outs: &[F], x_t: &[usize], x0: &[usize]) -> Result<()> {
    if f_outs.len() != x_t.len() {
        return Err(Error::LengthMismatch {
            expected: x_t.len(),
            got: f_outs.len(),
        });
    }
    if x0.len() != x_t.len() {
        return Err(Error::LengthMismatch {
            expected: x_t.len(),
            got: x0.len(),
        });
    }
    Ok(())
}

/// Sum over elements of the exact KL term for the step `s -> t`. With
/// `s = 0` each element contributes `-log p(x_0 | x_t)`.
pub fn vlb_term<F: AsRef<[f64]>>(
    f_outs: &[F],
    x_t: &[usize],
    x0: &[usize],
    s: f64,
    t: f64,
    m: &Stationary,
    sched: &NoiseSchedule,
) -> Result<f64> {
    check_lengths(f_outs, x_t, x0)?;
    let alphas = Alphas::new(sched, s, t)?;
    Ok((0..x_t.len())
        .map(|d| {
            let md = m.element(d);
            let c = PosteriorCoefficients::new(alphas, md[x_t[d]]);
            vlb_element(&c, f_outs[d].as_ref(), x_t[d], x0[d], md).value
        })
        .sum())
}

/// `sum_d -log f_d[x0_d]`.
pub fn ce_loss<F: AsRef<[f64]>>(f_outs: &[F], x0: &[usize]) -> Result<f64> {
    if f_outs.len() != x0.len() {
        return Err(Error::LengthMismatch {
            expected: x0.len(),
            got: f_outs.len(),
        });
    }
    Ok(f_outs
        .iter()
        .zip(x0)
        .map(|(f, &x)| ce_element(f.as_ref(), x).value)
        .sum())
}

pub fn delta_p(
    f: &ProbVector,
    x_t: usize,
    x0: usize,
    s: f64,
    t: f64,
    m: &ProbVector,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let c = PosteriorCoefficients::new(Alphas::new(sched, s, t)?, m[x_t]);
    Ok(delta_p_with(&c, f.as_slice(), x_t, x0, m))
}

pub fn kl_approx(
    f: &ProbVector,
    x_t: usize,
    x0: usize,
    s: f64,
    t: f64,
    m: &ProbVector,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let c = PosteriorCoefficients::new(Alphas::new(sched, s, t)?, m[x_t]);
    Ok(kl_approx_element(&c, f.as_slice(), x_t, x0, m).value)
}

#[allow(clippy::too_many_arguments)]
pub fn l2_simplified(
    f: &ProbVector,
    x_t: usize,
    x0: usize,
    s: f64,
    t: f64,
    m: &ProbVector,
    sched: &NoiseSchedule,
    phi_clip: bool,
) -> Result<f64> {
    let c = PosteriorCoefficients::new(Alphas::new(sched, s, t)?, m[x_t]);
    Ok(l2_element(&c, f.as_slice(), x_t, x0, m, phi_clip).value)
}

/// Configured combination of the discrete objectives over all elements,
/// with the gradient for each element's `f`. The exact KL term is used as
/// the variational part.
pub fn combined_loss<F: AsRef<[f64]>>(
    cfg: &LossConfig,
    f_outs: &[F],
    x_t: &[usize],
    x0: &[usize],
    alphas: Alphas,
    m: &Stationary,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    check_lengths(f_outs, x_t, x0)?;
    let (wv, wc, wl) = cfg.mode.weights(cfg.ce_weight);
    let mut out = LossBreakdown {
        ce_weight: cfg.ce_weight,
        ..Default::default()
    };
    let mut grads = Vec::with_capacity(x_t.len());
    for d in 0..x_t.len() {
        let f = f_outs[d].as_ref();
        let md = m.element(d);
        let c = PosteriorCoefficients::new(alphas, md[x_t[d]]);
        let mut total = ElementLoss::zero(f.len());
        let ce = ce_element(f, x0[d]);
        total.add_scaled(wc, &ce);
        out.ce += ce.value;
        if wv != 0.0 {
            let vlb = vlb_element(&c, f, x_t[d], x0[d], md);
            total.add_scaled(wv, &vlb);
            out.vlb += vlb.value;
        }
        if wl != 0.0 {
            let l2 = l2_element(&c, f, x_t[d], x0[d], md, cfg.phi_clip);
            total.add_scaled(wl, &l2);
            out.l2 += l2.value;
        }
        out.total += total.value;
        grads.push(total.grad);
    }
    Ok((out, grads))
}
