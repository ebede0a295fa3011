//! Backward generation over an arbitrary time grid, with an optional MCMC
//! corrector whose stationary distribution is the time-`t` marginal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::backward_step_alphas;
use crate::error::{Error, Result};
use crate::forward::{Alphas, Sequence, Stationary};
use crate::model::Denoiser;
use crate::prob::{child_seed, sample_categorical, ProbVector, Rng};
use crate::schedule::{NoiseSchedule, TimeMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpacing {
    Uniform,
    /// Denser near `t = 0`.
    Geometric,
}

/// Strictly increasing times from exactly 0 to exactly `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::Config(
                "time grid must start at 0 and have at least one step".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "time grid must be strictly increasing".into(),
            ));
        }
        Ok(TimeGrid { times })
    }

    /// `steps` intervals over `[0, T]`. Discrete schedules get integer
    /// times, with duplicates removed.
    pub fn for_schedule(sched: &NoiseSchedule, steps: usize, spacing: GridSpacing) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("need at least one generation step".into()));
        }
        let tt = sched.t_max();
        let rho: f64 = 3.0;
        let mut times: Vec<f64> = (0..=steps)
            .map(|i| {
                let u = i as f64 / steps as f64;
                match spacing {
                    GridSpacing::Uniform => tt * u,
                    GridSpacing::Geometric => tt * ((rho * u).exp() - 1.0) / (rho.exp() - 1.0),
                }
            })
            .collect();
        times[steps] = tt;
        if sched.mode() == TimeMode::Discrete {
            times.iter_mut().for_each(|t| *t = t.round());
            times.dedup();
        }
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    fn check(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.end() != sched.t_max() {
            return Err(Error::Config(format!(
                "grid ends at {} but the schedule ends at {}",
                self.end(),
                sched.t_max()
            )));
        }
        if sched.mode() == TimeMode::Discrete && self.times.iter().any(|t| t.fract() != 0.0) {
            return Err(Error::Config(
                "discrete schedules need integer grid times".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcOptions {
    pub enabled: bool,
    /// Corrector step size.
    pub dn: f64,
    /// Corrector rounds per application.
    pub steps: usize,
    /// Apply only during the last `start_step` generation steps.
    pub start_step: usize,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            enabled: false,
            dn: 0.01,
            steps: 5,
            start_step: 10,
        }
    }
}

/// Counters gathered while generating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GenerationStats {
    pub corrector_rounds: usize,
    /// Element updates whose move mass exceeded 1 and was rescaled.
    pub clipped: usize,
}

/// One-round corrector transition for one element, and whether its move
/// mass had to be clipped to 1.
pub fn corrector_distribution(
    f: &[f64],
    x: usize,
    abar: f64,
    beta: f64,
    dn: f64,
    md: &ProbVector,
) -> Result<(ProbVector, bool)> {
    let mx = md[x];
    let den = abar + (1.0 - abar) * mx;
    let a = 2.0 - abar * f[x] / den;
    let rho = abar / (1.0 - abar);
    let mut p: Vec<f64> = (0..f.len())
        .map(|y| {
            if y == x {
                0.0
            } else {
                dn * beta * (a * md[y] + rho * f[y])
            }
        })
        .collect();
    let mass: f64 = p.iter().sum();
    let clipped = mass > 1.0;
    let mass = if clipped {
        p.iter_mut().for_each(|v| *v /= mass);
        1.0
    } else {
        mass
    };
    p[x] = 1.0 - mass;
    Ok((ProbVector::from_closed_form(p)?, clipped))
}

/// `rounds` corrector sweeps at time `t`.
#[allow(clippy::too_many_arguments)]
pub fn mcmc_correct<M: Denoiser + ?Sized>(
    model: &M,
    x: &[usize],
    t: f64,
    dn: f64,
    rounds: usize,
    sched: &NoiseSchedule,
    m: &Stationary,
    rng: &mut Rng,
    stats: &mut GenerationStats,
) -> Result<Sequence> {
    let mut x = x.to_vec();
    if dn == 0.0 || rounds == 0 {
        return Ok(x);
    }
    let abar = sched.alpha_bar(t)?;
    let beta = sched.corrector_beta(t)?;
    for _ in 0..rounds {
        let f = model.predict(&x, t)?;
        let mut next = x.clone();
        for d in 0..x.len() {
            let (p, clipped) =
                corrector_distribution(f[d].as_slice(), x[d], abar, beta, dn, m.element(d))?;
            stats.clipped += usize::from(clipped);
            next[d] = sample_categorical(p.as_slice(), rng)?;
        }
        x = next;
        stats.corrector_rounds += 1;
    }
    Ok(x)
}

/// One sample from `x_T ~ m` down to `t = 0`.
pub fn generate<M: Denoiser + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    sched: &NoiseSchedule,
    m: &Stationary,
    mcmc: &McmcOptions,
    rng: &mut Rng,
    stats: &mut GenerationStats,
) -> Result<Sequence> {
    grid.check(sched)?;
    let d = model.num_elements();
    m.validate(model.num_categories(), d)?;
    let mut x: Sequence = (0..d)
        .map(|i| sample_categorical(m.element(i).as_slice(), rng))
        .collect::<Result<_>>()?;
    let times = grid.times();
    for i in (1..times.len()).rev() {
        let (s, t) = (times[i - 1], times[i]);
        let f = model.predict(&x, t)?;
        x = backward_step_alphas(&f, &x, Alphas::new(sched, s, t)?, m, rng)?;
        if mcmc.enabled && s > 0.0 && i <= mcmc.start_step {
            x = mcmc_correct(model, &x, s, mcmc.dn, mcmc.steps, sched, m, rng, stats)?;
        }
    }
    Ok(x)
}

/// `count` independent samples, generated in parallel from per-sample child
/// seeds so the output does not depend on thread count.
pub fn generate_many<M: Denoiser + ?Sized>(
    model: &M,
    grid: &TimeGrid,
    sched: &NoiseSchedule,
    m: &Stationary,
    mcmc: &McmcOptions,
    count: usize,
    seed: u64,
) -> Result<(Vec<Sequence>, GenerationStats)> {
    let results: Vec<Result<(Sequence, GenerationStats)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::new(child_seed(seed, i as u64));
            let mut stats = GenerationStats::default();
            let x = generate(model, grid, sched, m, mcmc, &mut rng, &mut stats)?;
            Ok((x, stats))
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    let mut total = GenerationStats::default();
    for r in results {
        let (x, s) = r?;
        total.corrector_rounds += s.corrector_rounds;
        total.clipped += s.clipped;
        out.push(x);
    }
    Ok((out, total))
}

/// A denoiser whose predictions are distorted in logit space by fixed,
/// state-dependent Gaussian noise: `f' ∝ f * exp(eta * z(x, d))`.
///
/// Entries of `f` near zero stay near zero, so the implied reverse rates
/// remain bounded as `t -> 0`.
pub struct Perturbed<'a, M: Denoiser + ?Sized> {
    pub inner: &'a M,
    pub eta: f64,
    pub seed: u64,
}

impl<M: Denoiser + ?Sized> Denoiser for Perturbed<'_, M> {
    fn num_categories(&self) -> usize {
        self.inner.num_categories()
    }

    fn num_elements(&self) -> usize {
        self.inner.num_elements()
    }

    fn predict(&self, x: &[usize], t: f64) -> Result<Vec<ProbVector>> {
        let key = x
            .iter()
            .fold(self.seed, |acc, &v| child_seed(acc, v as u64));
        self.inner
            .predict(x, t)?
            .into_iter()
            .enumerate()
            .map(|(d, f)| {
                let mut rng = Rng::new(child_seed(key, d as u64));
                ProbVector::from_weights(
                    f.as_slice()
                        .iter()
                        .map(|v| v * (self.eta * rng.normal()).exp())
                        .collect(),
                )
            })
            .collect()
    }
}
