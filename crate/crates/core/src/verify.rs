//! Closed-form versus brute-force equivalence suite behind the `verify`
//! command. Each check draws random instances and reports the largest
//! absolute deviation between the engine and its oracle.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::backward::{p_theta_s_given_t, BackwardBranchProbs};
use crate::error::Result;
use crate::forward::{posterior_q, Alphas, PosteriorCoefficients, Stationary};
use crate::loss::continuous::g_theta;
use crate::loss::discrete::delta_p;
use crate::oracle::{dense_transition, g_sum, p_theta_marginalized, posterior_bayes};
use crate::prob::{child_seed, ProbVector, Rng};
use crate::schedule::{NoiseSchedule, ScheduleKind, TimeMode};

pub const DEFAULT_INSTANCES: usize = 1000;
pub const TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_deviation < self.tolerance
    }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_prob(k: usize, floor: f64, rng: &mut Rng) -> Result<ProbVector> {
    ProbVector::from_weights((0..k).map(|_| floor + rng.uniform()).collect())
}

fn schedules() -> Result<Vec<NoiseSchedule>> {
    Ok(vec![
        NoiseSchedule::continuous(ScheduleKind::Cosine { a: 0.008 }, 1.0)?,
        NoiseSchedule::continuous(ScheduleKind::Linear, 1.0)?,
        NoiseSchedule::continuous(ScheduleKind::exponential_default(1.0), 1.0)?,
        NoiseSchedule::continuous(ScheduleKind::ConstantRate { c: 0.007 }, 2000.0)?,
        NoiseSchedule::discrete(ScheduleKind::Cosine { a: 0.008 }, 1000)?,
    ])
}

/// One random instance: deviations for the four closed-form checks.
fn instance(seed: u64, scheds: &[NoiseSchedule]) -> Result<[f64; 4]> {
    let mut rng = Rng::new(seed);
    let k = 2 + rng.below(7);
    let sched = &scheds[rng.below(scheds.len())];
    let tt = sched.t_max();
    let (s, t) = match sched.mode() {
        TimeMode::Discrete => {
            let t = 1 + rng.below(tt as usize);
            let s = rng.below(t);
            (s as f64, t as f64)
        }
        TimeMode::Continuous => {
            // Keep t off the origin, where g grows like 1/t.
            let t = tt * (0.02 + 0.98 * rng.uniform());
            let s = if rng.bernoulli(0.1) {
                0.0
            } else {
                t * rng.uniform()
            };
            (s, t)
        }
    };
    let m = random_prob(k, 0.2, &mut rng)?;
    let f = random_prob(k, 0.0, &mut rng)?;
    let x_t = rng.below(k);
    let x0 = rng.below(k);

    let q = posterior_q(x_t, x0, s, t, &m, sched)?;
    let q_oracle = posterior_bayes(x_t, x0, s, t, &m, sched)?;
    let p = p_theta_s_given_t(&f, x_t, s, t, &m, sched)?;
    let p_oracle = p_theta_marginalized(&f, x_t, s, t, &m, sched)?;
    let dp = delta_p(&f, x_t, x0, s, t, &m, sched)?;
    let dp_oracle: Vec<f64> = p_oracle.iter().zip(&q_oracle).map(|(a, b)| a - b).collect();

    let d = 2;
    let x: Vec<usize> = (0..3).map(|_| rng.below(k)).collect();
    let g = g_theta(&f, &x, d, t, &Stationary::Shared(m.clone()), sched)?;
    let g_oracle = g_sum(&f, &x, d, t, &m, sched)?;

    Ok([
        max_abs(q.as_slice(), &q_oracle),
        max_abs(p.as_slice(), &p_oracle),
        max_abs(&dp, &dp_oracle),
        max_abs(&g, &g_oracle),
    ])
}

/// Discrete schedule against its continuous equivalent on random integer
/// pairs: transition matrices and backward branch weights.
fn unification_instance(seed: u64, discrete: &NoiseSchedule) -> Result<[f64; 2]> {
    let cont = discrete.continuous_equivalent();
    let mut rng = Rng::new(seed);
    let k = 2 + rng.below(7);
    let t = 1 + rng.below(discrete.t_max() as usize);
    let s = rng.below(t);
    let (s, t) = (s as f64, t as f64);
    let m = random_prob(k, 0.2, &mut rng)?;
    let f = random_prob(k, 0.0, &mut rng)?;
    let x_t = rng.below(k);
    let qd = dense_transition(discrete.alpha_bar_cond(s, t)?, m.as_slice());
    let qc = dense_transition(cont.alpha_bar_cond(s, t)?, m.as_slice());
    let dev_q = qd
        .iter()
        .zip(&qc)
        .map(|(a, b)| max_abs(a, b))
        .fold(0.0, f64::max);
    let bd = BackwardBranchProbs::new(
        &PosteriorCoefficients::new(Alphas::new(discrete, s, t)?, m[x_t]),
        f.as_slice(),
        x_t,
    );
    let bc = BackwardBranchProbs::new(
        &PosteriorCoefficients::new(Alphas::new(&cont, s, t)?, m[x_t]),
        f.as_slice(),
        x_t,
    );
    Ok([dev_q, max_abs(&bd.as_array(), &bc.as_array())])
}

pub const CHECK_NAMES: [&str; 6] = [
    "posterior_q vs posterior_bayes",
    "p_theta_s_given_t vs p_theta_marginalized",
    "delta_p vs direct subtraction",
    "g_theta vs g_sum",
    "discrete vs continuous Q_{t|s}",
    "discrete vs continuous branch weights",
];

/// Runs every check over `instances` random draws.
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let scheds = schedules()?;
    let closed: Vec<[f64; 4]> = (0..instances)
        .into_par_iter()
        .map(|i| instance(child_seed(seed, i as u64), &scheds))
        .collect::<Result<_>>()?;
    let discrete = NoiseSchedule::discrete(ScheduleKind::Cosine { a: 0.008 }, 1000)?;
    let unified: Vec<[f64; 2]> = (0..instances)
        .into_par_iter()
        .map(|i| unification_instance(child_seed(seed ^ 0x5eed, i as u64), &discrete))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (j, name) in CHECK_NAMES.iter().enumerate() {
        let max = if j < 4 {
            closed.iter().map(|r| r[j]).fold(0.0, f64::max)
        } else {
            unified.iter().map(|r| r[j - 4]).fold(0.0, f64::max)
        };
        let tolerance = if j < 4 { TOLERANCE } else { 1e-12 };
        out.push(CheckResult {
            name,
            instances,
            max_deviation: max,
            tolerance,
        });
    }
    Ok(out)
}

/// Fixed-width table of check results.
pub fn format_table(results: &[CheckResult]) -> String {
    let mut s = format!(
        "{:<44} {:>9} {:>12} {:>10}  status\n",
        "check", "instances", "max_dev", "tolerance"
    );
    for r in results {
        let _ = writeln!(
            s,
            "{:<44} {:>9} {:>12.3e} {:>10.0e}  {}",
            r.name,
            r.instances,
            r.max_deviation,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    s
}
