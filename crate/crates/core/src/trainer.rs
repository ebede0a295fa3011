//! Training loop shared by both time modes: draw `x_0`, draw `t`, noise
//! `x_0` into `x_t`, evaluate the configured objective and descend.
//!
//! Per-sample gradients run in parallel, each from its own child seed, and
//! are reduced in sample order so results do not depend on thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::PosteriorCoefficients;
use crate::forward::{sample_forward, Alphas, Sequence, Stationary};
use crate::loss::continuous::{sample_auxiliary, single_pass, two_pass, CtmcContext, CtmcLoss};
use crate::loss::discrete::{ce_element, combined_loss, l2_element};
use crate::loss::{ElementLoss, LossBreakdown, LossConfig};
use crate::model::{Architecture, Denoiser, ModelParams, OptimConfig, TrainState};
use crate::prob::{child_seed, Rng};
use crate::schedule::{NoiseSchedule, TimeMode};

/// Continuous training times are drawn from `(EPS, T - EPS)`.
pub const TIME_EPS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: NoiseSchedule,
    pub loss: LossConfig,
    pub m: Stationary,
    pub arch: Architecture,
    pub batch_size: usize,
    pub epochs: usize,
    pub optim: OptimConfig,
    pub seed: u64,
    /// Record a trace row every this many epochs; the last epoch is always
    /// recorded.
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn k(&self) -> usize {
        self.arch.k()
    }

    pub fn d(&self) -> usize {
        self.arch.d()
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.m.validate(self.k(), self.d())?;
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.schedule.mode() == TimeMode::Discrete && self.schedule.t_max() < 2.0 {
            return Err(Error::Config("discrete training needs T >= 2".into()));
        }
        if self.arch.t_max() != self.schedule.t_max() {
            return Err(Error::Config("model and schedule disagree on T".into()));
        }
        if !(self.loss.s_ratio > 0.0 && self.loss.s_ratio < 1.0) {
            return Err(Error::Config("loss.s_ratio must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Uniform over `{1..T}` in discrete time, over `(EPS, T - EPS)` in
/// continuous time.
pub fn sample_time(sched: &NoiseSchedule, rng: &mut Rng) -> f64 {
    let tt = sched.t_max();
    match sched.mode() {
        TimeMode::Discrete => 1.0 + rng.below(tt as usize) as f64,
        TimeMode::Continuous => TIME_EPS + (tt - 2.0 * TIME_EPS) * rng.uniform(),
    }
}

/// Objective value and dense parameter gradient for one `(x_0, x_t, t)`.
/// `z_t` is the auxiliary state, used only by the two-pass objective.
pub fn objective_gradient(
    params: &ModelParams,
    cfg: &TrainConfig,
    x0: &[usize],
    x_t: &[usize],
    z_t: Option<&[usize]>,
    t: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut sparse = Vec::new();
    let b = objective_sparse(params, cfg, x0, x_t, z_t, t, &mut sparse)?;
    let mut grad = vec![0.0; params.len()];
    for (i, v) in sparse {
        grad[i] += v;
    }
    Ok((b, grad))
}

fn objective_sparse(
    params: &ModelParams,
    cfg: &TrainConfig,
    x0: &[usize],
    x_t: &[usize],
    z_t: Option<&[usize]>,
    t: f64,
    out: &mut Vec<(usize, f64)>,
) -> Result<LossBreakdown> {
    let sched = &cfg.schedule;
    let lc = &cfg.loss;
    let f = params.predict(x_t, t)?;
    if sched.mode() == TimeMode::Discrete {
        let (b, grads) = combined_loss(lc, &f, x_t, x0, Alphas::new(sched, t - 1.0, t)?, &cfg.m)?;
        if b.total.is_finite() {
            params.vjp(x_t, t, &grads, out)?;
        }
        return Ok(b);
    }

    let (wv, wc, wl) = lc.mode.weights(lc.ce_weight);
    let d = x_t.len();
    let k = cfg.k();
    let mut b = LossBreakdown {
        ce_weight: lc.ce_weight,
        ..Default::default()
    };
    let mut grads: Vec<ElementLoss> = (0..d).map(|_| ElementLoss::zero(k)).collect();
    for i in 0..d {
        let ce = ce_element(f[i].as_slice(), x0[i]);
        b.ce += ce.value;
        grads[i].add_scaled(wc, &ce);
    }
    if wl != 0.0 {
        let alphas = Alphas::new(sched, lc.s_ratio * t, t)?;
        for i in 0..d {
            let md = cfg.m.element(i);
            let c = PosteriorCoefficients::new(alphas, md[x_t[i]]);
            let l2 = l2_element(&c, f[i].as_slice(), x_t[i], x0[i], md, lc.phi_clip);
            b.l2 += l2.value;
            grads[i].add_scaled(wl, &l2);
        }
    }
    let mut z_grads = None;
    if wv != 0.0 {
        let ctx = CtmcContext::new(sched, t, lc.clip_beta)?;
        match lc.ctmc {
            CtmcLoss::SinglePass => {
                let (v, g) = single_pass(&f, x0, x_t, &ctx, &cfg.m)?;
                b.vlb = v;
                for i in 0..d {
                    grads[i].add_scaled(
                        wv,
                        &ElementLoss {
                            value: 0.0,
                            grad: g[i].clone(),
                        },
                    );
                }
            }
            CtmcLoss::TwoPass => {
                let z = z_t.ok_or_else(|| {
                    Error::Config("two-pass objective needs an auxiliary state".into())
                })?;
                let fz = params.predict(z, t)?;
                let r = two_pass(&f, &fz, x0, x_t, z, &ctx, lc.aux, &cfg.m)?;
                b.vlb = r.value;
                for i in 0..d {
                    grads[i].add_scaled(
                        wv,
                        &ElementLoss {
                            value: 0.0,
                            grad: r.grad_x[i].clone(),
                        },
                    );
                }
                z_grads = Some((
                    z,
                    r.grad_z
                        .into_iter()
                        .map(|g| g.into_iter().map(|v| wv * v).collect())
                        .collect::<Vec<Vec<f64>>>(),
                ));
            }
        }
    }
    b.total = wv * b.vlb + wc * b.ce + wl * b.l2;
    if b.total.is_finite() {
        let df: Vec<Vec<f64>> = grads.into_iter().map(|e| e.grad).collect();
        params.vjp(x_t, t, &df, out)?;
        if let Some((z, gz)) = z_grads {
            params.vjp(z, t, &gz, out)?;
        }
    }
    Ok(b)
}

/// Draws `t`, `x_t` (and `z_t` when needed) and evaluates the objective.
fn sample_objective(
    params: &ModelParams,
    cfg: &TrainConfig,
    x0: &[usize],
    rng: &mut Rng,
    out: &mut Vec<(usize, f64)>,
) -> Result<LossBreakdown> {
    let t = sample_time(&cfg.schedule, rng);
    let x_t = sample_forward(x0, t, &cfg.schedule, &cfg.m, rng)?;
    let needs_z = cfg.schedule.mode() == TimeMode::Continuous
        && cfg.loss.ctmc == CtmcLoss::TwoPass
        && cfg.loss.mode.weights(cfg.loss.ce_weight).0 != 0.0;
    let z = if needs_z {
        Some(sample_auxiliary(&x_t, cfg.loss.aux, &cfg.m, rng)?)
    } else {
        None
    };
    objective_sparse(params, cfg, x0, &x_t, z.as_deref(), t, out)
}

/// One row of the loss trace: per-sample, per-element means over an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub total: f64,
    pub vlb: f64,
    pub ce: f64,
    pub l2: f64,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "epoch,total,vlb,ce,l2";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.total, self.vlb, self.ce, self.l2
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub state: TrainState,
    pub trace: Vec<TraceRow>,
}

fn check_dataset(cfg: &TrainConfig, data: &[Sequence]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    for (i, x) in data.iter().enumerate() {
        if x.len() != cfg.d() {
            return Err(Error::Dataset(format!(
                "sequence {i} has length {}, expected {}",
                x.len(),
                cfg.d()
            )));
        }
        if let Some(v) = x.iter().find(|&&v| v >= cfg.k()) {
            return Err(Error::Dataset(format!(
                "sequence {i} has category {v} >= K={}",
                cfg.k()
            )));
        }
    }
    Ok(())
}

/// Mean per-sample, per-element objective over `data` at fixed randomness.
pub fn evaluate(
    params: &ModelParams,
    cfg: &TrainConfig,
    data: &[Sequence],
    seed: u64,
) -> Result<LossBreakdown> {
    check_dataset(cfg, data)?;
    let parts: Vec<Result<LossBreakdown>> = data
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            sample_objective(
                params,
                cfg,
                x0,
                &mut Rng::new(child_seed(seed, i as u64)),
                &mut Vec::new(),
            )
        })
        .collect();
    let mut acc = LossBreakdown::default();
    for p in parts {
        acc.accumulate(&p?);
    }
    Ok(acc.scaled(1.0 / (data.len() * cfg.d()) as f64))
}

/// Runs the configured number of epochs starting from `state`.
pub fn train_from(
    mut state: TrainState,
    cfg: &TrainConfig,
    data: &[Sequence],
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_dataset(cfg, data)?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut batch_index = 0usize;
    let norm_d = cfg.d() as f64;
    for epoch in 0..cfg.epochs {
        let epoch_seed = child_seed(cfg.seed, epoch as u64 + 1);
        let mut shuffle = Rng::new(epoch_seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, shuffle.below(i + 1));
        }
        let mut epoch_acc = LossBreakdown::default();
        let mut batches = 0usize;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let params = &state.params;
            let parts: Vec<Result<(LossBreakdown, Vec<(usize, f64)>)>> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &idx)| {
                    let mut rng = Rng::new(child_seed(child_seed(epoch_seed, bi as u64), j as u64));
                    let mut sparse = Vec::new();
                    let b = sample_objective(params, cfg, &data[idx], &mut rng, &mut sparse)?;
                    Ok((b, sparse))
                })
                .collect();
            let scale = 1.0 / (batch.len() as f64 * norm_d);
            let mut grad = vec![0.0; params.len()];
            let mut acc = LossBreakdown::default();
            for p in parts {
                let (b, sparse) = p?;
                acc.accumulate(&b);
                for (i, v) in sparse {
                    grad[i] += v * scale;
                }
            }
            let acc = acc.scaled(scale);
            if !acc.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { batch: batch_index });
            }
            state.sgd_step(&grad, &cfg.optim)?;
            epoch_acc.accumulate(&acc);
            batches += 1;
            batch_index += 1;
        }
        let mean = epoch_acc.scaled(1.0 / batches as f64);
        if (epoch + 1) % cfg.eval_every != 0 && epoch + 1 != cfg.epochs {
            continue;
        }
        trace.push(TraceRow {
            epoch: epoch + 1,
            total: mean.total,
            vlb: mean.vlb,
            ce: mean.ce,
            l2: mean.l2,
        });
    }
    Ok(TrainOutput { state, trace })
}

/// Initializes parameters from the seed and trains.
pub fn train(cfg: &TrainConfig, data: &[Sequence]) -> Result<TrainOutput> {
    cfg.validate()?;
    let params = ModelParams::init(cfg.arch, &mut Rng::new(child_seed(cfg.seed, 0)))?;
    train_from(TrainState::new(params), cfg, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::LossMode;
    use crate::prob::empirical;
    use crate::schedule::ScheduleKind;

    fn config(mode: TimeMode, loss: LossMode) -> TrainConfig {
        let (sched, tt) = match mode {
            TimeMode::Discrete => (
                NoiseSchedule::discrete(ScheduleKind::Cosine { a: 0.008 }, 20).unwrap(),
                20.0,
            ),
            TimeMode::Continuous => (
                NoiseSchedule::continuous(ScheduleKind::Cosine { a: 0.008 }, 1.0).unwrap(),
                1.0,
            ),
        };
        TrainConfig {
            schedule: sched,
            loss: LossConfig::new(loss),
            m: Stationary::uniform(3),
            arch: Architecture::ExactTabular {
                k: 3,
                d: 2,
                bins: 8,
                t_max: tt,
            },
            batch_size: 16,
            epochs: 2,
            optim: OptimConfig {
                lr: 0.5,
                ..Default::default()
            },
            seed: 3,
            eval_every: 1,
        }
    }

    fn data() -> Vec<Sequence> {
        (0..40).map(|i| vec![i % 3, (i / 3) % 3]).collect()
    }

    #[test]
    fn discrete_times_cover_one_to_t() {
        let sched = NoiseSchedule::discrete(ScheduleKind::Linear, 4).unwrap();
        let mut rng = Rng::new(0);
        let draws: Vec<usize> = (0..10_000)
            .map(|_| sample_time(&sched, &mut rng) as usize)
            .collect();
        assert!(draws.iter().all(|&t| (1..=4).contains(&t)));
        let freq = empirical(draws.into_iter().map(|t| t - 1), 4);
        assert!(freq.iter().all(|f| (f - 0.25).abs() < 0.02));
    }

    #[test]
    fn continuous_times_avoid_endpoints() {
        let sched = NoiseSchedule::continuous(ScheduleKind::Linear, 1.0).unwrap();
        let mut rng = Rng::new(0);
        for _ in 0..10_000 {
            let t = sample_time(&sched, &mut rng);
            assert!(t > 0.0 && t < 1.0);
        }
    }

    #[test]
    fn zero_epochs_leave_parameters() {
        let mut cfg = config(TimeMode::Discrete, LossMode::Usd3);
        cfg.epochs = 0;
        let out = train(&cfg, &data()).unwrap();
        let init = ModelParams::init(cfg.arch, &mut Rng::new(child_seed(cfg.seed, 0))).unwrap();
        assert_eq!(out.state.params, init);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn runs_are_bit_identical() {
        for (mode, loss) in [
            (TimeMode::Discrete, LossMode::Usd3),
            (TimeMode::Continuous, LossMode::Usd3),
            (TimeMode::Continuous, LossMode::Usd3Star),
        ] {
            let cfg = config(mode, loss);
            let a = train(&cfg, &data()).unwrap();
            let b = train(&cfg, &data()).unwrap();
            let bits = |w: &[f64]| w.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.state.params.weights), bits(&b.state.params.weights));
            assert_eq!(bits(&a.state.ema), bits(&b.state.ema));
            assert_eq!(a.trace.len(), 2);
        }
    }

    #[test]
    fn eval_cadence_thins_trace() {
        let mut cfg = config(TimeMode::Discrete, LossMode::Usd3);
        cfg.epochs = 5;
        cfg.eval_every = 2;
        let out = train(&cfg, &data()).unwrap();
        let epochs: Vec<usize> = out.trace.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![2, 4, 5]);
    }

    #[test]
    fn two_pass_training_runs() {
        let mut cfg = config(TimeMode::Continuous, LossMode::Usd3);
        cfg.loss.ctmc = CtmcLoss::TwoPass;
        let out = train(&cfg, &data()).unwrap();
        assert!(out.trace.iter().all(|r| r.total.is_finite()));
    }

    #[test]
    fn rejects_bad_data() {
        let cfg = config(TimeMode::Discrete, LossMode::Usd3);
        assert!(matches!(train(&cfg, &[]), Err(Error::Dataset(_))));
        assert!(matches!(train(&cfg, &[vec![0, 3]]), Err(Error::Dataset(_))));
        assert!(matches!(train(&cfg, &[vec![0]]), Err(Error::Dataset(_))));
    }

    #[test]
    fn non_finite_loss_reports_batch() {
        let mut cfg = config(TimeMode::Discrete, LossMode::CeOnly);
        cfg.optim.lr = 1e308;
        cfg.epochs = 3;
        match train(&cfg, &data()) {
            Err(Error::NonFiniteLoss { batch }) => assert!(batch >= 1),
            other => panic!("expected a non-finite loss, got {other:?}"),
        }
    }

    #[test]
    fn gradient_matches_finite_differences_for_each_objective() {
        let modes = [
            (TimeMode::Discrete, LossMode::Usd3, CtmcLoss::SinglePass),
            (TimeMode::Discrete, LossMode::Usd3Star, CtmcLoss::SinglePass),
            (TimeMode::Continuous, LossMode::Usd3, CtmcLoss::SinglePass),
            (TimeMode::Continuous, LossMode::Usd3, CtmcLoss::TwoPass),
            (
                TimeMode::Continuous,
                LossMode::Usd3Star,
                CtmcLoss::SinglePass,
            ),
        ];
        for (mode, loss, ctmc) in modes {
            let mut cfg = config(mode, loss);
            cfg.loss.ctmc = ctmc;
            cfg.arch = Architecture::TinyNet {
                k: 3,
                d: 2,
                embed: 4,
                hidden: 5,
                freqs: 3,
                t_max: cfg.schedule.t_max(),
            };
            let mut rng = Rng::new(17);
            let p = ModelParams::init(cfg.arch, &mut rng).unwrap();
            let t = if mode == TimeMode::Discrete { 7.0 } else { 0.4 };
            let (x0, xt, z) = (vec![0, 2], vec![1, 2], vec![1, 0]);
            let (_, grad) = objective_gradient(&p, &cfg, &x0, &xt, Some(&z), t).unwrap();
            let h = 1e-6;
            for i in (0..p.len()).step_by(3) {
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp.weights[i] += h;
                pm.weights[i] -= h;
                let up = objective_gradient(&pp, &cfg, &x0, &xt, Some(&z), t)
                    .unwrap()
                    .0
                    .total;
                let dn = objective_gradient(&pm, &cfg, &x0, &xt, Some(&z), t)
                    .unwrap()
                    .0
                    .total;
                let num = (up - dn) / (2.0 * h);
                let denom = grad[i].abs().max(num.abs()).max(1e-6);
                assert!(
                    (grad[i] - num).abs() / denom < 1e-4,
                    "{mode:?} {loss:?} {ctmc:?} param {i}: {} vs {num}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn per_element_vlb_matches_discrete_term() {
        // At t = 1 the discrete objective is the reconstruction likelihood.
        let cfg = config(TimeMode::Discrete, LossMode::VlbOnly);
        let p = ModelParams::init(cfg.arch, &mut Rng::new(1)).unwrap();
        let (b, _) = objective_gradient(&p, &cfg, &[0, 1], &[2, 1], None, 1.0).unwrap();
        let f = p.predict(&[2, 1], 1.0).unwrap();
        let expected = -f[0][0].ln() - f[1][1].ln();
        assert!((b.vlb - expected).abs() < 1e-12);
    }
}
