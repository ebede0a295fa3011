//! The learnable denoiser `f(x_t, t)`: one distribution over `x_0^d` per
//! element, produced by a softmax over logits.
//!
//! Two backends share a flat parameter vector. `ExactTabular` stores one
//! logit row per (time bin, joint state, element) and can represent any
//! posterior on small state spaces. `TinyNet` is a two-layer network over
//! token, position, pooled-context and Fourier time features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{ProbVector, Rng};

/// Largest joint state space the tabular backend accepts.
pub const MAX_TABULAR_STATES: usize = 4096;
pub const DEFAULT_BINS: usize = 32;
pub const DEFAULT_FREQUENCIES: usize = 8;

/// Anything that maps a noisy sequence and a time to per-element
/// predictions of the clean sequence.
pub trait Denoiser: Sync {
    fn num_categories(&self) -> usize;
    fn num_elements(&self) -> usize;
    fn predict(&self, x: &[usize], t: f64) -> Result<Vec<ProbVector>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum Architecture {
    ExactTabular {
        k: usize,
        d: usize,
        bins: usize,
        t_max: f64,
    },
    TinyNet {
        k: usize,
        d: usize,
        embed: usize,
        hidden: usize,
        freqs: usize,
        t_max: f64,
    },
}

impl Architecture {
    pub fn k(&self) -> usize {
        match *self {
            Architecture::ExactTabular { k, .. } | Architecture::TinyNet { k, .. } => k,
        }
    }

    pub fn d(&self) -> usize {
        match *self {
            Architecture::ExactTabular { d, .. } | Architecture::TinyNet { d, .. } => d,
        }
    }

    pub fn t_max(&self) -> f64 {
        match *self {
            Architecture::ExactTabular { t_max, .. } | Architecture::TinyNet { t_max, .. } => t_max,
        }
    }

    /// `K^D`, or `None` on overflow.
    fn joint_states(k: usize, d: usize) -> Option<usize> {
        (0..d).try_fold(1usize, |acc, _| acc.checked_mul(k))
    }

    pub fn validate(&self) -> Result<()> {
        let (k, d) = (self.k(), self.d());
        if k < 2 || d < 1 {
            return Err(Error::Config(format!(
                "need K >= 2 and D >= 1, got K={k}, D={d}"
            )));
        }
        if !(self.t_max() > 0.0) {
            return Err(Error::Config("model T must be positive".into()));
        }
        match *self {
            Architecture::ExactTabular { bins, .. } => {
                let states = Self::joint_states(k, d).filter(|&n| n <= MAX_TABULAR_STATES);
                if states.is_none() {
                    return Err(Error::Config(format!(
                        "exact_tabular needs K^D <= {MAX_TABULAR_STATES}, got K={k}, D={d}"
                    )));
                }
                if bins == 0 {
                    return Err(Error::Config(
                        "exact_tabular needs at least one time bin".into(),
                    ));
                }
            }
            Architecture::TinyNet {
                embed,
                hidden,
                freqs,
                ..
            } => {
                if embed == 0 || hidden == 0 || freqs == 0 {
                    return Err(Error::Config("tiny_net dimensions must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        match *self {
            Architecture::ExactTabular { k, d, bins, .. } => bins * k.pow(d as u32) * d * k,
            Architecture::TinyNet {
                k,
                d,
                embed,
                hidden,
                freqs,
                ..
            } => {
                k * embed + d * embed + embed * 2 * freqs + hidden * embed + hidden + k * hidden + k
            }
        }
    }
}

/// Offsets of the tiny network's parameter blocks in the flat vector.
#[derive(Debug, Clone, Copy)]
struct NetLayout {
    k: usize,
    d: usize,
    e: usize,
    h: usize,
    f: usize,
    emb: usize,
    pos: usize,
    wt: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl NetLayout {
    fn new(k: usize, d: usize, e: usize, h: usize, f: usize) -> Self {
        let emb = 0;
        let pos = emb + k * e;
        let wt = pos + d * e;
        let w1 = wt + e * 2 * f;
        let b1 = w1 + h * e;
        let w2 = b1 + h;
        let b2 = w2 + k * h;
        NetLayout {
            k,
            d,
            e,
            h,
            f,
            emb,
            pos,
            wt,
            w1,
            b1,
            w2,
            b2,
        }
    }
}

/// Intermediate values of one tiny-network forward pass for one element.
struct NetTrace {
    tf: Vec<f64>,
    u: Vec<f64>,
    h: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub arch: Architecture,
    pub weights: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `dL/dlogits = f * (g - <f, g>)` for `f = softmax(logits)`, `g = dL/df`.
pub fn softmax_vjp(f: &[f64], g: &[f64]) -> Vec<f64> {
    let dot: f64 = f.iter().zip(g).map(|(a, b)| a * b).sum();
    f.iter().zip(g).map(|(fi, gi)| fi * (gi - dot)).collect()
}

impl ModelParams {
    /// All-zero parameters: uniform predictions for both backends.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(ModelParams {
            arch,
            weights: vec![0.0; arch.num_params()],
        })
    }

    /// Seeded initialization. Tabular logits start at zero; the network gets
    /// small Gaussian weights and zero biases.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        if let Architecture::TinyNet {
            k,
            d,
            embed,
            hidden,
            freqs,
            ..
        } = arch
        {
            let l = NetLayout::new(k, d, embed, hidden, freqs);
            let w1_scale = 1.0 / (embed as f64).sqrt();
            let fill = |w: &mut [f64], scale: f64, rng: &mut Rng| {
                w.iter_mut().for_each(|v| *v = scale * rng.normal())
            };
            fill(&mut p.weights[l.emb..l.pos], 0.3, rng);
            fill(&mut p.weights[l.pos..l.wt], 0.3, rng);
            fill(&mut p.weights[l.wt..l.w1], 0.1, rng);
            fill(&mut p.weights[l.w1..l.b1], w1_scale, rng);
            fill(&mut p.weights[l.w2..l.b2], 0.1, rng);
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn check_input(&self, x: &[usize], t: f64) -> Result<()> {
        let (k, d) = (self.arch.k(), self.arch.d());
        if x.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if let Some(bad) = x.iter().find(|&&v| v >= k) {
            return Err(Error::Domain(format!(
                "category {bad} out of range for K={k}"
            )));
        }
        if !(t >= 0.0 && t <= self.arch.t_max()) {
            return Err(Error::TimeOutOfRange(format!(
                "t={t} outside [0, {}]",
                self.arch.t_max()
            )));
        }
        Ok(())
    }

    /// Time bin of the tabular backend.
    pub fn time_bin(bins: usize, t: f64, t_max: f64) -> usize {
        ((t / t_max * bins as f64).floor() as usize).min(bins - 1)
    }

    /// Row-major joint index of `x` (first element most significant).
    pub fn joint_index(x: &[usize], k: usize) -> usize {
        x.iter().fold(0, |acc, &v| acc * k + v)
    }

    /// Offset of the logit row for element `d` in the tabular backend.
    pub fn tabular_offset(&self, x: &[usize], t: f64, d: usize) -> usize {
        let Architecture::ExactTabular {
            k,
            d: dd,
            bins,
            t_max,
        } = self.arch
        else {
            panic!("tabular_offset on a non-tabular model");
        };
        let states = k.pow(dd as u32);
        let b = Self::time_bin(bins, t, t_max);
        let j = Self::joint_index(x, k);
        ((b * states + j) * dd + d) * k
    }

    fn fourier(&self, t: f64, freqs: usize) -> Vec<f64> {
        let tau = t / self.arch.t_max();
        (0..freqs)
            .flat_map(|i| {
                let w = std::f64::consts::PI * (i + 1) as f64 * tau;
                [w.sin(), w.cos()]
            })
            .collect()
    }

    fn net_forward(&self, l: &NetLayout, x: &[usize], t: f64) -> Vec<NetTrace> {
        let w = &self.weights;
        let (e, h, k) = (l.e, l.h, l.k);
        let tf = self.fourier(t, l.f);
        let mut base = vec![0.0; e];
        for &xj in x {
            for i in 0..e {
                base[i] += w[l.emb + xj * e + i] / l.d as f64;
            }
        }
        for i in 0..e {
            base[i] += (0..2 * l.f)
                .map(|j| w[l.wt + i * 2 * l.f + j] * tf[j])
                .sum::<f64>();
        }
        (0..l.d)
            .map(|d| {
                let u: Vec<f64> = (0..e)
                    .map(|i| base[i] + w[l.emb + x[d] * e + i] + w[l.pos + d * e + i])
                    .collect();
                let hid: Vec<f64> = (0..h)
                    .map(|r| {
                        (w[l.b1 + r] + (0..e).map(|i| w[l.w1 + r * e + i] * u[i]).sum::<f64>())
                            .tanh()
                    })
                    .collect();
                let logits: Vec<f64> = (0..k)
                    .map(|c| {
                        w[l.b2 + c] + (0..h).map(|r| w[l.w2 + c * h + r] * hid[r]).sum::<f64>()
                    })
                    .collect();
                NetTrace {
                    tf: tf.clone(),
                    u,
                    h: hid,
                    logits,
                }
            })
            .collect()
    }

    fn layout(&self) -> Option<NetLayout> {
        match self.arch {
            Architecture::TinyNet {
                k,
                d,
                embed,
                hidden,
                freqs,
                ..
            } => Some(NetLayout::new(k, d, embed, hidden, freqs)),
            Architecture::ExactTabular { .. } => None,
        }
    }

    /// Per-element logits.
    pub fn logits(&self, x: &[usize], t: f64) -> Result<Vec<Vec<f64>>> {
        self.check_input(x, t)?;
        Ok(match self.layout() {
            None => {
                let k = self.arch.k();
                (0..x.len())
                    .map(|d| {
                        let o = self.tabular_offset(x, t, d);
                        self.weights[o..o + k].to_vec()
                    })
                    .collect()
            }
            Some(l) => self
                .net_forward(&l, x, t)
                .into_iter()
                .map(|tr| tr.logits)
                .collect(),
        })
    }

    /// Accumulates `d<df, f(x, t)>/dtheta` as sparse `(index, value)` pairs,
    /// where `df[d]` is the loss gradient with respect to element `d`'s
    /// output distribution.
    pub fn vjp(
        &self,
        x: &[usize],
        t: f64,
        df: &[Vec<f64>],
        out: &mut Vec<(usize, f64)>,
    ) -> Result<()> {
        self.check_input(x, t)?;
        if df.len() != x.len() {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                got: df.len(),
            });
        }
        match self.layout() {
            None => {
                let k = self.arch.k();
                for (d, g) in df.iter().enumerate() {
                    let o = self.tabular_offset(x, t, d);
                    let f = softmax(&self.weights[o..o + k]);
                    for (c, v) in softmax_vjp(&f, g).into_iter().enumerate() {
                        out.push((o + c, v));
                    }
                }
            }
            Some(l) => {
                let w = &self.weights;
                let (e, h, k) = (l.e, l.h, l.k);
                let traces = self.net_forward(&l, x, t);
                let mut demb = vec![0.0; k * e];
                let mut dpos = vec![0.0; l.d * e];
                let mut dwt = vec![0.0; e * 2 * l.f];
                let mut dw1 = vec![0.0; h * e];
                let mut db1 = vec![0.0; h];
                let mut dw2 = vec![0.0; k * h];
                let mut db2 = vec![0.0; k];
                for (d, (tr, g)) in traces.iter().zip(df).enumerate() {
                    let f = softmax(&tr.logits);
                    let dl = softmax_vjp(&f, g);
                    let mut dh = vec![0.0; h];
                    for c in 0..k {
                        db2[c] += dl[c];
                        for r in 0..h {
                            dw2[c * h + r] += dl[c] * tr.h[r];
                            dh[r] += w[l.w2 + c * h + r] * dl[c];
                        }
                    }
                    let mut du = vec![0.0; e];
                    for r in 0..h {
                        let da = dh[r] * (1.0 - tr.h[r] * tr.h[r]);
                        db1[r] += da;
                        for i in 0..e {
                            dw1[r * e + i] += da * tr.u[i];
                            du[i] += w[l.w1 + r * e + i] * da;
                        }
                    }
                    for i in 0..e {
                        demb[x[d] * e + i] += du[i];
                        dpos[d * e + i] += du[i];
                        for &xj in x {
                            demb[xj * e + i] += du[i] / l.d as f64;
                        }
                        for j in 0..2 * l.f {
                            dwt[i * 2 * l.f + j] += du[i] * tr.tf[j];
                        }
                    }
                }
                for (offset, block) in [
                    (l.emb, demb),
                    (l.pos, dpos),
                    (l.wt, dwt),
                    (l.w1, dw1),
                    (l.b1, db1),
                    (l.w2, dw2),
                    (l.b2, db2),
                ] {
                    out.extend(block.into_iter().enumerate().map(|(i, v)| (offset + i, v)));
                }
            }
        }
        Ok(())
    }

    /// Evaluates a loss of the model output at `(x, t)` and returns its value
    /// with the dense parameter gradient.
    pub fn loss_gradient(
        &self,
        x: &[usize],
        t: f64,
        loss: impl FnOnce(&[ProbVector]) -> Result<(f64, Vec<Vec<f64>>)>,
    ) -> Result<(f64, Vec<f64>)> {
        let f = Denoiser::predict(self, x, t)?;
        let (value, df) = loss(&f)?;
        let mut sparse = Vec::new();
        self.vjp(x, t, &df, &mut sparse)?;
        let mut grad = vec![0.0; self.len()];
        for (i, v) in sparse {
            grad[i] += v;
        }
        Ok((value, grad))
    }
}

impl Denoiser for ModelParams {
    fn num_categories(&self) -> usize {
        self.arch.k()
    }

    fn num_elements(&self) -> usize {
        self.arch.d()
    }

    fn predict(&self, x: &[usize], t: f64) -> Result<Vec<ProbVector>> {
        self.logits(x, t)?
            .iter()
            .map(|l| ProbVector::from_closed_form(softmax(l)))
            .collect()
    }
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    /// Heavy-ball momentum coefficient, 0 for plain SGD.
    pub momentum: f64,
    pub ema_decay: f64,
    /// Rescale gradients whose norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 0.1,
            momentum: 0.0,
            ema_decay: 0.9999,
            clip_norm: None,
        }
    }
}

/// Parameters with their EMA shadow and momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub ema: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        let n = params.len();
        TrainState {
            ema: params.weights.clone(),
            velocity: vec![0.0; n],
            params,
        }
    }

    /// Parameters replaced by their EMA shadow.
    pub fn ema_params(&self) -> ModelParams {
        ModelParams {
            arch: self.params.arch,
            weights: self.ema.clone(),
        }
    }

    /// One descent step followed by the EMA update.
    pub fn sgd_step(&mut self, grad: &[f64], cfg: &OptimConfig) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let mut scale = 1.0;
        if let Some(max) = cfg.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max {
                scale = max / norm;
            }
        }
        for i in 0..grad.len() {
            let g = grad[i] * scale;
            let step = if cfg.momentum > 0.0 {
                self.velocity[i] = cfg.momentum * self.velocity[i] + g;
                self.velocity[i]
            } else {
                g
            };
            self.params.weights[i] -= cfg.lr * step;
            self.ema[i] =
                cfg.ema_decay * self.ema[i] + (1.0 - cfg.ema_decay) * self.params.weights[i];
        }
        Ok(())
    }
}
