//! Clipped-surrogate policy optimization with GAE, Adam and global
//! gradient-norm clipping.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{PolicyInput, PolicyParams};
use crate::error::{ApexError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub input: PolicyInput,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Global gradient-norm limit; 0 disables clipping.
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            epochs: 4,
            minibatch: 128,
            learning_rate: 1e-3,
            value_coeff: 0.5,
            entropy_coeff: 0.01,
            gamma: 0.99,
            gae_lambda: 0.95,
            max_grad_norm: 0.5,
            normalize_advantages: true,
        }
    }
}

/// Fills `advantage` and `ret` for one trajectory segment. `bootstrap` is the
/// value estimate after the last transition; it is ignored when that
/// transition is terminal.
pub fn compute_gae(segment: &mut [Transition], bootstrap: f64, gamma: f64, lambda: f64) {
    let mut next_value = bootstrap;
    let mut acc = 0.0;
    for tr in segment.iter_mut().rev() {
        let nonterminal = if tr.done { 0.0 } else { 1.0 };
        let delta = tr.reward + gamma * next_value * nonterminal - tr.value;
        acc = delta + gamma * lambda * nonterminal * acc;
        tr.advantage = acc;
        tr.ret = acc + tr.value;
        next_value = tr.value;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Mean loss terms over a set of samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Per-sample loss and, optionally, its gradient accumulated into `grad`.
fn sample_loss(
    params: &PolicyParams,
    tr: &Transition,
    adv: f64,
    cfg: &PpoConfig,
    grad: Option<&mut [f64]>,
) -> (f64, f64, f64, bool, f64) {
    let fw = params.forward(&tr.input);
    let logp = fw.log_probs[tr.action];
    let ratio = (logp - tr.log_prob).exp();
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
    // The gradient flows only through the unclipped branch when it is the minimum.
    let active = unclipped <= clipped;
    let policy = -unclipped.min(clipped);
    let verr = fw.value - tr.ret;
    let value = verr * verr;
    let entropy = fw.entropy();
    if let Some(grad) = grad {
        let dlogp = if active { -ratio * adv } else { 0.0 };
        let dlogits: Vec<f64> = (0..fw.probs.len())
            .map(|j| {
                let onehot = if j == tr.action { 1.0 } else { 0.0 };
                // d(-c_e H)/dlogit_j = c_e p_j (log p_j + H)
                dlogp * (onehot - fw.probs[j])
                    + cfg.entropy_coeff * fw.probs[j] * (fw.log_probs[j] + entropy)
            })
            .collect();
        params.backward(&tr.input, &fw, &dlogits, cfg.value_coeff * 2.0 * verr, grad);
    }
    (policy, value, entropy, !active, tr.log_prob - logp)
}

fn normalized_advantages(batch: &[Transition], normalize: bool) -> Vec<f64> {
    let adv: Vec<f64> = batch.iter().map(|t| t.advantage).collect();
    if !normalize || adv.len() < 2 {
        return adv;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

fn report(
    batch: &[Transition],
    adv: &[f64],
    params: &PolicyParams,
    cfg: &PpoConfig,
    idx: &[usize],
    grad: Option<&mut [f64]>,
) -> LossReport {
    let n = idx.len() as f64;
    let mut r = LossReport::default();
    let mut grad = grad;
    for &i in idx {
        let (p, v, e, c, kl) = sample_loss(params, &batch[i], adv[i], cfg, grad.as_deref_mut());
        r.policy += p / n;
        r.value += v / n;
        r.entropy += e / n;
        r.clip_fraction += if c { 1.0 / n } else { 0.0 };
        r.approx_kl += kl / n;
    }
    r.total = r.policy + cfg.value_coeff * r.value - cfg.entropy_coeff * r.entropy;
    r
}

/// Full-batch loss at the current parameters.
pub fn surrogate_loss(batch: &[Transition], params: &PolicyParams, cfg: &PpoConfig) -> LossReport {
    let adv = normalized_advantages(batch, cfg.normalize_advantages);
    let idx: Vec<usize> = (0..batch.len()).collect();
    report(batch, &adv, params, cfg, &idx, None)
}

/// Full-batch gradient of the total loss.
pub fn surrogate_gradient(
    batch: &[Transition],
    params: &PolicyParams,
    cfg: &PpoConfig,
) -> Vec<f64> {
    let adv = normalized_advantages(batch, cfg.normalize_advantages);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut g = vec![0.0; params.len()];
    report(batch, &adv, params, cfg, &idx, Some(&mut g));
    let inv = 1.0 / batch.len() as f64;
    g.iter_mut().for_each(|x| *x *= inv);
    g
}

/// Minibatch epochs over `batch`; returns the mean loss of every epoch.
pub fn ppo_update(
    batch: &[Transition],
    params: &mut PolicyParams,
    opt: &mut Adam,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<Vec<LossReport>> {
    if batch.is_empty() {
        return Err(ApexError::Input("empty training batch".into()));
    }
    let adv = normalized_advantages(batch, cfg.normalize_advantages);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mb = cfg.minibatch.max(1);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch = LossReport::default();
        for chunk in order.chunks(mb) {
            let mut g = vec![0.0; params.len()];
            let r = report(batch, &adv, params, cfg, chunk, Some(&mut g));
            if !r.total.is_finite() {
                return Err(ApexError::Numeric(format!("loss became {}", r.total)));
            }
            let inv = 1.0 / chunk.len() as f64;
            g.iter_mut().for_each(|x| *x *= inv);
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(ApexError::Numeric("gradient norm is not finite".into()));
            }
            if cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm {
                let s = cfg.max_grad_norm / norm;
                g.iter_mut().for_each(|x| *x *= s);
            }
            opt.step(&mut params.data, &g, cfg.learning_rate);
            let w = chunk.len() as f64 / batch.len() as f64;
            epoch.policy += r.policy * w;
            epoch.value += r.value * w;
            epoch.entropy += r.entropy * w;
            epoch.total += r.total * w;
            epoch.clip_fraction += r.clip_fraction * w;
            epoch.approx_kl += r.approx_kl * w;
        }
        epochs.push(epoch);
    }
    params.check_finite()?;
    Ok(epochs)
}
