//! Actor-critic network over per-map feature groups, with reverse-mode
//! gradients written out by hand.
//!
//! ```text
//! z_k    = tanh(W_k x_k + b_k)                      one extractor per input group
//! f      = [z_1, .., z_K, pose]
//! logits = A2 tanh(A1 f + a1) + a2                  actor
//! value  = c2 . tanh(C1 f + c1) + c2_b              critic
//! ```
//!
//! All weights live in one flat vector so the optimizer, checkpoints and
//! finite-difference checks see a single parameter array.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ApexError, Result};

/// Layer sizes. `inputs[k]` is the length of feature group `k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetLayout {
    pub inputs: Vec<usize>,
    pub proj_dim: usize,
    pub pose_dim: usize,
    pub hidden: usize,
    pub actions: usize,
}

impl NetLayout {
    pub fn feature_dim(&self) -> usize {
        self.inputs.len() * self.proj_dim + self.pose_dim
    }

    pub fn param_count(&self) -> usize {
        let f = self.feature_dim();
        let ext: usize = self
            .inputs
            .iter()
            .map(|&n| self.proj_dim * n + self.proj_dim)
            .sum();
        ext + (self.hidden * f + self.hidden) * 2
            + self.actions * self.hidden
            + self.actions
            + self.hidden
            + 1
    }

    fn offsets(&self) -> Offsets {
        let mut at = 0;
        let mut take = |n: usize| {
            let r = (at, n);
            at += n;
            r
        };
        let ext = self
            .inputs
            .iter()
            .map(|&n| (take(self.proj_dim * n), take(self.proj_dim)))
            .collect();
        let f = self.feature_dim();
        Offsets {
            ext,
            a1: (take(self.hidden * f), take(self.hidden)),
            a2: (take(self.actions * self.hidden), take(self.actions)),
            c1: (take(self.hidden * f), take(self.hidden)),
            c2: (take(self.hidden), take(1)),
        }
    }
}

type Span = (usize, usize);

#[derive(Clone, Debug)]
struct Offsets {
    ext: Vec<(Span, Span)>,
    a1: (Span, Span),
    a2: (Span, Span),
    c1: (Span, Span),
    c2: (Span, Span),
}

fn sl(data: &[f64], (o, n): Span) -> &[f64] {
    &data[o..o + n]
}

/// y = W x + b with W stored row-major (`out x inp`).
fn affine(w: &[f64], b: &[f64], x: &[f64], y: &mut Vec<f64>) {
    let inp = x.len();
    y.clear();
    y.extend(b.iter().enumerate().map(|(r, &bi)| {
        let row = &w[r * inp..(r + 1) * inp];
        bi + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }));
}

/// Accumulates dW += dy x^T, db += dy and returns W^T dy into `dx` (added).
fn affine_back(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let inp = x.len();
    for (r, &g) in dy.iter().enumerate() {
        gb[r] += g;
        if g == 0.0 {
            continue;
        }
        let row = &mut gw[r * inp..(r + 1) * inp];
        for (gwij, xj) in row.iter_mut().zip(x) {
            *gwij += g * xj;
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[r * inp..(r + 1) * inp];
            for (d, wij) in dx.iter_mut().zip(row) {
                *d += g * wij;
            }
        }
    }
}

/// Raw network input: one vector per feature group plus pose features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyInput {
    pub groups: Vec<Vec<f64>>,
    pub pose: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub layout: NetLayout,
    pub data: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub value: f64,
    z: Vec<Vec<f64>>,
    f: Vec<f64>,
    ha: Vec<f64>,
    hc: Vec<f64>,
}

impl ForwardPass {
    pub fn features(&self) -> &[f64] {
        &self.f
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, l)| p * l)
            .sum::<f64>()
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

impl PolicyParams {
    pub fn zeros(layout: NetLayout) -> Self {
        let n = layout.param_count();
        PolicyParams {
            layout,
            data: vec![0.0; n],
        }
    }

    /// Uniform fan-in initialization; the actor output layer starts near zero
    /// so the initial policy is close to uniform.
    pub fn init(layout: NetLayout, seed: u64) -> Self {
        let mut p = PolicyParams::zeros(layout);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o = p.layout.offsets();
        let f = p.layout.feature_dim();
        let mut fill = |data: &mut [f64], span: Span, fan_in: usize, scale: f64| {
            let lim = scale * (1.0 / fan_in.max(1) as f64).sqrt();
            for x in &mut data[span.0..span.0 + span.1] {
                *x = rng.gen_range(-lim..=lim);
            }
        };
        for (k, (w, _)) in o.ext.iter().enumerate() {
            fill(&mut p.data, *w, p.layout.inputs[k], 1.0);
        }
        fill(&mut p.data, o.a1.0, f, 1.0);
        fill(&mut p.data, o.a2.0, p.layout.hidden, 0.01);
        fill(&mut p.data, o.c1.0, f, 1.0);
        fill(&mut p.data, o.c2.0, p.layout.hidden, 1.0);
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.data.iter().position(|x| !x.is_finite()) {
            return Err(ApexError::Numeric(format!("parameter {i} is not finite")));
        }
        Ok(())
    }

    pub fn check_input(&self, x: &PolicyInput) -> Result<()> {
        let l = &self.layout;
        if x.groups.len() != l.inputs.len()
            || x.groups.iter().zip(&l.inputs).any(|(g, &n)| g.len() != n)
            || x.pose.len() != l.pose_dim
        {
            return Err(ApexError::Dimension(format!(
                "policy input shape {:?}+{} does not match layout {:?}+{}",
                x.groups.iter().map(Vec::len).collect::<Vec<_>>(),
                x.pose.len(),
                l.inputs,
                l.pose_dim
            )));
        }
        Ok(())
    }

    /// Projected feature vector `f` (extractor outputs followed by pose).
    pub fn project(&self, x: &PolicyInput) -> Vec<f64> {
        let o = self.layout.offsets();
        let mut f = Vec::with_capacity(self.layout.feature_dim());
        let mut y = Vec::new();
        for (k, (w, b)) in o.ext.iter().enumerate() {
            affine(sl(&self.data, *w), sl(&self.data, *b), &x.groups[k], &mut y);
            f.extend(y.iter().map(|v| v.tanh()));
        }
        f.extend_from_slice(&x.pose);
        f
    }

    pub fn forward(&self, x: &PolicyInput) -> ForwardPass {
        let o = self.layout.offsets();
        let mut z = Vec::with_capacity(o.ext.len());
        let mut f = Vec::with_capacity(self.layout.feature_dim());
        let mut y = Vec::new();
        for (k, (w, b)) in o.ext.iter().enumerate() {
            affine(sl(&self.data, *w), sl(&self.data, *b), &x.groups[k], &mut y);
            let zk: Vec<f64> = y.iter().map(|v| v.tanh()).collect();
            f.extend_from_slice(&zk);
            z.push(zk);
        }
        f.extend_from_slice(&x.pose);

        let mut ha = Vec::new();
        affine(sl(&self.data, o.a1.0), sl(&self.data, o.a1.1), &f, &mut ha);
        ha.iter_mut().for_each(|v| *v = v.tanh());
        let mut logits = Vec::new();
        affine(
            sl(&self.data, o.a2.0),
            sl(&self.data, o.a2.1),
            &ha,
            &mut logits,
        );

        let mut hc = Vec::new();
        affine(sl(&self.data, o.c1.0), sl(&self.data, o.c1.1), &f, &mut hc);
        hc.iter_mut().for_each(|v| *v = v.tanh());
        let mut vout = Vec::new();
        affine(
            sl(&self.data, o.c2.0),
            sl(&self.data, o.c2.1),
            &hc,
            &mut vout,
        );

        let log_probs = log_softmax(&logits);
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        ForwardPass {
            logits,
            probs,
            log_probs,
            value: vout[0],
            z,
            f,
            ha,
            hc,
        }
    }

    /// Accumulates into `grad` the parameter gradient of
    /// `dlogits . logits + dvalue * value` at the cached forward pass.
    pub fn backward(
        &self,
        x: &PolicyInput,
        fw: &ForwardPass,
        dlogits: &[f64],
        dvalue: f64,
        grad: &mut [f64],
    ) {
        debug_assert_eq!(grad.len(), self.data.len());
        let o = self.layout.offsets();
        let mut df = vec![0.0; fw.f.len()];

        // Actor head.
        let mut dha = vec![0.0; fw.ha.len()];
        {
            let (gw, gb) = split2(grad, o.a2);
            affine_back(
                sl(&self.data, o.a2.0),
                &fw.ha,
                dlogits,
                gw,
                gb,
                Some(&mut dha),
            );
        }
        let dpre: Vec<f64> = dha
            .iter()
            .zip(&fw.ha)
            .map(|(d, h)| d * (1.0 - h * h))
            .collect();
        {
            let (gw, gb) = split2(grad, o.a1);
            affine_back(sl(&self.data, o.a1.0), &fw.f, &dpre, gw, gb, Some(&mut df));
        }

        // Critic head.
        if dvalue != 0.0 {
            let mut dhc = vec![0.0; fw.hc.len()];
            {
                let (gw, gb) = split2(grad, o.c2);
                affine_back(
                    sl(&self.data, o.c2.0),
                    &fw.hc,
                    &[dvalue],
                    gw,
                    gb,
                    Some(&mut dhc),
                );
            }
            let dpre: Vec<f64> = dhc
                .iter()
                .zip(&fw.hc)
                .map(|(d, h)| d * (1.0 - h * h))
                .collect();
            let (gw, gb) = split2(grad, o.c1);
            affine_back(sl(&self.data, o.c1.0), &fw.f, &dpre, gw, gb, Some(&mut df));
        }

        // Extractors.
        let p = self.layout.proj_dim;
        for (k, (w, b)) in o.ext.iter().enumerate() {
            let dz = &df[k * p..(k + 1) * p];
            let dpre: Vec<f64> = dz
                .iter()
                .zip(&fw.z[k])
                .map(|(d, z)| d * (1.0 - z * z))
                .collect();
            let (gw, gb) = split2(grad, (*w, *b));
            affine_back(sl(&self.data, *w), &x.groups[k], &dpre, gw, gb, None);
        }
    }

    /// Gradient of `log pi(a | x)` with respect to every parameter.
    pub fn grad_log_prob(&self, x: &PolicyInput, a: usize) -> Vec<f64> {
        let fw = self.forward(x);
        let dlogits: Vec<f64> = fw
            .probs
            .iter()
            .enumerate()
            .map(|(j, p)| if j == a { 1.0 - p } else { -p })
            .collect();
        let mut g = vec![0.0; self.data.len()];
        self.backward(x, &fw, &dlogits, 0.0, &mut g);
        g
    }

    /// Gradient of the critic value with respect to every parameter.
    pub fn grad_value(&self, x: &PolicyInput) -> Vec<f64> {
        let fw = self.forward(x);
        let mut g = vec![0.0; self.data.len()];
        self.backward(x, &fw, &vec![0.0; fw.logits.len()], 1.0, &mut g);
        g
    }

    /// Named parameter tensors as `(name, offset, len)`, for diagnostics.
    pub fn tensors(&self) -> Vec<(String, usize, usize)> {
        let o = self.layout.offsets();
        let mut out = Vec::new();
        for (k, (w, b)) in o.ext.iter().enumerate() {
            out.push((format!("extractor{k}.weight"), w.0, w.1));
            out.push((format!("extractor{k}.bias"), b.0, b.1));
        }
        for (name, (w, b)) in [
            ("actor.hidden", o.a1),
            ("actor.out", o.a2),
            ("critic.hidden", o.c1),
            ("critic.out", o.c2),
        ] {
            out.push((format!("{name}.weight"), w.0, w.1));
            out.push((format!("{name}.bias"), b.0, b.1));
        }
        out
    }
}

fn split2(grad: &mut [f64], (w, b): (Span, Span)) -> (&mut [f64], &mut [f64]) {
    debug_assert_eq!(w.0 + w.1, b.0);
    let (gw, rest) = grad[w.0..b.0 + b.1].split_at_mut(w.1);
    (gw, rest)
}

/// Action distribution and value; errors on non-finite parameters or a
/// mis-shaped input.
pub fn policy_forward(x: &PolicyInput, params: &PolicyParams) -> Result<(Vec<f64>, f64)> {
    params.check_finite()?;
    params.check_input(x)?;
    let fw = params.forward(x);
    if !fw.value.is_finite() || fw.probs.iter().any(|p| !p.is_finite()) {
        return Err(ApexError::Numeric("non-finite policy output".into()));
    }
    Ok((fw.probs, fw.value))
}

/// Inverse-CDF sample from a categorical distribution.
pub fn sample_action(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}
