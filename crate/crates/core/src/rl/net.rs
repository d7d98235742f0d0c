use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{q_update, Transition};
use crate::error::{Error, Result};
use crate::netspec::TrainingPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyNetConfig {
    /// Side of the square single-channel input.
    pub input: usize,
    /// (kernel, out_channels, stride); `None` for an FC-only net.
    pub conv: Option<(usize, usize, usize)>,
    pub hidden: Vec<usize>,
    pub outputs: usize,
}

impl Default for ToyNetConfig {
    fn default() -> Self {
        ToyNetConfig {
            input: 12,
            conv: Some((3, 4, 2)),
            hidden: vec![32, 32, 16],
            outputs: super::NUM_ACTIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Conv {
    in_side: usize,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    out_side: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Conv(Conv),
    Dense { n_in: usize, n_out: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    kind: Kind,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Layer {
    fn n_in(&self) -> usize {
        match &self.kind {
            Kind::Conv(c) => c.cin * c.in_side * c.in_side,
            Kind::Dense { n_in, .. } => *n_in,
        }
    }

    fn n_out(&self) -> usize {
        match &self.kind {
            Kind::Conv(c) => c.cout * c.out_side * c.out_side,
            Kind::Dense { n_out, .. } => *n_out,
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            Kind::Dense { n_in, n_out } => (0..*n_out)
                .map(|o| {
                    let row = &self.w[o * n_in..(o + 1) * n_in];
                    self.b[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect(),
            Kind::Conv(c) => {
                let mut out = vec![0.0; c.cout * c.out_side * c.out_side];
                for co in 0..c.cout {
                    for oy in 0..c.out_side {
                        for ox in 0..c.out_side {
                            let mut acc = self.b[co];
                            for ci in 0..c.cin {
                                for ky in 0..c.k {
                                    for kx in 0..c.k {
                                        let w = self.w[((co * c.cin + ci) * c.k + ky) * c.k + kx];
                                        let iy = oy * c.stride + ky;
                                        let ix = ox * c.stride + kx;
                                        acc += w * x[(ci * c.in_side + iy) * c.in_side + ix];
                                    }
                                }
                            }
                            out[(co * c.out_side + oy) * c.out_side + ox] = acc;
                        }
                    }
                }
                out
            }
        }
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    fn backward(&self, x: &[f64], dy: &[f64], gw: &mut [f64], gb: &mut [f64], want_dx: bool) -> Option<Vec<f64>> {
        let mut dx = want_dx.then(|| vec![0.0; x.len()]);
        match &self.kind {
            Kind::Dense { n_in, n_out } => {
                for o in 0..*n_out {
                    let d = dy[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = o * n_in;
                    for i in 0..*n_in {
                        gw[row + i] += d * x[i];
                    }
                    if let Some(dx) = dx.as_mut() {
                        for i in 0..*n_in {
                            dx[i] += d * self.w[row + i];
                        }
                    }
                }
            }
            Kind::Conv(c) => {
                for co in 0..c.cout {
                    for oy in 0..c.out_side {
                        for ox in 0..c.out_side {
                            let d = dy[(co * c.out_side + oy) * c.out_side + ox];
                            if d == 0.0 {
                                continue;
                            }
                            gb[co] += d;
                            for ci in 0..c.cin {
                                for ky in 0..c.k {
                                    for kx in 0..c.k {
                                        let wi = ((co * c.cin + ci) * c.k + ky) * c.k + kx;
                                        let xi = (ci * c.in_side + oy * c.stride + ky) * c.in_side + ox * c.stride + kx;
                                        gw[wi] += d * x[xi];
                                        if let Some(dx) = dx.as_mut() {
                                            dx[xi] += d * self.w[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Small conv + FC Q-network. Layers below `freeze_cutoff` are frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet {
    layers: Vec<Layer>,
    pub freeze_cutoff: usize,
}

/// Per-layer parameter gradients; `None` for frozen layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

struct Cache {
    /// inputs[i] is the input of layer i; the last entry is the output.
    inputs: Vec<Vec<f64>>,
}

impl ToyNet {
    pub fn new<R: Rng + ?Sized>(cfg: &ToyNetConfig, rng: &mut R) -> Result<Self> {
        if cfg.input == 0 || cfg.outputs == 0 {
            return Err(Error::Config("toy net needs a non-empty input and output".into()));
        }
        let mut layers = Vec::new();
        let mut n = cfg.input * cfg.input;
        if let Some((k, cout, stride)) = cfg.conv {
            if k == 0 || k > cfg.input || stride == 0 || cout == 0 {
                return Err(Error::Config(format!("invalid toy conv ({k}, {cout}, {stride})")));
            }
            let out_side = (cfg.input - k) / stride + 1;
            let fan_in = k * k;
            layers.push(Layer {
                kind: Kind::Conv(Conv {
                    in_side: cfg.input,
                    cin: 1,
                    cout,
                    k,
                    stride,
                    out_side,
                }),
                w: init(rng, cout * fan_in, fan_in),
                b: vec![0.0; cout],
            });
            n = cout * out_side * out_side;
        }
        for &h in cfg.hidden.iter().chain(std::iter::once(&cfg.outputs)) {
            if h == 0 {
                return Err(Error::Config("toy net layer widths must be >= 1".into()));
            }
            layers.push(Layer {
                kind: Kind::Dense { n_in: n, n_out: h },
                w: init(rng, n * h, n),
                b: vec![0.0; h],
            });
            n = h;
        }
        Ok(ToyNet { layers, freeze_cutoff: 0 })
    }

    /// A single linear layer (no activation).
    pub fn linear<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        ToyNet {
            layers: vec![Layer {
                kind: Kind::Dense { n_in, n_out },
                w: init(rng, n_in * n_out, n_in),
                b: (0..n_out).map(|_| rng.random_range(-0.1..0.1)).collect(),
            }],
            freeze_cutoff: 0,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, Layer::n_out)
    }

    pub fn dense_layers(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l.kind, Kind::Dense { .. })).count()
    }

    /// Cutoff that freezes everything except what the policy trains.
    pub fn cutoff_for(&self, policy: TrainingPolicy) -> Result<usize> {
        match policy {
            TrainingPolicy::E2E => Ok(0),
            TrainingPolicy::LastK(k) => {
                if k == 0 || k > self.dense_layers() {
                    return Err(Error::Config(format!(
                        "LastK({k}) invalid for a toy net with {} FC layers",
                        self.dense_layers()
                    )));
                }
                Ok(self.layers.len() - k)
            }
        }
    }

    pub fn set_policy(&mut self, policy: TrainingPolicy) -> Result<()> {
        self.freeze_cutoff = self.cutoff_for(policy)?;
        Ok(())
    }

    /// Flat copy of one layer's weights and biases.
    pub fn layer_params(&self, i: usize) -> Vec<f64> {
        let l = &self.layers[i];
        l.w.iter().chain(&l.b).copied().collect()
    }

    fn forward_cached(&self, x: &[f64]) -> Cache {
        let mut inputs = Vec::with_capacity(self.layers.len() + 1);
        inputs.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = l.forward(inputs.last().unwrap());
            if i < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(y);
        }
        Cache { inputs }
    }

    /// Which hidden units are active for input `x`.
    fn relu_pattern(&self, x: &[f64]) -> Vec<bool> {
        let c = self.forward_cached(x);
        let hidden = &c.inputs[1..c.inputs.len() - 1];
        hidden.iter().flatten().map(|v| *v > 0.0).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).inputs.pop().unwrap()
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| (i >= self.freeze_cutoff).then(|| (vec![0.0; l.w.len()], vec![0.0; l.b.len()])))
                .collect(),
        }
    }

    /// Backprop of `dout` (gradient w.r.t. the outputs) into `grads`. Stops
    /// at the freeze cutoff: no gradient flows into frozen layers.
    fn backward(&self, cache: &Cache, dout: Vec<f64>, grads: &mut Gradients) {
        let mut dy = dout;
        let last = self.layers.len() - 1;
        for i in (self.freeze_cutoff..self.layers.len()).rev() {
            if i < last {
                // ReLU derivative, from the post-activation values
                for (d, y) in dy.iter_mut().zip(&cache.inputs[i + 1]) {
                    if *y <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (gw, gb) = grads.layers[i].as_mut().expect("trainable layer has a gradient slot");
            let want_dx = i > self.freeze_cutoff;
            match self.layers[i].backward(&cache.inputs[i], &dy, gw, gb, want_dx) {
                Some(dx) => dy = dx,
                None => break,
            }
        }
    }

    /// Gradient of `0.5 (Q(x, action) - target)^2`; returns the loss.
    pub fn td_gradient(&self, x: &[f64], action: usize, target: f64, grads: &mut Gradients) -> f64 {
        let cache = self.forward_cached(x);
        let q = cache.inputs.last().unwrap();
        let delta = q[action] - target;
        let mut dout = vec![0.0; q.len()];
        dout[action] = delta;
        self.backward(&cache, dout, grads);
        0.5 * delta * delta
    }

    pub fn apply(&mut self, grads: &Gradients, scale: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers).skip(self.freeze_cutoff) {
            if let Some((gw, gb)) = g {
                l.w.iter_mut().zip(gw).for_each(|(w, g)| *w -= scale * g);
                l.b.iter_mut().zip(gb).for_each(|(b, g)| *b -= scale * g);
            }
        }
    }

    fn param_mut(&mut self, layer: usize, idx: usize) -> &mut f64 {
        let l = &mut self.layers[layer];
        let nw = l.w.len();
        if idx < nw {
            &mut l.w[idx]
        } else {
            &mut l.b[idx - nw]
        }
    }

    fn layer_len(&self, layer: usize) -> usize {
        self.layers[layer].w.len() + self.layers[layer].b.len()
    }
}

fn init<R: Rng + ?Sized>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// One SGD step on the mean squared TD error of `batch`. Targets come from
/// `target_net`; gradients are accumulated transition by transition.
pub fn train_step(
    net: &mut ToyNet,
    target_net: &ToyNet,
    batch: &[Transition],
    gamma: f64,
    learning_rate: f64,
    policy: TrainingPolicy,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("train_step needs a non-empty batch".into()));
    }
    net.set_policy(policy)?;
    let mut grads = net.zero_grads();
    let mut loss = 0.0;
    for t in batch {
        t.validate()?;
        let max_next = if t.crash {
            0.0
        } else {
            target_net.forward(&t.next_state).into_iter().fold(f64::NEG_INFINITY, f64::max)
        };
        let y = q_update(t.reward, gamma, max_next, t.crash)?;
        loss += net.td_gradient(&t.state, t.action, y, &mut grads);
    }
    loss /= batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            step: 0,
            detail: format!("non-finite TD loss over a batch of {} (learning rate {learning_rate})", batch.len()),
        });
    }
    net.apply(&grads, learning_rate / batch.len() as f64);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub max_relative_error: f64,
    /// Per layer; `None` where the layer is frozen and skipped.
    pub layer_errors: Vec<Option<f64>>,
    pub checked: usize,
    /// Parameters whose perturbation flips a ReLU, where the loss has a kink.
    pub skipped: usize,
}

/// Compares analytic TD-loss gradients against central differences with a
/// relative step of 1e-4. Parameters whose perturbation moves a hidden unit
/// across its ReLU kink are skipped.
pub fn finite_diff_check(net: &ToyNet, input: &[f64], action: usize, target: f64) -> FdReport {
    let mut grads = net.zero_grads();
    net.td_gradient(input, action, target, &mut grads);
    let loss = |n: &ToyNet| {
        let q = n.forward(input)[action];
        0.5 * (q - target) * (q - target)
    };
    let pattern = net.relu_pattern(input);
    let mut probe = net.clone();
    let mut skipped = 0;
    let mut layer_errors = Vec::with_capacity(net.num_layers());
    let mut max_err: f64 = 0.0;
    let mut checked = 0;
    for (li, g) in grads.layers.iter().enumerate() {
        let Some((gw, gb)) = g else {
            layer_errors.push(None);
            continue;
        };
        let analytic: Vec<f64> = gw.iter().chain(gb).copied().collect();
        let mut worst: f64 = 0.0;
        for (pi, a) in analytic.iter().enumerate().take(probe.layer_len(li)) {
            let orig = *probe.param_mut(li, pi);
            // the loss is piecewise quadratic per parameter, so central
            // differences are exact between kinks; small h only risks roundoff
            let h = 1e-5 * orig.abs().max(1.0);
            *probe.param_mut(li, pi) = orig + h;
            let up = loss(&probe);
            let kink_up = probe.relu_pattern(input) != pattern;
            *probe.param_mut(li, pi) = orig - h;
            let down = loss(&probe);
            let kink_down = probe.relu_pattern(input) != pattern;
            *probe.param_mut(li, pi) = orig;
            if kink_up || kink_down {
                skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(err);
            checked += 1;
        }
        max_err = max_err.max(worst);
        layer_errors.push(Some(worst));
    }
    FdReport {
        max_relative_error: max_err,
        layer_errors,
        checked,
        skipped,
    }
}
