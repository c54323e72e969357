//! The CNN+LSTM classifier, implemented from scratch.
//!
//! Three valid-padding single-channel 1-D convolutions (kernel 25,
//! stride 1) turn a 480-sample trace into 408 scalar features. Those are
//! fed as 408 timesteps into one LSTM cell with hidden size 2, and a
//! softmax over the final hidden state yields the two class
//! probabilities. With the default shape, the convolutions use 3*26 = 78
//! parameters and the LSTM 4*2*(1+2+1) = 32, 110 in total.
//!
//! The LSTM walks the feature sequence from the trace end toward the
//! start. Tunnel events cluster near the trace start (the first switch
//! arrives after one exponential delay), so reading backward places them
//! a short, bounded number of steps before the readout. A freshly
//! initialized cell only remembers a few dozen steps, and gradients
//! through longer spans vanish; with the forward reading order, training
//! converges to a detector of activity near the trace end and misses
//! isolated early events entirely.
//!
//! Parameter layout of the flat vector:
//!   conv1 w[kernel], b | conv2 w, b | conv3 w, b |
//!   then per gate in the order i, f, g, o:
//!     W_x [hidden*input] | W_h [hidden*hidden] | b [hidden]
//! Matrices are row-major (rows = hidden units).

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::trace::{Label, LabeledDataset, Trace};
use std::fs;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvActivation {
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DnnConfig {
    pub input_len: usize,
    pub conv_layers: usize,
    pub kernel: usize,
    pub stride: usize,
    pub conv_channels: usize,
    pub conv_activation: ConvActivation,
    pub lstm_hidden: usize,
    pub lstm_input: usize,
}

impl Default for DnnConfig {
    fn default() -> Self {
        Self {
            input_len: 480,
            conv_layers: 3,
            kernel: 25,
            stride: 1,
            conv_channels: 1,
            conv_activation: ConvActivation::Relu,
            lstm_hidden: 2,
            lstm_input: 1,
        }
    }
}

impl DnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride != 1 || self.conv_channels != 1 || self.lstm_input != 1 {
            return Err(Error::invalid(
                "only stride 1, single-channel convs and scalar LSTM input are supported",
            ));
        }
        if self.kernel == 0 || self.lstm_hidden == 0 {
            return Err(Error::invalid("kernel and lstm_hidden must be >= 1"));
        }
        if self.feature_len() == 0 {
            return Err(Error::invalid(
                "conv stack consumes the whole trace; no features remain",
            ));
        }
        Ok(())
    }

    /// Feature count after the conv stack: input_len - conv_layers*(kernel-1).
    pub fn feature_len(&self) -> usize {
        self.input_len
            .saturating_sub(self.conv_layers * (self.kernel - 1))
    }

    /// Per-layer output lengths of the conv stack.
    pub fn conv_shape_chain(&self) -> Vec<usize> {
        (0..=self.conv_layers)
            .map(|l| self.input_len - l * (self.kernel - 1))
            .collect()
    }

    pub fn lstm_param_count(&self) -> usize {
        4 * self.lstm_hidden * (self.lstm_input + self.lstm_hidden + 1)
    }

    pub fn conv_param_count(&self) -> usize {
        self.conv_layers * (self.kernel + 1)
    }
}

/// Total and LSTM-only trainable parameter counts.
pub fn param_count(config: &DnnConfig) -> (usize, usize) {
    let lstm = config.lstm_param_count();
    (lstm, config.conv_param_count() + lstm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DnnModel {
    pub config: DnnConfig,
    pub params: Vec<f64>,
}

impl DnnModel {
    pub fn new(config: DnnConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let (_, total) = param_count(&config);
        if params.len() != total {
            return Err(Error::SizeMismatch(format!(
                "expected {total} params, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("model parameters must be finite"));
        }
        Ok(Self { config, params })
    }

    pub fn zeros(config: DnnConfig) -> Result<Self> {
        let (_, total) = param_count(&config);
        Self::new(config, vec![0.0; total])
    }

    /// Uniform init scaled by fan-in: conv weights in
    /// +-sqrt(6/kernel) (He-style, unit signal gain through the relu
    /// stack), LSTM weights in +-0.5/sqrt(input+hidden). Biases are zero
    /// except the forget gate.
    pub fn init(config: DnnConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (_, total) = param_count(&config);
        let mut params = vec![0.0; total];
        let k = config.kernel;
        let conv_scale = (6.0 / k as f64).sqrt();
        let mut pos = 0;
        for _ in 0..config.conv_layers {
            for p in params[pos..pos + k].iter_mut() {
                *p = rng.uniform_range(-conv_scale, conv_scale);
            }
            pos += k + 1; // bias stays zero
        }
        let h = config.lstm_hidden;
        let (n_in, n_hid) = (config.lstm_input, config.lstm_hidden);
        let lstm_scale = 0.5 / ((n_in + n_hid) as f64).sqrt();
        for g in 0..4 {
            let n_w = h * n_in + h * n_hid;
            for p in params[pos..pos + n_w].iter_mut() {
                *p = rng.uniform_range(-lstm_scale, lstm_scale);
            }
            if g == 1 {
                // forget-gate bias starts at 1 so the cell remembers
                // across the full feature sequence from the first epoch;
                // with a zero start the state half-life is one step and
                // events far from the trace end never reach the output
                for p in params[pos + n_w..pos + n_w + h].iter_mut() {
                    *p = 1.0;
                }
            }
            pos += n_w + h;
        }
        debug_assert_eq!(pos, total);
        Self::new(config, params)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: [f64; 2],
    pub label: Label,
}

impl Prediction {
    pub fn p_event(&self) -> f64 {
        self.probs[0]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn activation(kind: ConvActivation, x: f64) -> f64 {
    match kind {
        ConvActivation::Relu => x.max(0.0),
        ConvActivation::Tanh => x.tanh(),
    }
}

fn activation_deriv(kind: ConvActivation, pre: f64) -> f64 {
    match kind {
        ConvActivation::Relu => {
            if pre > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        ConvActivation::Tanh => {
            let t = pre.tanh();
            1.0 - t * t
        }
    }
}

fn softmax2(a: f64, b: f64) -> [f64; 2] {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let z = ea + eb;
    [ea / z, eb / z]
}

/// Cached forward-pass state, reused by `backward`.
struct ForwardTape {
    /// conv_inputs[l] is the input sequence of conv layer l; the last
    /// entry is the feature sequence fed into the LSTM.
    conv_seqs: Vec<Vec<f64>>,
    /// pre-activation sequences per conv layer
    conv_pre: Vec<Vec<f64>>,
    gates: Vec<[f64; 8]>, // per step, per hidden unit pair: i0,i1,f0,f1,g0,g1,o0,o1
    cells: Vec<[f64; 2]>,
    hiddens: Vec<[f64; 2]>,
    probs: [f64; 2],
}

struct LstmView<'a> {
    wx: [&'a [f64]; 4],
    wh: [&'a [f64]; 4],
    b: [&'a [f64]; 4],
}

fn lstm_view<'a>(config: &DnnConfig, params: &'a [f64]) -> LstmView<'a> {
    let h = config.lstm_hidden;
    let n_in = config.lstm_input;
    let mut pos = config.conv_param_count();
    let mut wx: [&[f64]; 4] = [&[]; 4];
    let mut wh: [&[f64]; 4] = [&[]; 4];
    let mut b: [&[f64]; 4] = [&[]; 4];
    for g in 0..4 {
        wx[g] = &params[pos..pos + h * n_in];
        pos += h * n_in;
        wh[g] = &params[pos..pos + h * h];
        pos += h * h;
        b[g] = &params[pos..pos + h];
        pos += h;
    }
    LstmView { wx, wh, b }
}

fn run_forward(model: &DnnModel, trace: &Trace) -> Result<ForwardTape> {
    let cfg = &model.config;
    if trace.len() != cfg.input_len {
        return Err(Error::SizeMismatch(format!(
            "trace length {} != configured input length {}",
            trace.len(),
            cfg.input_len
        )));
    }
    if cfg.lstm_hidden != 2 {
        return Err(Error::invalid(
            "the softmax head requires lstm_hidden == 2",
        ));
    }
    let k = cfg.kernel;

    let mut conv_seqs = vec![trace.samples().to_vec()];
    let mut conv_pre = Vec::with_capacity(cfg.conv_layers);
    for l in 0..cfg.conv_layers {
        let w = &model.params[l * (k + 1)..l * (k + 1) + k];
        let b = model.params[l * (k + 1) + k];
        let x = conv_seqs.last().expect("seeded with the input trace");
        let out_len = x.len() - (k - 1);
        let mut pre = Vec::with_capacity(out_len);
        for i in 0..out_len {
            let mut acc = b;
            for (j, wj) in w.iter().enumerate() {
                acc += wj * x[i + j];
            }
            pre.push(acc);
        }
        let post: Vec<f64> = pre
            .iter()
            .map(|&p| activation(cfg.conv_activation, p))
            .collect();
        conv_pre.push(pre);
        conv_seqs.push(post);
    }

    let lstm = lstm_view(cfg, &model.params);
    // the LSTM walks the feature sequence from the trace end toward the
    // start; see the module docs for why
    let features: Vec<f64> = conv_seqs.last().unwrap().iter().rev().copied().collect();
    let steps = features.len();
    let mut gates = Vec::with_capacity(steps);
    let mut cells = Vec::with_capacity(steps);
    let mut hiddens = Vec::with_capacity(steps);
    let mut h_prev = [0.0f64; 2];
    let mut c_prev = [0.0f64; 2];
    for &x in &features {
        let mut g8 = [0.0f64; 8];
        for g in 0..4 {
            for u in 0..2 {
                let pre = lstm.wx[g][u] * x
                    + lstm.wh[g][2 * u] * h_prev[0]
                    + lstm.wh[g][2 * u + 1] * h_prev[1]
                    + lstm.b[g][u];
                g8[2 * g + u] = if g == 2 { pre.tanh() } else { sigmoid(pre) };
            }
        }
        let mut c = [0.0f64; 2];
        let mut h = [0.0f64; 2];
        for u in 0..2 {
            let (i, f, gg, o) = (g8[u], g8[2 + u], g8[4 + u], g8[6 + u]);
            c[u] = f * c_prev[u] + i * gg;
            h[u] = o * c[u].tanh();
        }
        gates.push(g8);
        cells.push(c);
        hiddens.push(h);
        c_prev = c;
        h_prev = h;
    }
    let probs = softmax2(h_prev[0], h_prev[1]);
    Ok(ForwardTape {
        conv_seqs,
        conv_pre,
        gates,
        cells,
        hiddens,
        probs,
    })
}

/// Class probabilities for a standardized trace. Index 0 is `Event`;
/// an exact tie resolves to `Event`.
pub fn forward(model: &DnnModel, trace: &Trace) -> Result<Prediction> {
    let tape = run_forward(model, trace)?;
    let probs = tape.probs;
    let label = if probs[0] >= probs[1] {
        Label::Event
    } else {
        Label::NoEvent
    };
    Ok(Prediction { probs, label })
}

/// Cross-entropy loss of the model on one labeled trace.
pub fn loss(model: &DnnModel, trace: &Trace, label: Label) -> Result<f64> {
    let tape = run_forward(model, trace)?;
    let p = match label {
        Label::Event => tape.probs[0],
        Label::NoEvent => tape.probs[1],
    };
    Ok(-p.max(1e-300).ln())
}

/// Gradient of the cross-entropy loss with respect to every parameter,
/// by backpropagation through the conv stack and through time across the
/// LSTM steps. Returns (loss, gradient).
pub fn backward(model: &DnnModel, trace: &Trace, label: Label) -> Result<(f64, Vec<f64>)> {
    let cfg = &model.config;
    let tape = run_forward(model, trace)?;
    let k = cfg.kernel;
    let mut grad = vec![0.0f64; model.params.len()];

    // softmax + cross-entropy: dL/dh_T = p - onehot
    let target = match label {
        Label::Event => [1.0, 0.0],
        Label::NoEvent => [0.0, 1.0],
    };
    let loss_val = -match label {
        Label::Event => tape.probs[0],
        Label::NoEvent => tape.probs[1],
    }
    .max(1e-300)
    .ln();

    let lstm = lstm_view(cfg, &model.params);
    let features: Vec<f64> = tape.conv_seqs.last().unwrap().iter().rev().copied().collect();
    let steps = features.len();
    let mut d_features = vec![0.0f64; steps];

    let lstm_base = cfg.conv_param_count();
    let h = 2usize;
    let gate_stride = h * cfg.lstm_input + h * h + h;

    let mut dh = [tape.probs[0] - target[0], tape.probs[1] - target[1]];
    let mut dc = [0.0f64; 2];
    for t in (0..steps).rev() {
        let g8 = &tape.gates[t];
        let c = &tape.cells[t];
        let c_prev = if t > 0 { tape.cells[t - 1] } else { [0.0; 2] };
        let h_prev = if t > 0 { tape.hiddens[t - 1] } else { [0.0; 2] };
        let x = features[t];

        let mut da = [0.0f64; 8]; // pre-activation grads, same layout as g8
        for u in 0..2 {
            let (i, f, gg, o) = (g8[u], g8[2 + u], g8[4 + u], g8[6 + u]);
            let tc = c[u].tanh();
            let d_o = dh[u] * tc;
            let d_c = dc[u] + dh[u] * o * (1.0 - tc * tc);
            let d_i = d_c * gg;
            let d_f = d_c * c_prev[u];
            let d_g = d_c * i;
            da[u] = d_i * i * (1.0 - i);
            da[2 + u] = d_f * f * (1.0 - f);
            da[4 + u] = d_g * (1.0 - gg * gg);
            da[6 + u] = d_o * o * (1.0 - o);
            dc[u] = d_c * f;
        }

        let mut dh_prev = [0.0f64; 2];
        let mut dx = 0.0f64;
        for g in 0..4 {
            let base = lstm_base + g * gate_stride;
            for u in 0..2 {
                let a = da[2 * g + u];
                grad[base + u] += a * x;
                grad[base + h + 2 * u] += a * h_prev[0];
                grad[base + h + 2 * u + 1] += a * h_prev[1];
                grad[base + h + h * h + u] += a;
                dx += a * lstm.wx[g][u];
                dh_prev[0] += a * lstm.wh[g][2 * u];
                dh_prev[1] += a * lstm.wh[g][2 * u + 1];
            }
        }
        d_features[t] = dx;
        dh = dh_prev;
    }

    // undo the time reversal before walking back down the conv stack
    d_features.reverse();
    let mut d_out = d_features;
    for l in (0..cfg.conv_layers).rev() {
        let w_base = l * (k + 1);
        let w = &model.params[w_base..w_base + k];
        let x = &tape.conv_seqs[l];
        let pre = &tape.conv_pre[l];
        let mut d_in = vec![0.0f64; x.len()];
        for (i, (&d, &p)) in d_out.iter().zip(pre.iter()).enumerate() {
            let dpre = d * activation_deriv(cfg.conv_activation, p);
            if dpre == 0.0 {
                continue;
            }
            grad[w_base + k] += dpre;
            for (j, wj) in w.iter().enumerate() {
                grad[w_base + j] += dpre * x[i + j];
                d_in[i + j] += dpre * wj;
            }
        }
        d_out = d_in;
    }

    Ok((loss_val, grad))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Global-norm gradient clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Independent restarts; the run with the lowest best-epoch training loss
    /// wins. Restart r uses the derived rng stream r.
    pub restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-2,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            grad_clip: 5.0,
            restarts: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Parameters snapshotted at the lowest-loss epoch, not the last one.
    pub model: DnnModel,
    /// Mean training loss per epoch, for audit.
    pub loss_per_epoch: Vec<f64>,
    /// Epoch whose snapshot `model` holds.
    pub best_epoch: usize,
    /// Mean training loss at `best_epoch`.
    pub best_loss: f64,
}

fn train_once(
    train_set: &LabeledDataset,
    dnn_cfg: &DnnConfig,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainReport> {
    let mut model = DnnModel::init(dnn_cfg.clone(), rng)?;
    let n = train_set.len();
    let n_params = model.params.len();
    let mut m1 = vec![0.0f64; n_params];
    let mut m2 = vec![0.0f64; n_params];
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_per_epoch = Vec::with_capacity(cfg.epochs);
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.params.clone();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0f64; n_params];
            let mut batch_loss = 0.0;
            for &idx in batch {
                let (l, g) = backward(&model, &train_set.traces[idx], train_set.labels[idx])?;
                batch_loss += l;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grad.iter_mut() {
                *g *= scale;
            }
            epoch_loss += batch_loss;

            if cfg.grad_clip > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.grad_clip {
                    let s = cfg.grad_clip / norm;
                    for g in grad.iter_mut() {
                        *g *= s;
                    }
                }
            }

            step += 1;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in model.params.iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g;
                    }
                }
                Optimizer::Adam => {
                    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                    let bc1 = 1.0 - pow_int(b1, step);
                    let bc2 = 1.0 - pow_int(b2, step);
                    for i in 0..n_params {
                        m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
                        m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
                        let mh = m1[i] / bc1;
                        let vh = m2[i] / bc2;
                        model.params[i] -= cfg.learning_rate * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        let mean_loss = epoch_loss / n as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        loss_per_epoch.push(mean_loss);
        // keep the best-epoch snapshot: with a hard 110-parameter budget
        // the loss trajectory can leave a good basin late in the run, so
        // the final epoch is not reliably the best one
        if mean_loss < best_loss {
            best_loss = mean_loss;
            best_epoch = epoch;
            best_params.copy_from_slice(&model.params);
        }
    }
    model.params = best_params;
    Ok(TrainReport {
        model,
        loss_per_epoch,
        best_epoch,
        best_loss,
    })
}

fn pow_int(base: f64, exp: usize) -> f64 {
    base.powi(exp as i32)
}

/// Mini-batch training on cross-entropy. Deterministic given the seed.
pub fn train(
    train_set: &LabeledDataset,
    dnn_cfg: &DnnConfig,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    dnn_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let n_event = train_set.count_label(Label::Event);
    if n_event == 0 || n_event == train_set.len() {
        return Err(Error::invalid("training set must contain both labels"));
    }
    if cfg.learning_rate <= 0.0 || cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("bad training hyperparameters"));
    }
    let master = Rng::new(cfg.seed);
    let restarts = cfg.restarts.max(1);
    let mut best: Option<TrainReport> = None;
    for r in 0..restarts {
        let mut rng = master.derive(r as u64);
        let report = train_once(train_set, dnn_cfg, cfg, &mut rng)?;
        let better = match &best {
            None => true,
            Some(b) => report.best_loss < b.best_loss,
        };
        if better {
            best = Some(report);
        }
    }
    Ok(best.expect("at least one restart ran"))
}

/// Fraction of traces on which the model's decision matches the label.
pub fn accuracy(model: &DnnModel, ds: &LabeledDataset) -> Result<f64> {
    let mut correct = 0usize;
    for (trace, label) in ds.traces.iter().zip(&ds.labels) {
        if forward(model, trace)?.label == *label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

const MODEL_HEADER: &str = "# spinread model v1";

pub fn save_model(model: &DnnModel, path: &Path) -> Result<()> {
    let cfg = &model.config;
    let mut out = String::new();
    out.push_str(MODEL_HEADER);
    out.push('\n');
    out.push_str(&format!("input_len {}\n", cfg.input_len));
    out.push_str(&format!("conv_layers {}\n", cfg.conv_layers));
    out.push_str(&format!("kernel {}\n", cfg.kernel));
    out.push_str(&format!("stride {}\n", cfg.stride));
    out.push_str(&format!("conv_channels {}\n", cfg.conv_channels));
    out.push_str(&format!(
        "conv_activation {}\n",
        match cfg.conv_activation {
            ConvActivation::Relu => "relu",
            ConvActivation::Tanh => "tanh",
        }
    ));
    out.push_str(&format!("lstm_hidden {}\n", cfg.lstm_hidden));
    out.push_str(&format!("lstm_input {}\n", cfg.lstm_input));
    out.push_str(&format!("params {}\n", model.params.len()));
    for p in &model.params {
        out.push_str(&format!("{p}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model(path: &Path) -> Result<DnnModel> {
    let p = || path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(p(), e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MODEL_HEADER) {
        return Err(Error::malformed(p(), "missing model header"));
    }
    let mut field = |name: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| Error::malformed(p(), format!("missing {name}")))?;
        line.strip_prefix(&format!("{name} "))
            .map(str::to_owned)
            .ok_or_else(|| Error::malformed(p(), format!("expected {name}, got {line:?}")))
    };
    let parse_usize = |s: String, what: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::malformed(p(), format!("bad {what}")))
    };
    let config = DnnConfig {
        input_len: parse_usize(field("input_len")?, "input_len")?,
        conv_layers: parse_usize(field("conv_layers")?, "conv_layers")?,
        kernel: parse_usize(field("kernel")?, "kernel")?,
        stride: parse_usize(field("stride")?, "stride")?,
        conv_channels: parse_usize(field("conv_channels")?, "conv_channels")?,
        conv_activation: match field("conv_activation")?.as_str() {
            "relu" => ConvActivation::Relu,
            "tanh" => ConvActivation::Tanh,
            other => {
                return Err(Error::malformed(p(), format!("bad conv_activation {other:?}")))
            }
        },
        lstm_hidden: parse_usize(field("lstm_hidden")?, "lstm_hidden")?,
        lstm_input: parse_usize(field("lstm_input")?, "lstm_input")?,
    };
    let declared = parse_usize(field("params")?, "params")?;
    let params: Result<Vec<f64>> = lines
        .by_ref()
        .take(declared)
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| Error::malformed(p(), format!("bad parameter {l:?}")))
        })
        .collect();
    let params = params?;
    if params.len() != declared || lines.next().is_some() {
        return Err(Error::malformed(
            p(),
            format!("expected exactly {declared} parameters"),
        ));
    }
    DnnModel::new(config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn default_trace(rng: &mut Rng) -> Trace {
        Trace::new((0..480).map(|_| rng.uniform_range(-1.0, 1.0)).collect(), 1.0).unwrap()
    }

    #[test]
    fn param_counts_match_architecture() {
        let (lstm, total) = param_count(&DnnConfig::default());
        assert_eq!(lstm, 32);
        assert_eq!(total, 110);

        let tiny = DnnConfig {
            lstm_hidden: 1,
            ..DnnConfig::default()
        };
        assert_eq!(tiny.lstm_param_count(), 12);

        let one_conv = DnnConfig {
            conv_layers: 1,
            ..DnnConfig::default()
        };
        assert_eq!(param_count(&one_conv).1, 58);
    }

    #[test]
    fn shape_chain_and_param_independence_from_input_len() {
        let cfg = DnnConfig::default();
        assert_eq!(cfg.conv_shape_chain(), vec![480, 456, 432, 408]);
        for len in [200usize, 480, 1000] {
            let c = DnnConfig {
                input_len: len,
                ..DnnConfig::default()
            };
            assert_eq!(param_count(&c).1, 110);
            assert_eq!(c.feature_len(), len - 72);
        }
    }

    #[test]
    fn zero_params_give_even_softmax() {
        let model = DnnModel::zeros(DnnConfig::default()).unwrap();
        let mut rng = Rng::new(0);
        let pred = forward(&model, &default_trace(&mut rng)).unwrap();
        assert!((pred.probs[0] - 0.5).abs() < 1e-15);
        assert!((pred.probs[1] - 0.5).abs() < 1e-15);
        assert_eq!(pred.label, Label::Event); // tie resolves to Event
    }

    #[test]
    fn probs_are_normalized() {
        let mut rng = Rng::new(1);
        for _ in 0..10 {
            let model = DnnModel::init(DnnConfig::default(), &mut rng).unwrap();
            let pred = forward(&model, &default_trace(&mut rng)).unwrap();
            assert!((pred.probs[0] + pred.probs[1] - 1.0).abs() < 1e-12);
            assert!(pred.probs.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn forward_rejects_length_mismatch() {
        let model = DnnModel::zeros(DnnConfig::default()).unwrap();
        let short = Trace::zeros(100, 1.0).unwrap();
        assert!(forward(&model, &short).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(42);
        for case in 0..5 {
            // tanh convs on odd cases so both activations get checked;
            // relu kinks are avoided by the random preactivations anyway
            let cfg = DnnConfig {
                conv_activation: if case % 2 == 0 {
                    ConvActivation::Relu
                } else {
                    ConvActivation::Tanh
                },
                ..DnnConfig::default()
            };
            let model = DnnModel::init(cfg, &mut rng).unwrap();
            let trace = default_trace(&mut rng);
            let label = if case % 2 == 0 { Label::Event } else { Label::NoEvent };
            let (_, grad) = backward(&model, &trace, label).unwrap();
            let eps = 1e-6;
            let mut worst = 0.0f64;
            for i in 0..model.params.len() {
                let mut plus = model.clone();
                plus.params[i] += eps;
                let mut minus = model.clone();
                minus.params[i] -= eps;
                let num =
                    (loss(&plus, &trace, label).unwrap() - loss(&minus, &trace, label).unwrap())
                        / (2.0 * eps);
                // central differences on an O(1) loss carry ~1e-10 of
                // rounding noise, so components below ~1e-4 cannot be
                // resolved to 1e-5 relative; floor the denominator there
                let denom = grad[i].abs().max(num.abs()).max(1e-4);
                worst = worst.max((grad[i] - num).abs() / denom);
            }
            assert!(worst < 1e-5, "case {case}: worst rel err {worst}");
        }
    }

    #[test]
    fn zero_trace_zeroes_input_weight_gradients() {
        let mut rng = Rng::new(7);
        let model = DnnModel::init(DnnConfig::default(), &mut rng).unwrap();
        let zero = Trace::zeros(480, 1.0).unwrap();
        let (_, grad) = backward(&model, &zero, Label::Event).unwrap();
        // first conv layer weight grads vanish on zero input (bias path
        // does not)
        let k = model.config.kernel;
        // relu of bias 0 is 0 with zero derivative at the kink by our
        // convention, so the whole first-layer weight block is zero
        for g in &grad[..k] {
            assert_eq!(*g, 0.0);
        }
    }

    #[test]
    fn output_layer_gradient_matches_softmax_closed_form() {
        let mut rng = Rng::new(8);
        let model = DnnModel::init(DnnConfig::default(), &mut rng).unwrap();
        let trace = default_trace(&mut rng);
        let pred = forward(&model, &trace).unwrap();
        // perturb only along the final hidden state via the output-gate
        // bias of the last step is intertwined; instead verify p - onehot
        // through the total derivative of loss wrt a tiny softmax-input
        // shift applied by hand
        let eps = 1e-7;
        let h0 = (pred.probs[0] / pred.probs[1]).ln(); // h0 - h1 recovered
        let shifted = softmax2(h0 + eps, 0.0);
        let dl_num = (-(shifted[0].ln()) - -(pred.probs[0].ln())) / eps;
        let closed = pred.probs[0] - 1.0;
        assert!((dl_num - closed).abs() < 1e-5, "{dl_num} vs {closed}");
    }

    #[test]
    fn training_separates_clean_data() {
        let mut traces = Vec::new();
        let mut labels = Vec::new();
        let mut rng = Rng::new(3);
        for _ in 0..40 {
            let pos = 20 + rng.uniform_usize(400);
            let mut v = vec![0.0; 480];
            let width = 20 + rng.uniform_usize(40);
            for s in v.iter_mut().skip(pos).take(width) {
                *s = 1.0;
            }
            traces.push(Trace::new(v, 1.0).unwrap());
            labels.push(Label::Event);
            traces.push(Trace::zeros(480, 1.0).unwrap());
            labels.push(Label::NoEvent);
        }
        let ds = LabeledDataset::new(traces, labels, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            seed: 1,
            ..TrainConfig::default()
        };
        let report = train(&ds, &DnnConfig::default(), &cfg).unwrap();
        let acc = accuracy(&report.model, &ds).unwrap();
        assert!(acc == 1.0, "training accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic() {
        let mut traces = Vec::new();
        let mut labels = Vec::new();
        for i in 0..8 {
            let mut v = vec![0.0; 480];
            if i % 2 == 0 {
                for s in v.iter_mut().skip(100).take(60) {
                    *s = 1.0;
                }
            }
            traces.push(Trace::new(v, 1.0).unwrap());
            labels.push(if i % 2 == 0 { Label::Event } else { Label::NoEvent });
        }
        let ds = LabeledDataset::new(traces, labels, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(&ds, &DnnConfig::default(), &cfg).unwrap();
        let b = train(&ds, &DnnConfig::default(), &cfg).unwrap();
        for (x, y) in a.model.params.iter().zip(&b.model.params) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn model_round_trip() {
        let mut rng = Rng::new(5);
        let model = DnnModel::init(DnnConfig::default(), &mut rng).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(back.config, model.config);
        for (a, b) in back.params.iter().zip(&model.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let trace = default_trace(&mut rng);
        assert_eq!(
            forward(&model, &trace).unwrap().probs,
            forward(&back, &trace).unwrap().probs
        );
    }

    #[test]
    fn short_model_file_rejected() {
        let mut rng = Rng::new(6);
        let model = DnnModel::init(DnnConfig::default(), &mut rng).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.txt");
        save_model(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: Vec<&str> = text.lines().collect();
        std::fs::write(&path, truncated[..truncated.len() - 1].join("\n")).unwrap();
        assert!(load_model(&path).is_err());
    }
}
