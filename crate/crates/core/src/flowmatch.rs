//! Conditional flow matching on action chunks.
//!
//! Along the path `A^τ = τA + (1−τ)ε`, `ε ~ N(0, I)`, the conditional target field is
//! `u = A − ε`. A network `v_θ(A^τ, τ, obs)` is regressed onto it, and actions are
//! generated by forward Euler from `A⁰ ~ N(0, I)` to `τ = 1`.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("tau {0} outside [0, 1]")]
    InvalidTau(f64),
    #[error("step size {0} does not divide 1 evenly")]
    InvalidStep(f64),
    #[error("non-finite state at Euler step {step}")]
    NonFiniteState { step: usize },
    #[error("non-finite {0} during training")]
    NonFiniteTraining(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
}

/// One draw from the linear-Gaussian path.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample {
    pub tau: f64,
    pub a: Vec<f64>,
    pub eps: Vec<f64>,
    pub a_tau: Vec<f64>,
    pub u_target: Vec<f64>,
}

impl FlowSample {
    pub fn new(a: &[f64], eps: Vec<f64>, tau: f64) -> Result<Self, FlowError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(FlowError::InvalidTau(tau));
        }
        if eps.len() != a.len() {
            return Err(FlowError::ShapeMismatch {
                what: "noise",
                expected: a.len(),
                found: eps.len(),
            });
        }
        let a_tau = a.iter().zip(&eps).map(|(x, e)| tau * x + (1.0 - tau) * e).collect();
        let u_target = a.iter().zip(&eps).map(|(x, e)| x - e).collect();
        Ok(Self {
            tau,
            a: a.to_vec(),
            eps,
            a_tau,
            u_target,
        })
    }
}

pub fn standard_normal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn sample_path(a: &[f64], tau: f64, rng: &mut impl Rng) -> Result<FlowSample, FlowError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(FlowError::InvalidTau(tau));
    }
    FlowSample::new(a, standard_normal(a.len(), rng), tau)
}

/// Anything that predicts a velocity for the action chunk.
pub trait VectorField {
    fn action_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn eval(&self, a_tau: &[f64], tau: f64, obs: &[f64]) -> Vec<f64>;
}

/// A vector field with a flat parameter vector and a vector-Jacobian product.
pub trait Trainable: VectorField {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// `cotangentᵀ · ∂v/∂θ` at the given input.
    fn vjp(&self, a_tau: &[f64], tau: f64, obs: &[f64], cotangent: &[f64]) -> Vec<f64>;
}

// ---------------------------------------------------------------------------
// Network

/// Dense network with tanh hidden layers and a linear output. Input is
/// `[A^τ, τ, obs]`; parameters are stored flat, layer by layer, weights row-major
/// (`out × in`) followed by biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub action_dim: usize,
    pub obs_dim: usize,
    /// Layer widths from input to output.
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn new(action_dim: usize, obs_dim: usize, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![action_dim + 1 + obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for w in sizes.windows(2) {
            let scale = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                let z: f64 = StandardNormal.sample(&mut rng);
                params.push(z * scale);
            }
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        Self {
            action_dim,
            obs_dim,
            sizes,
            params,
        }
    }

    pub fn param_count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn input(&self, a_tau: &[f64], tau: f64, obs: &[f64]) -> Vec<f64> {
        assert_eq!(a_tau.len(), self.action_dim, "action dimension");
        assert_eq!(obs.len(), self.obs_dim, "observation dimension");
        let mut x = Vec::with_capacity(self.sizes[0]);
        x.extend_from_slice(a_tau);
        x.push(tau);
        x.extend_from_slice(obs);
        x
    }

    /// Activations of every layer, input first.
    fn forward(&self, x: Vec<f64>) -> Vec<Vec<f64>> {
        let layers = self.sizes.len() - 1;
        let mut acts = vec![x];
        let mut off = 0;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[off..off + n_in * n_out];
            let bias = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let prev = acts.last().unwrap();
            let mut out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>() + bias[o]
                })
                .collect();
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        acts
    }
}

impl VectorField for Mlp {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn eval(&self, a_tau: &[f64], tau: f64, obs: &[f64]) -> Vec<f64> {
        self.forward(self.input(a_tau, tau, obs)).pop().unwrap()
    }
}

impl Trainable for Mlp {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn vjp(&self, a_tau: &[f64], tau: f64, obs: &[f64], cotangent: &[f64]) -> Vec<f64> {
        let acts = self.forward(self.input(a_tau, tau, obs));
        let layers = self.sizes.len() - 1;
        let mut grad = vec![0.0; self.params.len()];
        let offsets: Vec<usize> = self
            .sizes
            .windows(2)
            .scan(0, |o, w| {
                let here = *o;
                *o += w[0] * w[1] + w[1];
                Some(here)
            })
            .collect();
        // delta = ∂(cotangent·out)/∂(pre-activation of layer l)
        let mut delta = cotangent.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let prev = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    let g = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                    g.iter_mut().zip(prev).for_each(|(g, p)| *g += d * p);
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[off..off + n_in * n_out];
            let mut back = vec![0.0; n_in];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                back.iter_mut().zip(row).for_each(|(b, w)| *b += delta[o] * w);
            }
            // previous layer is a tanh hidden layer
            for (b, a) in back.iter_mut().zip(prev) {
                *b *= 1.0 - a * a;
            }
            delta = back;
        }
        grad
    }
}

// ---------------------------------------------------------------------------
// Loss

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `‖v − u‖²`.
    #[default]
    Squared,
    /// `‖v − u‖`, the literal norm; its gradient is undefined at zero residual and
    /// taken as zero there.
    Norm,
}

/// Batch loss and parameter gradient.
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
}

fn check_batch<F: VectorField + ?Sized>(
    net: &F,
    batch: &[FlowSample],
    obs: &[&[f64]],
) -> Result<(), FlowError> {
    if batch.len() != obs.len() {
        return Err(FlowError::ShapeMismatch {
            what: "observations per batch",
            expected: batch.len(),
            found: obs.len(),
        });
    }
    for (s, o) in batch.iter().zip(obs) {
        if s.a_tau.len() != net.action_dim() {
            return Err(FlowError::ShapeMismatch {
                what: "action chunk",
                expected: net.action_dim(),
                found: s.a_tau.len(),
            });
        }
        if o.len() != net.obs_dim() {
            return Err(FlowError::ShapeMismatch {
                what: "observation",
                expected: net.obs_dim(),
                found: o.len(),
            });
        }
    }
    Ok(())
}

fn sample_loss(v: &[f64], u: &[f64], kind: LossKind) -> (f64, Vec<f64>) {
    let r: Vec<f64> = v.iter().zip(u).map(|(a, b)| a - b).collect();
    let sq: f64 = r.iter().map(|x| x * x).sum();
    match kind {
        LossKind::Squared => (sq, r.iter().map(|x| 2.0 * x).collect()),
        LossKind::Norm => {
            let n = sq.sqrt();
            let g = if n > 0.0 { r.iter().map(|x| x / n).collect() } else { vec![0.0; r.len()] };
            (n, g)
        }
    }
}

/// Loss only, mean over the batch.
pub fn fm_loss_value<F: VectorField + ?Sized>(
    net: &F,
    batch: &[FlowSample],
    obs: &[&[f64]],
    kind: LossKind,
) -> Result<f64, FlowError> {
    check_batch(net, batch, obs)?;
    if batch.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = batch
        .iter()
        .zip(obs)
        .map(|(s, o)| sample_loss(&net.eval(&s.a_tau, s.tau, o), &s.u_target, kind).0)
        .sum();
    Ok(total / batch.len() as f64)
}

/// Mean loss over the batch and its gradient by backpropagation through the network.
pub fn fm_loss<F: Trainable + ?Sized>(
    net: &F,
    batch: &[FlowSample],
    obs: &[&[f64]],
    kind: LossKind,
) -> Result<LossEval, FlowError> {
    check_batch(net, batch, obs)?;
    let mut grad = vec![0.0; net.params().len()];
    if batch.is_empty() {
        return Ok(LossEval { loss: 0.0, grad });
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for (s, o) in batch.iter().zip(obs) {
        let v = net.eval(&s.a_tau, s.tau, o);
        let (l, dv) = sample_loss(&v, &s.u_target, kind);
        loss += l;
        let cot: Vec<f64> = dv.iter().map(|d| d * scale).collect();
        for (g, x) in grad.iter_mut().zip(net.vjp(&s.a_tau, s.tau, o, &cot)) {
            *g += x;
        }
    }
    Ok(LossEval {
        loss: loss * scale,
        grad,
    })
}

// ---------------------------------------------------------------------------
// Sampling

/// Number of Euler steps for `delta`, or an error unless `1/delta` is an integer.
pub fn euler_steps(delta: f64) -> Result<usize, FlowError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(FlowError::InvalidStep(delta));
    }
    let n = (1.0 / delta).round();
    if ((n * delta) - 1.0).abs() > 1e-9 {
        return Err(FlowError::InvalidStep(delta));
    }
    Ok(n as usize)
}

/// Integrate `dA/dτ = v(A, τ, obs)` from `a0` at τ = 0 to τ = 1, with `τ_k = k·δ`.
pub fn euler_integrate<F: VectorField + ?Sized>(
    field: &F,
    obs: &[f64],
    a0: Vec<f64>,
    delta: f64,
) -> Result<Vec<f64>, FlowError> {
    let steps = euler_steps(delta)?;
    if a0.len() != field.action_dim() {
        return Err(FlowError::ShapeMismatch {
            what: "initial state",
            expected: field.action_dim(),
            found: a0.len(),
        });
    }
    let mut a = a0;
    for k in 0..steps {
        let tau = k as f64 * delta;
        let v = field.eval(&a, tau, obs);
        for (x, d) in a.iter_mut().zip(&v) {
            *x += delta * d;
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(FlowError::NonFiniteState { step: k + 1 });
        }
    }
    Ok(a)
}

/// Draw `A⁰ ~ N(0, I)` and integrate to τ = 1.
pub fn euler_sample<F: VectorField + ?Sized>(
    field: &F,
    obs: &[f64],
    delta: f64,
    rng: &mut impl Rng,
) -> Result<Vec<f64>, FlowError> {
    euler_steps(delta)?;
    let a0 = standard_normal(field.action_dim(), rng);
    euler_integrate(field, obs, a0, delta)
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    /// Decoupled weight decay (AdamW).
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip.
    pub max_norm: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Euler step used when sampling from the trained field.
    pub delta: f64,
    pub loss: LossKind,
    /// Multiply the learning rate by `decay_factor` from this epoch on.
    pub decay_epoch: Option<usize>,
    pub decay_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_norm: 1.0,
            epochs: 100,
            seed: 0,
            delta: 0.1,
            loss: LossKind::Squared,
            decay_epoch: None,
            decay_factor: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::InvalidConfig(m.into()));
        euler_steps(self.delta)?;
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and ≥ 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if !(self.max_norm > 0.0) {
            return bad("max_norm must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be ≥ 0");
        }
        Ok(())
    }

    fn lr_at(&self, epoch: usize) -> f64 {
        match self.decay_epoch {
            Some(e) if epoch >= e => self.lr * self.decay_factor,
            _ => self.lr,
        }
    }
}

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * (mh / (vh.sqrt() + cfg.adam_eps) + cfg.weight_decay * params[i]);
        }
    }
}

/// Scale `grad` to global norm `max_norm` if it is longer; returns the norm before.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if n > max_norm {
        let s = max_norm / n;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    n
}

/// An (observation, flattened chunk) training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub obs: Vec<f64>,
    pub chunk: Vec<f64>,
}

/// Fixed path draws over a dataset, so losses are comparable across epochs.
pub fn fixed_samples(data: &[Example], seed: u64) -> Vec<FlowSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    data.iter()
        .map(|ex| {
            let tau = rng.random_range(0.0..=1.0);
            let eps = standard_normal(ex.chunk.len(), &mut rng);
            FlowSample::new(&ex.chunk, eps, tau).expect("tau in range")
        })
        .collect()
}

/// Loss of `net` on `data` under the fixed draw for `seed`.
pub fn evaluate<F: VectorField + ?Sized>(
    net: &F,
    data: &[Example],
    seed: u64,
    kind: LossKind,
) -> Result<f64, FlowError> {
    let samples = fixed_samples(data, seed);
    let obs: Vec<&[f64]> = data.iter().map(|e| e.obs.as_slice()).collect();
    fm_loss_value(net, &samples, &obs, kind)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Loss on a fixed draw over the training set; entry 0 is before training, entry
    /// `e` after epoch `e`.
    pub loss_curve: Vec<f64>,
    /// Mean minibatch loss of each epoch, on the noise actually used for updates.
    pub minibatch_loss: Vec<f64>,
    pub clipped_steps: usize,
    pub steps: usize,
}

impl TrainReport {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in self.loss_curve.iter().enumerate() {
            s.push_str(&format!("{e},{l}\n"));
        }
        s
    }
}

/// Minibatch AdamW on the flow-matching loss. τ is uniform on [0, 1]; every item draws
/// fresh noise each epoch. Deterministic given `cfg.seed`.
pub fn train<F: Trainable + ?Sized>(
    net: &mut F,
    data: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainReport, FlowError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(FlowError::EmptyDataset);
    }
    for ex in data {
        if ex.chunk.len() != net.action_dim() || ex.obs.len() != net.obs_dim() {
            return Err(FlowError::ShapeMismatch {
                what: "training example",
                expected: net.action_dim() + net.obs_dim(),
                found: ex.chunk.len() + ex.obs.len(),
            });
        }
    }
    let probe_seed = cfg.seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(net.params().len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        loss_curve: vec![evaluate(net, data, probe_seed, cfg.loss)?],
        minibatch_loss: Vec::new(),
        clipped_steps: 0,
        steps: 0,
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let mut samples = Vec::with_capacity(idx.len());
            for &i in idx {
                let tau = rng.random_range(0.0..=1.0);
                samples.push(sample_path(&data[i].chunk, tau, &mut rng)?);
            }
            let obs: Vec<&[f64]> = idx.iter().map(|&i| data[i].obs.as_slice()).collect();
            let mut ev = fm_loss(net, &samples, &obs, cfg.loss)?;
            if !ev.loss.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) {
                return Err(FlowError::NonFiniteTraining("gradient"));
            }
            if clip_grad_norm(&mut ev.grad, cfg.max_norm) > cfg.max_norm {
                report.clipped_steps += 1;
            }
            if lr > 0.0 {
                opt.step(net.params_mut(), &ev.grad, lr, cfg);
            }
            report.steps += 1;
            epoch_loss += ev.loss;
            batches += 1;
        }
        report.minibatch_loss.push(epoch_loss / batches as f64);
        report.loss_curve.push(evaluate(net, data, probe_seed, cfg.loss)?);
    }
    if net.params().iter().any(|p| !p.is_finite()) {
        return Err(FlowError::NonFiniteTraining("weights"));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then the weights as little-endian f32

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub action_dim: usize,
    pub obs_dim: usize,
    pub sizes: Vec<usize>,
    pub param_count: usize,
    pub seed: u64,
    pub config: TrainConfig,
}

const CHECKPOINT_FORMAT: &str = "dexforge-mlp";

pub fn checkpoint_bytes(net: &Mlp, cfg: &TrainConfig) -> Vec<u8> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        action_dim: net.action_dim,
        obs_dim: net.obs_dim,
        sizes: net.sizes.clone(),
        param_count: net.params.len(),
        seed: cfg.seed,
        config: cfg.clone(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for p in &net.params {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(Mlp, CheckpointHeader), String> {
    let nl = bytes.iter().position(|b| *b == b'\n').ok_or("missing header line")?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| format!("header: {e}"))?;
    if header.format != CHECKPOINT_FORMAT || header.version != 1 {
        return Err(format!("unsupported format {} v{}", header.format, header.version));
    }
    if header.sizes.len() < 2
        || header.sizes[0] != header.action_dim + 1 + header.obs_dim
        || *header.sizes.last().unwrap() != header.action_dim
        || Mlp::param_count(&header.sizes) != header.param_count
    {
        return Err("inconsistent layer sizes".into());
    }
    let blob = &bytes[nl + 1..];
    if blob.len() != header.param_count * 4 {
        return Err(format!(
            "weight blob is {} bytes, expected {}",
            blob.len(),
            header.param_count * 4
        ));
    }
    let params = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let net = Mlp {
        action_dim: header.action_dim,
        obs_dim: header.obs_dim,
        sizes: header.sizes.clone(),
        params,
    };
    Ok((net, header))
}

pub fn save_checkpoint(net: &Mlp, cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<(), FlowError> {
    let path = path.as_ref();
    let err = |e: std::io::Error| FlowError::Checkpoint {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut f = std::fs::File::create(path).map_err(err)?;
    f.write_all(&checkpoint_bytes(net, cfg)).map_err(err)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Mlp, CheckpointHeader), FlowError> {
    let path = path.as_ref();
    let err = |message: String| FlowError::Checkpoint {
        path: path.display().to_string(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
    parse_checkpoint(&bytes).map_err(err)
}

// ---------------------------------------------------------------------------
// Toy reaching task

/// Synthetic 2-d reaching: the observation is a target point in the plane, the chunk is
/// the right-wrist straight-line path from the start toward the target over `horizon`
/// steps, in relative FAAS wrist coordinates. Only the populated wrist coordinates
/// (9 per step) are learned.
pub mod toy {
    use super::Example;
    use crate::faas::{relative_chunk, FaasVector};
    use crate::handmodel::Side;
    use crate::pose::Pose;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const DEFAULT_HORIZON: usize = 4;

    /// Populated coordinates of a relative chunk reaching for `target`.
    pub fn reaching_chunk(target: [f64; 2], horizon: usize) -> Vec<f64> {
        let abs: Vec<FaasVector> = (0..horizon)
            .map(|k| {
                let s = (k + 1) as f64 / horizon as f64;
                let mut v = FaasVector::empty();
                let p = Pose::from_translation(Vector3::new(s * target[0], s * target[1], 0.0));
                v.set_wrist(Side::Right, &p).expect("valid pose");
                v
            })
            .collect();
        let chunk = relative_chunk(&abs).expect("shared mask");
        chunk
            .actions
            .iter()
            .flat_map(|a| {
                (0..crate::faas::FAAS_DIM)
                    .filter(|&i| a.mask.get(i))
                    .map(|i| a.values[i])
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn dataset(n: usize, horizon: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let t = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                Example {
                    obs: t.to_vec(),
                    chunk: reaching_chunk(t, horizon),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero(usize);

    impl VectorField for Zero {
        fn action_dim(&self) -> usize {
            self.0
        }
        fn obs_dim(&self) -> usize {
            0
        }
        fn eval(&self, _: &[f64], _: f64, _: &[f64]) -> Vec<f64> {
            vec![0.0; self.0]
        }
    }

    #[test]
    fn path_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = [1.0, -2.0, 3.0];
        let s1 = sample_path(&a, 1.0, &mut rng).unwrap();
        assert_eq!(s1.a_tau, a.to_vec());
        let s0 = sample_path(&a, 0.0, &mut rng).unwrap();
        assert_eq!(s0.a_tau, s0.eps);
        assert!(sample_path(&a, 1.5, &mut rng).is_err());
    }

    #[test]
    fn zero_net_loss_by_hand() {
        // three samples, fixed noise: loss = mean ‖A − ε‖²
        let batch = vec![
            FlowSample::new(&[1.0, 0.0], vec![0.0, 1.0], 0.3).unwrap(),
            FlowSample::new(&[2.0, 2.0], vec![1.0, 1.0], 0.5).unwrap(),
            FlowSample::new(&[0.0, 0.0], vec![-1.0, 2.0], 0.9).unwrap(),
        ];
        let obs: Vec<&[f64]> = vec![&[]; 3];
        // ‖(1,−1)‖² = 2, ‖(1,1)‖² = 2, ‖(1,−2)‖² = 5
        let l = fm_loss_value(&Zero(2), &batch, &obs, LossKind::Squared).unwrap();
        assert_eq!(l, 3.0);
        let n = fm_loss_value(&Zero(2), &batch, &obs, LossKind::Norm).unwrap();
        assert!((n - (2f64.sqrt() * 2.0 + 5f64.sqrt()) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn euler_step_validation() {
        assert_eq!(euler_steps(0.1).unwrap(), 10);
        assert_eq!(euler_steps(1.0).unwrap(), 1);
        assert!(euler_steps(0.3).is_err());
        assert!(euler_steps(0.0).is_err());
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut h = vec![0.3, 0.4];
        clip_grad_norm(&mut h, 1.0);
        assert_eq!(h, vec![0.3, 0.4]);
    }

    #[test]
    fn checkpoint_round_trip_is_f32() {
        let net = Mlp::new(3, 2, &[5], 4);
        let cfg = TrainConfig::default();
        let (back, header) = parse_checkpoint(&checkpoint_bytes(&net, &cfg)).unwrap();
        assert_eq!(header.sizes, vec![6, 5, 3]);
        for (a, b) in net.params.iter().zip(&back.params) {
            assert_eq!(*a as f32 as f64, *b);
        }
        let bytes = checkpoint_bytes(&net, &cfg);
        assert!(parse_checkpoint(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn toy_chunk_shape() {
        let c = toy::reaching_chunk([0.4, -0.2], 4);
        assert_eq!(c.len(), 36);
        // first step relative to itself: identity rotation, zero translation
        assert_eq!(&c[..9], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((c[27 + 6] - 0.3).abs() < 1e-15);
    }
}
