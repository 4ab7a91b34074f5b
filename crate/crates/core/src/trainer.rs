//! Encoder / channel / decoder autoencoder and its training loop.
//!
//! The encoder maps each of the M one-hot inputs through a small ReLU
//! network to one complex symbol. A batch is normalized to unit mean power,
//! passed through the differentiable channel surrogate (noise standard
//! deviation computed in-graph from the batch moments and the launch power)
//! and classified by the decoder. The loss is the mean cross-entropy.

use std::io::Write;

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{glorot_uniform, Adam, Gradients, ParamId, ParamStore, Tape, Tensor, Var};
use crate::channel::{standard_complex_noise, ChannelModel, ModelKind};
use crate::constellation::Constellation;
use crate::error::{Error, Result};

/// Launch powers beyond this magnitude (dBm) abort joint-power training.
pub const MAX_ABS_POWER_DBM: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Constellation order M.
    pub order: usize,
    /// Hidden layers in each of encoder and decoder (1 or 2).
    pub layers: usize,
    pub hidden_units: usize,
    pub learning_rate: f64,
    /// Learning rate of the launch-power parameter (dB per step scale).
    /// `None` uses `learning_rate`.
    pub power_learning_rate: Option<f64>,
    /// `(first_iteration, multiple)`: from `first_iteration` on, each batch
    /// holds every label exactly `multiple` times.
    pub batch_schedule: Vec<(usize, usize)>,
    pub max_iterations: usize,
    /// Early stop once the mean loss of the last `plateau_window` iterations
    /// differs from the window before by less than `plateau_tolerance`
    /// (relative). Zero disables.
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    pub seed: u64,
    pub channel: ChannelModel,
    pub train_launch_power: bool,
    /// Starting launch power; `None` uses `channel.launch_power_dbm`.
    pub initial_launch_power_dbm: Option<f64>,
    /// Ablation: feed the batch moments to the channel as constants so no
    /// gradient flows from the nonlinear variance back to the encoder.
    pub detach_moments: bool,
}

impl TrainConfig {
    pub fn new(order: usize, channel: ChannelModel) -> Self {
        Self {
            order,
            layers: 1,
            hidden_units: 32,
            learning_rate: 0.001,
            power_learning_rate: None,
            batch_schedule: vec![(0, 8), (100, 2048)],
            max_iterations: 10_000,
            plateau_window: 1_000,
            plateau_tolerance: 1e-3,
            seed: 0,
            channel,
            train_launch_power: false,
            initial_launch_power_dbm: None,
            detach_moments: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.order < 2 {
            return bad(format!("order must be at least 2, got {}", self.order));
        }
        if !(1..=2).contains(&self.layers) {
            return bad(format!("layers must be 1 or 2, got {}", self.layers));
        }
        if self.hidden_units == 0 {
            return bad("hidden_units must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if let Some(lr) = self.power_learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("power_learning_rate must be positive, got {lr}"));
            }
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        match self.batch_schedule.first() {
            None => return bad("batch_schedule is empty".into()),
            Some(&(start, _)) if start != 0 => {
                return bad(format!("batch_schedule must start at iteration 0, starts at {start}"))
            }
            _ => {}
        }
        if self.batch_schedule.iter().any(|&(_, m)| m == 0) {
            return bad("batch multiples must be positive".into());
        }
        if self.batch_schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("batch_schedule thresholds must be strictly increasing".into());
        }
        if self.plateau_window > 0 && !(self.plateau_tolerance >= 0.0) {
            return bad("plateau_tolerance must be non-negative".into());
        }
        if let Some(p) = self.initial_launch_power_dbm {
            if !p.is_finite() || p.abs() > MAX_ABS_POWER_DBM {
                return bad(format!("initial launch power {p} dBm is out of range"));
            }
        }
        self.channel.validate()
    }

    pub fn batch_multiple(&self, iteration: usize) -> usize {
        self.batch_schedule
            .iter()
            .take_while(|&&(start, _)| start <= iteration)
            .last()
            .map_or(self.batch_schedule[0].1, |&(_, m)| m)
    }

    /// First iteration of the last batch-size stage.
    pub fn final_stage_start(&self) -> usize {
        self.batch_schedule.last().map_or(0, |&(s, _)| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub loss: f64,
    pub mu4: f64,
    pub mu6: f64,
    pub power_dbm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub constellation: Constellation,
    pub trace: Vec<TracePoint>,
    pub final_launch_power_dbm: f64,
    pub stopped_early: bool,
    pub parameter_count: usize,
}

impl TrainResult {
    /// Mean loss over the last `n` iterations (or fewer if the trace is shorter).
    pub fn tail_loss(&self, n: usize) -> f64 {
        let tail = &self.trace[self.trace.len().saturating_sub(n.max(1))..];
        tail.iter().map(|t| t.loss).sum::<f64>() / tail.len() as f64
    }

    /// Mean launch power over the last `n` iterations.
    pub fn tail_power_dbm(&self, n: usize) -> f64 {
        let tail = &self.trace[self.trace.len().saturating_sub(n.max(1))..];
        tail.iter().map(|t| t.power_dbm).sum::<f64>() / tail.len() as f64
    }

    pub fn write_trace_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "loss", "mu4", "mu6", "power_dbm"])?;
        for t in &self.trace {
            w.write_record([
                t.iteration.to_string(),
                t.loss.to_string(),
                t.mu4.to_string(),
                t.mu6.to_string(),
                t.power_dbm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

/// Values produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardPass {
    pub loss: Var,
    /// Normalized transmitted batch (Bx2).
    pub symbols: Var,
    pub mu4: f64,
    pub mu6: f64,
    pub power_dbm: f64,
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    store: ParamStore,
    order: usize,
    encoder: Vec<Dense>,
    decoder: Vec<Dense>,
    power: Option<ParamId>,
    fixed_power_dbm: f64,
    channel: ChannelModel,
    detach_moments: bool,
}

pub fn build_autoencoder(cfg: &TrainConfig) -> Result<Autoencoder> {
    Autoencoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

impl Autoencoder {
    pub fn new(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let h = cfg.hidden_units;
        let mut dense = |store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize| Dense {
            weight: store.add(&format!("{name}.w"), glorot_uniform(fan_in, fan_out, rng)),
            bias: store.add(&format!("{name}.b"), Array2::zeros((1, fan_out))),
        };
        let mut encoder = vec![dense(&mut store, "enc0", cfg.order, h)];
        if cfg.layers == 2 {
            encoder.push(dense(&mut store, "enc1", h, h));
        }
        encoder.push(dense(&mut store, "enc_out", h, 2));
        let mut decoder = vec![dense(&mut store, "dec0", 2, h)];
        if cfg.layers == 2 {
            decoder.push(dense(&mut store, "dec1", h, h));
        }
        decoder.push(dense(&mut store, "dec_out", h, cfg.order));

        let initial = cfg.initial_launch_power_dbm.unwrap_or(cfg.channel.launch_power_dbm);
        let power = cfg
            .train_launch_power
            .then(|| store.add("launch_power_dbm", Array2::from_elem((1, 1), initial)));
        Ok(Self {
            store,
            order: cfg.order,
            encoder,
            decoder,
            power,
            fixed_power_dbm: initial,
            channel: cfg.channel.clone(),
            detach_moments: cfg.detach_moments,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn power_param(&self) -> Option<ParamId> {
        self.power
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn launch_power_dbm(&self) -> f64 {
        self.power.map_or(self.fixed_power_dbm, |id| self.store.get(id)[[0, 0]])
    }

    /// Applies `layers`; with `input = None` the input is the full set of M
    /// one-hot vectors, whose product with the first weight matrix is that
    /// matrix itself.
    fn dense_stack(&self, tape: &mut Tape, input: Option<Var>, layers: &[Dense]) -> Result<Var> {
        let mut x = input;
        for (i, layer) in layers.iter().enumerate() {
            let w = tape.param(&self.store, layer.weight);
            let b = tape.param(&self.store, layer.bias);
            let z = match x {
                Some(x) => tape.matmul(x, w)?,
                None => w,
            };
            let mut z = tape.add_bias(z, b)?;
            if i + 1 < layers.len() {
                z = tape.relu(z)?;
            }
            x = Some(z);
        }
        Ok(x.expect("at least one layer"))
    }

    /// Unnormalized encoder outputs for labels 0..M (Mx2).
    fn encode_all(&self, tape: &mut Tape) -> Result<Var> {
        self.dense_stack(tape, None, &self.encoder)
    }

    /// Records the full encoder / channel / decoder loss for one batch.
    /// `noise` holds standard complex draws as a Bx2 tensor of (re, im).
    pub fn forward(&self, tape: &mut Tape, labels: &[usize], noise: &Tensor) -> Result<ForwardPass> {
        if noise.dim() != (labels.len(), 2) {
            return Err(Error::ShapeMismatch {
                op: "autoencoder_forward",
                detail: format!("{} labels but noise is {}x{}", labels.len(), noise.nrows(), noise.ncols()),
            });
        }
        let all = self.encode_all(tape)?;
        let batch = tape.gather_rows(all, labels)?;
        let x = tape.power_normalize(batch)?;

        let powers = tape.complex_modulus_powers(x)?;
        let means = tape.mean_rows(powers)?;
        let m2 = tape.column(means, 0)?;
        let m4 = tape.column(means, 1)?;
        let m6 = tape.column(means, 2)?;
        let m2_sq = tape.square(m2)?;
        let m2_cu = tape.powi(m2, 3)?;
        let mut mu4 = tape.div(m4, m2_sq)?;
        let mut mu6 = tape.div(m6, m2_cu)?;
        let (mu4_v, mu6_v) = (tape.scalar_value(mu4), tape.scalar_value(mu6));
        if self.detach_moments {
            mu4 = tape.scalar(mu4_v)?;
            mu6 = tape.scalar(mu6_v)?;
        }

        let (p_mw, power_dbm) = match self.power {
            Some(id) => {
                let p_dbm = tape.param(&self.store, id);
                let ln = tape.scale(p_dbm, std::f64::consts::LN_10 / 10.0)?;
                (tape.exp(ln)?, self.store.get(id)[[0, 0]])
            }
            None => (tape.scalar(crate::channel::dbm_to_mw(self.fixed_power_dbm))?, self.fixed_power_dbm),
        };

        let coeffs = self.channel.effective_coeffs();
        let factor = match self.channel.kind {
            ModelKind::Gn => tape.scalar(coeffs.kappa0)?,
            ModelKind::Nlin => {
                let d4 = tape.add_const(mu4, -2.0)?;
                let d4 = tape.scale(d4, coeffs.kappa1)?;
                let d6 = tape.add_const(mu6, -6.0)?;
                let d6 = tape.scale(d6, coeffs.kappa2)?;
                let sum = tape.add(d4, d6)?;
                tape.add_const(sum, coeffs.kappa0)?
            }
        };
        let p3 = tape.powi(p_mw, 3)?;
        let nl = tape.mul(p3, factor)?;
        let nl = tape.clamp_min(nl, self.channel.variance_floor_mw)?;
        let total = tape.add_const(nl, self.channel.sigma2_ase_mw)?;
        let relative = tape.div(total, p_mw)?;
        let relative = tape.add_const(relative, self.channel.tx_relative_variance())?;
        let sigma = tape.sqrt(relative)?;

        let eps = tape.constant(noise.clone())?;
        let n = tape.mul_scalar(eps, sigma)?;
        let y = tape.add(x, n)?;
        let logits = self.dense_stack(tape, Some(y), &self.decoder)?;
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        Ok(ForwardPass {
            loss,
            symbols: x,
            mu4: mu4_v,
            mu6: mu6_v,
            power_dbm,
        })
    }

    /// Loss and gradients for one batch.
    pub fn loss_and_gradients(&self, labels: &[usize], noise: &Tensor) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, labels, noise)?;
        let grads = tape.backward(pass.loss, &self.store)?;
        Ok((tape.scalar_value(pass.loss), grads))
    }

    /// The learned constellation: encoder outputs for the M one-hot inputs,
    /// normalized to unit mean power.
    pub fn constellation(&self) -> Result<Constellation> {
        let mut tape = Tape::new();
        let all = self.encode_all(&mut tape)?;
        let v = tape.value(all);
        let points = v.rows().into_iter().map(|r| Complex64::new(r[0], r[1])).collect();
        Constellation::new(points)?.normalized()
    }
}

/// Every label exactly `multiple` times.
pub fn stratified_labels(order: usize, multiple: usize) -> Vec<usize> {
    (0..order * multiple).map(|i| i % order).collect()
}

fn noise_tensor(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let draws = standard_complex_noise(n, rng);
    Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { draws[i].re } else { draws[i].im })
}

pub fn train(cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Autoencoder::new(cfg, &mut rng)?;
    let mut adam = Adam::new(model.store(), cfg.learning_rate);
    if let (Some(id), Some(lr)) = (model.power_param(), cfg.power_learning_rate) {
        adam.set_learning_rate(id, lr);
    }

    let mut trace: Vec<TracePoint> = Vec::with_capacity(cfg.max_iterations);
    let mut stopped_early = false;
    let final_stage = cfg.final_stage_start();
    for iteration in 0..cfg.max_iterations {
        let labels = stratified_labels(cfg.order, cfg.batch_multiple(iteration));
        let noise = noise_tensor(labels.len(), &mut rng);
        let last_finite_loss = trace.last().map(|t| t.loss);
        let diverged = |reason: String| Error::Diverged {
            iteration,
            reason,
            last_finite_loss,
        };

        let mut tape = Tape::new();
        let pass = model
            .forward(&mut tape, &labels, &noise)
            .map_err(|e| diverged(format!("forward pass failed: {e}")))?;
        let loss = tape.scalar_value(pass.loss);
        if !loss.is_finite() {
            return Err(diverged(format!("loss is {loss}")));
        }
        let grads = tape
            .backward(pass.loss, model.store())
            .map_err(|e| diverged(format!("backward pass failed: {e}")))?;
        trace.push(TracePoint {
            iteration,
            loss,
            mu4: pass.mu4,
            mu6: pass.mu6,
            power_dbm: pass.power_dbm,
        });
        adam.step(model.store_mut(), &grads)?;

        let power = model.launch_power_dbm();
        if !power.is_finite() || power.abs() > MAX_ABS_POWER_DBM {
            return Err(diverged(format!(
                "launch power {power} dBm left the range of +-{MAX_ABS_POWER_DBM} dBm"
            )));
        }

        let w = cfg.plateau_window;
        if w > 0 && iteration + 1 >= final_stage + 2 * w {
            let n = trace.len();
            let mean = |s: &[TracePoint], f: fn(&TracePoint) -> f64| s.iter().map(f).sum::<f64>() / s.len() as f64;
            let recent = &trace[n - w..];
            let before = &trace[n - 2 * w..n - w];
            let (lr, lb) = (mean(recent, |t| t.loss), mean(before, |t| t.loss));
            let loss_flat = (lr - lb).abs() <= cfg.plateau_tolerance * lb.abs();
            let power_flat = model.power_param().is_none()
                || (mean(recent, |t| t.power_dbm) - mean(before, |t| t.power_dbm)).abs() < 0.01;
            if loss_flat && power_flat {
                stopped_early = true;
                break;
            }
        }
    }

    let final_power = model.launch_power_dbm();
    let constellation = model
        .constellation()?
        .with_metadata("kind", "learned")
        .with_metadata("model", cfg.channel.kind.to_string())
        .with_metadata("launch_power_dbm", final_power)
        .with_metadata("seed", cfg.seed)
        .with_metadata("iterations", trace.len());
    Ok(TrainResult {
        constellation,
        trace,
        final_launch_power_dbm: final_power,
        stopped_early,
        parameter_count: model.parameter_count(),
    })
}

/// Trains with the launch power as an additional trainable parameter.
pub fn train_joint_power(cfg: &TrainConfig) -> Result<TrainResult> {
    let cfg = TrainConfig {
        train_launch_power: true,
        ..cfg.clone()
    };
    train(&cfg)
}
