//! Training loop: Adam over two parameter blocks (encoder and proxy bank),
//! deterministic epoch shuffling, and batch-mean gradients.
//!
//! Determinism contract: a fixed (dataset, config) pair trains to
//! bit-identical parameters every time. All randomness flows from the config
//! seed through fixed derivation tags, and the shuffle of each epoch is a
//! pure function of (seed, epoch).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::MlpEncoder;
use crate::inference::classify;
use crate::labels::{augment, compute_class_weights, AugmentedLabels, ClassWeights};
use crate::losses::{ml_proxy_nca_loss, multilabel_proxy_loss, weighted_bce_loss};
use crate::numerics::l2_normalize;
use crate::proxies::ProxyBank;
use crate::synth::Dataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Weighted multi-proxy loss, the main method.
    Proxy,
    /// Single-proxy NCA ratio baseline.
    MlProxyNca,
    /// Weighted BCE classification head baseline.
    Bce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub sigma: f64,
    pub proxies_per_class: usize,
    pub use_negative_class: bool,
    pub loss: LossKind,
    /// Hidden layer widths; the last entry is the embedding dimension.
    pub hidden_dims: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-4,
            batch_size: 48,
            sigma: 0.7,
            proxies_per_class: 2,
            use_negative_class: true,
            loss: LossKind::Proxy,
            hidden_dims: vec![64],
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return bad("sigma must be positive".into());
        }
        if self.proxies_per_class == 0 {
            return bad("proxies_per_class must be at least 1".into());
        }
        if self.loss == LossKind::MlProxyNca && self.proxies_per_class != 1 {
            return bad(format!(
                "the NCA baseline uses one proxy per class, got proxies_per_class={}",
                self.proxies_per_class
            ));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad("hidden_dims must be non-empty with positive widths".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return bad(format!("{name} must lie in [0, 1)"));
            }
        }
        if !(self.adam_epsilon.is_finite() && self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive".into());
        }
        Ok(())
    }

    pub fn c_total(&self, n_classes: usize) -> usize {
        n_classes + usize::from(self.use_negative_class)
    }
}

/// Adam hyperparameters shared by both parameter blocks.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// First and second moment estimates for one parameter block.
#[derive(Debug, Clone)]
pub struct AdamState {
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, hyper: &AdamHyper) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let bias1 = 1.0 - hyper.beta1.powi(state.t as i32);
    let bias2 = 1.0 - hyper.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        params[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

const SEED_ENCODER: u64 = 1;
const SEED_PROXIES: u64 = 2;
const SEED_SHUFFLE: u64 = 3;

/// The sample visit order of one epoch: a pure function of (seed, epoch).
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(derive_seed(seed, SEED_SHUFFLE), epoch));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// A trained encoder with everything needed for inference and persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub encoder: MlpEncoder,
    /// Absent for the BCE baseline, which learns no proxies.
    pub bank: Option<ProxyBank>,
    pub weights: ClassWeights,
    pub config: TrainConfig,
    pub n_classes: usize,
    /// Per-class decision thresholds; `None` means 0.5 everywhere.
    pub thresholds: Option<Vec<f64>>,
    pub loss_curve: Vec<f64>,
}

impl TrainedModel {
    pub fn c_total(&self) -> usize {
        self.config.c_total(self.n_classes)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Width of the vectors `embed` produces.
    pub fn embedding_dim(&self) -> usize {
        let dims = self.encoder.layer_dims();
        match self.config.loss {
            LossKind::Bce => dims[dims.len() - 2],
            _ => dims[dims.len() - 1],
        }
    }

    pub fn bank(&self) -> Result<&ProxyBank> {
        self.bank
            .as_ref()
            .ok_or_else(|| Error::ShapeMismatch("model has no proxy bank".into()))
    }

    /// Unit-norm embedding of a feature vector. Proxy models embed with the
    /// network output; the BCE baseline bypasses its classification head and
    /// uses the last hidden activation.
    pub fn embed(&self, features: &[f64]) -> Result<Vec<f64>> {
        let trace = self.encoder.forward(features)?;
        let raw = match self.config.loss {
            LossKind::Bce => trace.penultimate(),
            _ => trace.output(),
        };
        Ok(l2_normalize(raw)?.0)
    }

    /// Per-class scores in [0, 1]: proxy similarity for proxy models,
    /// sigmoid of the head logits for the BCE baseline.
    pub fn class_scores(&self, features: &[f64]) -> Result<Vec<f64>> {
        match self.config.loss {
            LossKind::Bce => {
                let trace = self.encoder.forward(features)?;
                Ok(trace
                    .output()
                    .iter()
                    .map(|z| {
                        if *z >= 0.0 {
                            1.0 / (1.0 + (-z).exp())
                        } else {
                            let e = z.exp();
                            e / (1.0 + e)
                        }
                    })
                    .collect())
            }
            _ => {
                let v = self.embed(features)?;
                classify(&v, self.bank()?)
            }
        }
    }
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    train_with_progress(dataset, config, |_, _| {})
}

/// Trains and reports the mean per-sample loss after each epoch.
pub fn train_with_progress(
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedModel> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    dataset.validate()?;

    let n = dataset.len();
    let c_total = config.c_total(dataset.n_classes);
    let augmented: Vec<AugmentedLabels> = dataset
        .samples
        .iter()
        .map(|s| augment(&s.labels, config.use_negative_class))
        .collect();
    let weights = compute_class_weights(&augmented)?;

    let mut dims = Vec::with_capacity(config.hidden_dims.len() + 2);
    dims.push(dataset.input_dim);
    dims.extend_from_slice(&config.hidden_dims);
    let is_bce = config.loss == LossKind::Bce;
    if is_bce {
        dims.push(c_total);
    }
    // The BCE baseline is a linear head on the unchanged encoder, so the
    // layer under the head keeps its linear output.
    let tail = if is_bce { 2 } else { 1 };
    let mut encoder =
        MlpEncoder::init_with_linear_tail(&dims, tail, derive_seed(config.seed, SEED_ENCODER))?;
    let mut bank = if is_bce {
        None
    } else {
        Some(ProxyBank::new_random(
            config.proxies_per_class,
            c_total,
            *dims.last().expect("dims non-empty"),
            config.sigma,
            derive_seed(config.seed, SEED_PROXIES),
        )?)
    };

    let hyper = AdamHyper {
        learning_rate: config.learning_rate,
        beta1: config.beta1,
        beta2: config.beta2,
        epsilon: config.adam_epsilon,
    };
    let mut encoder_state = AdamState::new(encoder.params().len());
    let mut bank_state = bank.as_ref().map(|b| AdamState::new(b.params().len()));

    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut encoder_grads = vec![0.0; encoder.params().len()];
    let mut bank_grads = bank.as_ref().map(|b| vec![0.0; b.params().len()]);

    for epoch in 0..config.epochs {
        let order = epoch_order(config.seed, epoch as u64, n);
        let mut epoch_loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            encoder_grads.iter_mut().for_each(|g| *g = 0.0);
            if let Some(g) = bank_grads.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
            let mut batch_loss_sum = 0.0;

            for &idx in batch {
                let sample = &dataset.samples[idx];
                let trace = encoder.forward(&sample.features)?;
                match config.loss {
                    LossKind::Proxy | LossKind::MlProxyNca => {
                        let b = bank.as_ref().expect("proxy losses carry a bank");
                        let (v_unit, v_norm) = l2_normalize(trace.output())?;
                        let out = match config.loss {
                            LossKind::Proxy => {
                                multilabel_proxy_loss(&v_unit, &augmented[idx], &weights, b)?
                            }
                            _ => ml_proxy_nca_loss(&v_unit, &augmented[idx], b)?,
                        };
                        batch_loss_sum += out.value;
                        // Route the unit-embedding gradient through the
                        // normalization Jacobian before backprop.
                        let g = &out.grad_embedding;
                        let dot: f64 = g.iter().zip(&v_unit).map(|(a, b)| a * b).sum();
                        let grad_raw: Vec<f64> = g
                            .iter()
                            .zip(&v_unit)
                            .map(|(gi, ui)| (gi - dot * ui) / v_norm)
                            .collect();
                        let eg = encoder.backward(&trace, &grad_raw)?;
                        for (acc, gi) in encoder_grads.iter_mut().zip(&eg.params) {
                            *acc += gi;
                        }
                        let acc = bank_grads.as_mut().expect("proxy losses carry a bank");
                        for (a, gi) in acc.iter_mut().zip(&out.grad_proxies) {
                            *a += gi;
                        }
                    }
                    LossKind::Bce => {
                        let out = weighted_bce_loss(trace.output(), &augmented[idx], &weights)?;
                        batch_loss_sum += out.value;
                        let eg = encoder.backward(&trace, &out.grad_logits)?;
                        for (acc, gi) in encoder_grads.iter_mut().zip(&eg.params) {
                            *acc += gi;
                        }
                    }
                }
            }

            let inv = 1.0 / batch.len() as f64;
            encoder_grads.iter_mut().for_each(|g| *g *= inv);
            adam_step(
                encoder.params_mut(),
                &encoder_grads,
                &mut encoder_state,
                &hyper,
            );
            if let (Some(b), Some(acc), Some(st)) =
                (bank.as_mut(), bank_grads.as_mut(), bank_state.as_mut())
            {
                acc.iter_mut().for_each(|g| *g *= inv);
                adam_step(b.params_mut(), acc, st, &hyper);
            }
            epoch_loss_sum += batch_loss_sum;
        }
        let mean_loss = epoch_loss_sum / n as f64;
        loss_curve.push(mean_loss);
        on_epoch(epoch, mean_loss);
    }

    Ok(TrainedModel {
        encoder,
        bank,
        weights,
        config: config.clone(),
        n_classes: dataset.n_classes,
        thresholds: None,
        loss_curve,
    })
}
