//! Deterministic seeded training: SGD/Adam over flat parameter vectors,
//! multi-task losses and LHUC speaker adaptation.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::model::{ForwardCache, HeadKind, MlpModel, Mode};
use crate::error::{Error, Result};
use crate::mdn::{
    self, MdnConfig, MtlComponents, MtlWeights, PointEstimate,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

/// Optimization settings. `learning_rate = 0` and `epochs = 0` are legal
/// explicit no-ops (useful as controlled limits in tests).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub gradient_clip_norm: Option<f64>,
    /// Gaussian jitter added to the input features each time an utterance
    /// is visited, as data augmentation; 0 disables.
    pub input_noise_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 20,
            seed: 0,
            gradient_clip_norm: None,
            input_noise_std: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.gradient_clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("gradient_clip_norm must be positive".into()));
            }
        }
        if !self.input_noise_std.is_finite() || self.input_noise_std < 0.0 {
            return Err(Error::Config(format!(
                "input_noise_std must be non-negative, got {}",
                self.input_noise_std
            )));
        }
        Ok(())
    }
}

/// One training utterance. Batches are formed over whole utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub features: Array2<f64>,
    pub aux: Option<Array2<f64>>,
    pub targets: Option<Array2<f64>>,
    pub labels: Option<Vec<usize>>,
}

impl TrainItem {
    pub fn new(features: Array2<f64>) -> Self {
        TrainItem {
            features,
            aux: None,
            targets: None,
            labels: None,
        }
    }
}

/// Which objective drives training, and through which heads.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    /// Frame cross-entropy through the `ce` head.
    CrossEntropy,
    /// Mean squared error through the `regression` head.
    MeanSquared,
    /// The multi-task blend through the `mdn` head (plus `ce` when its
    /// weight is positive). The MDN NLL enters the blend as a per-frame
    /// mean so the weights stay comparable across utterance lengths.
    Mtl { mdn: MdnConfig, weights: MtlWeights },
}

/// Per-epoch mean training loss plus a final eval-mode loss over the set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

enum OptState {
    Sgd,
    Adam {
        m: Array1<f64>,
        v: Array1<f64>,
        t: u64,
    },
}

impl OptState {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        match cfg.optimizer {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam => OptState::Adam {
                m: Array1::zeros(n),
                v: Array1::zeros(n),
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut Array1<f64>, grad: &Array1<f64>, lr: f64) {
        match self {
            OptState::Sgd => {
                for (p, g) in params.iter_mut().zip(grad.iter()) {
                    *p -= lr * g;
                }
            }
            OptState::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let bc1 = 1.0 - B1.powi(*t as i32);
                let bc2 = 1.0 - B2.powi(*t as i32);
                for i in 0..params.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
                    let mh = m[i] / bc1;
                    let vh = v[i] / bc2;
                    params[i] -= lr * mh / (vh.sqrt() + EPS);
                }
            }
        }
    }
}

fn clip_grad(g: &mut Array1<f64>, clip: Option<f64>) {
    if let Some(c) = clip {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > c {
            let scale = c / norm;
            g.mapv_inplace(|v| v * scale);
        }
    }
}

fn require_labels<'a>(item: &'a TrainItem) -> Result<&'a [usize]> {
    item.labels
        .as_deref()
        .ok_or_else(|| Error::Data("training item lacks frame labels".into()))
}

fn require_targets<'a>(item: &'a TrainItem) -> Result<&'a Array2<f64>> {
    item.targets
        .as_ref()
        .ok_or_else(|| Error::Data("training item lacks targets".into()))
}

/// Forward one item and compute the loss plus pre-weighted head gradients.
/// The returned gradients already include the multi-task weights and the
/// per-frame normalization of the MDN term, so `backward` yields the exact
/// gradient of the returned scalar.
fn forward_loss(
    model: &MlpModel,
    item: &TrainItem,
    loss: &LossSpec,
    speaker: Option<&str>,
    mode: Mode,
) -> Result<(f64, BTreeMap<HeadKind, Array2<f64>>, ForwardCache)> {
    let fwd = model.forward(&item.features, item.aux.as_ref(), speaker, mode)?;
    let mut head_grads = BTreeMap::new();
    let total = match loss {
        LossSpec::CrossEntropy => {
            let out = fwd
                .heads
                .get(&HeadKind::Ce)
                .ok_or_else(|| Error::Config("cross-entropy loss needs a ce head".into()))?;
            let (l, g) = mdn::ce_loss(out, require_labels(item)?)?;
            head_grads.insert(HeadKind::Ce, g);
            l
        }
        LossSpec::MeanSquared => {
            let out = fwd.heads.get(&HeadKind::Regression).ok_or_else(|| {
                Error::Config("mean-squared loss needs a regression head".into())
            })?;
            let (l, g) = mdn::mse_loss(out, require_targets(item)?)?;
            head_grads.insert(HeadKind::Regression, g);
            l
        }
        LossSpec::Mtl { mdn: cfg, weights } => {
            weights.validate()?;
            let raw = fwd
                .heads
                .get(&HeadKind::Mdn)
                .ok_or_else(|| Error::Config("mtl loss needs an mdn head".into()))?;
            let targets = require_targets(item)?;
            let params = mdn::mdn_split(raw, cfg)?;
            let frames = item.features.nrows() as f64;
            let mut grad_raw: Array2<f64> = Array2::zeros(raw.dim());
            let mut comps = MtlComponents {
                mdn: 0.0,
                mse: 0.0,
                pearson: 0.0,
                ce: 0.0,
            };
            if weights.mdn > 0.0 {
                let (nll, g) = mdn::mdn_nll_grad(&params, targets)?;
                comps.mdn = nll / frames;
                grad_raw.zip_mut_with(&g, |acc, &gv| *acc += gv * weights.mdn / frames);
            }
            if weights.mse > 0.0 || weights.pearson > 0.0 {
                let point = mdn::mdn_point_estimate(&params, PointEstimate::MixtureMean);
                let mut g_point: Array2<f64> = Array2::zeros(point.dim());
                if weights.mse > 0.0 {
                    let (l, g) = mdn::mse_loss(&point, targets)?;
                    comps.mse = l;
                    g_point.zip_mut_with(&g, |acc, &gv| *acc += gv * weights.mse);
                }
                if weights.pearson > 0.0 {
                    let (l, g) = mdn::pearson_loss(&point, targets)?;
                    comps.pearson = l;
                    g_point.zip_mut_with(&g, |acc, &gv| *acc += gv * weights.pearson);
                }
                let chained = mdn::mixture_mean_backward(&params, &g_point)?;
                grad_raw.zip_mut_with(&chained, |acc, &gv| *acc += gv);
            }
            if weights.ce > 0.0 {
                let out = fwd.heads.get(&HeadKind::Ce).ok_or_else(|| {
                    Error::Config("mtl loss has ce weight > 0 but the model has no ce head".into())
                })?;
                let (l, g) = mdn::ce_loss(out, require_labels(item)?)?;
                comps.ce = l;
                head_grads.insert(HeadKind::Ce, g.mapv(|v| v * weights.ce));
            }
            head_grads.insert(HeadKind::Mdn, grad_raw);
            mdn::mtl_loss(&comps, weights)?
        }
    };
    Ok((total, head_grads, fwd.cache))
}

fn validate_loss_wiring(model: &MlpModel, loss: &LossSpec) -> Result<()> {
    match loss {
        LossSpec::CrossEntropy => {
            model.head(HeadKind::Ce)?;
        }
        LossSpec::MeanSquared => {
            model.head(HeadKind::Regression)?;
        }
        LossSpec::Mtl { mdn: cfg, weights } => {
            weights.validate()?;
            cfg.validate()?;
            let head = model.head(HeadKind::Mdn)?;
            let width = head.b.len();
            if width != cfg.raw_width() {
                return Err(Error::Config(format!(
                    "mdn head width {width} does not match M(2D+1) = {}",
                    cfg.raw_width()
                )));
            }
            if weights.ce > 0.0 {
                model.head(HeadKind::Ce)?;
            }
        }
    }
    Ok(())
}

/// Mean eval-mode loss over a set of items (no dropout, no updates).
pub fn evaluate_loss(
    model: &MlpModel,
    items: &[TrainItem],
    loss: &LossSpec,
    speaker: Option<&str>,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty set".into()));
    }
    let mut total = 0.0;
    for item in items {
        let (l, _, _) = forward_loss(model, item, loss, speaker, Mode::Eval)?;
        total += l;
    }
    Ok(total / items.len() as f64)
}

/// Train all model parameters. Batches group whole utterances; gradients
/// are averaged per batch. Identical seeds give bit-identical parameter
/// trajectories.
pub fn fit(
    model: &mut MlpModel,
    items: &[TrainItem],
    loss: &LossSpec,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    validate_loss_wiring(model, loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptState::new(cfg, model.param_count());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..items.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut flat: Array1<f64> = Array1::zeros(model.param_count());
            for &i in batch {
                let jittered = if cfg.input_noise_std > 0.0 {
                    let noise = Normal::new(0.0, cfg.input_noise_std)
                        .map_err(|e| Error::Config(format!("input_noise_std: {e}")))?;
                    let mut item = items[i].clone();
                    item.features.mapv_inplace(|v| v + noise.sample(&mut rng));
                    Some(item)
                } else {
                    None
                };
                let item = jittered.as_ref().unwrap_or(&items[i]);
                let (l, head_grads, cache) =
                    forward_loss(model, item, loss, None, Mode::Train { rng: &mut rng })?;
                if !l.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite training loss at epoch {epoch}, batch {batch_idx}"
                    )));
                }
                epoch_loss += l;
                let grads = model.backward(&cache, &head_grads)?;
                flat += &model.flatten_grads(&grads)?;
            }
            flat.mapv_inplace(|v| v / batch.len() as f64);
            clip_grad(&mut flat, cfg.gradient_clip_norm);
            let mut params = model.flat_params();
            opt.step(&mut params, &flat, cfg.learning_rate);
            model.set_flat_params(&params)?;
        }
        epoch_losses.push(epoch_loss / items.len() as f64);
    }

    let final_loss = evaluate_loss(model, items, loss, None)?;
    Ok(TrainReport {
        epoch_losses,
        final_loss,
    })
}

/// Derive supervision from the model's own speaker-independent hypotheses.
fn pseudo_supervise(model: &MlpModel, item: &TrainItem, loss: &LossSpec) -> Result<TrainItem> {
    let fwd = model.forward(&item.features, item.aux.as_ref(), None, Mode::Eval)?;
    let mut out = TrainItem {
        features: item.features.clone(),
        aux: item.aux.clone(),
        targets: None,
        labels: None,
    };
    let argmax_labels = |logits: &Array2<f64>| -> Vec<usize> {
        logits
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    };
    match loss {
        LossSpec::CrossEntropy => {
            let logits = fwd
                .heads
                .get(&HeadKind::Ce)
                .ok_or_else(|| Error::Config("cross-entropy loss needs a ce head".into()))?;
            out.labels = Some(argmax_labels(logits));
        }
        LossSpec::MeanSquared => {
            let pred = fwd.heads.get(&HeadKind::Regression).ok_or_else(|| {
                Error::Config("mean-squared loss needs a regression head".into())
            })?;
            out.targets = Some(pred.clone());
        }
        LossSpec::Mtl { mdn: cfg, weights } => {
            let raw = fwd
                .heads
                .get(&HeadKind::Mdn)
                .ok_or_else(|| Error::Config("mtl loss needs an mdn head".into()))?;
            let params = mdn::mdn_split(raw, cfg)?;
            out.targets = Some(mdn::mdn_point_estimate(&params, PointEstimate::MixtureMean));
            if weights.ce > 0.0 {
                let logits = fwd.heads.get(&HeadKind::Ce).ok_or_else(|| {
                    Error::Config("mtl loss has ce weight > 0 but the model has no ce head".into())
                })?;
                out.labels = Some(argmax_labels(logits));
            }
        }
    }
    Ok(out)
}

/// Adapt only the LHUC scaling vectors of one speaker; all weight and bias
/// tensors stay untouched. Runs full-batch so the adaptation loss decreases
/// monotonically at a small enough learning rate. With `unsupervised` the
/// items' supervision is replaced by the model's own hypotheses.
pub fn lhuc_adapt(
    model: &mut MlpModel,
    speaker: &str,
    items: &[TrainItem],
    loss: &LossSpec,
    cfg: &TrainConfig,
    unsupervised: bool,
) -> Result<TrainReport> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Data("adaptation set is empty".into()));
    }
    if model.lhuc_layers().is_empty() {
        return Err(Error::Config("model has no lhuc-enabled layers".into()));
    }
    validate_loss_wiring(model, loss)?;
    model.register_speaker(speaker)?;

    let supervised_items: Vec<TrainItem>;
    let items: &[TrainItem] = if unsupervised {
        supervised_items = items
            .iter()
            .map(|it| pseudo_supervise(model, it, loss))
            .collect::<Result<_>>()?;
        &supervised_items
    } else {
        items
    };

    let n = model.lhuc_param_count();
    let mut opt = OptState::new(cfg, n);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut flat: Array1<f64> = Array1::zeros(n);
        let mut total = 0.0;
        for item in items {
            // Adaptation always runs dropout-free.
            let (l, head_grads, cache) =
                forward_loss(model, item, loss, Some(speaker), Mode::Eval)?;
            if !l.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite adaptation loss at epoch {epoch}"
                )));
            }
            total += l;
            let grads = model.backward(&cache, &head_grads)?;
            flat += &grads
                .lhuc_flat()
                .expect("speaker forward always produces lhuc gradients");
        }
        flat.mapv_inplace(|v| v / items.len() as f64);
        epoch_losses.push(total / items.len() as f64);
        clip_grad(&mut flat, cfg.gradient_clip_norm);
        let mut alphas = model.lhuc_flat(speaker)?;
        opt.step(&mut alphas, &flat, cfg.learning_rate);
        model.set_lhuc_flat(speaker, &alphas)?;
    }

    let final_loss = evaluate_loss(model, items, loss, Some(speaker))?;
    Ok(TrainReport {
        epoch_losses,
        final_loss,
    })
}
