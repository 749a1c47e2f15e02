//! Multi-level adaptive network (MLAN): a two-DNN cascade that maps both an
//! in-domain corpus and an out-of-domain corpus into a shared bottleneck
//! space, shrinking the acoustic mismatch between them.
//!
//! Level 1 is trained on in-domain audio with frame cross-entropy; its
//! bottleneck features are concatenated onto the out-of-domain audio to
//! train level 2 the same way. The level-2 bottleneck of
//! `[raw | level-1 bottleneck]` is the adapted feature for either domain.

use ndarray::{concatenate, Array2, Axis};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};
use crate::neuralnet::{
    fit, HeadKind, LayerSpec, LossSpec, MlpModel, ModelSpec, TrainConfig, TrainItem,
};

/// Topologies for both component DNNs. Each layer list ends in its
/// bottleneck: the last hidden layer, sitting immediately before the
/// classification head, must have width `bottleneck_dim`, and no earlier
/// layer may share that width (the bottleneck must be unambiguous).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlanConfig {
    pub dnn1_layers: Vec<LayerSpec>,
    pub dnn2_layers: Vec<LayerSpec>,
    pub bottleneck_dim: usize,
    pub n_classes: usize,
}

pub const DEFAULT_BOTTLENECK_DIM: usize = 39;

impl MlanConfig {
    /// One hidden layer then the bottleneck for each level, ReLU throughout.
    pub fn with_dims(
        in_dim: usize,
        hidden: usize,
        bottleneck_dim: usize,
        n_classes: usize,
    ) -> Self {
        MlanConfig {
            dnn1_layers: vec![
                LayerSpec::relu(in_dim, hidden),
                LayerSpec::relu(hidden, bottleneck_dim),
            ],
            dnn2_layers: vec![
                LayerSpec::relu(in_dim + bottleneck_dim, hidden),
                LayerSpec::relu(hidden, bottleneck_dim),
            ],
            bottleneck_dim,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "mlan needs at least 2 classes, got {}",
                self.n_classes
            )));
        }
        for (name, layers) in [("dnn1", &self.dnn1_layers), ("dnn2", &self.dnn2_layers)] {
            let last = layers
                .last()
                .ok_or_else(|| Error::Config(format!("{name} has no layers")))?;
            if last.out_dim != self.bottleneck_dim {
                return Err(Error::Config(format!(
                    "{name} must end in a bottleneck of width {}, got {}",
                    self.bottleneck_dim, last.out_dim
                )));
            }
            let earlier = layers[..layers.len() - 1]
                .iter()
                .filter(|l| l.out_dim == self.bottleneck_dim)
                .count();
            if earlier > 0 {
                return Err(Error::Config(format!(
                    "{name} has {earlier} extra layer(s) of bottleneck width {}; \
                     exactly one bottleneck is allowed",
                    self.bottleneck_dim
                )));
            }
        }
        let in1 = self.dnn1_layers[0].in_dim;
        let in2 = self.dnn2_layers[0].in_dim;
        if in2 != in1 + self.bottleneck_dim {
            return Err(Error::Config(format!(
                "dnn2 input width {in2} must equal dnn1 input {in1} + bottleneck {}",
                self.bottleneck_dim
            )));
        }
        Ok(())
    }

    fn model_spec(&self, layers: &[LayerSpec]) -> ModelSpec {
        ModelSpec {
            layers: layers.to_vec(),
            heads: vec![(HeadKind::Ce, self.n_classes)],
            bottleneck_tap: Some(layers.len() - 1),
            aux_input: None,
        }
    }
}

/// The trained cascade. Both models are frozen; feature extraction never
/// mutates them.
#[derive(Debug, Clone, PartialEq)]
pub struct MlanStack {
    dnn1: MlpModel,
    dnn2: MlpModel,
}

impl MlanStack {
    pub fn new(dnn1: MlpModel, dnn2: MlpModel) -> Result<Self> {
        let bn1 = bottleneck_width(&dnn1, "dnn1")?;
        bottleneck_width(&dnn2, "dnn2")?;
        if dnn2.input_dim() != dnn1.input_dim() + bn1 {
            return Err(Error::Config(format!(
                "dnn2 input width {} must equal dnn1 input {} + dnn1 bottleneck {bn1}",
                dnn2.input_dim(),
                dnn1.input_dim()
            )));
        }
        Ok(MlanStack { dnn1, dnn2 })
    }

    pub fn dnn1(&self) -> &MlpModel {
        &self.dnn1
    }

    pub fn dnn2(&self) -> &MlpModel {
        &self.dnn2
    }

    /// Width of the raw features the stack consumes.
    pub fn input_dim(&self) -> usize {
        self.dnn1.input_dim()
    }

    /// Width of the adapted features the stack produces.
    pub fn output_dim(&self) -> usize {
        let tap = self.dnn2.bottleneck_tap().expect("validated at construction");
        self.dnn2.layers()[tap].spec.out_dim
    }

    /// Deterministic fingerprint of both parameter sets. Inversion recipes
    /// record it so a model trained on one stack's features is never fed
    /// features from another.
    pub fn stack_id(&self) -> String {
        let mut hasher = Sha256::new();
        for model in [&self.dnn1, &self.dnn2] {
            for v in model.flat_params().iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn bottleneck_width(model: &MlpModel, name: &str) -> Result<usize> {
    let tap = model
        .bottleneck_tap()
        .ok_or_else(|| Error::Config(format!("{name} has no bottleneck tap")))?;
    Ok(model.layers()[tap].spec.out_dim)
}

fn check_labels(items: &[TrainItem], n_classes: usize) -> Result<()> {
    if items.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    for (i, item) in items.iter().enumerate() {
        let labels = item
            .labels
            .as_ref()
            .ok_or_else(|| Error::Data(format!("utterance {i} has no frame labels")))?;
        if labels.len() != item.features.nrows() {
            return Err(Error::Data(format!(
                "utterance {i}: {} labels for {} frames",
                labels.len(),
                item.features.nrows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Data(format!(
                "utterance {i}: label {bad} out of range for {n_classes} classes"
            )));
        }
    }
    Ok(())
}

/// Train the level-1 DNN on in-domain audio with frame cross-entropy.
pub fn train_level1(
    items: &[TrainItem],
    cfg: &MlanConfig,
    tcfg: &TrainConfig,
) -> Result<MlpModel> {
    cfg.validate()?;
    check_labels(items, cfg.n_classes)?;
    let mut model = MlpModel::new(&cfg.model_spec(&cfg.dnn1_layers), tcfg.seed)?;
    fit(&mut model, items, &LossSpec::CrossEntropy, tcfg)?;
    Ok(model)
}

/// Level-1 bottleneck features for one utterance.
pub fn gen_bottleneck1(dnn1: &MlpModel, feats: &FeatureMatrix) -> Result<FeatureMatrix> {
    dnn1.extract_bottleneck(feats)
}

/// Concatenate raw features with bottleneck features, in that order. The
/// operand kinds enforce the layout: the left part must not already be
/// bottleneck features, the right part must be.
pub fn concat_raw_bottleneck(
    raw: &FeatureMatrix,
    bn: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    if raw.kind() == FeatureKind::Bottleneck {
        return Err(Error::Data(
            "left operand must be raw features, got bottleneck".into(),
        ));
    }
    if bn.kind() != FeatureKind::Bottleneck {
        return Err(Error::Data(format!(
            "right operand must be bottleneck features, got {:?}",
            bn.kind()
        )));
    }
    if raw.frames() != bn.frames() {
        return Err(Error::Data(format!(
            "frame counts differ: {} raw vs {} bottleneck",
            raw.frames(),
            bn.frames()
        )));
    }
    let data = concatenate(Axis(1), &[raw.data().view(), bn.data().view()])
        .map_err(|e| Error::Internal(format!("concatenate failed: {e}")))?;
    FeatureMatrix::new(data, raw.frame_shift_ms(), FeatureKind::Concat)
}

/// Train the level-2 DNN on out-of-domain `[raw | level-1 bottleneck]`
/// features with frame cross-entropy.
pub fn train_level2(
    items: &[TrainItem],
    cfg: &MlanConfig,
    tcfg: &TrainConfig,
) -> Result<MlpModel> {
    cfg.validate()?;
    check_labels(items, cfg.n_classes)?;
    let want = cfg.dnn2_layers[0].in_dim;
    for (i, item) in items.iter().enumerate() {
        if item.features.ncols() != want {
            return Err(Error::Config(format!(
                "utterance {i}: concatenated width {} does not match dnn2 input {want}",
                item.features.ncols()
            )));
        }
    }
    let mut model = MlpModel::new(&cfg.model_spec(&cfg.dnn2_layers), tcfg.seed)?;
    fit(&mut model, items, &LossSpec::CrossEntropy, tcfg)?;
    Ok(model)
}

/// Train the whole cascade: level 1 on the in-domain set, then level 2 on
/// the out-of-domain set concatenated with level-1 bottlenecks. The level-2
/// model is seeded with `seed + 1` so the two initializations differ.
pub fn train_stack(
    in_domain: &[TrainItem],
    out_domain: &[TrainItem],
    cfg: &MlanConfig,
    tcfg: &TrainConfig,
) -> Result<MlanStack> {
    let dnn1 = train_level1(in_domain, cfg, tcfg)?;
    check_labels(out_domain, cfg.n_classes)?;
    let cascaded: Vec<TrainItem> = out_domain
        .iter()
        .map(|item| {
            let raw = FeatureMatrix::new(item.features.clone(), 0.0, FeatureKind::Spliced)?;
            let bn = gen_bottleneck1(&dnn1, &raw)?;
            let cat = concat_raw_bottleneck(&raw, &bn)?;
            Ok(TrainItem {
                features: cat.into_data(),
                aux: None,
                targets: None,
                labels: item.labels.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let tcfg2 = TrainConfig {
        seed: tcfg.seed.wrapping_add(1),
        ..*tcfg
    };
    let dnn2 = train_level2(&cascaded, cfg, &tcfg2)?;
    MlanStack::new(dnn1, dnn2)
}

/// Cross-domain adapted features: the level-2 bottleneck of
/// `[feats | level-1 bottleneck of feats]`. The same map serves both
/// domains; that is the adaptation mechanism.
pub fn mlan_features(stack: &MlanStack, feats: &FeatureMatrix) -> Result<FeatureMatrix> {
    if feats.dim() != stack.input_dim() {
        return Err(Error::Config(format!(
            "feature width {} does not match stack input {}",
            feats.dim(),
            stack.input_dim()
        )));
    }
    let bn1 = gen_bottleneck1(stack.dnn1(), feats)?;
    let cat = concat_raw_bottleneck(feats, &bn1)?;
    stack.dnn2().extract_bottleneck(&cat)
}

/// Pool the frames of several utterances into one matrix, e.g. to measure
/// a domain gap over a whole corpus.
pub fn pool_frames(sets: &[FeatureMatrix]) -> Result<Array2<f64>> {
    if sets.is_empty() {
        return Err(Error::Data("cannot pool an empty feature set".into()));
    }
    let views: Vec<_> = sets.iter().map(|f| f.data().view()).collect();
    concatenate(Axis(0), &views)
        .map_err(|_| Error::Data("pooled feature sets must share one width".into()))
}

const GAP_VARIANCE_FLOOR: f64 = 1e-8;

/// Symmetric divergence between diagonal-Gaussian fits of two frame sets:
/// the sum of both directed KL divergences, per dimension
/// `(vA + dmu^2) / (2 vB) + (vB + dmu^2) / (2 vA) - 1`, variances floored
/// at 1e-8. Zero iff the fitted moments agree; the unit-variance example
/// with means 0 and 1 gives exactly 1.
pub fn domain_gap(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Data("domain gap needs non-empty frame sets".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::Data(format!(
            "domain gap widths differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let moments = |x: &Array2<f64>, d: usize| {
        let col = x.column(d);
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.max(GAP_VARIANCE_FLOOR))
    };
    let mut gap = 0.0;
    for d in 0..a.ncols() {
        let (ma, va) = moments(a, d);
        let (mb, vb) = moments(b, d);
        let dmu2 = (ma - mb) * (ma - mb);
        gap += (va + dmu2) / (2.0 * vb) + (vb + dmu2) / (2.0 * va) - 1.0;
    }
    Ok(gap.max(0.0))
}
