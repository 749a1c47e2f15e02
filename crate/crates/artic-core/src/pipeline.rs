//! End-to-end inversion pipeline.
//!
//! An [`InversionRecipe`] fixes the front end, the network topology and the
//! training configuration; [`train_inversion`] turns a recipe plus a corpus
//! into an [`InversionModel`] that bundles the network with the recipe and
//! the target standardizer fitted on the training set. Inversion and
//! evaluation therefore reproduce training-time conventions exactly, and a
//! model reloaded from disk generates bit-identical trajectories.

use std::path::Path;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataio::{load_model, read_afm, read_labels, read_trj, save_model, Manifest};
use crate::error::{Error, Result};
use crate::features::{
    append_deltas, splice_context, utterance_cmvn, ArticulatoryLayout, FeatureKind, FeatureMatrix,
    TrajectorySet,
};
use crate::mdn::{mdn_point_estimate, mdn_split, MdnConfig, MtlWeights, PointEstimate};
use crate::mlan::{mlan_features, MlanStack};
use crate::mlpg::{smooth_mdn_sequence, DeltaWindows, VarianceMode};
use crate::neuralnet::{
    fit, lhuc_adapt, Activation, AuxInput, HeadKind, LayerSpec, LossSpec, MlpModel, Mode,
    ModelSpec, TrainConfig, TrainItem, TrainReport,
};

const STATIC_DIM: usize = ArticulatoryLayout::STATIC_DIM;

/// Acoustic front end feeding the inversion network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontEnd {
    /// Per-utterance CMVN followed by context splicing.
    RawSpliced,
    /// The spliced features pushed through a trained cross-domain stack;
    /// the network consumes the level-2 bottleneck.
    Mlan,
}

/// Everything needed to train an inversion model, minus the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionRecipe {
    pub front_end: FrontEnd,
    pub splice_left: usize,
    pub splice_right: usize,
    pub cmvn: bool,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    /// LHUC scaling vectors on every hidden layer, so the trained model can
    /// later be speaker-adapted. Identity until a speaker is adapted.
    pub lhuc: bool,
    pub dropout: f64,
    pub n_mix: usize,
    pub variance_floor: f64,
    /// Train against `[static | delta | delta-delta]` targets (54 dims)
    /// instead of statics only; required for MLPG smoothing.
    pub delta_targets: bool,
    pub weights: MtlWeights,
    pub train: TrainConfig,
}

impl Default for InversionRecipe {
    fn default() -> Self {
        InversionRecipe {
            front_end: FrontEnd::RawSpliced,
            splice_left: 2,
            splice_right: 2,
            cmvn: true,
            hidden_layers: vec![256, 256, 256],
            activation: Activation::Relu,
            lhuc: true,
            dropout: 0.0,
            n_mix: 2,
            variance_floor: crate::mdn::DEFAULT_VARIANCE_FLOOR,
            delta_targets: true,
            weights: MtlWeights::default(),
            train: TrainConfig::default(),
        }
    }
}

impl InversionRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty and positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        self.mdn_config().validate()?;
        self.weights.validate()?;
        self.train.validate()
    }

    /// Target width implied by the delta flag: 54 with deltas, 18 without.
    pub fn target_dim(&self) -> usize {
        if self.delta_targets {
            3 * STATIC_DIM
        } else {
            STATIC_DIM
        }
    }

    pub fn mdn_config(&self) -> MdnConfig {
        MdnConfig {
            n_mix: self.n_mix,
            target_dim: self.target_dim(),
            variance_floor: self.variance_floor,
        }
    }
}

/// Per-dimension mean/std of the static articulatory targets, fitted on the
/// training set. Targets are standardized before delta appending and
/// predictions de-standardized after smoothing, so the network always sees
/// unit-scale targets while callers see millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtStandardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ArtStandardizer {
    /// Pooled population moments over all frames; std floored at 1e-4 so a
    /// constant dimension stays finite under the inverse map.
    pub fn fit(trajectories: &[&Array2<f64>]) -> Result<Self> {
        let d = trajectories
            .first()
            .ok_or_else(|| Error::Data("standardizer needs at least one trajectory".into()))?
            .ncols();
        let total: usize = trajectories.iter().map(|t| t.nrows()).sum();
        if total == 0 {
            return Err(Error::Data("standardizer needs at least one frame".into()));
        }
        let mut mean = vec![0.0; d];
        for t in trajectories {
            if t.ncols() != d {
                return Err(Error::Data(format!(
                    "trajectory width {} disagrees with {}",
                    t.ncols(),
                    d
                )));
            }
            for row in t.rows() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
        }
        for m in &mut mean {
            *m /= total as f64;
        }
        let mut var = vec![0.0; d];
        for t in trajectories {
            for row in t.rows() {
                for (s, (v, m)) in var.iter_mut().zip(row.iter().zip(&mean)) {
                    *s += (v - m).powi(2);
                }
            }
        }
        let std = var
            .iter()
            .map(|v| (v / total as f64).sqrt().max(1e-4))
            .collect();
        Ok(ArtStandardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check_width(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::Data(format!(
                "matrix width {} does not match standardizer dim {}",
                x.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `z = (x - mean) / std` per dimension.
    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(x)?;
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for (v, (m, s)) in row.iter_mut().zip(self.mean.iter().zip(&self.std)) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    /// `x = mean + std * z` per dimension.
    pub fn invert(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(z)?;
        let mut out = z.clone();
        for mut row in out.rows_mut() {
            for (v, (m, s)) in row.iter_mut().zip(self.mean.iter().zip(&self.std)) {
                *v = m + s * *v;
            }
        }
        Ok(out)
    }
}

/// One utterance as the pipeline consumes it: acoustic features plus
/// whatever references the manifest carried.
#[derive(Debug, Clone)]
pub struct UttData {
    pub utt_id: String,
    pub speaker_id: String,
    pub domain: String,
    pub features: FeatureMatrix,
    pub trajectory: Option<Array2<f64>>,
    pub labels: Option<Vec<usize>>,
}

/// Load every manifest entry that has a feature file, reading trajectories
/// and labels where present. Frame-count mismatches across an utterance's
/// files are collected and reported together, listing the utterance ids.
pub fn load_utterances(manifest: &Manifest) -> Result<Vec<UttData>> {
    let mut out = Vec::with_capacity(manifest.len());
    let mut mismatched = Vec::new();
    for entry in &manifest.entries {
        let feat_path = entry.features.as_ref().ok_or_else(|| {
            Error::Data(format!(
                "utterance {} has no feature file; run feature extraction first",
                entry.utt_id
            ))
        })?;
        let features = read_afm(feat_path)?;
        let t = features.frames();
        if entry.n_frames != t {
            mismatched.push(format!(
                "{} (manifest says {} frames, features have {t})",
                entry.utt_id, entry.n_frames
            ));
        }
        let trajectory = match &entry.trajectory {
            Some(p) => {
                let traj = read_trj(p)?;
                if traj.ncols() != STATIC_DIM {
                    return Err(Error::Data(format!(
                        "utterance {} reference must have {STATIC_DIM} columns, got {}",
                        entry.utt_id,
                        traj.ncols()
                    )));
                }
                if traj.nrows() != t {
                    mismatched.push(format!(
                        "{} (features {t} frames, trajectory {})",
                        entry.utt_id,
                        traj.nrows()
                    ));
                }
                Some(traj)
            }
            None => None,
        };
        let labels = match &entry.labels {
            Some(p) => {
                let l = read_labels(p)?;
                if l.len() != t {
                    mismatched.push(format!(
                        "{} (features {t} frames, labels {})",
                        entry.utt_id,
                        l.len()
                    ));
                }
                Some(l)
            }
            None => None,
        };
        out.push(UttData {
            utt_id: entry.utt_id.clone(),
            speaker_id: entry.speaker_id.clone(),
            domain: entry.domain.clone(),
            features,
            trajectory,
            labels,
        });
    }
    if !mismatched.is_empty() {
        return Err(Error::Data(format!(
            "frame-count mismatches: {}",
            mismatched.join("; ")
        )));
    }
    Ok(out)
}

/// Run the recipe's front end over one utterance of raw filterbank frames.
/// Already-extracted bottleneck features pass through unchanged when the
/// recipe uses the cross-domain front end and the width matches the stack.
pub fn prepare_features(
    recipe: &InversionRecipe,
    stack: Option<&MlanStack>,
    fm: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    if recipe.front_end == FrontEnd::Mlan {
        let stack = stack.ok_or_else(|| {
            Error::Config("the mlan front end needs a trained cross-domain stack".into())
        })?;
        if fm.kind() == FeatureKind::Bottleneck {
            if fm.dim() != stack.output_dim() {
                return Err(Error::Config(format!(
                    "bottleneck features are {}-dim but the stack produces {}",
                    fm.dim(),
                    stack.output_dim()
                )));
            }
            return Ok(fm.clone());
        }
    }
    let normed = if recipe.cmvn {
        utterance_cmvn(fm)?
    } else {
        fm.clone()
    };
    let spliced = splice_context(&normed, recipe.splice_left, recipe.splice_right)?;
    match recipe.front_end {
        FrontEnd::RawSpliced => Ok(spliced),
        FrontEnd::Mlan => mlan_features(stack.expect("checked above"), &spliced),
    }
}

/// A trained inversion network with the recipe and target statistics that
/// produced it. `n_classes = 0` means the model carries no classifier head.
#[derive(Debug, Clone)]
pub struct InversionModel {
    pub model: MlpModel,
    pub recipe: InversionRecipe,
    pub standardizer: ArtStandardizer,
    pub n_classes: usize,
    /// Fingerprint of the stack the model was trained behind; present iff
    /// the recipe uses the cross-domain front end.
    pub stack_id: Option<String>,
}

impl InversionModel {
    pub fn mdn_config(&self) -> MdnConfig {
        self.recipe.mdn_config()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = json!({
            "kind": "inversion",
            "recipe": serde_json::to_value(&self.recipe)
                .map_err(|e| Error::Internal(format!("recipe serialization: {e}")))?,
            "standardizer": serde_json::to_value(&self.standardizer)
                .map_err(|e| Error::Internal(format!("standardizer serialization: {e}")))?,
            "n_classes": self.n_classes,
            "stack_id": self.stack_id,
        });
        save_model(path, &self.model, &extra)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (model, meta) = load_model(path)?;
        let field = |key: &str| -> Result<&Value> {
            meta.get(key).ok_or_else(|| {
                Error::format(path, format!("not an inversion model: missing {key:?}"))
            })
        };
        if field("kind")? != "inversion" {
            return Err(Error::format(path, "not an inversion model".to_string()));
        }
        let recipe: InversionRecipe = serde_json::from_value(field("recipe")?.clone())
            .map_err(|e| Error::format(path, format!("bad recipe metadata: {e}")))?;
        let standardizer: ArtStandardizer = serde_json::from_value(field("standardizer")?.clone())
            .map_err(|e| Error::format(path, format!("bad standardizer metadata: {e}")))?;
        let n_classes: usize = serde_json::from_value(field("n_classes")?.clone())
            .map_err(|e| Error::format(path, format!("bad n_classes metadata: {e}")))?;
        let stack_id: Option<String> = serde_json::from_value(field("stack_id")?.clone())
            .map_err(|e| Error::format(path, format!("bad stack_id metadata: {e}")))?;
        Ok(InversionModel {
            model,
            recipe,
            standardizer,
            n_classes,
            stack_id,
        })
    }
}

/// Standardize references and append delta streams when the recipe asks
/// for them.
fn build_targets(
    recipe: &InversionRecipe,
    standardizer: &ArtStandardizer,
    traj: &Array2<f64>,
    frame_shift_ms: f64,
) -> Result<Array2<f64>> {
    let z = standardizer.apply(traj)?;
    if recipe.delta_targets {
        let fm = FeatureMatrix::new(z, frame_shift_ms, FeatureKind::Articulatory)?;
        Ok(append_deltas(&fm, &DeltaWindows::default())?.into_data())
    } else {
        Ok(z)
    }
}

/// Train an inversion model on a reference-labelled corpus.
///
/// Every utterance needs a trajectory; frame labels are needed on all
/// utterances when the cross-entropy weight is positive, and the classifier
/// head is included whenever all utterances carry labels. The stack is
/// required (and fingerprinted into the model) for the mlan front end.
pub fn train_inversion(
    data: &[UttData],
    recipe: &InversionRecipe,
    stack: Option<&MlanStack>,
) -> Result<(InversionModel, TrainReport)> {
    recipe.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    let missing: Vec<&str> = data
        .iter()
        .filter(|u| u.trajectory.is_none())
        .map(|u| u.utt_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "utterances lack reference trajectories: {}",
            missing.join(", ")
        )));
    }
    let all_labeled = data.iter().all(|u| u.labels.is_some());
    if recipe.weights.ce > 0.0 && !all_labeled {
        let unlabeled: Vec<&str> = data
            .iter()
            .filter(|u| u.labels.is_none())
            .map(|u| u.utt_id.as_str())
            .collect();
        return Err(Error::Data(format!(
            "cross-entropy weight is positive but utterances lack labels: {}",
            unlabeled.join(", ")
        )));
    }

    let prepared: Vec<FeatureMatrix> = data
        .iter()
        .map(|u| prepare_features(recipe, stack, &u.features))
        .collect::<Result<_>>()?;
    let input_dim = prepared[0].dim();
    let odd: Vec<&str> = data
        .iter()
        .zip(&prepared)
        .filter(|(_, p)| p.dim() != input_dim)
        .map(|(u, _)| u.utt_id.as_str())
        .collect();
    if !odd.is_empty() {
        return Err(Error::Data(format!(
            "feature widths disagree with the first utterance: {}",
            odd.join(", ")
        )));
    }

    let trajs: Vec<&Array2<f64>> = data.iter().map(|u| u.trajectory.as_ref().unwrap()).collect();
    let standardizer = ArtStandardizer::fit(&trajs)?;
    let n_classes = if all_labeled {
        1 + data
            .iter()
            .flat_map(|u| u.labels.as_ref().unwrap())
            .copied()
            .max()
            .unwrap_or(0)
    } else {
        0
    };

    let mdn = recipe.mdn_config();
    let mut layers = Vec::with_capacity(recipe.hidden_layers.len());
    let mut prev = input_dim;
    for &h in &recipe.hidden_layers {
        layers.push(LayerSpec {
            in_dim: prev,
            out_dim: h,
            activation: recipe.activation,
            dropout_rate: recipe.dropout,
            lhuc_enabled: recipe.lhuc,
        });
        prev = h;
    }
    let mut heads = vec![(HeadKind::Mdn, mdn.raw_width())];
    if all_labeled {
        heads.push((HeadKind::Ce, n_classes));
    }
    let spec = ModelSpec {
        layers,
        heads,
        bottleneck_tap: None,
        aux_input: None,
    };
    let mut model = MlpModel::new(&spec, recipe.train.seed)?;

    let items: Vec<TrainItem> = data
        .iter()
        .zip(prepared)
        .map(|(u, p)| {
            let shift = p.frame_shift_ms();
            Ok(TrainItem {
                targets: Some(build_targets(
                    recipe,
                    &standardizer,
                    u.trajectory.as_ref().unwrap(),
                    shift,
                )?),
                labels: u.labels.clone(),
                features: p.into_data(),
                aux: None,
            })
        })
        .collect::<Result<_>>()?;

    let loss = LossSpec::Mtl {
        mdn,
        weights: recipe.weights,
    };
    let report = fit(&mut model, &items, &loss, &recipe.train)?;

    let stack_id = match recipe.front_end {
        FrontEnd::Mlan => Some(stack.expect("prepare_features checked").stack_id()),
        FrontEnd::RawSpliced => None,
    };
    Ok((
        InversionModel {
            model,
            recipe: recipe.clone(),
            standardizer,
            n_classes,
            stack_id,
        },
        report,
    ))
}

/// Trajectory post-processing applied to the mixture sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Per-frame point estimate of the most probable component.
    None,
    /// MLPG over the static/delta/delta-delta streams.
    Mlpg,
}

fn prepared_input(inv: &InversionModel, feats: &FeatureMatrix) -> Result<FeatureMatrix> {
    match inv.recipe.front_end {
        FrontEnd::RawSpliced => prepare_features(&inv.recipe, None, feats),
        FrontEnd::Mlan => {
            if feats.kind() == FeatureKind::Bottleneck && feats.dim() == inv.model.input_dim() {
                Ok(feats.clone())
            } else {
                Err(Error::Config(
                    "this model consumes cross-domain bottleneck features; \
                     extract them first or call cross_domain_generate with the stack"
                        .into(),
                ))
            }
        }
    }
}

/// Invert one utterance of acoustic features into a static trajectory (mm).
pub fn invert(
    inv: &InversionModel,
    feats: &FeatureMatrix,
    smoothing: Smoothing,
) -> Result<TrajectorySet> {
    invert_for(inv, feats, smoothing, None)
}

/// [`invert`] with a registered LHUC speaker applied during the forward pass.
pub fn invert_for(
    inv: &InversionModel,
    feats: &FeatureMatrix,
    smoothing: Smoothing,
    speaker: Option<&str>,
) -> Result<TrajectorySet> {
    let prepared = prepared_input(inv, feats)?;
    let fwd = inv
        .model
        .forward(prepared.data(), None, speaker, Mode::Eval)?;
    let raw = fwd
        .heads
        .get(&HeadKind::Mdn)
        .ok_or_else(|| Error::Config("model has no mdn head".into()))?;
    let params = mdn_split(raw, &inv.mdn_config())?;
    let z = match smoothing {
        Smoothing::None => {
            let point = mdn_point_estimate(&params, PointEstimate::MaxComponent);
            point.slice(s![.., 0..STATIC_DIM]).to_owned()
        }
        Smoothing::Mlpg => {
            if !inv.recipe.delta_targets {
                return Err(Error::Config(
                    "mlpg smoothing needs a model trained on delta targets".into(),
                ));
            }
            smooth_mdn_sequence(&params, &DeltaWindows::default(), VarianceMode::PerFrame)?
                .into_data()
        }
    };
    TrajectorySet::new(inv.standardizer.invert(&z)?)
}

/// Invert out-of-domain audio through the cross-domain stack the model was
/// trained behind. Equals [`mlan_features`] followed by [`invert`] with MLPG
/// smoothing; a stack other than the training-time one is a config error.
pub fn cross_domain_generate(
    stack: &MlanStack,
    inv: &InversionModel,
    feats: &FeatureMatrix,
) -> Result<TrajectorySet> {
    let trained_with = inv.stack_id.as_deref().ok_or_else(|| {
        Error::Config("model was not trained behind a cross-domain stack".into())
    })?;
    let supplied = stack.stack_id();
    if trained_with != supplied {
        return Err(Error::Config(format!(
            "stack mismatch: model was trained behind {trained_with}, got {supplied}"
        )));
    }
    let bn = prepare_features(&inv.recipe, Some(stack), feats)?;
    invert(inv, &bn, Smoothing::Mlpg)
}

/// Evaluation metrics over a pooled set of utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Root mean squared error over every frame and dimension (mm).
    pub rmse_mm: f64,
    /// Pearson correlation per articulatory dimension over the pooled
    /// frames; a constant dimension on either side scores 0.
    pub pearson_per_dim: Vec<f64>,
    pub pearson_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_accuracy: Option<f64>,
    pub n_frames: usize,
}

/// Compare predicted and reference trajectories utterance by utterance,
/// pooling all frames for the metrics. RMSE is symmetric in its arguments.
pub fn evaluate(pred: &[TrajectorySet], reference: &[TrajectorySet]) -> Result<EvalReport> {
    if pred.len() != reference.len() || pred.is_empty() {
        return Err(Error::Data(format!(
            "evaluation needs matching non-empty sets, got {} predictions and {} references",
            pred.len(),
            reference.len()
        )));
    }
    let mut n_frames = 0usize;
    for (i, (p, r)) in pred.iter().zip(reference).enumerate() {
        if p.frames() != r.frames() {
            return Err(Error::Data(format!(
                "utterance {i}: prediction has {} frames, reference {}",
                p.frames(),
                r.frames()
            )));
        }
        n_frames += p.frames();
    }
    if n_frames < 2 {
        return Err(Error::Data("correlation needs at least 2 pooled frames".into()));
    }

    let mut se = 0.0;
    for (p, r) in pred.iter().zip(reference) {
        for (pv, rv) in p.data().iter().zip(r.data()) {
            se += (pv - rv).powi(2);
        }
    }
    let rmse_mm = (se / (n_frames * STATIC_DIM) as f64).sqrt();

    let mut pearson_per_dim = Vec::with_capacity(STATIC_DIM);
    for d in 0..STATIC_DIM {
        let (mut sp, mut sr) = (0.0, 0.0);
        for (p, r) in pred.iter().zip(reference) {
            sp += p.data().column(d).sum();
            sr += r.data().column(d).sum();
        }
        let (mp, mr) = (sp / n_frames as f64, sr / n_frames as f64);
        let (mut cov, mut vp, mut vr) = (0.0, 0.0, 0.0);
        for (p, r) in pred.iter().zip(reference) {
            for (pv, rv) in p.data().column(d).iter().zip(r.data().column(d)) {
                cov += (pv - mp) * (rv - mr);
                vp += (pv - mp).powi(2);
                vr += (rv - mr).powi(2);
            }
        }
        let r = if vp < 1e-12 || vr < 1e-12 {
            0.0
        } else {
            cov / (vp * vr).sqrt()
        };
        pearson_per_dim.push(r);
    }
    let pearson_mean = pearson_per_dim.iter().sum::<f64>() / STATIC_DIM as f64;

    Ok(EvalReport {
        rmse_mm,
        pearson_per_dim,
        pearson_mean,
        frame_accuracy: None,
        n_frames,
    })
}

/// Fraction of frames whose classifier argmax matches the reference label;
/// ties resolve to the lowest class index.
pub fn frame_classifier_eval(
    model: &MlpModel,
    feats: &Array2<f64>,
    labels: &[usize],
) -> Result<f64> {
    model.head(HeadKind::Ce)?;
    if labels.len() != feats.nrows() {
        return Err(Error::Data(format!(
            "{} labels for {} frames",
            labels.len(),
            feats.nrows()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Data("classifier evaluation needs at least one frame".into()));
    }
    let fwd = model.forward(feats, None, None, Mode::Eval)?;
    let logits = &fwd.heads[&HeadKind::Ce];
    let mut hits = 0usize;
    for (row, &label) in logits.rows().into_iter().zip(labels) {
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

/// Frame-level score fusion of two log-posterior streams.
///
/// Rows are combined as the convex blend `(wa*a + wb*b) / (wa + wb)` and
/// renormalized with log-sum-exp, so fusing a normalized stream with itself
/// returns it and a zero weight projects onto the other stream. Per-frame
/// constant shifts in either stream never change the fused argmax.
pub fn score_fusion(a: &Array2<f64>, b: &Array2<f64>, wa: f64, wb: f64) -> Result<Array2<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::Data(format!(
            "score shapes {:?} and {:?} disagree",
            a.dim(),
            b.dim()
        )));
    }
    if !wa.is_finite() || !wb.is_finite() || wa < 0.0 || wb < 0.0 || wa + wb <= 0.0 {
        return Err(Error::Config(format!(
            "fusion weights must be non-negative with a positive sum, got {wa} and {wb}"
        )));
    }
    let wsum = wa + wb;
    let mut out = Array2::zeros(a.dim());
    for ((mut row, ra), rb) in out.rows_mut().into_iter().zip(a.rows()).zip(b.rows()) {
        for (o, (va, vb)) in row.iter_mut().zip(ra.iter().zip(rb)) {
            *o = (wa * va + wb * vb) / wsum;
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    Ok(out)
}

/// Concatenate acoustic features with standardized articulatory features
/// frame by frame: `[acoustic | (artic - mean) / std]`.
pub fn concat_features(
    acoustic: &FeatureMatrix,
    artic: &TrajectorySet,
    stats: &ArtStandardizer,
) -> Result<FeatureMatrix> {
    if acoustic.frames() != artic.frames() {
        return Err(Error::Data(format!(
            "acoustic has {} frames, articulatory {}",
            acoustic.frames(),
            artic.frames()
        )));
    }
    let z = stats.apply(artic.data())?;
    let (t, da) = (acoustic.frames(), acoustic.dim());
    let mut out = Array2::zeros((t, da + z.ncols()));
    out.slice_mut(s![.., 0..da]).assign(acoustic.data());
    out.slice_mut(s![.., da..]).assign(&z);
    FeatureMatrix::new(out, acoustic.frame_shift_ms(), FeatureKind::Concat)
}

/// Classifier spec with articulatory features fused into the input of
/// hidden layer `fuse_layer`; layer 0 is plain input-level fusion, so a
/// model built here at layer 0 computes exactly what an unfused model of
/// the same parameters computes on [`concat_features`] output.
pub fn fusion_classifier_spec(
    acoustic_dim: usize,
    artic_dim: usize,
    hidden: &[usize],
    n_classes: usize,
    fuse_layer: usize,
) -> Result<ModelSpec> {
    if hidden.is_empty() || hidden.contains(&0) {
        return Err(Error::Config("hidden layers must be non-empty and positive".into()));
    }
    if fuse_layer >= hidden.len() {
        return Err(Error::Config(format!(
            "fuse layer {fuse_layer} out of range for {} hidden layers",
            hidden.len()
        )));
    }
    if acoustic_dim == 0 || artic_dim == 0 || n_classes == 0 {
        return Err(Error::Config("fusion dimensions must be positive".into()));
    }
    let mut layers = Vec::with_capacity(hidden.len());
    let mut prev = acoustic_dim;
    for (i, &h) in hidden.iter().enumerate() {
        let aux = if i == fuse_layer { artic_dim } else { 0 };
        layers.push(LayerSpec::relu(prev + aux, h));
        prev = h;
    }
    Ok(ModelSpec {
        layers,
        heads: vec![(HeadKind::Ce, n_classes)],
        bottleneck_tap: None,
        aux_input: Some(AuxInput {
            layer: fuse_layer,
            dim: artic_dim,
        }),
    })
}

/// Mean squared frame-to-frame step `mean_t ||c_t - c_{t-1}||^2`, the
/// smoothness metric MLPG is expected to improve; 0 for single frames.
pub fn roughness(traj: &Array2<f64>) -> f64 {
    let (t, d) = traj.dim();
    if t < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for ti in 1..t {
        for di in 0..d {
            let step = traj[[ti, di]] - traj[[ti - 1, di]];
            acc += step * step;
        }
    }
    acc / (t - 1) as f64
}

/// LHUC-adapt a trained inversion model to one speaker.
///
/// Supervised when every utterance carries a trajectory (and labels, if the
/// cross-entropy weight is positive); otherwise the model supervises itself
/// with its own eval-mode hypotheses. Only the speaker's LHUC vector moves;
/// shared parameters are untouched. Targets reuse the training-time
/// standardizer, never statistics of the adaptation data.
pub fn adapt_speaker(
    inv: &mut InversionModel,
    stack: Option<&MlanStack>,
    speaker: &str,
    data: &[UttData],
    train: &TrainConfig,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::Data("adaptation set is empty".into()));
    }
    let supervised = data.iter().all(|u| u.trajectory.is_some())
        && (inv.recipe.weights.ce == 0.0 || data.iter().all(|u| u.labels.is_some()));
    let recipe = inv.recipe.clone();
    let items: Vec<TrainItem> = data
        .iter()
        .map(|u| {
            let p = prepare_features(&recipe, stack, &u.features)?;
            let shift = p.frame_shift_ms();
            let (targets, labels) = if supervised {
                (
                    Some(build_targets(
                        &recipe,
                        &inv.standardizer,
                        u.trajectory.as_ref().unwrap(),
                        shift,
                    )?),
                    u.labels.clone(),
                )
            } else {
                (None, None)
            };
            Ok(TrainItem {
                features: p.into_data(),
                aux: None,
                targets,
                labels,
            })
        })
        .collect::<Result<_>>()?;
    let loss = LossSpec::Mtl {
        mdn: recipe.mdn_config(),
        weights: recipe.weights,
    };
    lhuc_adapt(&mut inv.model, speaker, &items, &loss, train, !supervised)
}
