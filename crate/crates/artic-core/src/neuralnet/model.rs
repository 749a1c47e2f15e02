//! Model structure, forward pass and backpropagation.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

/// Shape and behaviour of one hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub lhuc_enabled: bool,
}

impl LayerSpec {
    pub fn relu(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            activation: Activation::Relu,
            dropout_rate: 0.0,
            lhuc_enabled: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config("layer dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// A hidden layer's parameters: weights are `out_dim x in_dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Output heads, ordered Ce < Mdn < Regression everywhere parameters are
/// flattened or serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Ce,
    Mdn,
    Regression,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Ce => "ce",
            HeadKind::Mdn => "mdn",
            HeadKind::Regression => "regression",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "ce" => Some(HeadKind::Ce),
            "mdn" => Some(HeadKind::Mdn),
            "regression" => Some(HeadKind::Regression),
            _ => None,
        }
    }
}

/// An affine output head reading the last hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Auxiliary features concatenated onto the input of hidden layer `layer`;
/// layer 0 is plain input-level fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AuxInput {
    pub layer: usize,
    pub dim: usize,
}

/// Everything needed to build a model, minus the seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub heads: Vec<(HeadKind, usize)>,
    pub bottleneck_tap: Option<usize>,
    pub aux_input: Option<AuxInput>,
}

/// Feed-forward model with named heads, optional bottleneck tap and
/// per-speaker LHUC scaling vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    heads: BTreeMap<HeadKind, Head>,
    bottleneck_tap: Option<usize>,
    aux_input: Option<AuxInput>,
    // speaker id -> one alpha vector per lhuc-enabled layer, in layer order.
    lhuc: BTreeMap<String, Vec<Array1<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl MlpModel {
    /// Build a model with seeded He-uniform weights and zero biases.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        if spec.layers.is_empty() {
            return Err(Error::Config("model needs at least one hidden layer".into()));
        }
        for ls in &spec.layers {
            ls.validate()?;
        }
        if let Some(aux) = spec.aux_input {
            if aux.layer >= spec.layers.len() {
                return Err(Error::Config(format!(
                    "aux input attaches to layer {} of {}",
                    aux.layer,
                    spec.layers.len()
                )));
            }
            if aux.dim == 0 {
                return Err(Error::Config("aux input dim must be positive".into()));
            }
        }
        for i in 1..spec.layers.len() {
            let expected = spec.layers[i - 1].out_dim
                + match spec.aux_input {
                    Some(aux) if aux.layer == i => aux.dim,
                    _ => 0,
                };
            if spec.layers[i].in_dim != expected {
                return Err(Error::Config(format!(
                    "layer {i} expects in_dim {expected}, got {}",
                    spec.layers[i].in_dim
                )));
            }
        }
        if let Some(tap) = spec.bottleneck_tap {
            if tap >= spec.layers.len() {
                return Err(Error::Config(format!(
                    "bottleneck tap {tap} out of range for {} layers",
                    spec.layers.len()
                )));
            }
        }
        let hidden_width = spec.layers.last().unwrap().out_dim;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |out: usize, fan_in: usize| -> (Array2<f64>, Array1<f64>) {
            let limit = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((out, fan_in), |_| {
                (rng.random::<f64>() * 2.0 - 1.0) * limit
            });
            (w, Array1::zeros(out))
        };

        let layers = spec
            .layers
            .iter()
            .map(|ls| {
                let (w, b) = init(ls.out_dim, ls.in_dim);
                Layer { spec: *ls, w, b }
            })
            .collect();

        let mut heads = BTreeMap::new();
        let mut sorted_heads = spec.heads.clone();
        sorted_heads.sort_by_key(|(k, _)| *k);
        for (kind, out_dim) in sorted_heads {
            if out_dim == 0 {
                return Err(Error::Config("head out_dim must be positive".into()));
            }
            if heads.contains_key(&kind) {
                return Err(Error::Config(format!("duplicate head {}", kind.name())));
            }
            let (w, b) = init(out_dim, hidden_width);
            heads.insert(kind, Head { w, b });
        }

        Ok(MlpModel {
            layers,
            heads,
            bottleneck_tap: spec.bottleneck_tap,
            aux_input: spec.aux_input,
            lhuc: BTreeMap::new(),
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn heads(&self) -> &BTreeMap<HeadKind, Head> {
        &self.heads
    }

    pub fn head(&self, kind: HeadKind) -> Result<&Head> {
        self.heads
            .get(&kind)
            .ok_or_else(|| Error::Config(format!("model has no {} head", kind.name())))
    }

    pub fn bottleneck_tap(&self) -> Option<usize> {
        self.bottleneck_tap
    }

    pub fn aux_input(&self) -> Option<AuxInput> {
        self.aux_input
    }

    /// External input width (aux features excluded).
    pub fn input_dim(&self) -> usize {
        let first = self.layers[0].spec.in_dim;
        match self.aux_input {
            Some(aux) if aux.layer == 0 => first - aux.dim,
            _ => first,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers.last().unwrap().spec.out_dim
    }

    /// Reconstruct the spec this model was built from.
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            layers: self.layers.iter().map(|l| l.spec).collect(),
            heads: self
                .heads
                .iter()
                .map(|(&kind, head)| (kind, head.b.len()))
                .collect(),
            bottleneck_tap: self.bottleneck_tap,
            aux_input: self.aux_input,
        }
    }

    /// Replace one layer's parameters; shapes must match.
    pub fn set_layer(&mut self, idx: usize, w: Array2<f64>, b: Array1<f64>) -> Result<()> {
        let layer = self
            .layers
            .get_mut(idx)
            .ok_or_else(|| Error::Config(format!("no layer {idx}")))?;
        if w.dim() != layer.w.dim() || b.len() != layer.b.len() {
            return Err(Error::Config("layer parameter shape mismatch".into()));
        }
        layer.w = w;
        layer.b = b;
        Ok(())
    }

    /// Replace one head's parameters; shapes must match.
    pub fn set_head(&mut self, kind: HeadKind, w: Array2<f64>, b: Array1<f64>) -> Result<()> {
        let head = self
            .heads
            .get_mut(&kind)
            .ok_or_else(|| Error::Config(format!("model has no {} head", kind.name())))?;
        if w.dim() != head.w.dim() || b.len() != head.b.len() {
            return Err(Error::Config("head parameter shape mismatch".into()));
        }
        head.w = w;
        head.b = b;
        Ok(())
    }

    /// Indices of lhuc-enabled layers, in layer order.
    pub fn lhuc_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.spec.lhuc_enabled)
            .map(|(i, _)| i)
            .collect()
    }

    /// Create zero LHUC vectors for a speaker (identity scaling).
    pub fn register_speaker(&mut self, id: &str) -> Result<()> {
        let lhuc_layers = self.lhuc_layers();
        if lhuc_layers.is_empty() {
            return Err(Error::Config("model has no lhuc-enabled layers".into()));
        }
        self.lhuc.entry(id.to_string()).or_insert_with(|| {
            lhuc_layers
                .iter()
                .map(|&i| Array1::zeros(self.layers[i].spec.out_dim))
                .collect()
        });
        Ok(())
    }

    pub fn speakers(&self) -> impl Iterator<Item = &str> {
        self.lhuc.keys().map(|s| s.as_str())
    }

    pub fn lhuc_alphas(&self, id: &str) -> Result<&[Array1<f64>]> {
        self.lhuc
            .get(id)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Adaptation(format!("unknown speaker {id}")))
    }

    pub fn set_lhuc_alphas(&mut self, id: &str, alphas: Vec<Array1<f64>>) -> Result<()> {
        let lhuc_layers = self.lhuc_layers();
        if alphas.len() != lhuc_layers.len() {
            return Err(Error::Adaptation(format!(
                "expected {} alpha vectors, got {}",
                lhuc_layers.len(),
                alphas.len()
            )));
        }
        for (&li, a) in lhuc_layers.iter().zip(&alphas) {
            if a.len() != self.layers[li].spec.out_dim {
                return Err(Error::Adaptation(format!(
                    "alpha length {} does not match layer {li} width {}",
                    a.len(),
                    self.layers[li].spec.out_dim
                )));
            }
        }
        self.lhuc.insert(id.to_string(), alphas);
        Ok(())
    }

    /// Run the network. `aux` is mandatory exactly when the model was built
    /// with an aux input; `speaker` applies that speaker's LHUC scaling.
    pub fn forward(
        &self,
        x: &Array2<f64>,
        aux: Option<&Array2<f64>>,
        speaker: Option<&str>,
        mode: Mode,
    ) -> Result<Forward> {
        let t = x.nrows();
        if x.ncols() != self.input_dim() {
            return Err(Error::Data(format!(
                "input width {} does not match model input dim {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        match (self.aux_input, aux) {
            (Some(a), Some(m)) => {
                if m.dim() != (t, a.dim) {
                    return Err(Error::Data(format!(
                        "aux input {:?} does not match expected {t}x{}",
                        m.dim(),
                        a.dim
                    )));
                }
            }
            (Some(_), None) => {
                return Err(Error::Data("model requires an aux input matrix".into()))
            }
            (None, Some(_)) => {
                return Err(Error::Data("model takes no aux input".into()))
            }
            (None, None) => {}
        }
        let alphas = match speaker {
            Some(id) => Some(
                self.lhuc
                    .get(id)
                    .ok_or_else(|| Error::Adaptation(format!("unknown speaker {id}")))?,
            ),
            None => None,
        };

        let mut rng = match mode {
            Mode::Train { rng } => Some(rng),
            Mode::Eval => None,
        };
        let train = rng.is_some();

        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut acts = Vec::with_capacity(n_layers);
        let mut lhuc_r: Vec<Option<Array1<f64>>> = vec![None; n_layers];
        let mut masks: Vec<Option<Array2<f64>>> = vec![None; n_layers];

        let mut h = x.clone();
        let mut lhuc_slot = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            if let (Some(ai), Some(m)) = (self.aux_input, aux) {
                if ai.layer == i {
                    h = ndarray::concatenate(ndarray::Axis(1), &[h.view(), m.view()])
                        .expect("frame counts already checked");
                }
            }
            let z = h.dot(&layer.w.t()) + &layer.b;
            let mut a = match layer.spec.activation {
                Activation::Relu => z.mapv(|v| v.max(0.0)),
                Activation::Tanh => z.mapv(f64::tanh),
                Activation::Linear => z,
            };
            inputs.push(h);
            acts.push(a.clone());

            if layer.spec.lhuc_enabled {
                if let Some(alphas) = alphas {
                    let r = alphas[lhuc_slot].mapv(|al| 2.0 * sigmoid(al));
                    a = a * &r;
                    lhuc_r[i] = Some(r);
                }
                lhuc_slot += 1;
            }
            if train && layer.spec.dropout_rate > 0.0 {
                let keep = 1.0 - layer.spec.dropout_rate;
                let rng = rng.as_mut().unwrap();
                // Inverted dropout: surviving units are scaled by 1/keep so
                // eval-mode forward needs no rescaling.
                let mask = Array2::from_shape_fn(a.dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                a = a * &mask;
                masks[i] = Some(mask);
            }
            h = a;
        }

        let mut heads = BTreeMap::new();
        for (&kind, head) in &self.heads {
            heads.insert(kind, h.dot(&head.w.t()) + &head.b);
        }

        Ok(Forward {
            heads,
            cache: ForwardCache {
                speaker: speaker.map(|s| s.to_string()),
                inputs,
                acts,
                lhuc_r,
                masks,
                hidden: h,
            },
        })
    }

    /// Backpropagate per-head output gradients into parameter gradients.
    /// Heads absent from `head_grads` contribute nothing. When the cached
    /// forward ran with a speaker, gradients for that speaker's LHUC alphas
    /// are produced as well.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        head_grads: &BTreeMap<HeadKind, Array2<f64>>,
    ) -> Result<Gradients> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Internal(
                "forward cache does not match model topology".into(),
            ));
        }
        let t = cache.hidden.nrows();
        let mut g_hidden: Array2<f64> = Array2::zeros(cache.hidden.dim());
        let mut head_out = BTreeMap::new();
        for (&kind, head) in &self.heads {
            let grad = match head_grads.get(&kind) {
                Some(g) => {
                    if g.dim() != (t, head.b.len()) {
                        return Err(Error::Internal(format!(
                            "gradient for {} head has shape {:?}, expected {}x{}",
                            kind.name(),
                            g.dim(),
                            t,
                            head.b.len()
                        )));
                    }
                    g_hidden = g_hidden + g.dot(&head.w);
                    ParamGrad {
                        w: g.t().dot(&cache.hidden),
                        b: g.sum_axis(ndarray::Axis(0)),
                    }
                }
                None => ParamGrad {
                    w: Array2::zeros(head.w.dim()),
                    b: Array1::zeros(head.b.len()),
                },
            };
            head_out.insert(kind, grad);
        }
        for kind in head_grads.keys() {
            if !self.heads.contains_key(kind) {
                return Err(Error::Internal(format!(
                    "gradient supplied for missing {} head",
                    kind.name()
                )));
            }
        }

        let lhuc_layers = self.lhuc_layers();
        let speaker_alphas = match &cache.speaker {
            Some(id) => Some(
                self.lhuc
                    .get(id)
                    .ok_or_else(|| Error::Adaptation(format!("unknown speaker {id}")))?,
            ),
            None => None,
        };
        let mut lhuc_grads: Option<Vec<Array1<f64>>> = speaker_alphas.map(|alphas| {
            alphas
                .iter()
                .map(|a| Array1::zeros(a.len()))
                .collect::<Vec<_>>()
        });

        let mut layer_grads = vec![
            ParamGrad {
                w: Array2::zeros((0, 0)),
                b: Array1::zeros(0),
            };
            self.layers.len()
        ];
        let mut g = g_hidden;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if let Some(mask) = &cache.masks[i] {
                g = g * mask;
            }
            if let Some(r) = &cache.lhuc_r[i] {
                if let (Some(lg), Some(alphas)) = (lhuc_grads.as_mut(), speaker_alphas) {
                    let slot = lhuc_layers
                        .iter()
                        .position(|&li| li == i)
                        .expect("lhuc_r only set on lhuc-enabled layers");
                    let alpha = &alphas[slot];
                    for j in 0..r.len() {
                        let s = sigmoid(alpha[j]);
                        let dr = 2.0 * s * (1.0 - s);
                        let mut acc = 0.0;
                        for ti in 0..t {
                            acc += g[[ti, j]] * cache.acts[i][[ti, j]];
                        }
                        lg[slot][j] = acc * dr;
                    }
                }
                g = g * r;
            }
            // Both derivatives are functions of the cached activation value.
            match layer.spec.activation {
                Activation::Relu => g.zip_mut_with(&cache.acts[i], |gv, &av| {
                    if av <= 0.0 {
                        *gv = 0.0;
                    }
                }),
                Activation::Tanh => {
                    g.zip_mut_with(&cache.acts[i], |gv, &av| *gv *= 1.0 - av * av)
                }
                Activation::Linear => {}
            }
            layer_grads[i] = ParamGrad {
                w: g.t().dot(&cache.inputs[i]),
                b: g.sum_axis(ndarray::Axis(0)),
            };
            if i > 0 {
                let mut g_prev = g.dot(&layer.w);
                if let Some(aux) = self.aux_input {
                    if aux.layer == i {
                        // The aux block is an input, not a parameter path.
                        g_prev = g_prev
                            .slice(ndarray::s![.., 0..g_prev.ncols() - aux.dim])
                            .to_owned();
                    }
                }
                g = g_prev;
            }
        }

        Ok(Gradients {
            layers: layer_grads,
            heads: head_out,
            lhuc: lhuc_grads,
        })
    }

    /// Bottleneck features at the tapped layer: eval-mode, speaker-free
    /// post-activation outputs.
    pub fn extract_bottleneck(&self, fm: &FeatureMatrix) -> Result<FeatureMatrix> {
        let tap = self
            .bottleneck_tap
            .ok_or_else(|| Error::Config("model has no bottleneck tap".into()))?;
        let fwd = self.forward(fm.data(), None, None, Mode::Eval)?;
        // Without dropout and LHUC the cached activation is the layer output.
        let data = fwd.cache.acts[tap].clone();
        FeatureMatrix::new(data, fm.frame_shift_ms(), FeatureKind::Bottleneck)
    }

    /// Number of weight/bias parameters (LHUC excluded).
    pub fn param_count(&self) -> usize {
        let layers: usize = self.layers.iter().map(|l| l.w.len() + l.b.len()).sum();
        let heads: usize = self.heads.values().map(|h| h.w.len() + h.b.len()).sum();
        layers + heads
    }

    /// Flatten parameters in the canonical order: each layer's weights
    /// (row-major) then bias, then each head in `HeadKind` order likewise.
    pub fn flat_params(&self) -> Array1<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        for h in self.heads.values() {
            out.extend(h.w.iter());
            out.extend(h.b.iter());
        }
        Array1::from_vec(out)
    }

    pub fn set_flat_params(&mut self, p: &Array1<f64>) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::Internal(format!(
                "flat parameter vector length {} does not match model {}",
                p.len(),
                self.param_count()
            )));
        }
        let mut idx = 0;
        let take = |dst: &mut f64, src: &Array1<f64>, idx: &mut usize| {
            *dst = src[*idx];
            *idx += 1;
        };
        for l in &mut self.layers {
            for v in l.w.iter_mut() {
                take(v, p, &mut idx);
            }
            for v in l.b.iter_mut() {
                take(v, p, &mut idx);
            }
        }
        for h in self.heads.values_mut() {
            for v in h.w.iter_mut() {
                take(v, p, &mut idx);
            }
            for v in h.b.iter_mut() {
                take(v, p, &mut idx);
            }
        }
        Ok(())
    }

    /// Flatten a gradient set in the same order as [`flat_params`].
    pub fn flatten_grads(&self, g: &Gradients) -> Result<Array1<f64>> {
        if g.layers.len() != self.layers.len() || g.heads.len() != self.heads.len() {
            return Err(Error::Internal("gradient/model layout mismatch".into()));
        }
        let mut out = Vec::with_capacity(self.param_count());
        for lg in &g.layers {
            out.extend(lg.w.iter());
            out.extend(lg.b.iter());
        }
        for (kind, hg) in &g.heads {
            if !self.heads.contains_key(kind) {
                return Err(Error::Internal("gradient names a missing head".into()));
            }
            out.extend(hg.w.iter());
            out.extend(hg.b.iter());
        }
        Ok(Array1::from_vec(out))
    }

    /// Total LHUC parameter count per speaker.
    pub fn lhuc_param_count(&self) -> usize {
        self.lhuc_layers()
            .iter()
            .map(|&i| self.layers[i].spec.out_dim)
            .sum()
    }

    pub fn lhuc_flat(&self, id: &str) -> Result<Array1<f64>> {
        let alphas = self.lhuc_alphas(id)?;
        let mut out = Vec::with_capacity(self.lhuc_param_count());
        for a in alphas {
            out.extend(a.iter());
        }
        Ok(Array1::from_vec(out))
    }

    pub fn set_lhuc_flat(&mut self, id: &str, p: &Array1<f64>) -> Result<()> {
        if p.len() != self.lhuc_param_count() {
            return Err(Error::Adaptation(format!(
                "lhuc vector length {} does not match model {}",
                p.len(),
                self.lhuc_param_count()
            )));
        }
        let alphas = self
            .lhuc
            .get_mut(id)
            .ok_or_else(|| Error::Adaptation(format!("unknown speaker {id}")))?;
        let mut idx = 0;
        for a in alphas {
            for v in a.iter_mut() {
                *v = p[idx];
                idx += 1;
            }
        }
        Ok(())
    }
}

/// Forward execution mode; training needs the RNG for dropout.
pub enum Mode<'a> {
    Train { rng: &'a mut ChaCha8Rng },
    Eval,
}

/// Head outputs plus the cache consumed by [`MlpModel::backward`].
pub struct Forward {
    pub heads: BTreeMap<HeadKind, Array2<f64>>,
    pub cache: ForwardCache,
}

/// Per-layer activations recorded during a forward pass.
pub struct ForwardCache {
    speaker: Option<String>,
    // Input to each layer after aux concatenation.
    inputs: Vec<Array2<f64>>,
    // Post-activation outputs before LHUC scaling and dropout.
    acts: Vec<Array2<f64>>,
    lhuc_r: Vec<Option<Array1<f64>>>,
    masks: Vec<Option<Array2<f64>>>,
    hidden: Array2<f64>,
}

impl ForwardCache {
    pub fn hidden(&self) -> &Array2<f64> {
        &self.hidden
    }

    pub fn frames(&self) -> usize {
        self.hidden.nrows()
    }
}

/// Gradient of one affine block, laid out like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Gradients for every trainable tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ParamGrad>,
    pub heads: BTreeMap<HeadKind, ParamGrad>,
    // Alpha gradients for the forward pass speaker, one per lhuc layer.
    pub lhuc: Option<Vec<Array1<f64>>>,
}

impl Gradients {
    pub fn lhuc_flat(&self) -> Option<Array1<f64>> {
        self.lhuc.as_ref().map(|gs| {
            let mut out = Vec::new();
            for g in gs {
                out.extend(g.iter());
            }
            Array1::from_vec(out)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn simple_spec(in_dim: usize, hidden: usize, heads: Vec<(HeadKind, usize)>) -> ModelSpec {
        ModelSpec {
            layers: vec![
                LayerSpec::relu(in_dim, hidden),
                LayerSpec::relu(hidden, hidden),
            ],
            heads,
            bottleneck_tap: None,
            aux_input: None,
        }
    }

    #[test]
    fn zeroed_linear_layer_outputs_zero() {
        let spec = ModelSpec {
            layers: vec![LayerSpec {
                in_dim: 3,
                out_dim: 2,
                activation: Activation::Linear,
                dropout_rate: 0.0,
                lhuc_enabled: false,
            }],
            heads: vec![(HeadKind::Regression, 2)],
            bottleneck_tap: None,
            aux_input: None,
        };
        let mut m = MlpModel::new(&spec, 1).unwrap();
        m.set_layer(0, Array2::zeros((2, 3)), Array1::zeros(2)).unwrap();
        m.set_head(HeadKind::Regression, Array2::zeros((2, 2)), Array1::zeros(2))
            .unwrap();
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.0, -1.0]];
        let out = m.forward(&x, None, None, Mode::Eval).unwrap();
        assert!(out.heads[&HeadKind::Regression].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_matmul_oracle() {
        let spec = simple_spec(4, 5, vec![(HeadKind::Regression, 3)]);
        let m = MlpModel::new(&spec, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((6, 4), |_| rng.random::<f64>() * 2.0 - 1.0);
        let out = m.forward(&x, None, None, Mode::Eval).unwrap();

        // Straight-line recomputation with explicit loops.
        let mut expect = Array2::zeros((6, 3));
        for t in 0..6 {
            let mut h: Vec<f64> = (0..5)
                .map(|j| {
                    let mut z = m.layers()[0].b[j];
                    for k in 0..4 {
                        z += m.layers()[0].w[[j, k]] * x[[t, k]];
                    }
                    z.max(0.0)
                })
                .collect();
            h = (0..5)
                .map(|j| {
                    let mut z = m.layers()[1].b[j];
                    for k in 0..5 {
                        z += m.layers()[1].w[[j, k]] * h[k];
                    }
                    z.max(0.0)
                })
                .collect();
            let head = &m.heads()[&HeadKind::Regression];
            for j in 0..3 {
                let mut z = head.b[j];
                for k in 0..5 {
                    z += head.w[[j, k]] * h[k];
                }
                expect[[t, j]] = z;
            }
        }
        for (a, b) in out.heads[&HeadKind::Regression].iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lhuc_zero_alpha_is_bitwise_identity() {
        let mut spec = simple_spec(3, 4, vec![(HeadKind::Regression, 2)]);
        spec.layers[0].lhuc_enabled = true;
        spec.layers[1].lhuc_enabled = true;
        let mut m = MlpModel::new(&spec, 7).unwrap();
        m.register_speaker("spk").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((5, 3), |_| rng.random::<f64>() * 4.0 - 2.0);
        let plain = m.forward(&x, None, None, Mode::Eval).unwrap();
        let scaled = m.forward(&x, None, Some("spk"), Mode::Eval).unwrap();
        let a = &plain.heads[&HeadKind::Regression];
        let b = &scaled.heads[&HeadKind::Regression];
        assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn unknown_speaker_is_an_adaptation_error() {
        let mut spec = simple_spec(3, 4, vec![(HeadKind::Regression, 2)]);
        spec.layers[0].lhuc_enabled = true;
        let m = MlpModel::new(&spec, 7).unwrap();
        let x = Array2::zeros((2, 3));
        assert!(matches!(
            m.forward(&x, None, Some("ghost"), Mode::Eval),
            Err(Error::Adaptation(_))
        ));
    }

    #[test]
    fn input_width_mismatch_is_a_data_error() {
        let m = MlpModel::new(&simple_spec(3, 4, vec![(HeadKind::Ce, 2)]), 0).unwrap();
        let x = Array2::zeros((2, 5));
        assert!(matches!(
            m.forward(&x, None, None, Mode::Eval),
            Err(Error::Data(_))
        ));
    }

    /// Scalar loss = sum of all head outputs; FD over flat parameters.
    fn fd_flat_grad(m: &MlpModel, x: &Array2<f64>, aux: Option<&Array2<f64>>) -> Array1<f64> {
        let h = 1e-5;
        let p0 = m.flat_params();
        let mut g = Array1::zeros(p0.len());
        let mut probe = m.clone();
        for i in 0..p0.len() {
            let mut p = p0.clone();
            p[i] += h;
            probe.set_flat_params(&p).unwrap();
            let fp: f64 = probe
                .forward(x, aux, None, Mode::Eval)
                .unwrap()
                .heads
                .values()
                .map(|o| o.sum())
                .sum();
            p[i] -= 2.0 * h;
            probe.set_flat_params(&p).unwrap();
            let fm: f64 = probe
                .forward(x, aux, None, Mode::Eval)
                .unwrap()
                .heads
                .values()
                .map(|o| o.sum())
                .sum();
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Array1<f64>, b: &Array1<f64>, tol: f64) {
        for (i, (x, y)) in a.iter().zip(b.iter()).enumerate() {
            let scale = 1.0 + x.abs().max(y.abs());
            assert!((x - y).abs() / scale <= tol, "index {i}: {x} vs {y}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let spec = ModelSpec {
            layers: vec![
                LayerSpec::relu(4, 6),
                LayerSpec {
                    activation: Activation::Tanh,
                    ..LayerSpec::relu(6, 5)
                },
            ],
            heads: vec![(HeadKind::Regression, 3), (HeadKind::Ce, 4)],
            bottleneck_tap: None,
            aux_input: None,
        };
        let m = MlpModel::new(&spec, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((6, 4), |_| rng.random::<f64>() * 2.0 - 1.0);
        let fwd = m.forward(&x, None, None, Mode::Eval).unwrap();
        // d(sum of outputs)/d(output) = 1 for every head entry.
        let mut head_grads = BTreeMap::new();
        for (&kind, out) in &fwd.heads {
            head_grads.insert(kind, Array2::ones(out.dim()));
        }
        let grads = m.backward(&fwd.cache, &head_grads).unwrap();
        let analytic = m.flatten_grads(&grads).unwrap();
        let numeric = fd_flat_grad(&m, &x, None);
        assert_close(&analytic, &numeric, 1e-4);
    }

    #[test]
    fn backward_with_aux_input_matches_finite_differences() {
        let spec = ModelSpec {
            layers: vec![LayerSpec::relu(3, 5), LayerSpec::relu(5 + 2, 4)],
            heads: vec![(HeadKind::Regression, 2)],
            bottleneck_tap: None,
            aux_input: Some(AuxInput { layer: 1, dim: 2 }),
        };
        let m = MlpModel::new(&spec, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        let aux = Array2::from_shape_fn((4, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
        let fwd = m.forward(&x, Some(&aux), None, Mode::Eval).unwrap();
        let mut head_grads = BTreeMap::new();
        head_grads.insert(HeadKind::Regression, Array2::ones((4, 2)));
        let grads = m.backward(&fwd.cache, &head_grads).unwrap();
        let analytic = m.flatten_grads(&grads).unwrap();
        let numeric = fd_flat_grad(&m, &x, Some(&aux));
        assert_close(&analytic, &numeric, 1e-4);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let m = MlpModel::new(&simple_spec(3, 4, vec![(HeadKind::Regression, 2)]), 8).unwrap();
        let x = Array2::from_elem((3, 3), 0.7);
        let fwd = m.forward(&x, None, None, Mode::Eval).unwrap();
        let mut head_grads = BTreeMap::new();
        head_grads.insert(HeadKind::Regression, Array2::zeros((3, 2)));
        let grads = m.backward(&fwd.cache, &head_grads).unwrap();
        assert!(m
            .flatten_grads(&grads)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn lhuc_alpha_gradient_matches_finite_differences_at_zero() {
        let mut spec = simple_spec(3, 4, vec![(HeadKind::Regression, 2)]);
        spec.layers[1].lhuc_enabled = true;
        let mut m = MlpModel::new(&spec, 17).unwrap();
        m.register_speaker("spk").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x = Array2::from_shape_fn((5, 3), |_| rng.random::<f64>() * 2.0 - 1.0);

        let fwd = m.forward(&x, None, Some("spk"), Mode::Eval).unwrap();
        let mut head_grads = BTreeMap::new();
        head_grads.insert(HeadKind::Regression, Array2::ones((5, 2)));
        let grads = m.backward(&fwd.cache, &head_grads).unwrap();
        let analytic = grads.lhuc_flat().unwrap();

        let h = 1e-5;
        let mut numeric = Array1::zeros(m.lhuc_param_count());
        let loss = |model: &MlpModel| -> f64 {
            model
                .forward(&x, None, Some("spk"), Mode::Eval)
                .unwrap()
                .heads[&HeadKind::Regression]
                .sum()
        };
        for i in 0..numeric.len() {
            let mut probe = m.clone();
            let mut a = probe.lhuc_flat("spk").unwrap();
            a[i] += h;
            probe.set_lhuc_flat("spk", &a).unwrap();
            let fp = loss(&probe);
            a[i] -= 2.0 * h;
            probe.set_lhuc_flat("spk", &a).unwrap();
            let fm = loss(&probe);
            numeric[i] = (fp - fm) / (2.0 * h);
        }
        assert_close(&analytic, &numeric, 1e-4);
        // At alpha = 0 the scaling derivative is 2 * sigmoid'(0) = 0.5.
        assert!(analytic.iter().any(|&v| v.abs() > 1e-6));
    }

    #[test]
    fn dropout_eval_noop_and_rate_zero_noop() {
        let mut spec = simple_spec(3, 4, vec![(HeadKind::Regression, 2)]);
        spec.layers[0].dropout_rate = 0.5;
        let m = MlpModel::new(&spec, 23).unwrap();
        let x = Array2::from_elem((4, 3), 0.3);
        let a = m.forward(&x, None, None, Mode::Eval).unwrap();
        let b = m.forward(&x, None, None, Mode::Eval).unwrap();
        assert_eq!(a.heads[&HeadKind::Regression], b.heads[&HeadKind::Regression]);

        // Rate zero in train mode must equal eval output and draw no RNG.
        let spec0 = simple_spec(3, 4, vec![(HeadKind::Regression, 2)]);
        let m0 = MlpModel::new(&spec0, 23).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let train = m0
            .forward(&x, None, None, Mode::Train { rng: &mut rng })
            .unwrap();
        let eval = m0.forward(&x, None, None, Mode::Eval).unwrap();
        assert_eq!(
            train.heads[&HeadKind::Regression],
            eval.heads[&HeadKind::Regression]
        );
        assert_eq!(rng.random::<u64>(), ChaCha8Rng::seed_from_u64(0).random::<u64>());
    }

    #[test]
    fn train_mode_dropout_masks_units() {
        let mut spec = simple_spec(3, 16, vec![(HeadKind::Regression, 16)]);
        spec.layers[1].dropout_rate = 0.5;
        let mut m = MlpModel::new(&spec, 29).unwrap();
        // Identity head exposes the (masked) hidden layer directly.
        m.set_head(HeadKind::Regression, Array2::eye(16), Array1::zeros(16))
            .unwrap();
        let x = Array2::from_elem((8, 3), 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let out = m
            .forward(&x, None, None, Mode::Train { rng: &mut rng })
            .unwrap();
        let zeros = out.heads[&HeadKind::Regression]
            .iter()
            .filter(|&&v| v == 0.0)
            .count();
        assert!(zeros > 0, "expected some dropped activations");
    }

    #[test]
    fn bottleneck_extraction() {
        let spec = ModelSpec {
            layers: vec![LayerSpec::relu(4, 39), LayerSpec::relu(39, 8)],
            heads: vec![(HeadKind::Ce, 5)],
            bottleneck_tap: Some(0),
            aux_input: None,
        };
        let m = MlpModel::new(&spec, 3).unwrap();
        let fm = FeatureMatrix::new(
            Array2::from_shape_fn((6, 4), |(i, j)| (i as f64 - j as f64) * 0.2),
            10.0,
            FeatureKind::Fbk,
        )
        .unwrap();
        let bn = m.extract_bottleneck(&fm).unwrap();
        assert_eq!(bn.dim(), 39);
        assert_eq!(bn.kind(), FeatureKind::Bottleneck);
        let again = m.extract_bottleneck(&fm).unwrap();
        assert_eq!(bn.data(), again.data());

        // Oracle: ReLU of the input affine image at the tapped layer.
        let expect = fm.data().dot(&m.layers()[0].w.t()) + &m.layers()[0].b;
        for (a, b) in bn.data().iter().zip(expect.iter()) {
            assert!((a - b.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn bottleneck_requires_tap() {
        let m = MlpModel::new(&simple_spec(3, 4, vec![(HeadKind::Ce, 2)]), 0).unwrap();
        let fm = FeatureMatrix::new(Array2::zeros((2, 3)), 10.0, FeatureKind::Fbk).unwrap();
        assert!(matches!(
            m.extract_bottleneck(&fm),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn aux_at_layer_zero_equals_input_concat() {
        let spec = ModelSpec {
            layers: vec![LayerSpec::relu(5, 4)],
            heads: vec![(HeadKind::Regression, 2)],
            bottleneck_tap: None,
            aux_input: Some(AuxInput { layer: 0, dim: 2 }),
        };
        let m = MlpModel::new(&spec, 37).unwrap();
        assert_eq!(m.input_dim(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random::<f64>());
        let aux = Array2::from_shape_fn((4, 2), |_| rng.random::<f64>());
        let fused = m.forward(&x, Some(&aux), None, Mode::Eval).unwrap();

        // Same parameters exposed as a plain 5-input model.
        let plain_spec = ModelSpec {
            layers: vec![LayerSpec::relu(5, 4)],
            heads: vec![(HeadKind::Regression, 2)],
            bottleneck_tap: None,
            aux_input: None,
        };
        let mut plain = MlpModel::new(&plain_spec, 0).unwrap();
        plain.set_flat_params(&m.flat_params()).unwrap();
        let cat = ndarray::concatenate(ndarray::Axis(1), &[x.view(), aux.view()]).unwrap();
        let direct = plain.forward(&cat, None, None, Mode::Eval).unwrap();
        assert_eq!(
            fused.heads[&HeadKind::Regression],
            direct.heads[&HeadKind::Regression]
        );
    }

    #[test]
    fn flat_param_roundtrip() {
        let spec = simple_spec(3, 4, vec![(HeadKind::Ce, 2), (HeadKind::Mdn, 5)]);
        let mut m = MlpModel::new(&spec, 51).unwrap();
        let p = m.flat_params();
        assert_eq!(p.len(), m.param_count());
        let mut shifted = p.clone();
        shifted += 0.5;
        m.set_flat_params(&shifted).unwrap();
        assert_eq!(m.flat_params(), shifted);
    }
}
