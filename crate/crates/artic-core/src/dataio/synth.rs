//! Seeded synthetic parallel corpus: a desk-scale stand-in for a real
//! two-domain articulatory dataset.
//!
//! Per utterance, an 18-dim latent trajectory is a per-dimension sum of
//! three random-phase sinusoids (periods 20-80 frames) scaled into +-10 mm.
//! Acoustics are a fixed seeded two-layer tanh map of
//! `[trajectory, speaker embedding]` into `acoustic_dim` dims plus optiona
//! noise; domain-B acoustics additionally pass through a fixed affine
//! `(A, b)`. Frame labels quantize the phase of the first sinusoid of
//! dimension 0 into `n_classes` classes.
//!
//! Every utterance draws from its own counter-derived RNG stream, so the
//! corpus is a pure function of the config and utterances can be written
//! in any order.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::{ArticulatoryLayout, FeatureKind, FeatureMatrix};

use super::formats::{write_afm, write_labels, write_trj};
use super::manifest::{Manifest, ManifestEntry};

const EMB_DIM: usize = 4;
const MAP_HIDDEN: usize = 32;
const FRAME_SHIFT_MS: f64 = 10.0;
const TRAJ_RANGE_MM: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub seed: u64,
    pub acoustic_dim: usize,
    /// Acoustic observation noise (feature units).
    pub noise_std: f64,
    /// Measurement noise added to the written reference trajectories (mm).
    /// This is the RMSE floor of any inversion model.
    pub traj_noise_std: f64,
    pub n_classes: usize,
    /// Domain-B affine: `A = domain_scale * I + domain_mix * R`,
    /// `b = domain_bias * u`, with `R`, `u` fixed random draws.
    pub domain_scale: f64,
    pub domain_mix: f64,
    pub domain_bias: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_speakers: 3,
            utts_per_speaker: 8,
            min_frames: 80,
            max_frames: 160,
            seed: 11,
            acoustic_dim: 40,
            noise_std: 0.05,
            traj_noise_std: 1.0,
            n_classes: 8,
            domain_scale: 1.1,
            domain_mix: 0.2,
            domain_bias: 0.6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 || self.utts_per_speaker == 0 {
            return Err(Error::Config("corpus must have speakers and utterances".into()));
        }
        if self.min_frames < 2 || self.min_frames > self.max_frames {
            return Err(Error::Config(format!(
                "frame range [{}, {}] invalid (need 2 <= min <= max)",
                self.min_frames, self.max_frames
            )));
        }
        if self.acoustic_dim == 0 {
            return Err(Error::Config("acoustic_dim must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("n_classes must be at least 2".into()));
        }
        for (name, v) in [
            ("noise_std", self.noise_std),
            ("traj_noise_std", self.traj_noise_std),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, v) in [
            ("domain_scale", self.domain_scale),
            ("domain_mix", self.domain_mix),
            ("domain_bias", self.domain_bias),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub utt_id: String,
    pub speaker_id: String,
    pub domain: String,
    pub features: FeatureMatrix,
    /// Reference trajectory (mm): latent plus measurement noise.
    pub trajectory: Array2<f64>,
    pub labels: Vec<usize>,
}

/// Corpus-level draws shared by all utterances: the acoustic map, the
/// speaker embeddings and the domain-B affine. Stream 0 of the seed.
struct CorpusParams {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    embeddings: Array2<f64>,
    a_mat: Array2<f64>,
    b_vec: Array1<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    (rng.random::<f64>() * 2.0 - 1.0) * scale
}

fn corpus_params(cfg: &SynthConfig) -> CorpusParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let d_in = ArticulatoryLayout::STATIC_DIM + EMB_DIM;
    let s1 = 1.5 / (d_in as f64).sqrt();
    let w1 = Array2::from_shape_fn((MAP_HIDDEN, d_in), |_| uniform(&mut rng, s1));
    let b1 = Array1::from_shape_fn(MAP_HIDDEN, |_| uniform(&mut rng, 0.5));
    let s2 = 2.0 / (MAP_HIDDEN as f64).sqrt();
    let w2 = Array2::from_shape_fn((cfg.acoustic_dim, MAP_HIDDEN), |_| uniform(&mut rng, s2));
    let b2 = Array1::from_shape_fn(cfg.acoustic_dim, |_| uniform(&mut rng, 0.5));
    let embeddings =
        Array2::from_shape_fn((cfg.n_speakers, EMB_DIM), |_| uniform(&mut rng, 1.0));
    let sm = 1.0 / (cfg.acoustic_dim as f64).sqrt();
    let mut a_mat = Array2::from_shape_fn((cfg.acoustic_dim, cfg.acoustic_dim), |_| {
        uniform(&mut rng, cfg.domain_mix * sm)
    });
    for i in 0..cfg.acoustic_dim {
        a_mat[[i, i]] += cfg.domain_scale;
    }
    let b_vec =
        Array1::from_shape_fn(cfg.acoustic_dim, |_| uniform(&mut rng, cfg.domain_bias));
    CorpusParams {
        w1,
        b1,
        w2,
        b2,
        embeddings,
        a_mat,
        b_vec,
    }
}

impl CorpusParams {
    /// Noise-free acoustics for one frame of a normalized trajectory row.
    fn map_frame(&self, traj_row: ndarray::ArrayView1<f64>, speaker: usize) -> Array1<f64> {
        let d = ArticulatoryLayout::STATIC_DIM;
        let mut input = Array1::zeros(d + EMB_DIM);
        for j in 0..d {
            input[j] = traj_row[j] / TRAJ_RANGE_MM;
        }
        for j in 0..EMB_DIM {
            input[d + j] = self.embeddings[[speaker, j]];
        }
        let h = (self.w1.dot(&input) + &self.b1).mapv(f64::tanh);
        self.w2.dot(&h) + &self.b2
    }

    fn apply_domain(&self, x: Array1<f64>) -> Array1<f64> {
        self.a_mat.dot(&x) + &self.b_vec
    }
}

fn domain_index(domain: &str) -> Result<usize> {
    match domain {
        "a" => Ok(0),
        "b" => Ok(1),
        _ => Err(Error::Config(format!("unknown domain '{domain}', expected 'a' or 'b'"))),
    }
}

/// The exact noise-free acoustic map for a given speaker and domain.
/// With `noise_std = 0` the generated corpus features equal this function
/// of the latent trajectory; exposed so tests can verify that contract.
pub fn synth_acoustics_from_trajectory(
    cfg: &SynthConfig,
    speaker: usize,
    domain: &str,
    trajectory: &Array2<f64>,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    let dom = domain_index(domain)?;
    if speaker >= cfg.n_speakers {
        return Err(Error::Config(format!(
            "speaker {speaker} out of range for {} speakers",
            cfg.n_speakers
        )));
    }
    if trajectory.ncols() != ArticulatoryLayout::STATIC_DIM {
        return Err(Error::Data(format!(
            "trajectory must have {} columns, got {}",
            ArticulatoryLayout::STATIC_DIM,
            trajectory.ncols()
        )));
    }
    let params = corpus_params(cfg);
    let mut out = Array2::zeros((trajectory.nrows(), cfg.acoustic_dim));
    for (t, row) in trajectory.rows().into_iter().enumerate() {
        let mut x = params.map_frame(row, speaker);
        if dom == 1 {
            x = params.apply_domain(x);
        }
        out.row_mut(t).assign(&x);
    }
    Ok(out)
}

/// One utterance, deterministically derived from `(speaker, utt, domain)`.
fn synth_utterance(
    cfg: &SynthConfig,
    params: &CorpusParams,
    speaker: usize,
    utt: usize,
    domain: &str,
) -> Result<SynthUtterance> {
    let dom = domain_index(domain)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let index = (speaker * cfg.utts_per_speaker + utt) * 2 + dom;
    rng.set_stream(1 + index as u64);

    let t_frames = rng.random_range(cfg.min_frames..=cfg.max_frames);
    let d = ArticulatoryLayout::STATIC_DIM;

    // Three sinusoids per dimension; the first sinusoid of dimension 0 is
    // the designated phase variable for frame labels.
    let mut periods = [[0.0; 3]; ArticulatoryLayout::STATIC_DIM];
    let mut phases = [[0.0; 3]; ArticulatoryLayout::STATIC_DIM];
    let mut weights = [[0.0; 3]; ArticulatoryLayout::STATIC_DIM];
    let mut amps = [0.0; ArticulatoryLayout::STATIC_DIM];
    for j in 0..d {
        for k in 0..3 {
            periods[j][k] = rng.random_range(20.0..80.0);
            phases[j][k] = rng.random::<f64>() * std::f64::consts::TAU;
            weights[j][k] = rng.random_range(0.5..1.0);
        }
        amps[j] = rng.random_range(0.3..1.0);
    }

    let mut clean = Array2::zeros((t_frames, d));
    for j in 0..d {
        let wsum: f64 = weights[j].iter().sum();
        for t in 0..t_frames {
            let mut s = 0.0;
            for k in 0..3 {
                s += weights[j][k]
                    * (std::f64::consts::TAU * t as f64 / periods[j][k] + phases[j][k]).sin();
            }
            clean[[t, j]] = TRAJ_RANGE_MM * amps[j] * s / wsum;
        }
    }

    let labels: Vec<usize> = (0..t_frames)
        .map(|t| {
            let theta = (std::f64::consts::TAU * t as f64 / periods[0][0] + phases[0][0])
                .rem_euclid(std::f64::consts::TAU);
            ((theta / std::f64::consts::TAU * cfg.n_classes as f64) as usize)
                .min(cfg.n_classes - 1)
        })
        .collect();

    let mut reference = clean.clone();
    if cfg.traj_noise_std > 0.0 {
        let noise = Normal::new(0.0, cfg.traj_noise_std).unwrap();
        reference.mapv_inplace(|v| v + noise.sample(&mut rng));
    }

    let mut feats = Array2::zeros((t_frames, cfg.acoustic_dim));
    let acoustic_noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).unwrap())
    } else {
        None
    };
    for t in 0..t_frames {
        let mut x = params.map_frame(clean.row(t), speaker);
        if let Some(n) = &acoustic_noise {
            x.mapv_inplace(|v| v + n.sample(&mut rng));
        }
        if dom == 1 {
            x = params.apply_domain(x);
        }
        feats.row_mut(t).assign(&x);
    }

    Ok(SynthUtterance {
        utt_id: format!("spk{speaker:02}_utt{utt:02}_{domain}"),
        speaker_id: format!("spk{speaker:02}"),
        domain: domain.to_string(),
        features: FeatureMatrix::new(feats, FRAME_SHIFT_MS, FeatureKind::Fbk)?,
        trajectory: reference,
        labels,
    })
}

/// Generate the whole corpus in memory, ordered by speaker, then domain,
/// then utterance index.
pub fn synth_items(cfg: &SynthConfig) -> Result<Vec<SynthUtterance>> {
    cfg.validate()?;
    let params = corpus_params(cfg);
    let mut out = Vec::with_capacity(cfg.n_speakers * cfg.utts_per_speaker * 2);
    for speaker in 0..cfg.n_speakers {
        for domain in ["a", "b"] {
            for utt in 0..cfg.utts_per_speaker {
                out.push(synth_utterance(cfg, &params, speaker, utt, domain)?);
            }
        }
    }
    Ok(out)
}

/// Per-speaker, per-domain split: the last quarter of utterances (rounded
/// up, at least one when a speaker has two or more) is held out for eval.
fn is_eval(cfg: &SynthConfig, utt: usize) -> bool {
    if cfg.utts_per_speaker < 2 {
        return false;
    }
    let eval_count = (cfg.utts_per_speaker / 4).max(1);
    utt >= cfg.utts_per_speaker - eval_count
}

/// Write the corpus under `out_dir`: per utterance an AFM1 feature file, a
/// TRJ1 reference trajectory and a JSON label file, plus `manifest.jsonl`
/// (everything) and per-domain train/eval manifests (`train_a.jsonl`,
/// `eval_a.jsonl`, `train_b.jsonl`, `eval_b.jsonl`). Returns the loaded
/// full manifest with resolved, validated paths.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let items = synth_items(cfg)?;

    let mut entries = Vec::with_capacity(items.len());
    for item in &items {
        let feat_name = format!("{}.afm", item.utt_id);
        let trj_name = format!("{}.trj", item.utt_id);
        let labels_name = format!("{}.labels.json", item.utt_id);
        write_afm(&out_dir.join(&feat_name), &item.features)?;
        write_trj(&out_dir.join(&trj_name), &item.trajectory)?;
        write_labels(&out_dir.join(&labels_name), &item.labels)?;
        entries.push(ManifestEntry {
            utt_id: item.utt_id.clone(),
            speaker_id: item.speaker_id.clone(),
            domain: item.domain.clone(),
            audio: None,
            features: Some(feat_name.into()),
            trajectory: Some(trj_name.into()),
            labels: Some(labels_name.into()),
            n_frames: item.features.frames(),
        });
    }
    let manifest = Manifest::new(entries);
    manifest.save(&out_dir.join("manifest.jsonl"))?;

    let utt_index = |id: &str| -> usize {
        // utt ids are "spkNN_uttMM_d"; the MM field is the utterance index.
        id.split("_utt")
            .nth(1)
            .and_then(|s| s[..2].parse().ok())
            .expect("generator-produced utt_id")
    };
    for domain in ["a", "b"] {
        for (name, eval) in [("train", false), ("eval", true)] {
            let sub = manifest.filter(|e| {
                e.domain == domain && is_eval(cfg, utt_index(&e.utt_id)) == eval
            });
            sub.save(&out_dir.join(format!("{name}_{domain}.jsonl")))?;
        }
    }
    Manifest::load(&out_dir.join("manifest.jsonl"))
}
