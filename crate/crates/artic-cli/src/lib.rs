//! Batch command-line surface binding the inversion pipelines: data
//! synthesis, feature extraction, training, adaptation, generation,
//! evaluation and score fusion.
//!
//! Conventions shared by every subcommand:
//! - logs go to stderr; machine outputs go to files only;
//! - outputs are written atomically, so reruns overwrite cleanly;
//! - commands that take a config echo the resolved document to the run
//!   directory as `resolved-config.json`;
//! - the `--seed` flag beats the `A2A_SEED` environment variable, which
//!   beats the config file;
//! - exit codes: 0 success, 2 configuration error, 3 data/format/I-O
//!   error, 4 numeric failure.

pub mod config;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use artic_core::dataio::{
    atomic_write, load_model, read_afm, read_trj, read_wav, save_model, synth_generate,
    write_afm, write_trj, Manifest, ManifestEntry,
};
use artic_core::features::{mel_filterbank, speed_perturb, FeatureMatrix, TrajectorySet};
use artic_core::mlan::{train_stack, MlanStack};
use artic_core::neuralnet::TrainItem;
use artic_core::pipeline::{
    adapt_speaker, evaluate, invert_for, load_utterances, prepare_features, score_fusion,
    train_inversion, FrontEnd, InversionModel, InversionRecipe, Smoothing, UttData,
};
use artic_core::{Error, Result};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "artic",
    version,
    about = "Acoustic-to-articulatory inversion pipelines: synthesize corpora, extract \
             features, train and adapt inversion models, generate trajectories, evaluate \
             and fuse scores"
)]
pub struct Cli {
    /// Seed forced over both training and synthesis; beats the A2A_SEED
    /// environment variable, which beats the config file
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the seeded synthetic two-domain corpus with its manifests
    SynthGen {
        /// JSON run config; only the synth section is consulted
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Corpus directory to create
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Extract log mel filterbank features from a manifest of WAV files
    Extract {
        /// Manifest whose entries carry audio paths
        #[arg(long, value_name = "FILE")]
        wav_manifest: PathBuf,
        /// Directory for the AFM1 files and the expanded manifest
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Comma-separated speed factors; each utterance is emitted once
        /// per factor and reference paths are kept only at factor 1.0
        #[arg(long, value_name = "F1,F2,...", value_delimiter = ',')]
        speed_perturb: Option<Vec<f64>>,
        /// JSON run config; only the features.fbank section is consulted
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Train an inversion model on spliced in-domain features
    TrainInversion {
        /// JSON run config
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Training corpus; every entry needs features and a trajectory
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Output model file
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train the two-level cross-domain bottleneck stack
    TrainMlan {
        /// JSON run config
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// In-domain corpus with frame labels (level 1)
        #[arg(long, value_name = "FILE")]
        in_domain: PathBuf,
        /// Out-of-domain corpus with frame labels (level 2)
        #[arg(long, value_name = "FILE")]
        out_domain: PathBuf,
        /// Stack directory to create
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Re-express a corpus through a trained stack as bottleneck features
    MlanExtract {
        /// Stack directory written by train-mlan
        #[arg(long, value_name = "DIR")]
        stack: PathBuf,
        /// Corpus to adapt
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Directory for the bottleneck AFM1 files and their manifest
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// JSON run config; splicing and CMVN must match train-mlan
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Train an inversion model behind a cross-domain stack
    TrainInversionXdom {
        /// JSON run config
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        /// Stack directory written by train-mlan
        #[arg(long, value_name = "DIR")]
        stack: PathBuf,
        /// Training corpus; every entry needs features and a trajectory
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Output model file
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Invert a corpus of acoustic features into TRJ1 trajectories
    Invert {
        /// Trained inversion model
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Corpus to invert
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Trajectory smoothing; defaults to the config's mlpg.smoothing
        #[arg(long, value_name = "MODE")]
        smoothing: Option<SmoothingArg>,
        /// Apply this adapted speaker's LHUC scaling during generation
        #[arg(long, value_name = "SPK")]
        speaker: Option<String>,
        /// Directory for the TRJ1 files
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// JSON run config; only the mlpg section is consulted
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Adapt a model's LHUC scaling vectors to one speaker
    AdaptLhuc {
        /// Trained inversion model
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Speaker id to adapt; the manifest is filtered to it
        #[arg(long, value_name = "SPK")]
        speaker: String,
        /// Adaptation corpus
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Stack directory, required for models trained behind one
        #[arg(long, value_name = "DIR")]
        stack: Option<PathBuf>,
        /// Output model file
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// JSON run config; only the train section is consulted
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
    },
    /// Compare predicted against reference trajectories
    Evaluate {
        /// Directory of predicted .trj files
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,
        /// Directory holding a same-named .trj reference for each prediction
        #[arg(long = "ref", value_name = "DIR")]
        reference: PathBuf,
        /// JSON report to write
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
    },
    /// Log-linearly fuse two per-frame log-posterior score files
    FuseScores {
        /// Left score matrix (AFM1)
        #[arg(long, value_name = "FILE")]
        a: PathBuf,
        /// Right score matrix (AFM1)
        #[arg(long, value_name = "FILE")]
        b: PathBuf,
        /// Weight of the left scores
        #[arg(long, default_value_t = 0.5, value_name = "W", allow_negative_numbers = true)]
        wa: f64,
        /// Weight of the right scores
        #[arg(long, default_value_t = 0.5, value_name = "W", allow_negative_numbers = true)]
        wb: f64,
        /// Fused score matrix to write (AFM1)
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
}

/// CLI spelling of [`Smoothing`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SmoothingArg {
    /// MLPG over the static/delta/delta-delta streams
    Mlpg,
    /// Per-frame point estimate of the most probable component
    None,
}

impl From<SmoothingArg> for Smoothing {
    fn from(v: SmoothingArg) -> Smoothing {
        match v {
            SmoothingArg::Mlpg => Smoothing::Mlpg,
            SmoothingArg::None => Smoothing::None,
        }
    }
}

/// The exit code a failed run reports for `err`.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Adaptation(_) => 2,
        Error::Data(_) | Error::Format { .. } | Error::Io { .. } => 3,
        Error::Numeric(_) | Error::Internal(_) => 4,
    }
}

/// Execute one parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    let seed = resolve_seed(cli.seed)?;
    match &cli.command {
        Command::SynthGen { config, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            run_synth_gen(&cfg, out)
        }
        Command::Extract {
            wav_manifest,
            out,
            speed_perturb,
            config,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            run_extract(&cfg, wav_manifest, out, speed_perturb.as_deref())
        }
        Command::TrainInversion {
            config,
            manifest,
            out,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            run_train_inversion(&cfg, manifest, None, out)
        }
        Command::TrainMlan {
            config,
            in_domain,
            out_domain,
            out,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            run_train_mlan(&cfg, in_domain, out_domain, out)
        }
        Command::MlanExtract {
            stack,
            manifest,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            run_mlan_extract(&cfg, stack, manifest, out)
        }
        Command::TrainInversionXdom {
            config,
            stack,
            manifest,
            out,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            run_train_inversion(&cfg, manifest, Some(stack.as_path()), out)
        }
        Command::Invert {
            model,
            manifest,
            smoothing,
            speaker,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            run_invert(
                &cfg,
                model,
                manifest,
                smoothing.map(Smoothing::from),
                speaker.as_deref(),
                out,
            )
        }
        Command::AdaptLhuc {
            model,
            speaker,
            manifest,
            stack,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            run_adapt_lhuc(&cfg, model, speaker, manifest, stack.as_deref(), out)
        }
        Command::Evaluate {
            pred,
            reference,
            report,
        } => run_evaluate(pred, reference, report),
        Command::FuseScores { a, b, wa, wb, out } => run_fuse_scores(a, b, *wa, *wb, out),
    }
}

/// Flag beats environment beats config; a set but unparsable A2A_SEED is a
/// configuration error rather than a silent fallback.
fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("A2A_SEED") {
        Ok(text) => text.trim().parse().map(Some).map_err(|_| {
            Error::Config(format!("A2A_SEED must be an unsigned integer, got '{text}'"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::Config(format!("A2A_SEED is not readable: {e}"))),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_seed(seed);
    Ok(cfg)
}

/// Load a manifest and its referenced files, rejecting empty corpora.
fn load_corpus(path: &Path) -> Result<Vec<UttData>> {
    let manifest = Manifest::load(path)?;
    if manifest.is_empty() {
        return Err(Error::Data(format!("{}: manifest is empty", path.display())));
    }
    load_utterances(&manifest)
}

/// The directory a file output's `resolved-config.json` belongs in.
fn run_dir(out_file: &Path) -> &Path {
    match out_file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Prefix an error with the utterance it arose in, preserving the variant
/// and so the exit code. Format and I/O errors already name their path.
fn in_utt(utt_id: &str, err: Error) -> Error {
    match err {
        Error::Config(m) => Error::Config(format!("utterance {utt_id}: {m}")),
        Error::Data(m) => Error::Data(format!("utterance {utt_id}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("utterance {utt_id}: {m}")),
        Error::Adaptation(m) => Error::Adaptation(format!("utterance {utt_id}: {m}")),
        Error::Internal(m) => Error::Internal(format!("utterance {utt_id}: {m}")),
        other => other,
    }
}

fn absolute_opt(path: &Option<PathBuf>) -> Result<Option<PathBuf>> {
    match path {
        Some(p) => Ok(Some(p.canonicalize().map_err(|e| Error::io(p, e))?)),
        None => Ok(None),
    }
}

const STACK_LEVEL1: &str = "dnn1.a2am";
const STACK_LEVEL2: &str = "dnn2.a2am";

/// A stack directory holds one model file per level; the fingerprint in the
/// metadata is advisory, [`MlanStack::new`] revalidates the topology.
pub fn save_stack(dir: &Path, stack: &MlanStack) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = |role: &str| {
        serde_json::json!({ "role": role, "stack_id": stack.stack_id() })
    };
    save_model(&dir.join(STACK_LEVEL1), stack.dnn1(), &meta("mlan-dnn1"))?;
    save_model(&dir.join(STACK_LEVEL2), stack.dnn2(), &meta("mlan-dnn2"))
}

pub fn load_stack(dir: &Path) -> Result<MlanStack> {
    let (dnn1, _) = load_model(&dir.join(STACK_LEVEL1))?;
    let (dnn2, _) = load_model(&dir.join(STACK_LEVEL2))?;
    MlanStack::new(dnn1, dnn2)
}

fn run_synth_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let manifest = synth_generate(&cfg.synth, out)?;
    cfg.echo(out)?;
    eprintln!(
        "generated {} utterances into {}",
        manifest.len(),
        out.display()
    );
    Ok(())
}

fn run_extract(
    cfg: &RunConfig,
    wav_manifest: &Path,
    out: &Path,
    factors: Option<&[f64]>,
) -> Result<()> {
    let expand = factors.is_some();
    let factors: Vec<f64> = factors.map_or_else(|| vec![1.0], <[f64]>::to_vec);
    if factors.is_empty() {
        return Err(Error::Config("--speed-perturb needs at least one factor".into()));
    }
    for (i, &f) in factors.iter().enumerate() {
        if !f.is_finite() || f <= 0.0 {
            return Err(Error::Config(format!("speed factor must be positive, got {f}")));
        }
        if factors[..i].contains(&f) {
            return Err(Error::Config(format!("duplicate speed factor {f}")));
        }
    }
    let manifest = Manifest::load(wav_manifest)?;
    if manifest.is_empty() {
        return Err(Error::Data(format!("{}: manifest is empty", wav_manifest.display())));
    }
    cfg.echo(out)?;

    let mut entries = Vec::with_capacity(manifest.len() * factors.len());
    for e in &manifest.entries {
        let audio = e.audio.as_ref().ok_or_else(|| {
            Error::Data(format!(
                "utterance {} has no audio path; extraction needs WAV input",
                e.utt_id
            ))
        })?;
        let wav = read_wav(audio)?;
        for &factor in &factors {
            let utt_id = if expand {
                format!("{}-sp{factor}", e.utt_id)
            } else {
                e.utt_id.clone()
            };
            let warped;
            let source = if factor == 1.0 {
                &wav
            } else {
                warped = speed_perturb(&wav, factor).map_err(|err| in_utt(&e.utt_id, err))?;
                &warped
            };
            let fm = mel_filterbank(source, &cfg.features.fbank)
                .map_err(|err| in_utt(&e.utt_id, err))?;
            let name = format!("{utt_id}.afm");
            write_afm(&out.join(&name), &fm)?;
            // Reference trajectories and labels live on the original time
            // axis, so they survive only the identity factor.
            let keep_refs = factor == 1.0;
            entries.push(ManifestEntry {
                utt_id,
                speaker_id: e.speaker_id.clone(),
                domain: e.domain.clone(),
                audio: None,
                features: Some(name.into()),
                trajectory: if keep_refs { absolute_opt(&e.trajectory)? } else { None },
                labels: if keep_refs { absolute_opt(&e.labels)? } else { None },
                n_frames: fm.frames(),
            });
        }
    }
    let produced = Manifest::new(entries);
    produced.save(&out.join("manifest.jsonl"))?;
    eprintln!(
        "extracted {} feature files into {}",
        produced.len(),
        out.display()
    );
    Ok(())
}

/// Shared by `train-inversion` (no stack) and `train-inversion-xdom`.
fn run_train_inversion(
    cfg: &RunConfig,
    manifest: &Path,
    stack_dir: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(manifest)?;
    let (front_end, stack) = match stack_dir {
        Some(dir) => (FrontEnd::Mlan, Some(load_stack(dir)?)),
        None => (FrontEnd::RawSpliced, None),
    };
    let recipe = cfg.recipe(front_end);
    cfg.echo(run_dir(out))?;
    let (model, report) = train_inversion(&corpus, &recipe, stack.as_ref())?;
    model.save(out)?;
    eprintln!(
        "trained on {} utterances for {} epochs, final loss {:.6} -> {}",
        corpus.len(),
        recipe.train.epochs,
        report.final_loss,
        out.display()
    );
    Ok(())
}

/// Spliced per-utterance items for stack training; labels are mandatory.
fn stack_items(
    recipe: &InversionRecipe,
    manifest: &Path,
) -> Result<(Vec<TrainItem>, usize, usize)> {
    let corpus = load_corpus(manifest)?;
    let mut items = Vec::with_capacity(corpus.len());
    let mut n_classes = 0;
    for u in &corpus {
        let labels = u.labels.clone().ok_or_else(|| {
            Error::Data(format!(
                "{}: utterance {} lacks frame labels; the stack trains on monophone targets",
                manifest.display(),
                u.utt_id
            ))
        })?;
        n_classes = n_classes.max(labels.iter().max().map_or(0, |m| m + 1));
        let feats = prepare_features(recipe, None, &u.features).map_err(|e| in_utt(&u.utt_id, e))?;
        items.push(TrainItem {
            features: feats.into_data(),
            aux: None,
            targets: None,
            labels: Some(labels),
        });
    }
    let width = items[0].features.ncols();
    Ok((items, width, n_classes))
}

fn run_train_mlan(
    cfg: &RunConfig,
    in_domain: &Path,
    out_domain: &Path,
    out: &Path,
) -> Result<()> {
    let recipe = cfg.recipe(FrontEnd::RawSpliced);
    let (in_items, in_width, c_in) = stack_items(&recipe, in_domain)?;
    let (out_items, out_width, c_out) = stack_items(&recipe, out_domain)?;
    if in_width != out_width {
        return Err(Error::Data(format!(
            "spliced widths differ: {in_width} ({}) vs {out_width} ({})",
            in_domain.display(),
            out_domain.display()
        )));
    }
    let mlan_cfg = cfg.mlan_config(in_width, c_in.max(c_out));
    cfg.echo(out)?;
    let stack = train_stack(&in_items, &out_items, &mlan_cfg, &cfg.train)?;
    save_stack(out, &stack)?;
    eprintln!(
        "trained stack {} on {}+{} utterances -> {}",
        &stack.stack_id()[..12],
        in_items.len(),
        out_items.len(),
        out.display()
    );
    Ok(())
}

fn run_mlan_extract(
    cfg: &RunConfig,
    stack_dir: &Path,
    manifest_path: &Path,
    out: &Path,
) -> Result<()> {
    let stack = load_stack(stack_dir)?;
    let manifest = Manifest::load(manifest_path)?;
    if manifest.is_empty() {
        return Err(Error::Data(format!("{}: manifest is empty", manifest_path.display())));
    }
    let corpus = load_utterances(&manifest)?;
    let recipe = cfg.recipe(FrontEnd::Mlan);
    cfg.echo(out)?;

    let mut entries = Vec::with_capacity(corpus.len());
    for (u, e) in corpus.iter().zip(&manifest.entries) {
        let bn = prepare_features(&recipe, Some(&stack), &u.features)
            .map_err(|err| in_utt(&u.utt_id, err))?;
        let name = format!("{}.afm", u.utt_id);
        write_afm(&out.join(&name), &bn)?;
        entries.push(ManifestEntry {
            utt_id: u.utt_id.clone(),
            speaker_id: u.speaker_id.clone(),
            domain: u.domain.clone(),
            audio: None,
            features: Some(name.into()),
            trajectory: absolute_opt(&e.trajectory)?,
            labels: absolute_opt(&e.labels)?,
            n_frames: bn.frames(),
        });
    }
    let produced = Manifest::new(entries);
    produced.save(&out.join("manifest.jsonl"))?;
    eprintln!(
        "adapted {} utterances through stack {} into {}",
        produced.len(),
        &stack.stack_id()[..12],
        out.display()
    );
    Ok(())
}

fn run_invert(
    cfg: &RunConfig,
    model_path: &Path,
    manifest: &Path,
    smoothing: Option<Smoothing>,
    speaker: Option<&str>,
    out: &Path,
) -> Result<()> {
    let inv = InversionModel::load(model_path)?;
    let corpus = load_corpus(manifest)?;
    let smoothing = smoothing.unwrap_or(cfg.mlpg.smoothing);
    cfg.echo(out)?;
    for u in &corpus {
        let traj =
            invert_for(&inv, &u.features, smoothing, speaker).map_err(|e| in_utt(&u.utt_id, e))?;
        write_trj(&out.join(format!("{}.trj", u.utt_id)), traj.data())?;
    }
    let mode = match smoothing {
        Smoothing::Mlpg => "mlpg",
        Smoothing::None => "none",
    };
    eprintln!(
        "inverted {} utterances with {mode} smoothing into {}",
        corpus.len(),
        out.display()
    );
    Ok(())
}

fn run_adapt_lhuc(
    cfg: &RunConfig,
    model_path: &Path,
    speaker: &str,
    manifest: &Path,
    stack_dir: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let mut inv = InversionModel::load(model_path)?;
    let stack = match stack_dir {
        Some(dir) => Some(load_stack(dir)?),
        None => None,
    };
    if let (Some(s), Some(trained)) = (&stack, inv.stack_id.as_deref()) {
        if s.stack_id() != trained {
            return Err(Error::Config(format!(
                "stack mismatch: model was trained behind {trained}, got {}",
                s.stack_id()
            )));
        }
    }
    let corpus: Vec<UttData> = load_corpus(manifest)?
        .into_iter()
        .filter(|u| u.speaker_id == speaker)
        .collect();
    if corpus.is_empty() {
        return Err(Error::Data(format!(
            "{}: no utterances for speaker {speaker}",
            manifest.display()
        )));
    }
    cfg.echo(run_dir(out))?;
    let report = adapt_speaker(&mut inv, stack.as_ref(), speaker, &corpus, &cfg.train)?;
    inv.save(out)?;
    eprintln!(
        "adapted speaker {speaker} on {} utterances, final loss {:.6} -> {}",
        corpus.len(),
        report.final_loss,
        out.display()
    );
    Ok(())
}

/// Sorted (utterance, path) pairs for every `.trj` file under `dir`.
fn trj_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|x| x.to_str()) == Some("trj") {
            let utt = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            out.push((utt, path));
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!("no .trj files under {}", dir.display())));
    }
    Ok(out)
}

fn run_evaluate(pred: &Path, reference: &Path, report_path: &Path) -> Result<()> {
    let mut predicted = Vec::new();
    let mut references = Vec::new();
    let pairs = trj_files(pred)?;
    for (utt, path) in &pairs {
        let ref_path = reference.join(format!("{utt}.trj"));
        if !ref_path.exists() {
            return Err(Error::Data(format!(
                "utterance {utt}: no reference trajectory {}",
                ref_path.display()
            )));
        }
        predicted.push(TrajectorySet::new(read_trj(path)?).map_err(|e| in_utt(utt, e))?);
        references.push(TrajectorySet::new(read_trj(&ref_path)?).map_err(|e| in_utt(utt, e))?);
    }
    let report = evaluate(&predicted, &references)?;
    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Internal(format!("report serialization: {e}")))?;
    text.push('\n');
    atomic_write(report_path, text.as_bytes())?;
    eprintln!(
        "rmse {:.4} mm, mean pearson {:.4} over {} utterances -> {}",
        report.rmse_mm,
        report.pearson_mean,
        pairs.len(),
        report_path.display()
    );
    Ok(())
}

fn run_fuse_scores(a: &Path, b: &Path, wa: f64, wb: f64, out: &Path) -> Result<()> {
    let fa = read_afm(a)?;
    let fb = read_afm(b)?;
    if fa.frame_shift_ms() != fb.frame_shift_ms() {
        return Err(Error::Data(format!(
            "frame shifts differ: {} ms ({}) vs {} ms ({})",
            fa.frame_shift_ms(),
            a.display(),
            fb.frame_shift_ms(),
            b.display()
        )));
    }
    let fused = score_fusion(fa.data(), fb.data(), wa, wb)?;
    let fm = FeatureMatrix::new(fused, fa.frame_shift_ms(), fa.kind())?;
    write_afm(out, &fm)?;
    eprintln!(
        "fused {}x{} scores with weights {wa}/{wb} -> {}",
        fm.frames(),
        fm.dim(),
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn fusion_weights_default_to_equal() {
        let cli = Cli::try_parse_from([
            "artic",
            "fuse-scores",
            "--a",
            "a.afm",
            "--b",
            "b.afm",
            "--out",
            "f.afm",
        ])
        .unwrap();
        match cli.command {
            Command::FuseScores { wa, wb, .. } => assert_eq!((wa, wb), (0.5, 0.5)),
            other => panic!("parsed {other:?}"),
        }
    }

    #[test]
    fn smoothing_values_map_onto_the_pipeline_enum() {
        assert_eq!(Smoothing::from(SmoothingArg::Mlpg), Smoothing::Mlpg);
        assert_eq!(Smoothing::from(SmoothingArg::None), Smoothing::None);
    }

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Adaptation("x".into())), 2);
        assert_eq!(exit_code(&Error::Data("x".into())), 3);
        assert_eq!(exit_code(&Error::format("f", "bad")), 3);
        assert_eq!(
            exit_code(&Error::io("f", std::io::Error::other("x"))),
            3
        );
        assert_eq!(exit_code(&Error::Numeric("x".into())), 4);
        assert_eq!(exit_code(&Error::Internal("x".into())), 4);
    }

    #[test]
    fn run_dir_falls_back_to_the_working_directory() {
        assert_eq!(run_dir(Path::new("models/m.a2am")), Path::new("models"));
        assert_eq!(run_dir(Path::new("m.a2am")), Path::new("."));
    }

    #[test]
    fn in_utt_preserves_the_exit_code() {
        for err in [
            Error::Config("c".into()),
            Error::Data("d".into()),
            Error::Numeric("n".into()),
        ] {
            let code = exit_code(&err);
            let wrapped = in_utt("spk00_utt00_a", err);
            assert_eq!(exit_code(&wrapped), code);
            assert!(wrapped.to_string().contains("spk00_utt00_a"));
        }
    }
}
