//! `esk`: command-line front end for the escalation detection pipeline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use esk_core::dataset_io::{load_manifest, read_wav, synth_dataset, write_wav, Manifest, Split, SynthSpec};
use esk_core::embeddings::{
    encode_embeddings_bulk, extract_embedding, load_embeddings, save_embeddings, EmbeddingSource, EmbeddingVector,
};
use esk_core::features::{write_features, FeatureExtractor, FeatureKind};
use esk_core::fusion::{early_fuse, load_predictions, save_predictions, vote_predictions, FusionMode};
use esk_core::metrics::evaluate;
use esk_core::pipeline::{
    clip_features, finetune_network, history_csv, label_count, manifest_features, pretrain_network, run_pipeline,
    write_feature_set, ExperimentConfig,
};
use esk_core::svm::{load_svm, save_svm, svm_predict, svm_train, SvmConfig};
use esk_core::tinynet::{load_model, save_model, NetModel, TrainHistory};
use esk_core::vad::{classify_frames, filter_voiced, VadConfig};

#[derive(Parser)]
#[command(name = "esk", version, about = "Acoustic escalation detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pitch-class dataset with a manifest.
    Synth(SynthArgs),
    /// Drop unvoiced frames from a WAV file.
    Vad(VadArgs),
    /// Extract MFCC or log-mel features for one clip or a whole manifest.
    Features(FeaturesArgs),
    /// Train a network on the pretraining manifest of a config.
    Pretrain(TrainArgs),
    /// Fine-tune a pretrained network (or train from scratch) on the config manifest.
    Finetune(FinetuneArgs),
    /// Dump pooled embeddings for every clip in a manifest.
    Embed(EmbedArgs),
    /// Train the one-vs-rest linear SVM on the train split.
    SvmTrain(SvmTrainArgs),
    /// Predict labels with a trained SVM.
    Predict(PredictArgs),
    /// Score predictions against manifest labels.
    Eval(EvalArgs),
    /// Fuse systems by vote (predictions) or concat/mean (embeddings).
    Fuse(FuseArgs),
    /// Run the full pipeline with stage caching.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    duration: f64,
    #[arg(long, default_value_t = 16000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200.0)]
    base_hz: f64,
    #[arg(long, default_value_t = 0.0)]
    offset_hz: f64,
    #[arg(long, default_value_t = 0.6)]
    train_frac: f64,
    #[arg(long, default_value_t = 0.2)]
    devel_frac: f64,
}

#[derive(Args)]
struct VadArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    mode: u8,
    #[arg(long, default_value_t = 30)]
    frame_ms: u32,
    #[arg(long, default_value_t = 2)]
    hangover: usize,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Single WAV input; requires `--out`.
    #[arg(long = "in", conflicts_with = "manifest", required_unless_present = "manifest", requires = "out")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest input; requires `--out-dir`.
    #[arg(long, requires = "out_dir")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Overrides the config's feature kind.
    #[arg(long)]
    kind: Option<FeatureKind>,
    /// Feature and VAD settings; defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Skip voice activity detection.
    #[arg(long)]
    no_vad: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss and devel UAR as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Pretrained model whose body is reused; omit to train from scratch.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the binary bulk format instead of CSV.
    #[arg(long)]
    bulk: bool,
}

#[derive(Args)]
struct SvmTrainArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long = "C", default_value_t = 1.0)]
    c: f64,
    #[arg(long)]
    out: PathBuf,
    /// Z-score every dimension with train-split statistics.
    #[arg(long)]
    standardize: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defaults to the largest manifest label plus one.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    svm: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Restrict to one split of this manifest.
    #[arg(long, requires = "split")]
    manifest: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    split: Option<Split>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Manifest carrying the true labels.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    mode: FusionMode,
    /// Prediction CSVs for vote, in priority order.
    #[arg(long, num_args = 2.., required_if_eq("mode", "vote"))]
    pred: Vec<PathBuf>,
    /// Embedding CSVs for concat or mean.
    #[arg(long, num_args = 2.., conflicts_with = "pred")]
    embeddings: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Vad(a) => vad(a),
        Command::Features(a) => features(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Finetune(a) => finetune(a),
        Command::Embed(a) => embed(a),
        Command::SvmTrain(a) => svm_train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Fuse(a) => fuse(a),
        Command::Run(a) => run(a),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Config used for feature settings when none is given.
fn default_config() -> ExperimentConfig {
    ExperimentConfig::new("manifest.csv", ".")
}

fn write_text(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_per_class: a.per_class,
        n_classes: a.classes,
        duration_s: a.duration,
        sample_rate: a.sample_rate,
        seed: a.seed,
        base_hz: a.base_hz,
        offset_hz: a.offset_hz,
        train_frac: a.train_frac,
        devel_frac: a.devel_frac,
    };
    let m = synth_dataset(&spec, &a.out)?;
    println!("wrote {} clips and {}", m.len(), a.out.join("manifest.csv").display());
    Ok(())
}

fn vad(a: VadArgs) -> Result<()> {
    let cfg = VadConfig {
        mode: a.mode,
        frame_ms: a.frame_ms,
        hangover_frames: a.hangover,
        ..VadConfig::default()
    };
    let clip = read_wav(&a.input)?;
    let decisions = classify_frames(&clip, &cfg)?;
    let kept = filter_voiced(&clip, &decisions, cfg.hangover_frames)?;
    write_wav(&a.out, &kept)?;
    println!(
        "voiced {}/{} frames, kept {} of {} samples",
        decisions.voiced_count(),
        decisions.flags.len(),
        kept.len(),
        clip.len()
    );
    Ok(())
}

fn features(a: FeaturesArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => default_config(),
    };
    if let Some(kind) = a.kind {
        cfg.feature_kind = kind;
    }
    if a.no_vad {
        cfg.use_vad = false;
    }
    let min_frames = cfg.net_config(2, 0)?.min_frames();
    if let (Some(input), Some(out)) = (&a.input, &a.out) {
        let clip = read_wav(input)?;
        let extractor = FeatureExtractor::new(&cfg.features, clip.sample_rate)?;
        let vad = cfg.use_vad.then_some(&cfg.vad);
        let m = clip_features(&clip, vad, &extractor, cfg.feature_kind, min_frames)?;
        write_features(out, &m)?;
        println!("{} x {} {} features", m.rows, m.cols, m.kind);
    } else if let (Some(manifest), Some(dir)) = (&a.manifest, &a.out_dir) {
        let m = load_manifest(manifest)?;
        let records = manifest_features(&m, &cfg, min_frames)?;
        let index = write_feature_set(dir, &records)?;
        println!("wrote {} feature files and {}", records.len(), index.display());
    } else {
        bail!("give either --in with --out or --manifest with --out-dir");
    }
    Ok(())
}

fn save_trained(model: &NetModel, history: &TrainHistory, a: &TrainArgs) -> Result<()> {
    save_model(&a.out, model)?;
    if let Some(h) = &a.history {
        write_text(h, history_csv(history))?;
    }
    let best = history.epochs.get(history.best_epoch.saturating_sub(1)).map_or(0.0, |e| e.devel_uar);
    println!(
        "best epoch {} of {} (devel UAR {best:.4}), wrote {}",
        history.best_epoch,
        history.stopped_epoch,
        a.out.display()
    );
    Ok(())
}

fn pretrain(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let Some(path) = &cfg.pretrain_manifest else {
        bail!("config has no pretrain_manifest");
    };
    let min_frames = cfg.net_config(2, 0)?.min_frames();
    let set = manifest_features(&load_manifest(path)?, &cfg, min_frames)?;
    let (model, history) = pretrain_network(&cfg, &set)?;
    save_trained(&model, &history, &a)
}

fn finetune(a: FinetuneArgs) -> Result<()> {
    let cfg = load_config(&a.train.config)?;
    let min_frames = cfg.net_config(2, 0)?.min_frames();
    let set = manifest_features(&load_manifest(&cfg.manifest)?, &cfg, min_frames)?;
    let k = cfg.n_classes.unwrap_or_else(|| label_count(&set));
    let init = a.init.as_ref().map(load_model).transpose()?;
    let (model, history) = finetune_network(&cfg, init.as_ref(), &set, k)?;
    save_trained(&model, &history, &a.train)
}

fn embed(a: EmbedArgs) -> Result<()> {
    let cfg = match &a.config {
        Some(p) => load_config(p)?,
        None => default_config(),
    };
    let model = load_model(&a.model)?;
    let set = manifest_features(&load_manifest(&a.manifest)?, &cfg, model.config.min_frames())?;
    let rows = set
        .iter()
        .map(|r| extract_embedding(&model, &r.id, &r.features))
        .collect::<esk_core::Result<Vec<_>>>()?;
    if a.bulk {
        write_text(&a.out, encode_embeddings_bulk(&rows)?)?;
    } else {
        save_embeddings(&a.out, &rows)?;
    }
    println!("wrote {} embeddings of dim {}", rows.len(), model.config.embed_dim);
    Ok(())
}

fn embeddings_by_id(path: &Path) -> Result<BTreeMap<String, EmbeddingVector>> {
    Ok(load_embeddings(path, None, EmbeddingSource::Fused)?
        .into_iter()
        .map(|e| (e.utterance_id.clone(), e))
        .collect())
}

fn split_rows(
    manifest: &Manifest,
    emb: &BTreeMap<String, EmbeddingVector>,
    split: Split,
) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<usize>)> {
    let mut ids = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for e in manifest.split(split) {
        let v = emb.get(&e.id).with_context(|| format!("no embedding for {}", e.id))?;
        ids.push(e.id.clone());
        x.push(v.values.clone());
        y.push(e.label);
    }
    Ok((ids, x, y))
}

fn svm_train_cmd(a: SvmTrainArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let emb = embeddings_by_id(&a.embeddings)?;
    let (_, x, y) = split_rows(&manifest, &emb, Split::Train)?;
    let k = a.classes.unwrap_or_else(|| manifest.n_classes());
    let cfg = SvmConfig {
        c: a.c,
        standardize: a.standardize,
        seed: a.seed,
        ..SvmConfig::default()
    };
    let model = svm_train(&x, &y, k, &cfg)?;
    save_svm(&a.out, &model)?;
    println!("trained {k} classes on {} examples of dim {}", x.len(), model.dim);
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = load_svm(&a.svm)?;
    let emb = embeddings_by_id(&a.embeddings)?;
    let rows: Vec<(String, Vec<f64>)> = match (&a.manifest, a.split) {
        (Some(m), Some(split)) => {
            let (ids, x, _) = split_rows(&load_manifest(m)?, &emb, split)?;
            ids.into_iter().zip(x).collect()
        }
        _ => emb.into_values().map(|e| (e.utterance_id, e.values)).collect(),
    };
    let preds = rows
        .iter()
        .map(|(id, x)| Ok((id.clone(), svm_predict(&model, x)?.0)))
        .collect::<Result<Vec<_>>>()?;
    save_predictions(&a.out, &preds)?;
    println!("wrote {} predictions", preds.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let manifest = load_manifest(&a.truth)?;
    let preds = load_predictions(&a.pred)?;
    let mut t = Vec::with_capacity(preds.len());
    for (id, _) in &preds {
        t.push(manifest.get(id).with_context(|| format!("{id} is not in the truth manifest"))?.label);
    }
    let y: Vec<usize> = preds.iter().map(|(_, l)| *l).collect();
    let report = evaluate(&t, &y, a.classes)?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(path) = &a.report {
        write_text(path, csv)?;
    }
    Ok(())
}

fn fuse(a: FuseArgs) -> Result<()> {
    match a.mode {
        FusionMode::Vote => {
            let members = a.pred.iter().map(load_predictions).collect::<esk_core::Result<Vec<_>>>()?;
            let fused = vote_predictions(&members)?;
            save_predictions(&a.out, &fused)?;
            println!("fused {} predictions from {} systems", fused.len(), members.len());
        }
        mode => {
            if a.embeddings.len() < 2 {
                bail!("{mode} fusion needs at least two --embeddings files");
            }
            let systems = a
                .embeddings
                .iter()
                .map(|p| load_embeddings(p, None, EmbeddingSource::Acoustic))
                .collect::<esk_core::Result<Vec<_>>>()?;
            let fused = early_fuse(&systems, mode)?;
            save_embeddings(&a.out, &fused)?;
            println!("fused {} embeddings of dim {}", fused.len(), fused.first().map_or(0, |e| e.dim()));
        }
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = load_config(&a.config)?;
    if let Some(dir) = a.out_dir {
        cfg.output_dir = dir;
    }
    let outcome = run_pipeline(&cfg)?;
    for s in &outcome.stages {
        println!("{:<16} {}", s.name, if s.ran { "ran" } else { "cached" });
    }
    print!("{}", outcome.report.to_csv());
    println!("config_hash,{}", outcome.config_hash);
    println!("report: {}", outcome.report_path.display());
    Ok(())
}
