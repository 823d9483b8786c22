//! End-to-end experiment runner with per-stage caching.
//!
//! Stages: features (VAD + extraction), pretrain, finetune, embed, optional
//! early fusion, svm-train, predict, optional vote fusion, eval. Each stage
//! writes a `<output>.key` sidecar holding the config hash and a stage key
//! (SHA-256 of the stage's settings and the digests of its input files). A
//! stage is skipped when its outputs exist, the stage key matches and no
//! input is newer than the outputs.

mod config;

pub use config::{EvalSplit, ExperimentConfig, FusionConfig, MemberOrder, SEED_ENV};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use sha2::{Digest, Sha256};

use crate::dataset_io::{load_manifest, read_wav, AudioClip, Manifest, Split};
use crate::embeddings::{
    extract_embedding, fuse_concat, load_embeddings, load_text_embeddings, save_embeddings, EmbeddingSource,
    EmbeddingVector,
};
use crate::error::{Error, Result};
use crate::features::{read_features, write_features, FeatureExtractor, FeatureKind, FeatureMatrix};
use crate::fusion::{early_fuse, load_predictions, save_predictions, vote_predictions, FusionMode, Predictions};
use crate::metrics::{evaluate, uar, EvalReport};
use crate::svm::{load_svm, save_svm, svm_predict, svm_train, SvmConfig};
use crate::tinynet::{load_model, save_model, train, LabeledFeatures, NetModel, TrainConfig, TrainHistory};
use crate::vad::{apply_vad, VadConfig};

/// VAD followed by feature extraction. If trimming leaves fewer than
/// `min_frames` frames the untrimmed clip is used instead.
pub fn clip_features(
    clip: &AudioClip,
    vad: Option<&VadConfig>,
    extractor: &FeatureExtractor,
    kind: FeatureKind,
    min_frames: usize,
) -> Result<FeatureMatrix> {
    if let Some(vad) = vad {
        let trimmed = apply_vad(clip, vad)?;
        let cfg = extractor.config();
        if cfg.frame_count(trimmed.len(), clip.sample_rate) >= min_frames {
            return extractor.extract(&trimmed, kind);
        }
    }
    let m = extractor.extract(clip, kind)?;
    if m.rows < min_frames {
        return Err(Error::InvalidInput(format!(
            "{} frames, the network needs at least {min_frames}",
            m.rows
        )));
    }
    Ok(m)
}

/// One utterance of an extracted feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub features: FeatureMatrix,
}

const INDEX_HEADER: &str = "id,file,label,split,sha256";

/// Reads a feature index written by the features stage.
pub fn load_feature_set(index: &Path) -> Result<Vec<FeatureRecord>> {
    let text = fs::read_to_string(index).map_err(|e| Error::io(index, e))?;
    let dir = index.parent().unwrap_or(Path::new("."));
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h) != Some(INDEX_HEADER) {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {INDEX_HEADER:?}"),
        });
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let parse_err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            if f.len() != 5 {
                return Err(parse_err("expected 5 fields"));
            }
            Ok(FeatureRecord {
                id: f[0].to_string(),
                label: f[2].parse().map_err(|_| parse_err("bad label"))?,
                split: f[3].parse().map_err(|token| Error::UnknownSplit { line: i + 1, token })?,
                features: read_features(dir.join(f[1]))?,
            })
        })
        .collect()
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn mtime(path: &Path) -> Option<SystemTime> {
    fs::metadata(path).and_then(|m| m.modified()).ok()
}

fn key_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".key");
    PathBuf::from(s)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Whether a stage ran or was satisfied from cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageRecord {
    pub name: &'static str,
    pub ran: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: EvalReport,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
    pub report_path: PathBuf,
}

impl PipelineOutcome {
    pub fn ran(&self, stage: &str) -> bool {
        self.stages.iter().any(|s| s.name == stage && s.ran)
    }
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    hash: String,
    stages: Vec<StageRecord>,
}

impl Runner<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn stage(
        &mut self,
        name: &'static str,
        outputs: &[PathBuf],
        inputs: &[PathBuf],
        settings: &[(String, String)],
        run: impl FnOnce() -> Result<()>,
    ) -> Result<()> {
        let wrap = |e: Error| Error::Stage {
            stage: name,
            source: Box::new(e),
        };
        let mut h = Sha256::new();
        h.update(name);
        for (k, v) in settings {
            h.update(format!("\n{k} = {v}"));
        }
        for input in inputs {
            h.update(format!("\n{}", file_digest(input).map_err(wrap)?));
        }
        let stage_key = hex::encode(h.finalize());
        let key_line = format!("stage_key = {stage_key}");

        let newest_input = inputs.iter().filter_map(|p| mtime(p)).max();
        let oldest_output = outputs.iter().map(|p| mtime(p)).collect::<Option<Vec<_>>>().and_then(|v| v.into_iter().min());
        let fresh = match (oldest_output, newest_input) {
            (None, _) => false,
            (Some(out), newest) => {
                newest.is_none_or(|i| i <= out)
                    && outputs.iter().all(|o| {
                        fs::read_to_string(key_path(o)).is_ok_and(|k| k.lines().any(|l| l == key_line))
                    })
            }
        };
        if !fresh {
            run().map_err(wrap)?;
        }
        let sidecar = format!("config_hash = {}\n{key_line}\n", self.hash);
        for o in outputs {
            let kp = key_path(o);
            if fs::read_to_string(&kp).ok().as_deref() != Some(sidecar.as_str()) {
                write_file(&kp, &sidecar).map_err(wrap)?;
            }
        }
        self.stages.push(StageRecord { name, ran: !fresh });
        Ok(())
    }
}

/// Extracts features for every manifest entry, in manifest order.
pub fn manifest_features(manifest: &Manifest, cfg: &ExperimentConfig, min_frames: usize) -> Result<Vec<FeatureRecord>> {
    let mut extractors: BTreeMap<u32, FeatureExtractor> = BTreeMap::new();
    let vad = cfg.use_vad.then_some(&cfg.vad);
    manifest
        .entries
        .iter()
        .map(|entry| {
            let clip = read_wav(&entry.path)?;
            if !extractors.contains_key(&clip.sample_rate) {
                extractors.insert(clip.sample_rate, FeatureExtractor::new(&cfg.features, clip.sample_rate)?);
            }
            let features = clip_features(&clip, vad, &extractors[&clip.sample_rate], cfg.feature_kind, min_frames)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", entry.id)))?;
            Ok(FeatureRecord {
                id: entry.id.clone(),
                label: entry.label,
                split: entry.split,
                features,
            })
        })
        .collect()
}

/// Writes one `ESKF` file per record plus `index.csv` into `dir` and
/// returns the index path.
pub fn write_feature_set(dir: &Path, records: &[FeatureRecord]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rows = format!("{INDEX_HEADER}\n");
    for (i, rec) in records.iter().enumerate() {
        let file = format!("{i:05}.eskf");
        let path = dir.join(&file);
        write_features(&path, &rec.features)?;
        let digest = file_digest(&path)?;
        writeln!(rows, "{},{file},{},{},{digest}", rec.id, rec.label, rec.split).unwrap();
    }
    let index = dir.join("index.csv");
    write_file(&index, rows)?;
    Ok(index)
}

/// Labeled examples of one split.
pub fn split_examples(set: &[FeatureRecord], split: Split) -> Vec<LabeledFeatures> {
    set.iter()
        .filter(|r| r.split == split)
        .map(|r| LabeledFeatures {
            features: r.features.clone(),
            label: r.label,
        })
        .collect()
}

/// Number of classes implied by the largest label.
pub fn label_count(set: &[FeatureRecord]) -> usize {
    set.iter().map(|r| r.label + 1).max().unwrap_or(0)
}

/// Trains a fresh network on the train split of `set`, early-stopping on
/// its devel split.
pub fn pretrain_network(cfg: &ExperimentConfig, set: &[FeatureRecord]) -> Result<(NetModel, TrainHistory)> {
    let cols = set.first().map_or(0, |r| r.features.cols);
    let model = NetModel::new(cfg.net_config(label_count(set), cols)?)?;
    let tc = TrainConfig {
        seed: cfg.seed.wrapping_add(1),
        ..cfg.pretrain.clone()
    };
    train(&model, &split_examples(set, Split::Train), &split_examples(set, Split::Devel), &tc)
}

/// Fine-tunes `init` (with a fresh `n_classes` head) or, without an initial
/// model, trains from scratch under the fine-tuning schedule.
pub fn finetune_network(
    cfg: &ExperimentConfig,
    init: Option<&NetModel>,
    set: &[FeatureRecord],
    n_classes: usize,
) -> Result<(NetModel, TrainHistory)> {
    let start = match init {
        Some(m) => m.swap_head(n_classes, cfg.seed.wrapping_add(4))?,
        None => {
            let cols = set.first().map_or(0, |r| r.features.cols);
            NetModel::new(cfg.net_config(n_classes, cols)?)?
        }
    };
    let tc = TrainConfig {
        seed: cfg.seed.wrapping_add(2),
        ..cfg.finetune.clone()
    };
    train(&start, &split_examples(set, Split::Train), &split_examples(set, Split::Devel), &tc)
}

/// Training history as CSV: `epoch,train_loss,devel_uar,best`.
pub fn history_csv(h: &TrainHistory) -> String {
    let mut s = String::from("epoch,train_loss,devel_uar,best\n");
    for e in &h.epochs {
        writeln!(s, "{},{:?},{:?},{}", e.epoch, e.train_loss, e.devel_uar, u8::from(e.epoch == h.best_epoch)).unwrap();
    }
    s
}

fn train_stage_settings(cfg: &ExperimentConfig, prefix: &str, t: &TrainConfig) -> Vec<(String, String)> {
    let mut s = cfg.net_settings();
    s.extend(config::train_settings(prefix, t));
    s.push(("seed".into(), cfg.seed.to_string()));
    s.push(("n_classes".into(), format!("{:?}", cfg.n_classes)));
    s
}

fn svm_rows(set: &[FeatureRecord], emb: &BTreeMap<String, EmbeddingVector>, split: Split) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for r in set.iter().filter(|r| r.split == split) {
        let e = emb.get(&r.id).ok_or_else(|| Error::MissingId(r.id.clone()))?;
        x.push(e.values.clone());
        y.push(r.label);
    }
    Ok((x, y))
}

/// Runs every stage and returns the evaluation of the configured split.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut r = Runner {
        cfg,
        hash: cfg.hash(),
        out,
        stages: Vec::new(),
    };
    let effective = r.path("effective_config.txt");
    let text = format!("# config_hash = {}\n{}", r.hash, cfg.canonical());
    if fs::read_to_string(&effective).ok().as_deref() != Some(text.as_str()) {
        write_file(&effective, text)?;
    }
    let min_frames = cfg.net_config(2, 0)?.min_frames();

    // features
    let mut sets = vec![("escalation", cfg.manifest.clone())];
    if let Some(p) = &cfg.pretrain_manifest {
        sets.push(("pretrain", p.clone()));
    }
    let mut index_paths = BTreeMap::new();
    for (set, manifest_path) in sets {
        let dir = r.path(&format!("features/{set}"));
        let index = dir.join("index.csv");
        let manifest = load_manifest(&manifest_path).map_err(|e| Error::Stage {
            stage: "features",
            source: Box::new(e),
        })?;
        let mut inputs = vec![manifest_path.clone()];
        inputs.extend(manifest.entries.iter().map(|e| e.path.clone()));
        let name = if set == "pretrain" { "features-pretrain" } else { "features" };
        let mut settings = r.cfg.feature_settings();
        settings.push(("min_frames".into(), min_frames.to_string()));
        r.stage(name, &[index.clone()], &inputs, &settings, || {
            let records = manifest_features(&manifest, cfg, min_frames)?;
            write_feature_set(&dir, &records).map(|_| ())
        })?;
        index_paths.insert(set, index);
    }
    let esc_index = index_paths["escalation"].clone();
    let escalation = load_feature_set(&esc_index)?;
    let k = cfg.n_classes.unwrap_or_else(|| label_count(&escalation));

    // pretrain
    let pretrained = r.path("pretrained.eskm");
    if let Some(index) = index_paths.get("pretrain") {
        let settings = train_stage_settings(cfg, "pretrain", &cfg.pretrain);
        let outputs = [pretrained.clone(), r.path("pretrain_history.csv")];
        r.stage("pretrain", &outputs, &[index.clone()], &settings, || {
            let (best, hist) = pretrain_network(cfg, &load_feature_set(index)?)?;
            save_model(&outputs[0], &best)?;
            write_file(&outputs[1], history_csv(&hist))
        })?;
    }

    // finetune
    let finetuned = r.path("finetuned.eskm");
    {
        let mut inputs = vec![esc_index.clone()];
        if cfg.pretrain_manifest.is_some() {
            inputs.push(pretrained.clone());
        }
        let settings = train_stage_settings(cfg, "finetune", &cfg.finetune);
        let outputs = [finetuned.clone(), r.path("finetune_history.csv")];
        r.stage("finetune", &outputs, &inputs, &settings, || {
            let init = match cfg.pretrain_manifest {
                Some(_) => Some(load_model(&pretrained)?),
                None => None,
            };
            let (best, hist) = finetune_network(cfg, init.as_ref(), &escalation, k)?;
            save_model(&outputs[0], &best)?;
            write_file(&outputs[1], history_csv(&hist))
        })?;
    }

    // embed
    let acoustic = r.path("embeddings.csv");
    r.stage("embed", &[acoustic.clone()], &[finetuned.clone(), esc_index.clone()], &[], || {
        let model = load_model(&finetuned)?;
        let rows = escalation
            .iter()
            .map(|rec| extract_embedding(&model, &rec.id, &rec.features))
            .collect::<Result<Vec<_>>>()?;
        save_embeddings(&acoustic, &rows)
    })?;

    // early fusion with other acoustic systems and/or text
    let early = cfg
        .fusion
        .as_ref()
        .filter(|f| matches!(f.mode, FusionMode::Concat | FusionMode::Mean));
    let svm_input = if early.is_some() || cfg.text_embeddings.is_some() {
        let fused = r.path("fused_embeddings.csv");
        let mut inputs = vec![acoustic.clone()];
        let mut settings = vec![("text.dim".to_string(), cfg.text_dim.to_string())];
        if let Some(f) = early {
            inputs.extend(f.members.iter().cloned());
            settings.push(("fusion.mode".into(), f.mode.to_string()));
        }
        if let Some(t) = &cfg.text_embeddings {
            inputs.push(t.clone());
            settings.push(("text".into(), "concat".into()));
        }
        r.stage("fuse-embeddings", &[fused.clone()], &inputs, &settings, || {
            let mut rows = load_embeddings(&acoustic, None, EmbeddingSource::Acoustic)?;
            if let Some(f) = early {
                let mut systems = vec![rows];
                for m in &f.members {
                    systems.push(load_embeddings(m, None, EmbeddingSource::Acoustic)?);
                }
                rows = early_fuse(&systems, f.mode)?;
            }
            if let Some(t) = &cfg.text_embeddings {
                let text = load_text_embeddings(t, Some(cfg.text_dim))?;
                rows = rows
                    .iter()
                    .map(|a| {
                        let tv = text.get(&a.utterance_id).ok_or_else(|| Error::MissingId(a.utterance_id.clone()))?;
                        fuse_concat(a, tv)
                    })
                    .collect::<Result<_>>()?;
            }
            save_embeddings(&fused, &rows)
        })?;
        fused
    } else {
        acoustic.clone()
    };
    let load_svm_input = || -> Result<BTreeMap<String, EmbeddingVector>> {
        Ok(load_embeddings(&svm_input, None, EmbeddingSource::Fused)?
            .into_iter()
            .map(|e| (e.utterance_id.clone(), e))
            .collect())
    };

    // svm-train
    let svm_path = r.path("svm.esks");
    let mut settings = cfg.svm_settings();
    settings.push(("seed".into(), cfg.seed.to_string()));
    settings.push(("n_classes".into(), k.to_string()));
    r.stage("svm-train", &[svm_path.clone()], &[svm_input.clone(), esc_index.clone()], &settings, || {
        let emb = load_svm_input()?;
        let (x, y) = svm_rows(&escalation, &emb, Split::Train)?;
        let svm_cfg = SvmConfig {
            seed: cfg.seed.wrapping_add(3),
            ..cfg.svm.clone()
        };
        save_svm(&svm_path, &svm_train(&x, &y, k, &svm_cfg)?)
    })?;

    // predict
    let eval_split = match cfg.eval_split {
        EvalSplit::Devel => Split::Devel,
        EvalSplit::Test => Split::Test,
    };
    let predictions = r.path("predictions.csv");
    let split_setting = [("eval_split".to_string(), eval_split.to_string())];
    r.stage(
        "predict",
        &[predictions.clone()],
        &[svm_path.clone(), svm_input.clone(), esc_index.clone()],
        &split_setting,
        || {
            let model = load_svm(&svm_path)?;
            let emb = load_svm_input()?;
            let preds: Predictions = escalation
                .iter()
                .filter(|rec| rec.split == eval_split)
                .map(|rec| {
                    let e = emb.get(&rec.id).ok_or_else(|| Error::MissingId(rec.id.clone()))?;
                    Ok((rec.id.clone(), svm_predict(&model, &e.values)?.0))
                })
                .collect::<Result<_>>()?;
            save_predictions(&predictions, &preds)
        },
    )?;

    let truth: BTreeMap<&str, usize> = escalation
        .iter()
        .filter(|rec| rec.split == eval_split)
        .map(|rec| (rec.id.as_str(), rec.label))
        .collect();
    let score = |p: &Predictions| -> Result<EvalReport> {
        let t = p
            .iter()
            .map(|(id, _)| truth.get(id.as_str()).copied().ok_or_else(|| Error::MissingId(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        let y: Vec<usize> = p.iter().map(|(_, l)| *l).collect();
        evaluate(&t, &y, k)
    };

    // late fusion by vote
    let mut final_predictions = predictions.clone();
    if let Some(f) = cfg.fusion.as_ref().filter(|f| f.mode == FusionMode::Vote) {
        let fused = r.path("fused_predictions.csv");
        let mut inputs = vec![predictions.clone()];
        inputs.extend(f.members.iter().cloned());
        let order = [("fusion.order".to_string(), format!("{:?}", f.order))];
        r.stage("fuse", &[fused.clone()], &inputs, &order, || {
            let mut members = vec![load_predictions(&predictions)?];
            for m in &f.members {
                members.push(load_predictions(m)?);
            }
            if f.order == MemberOrder::Uar {
                let mut scored = members
                    .into_iter()
                    .map(|m| {
                        let (t, y): (Vec<usize>, Vec<usize>) = m
                            .iter()
                            .map(|(id, l)| truth.get(id.as_str()).map(|t| (*t, *l)).ok_or_else(|| Error::MissingId(id.clone())))
                            .collect::<Result<Vec<_>>>()?
                            .into_iter()
                            .unzip();
                        Ok((uar(&t, &y, k)?, m))
                    })
                    .collect::<Result<Vec<_>>>()?;
                // stable: equal scores keep this system ahead of listed members
                scored.sort_by(|a, b| b.0.total_cmp(&a.0));
                members = scored.into_iter().map(|(_, m)| m).collect();
            }
            save_predictions(&fused, &vote_predictions(&members)?)
        })?;
        final_predictions = fused;
    }

    // eval
    let report = score(&load_predictions(&final_predictions)?)?;
    let report_path = r.path("report.csv");
    let hash_setting = [("config_hash".to_string(), r.hash.clone())];
    let report_text = format!("{}config_hash,{}\n", report.to_csv(), r.hash);
    r.stage("eval", &[report_path.clone()], &[final_predictions, esc_index], &hash_setting, || {
        write_file(&report_path, &report_text)
    })?;

    Ok(PipelineOutcome {
        report,
        config_hash: r.hash,
        stages: r.stages,
        report_path,
    })
}
