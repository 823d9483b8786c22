//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureKind, Window};
use crate::fusion::FusionMode;
use crate::svm::SvmConfig;
use crate::tinynet::{NetConfig, Precision, TrainConfig};
use crate::vad::VadConfig;

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "ESK_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Devel,
    Test,
}

/// How fusion members are ranked for vote tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberOrder {
    /// Descending UAR on the evaluation split; the pipeline's own system
    /// wins ties.
    Uar,
    /// The pipeline's own system first, then members as listed.
    Listed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub mode: FusionMode,
    /// Embedding CSVs for concat/mean, prediction CSVs for vote.
    pub members: Vec<PathBuf>,
    pub order: MemberOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    /// Emotion corpus used for pretraining; `None` trains from scratch.
    pub pretrain_manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub n_classes: Option<usize>,
    pub feature_kind: FeatureKind,
    pub use_vad: bool,
    pub vad: VadConfig,
    pub features: FeatureConfig,
    pub net_preset: String,
    pub embed_dim: usize,
    pub label_smoothing: f64,
    pub precision: Precision,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub svm: SvmConfig,
    pub text_embeddings: Option<PathBuf>,
    pub text_dim: usize,
    pub fusion: Option<FusionConfig>,
    pub eval_split: EvalSplit,
}

impl ExperimentConfig {
    pub fn new(manifest: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            pretrain_manifest: None,
            output_dir: output_dir.into(),
            seed: 0,
            n_classes: None,
            feature_kind: FeatureKind::Mfcc,
            use_vad: true,
            vad: VadConfig::default(),
            features: FeatureConfig::default(),
            net_preset: "resnet18".into(),
            embed_dim: 512,
            label_smoothing: 0.0,
            precision: Precision::Single,
            pretrain: TrainConfig::pretrain(),
            finetune: TrainConfig::finetune(),
            svm: SvmConfig::default(),
            text_embeddings: None,
            text_dim: crate::embeddings::TEXT_EMBED_DIM,
            fusion: None,
            eval_split: EvalSplit::Devel,
        }
    }

    /// Parses config text. Relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut manifest = None;
        let mut output_dir = None;
        let mut cfg = Self::new("", "");
        let mut fusion_mode = None;
        let mut fusion_members = Vec::new();
        let mut fusion_order = MemberOrder::Uar;
        let path = |v: &str| base_dir.join(v);

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected key = value, found {line:?}"),
            })?;
            let (key, v) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Parse {
                line: line_no,
                msg: format!("{key}: {v:?} is not {what}"),
            };
            macro_rules! num {
                ($t:ty) => {
                    v.parse::<$t>().map_err(|_| bad(stringify!($t)))?
                };
            }
            let boolean = || match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(bad("a boolean")),
            };
            match key {
                "manifest" => manifest = Some(path(v)),
                "pretrain_manifest" => cfg.pretrain_manifest = (!v.is_empty()).then(|| path(v)),
                "output_dir" => output_dir = Some(path(v)),
                "seed" => cfg.seed = num!(u64),
                "n_classes" => cfg.n_classes = Some(num!(usize)),
                "eval_split" => {
                    cfg.eval_split = match v {
                        "devel" => EvalSplit::Devel,
                        "test" => EvalSplit::Test,
                        _ => return Err(bad("devel or test")),
                    }
                }
                "feature_kind" => cfg.feature_kind = FeatureKind::from_str(v)?,
                "vad" => cfg.use_vad = boolean()?,
                "vad.mode" => cfg.vad.mode = num!(u8),
                "vad.frame_ms" => cfg.vad.frame_ms = num!(u32),
                "vad.hangover" => cfg.vad.hangover_frames = num!(usize),
                "vad.max_zcr" => cfg.vad.max_zcr = num!(f64),
                "features.win_len" => cfg.features.win_len_s = num!(f64),
                "features.step" => cfg.features.step_s = num!(f64),
                "features.window" => cfg.features.window = Window::from_str(v)?,
                "features.n_mels" => cfg.features.n_mels = num!(usize),
                "features.fmin" => cfg.features.fmin_hz = num!(f64),
                "features.fmax" => cfg.features.fmax_hz = num!(f64),
                "features.preemph" => cfg.features.preemph = num!(f64),
                "features.n_fft" => cfg.features.n_fft = num!(usize),
                "features.n_mfcc" => cfg.features.n_mfcc = num!(usize),
                "net.preset" => cfg.net_preset = v.to_string(),
                "net.embed_dim" => cfg.embed_dim = num!(usize),
                "net.label_smoothing" => cfg.label_smoothing = num!(f64),
                "net.precision" => {
                    cfg.precision = match v {
                        "single" => Precision::Single,
                        "double" => Precision::Double,
                        _ => return Err(bad("single or double")),
                    }
                }
                "svm.c" => cfg.svm.c = num!(f64),
                "svm.standardize" => cfg.svm.standardize = boolean()?,
                "svm.tol" => cfg.svm.tol = num!(f64),
                "svm.max_epochs" => cfg.svm.max_epochs = num!(usize),
                "text.embeddings" => cfg.text_embeddings = (!v.is_empty()).then(|| path(v)),
                "text.dim" => cfg.text_dim = num!(usize),
                "fusion.mode" => fusion_mode = Some(FusionMode::from_str(v)?),
                "fusion.members" => {
                    fusion_members = v.split_whitespace().map(path).collect();
                }
                "fusion.order" => {
                    fusion_order = match v {
                        "uar" => MemberOrder::Uar,
                        "listed" => MemberOrder::Listed,
                        _ => return Err(bad("uar or listed")),
                    }
                }
                _ => {
                    let train = if let Some(k) = key.strip_prefix("pretrain.") {
                        Some((&mut cfg.pretrain, k))
                    } else {
                        key.strip_prefix("finetune.").map(|k| (&mut cfg.finetune, k))
                    };
                    match train {
                        Some((t, "lr")) => t.lr = num!(f64),
                        Some((t, "weight_decay")) => t.weight_decay = num!(f64),
                        Some((t, "momentum")) => t.momentum = num!(f64),
                        Some((t, "max_epochs")) => t.max_epochs = num!(usize),
                        Some((t, "patience")) => t.early_stop_patience = num!(usize),
                        Some((t, "batch_size")) => t.batch_size = num!(usize),
                        _ => {
                            return Err(Error::Parse {
                                line: line_no,
                                msg: format!("unknown key {key:?}"),
                            })
                        }
                    }
                }
            }
        }
        cfg.manifest = manifest.ok_or_else(|| Error::Config("missing required key \"manifest\"".into()))?;
        cfg.output_dir = output_dir.ok_or_else(|| Error::Config("missing required key \"output_dir\"".into()))?;
        cfg.fusion = match fusion_mode {
            Some(mode) => Some(FusionConfig {
                mode,
                members: fusion_members,
                order: fusion_order,
            }),
            None if fusion_members.is_empty() => None,
            None => return Err(Error::Config("fusion.members given without fusion.mode".into())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies the seed override from the
    /// environment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base)?;
        cfg.with_seed_override(std::env::var(SEED_ENV).ok().as_deref())
    }

    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self> {
        if let Some(v) = value {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.vad.validate()?;
        self.features.validate(16000)?;
        NetConfig::from_preset(&self.net_preset, self.embed_dim, 2)?.validate()?;
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label smoothing must lie in [0, 1)".into()));
        }
        self.svm.validate()?;
        if let Some(f) = &self.fusion {
            match f.mode {
                FusionMode::Vote | FusionMode::Concat | FusionMode::Mean if f.members.is_empty() => {
                    return Err(Error::Config("fusion needs at least one member besides this system".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Network config for a head of `n_classes`, seeded from the global seed.
    pub fn net_config(&self, n_classes: usize, input_cols: usize) -> Result<NetConfig> {
        let mut c = NetConfig::from_preset(&self.net_preset, self.embed_dim, n_classes)?;
        c.label_smoothing = self.label_smoothing;
        c.precision = self.precision;
        c.seed = self.seed;
        c.input_cols = input_cols;
        c.validate()?;
        Ok(c)
    }

    /// Every effective setting as `key = value` lines, in a fixed order.
    /// Paths are printed as given (already resolved against the config
    /// directory).
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("manifest", self.manifest.display().to_string());
        kv("pretrain_manifest", opt(&self.pretrain_manifest));
        kv("output_dir", self.output_dir.display().to_string());
        self.push_settings(&mut kv);
        s
    }

    fn push_settings(&self, kv: &mut impl FnMut(&str, String)) {
        kv("seed", self.seed.to_string());
        kv("n_classes", self.n_classes.map_or(String::new(), |k| k.to_string()));
        kv(
            "eval_split",
            match self.eval_split {
                EvalSplit::Devel => "devel",
                EvalSplit::Test => "test",
            }
            .into(),
        );
        for (k, v) in self.feature_settings() {
            kv(&k, v);
        }
        for (k, v) in self.net_settings() {
            kv(&k, v);
        }
        for (prefix, t) in [("pretrain", &self.pretrain), ("finetune", &self.finetune)] {
            for (k, v) in train_settings(prefix, t) {
                kv(&k, v);
            }
        }
        for (k, v) in self.svm_settings() {
            kv(&k, v);
        }
        kv(
            "text.embeddings",
            self.text_embeddings.as_ref().map_or(String::new(), |p| p.display().to_string()),
        );
        kv("text.dim", self.text_dim.to_string());
        if let Some(f) = &self.fusion {
            kv("fusion.mode", f.mode.to_string());
            kv(
                "fusion.members",
                f.members.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(" "),
            );
            kv(
                "fusion.order",
                match f.order {
                    MemberOrder::Uar => "uar",
                    MemberOrder::Listed => "listed",
                }
                .into(),
            );
        }
    }

    pub(crate) fn feature_settings(&self) -> Vec<(String, String)> {
        let f = &self.features;
        let v = &self.vad;
        [
            ("feature_kind", self.feature_kind.to_string()),
            ("vad", self.use_vad.to_string()),
            ("vad.mode", v.mode.to_string()),
            ("vad.frame_ms", v.frame_ms.to_string()),
            ("vad.hangover", v.hangover_frames.to_string()),
            ("vad.max_zcr", format!("{:?}", v.max_zcr)),
            ("vad.thresholds", format!("{:?}", v.thresholds)),
            ("features.win_len", format!("{:?}", f.win_len_s)),
            ("features.step", format!("{:?}", f.step_s)),
            ("features.window", f.window.to_string()),
            ("features.n_mels", f.n_mels.to_string()),
            ("features.fmin", format!("{:?}", f.fmin_hz)),
            ("features.fmax", format!("{:?}", f.fmax_hz)),
            ("features.preemph", format!("{:?}", f.preemph)),
            ("features.n_fft", f.n_fft.to_string()),
            ("features.n_mfcc", f.n_mfcc.to_string()),
            ("features.log_floor", format!("{:?}", f.log_floor)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub(crate) fn net_settings(&self) -> Vec<(String, String)> {
        vec![
            ("net.preset".into(), self.net_preset.clone()),
            ("net.embed_dim".into(), self.embed_dim.to_string()),
            ("net.label_smoothing".into(), format!("{:?}", self.label_smoothing)),
            (
                "net.precision".into(),
                match self.precision {
                    Precision::Single => "single",
                    Precision::Double => "double",
                }
                .into(),
            ),
        ]
    }

    pub(crate) fn svm_settings(&self) -> Vec<(String, String)> {
        vec![
            ("svm.c".into(), format!("{:?}", self.svm.c)),
            ("svm.standardize".into(), self.svm.standardize.to_string()),
            ("svm.tol".into(), format!("{:?}", self.svm.tol)),
            ("svm.max_epochs".into(), self.svm.max_epochs.to_string()),
        ]
    }

    /// SHA-256 over every setting except the output directory.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("manifest = {}\n", self.manifest.display()));
        h.update(format!(
            "pretrain_manifest = {}\n",
            self.pretrain_manifest.as_ref().map_or(String::new(), |p| p.display().to_string())
        ));
        self.push_settings(&mut |k: &str, v: String| h.update(format!("{k} = {v}\n")));
        hex::encode(h.finalize())
    }
}

pub(crate) fn train_settings(prefix: &str, t: &TrainConfig) -> Vec<(String, String)> {
    vec![
        (format!("{prefix}.lr"), format!("{:?}", t.lr)),
        (format!("{prefix}.weight_decay"), format!("{:?}", t.weight_decay)),
        (format!("{prefix}.momentum"), format!("{:?}", t.momentum)),
        (format!("{prefix}.max_epochs"), t.max_epochs.to_string()),
        (format!("{prefix}.patience"), t.early_stop_patience.to_string()),
        (format!("{prefix}.batch_size"), t.batch_size.to_string()),
    ]
}
