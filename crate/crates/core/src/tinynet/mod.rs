//! Small residual convolutional network with a global-average-pooling
//! bottleneck.
//!
//! The input feature matrix is a one-channel `time x coefficient` image.
//! Every stage opens with a stride-2 3x3 convolution, normalization and a
//! rectifier, followed by identity residual blocks of two 3x3 convolutions.
//! The final map is averaged over all positions per channel to give the
//! embedding, and a linear head maps the embedding to class logits.

mod backprop;
mod io;
mod layers;
mod loss;
mod optim;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub use backprop::{batch_loss, grad, Gradients};
pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use layers::Map;
pub use loss::{loss, loss_and_grad, softmax};
pub use optim::{sgd_step, TrainConfig};
pub use train::{
    devel_uar, predict_all,
    class_weights_from_counts, fit, train, EarlyStopping, EpochRecord, LabeledFeatures, TrainHistory,
};

use layers::{conv3x3, global_average, normalize_one, relu_inplace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    /// Parameters are kept representable in f32 (rounded after every update),
    /// which makes the on-disk format lossless. Arithmetic is still f64.
    Single,
    /// Full f64 parameters.
    Double,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub blocks_per_stage: Vec<usize>,
    pub stage_channels: Vec<usize>,
    pub embed_dim: usize,
    pub n_classes: usize,
    pub label_smoothing: f64,
    pub seed: u64,
    /// Expected feature columns; 0 accepts any width.
    pub input_cols: usize,
    pub precision: Precision,
}

fn scaled_channels(stages: usize, embed_dim: usize) -> Vec<usize> {
    (0..stages)
        .map(|s| (embed_dim >> (stages - 1 - s)).max(1))
        .collect()
}

impl NetConfig {
    fn preset(blocks: Vec<usize>, embed_dim: usize, n_classes: usize) -> Self {
        Self {
            stage_channels: scaled_channels(blocks.len(), embed_dim),
            blocks_per_stage: blocks,
            embed_dim,
            n_classes,
            label_smoothing: 0.0,
            seed: 0,
            input_cols: 0,
            precision: Precision::Single,
        }
    }

    /// Four stages of two blocks, channels `embed_dim / 8 .. embed_dim`.
    pub fn resnet18(embed_dim: usize, n_classes: usize) -> Self {
        Self::preset(vec![2, 2, 2, 2], embed_dim, n_classes)
    }

    pub fn resnet9(embed_dim: usize, n_classes: usize) -> Self {
        Self::preset(vec![1, 1, 1, 1], embed_dim, n_classes)
    }

    /// Two stages of one block; small enough for gradient checks.
    pub fn test_preset(embed_dim: usize, n_classes: usize) -> Self {
        Self::preset(vec![1, 1], embed_dim, n_classes)
    }

    pub fn from_preset(name: &str, embed_dim: usize, n_classes: usize) -> Result<Self> {
        match name {
            "resnet18" => Ok(Self::resnet18(embed_dim, n_classes)),
            "resnet9" => Ok(Self::resnet9(embed_dim, n_classes)),
            "test" => Ok(Self::test_preset(embed_dim, n_classes)),
            other => Err(Error::Config(format!("unknown network preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks_per_stage.is_empty() || self.blocks_per_stage.len() != self.stage_channels.len() {
            return Err(Error::Config(format!(
                "{} stage block counts vs {} stage widths",
                self.blocks_per_stage.len(),
                self.stage_channels.len()
            )));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::Config("stage width 0".into()));
        }
        if self.stage_channels.last() != Some(&self.embed_dim) {
            return Err(Error::Config(format!(
                "embed_dim {} differs from last stage width {:?}",
                self.embed_dim,
                self.stage_channels.last()
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label smoothing must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.blocks_per_stage.len()
    }

    /// Shortest admissible input: each stage halves the time axis.
    pub fn min_frames(&self) -> usize {
        1 << self.stages()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
    HeadWeight,
    HeadBias,
}

impl ParamKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        use ParamKind::*;
        [ConvWeight, NormScale, NormShift, RunningMean, RunningVar, HeadWeight, HeadBias]
            .get(c as usize)
            .copied()
    }

    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    pub fn decays(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::HeadWeight)
    }

    pub fn in_head(self) -> bool {
        matches!(self, ParamKind::HeadWeight | ParamKind::HeadBias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Indices into the parameter list for one convolution + normalization unit.
#[derive(Debug, Clone)]
pub(crate) struct Unit {
    pub conv: usize,
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
    pub out_ch: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct StagePlan {
    pub down: Unit,
    pub blocks: Vec<(Unit, Unit)>,
}

#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub stages: Vec<StagePlan>,
    pub head_w: usize,
    pub head_b: usize,
}

pub(crate) struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

/// Parameter table and index plan derived from a config. The order is fixed
/// and doubles as the serialization order.
pub(crate) fn layout(cfg: &NetConfig) -> (Plan, Vec<ParamSpec>) {
    let mut specs = Vec::new();
    let mut push = |name: String, kind, shape: Vec<usize>| {
        specs.push(ParamSpec { name, kind, shape });
        specs.len() - 1
    };
    let mut unit = |prefix: &str, in_ch: usize, out_ch: usize, stride: usize| Unit {
        conv: push(format!("{prefix}.conv"), ParamKind::ConvWeight, vec![out_ch, in_ch, 3, 3]),
        gamma: push(format!("{prefix}.norm.scale"), ParamKind::NormScale, vec![out_ch]),
        beta: push(format!("{prefix}.norm.shift"), ParamKind::NormShift, vec![out_ch]),
        mean: push(format!("{prefix}.norm.running_mean"), ParamKind::RunningMean, vec![out_ch]),
        var: push(format!("{prefix}.norm.running_var"), ParamKind::RunningVar, vec![out_ch]),
        out_ch,
        stride,
    };

    let mut in_ch = 1;
    let mut stages = Vec::new();
    for (s, (&nb, &ch)) in cfg.blocks_per_stage.iter().zip(&cfg.stage_channels).enumerate() {
        let down = unit(&format!("stage{s}.down"), in_ch, ch, 2);
        let blocks = (0..nb)
            .map(|b| {
                (
                    unit(&format!("stage{s}.block{b}.a"), ch, ch, 1),
                    unit(&format!("stage{s}.block{b}.b"), ch, ch, 1),
                )
            })
            .collect();
        stages.push(StagePlan { down, blocks });
        in_ch = ch;
    }
    let head_w = push("head.weight".into(), ParamKind::HeadWeight, vec![cfg.embed_dim, cfg.n_classes]);
    let head_b = push("head.bias".into(), ParamKind::HeadBias, vec![cfg.n_classes]);
    (Plan { stages, head_w, head_b }, specs)
}

fn round_to_single(data: &mut [f64]) {
    for v in data {
        *v = *v as f32 as f64;
    }
}

/// Kaiming-uniform bound for convolutions (ReLU gain); `1/sqrt(fan_in)` for
/// the linear head.
fn init_bound(kind: ParamKind, shape: &[usize]) -> f64 {
    match kind {
        ParamKind::ConvWeight => (6.0 / (shape[1] * 9) as f64).sqrt(),
        ParamKind::HeadWeight => (1.0 / shape[0] as f64).sqrt(),
        _ => 0.0,
    }
}

fn fill_param(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n: usize = spec.shape.iter().product();
    match spec.kind {
        ParamKind::ConvWeight | ParamKind::HeadWeight => {
            let b = init_bound(spec.kind, &spec.shape);
            (0..n).map(|_| rng.random_range(-b..b)).collect()
        }
        ParamKind::NormScale | ParamKind::RunningVar => vec![1.0; n],
        ParamKind::NormShift | ParamKind::RunningMean | ParamKind::HeadBias => vec![0.0; n],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetModel {
    pub config: NetConfig,
    pub params: Vec<Param>,
}

impl NetModel {
    /// Seeded initialization.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let (_, specs) = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = specs
            .into_iter()
            .map(|spec| {
                let data = fill_param(&spec, &mut rng);
                Param {
                    name: spec.name,
                    kind: spec.kind,
                    shape: spec.shape,
                    data,
                }
            })
            .collect();
        let mut model = Self { config, params };
        model.apply_precision();
        Ok(model)
    }

    pub(crate) fn plan(&self) -> Plan {
        layout(&self.config).0
    }

    pub fn apply_precision(&mut self) {
        if self.config.precision == Precision::Single {
            for p in &mut self.params {
                round_to_single(&mut p.data);
            }
        }
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind.trainable())
            .map(|p| p.data.len())
            .sum()
    }

    pub(crate) fn check_input(&self, features: &FeatureMatrix) -> Result<()> {
        if features.rows < self.config.min_frames() {
            return Err(Error::InvalidInput(format!(
                "{} frames is shorter than the {} required by {} stages",
                features.rows,
                self.config.min_frames(),
                self.config.stages()
            )));
        }
        if self.config.input_cols != 0 && features.cols != self.config.input_cols {
            return Err(Error::Shape(format!(
                "model expects {} feature columns, got {}",
                self.config.input_cols, features.cols
            )));
        }
        Ok(())
    }

    fn unit_forward(&self, x: &Map, u: &Unit, relu: bool) -> Map {
        let mut y = conv3x3(x, &self.params[u.conv].data, u.out_ch, u.stride);
        normalize_one(
            &mut y,
            &self.params[u.mean].data,
            &self.params[u.var].data,
            &self.params[u.gamma].data,
            &self.params[u.beta].data,
        );
        if relu {
            relu_inplace(&mut y);
        }
        y
    }

    /// Final feature map before pooling, using running normalization
    /// statistics.
    pub fn final_map(&self, features: &FeatureMatrix) -> Result<Map> {
        self.check_input(features)?;
        let plan = self.plan();
        let mut x = input_map(features);
        for stage in &plan.stages {
            x = self.unit_forward(&x, &stage.down, true);
            for (a, b) in &stage.blocks {
                let h = self.unit_forward(&x, a, true);
                let mut y = self.unit_forward(&h, b, false);
                for (o, s) in y.data.iter_mut().zip(&x.data) {
                    *o += s;
                }
                relu_inplace(&mut y);
                x = y;
            }
        }
        Ok(x)
    }

    /// Pooled embedding (length `embed_dim`).
    pub fn embed(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(global_average(&self.final_map(features)?))
    }

    pub fn head_logits(&self, embedding: &[f64]) -> Vec<f64> {
        let k = self.config.n_classes;
        let w = &self.params[self.params.len() - 2].data;
        let b = &self.params[self.params.len() - 1].data;
        let mut logits = b.clone();
        for (c, &e) in embedding.iter().enumerate() {
            for (j, l) in logits.iter_mut().enumerate() {
                *l += w[c * k + j] * e;
            }
        }
        logits
    }

    /// Inference: embedding and class logits.
    pub fn forward(&self, features: &FeatureMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let e = self.embed(features)?;
        let logits = self.head_logits(&e);
        Ok((e, logits))
    }

    pub fn predict(&self, features: &FeatureMatrix) -> Result<usize> {
        let (_, logits) = self.forward(features)?;
        Ok(argmax(&logits))
    }

    /// Copies the body and attaches a fresh seeded head for `n_classes`.
    pub fn swap_head(&self, n_classes: usize, seed: u64) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config("a head needs at least two classes".into()));
        }
        let config = NetConfig {
            n_classes,
            seed,
            ..self.config.clone()
        };
        let (_, specs) = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4845_4144);
        let params = self
            .params
            .iter()
            .zip(specs)
            .map(|(old, spec)| {
                if spec.kind.in_head() {
                    let mut data = fill_param(&spec, &mut rng);
                    if config.precision == Precision::Single {
                        round_to_single(&mut data);
                    }
                    Param {
                        name: spec.name,
                        kind: spec.kind,
                        shape: spec.shape,
                        data,
                    }
                } else {
                    old.clone()
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Sets head weights and bias to zero.
    pub fn zero_head(&mut self) {
        for p in self.params.iter_mut().filter(|p| p.kind.in_head()) {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn head_bias_mut(&mut self) -> &mut [f64] {
        let n = self.params.len();
        &mut self.params[n - 1].data
    }
}

pub(crate) fn input_map(f: &FeatureMatrix) -> Map {
    Map {
        c: 1,
        h: f.rows,
        w: f.cols,
        data: f.values.clone(),
    }
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
