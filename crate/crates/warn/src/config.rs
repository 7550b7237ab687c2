//! Run configuration: a TOML file with `[data]`, `[model]`, `[attention]`,
//! `[train]`, `[output]`, `[ablation]` and `[sweep]` sections, every key
//! optional. `--set section.key=value` overrides are applied to the parsed
//! document before it is checked, so they take precedence over the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use warn_core::attention::MaskFn;
use warn_core::batch::Augment;
use warn_core::clutter::DatasetSpec;
use warn_core::models::{AttentionSettings, BackboneConfig, BaseCnnConfig, ModelConfig, TapPoint, ToyWrnConfig};
use warn_core::train::TrainConfig;

use crate::error::{read_file, write_file, Result, WarnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Clutter,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub kind: DataKind,
    pub mnist_dir: PathBuf,
    pub cifar_dir: PathBuf,
    /// Generated splits are cached here when set.
    pub cache_dir: Option<PathBuf>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub distractors: usize,
    pub seed: u64,
    /// Pad-crop-flip augmentation of training batches.
    pub augment: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = DatasetSpec::default();
        Self {
            kind: DataKind::Clutter,
            mnist_dir: "data/mnist".into(),
            cifar_dir: "data/cifar-10-batches-bin".into(),
            cache_dir: None,
            train: d.train,
            val: d.val,
            test: d.test,
            distractors: d.distractors,
            seed: d.seed,
            augment: false,
        }
    }
}

impl DataSection {
    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            train: self.train,
            val: self.val,
            test: self.test,
            distractors: self.distractors,
            seed: self.seed,
        }
    }

    /// `(labels, channels, height, width)` of the images this section yields.
    pub fn image_geometry(&self) -> (usize, usize, usize, usize) {
        match self.kind {
            DataKind::Clutter => (10, 1, 40, 40),
            DataKind::Cifar10 => (10, 3, 32, 32),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Cnn,
    Wrn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TapKind {
    PostPool,
    PrePool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backbone: BackboneKind,
    pub channels: [usize; 5],
    pub fc_hidden: usize,
    pub tap: TapKind,
    /// Wide resnet depth, `6n + 4`.
    pub depth: usize,
    pub widen: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Cnn,
            channels: warn_core::models::base_cnn::DEFAULT_CHANNELS,
            fc_hidden: warn_core::models::base_cnn::DEFAULT_FC_HIDDEN,
            tap: TapKind::PostPool,
            depth: 16,
            widen: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Softmax,
    Sigmoid,
}

impl From<MaskKind> for MaskFn {
    fn from(m: MaskKind) -> Self {
        match m {
            MaskKind::Softmax => MaskFn::Softmax,
            MaskKind::Sigmoid => MaskFn::Sigmoid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionSection {
    pub enabled: bool,
    pub depth: usize,
    pub width: usize,
    pub mask: MaskKind,
    pub gates: bool,
    pub gamma: f64,
    pub block_base_gradients: bool,
}

impl Default for AttentionSection {
    fn default() -> Self {
        let s = AttentionSettings::default();
        Self {
            enabled: true,
            depth: s.depth,
            width: s.width,
            mask: MaskKind::Softmax,
            gates: s.gates,
            gamma: s.gamma,
            block_base_gradients: s.block_base_gradients,
        }
    }
}

impl AttentionSection {
    pub fn settings(&self) -> Option<AttentionSettings> {
        self.enabled.then(|| AttentionSettings {
            depth: self.depth,
            width: self.width,
            mask_fn: self.mask.into(),
            gates: self.gates,
            gamma: self.gamma,
            block_base_gradients: self.block_base_gradients,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr0,
            milestones: t.milestones,
            epochs: t.epochs,
            batch: t.batch,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            seed: t.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "runs/default".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub depth: Vec<usize>,
    pub width: Vec<usize>,
    pub gates: Vec<bool>,
    pub mask: Vec<MaskKind>,
    pub reg: Vec<bool>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            depth: vec![1, 2, 3, 4],
            width: vec![1, 2, 3, 4],
            gates: vec![true, false],
            mask: vec![MaskKind::Softmax, MaskKind::Sigmoid],
            reg: vec![true, false],
        }
    }
}

impl AblationSection {
    pub fn cells(&self) -> usize {
        self.depth.len() * self.width.len() * self.gates.len() * self.mask.len() * self.reg.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub distractors: Vec<usize>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            distractors: vec![4, 8, 16, 32, 64],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub attention: AttentionSection,
    pub train: TrainSection,
    pub output: OutputSection,
    pub ablation: AblationSection,
    pub sweep: SweepSection,
}

/// Everything needed to rebuild a network: stored in checkpoint manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub labels: usize,
    pub in_channels: usize,
    pub input: [usize; 2],
    pub model: ModelSection,
    pub attention: AttentionSection,
}

impl Architecture {
    pub fn model_config(&self) -> ModelConfig {
        let backbone = match self.model.backbone {
            BackboneKind::Cnn => BackboneConfig::Cnn(BaseCnnConfig {
                labels: self.labels,
                channels: self.model.channels,
                fc_hidden: self.model.fc_hidden,
                in_channels: self.in_channels,
                input: (self.input[0], self.input[1]),
                tap: match self.model.tap {
                    TapKind::PostPool => TapPoint::PostPool,
                    TapKind::PrePool => TapPoint::PrePool,
                },
            }),
            BackboneKind::Wrn => BackboneConfig::Wrn(ToyWrnConfig {
                depth: self.model.depth,
                widen: self.model.widen,
                labels: self.labels,
                in_channels: self.in_channels,
            }),
        };
        ModelConfig {
            backbone,
            attention: self.attention.settings(),
        }
    }
}

impl RunConfig {
    pub fn architecture(&self) -> Architecture {
        let (labels, in_channels, h, w) = self.data.image_geometry();
        Architecture {
            labels,
            in_channels,
            input: [h, w],
            model: self.model.clone(),
            attention: self.attention.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr0: self.train.lr,
            milestones: self.train.milestones.clone(),
            epochs: self.train.epochs,
            batch: self.train.batch,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            seed: self.train.seed,
            augment: if self.data.augment {
                Augment::PadCropFlip { pad: 4 }
            } else {
                Augment::None
            },
        }
    }

    /// Range checks that serde cannot express. Errors name the key.
    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if !(t.lr > 0.0) || !t.lr.is_finite() {
            return Err(WarnError::config("train.lr", "must be positive"));
        }
        if t.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(WarnError::config("train.milestones", "must be strictly increasing"));
        }
        if t.batch == 0 {
            return Err(WarnError::config("train.batch", "must be at least 1"));
        }
        if t.momentum < 0.0 {
            return Err(WarnError::config("train.momentum", "must be non-negative"));
        }
        if t.weight_decay < 0.0 {
            return Err(WarnError::config("train.weight_decay", "must be non-negative"));
        }
        let d = &self.data;
        for (key, v) in [("data.train", d.train), ("data.val", d.val), ("data.test", d.test)] {
            if v == 0 {
                return Err(WarnError::config(key, "split sizes must be positive"));
            }
        }
        let a = &self.attention;
        if a.enabled {
            if a.depth == 0 {
                return Err(WarnError::config("attention.depth", "must be at least 1"));
            }
            if a.width == 0 {
                return Err(WarnError::config("attention.width", "must be at least 1"));
            }
        }
        if a.gamma < 0.0 || !a.gamma.is_finite() {
            return Err(WarnError::config("attention.gamma", "must be a non-negative number"));
        }
        let m = &self.model;
        if m.channels.contains(&0) {
            return Err(WarnError::config("model.channels", "channel counts must be positive"));
        }
        if m.backbone == BackboneKind::Wrn && (m.depth < 10 || (m.depth - 4) % 6 != 0) {
            return Err(WarnError::config("model.depth", "wide resnet depth must be 6n+4 with n >= 1"));
        }
        if m.widen == 0 {
            return Err(WarnError::config("model.widen", "must be at least 1"));
        }
        let taps = match m.backbone {
            BackboneKind::Cnn => 5,
            BackboneKind::Wrn => 3,
        };
        if a.enabled && a.depth > taps {
            return Err(WarnError::config("attention.depth", format!("this backbone has {} tap points", taps)));
        }
        let (_, _, h, w) = self.data.image_geometry();
        if m.backbone == BackboneKind::Cnn && (h < 8 || w < 8) {
            return Err(WarnError::config("data.kind", "images must be at least 8x8 for the cnn backbone"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the resolved configuration to `dir/config.toml`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("config.toml");
        write_file(&path, self.to_toml().as_bytes())?;
        Ok(path)
    }
}

/// Applies `key.path=value`. The value is read as a TOML value when it
/// parses as one and as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        return Err(WarnError::config(assignment, "override must look like section.key=value"));
    };
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {}", raw).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(WarnError::config(key, "empty key segment"));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(WarnError::config(key, format!("`{}` is not a section", p))),
        };
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses a document, applies overrides and validates the result.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let key = e.span().map_or_else(|| "<file>".to_string(), |s| format!("<file> bytes {}..{}", s.start, s.end));
        WarnError::config(key, e.message().to_string())
    })?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(doc)).map_err(|e| {
        let key = e.path().to_string();
        WarnError::config(key, e.inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => String::from_utf8(read_file(p)?).map_err(|_| WarnError::config(p.display().to_string(), "not UTF-8"))?,
        None => String::new(),
    };
    parse_config(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse_config("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.lr, 0.1);
        assert_eq!(c.train.milestones, [60]);
        assert_eq!(c.train.epochs, 200);
        assert_eq!(c.attention.gamma, 0.001);
    }

    #[test]
    fn overrides_win_over_the_file() {
        let c = parse_config("[train]\nepochs = 7\n", &["train.epochs=1".into(), "output.dir=out/x".into()]).unwrap();
        assert_eq!(c.train.epochs, 1);
        assert_eq!(c.output.dir, PathBuf::from("out/x"));
        let c = parse_config("", &["ablation.depth=[1,4]".into(), "attention.mask=sigmoid".into()]).unwrap();
        assert_eq!(c.ablation.depth, [1, 4]);
        assert_eq!(c.attention.mask, MaskKind::Sigmoid);
    }

    #[test]
    fn errors_name_the_offending_key() {
        let key = |text: &str, o: &[&str]| match parse_config(text, &o.iter().map(|s| s.to_string()).collect::<Vec<_>>()) {
            Err(WarnError::Config { key, .. }) => key,
            other => panic!("{:?}", other),
        };
        assert_eq!(key("[train]\nepoch = 3\n", &[]), "train.epoch");
        assert_eq!(key("", &["train.epochs=many"]), "train.epochs");
        assert_eq!(key("", &["train.lr=-1"]), "train.lr");
        assert_eq!(key("", &["train.milestones=[5,5]"]), "train.milestones");
        assert_eq!(key("[bogus]\n", &[]), "bogus");
        assert_eq!(key("", &["attention.depth=0"]), "attention.depth");
    }

    #[test]
    fn snapshot_roundtrips() {
        let mut c = RunConfig::default();
        c.train.epochs = 3;
        c.data.cache_dir = Some("cache".into());
        c.attention.mask = MaskKind::Sigmoid;
        assert_eq!(parse_config(&c.to_toml(), &[]).unwrap(), c);
    }
}
