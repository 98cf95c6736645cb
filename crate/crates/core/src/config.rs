//! Model, loss and training configuration.
//!
//! Configurations are read from TOML with `[model]`, `[loss]` and `[train]`
//! tables. Unknown keys are rejected. [`Config::validate`] checks every
//! invariant and reports all violations at once.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the decoder consumes the distance map, and which loss terms apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderMode {
    /// Test classes were seen during training: additive DistMap, CE + BCL.
    IntraClass,
    /// Test classes are novel: multiplicative normalised DistMap, BCL only.
    OutOfClass,
}

/// Contrastive term used during training (ablation switch).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveMode {
    Off,
    /// Binary contrastive loss: every defect class weighted 1.
    Plain,
    /// Multi-class balanced contrastive loss.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    pub stage_heads: [usize; 4],
    /// Per-stage spatial reduction of the key/value grid along each axis;
    /// the token sequence shrinks by the square of this factor.
    pub reduction_ratios: [usize; 4],
    pub mlp_ratio: f64,
    pub num_classes: usize,
    pub decoder_channels: usize,
    pub mode: DecoderMode,
    /// Change-aware attention in the decoder; `false` gives the plain head.
    pub cad: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stage_channels: [32, 64, 160, 256],
            stage_depths: [2, 2, 2, 2],
            stage_heads: [1, 2, 5, 8],
            reduction_ratios: [8, 4, 2, 1],
            mlp_ratio: 4.0,
            num_classes: 3,
            decoder_channels: 256,
            mode: DecoderMode::IntraClass,
            cad: true,
        }
    }
}

impl ModelConfig {
    /// Hidden width of the MLP in stage `s`.
    pub fn mlp_hidden(&self, stage: usize) -> usize {
        (self.stage_channels[stage] as f64 * self.mlp_ratio).round() as usize
    }

    /// Bottleneck width of the decoder attention transforms.
    pub fn attention_bottleneck(&self) -> usize {
        (self.decoder_channels / 8).max(8)
    }

    pub fn concat_channels(&self) -> usize {
        self.stage_channels.iter().sum()
    }

    fn violations(&self, out: &mut Vec<String>) {
        for s in 0..4 {
            let c = self.stage_channels[s];
            if c == 0 {
                out.push(format!("stage_channels[{s}] must be positive"));
            }
            if self.stage_depths[s] == 0 {
                out.push(format!("stage_depths[{s}] must be positive"));
            }
            let h = self.stage_heads[s];
            if h == 0 || (c > 0 && !c.is_multiple_of(h)) {
                out.push(format!(
                    "stage_heads[{s}]={h} must divide stage_channels[{s}]={c}"
                ));
            }
            if self.reduction_ratios[s] == 0 {
                out.push(format!("reduction_ratios[{s}] must be positive"));
            }
        }
        if !(self.mlp_ratio.is_finite() && self.mlp_ratio > 0.0) {
            out.push("mlp_ratio must be positive".into());
        } else {
            for s in 0..4 {
                let hidden = self.stage_channels[s] as f64 * self.mlp_ratio;
                if (hidden - hidden.round()).abs() > 1e-9 {
                    out.push(format!(
                        "mlp_ratio {} gives a fractional hidden width at stage {s}",
                        self.mlp_ratio
                    ));
                }
            }
        }
        if self.num_classes < 2 {
            out.push(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            ));
        }
        if self.num_classes > 256 {
            out.push("num_classes must fit in an 8-bit mask".into());
        }
        if self.decoder_channels == 0 {
            out.push("decoder_channels must be positive".into());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau_ok: f64,
    pub tau_ng: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub clamp_unchanged_at_zero: bool,
    pub contrastive: ContrastiveMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau_ok: 0.3,
            tau_ng: 2.2,
            lambda1: 1.0,
            lambda2: 1.0,
            clamp_unchanged_at_zero: true,
            contrastive: ContrastiveMode::Balanced,
        }
    }
}

impl LossConfig {
    fn violations(&self, out: &mut Vec<String>) {
        if !(self.tau_ok >= 0.0) {
            out.push("tau_ok must be non-negative".into());
        }
        if !(self.tau_ng > self.tau_ok) {
            out.push(format!(
                "tau_ng must exceed tau_ok (tau_ng={}, tau_ok={})",
                self.tau_ng, self.tau_ok
            ));
        }
        if !(self.lambda1 >= 0.0) {
            out.push("lambda1 must be non-negative".into());
        }
        if !(self.lambda2 >= 0.0) {
            out.push("lambda2 must be non-negative".into());
        }
    }
}

/// Which evaluation protocol a run follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Full,
    CrossClass,
    LabelFraction,
}

/// Train/test class pairing of the cross-class protocol: the first letter
/// names the training class, the second the test class (L = line,
/// A = abpt).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CrossClassSplit {
    Ll,
    Aa,
    La,
    Al,
}

impl CrossClassSplit {
    /// Whether test classes are unseen during training.
    pub fn is_out_of_class(self) -> bool {
        matches!(self, Self::La | Self::Al)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// `[height, width]` in pixels.
    pub input_size: [usize; 2],
    pub iterations: usize,
    pub batch_size: usize,
    pub label_fraction: f64,
    pub protocol: Protocol,
    /// Only read when `protocol` is `cross_class`.
    pub cross_class: CrossClassSplit,
    pub seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_iters: usize,
    /// Learning-rate multiplier for the fusion and decoder parameters.
    pub head_lr_mult: f64,
    /// Random resize/crop/flip; normalisation is always applied.
    pub augment: bool,
    /// Per-channel mean subtracted from 0..255 pixel values.
    pub norm_mean: [f64; 3],
    /// Per-channel divisor applied after mean subtraction.
    pub norm_std: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            input_size: [512, 512],
            iterations: 126_000,
            batch_size: 4,
            label_fraction: 1.0,
            protocol: Protocol::Full,
            cross_class: CrossClassSplit::Ll,
            seed: 0,
            learning_rate: 6e-5,
            weight_decay: 0.01,
            warmup_iters: 1500,
            head_lr_mult: 10.0,
            augment: true,
            norm_mean: [123.675, 116.28, 103.53],
            norm_std: [58.395, 57.12, 57.375],
        }
    }
}

impl TrainConfig {
    fn violations(&self, out: &mut Vec<String>) {
        let [h, w] = self.input_size;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            out.push(format!("input_size {h}x{w} is not divisible by 32"));
        }
        if self.batch_size == 0 {
            out.push("batch_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.label_fraction) {
            out.push(format!(
                "label_fraction {} must lie in [0, 1]",
                self.label_fraction
            ));
        }
        if !(self.learning_rate >= 0.0) {
            out.push("learning_rate must be non-negative".into());
        }
        if !(self.head_lr_mult >= 0.0) {
            out.push("head_lr_mult must be non-negative".into());
        }
        if !(self.weight_decay >= 0.0) {
            out.push("weight_decay must be non-negative".into());
        }
        if self.norm_std.iter().any(|s| !(*s > 0.0)) {
            out.push("norm_std entries must be positive".into());
        }
    }
}

/// Complete run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

impl Config {
    /// Every violated invariant, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.model.violations(&mut out);
        self.loss.violations(&mut out);
        self.train.violations(&mut out);
        if self.model.mode == DecoderMode::OutOfClass
            && self.loss.contrastive == ContrastiveMode::Off
        {
            out.push(
                "out_of_class mode trains on the contrastive loss alone; contrastive cannot be off"
                    .into(),
            );
        }
        if self.train.protocol == Protocol::CrossClass {
            let ooc = self.train.cross_class.is_out_of_class();
            if ooc != (self.model.mode == DecoderMode::OutOfClass) {
                out.push(format!(
                    "cross_class split {:?} requires model.mode = {}",
                    self.train.cross_class,
                    if ooc { "out_of_class" } else { "intra_class" }
                ));
            }
        }
        // Each stage's key/value grid must tile exactly by its reduction ratio.
        let [h, w] = self.train.input_size;
        if h % 32 == 0 && w % 32 == 0 && h > 0 && w > 0 {
            for s in 0..4 {
                let r = self.model.reduction_ratios[s];
                let stride = 4 << s;
                let (sh, sw) = (h / stride, w / stride);
                if r > 0 && (sh % r != 0 || sw % r != 0) {
                    out.push(format!(
                        "reduction_ratios[{s}]={r} does not divide the stage grid {sh}x{sw} \
                         ({} tokens)",
                        sh * sw
                    ));
                }
            }
        }
        out
    }

    pub fn validate(self) -> Result<Self> {
        let v = self.violations();
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Applies `section.key=value` overrides. Values use TOML syntax; bare
    /// words are taken as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = toml::Table::try_from(self).map_err(|e| Error::ConfigParse(e.to_string()))?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::ConfigParse(format!("override `{ov}` is not key=value")))?;
            let path: Vec<&str> = key.trim().split('.').collect();
            let value = parse_override_value(raw.trim());
            set_path(&mut doc, &path, value).map_err(Error::ConfigParse)?;
        }
        toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::ConfigParse(e.to_string()))
    }

    /// Every accepted key as `section.field`.
    pub fn keys() -> Vec<String> {
        let doc = toml::Table::try_from(Config::default()).expect("default serialises");
        let mut out = Vec::new();
        for (section, v) in &doc {
            if let toml::Value::Table(t) = v {
                for k in t.keys() {
                    out.push(format!("{section}.{k}"));
                }
            }
        }
        out
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(
    table: &mut toml::Table,
    path: &[&str],
    value: toml::Value,
) -> std::result::Result<(), String> {
    match path {
        [] => Err("empty override key".into()),
        [leaf] => {
            table.insert((*leaf).to_string(), value);
            Ok(())
        }
        [head, rest @ ..] => match table.get_mut(*head) {
            Some(toml::Value::Table(inner)) => set_path(inner, rest, value),
            _ => Err(format!("unknown config section `{head}`")),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        assert!(Config::default().validate().is_ok());
    }

    #[test]
    fn tau_ordering_is_enforced() {
        let mut c = Config::default();
        c.loss.tau_ok = 0.5;
        c.loss.tau_ng = 0.3;
        let v = c.violations();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("tau_ng must exceed tau_ok"), "{v:?}");
    }

    #[test]
    fn input_size_must_be_multiple_of_32() {
        let mut c = Config::default();
        c.train.input_size = [500, 500];
        let v = c.violations();
        assert!(v.iter().any(|m| m.contains("not divisible by 32")), "{v:?}");
    }

    #[test]
    fn all_violations_reported_together() {
        let mut c = Config::default();
        c.loss.tau_ng = 0.1;
        c.model.num_classes = 1;
        c.train.input_size = [100, 64];
        c.train.label_fraction = 1.5;
        let v = c.violations();
        assert_eq!(v.len(), 4, "{v:?}");
        match c.validate() {
            Err(Error::InvalidConfig(list)) => assert_eq!(list.len(), 4),
            other => panic!("expected InvalidConfig, got {other:?}"),
        }
    }

    #[test]
    fn reduction_ratio_must_tile_stage_grid() {
        let mut c = Config::default();
        c.train.input_size = [32, 32];
        // stage 1 grid is 8x8 and the ratio 8 tiles it; make it 3.
        c.model.reduction_ratios = [3, 4, 2, 1];
        let v = c.violations();
        assert!(
            v.iter().any(|m| m.contains("reduction_ratios[0]=3")),
            "{v:?}"
        );
        // stage 2 grid at 32x32 is 4x4: ratio 4 still tiles it.
        assert!(
            !v.iter().any(|m| m.contains("reduction_ratios[1]")),
            "{v:?}"
        );
    }

    #[test]
    fn heads_must_divide_channels() {
        let mut c = Config::default();
        c.model.stage_heads = [3, 2, 5, 8];
        assert!(c.violations().iter().any(|m| m.contains("stage_heads[0]")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Config::from_toml_str("[model]\nnum_classes = 3\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = Config::from_toml_str("[nonsense]\nx = 1\n").unwrap_err();
        assert!(err.to_string().contains("nonsense"), "{err}");
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = Config::from_toml_str("[loss]\ntau_ng = 3.0\n").unwrap();
        assert_eq!(c.loss.tau_ng, 3.0);
        assert_eq!(c.model, ModelConfig::default());
    }

    #[test]
    fn overrides_apply_dotted_paths() {
        let c = Config::default()
            .with_overrides(&[
                "model.num_classes=2",
                "train.input_size=[64, 128]",
                "model.mode=out_of_class",
            ])
            .unwrap();
        assert_eq!(c.model.num_classes, 2);
        assert_eq!(c.train.input_size, [64, 128]);
        assert_eq!(c.model.mode, DecoderMode::OutOfClass);
        assert!(Config::default().with_overrides(&["model.nope=1"]).is_err());
        assert!(Config::default().with_overrides(&["nope.x=1"]).is_err());
        assert!(Config::default()
            .with_overrides(&["model.num_classes"])
            .is_err());
    }

    #[test]
    fn keys_cover_every_field() {
        let keys = Config::keys();
        for k in [
            "model.reduction_ratios",
            "loss.tau_ok",
            "train.input_size",
            "train.seed",
        ] {
            assert!(keys.contains(&k.to_string()), "{k} missing from {keys:?}");
        }
    }
}
