//! End-to-end runs: configuration with dotted keys, data loading, the
//! seeded train/test split, train-then-evaluate, and ablation grids.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::dataset::{load_dataset, Sample};
use crate::features::synth::{generate, SynthConfig};
use crate::loss::{Gammas, PolarityMap};
use crate::model::{prepare_all, AvModel, ModelConfig, PreparedSample};
use crate::params::ParamStore;
use crate::train::{evaluate, split_indices, train, EpochLog, Evaluation, TrainConfig, TrainOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Fraction of the dataset used for training.
    pub split: f64,
    /// Dataset manifest; `None` generates the synthetic set from `synth`.
    pub data: Option<PathBuf>,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gamma: Gammas,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            split: 0.8,
            data: None,
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::desk(),
            gamma: Gammas::default(),
        }
    }
}

/// Turn `{"a.b": 1, "a.c": 2}` into `{"a": {"b": 1, "c": 2}}`.
pub fn nest_dotted(flat: &Map<String, Value>) -> Result<Value> {
    let mut root = Map::new();
    for (key, value) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed key `{key}`")));
        }
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            let next = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            node = next
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("key `{key}` conflicts with a scalar at `{p}`")))?;
        }
        let leaf = parts[parts.len() - 1];
        if node.insert(leaf.to_string(), value.clone()).is_some() {
            return Err(Error::Config(format!("key `{key}` given twice")));
        }
    }
    Ok(Value::Object(root))
}

impl RunConfig {
    /// Build from flat dotted keys; unknown keys are rejected.
    pub fn from_flat(flat: &Map<String, Value>) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_value(nest_dotted(flat)?).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a `key=value` override; the value is read as JSON when it
    /// parses, otherwise as a string.
    pub fn parse_override(kv: &str) -> Result<(String, Value)> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        Ok((k.trim().to_string(), value))
    }

    /// Use `seed` for data generation, initialization, the split and
    /// training order.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.model.init_seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split <= 1.0) {
            return Err(Error::Config(format!("split {} outside (0, 1]", self.split)));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.polarity_map().validate()?;
        if self.data.is_none() {
            self.synth.validate()?;
            if self.synth.num_classes != self.model.num_classes {
                return Err(Error::Config(format!(
                    "synth.num_classes = {} but model.num_classes = {}",
                    self.synth.num_classes, self.model.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn polarity_map(&self) -> PolarityMap {
        PolarityMap {
            gamma: self.gamma,
            ..Default::default()
        }
    }

    pub fn load_samples(&self) -> Result<Vec<Sample>> {
        match &self.data {
            Some(path) => load_dataset(path),
            None => generate(&self.synth),
        }
    }
}

/// Train/test membership by sample id, with a checksum over both lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub checksum: String,
}

pub fn make_split(samples: &[PreparedSample], fraction: f64, seed: u64) -> Result<Split> {
    let (train, test) = split_indices(samples.len(), fraction, seed)?;
    let mut h = Sha256::new();
    for (tag, idx) in [("train", &train), ("test", &test)] {
        h.update(tag.as_bytes());
        for &i in idx.iter() {
            h.update(samples[i].id.as_bytes());
            h.update([0]);
        }
    }
    let checksum = h.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });
    Ok(Split { train, test, checksum })
}

pub fn subset(samples: &[PreparedSample], idx: &[usize]) -> Vec<PreparedSample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

pub struct RunResult {
    pub model: AvModel,
    pub params: ParamStore<f32>,
    pub outcome: TrainOutcome,
    pub split: Split,
    /// Held-out evaluation; `None` when the split leaves no test samples.
    pub test: Option<Evaluation>,
}

/// Train on the split's training part and evaluate on its test part.
pub fn run(cfg: &RunConfig, data: &[PreparedSample], on_epoch: impl FnMut(&EpochLog)) -> Result<RunResult> {
    cfg.validate()?;
    let split = make_split(data, cfg.split, cfg.seed)?;
    let train_set = subset(data, &split.train);
    let (model, mut params) = AvModel::build::<f32>(&cfg.model)?;
    let outcome = train(&model, &mut params, &train_set, &cfg.train, &cfg.polarity_map(), on_epoch)?;
    let test = if split.test.is_empty() {
        None
    } else {
        Some(evaluate(&model, &params, &subset(data, &split.test))?)
    };
    Ok(RunResult {
        model,
        params,
        outcome,
        split,
        test,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Layers,
    Mask,
    Fusion,
    Gamma,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "layers" => Ok(AblationAxis::Layers),
            "mask" | "window" => Ok(AblationAxis::Mask),
            "fusion" => Ok(AblationAxis::Fusion),
            "gamma" => Ok(AblationAxis::Gamma),
            _ => Err(Error::Config(format!(
                "unknown ablation axis `{s}` (expected layers, mask, fusion or gamma)"
            ))),
        }
    }
}

impl AblationAxis {
    /// The grid swept when no values are given.
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            AblationAxis::Layers => &["1", "2", "3"],
            AblationAxis::Mask => &["0", "1", "2", "none"],
            AblationAxis::Fusion => &["MidConcat", "Gated", "EWMultiply", "Neural", "Sum"],
            AblationAxis::Gamma => &["0.3", "0.4", "0.5", "0.7"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &RunConfig, value: &str) -> Result<RunConfig> {
        let bad = || Error::Config(format!("bad value `{value}` for ablation axis {self:?}"));
        let mut out = cfg.clone();
        match self {
            AblationAxis::Layers => out.model.layers = value.parse().map_err(|_| bad())?,
            AblationAxis::Mask => {
                out.model.window = if value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad())?)
                }
            }
            AblationAxis::Fusion => out.model.fusion = value.parse()?,
            AblationAxis::Gamma => out.gamma = Gammas::uniform(value.parse().map_err(|_| bad())?),
        }
        out.validate()?;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub value: String,
    pub acc: f64,
    pub wa_f1: f64,
    pub uar: f64,
    pub final_loss: f64,
    pub epochs: usize,
    pub split_checksum: String,
}

/// One training run per value on a shared, once-prepared dataset.
pub fn ablate(cfg: &RunConfig, axis: AblationAxis, values: &[String]) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| axis.apply(cfg, v))
        .collect::<Result<Vec<_>>>()?;
    let samples = cfg.load_samples()?;
    let data = prepare_all(&samples, &cfg.model)?;
    values
        .iter()
        .zip(&configs)
        .map(|(v, c)| {
            let r = run(c, &data, |_| {})?;
            let eval = match &r.test {
                Some(e) => e.clone(),
                None => evaluate(&r.model, &r.params, &data)?,
            };
            Ok(AblationRow {
                value: v.clone(),
                acc: eval.report.acc,
                wa_f1: eval.report.wa_f1,
                uar: eval.report.uar,
                final_loss: r.outcome.final_loss(),
                epochs: r.outcome.history.len(),
                split_checksum: r.split.checksum,
            })
        })
        .collect()
}

pub fn ablation_csv(axis: AblationAxis, rows: &[AblationRow]) -> String {
    let mut out = format!("{},acc,wa_f1,uar,final_loss,epochs,split_checksum\n", format!("{axis:?}").to_lowercase());
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.value, r.acc, r.wa_f1, r.uar, r.final_loss, r.epochs, r.split_checksum
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_nest_and_unknown_keys_fail() {
        let flat: Map<String, Value> =
            serde_json::from_str(r#"{"model.c1": 16, "model.c2": 16, "train.epochs": 3, "gamma.neg": 0.5}"#).unwrap();
        let cfg = RunConfig::from_flat(&flat).unwrap();
        assert_eq!((cfg.model.c1, cfg.train.epochs, cfg.gamma.neg, cfg.gamma.pos), (16, 3, 0.5, 0.7));
        let bad: Map<String, Value> = serde_json::from_str(r#"{"model.nope": 1}"#).unwrap();
        assert!(matches!(RunConfig::from_flat(&bad), Err(Error::Config(_))));
        let clash: Map<String, Value> = serde_json::from_str(r#"{"seed": 1, "seed.x": 2}"#).unwrap();
        assert!(RunConfig::from_flat(&clash).is_err());
    }

    #[test]
    fn overrides_parse_json_or_string() {
        assert_eq!(RunConfig::parse_override("train.lr=0.01").unwrap().1, Value::from(0.01));
        assert_eq!(RunConfig::parse_override("model.fusion=Sum").unwrap().1, Value::from("Sum"));
        assert!(RunConfig::parse_override("nothing").is_err());
    }

    #[test]
    fn axes_apply() {
        let base = RunConfig::default();
        assert_eq!(AblationAxis::Mask.apply(&base, "none").unwrap().model.window, None);
        assert_eq!(AblationAxis::Gamma.apply(&base, "0.3").unwrap().gamma, Gammas::uniform(0.3));
        assert!(AblationAxis::Fusion.apply(&base, "bogus").is_err());
        assert!("colour".parse::<AblationAxis>().is_err());
    }
}
