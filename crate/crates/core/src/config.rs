//! Flat run configuration: a dataset preset, then an optional TOML or JSON
//! file, then `key=value` overrides, each layer replacing individual keys.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::batch::{MepConfig, SamplingConfig};
use crate::error::{io_err, CoreError, Result};
use crate::model::{Activation, HitterConfig, NormPlacement};
use crate::train::TrainConfig;

pub const PRESETS: [&str; 3] = ["fb15k237", "wn18rr", "custom"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub dataset_dir: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,

    pub d_model: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    pub entity_layers: usize,
    pub context_layers: usize,
    pub dropout: f64,
    pub embedding_dropout: f64,
    pub label_smoothing: f64,
    pub activation: Activation,
    pub norm: NormPlacement,
    pub layer_norm_eps: f64,
    pub init_std: f64,
    pub mep_transform: bool,

    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub warmup_fraction: f64,
    pub eval_every: usize,
    pub patience: usize,
    pub adam_style: String,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub decay_norm_params: bool,
    pub eval_batch_size: usize,
    pub tie_policy: String,

    pub neighbor_cap: usize,
    pub train_keep_frac: f64,
    pub remove_all_gold_pairs: bool,
    pub eval_seed: u64,

    pub mep_select_prob: f64,
    pub mep_mask_frac: f64,
    pub mep_replace_frac: f64,
    pub mep_keep_frac: f64,
    pub mep_aux_loss: bool,

    pub no_context: bool,
    pub no_mep: bool,
}

/// Component configurations after ablations are applied.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub model: HitterConfig,
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
    pub mep: MepConfig,
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let m = HitterConfig::default();
        let t = TrainConfig::default();
        let mut cfg = Self {
            preset: name.to_string(),
            dataset_dir: PathBuf::from("data").join(name),
            output_dir: PathBuf::from("runs").join(name),
            seed: t.seed,
            d_model: m.d_model,
            ffn_dim: m.ffn_dim,
            heads: m.heads,
            entity_layers: m.entity_layers,
            context_layers: m.context_layers,
            dropout: m.dropout,
            embedding_dropout: m.embedding_dropout,
            label_smoothing: m.label_smoothing,
            activation: m.activation,
            norm: m.norm,
            layer_norm_eps: m.layer_norm_eps,
            init_std: m.init_std,
            mep_transform: m.mep_transform,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            warmup_fraction: t.warmup_fraction,
            eval_every: t.eval_every,
            patience: t.patience,
            adam_style: t.adam_style,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            clip_norm: t.clip_norm,
            decay_norm_params: t.decay_norm_params,
            eval_batch_size: t.eval_batch_size,
            tie_policy: t.tie_policy,
            neighbor_cap: 12,
            train_keep_frac: 0.5,
            remove_all_gold_pairs: false,
            eval_seed: 0,
            mep_select_prob: 0.8,
            mep_mask_frac: 0.6,
            mep_replace_frac: 0.12,
            mep_keep_frac: 0.28,
            mep_aux_loss: true,
            no_context: false,
            no_mep: false,
        };
        match name {
            "wn18rr" | "custom" => {}
            "fb15k237" => {
                cfg.neighbor_cap = 50;
                cfg.train_keep_frac = 0.7;
                cfg.mep_select_prob = 1.0;
                cfg.mep_mask_frac = 0.5;
                cfg.mep_replace_frac = 0.0;
                cfg.mep_keep_frac = 0.5;
                cfg.mep_aux_loss = false;
            }
            other => {
                return Err(CoreError::UnknownStrategy {
                    kind: "preset",
                    name: other.to_string(),
                    known: PRESETS.join(", "),
                })
            }
        }
        Ok(cfg)
    }

    /// Layer `file` and `overrides` on top of a preset. The preset comes from
    /// the last layer that names one, falling back to `default_preset`.
    pub fn load(default_preset: &str, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file_table = match file {
            Some(p) => read_table(p)?,
            None => toml::Table::new(),
        };
        let mut set_table = toml::Table::new();
        for kv in overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("override `{kv}` is not key=value")))?;
            set_table.insert(k.trim().to_string(), parse_value(v.trim()));
        }
        let preset = [&set_table, &file_table]
            .iter()
            .find_map(|t| t.get("preset").and_then(|v| v.as_str().map(str::to_string)))
            .unwrap_or_else(|| default_preset.to_string());
        let mut table = toml::Table::try_from(Self::preset(&preset)?)
            .map_err(|e| CoreError::Config(e.to_string()))?;
        for layer in [file_table, set_table] {
            for (k, v) in layer {
                if !table.contains_key(&k) {
                    return Err(CoreError::Config(format!("unknown config key `{k}`")));
                }
                table.insert(k, v);
            }
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CoreError::Config(e.to_string()))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }

    pub fn model_config(&self) -> HitterConfig {
        HitterConfig {
            d_model: self.d_model,
            ffn_dim: self.ffn_dim,
            heads: self.heads,
            entity_layers: self.entity_layers,
            context_layers: self.context_layers,
            dropout: self.dropout,
            embedding_dropout: self.embedding_dropout,
            label_smoothing: self.label_smoothing,
            context_enabled: !self.no_context,
            mep_aux_enabled: self.mep_aux_loss && !self.no_mep && !self.no_context,
            activation: self.activation,
            norm: self.norm,
            layer_norm_eps: self.layer_norm_eps,
            init_std: self.init_std,
            mep_transform: self.mep_transform,
        }
    }

    /// Split into component configs. Either ablation turns perturbation off;
    /// a masked source would leave the context-free model with no input.
    pub fn resolve(&self) -> Result<Resolved> {
        let model = self.model_config();
        model.validate()?;
        let train = TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            warmup_fraction: self.warmup_fraction,
            eval_every: self.eval_every,
            patience: self.patience,
            seed: self.seed,
            adam_style: self.adam_style.clone(),
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            clip_norm: self.clip_norm,
            decay_norm_params: self.decay_norm_params,
            eval_batch_size: self.eval_batch_size,
            tie_policy: self.tie_policy.clone(),
        };
        train.validate()?;
        let sampling = SamplingConfig {
            cap: self.neighbor_cap,
            train_keep_frac: self.train_keep_frac,
            remove_all_gold_pairs: self.remove_all_gold_pairs,
            eval_seed: self.eval_seed,
        };
        sampling.validate()?;
        let mut mep = MepConfig {
            select_prob: self.mep_select_prob,
            mask_frac: self.mep_mask_frac,
            replace_frac: self.mep_replace_frac,
            keep_frac: self.mep_keep_frac,
            use_aux_loss: model.mep_aux_enabled,
        };
        mep.validate()?;
        if self.no_mep || self.no_context {
            mep = MepConfig::disabled();
        }
        Ok(Resolved {
            model,
            train,
            sampling,
            mep,
        })
    }
}

fn read_table(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    if is_json {
        let value: serde_json::Value = serde_json::from_str(&text)?;
        toml::Table::try_from(value).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))
    } else {
        text.parse::<toml::Table>()
            .map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))
    }
}

/// TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
