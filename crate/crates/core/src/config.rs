//! Run configuration: a flat JSON object with `model.*`, `features.*`,
//! `split.*` and `eval.*` keys, plus model dispatch.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::BookGraph;
use crate::ingest::SplitSpec;
use crate::neural::{
    fit_hgnn, fit_lightgcn, fit_two_tower, AblationFlags, HgnnConfig, LightGcnConfig, TowerConfig,
};
use crate::recommend::{
    fit_als, fit_category_popularity, fit_content_based, fit_explicit_mf, fit_hybrid_warp,
    fit_item_cf, fit_popularity, fit_user_cf, AlsConfig, ContentConfig, FitContext, MfConfig,
    ModelKind, RandomRanker, Recommender, WarpConfig, KNN_DEFAULT_K,
};
use crate::sparse::TrainSet;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub values: BTreeMap<String, Value>,
}

fn model_defaults(kind: ModelKind) -> Vec<(&'static str, Value)> {
    match kind {
        ModelKind::Popularity | ModelKind::CategoryPop | ModelKind::Random => vec![],
        ModelKind::UserCf | ModelKind::ItemCf => vec![("model.k", json!(KNN_DEFAULT_K))],
        ModelKind::Als => {
            let c = AlsConfig::default();
            vec![
                ("model.dim", json!(c.dim)),
                ("model.epochs", json!(c.epochs)),
                ("model.reg", json!(c.reg)),
                ("model.alpha", json!(c.alpha)),
                ("model.init_std", json!(c.init_std)),
            ]
        }
        ModelKind::ExplicitMf => {
            let c = MfConfig::default();
            vec![
                ("model.dim", json!(c.dim)),
                ("model.epochs", json!(c.epochs)),
                ("model.reg", json!(c.reg)),
                ("model.lr", json!(c.lr)),
                ("model.init_std", json!(c.init_std)),
            ]
        }
        ModelKind::Content => {
            let c = ContentConfig::default();
            vec![
                ("model.min_df", json!(c.min_df)),
                ("model.max_df", json!(c.max_df)),
                ("model.max_features", json!(c.max_features)),
                ("model.use_text", json!(c.use_text)),
            ]
        }
        ModelKind::HybridWarp => {
            let c = WarpConfig::default();
            vec![
                ("model.dim", json!(c.dim)),
                ("model.epochs", json!(c.epochs)),
                ("model.lr", json!(c.lr)),
                ("model.reg", json!(c.reg)),
                ("model.max_samples", json!(c.max_samples)),
                ("model.margin", json!(c.margin)),
                ("model.use_identity", json!(c.use_identity)),
                ("model.init_std", json!(c.init_std)),
            ]
        }
        ModelKind::Lightgcn => {
            let c = LightGcnConfig::default();
            vec![
                ("model.dim", json!(c.dim)),
                ("model.layers", json!(c.layers)),
                ("model.lr", json!(c.lr)),
                ("model.epochs", json!(c.epochs)),
                ("model.batch", json!(c.batch)),
                ("model.reg", json!(c.reg)),
                ("model.init_std", json!(c.init_std)),
            ]
        }
        ModelKind::Hgnn => {
            let c = HgnnConfig::default();
            vec![
                ("model.dim", json!(c.dim)),
                ("model.layers", json!(c.layers)),
                ("model.dropout", json!(c.dropout)),
                ("model.lr", json!(c.lr)),
                ("model.epochs", json!(c.epochs)),
                ("model.batch", json!(c.batch)),
                ("model.patience", json!(c.patience)),
                ("model.init_std", json!(c.init_std)),
            ]
        }
        ModelKind::TwoTower => {
            let c = TowerConfig::default();
            vec![
                ("model.id_dim", json!(c.id_dim)),
                ("model.text_proj_dim", json!(c.text_proj_dim)),
                ("model.out_dim", json!(c.out_dim)),
                ("model.hidden", json!(c.hidden)),
                ("model.layers", json!(c.layers)),
                ("model.dropout", json!(c.dropout)),
                ("model.layer_norm", json!(c.layer_norm)),
                ("model.max_history", json!(c.max_history)),
                ("model.batch", json!(c.batch)),
                ("model.epochs", json!(c.epochs)),
                ("model.lr", json!(c.lr)),
                ("model.weight_decay", json!(c.weight_decay)),
                ("model.patience", json!(c.patience)),
                ("model.tau", json!(c.tau)),
                ("model.init_std", json!(c.init_std)),
            ]
        }
    }
}

/// Parses a command-line override value: JSON when it parses, otherwise a
/// plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Defaults for `kind`.
    pub fn new(kind: ModelKind) -> Self {
        let split = SplitSpec::default();
        let mut values: BTreeMap<String, Value> = [
            ("model.name", json!(kind.name())),
            ("model.seed", json!(42)),
            ("model.remove", json!([])),
            ("features.text_dim", json!(64)),
            ("features.embeddings", json!("")),
            ("split.train", json!(split.train_frac)),
            ("split.valid", json!(split.valid_frac)),
            ("split.test", json!(split.test_frac)),
            ("split.seed", json!(split.seed)),
            ("eval.cutoffs", json!(crate::eval::DEFAULT_CUTOFFS)),
            ("eval.seeds", json!([1, 2, 3])),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        for (k, v) in model_defaults(kind) {
            values.insert(k.to_string(), v);
        }
        Self { values }
    }

    /// Defaults for the file's `model.name`, overlaid with the file.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: BTreeMap<String, Value> = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config is not a flat JSON object: {e}")))?;
        let kind: ModelKind = v
            .get("model.name")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Config("config lacks a string model.name".into()))?
            .parse()?;
        let mut c = Self::new(kind);
        for (k, val) in v {
            c.set(&k, val)?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Sets a known key. Changing `model.name` resets model keys to the new
    /// model's defaults.
    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        if key == "model.name" {
            let kind: ModelKind = value
                .as_str()
                .ok_or_else(|| Error::Config("model.name must be a string".into()))?
                .parse()?;
            if kind != self.kind()? {
                let keep: Vec<(String, Value)> = self
                    .values
                    .iter()
                    .filter(|(k, _)| !is_model_param(k))
                    .map(|(k, v)| (k.clone(), v.clone()))
                    .collect();
                *self = Self::new(kind);
                self.values.extend(keep);
                self.values.insert(key.into(), value);
            }
            return Ok(());
        }
        match self.values.get(key) {
            None => Err(Error::Config(format!(
                "unknown key {key} for model {}",
                self.kind()?
            ))),
            Some(old) if !same_shape(old, &value) => Err(Error::Config(format!(
                "{key}: expected a value like {old}, got {value}"
            ))),
            Some(_) => {
                self.values.insert(key.into(), value);
                Ok(())
            }
        }
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), parse_value(v.trim()))?;
        }
        Ok(())
    }

    pub fn kind(&self) -> Result<ModelKind> {
        self.str("model.name")?.parse()
    }

    fn get(&self, key: &str) -> Result<&Value> {
        self.values
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing key {key}")))
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        self.get(key)?
            .as_str()
            .ok_or_else(|| Error::Config(format!("{key} must be a string")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .as_f64()
            .ok_or_else(|| Error::Config(format!("{key} must be a number")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::Config(format!("{key} must be a non-negative integer")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .as_u64()
            .ok_or_else(|| Error::Config(format!("{key} must be a non-negative integer")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.get(key)?
            .as_bool()
            .ok_or_else(|| Error::Config(format!("{key} must be true or false")))
    }

    pub fn u64_list(&self, key: &str) -> Result<Vec<u64>> {
        self.get(key)?
            .as_array()
            .and_then(|a| a.iter().map(Value::as_u64).collect::<Option<Vec<_>>>())
            .ok_or_else(|| Error::Config(format!("{key} must be a list of non-negative integers")))
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let s = self.u64_list("eval.seeds")?;
        if s.is_empty() {
            return Err(Error::Config("eval.seeds must not be empty".into()));
        }
        Ok(s)
    }

    pub fn cutoffs(&self) -> Result<Vec<usize>> {
        Ok(self
            .u64_list("eval.cutoffs")?
            .into_iter()
            .map(|k| k as usize)
            .collect())
    }

    pub fn split(&self) -> Result<SplitSpec> {
        SplitSpec::new(
            self.f64("split.train")?,
            self.f64("split.valid")?,
            self.f64("split.test")?,
            self.u64("split.seed")?,
        )
    }

    /// Flags with every signal listed in `model.remove` disabled.
    pub fn flags(&self) -> Result<AblationFlags> {
        let mut f = AblationFlags::FULL;
        let list = self
            .get("model.remove")?
            .as_array()
            .cloned()
            .unwrap_or_default();
        for v in list {
            let r = v
                .as_str()
                .and_then(crate::neural::Removal::parse)
                .ok_or_else(|| Error::Config(format!("model.remove: unknown signal {v}")))?;
            let off = AblationFlags::without(r);
            f.side &= off.side;
            f.relations &= off.relations;
            f.interaction &= off.interaction;
        }
        Ok(f)
    }

    /// Canonical JSON with sorted keys.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.values).expect("config serializes")
    }

    /// SHA-256 of the compact canonical JSON, hex encoded.
    pub fn digest(&self) -> String {
        let compact = serde_json::to_string(&self.values).expect("config serializes");
        Sha256::digest(compact.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn als(&self) -> Result<AlsConfig> {
        Ok(AlsConfig {
            dim: self.usize("model.dim")?,
            epochs: self.usize("model.epochs")?,
            reg: self.f64("model.reg")?,
            alpha: self.f64("model.alpha")?,
            init_std: self.f64("model.init_std")?,
        })
    }

    pub fn mf(&self) -> Result<MfConfig> {
        Ok(MfConfig {
            dim: self.usize("model.dim")?,
            epochs: self.usize("model.epochs")?,
            reg: self.f64("model.reg")?,
            lr: self.f64("model.lr")?,
            init_std: self.f64("model.init_std")?,
        })
    }

    pub fn content(&self) -> Result<ContentConfig> {
        Ok(ContentConfig {
            min_df: self.f64("model.min_df")?,
            max_df: self.f64("model.max_df")?,
            max_features: self.usize("model.max_features")?,
            use_text: self.bool("model.use_text")?,
        })
    }

    pub fn warp(&self) -> Result<WarpConfig> {
        Ok(WarpConfig {
            dim: self.usize("model.dim")?,
            epochs: self.usize("model.epochs")?,
            lr: self.f64("model.lr")?,
            reg: self.f64("model.reg")?,
            max_samples: self.usize("model.max_samples")?,
            margin: self.f64("model.margin")?,
            use_identity: self.bool("model.use_identity")?,
            init_std: self.f64("model.init_std")?,
        })
    }

    pub fn lightgcn(&self) -> Result<LightGcnConfig> {
        Ok(LightGcnConfig {
            dim: self.usize("model.dim")?,
            layers: self.usize("model.layers")?,
            lr: self.f64("model.lr")?,
            epochs: self.usize("model.epochs")?,
            batch: self.usize("model.batch")?,
            reg: self.f64("model.reg")?,
            init_std: self.f64("model.init_std")?,
        })
    }

    pub fn hgnn(&self) -> Result<HgnnConfig> {
        Ok(HgnnConfig {
            dim: self.usize("model.dim")?,
            layers: self.usize("model.layers")?,
            dropout: self.f64("model.dropout")?,
            lr: self.f64("model.lr")?,
            epochs: self.usize("model.epochs")?,
            batch: self.usize("model.batch")?,
            patience: self.usize("model.patience")?,
            init_std: self.f64("model.init_std")?,
        })
    }

    pub fn tower(&self) -> Result<TowerConfig> {
        let c = TowerConfig {
            id_dim: self.usize("model.id_dim")?,
            text_proj_dim: self.usize("model.text_proj_dim")?,
            out_dim: self.usize("model.out_dim")?,
            hidden: self.usize("model.hidden")?,
            layers: self.usize("model.layers")?,
            dropout: self.f64("model.dropout")?,
            layer_norm: self.bool("model.layer_norm")?,
            max_history: self.usize("model.max_history")?,
            batch: self.usize("model.batch")?,
            epochs: self.usize("model.epochs")?,
            lr: self.f64("model.lr")?,
            weight_decay: self.f64("model.weight_decay")?,
            patience: self.usize("model.patience")?,
            tau: self.f64("model.tau")?,
            init_std: self.f64("model.init_std")?,
        };
        c.validate()?;
        Ok(c)
    }
}

fn is_model_param(k: &str) -> bool {
    k.starts_with("model.") && !matches!(k, "model.name" | "model.seed" | "model.remove")
}

fn same_shape(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            x.is_f64() || !y.is_f64() || y.as_f64().is_some_and(|v| v.fract() == 0.0 && v >= 0.0)
        }
        (Value::Bool(_), Value::Bool(_))
        | (Value::String(_), Value::String(_))
        | (Value::Array(_), Value::Array(_)) => true,
        _ => false,
    }
}

/// Review text per training interaction, parallel to `train.interactions`.
pub fn review_texts(graph: &BookGraph, train: &TrainSet) -> Vec<Option<String>> {
    train
        .interactions
        .iter()
        .map(|it| {
            it.review
                .and_then(|r| graph.reviews.get(r))
                .and_then(|r| r.text.clone())
        })
        .collect()
}

/// Fits the configured model. `flags` applies to the neural models with
/// ablation support and is ignored elsewhere.
pub fn fit_model(
    cfg: &RunConfig,
    ctx: &FitContext,
    flags: AblationFlags,
) -> Result<Box<dyn Recommender>> {
    Ok(match cfg.kind()? {
        ModelKind::Popularity => Box::new(fit_popularity(ctx)),
        ModelKind::CategoryPop => Box::new(fit_category_popularity(ctx)),
        ModelKind::UserCf => Box::new(fit_user_cf(ctx, cfg.usize("model.k")?)),
        ModelKind::ItemCf => Box::new(fit_item_cf(ctx, cfg.usize("model.k")?)),
        ModelKind::Als => Box::new(fit_als(ctx, &cfg.als()?, false)?.0),
        ModelKind::ExplicitMf => Box::new(fit_explicit_mf(ctx, &cfg.mf()?)?.0),
        ModelKind::Content => Box::new(fit_content_based(ctx, &cfg.content()?)?),
        ModelKind::HybridWarp => Box::new(fit_hybrid_warp(ctx, &cfg.warp()?)?),
        ModelKind::Lightgcn => Box::new(fit_lightgcn(ctx, &cfg.lightgcn()?)?),
        ModelKind::Hgnn => Box::new(fit_hgnn(ctx, &cfg.hgnn()?, flags)?.0),
        ModelKind::TwoTower => Box::new(fit_two_tower(ctx, &cfg.tower()?, flags)?.0),
        ModelKind::Random => Box::new(RandomRanker {
            num_books: ctx.train.num_books,
            seed: ctx.seed,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_and_digest() {
        let mut c = RunConfig::new(ModelKind::Als);
        let d0 = c.digest();
        c.apply_overrides(&["model.dim=8".into(), "eval.seeds=[4,5]".into()])
            .unwrap();
        assert_eq!(c.als().unwrap().dim, 8);
        assert_eq!(c.seeds().unwrap(), vec![4, 5]);
        assert_ne!(c.digest(), d0);
        assert!(c.apply_overrides(&["model.tau=1".into()]).is_err());
        assert!(c.apply_overrides(&["model.dim=true".into()]).is_err());
        assert!(c.apply_overrides(&["model.dim=1.5".into()]).is_err());
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn switching_model_resets_params() {
        let mut c = RunConfig::new(ModelKind::Als);
        c.apply_overrides(&[
            "split.seed=7".into(),
            "model.name=two_tower".into(),
            "model.tau=0.1".into(),
        ])
        .unwrap();
        assert_eq!(c.tower().unwrap().tau, 0.1);
        assert!(!c.values.contains_key("model.alpha"));
        assert_eq!(c.u64("split.seed").unwrap(), 7);
    }

    #[test]
    fn remove_list() {
        let mut c = RunConfig::new(ModelKind::TwoTower);
        c.apply_overrides(&[r#"model.remove=["side","relations"]"#.into()])
            .unwrap();
        let f = c.flags().unwrap();
        assert!(!f.side && !f.relations && f.interaction);
        c.apply_overrides(&[r#"model.remove=["colour"]"#.into()])
            .unwrap();
        assert!(c.flags().is_err());
    }
}
