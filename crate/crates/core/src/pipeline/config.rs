use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::adapt::{AdaptConfig, TrainConfig};
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::evalkit::EvalConfig;
use crate::scenegen::DomainConfig;

/// Both domains and the dataset sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenegenConfig {
    pub source: DomainConfig,
    pub target: DomainConfig,
    /// Scenes per training split.
    pub n_train: usize,
    /// Scenes per evaluation split.
    pub n_eval: usize,
}

impl Default for ScenegenConfig {
    fn default() -> Self {
        Self {
            source: DomainConfig::source(),
            target: DomainConfig::target(),
            n_train: 200,
            n_eval: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { out_dir: "runs/default".into() }
    }
}

/// Everything a pipeline run depends on. The run seed drives model
/// initialization, training and adaptation; each domain's data seed is
/// offset by `10 * seed`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenegen: ScenegenConfig,
    pub detector: DetectorConfig,
    pub source_training: TrainConfig,
    pub adapt: AdaptConfig,
    pub eval: EvalConfig,
    pub io: IoConfig,
}

/// Which slice of the configuration an artifact depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Data,
    Source,
    Pseudo,
    Adapt,
}

impl RunConfig {
    /// Short runs that fit a laptop: 150 source epochs and 10 adaptation
    /// epochs at batch size 4.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.source_training.epochs = 150;
        c.source_training.batch_size = 4;
        c.adapt.epochs = 10;
        c.adapt.batch_size = 4;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.scenegen.source.validate()?;
        self.scenegen.target.validate()?;
        if self.scenegen.n_train == 0 || self.scenegen.n_eval == 0 {
            return Err(Error::config("dataset sizes must be positive"));
        }
        self.detector.validate()?;
        self.source_training.validate()?;
        self.adapt.validate()?;
        self.eval.validate()
    }

    /// Seeds of the sections replaced by the ones derived from `seed`.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.scenegen.source.seed = self.scenegen.source.seed.wrapping_add(10 * self.seed);
        c.scenegen.target.seed = self.scenegen.target.seed.wrapping_add(10 * self.seed);
        c.source_training.seed = self.seed;
        c.adapt.seed = self.seed;
        c
    }

    /// Hash of the part of the resolved config that artifacts of `scope`
    /// depend on.
    pub fn hash(&self, scope: Scope) -> String {
        let r = self.resolved();
        let mut v = serde_json::json!({ "seed": r.seed, "scenegen": r.scenegen });
        if scope != Scope::Data {
            v["detector"] = serde_json::to_value(r.detector).expect("serializable");
            v["source_training"] = serde_json::to_value(r.source_training).expect("serializable");
        }
        match scope {
            Scope::Data | Scope::Source => {}
            Scope::Pseudo => {
                let a = &r.adapt;
                v["pseudo"] = serde_json::json!({
                    "delta_schedule": a.delta_schedule,
                    "iterations": a.iterations,
                    "epochs": a.epochs,
                    "batch_size": a.batch_size,
                    "adam": a.adam,
                    "student_dropout": a.student_dropout,
                });
            }
            Scope::Adapt => v["adapt"] = serde_json::to_value(&r.adapt).expect("serializable"),
        }
        sha256_hex(serde_json::to_string(&v).expect("serializable").as_bytes())
    }

    /// Reads a TOML file over the defaults, then applies `key=value`
    /// overrides. Unknown keys are rejected with their dotted path.
    pub fn load(path: Option<&Path>, base: RunConfig, overrides: &[String]) -> Result<Self> {
        let mut tree = serde_json::to_value(base).expect("serializable");
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let table: toml::Table = toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
            let value = serde_json::to_value(table).map_err(|e| Error::config(e.to_string()))?;
            merge(&mut tree, value, "")?;
        }
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{o}` is not of the form key=value")))?;
            set_path(&mut tree, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn parse_value(raw: &str) -> Value {
    if raw == "none" {
        return Value::Null;
    }
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key present")).unwrap_or(Value::Null),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Overlays `value` on `tree`. Keys must already exist in `tree`, except
/// under a currently unset (null) section.
fn merge(tree: &mut Value, value: Value, prefix: &str) -> Result<()> {
    match (tree, value) {
        (Value::Object(dst), Value::Object(src)) => {
            for (k, v) in src {
                let path = join(prefix, &k);
                match dst.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => return Err(Error::config(format!("unknown config key `{path}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let path = parts[..=i].join(".");
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("`{path}` does not name a config section")))?;
        let slot = obj.get_mut(*part).ok_or_else(|| Error::config(format!("unknown config key `{path}`")))?;
        if i + 1 == parts.len() {
            return merge(slot, value, &path);
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}
