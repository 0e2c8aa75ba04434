//! Run configuration: INI sections mapped onto the library's config types.

use std::path::Path;

use ini::Ini;
use mma_core::data::SynthSpec;
use mma_core::model::{ModelConfig, Schedule, TrainMode};
use mma_core::postprocess::{BlendPolicy, MlpSchedule};
use mma_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    pub seed: u64,
    pub mode: TrainMode,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Corpus manifest used by `train`, `predict`, `score` and `ablate`.
    pub manifest: String,
    /// Train, validation and test proportions.
    pub split: [f64; 3],
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: TrainMode::Joint,
            threads: 0,
            manifest: String::new(),
            split: [0.7, 0.15, 0.15],
        }
    }
}

/// Fully resolved settings of one command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelConfig,
    pub schedule: Schedule,
    pub postprocess: BlendPolicy,
    pub proportion_mlp: MlpSchedule,
    pub synth: SynthSpec,
}

const SECTIONS: [&str; 6] = ["run", "model", "schedule", "postprocess", "proportion_mlp", "synth"];

fn spec_err(msg: String) -> Error {
    Error::Spec(msg)
}

fn parse_scalar(section: &str, key: &str, template: &Value, raw: &str) -> Result<Value> {
    let bad = || spec_err(format!("[{section}] {key} = `{raw}` is not a valid value"));
    let raw = raw.trim();
    Ok(match template {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_f64() => serde_json::Number::from_f64(raw.parse().map_err(|_| bad())?)
            .map(Value::Number)
            .ok_or_else(bad)?,
        Value::Number(_) => Value::Number(raw.parse::<u64>().map_err(|_| bad())?.into()),
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(items) => {
            let elem = items.first().cloned().unwrap_or(Value::Number(0.into()));
            let parts: Vec<&str> = raw.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
            Value::Array(
                parts
                    .iter()
                    .map(|p| parse_scalar(section, key, &elem, p))
                    .collect::<Result<_>>()?,
            )
        }
        Value::Null => {
            if raw.eq_ignore_ascii_case("none") || raw.is_empty() {
                Value::Null
            } else if let Ok(n) = raw.parse::<u64>() {
                Value::Number(n.into())
            } else {
                Value::String(raw.to_string())
            }
        }
        Value::Object(_) => return Err(bad()),
    })
}

/// Overlays the `key = value` pairs of one INI section onto `base`.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, section: &str, pairs: &[(String, String)]) -> Result<T> {
    let mut value = serde_json::to_value(base)?;
    let obj = value.as_object_mut().expect("config sections serialize to objects");
    for (key, raw) in pairs {
        let template = obj
            .get(key)
            .ok_or_else(|| spec_err(format!("unknown key `{key}` in section [{section}]")))?;
        let parsed = parse_scalar(section, key, template, raw)?;
        obj.insert(key.clone(), parsed);
    }
    serde_json::from_value(value).map_err(|e| spec_err(format!("section [{section}]: {e}")))
}

fn render(value: &Value) -> String {
    match value {
        Value::Null => "none".into(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

impl RunConfig {
    /// Loads `path` (or defaults when absent). Policy lengths not set in the
    /// file scale with the model's beat length; every seed follows `[run] seed`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut sections: Map<String, Value> = Map::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| spec_err(format!("{}: {e}", p.display())))?;
            let ini = Ini::load_from_str(&text).map_err(|e| spec_err(format!("{}: {e}", p.display())))?;
            for (name, props) in ini.iter() {
                let Some(name) = name else {
                    if props.iter().next().is_some() {
                        return Err(spec_err("keys must sit inside a [section]".into()));
                    }
                    continue;
                };
                if !SECTIONS.contains(&name) {
                    return Err(spec_err(format!("unknown section [{name}]")));
                }
                let pairs: Vec<Value> = props
                    .iter()
                    .map(|(k, v)| Value::Array(vec![Value::String(k.into()), Value::String(v.into())]))
                    .collect();
                sections.insert(name.to_string(), Value::Array(pairs));
            }
        }
        let pairs = |name: &str| -> Vec<(String, String)> {
            sections
                .get(name)
                .and_then(Value::as_array)
                .map(|a| {
                    a.iter()
                        .map(|p| (p[0].as_str().unwrap().to_string(), p[1].as_str().unwrap().to_string()))
                        .collect()
                })
                .unwrap_or_default()
        };
        let run = overlay(&RunSection::default(), "run", &pairs("run"))?;
        let model = overlay(&ModelConfig::default(), "model", &pairs("model"))?;
        let schedule = overlay(&Schedule::default(), "schedule", &pairs("schedule"))?;
        let postprocess = overlay(
            &BlendPolicy::for_beat_len(model.beat_len),
            "postprocess",
            &pairs("postprocess"),
        )?;
        let proportion_mlp = overlay(&MlpSchedule::default(), "proportion_mlp", &pairs("proportion_mlp"))?;
        let synth = overlay(&SynthSpec::default(), "synth", &pairs("synth"))?;
        let mut cfg = Self {
            run,
            model,
            schedule,
            postprocess,
            proportion_mlp,
            synth,
        };
        cfg.set_seed(cfg.run.seed);
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.run.seed = seed;
        self.schedule.seed = seed;
        self.proportion_mlp.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| spec_err(e.to_string()))?;
        self.postprocess.validate()?;
        if self.schedule.batch_size == 0 {
            return Err(spec_err("batch_size must be positive".into()));
        }
        if self.run.split.iter().any(|&r| r <= 0.0) || (self.run.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(spec_err(format!(
                "split {:?} must be positive and sum to 1",
                self.run.split
            )));
        }
        Ok(())
    }

    /// The resolved configuration as INI text; loading it back yields `self`.
    pub fn to_ini(&self) -> Result<String> {
        let mut ini = Ini::new();
        let parts: [(&str, Value); 6] = [
            ("run", serde_json::to_value(&self.run)?),
            ("model", serde_json::to_value(&self.model)?),
            ("schedule", serde_json::to_value(&self.schedule)?),
            ("postprocess", serde_json::to_value(&self.postprocess)?),
            ("proportion_mlp", serde_json::to_value(&self.proportion_mlp)?),
            ("synth", serde_json::to_value(&self.synth)?),
        ];
        for (name, value) in parts {
            let mut section = ini.with_section(Some(name));
            for (k, v) in value.as_object().expect("object") {
                if k == "seed" && name != "run" {
                    continue;
                }
                section.set(k.as_str(), render(v));
            }
        }
        let mut out = Vec::new();
        ini.write_to(&mut out)?;
        Ok(String::from_utf8(out).expect("ini output is utf-8"))
    }
}
