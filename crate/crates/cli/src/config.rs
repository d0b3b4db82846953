use std::fs;
use std::path::Path;

use hydra::finetune::FinetuneConfig;
use hydra::ingest::TaskKind;
use hydra::model::ModelConfig;
use hydra::pretrain::PretrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

/// Every setting of a run. Sections not relevant to a command are carried
/// along unchanged so the resolved file describes the whole pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed for body initialization and for the layers created at attach time.
    pub seed: u64,
    /// Kind of the labeled task files.
    pub task: TaskKind,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            task: TaskKind::Classification,
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads an optional TOML file, then applies `key=value` overrides where
    /// `key` is a dotted path such as `finetune.lr`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let cfg =
            RunConfig::deserialize(Value::Table(table)).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.pretrain.validate()?;
        cfg.finetune.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes to TOML")
    }
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn apply_override(table: &mut Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {item:?} is not KEY=VALUE")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("override key {key:?} is malformed")));
    }
    let (last, sections) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for section in sections {
        let entry = node
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override key {key:?}: {section} is not a section")))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::load(
            None,
            &["finetune.lr=0.01".into(), "seed=7".into(), "task=regression".into()],
        )
        .unwrap();
        assert_eq!(cfg.finetune.lr, 0.01);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.task, TaskKind::Regression);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::load(None, &["finetune.learning_rate=0.1".into()]).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::load(None, &["pretrain.epochs=3".into()]).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&cfg.to_toml()).unwrap(), cfg);
    }
}
