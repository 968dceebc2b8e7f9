use std::fs;
use std::path::Path;

use cmc3d::train::TrainConfig;

/// Why a configuration could not be assembled. Both variants are usage errors.
#[derive(Debug)]
pub enum ConfigError {
    Missing(String),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Missing(m) | ConfigError::Invalid(m) => f.write_str(m),
        }
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string so `--set task=severity` works unquoted.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Invalid(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Invalid(format!("bad override key {key:?}")));
    }
    let (last, parents) = path.split_last().expect("non-empty");
    let mut node = table;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("override {key}: {p} is not a table")))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Reads `path`, applies `overrides` in order and deserializes the result.
/// Unknown keys are rejected.
pub fn load(path: &Path, overrides: &[String]) -> Result<TrainConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| {
        ConfigError::Missing(format!("cannot read config file {}: {e}", path.display()))
    })?;
    let mut table: toml::Table = toml::from_str(&text)
        .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))
}

pub fn to_toml(config: &TrainConfig) -> String {
    toml::to_string(config).expect("config serialises to TOML")
}
