//! Layered key-value configuration: defaults < TOML file < flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::CliError;
use crate::baselines::{KmeansConfig, KnnConfig};
use crate::feature_store::{Ratio, SubsampleSpec};
use crate::mining::MiningConfig;
use crate::result::StrategyConfig;

pub fn read_table(path: Option<&Path>) -> Result<Table, CliError> {
    let Some(path) = path else {
        return Ok(Table::new());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_table(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn parse_table(text: &str) -> Result<Table, String> {
    text.parse::<Table>().map_err(|e| e.to_string().trim_end().to_string())
}

/// `value` as TOML when it parses as a scalar or array, otherwise a bare string.
pub fn parse_value(value: &str) -> Value {
    match parse_table(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(value.into())),
        Err(_) => Value::String(value.into()),
    }
}

/// Applies `key=value` overrides.
pub fn apply_overrides(table: &mut Table, sets: &[String]) -> Result<(), CliError> {
    for item in sets {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("override {item:?} is not key=value")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(CliError::usage(format!("override {item:?} has an empty key")));
        }
        table.insert(key.to_string(), parse_value(value.trim()));
    }
    Ok(())
}

pub fn set<T: Into<Value>>(table: &mut Table, key: &str, value: Option<T>) {
    if let Some(v) = value {
        table.insert(key.into(), v.into());
    }
}

pub fn from_table<T: DeserializeOwned>(table: Table, what: &str) -> Result<T, CliError> {
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::usage(format!("{what}: {}", e.message())))
}

pub fn to_table<T: Serialize>(value: &T) -> Table {
    match Value::try_from(value) {
        Ok(Value::Table(t)) => t,
        _ => unreachable!("config structs serialize to tables"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MineSettings {
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub subsample: Option<SubsampleSpec>,
    /// Keep per-anchor proxy and criterion trajectories in the result.
    pub diagnostics: bool,
}

fn take_string(table: &mut Table, key: &str) -> Result<Option<String>, CliError> {
    match table.remove(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(CliError::usage(format!("{key} must be a string, got {other}"))),
    }
}

fn take_integer(table: &mut Table, key: &str) -> Result<Option<u64>, CliError> {
    match table.remove(key) {
        None => Ok(None),
        Some(Value::Integer(i)) if i >= 0 => Ok(Some(i as u64)),
        Some(other) => Err(CliError::usage(format!("{key} must be a non-negative integer, got {other}"))),
    }
}

/// Resolves a flat mining table. Keys besides `strategy`, `preset`,
/// `subsample_ratio`, `subsample_seed` and `diagnostics` belong to the chosen
/// strategy; a key the strategy does not know is a usage error.
pub fn resolve_mine(mut table: Table) -> Result<MineSettings, CliError> {
    let strategy = take_string(&mut table, "strategy")?.unwrap_or_else(|| "ppap".into());
    let preset = take_string(&mut table, "preset")?;
    let ratio = match table.remove("subsample_ratio") {
        None => None,
        Some(Value::String(s)) => Some(s.parse::<Ratio>().map_err(|e| CliError::usage(e.to_string()))?),
        Some(Value::Float(f)) => Some(f.to_string().parse::<Ratio>().map_err(|e| CliError::usage(e.to_string()))?),
        Some(Value::Integer(i)) => Some(i.to_string().parse::<Ratio>().map_err(|e| CliError::usage(e.to_string()))?),
        Some(other) => return Err(CliError::usage(format!("subsample_ratio must be a ratio, got {other}"))),
    };
    let subsample_seed = take_integer(&mut table, "subsample_seed")?;
    let diagnostics = match table.remove("diagnostics") {
        None => true,
        Some(Value::Boolean(b)) => b,
        Some(other) => return Err(CliError::usage(format!("diagnostics must be a boolean, got {other}"))),
    };
    let subsample = match (ratio, subsample_seed) {
        (Some(ratio), seed) => Some(SubsampleSpec {
            ratio,
            seed: seed.unwrap_or(0),
        }),
        (None, Some(_)) => return Err(CliError::usage("subsample_seed given without subsample_ratio")),
        (None, None) => None,
    };

    let strategy = match strategy.as_str() {
        "ppap" => {
            let base = match preset {
                Some(name) => MiningConfig::named_preset(&name)
                    .ok_or_else(|| CliError::usage(format!("unknown preset {name:?}")))?,
                None => MiningConfig::default(),
            };
            let mut merged = to_table(&base);
            merged.extend(table);
            let config: MiningConfig = from_table(merged, "ppap config")?;
            config.validate()?;
            StrategyConfig::Ppap(config)
        }
        "knn" | "kmeans" if preset.is_some() => {
            return Err(CliError::usage(format!("preset applies to ppap, not {strategy}")));
        }
        "knn" => StrategyConfig::Knn(from_table::<KnnConfig>(table, "knn config")?),
        "kmeans" => StrategyConfig::Kmeans(from_table::<KmeansConfig>(table, "kmeans config")?),
        other => return Err(CliError::usage(format!("unknown strategy {other:?} (ppap, knn, kmeans)"))),
    };
    Ok(MineSettings {
        strategy,
        subsample,
        diagnostics,
    })
}
