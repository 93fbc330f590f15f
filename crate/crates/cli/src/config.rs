//! Config documents: TOML sections over the built-in defaults, then
//! `CONEVOL_<SECTION>_<KEY>` environment overrides.

use std::path::Path;

use conevol_core::experiment::ExperimentConfig;
use conevol_core::sphere::Dimension;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "CONEVOL";
const DEFAULT_DIMENSION: usize = 64;

/// Environment variable overriding `key` in `section` (or at top level).
pub fn env_name(section: Option<&str>, key: &str) -> String {
    match section {
        Some(s) => format!("{ENV_PREFIX}_{}_{}", s.to_uppercase(), key.to_uppercase()),
        None => format!("{ENV_PREFIX}_{}", key.to_uppercase()),
    }
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

fn parse_env_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set(table: &mut Table, section: Option<&str>, key: &str, value: Value) {
    let target = match section {
        Some(s) => match table.entry(s.to_string()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            other => {
                *other = Value::Table(Table::new());
                other.as_table_mut().expect("just replaced")
            }
        },
        None => table,
    };
    target.insert(key.to_string(), value);
}

/// Resolves the full experiment config from an optional document and an
/// environment lookup.
pub fn resolve(user: Table, env: impl Fn(&str) -> Option<String>) -> Result<ExperimentConfig, CliError> {
    let mut user = user;
    if let Some(raw) = env(&env_name(Some("calibration"), "n")) {
        set(&mut user, Some("calibration"), "n", parse_env_value(&raw));
    }
    let n = match user.get("calibration").and_then(|c| c.get("n")) {
        None => DEFAULT_DIMENSION,
        Some(v) => v
            .as_integer()
            .and_then(|i| usize::try_from(i).ok())
            .ok_or_else(|| CliError::Usage(format!("calibration.n must be a positive integer, got {v}")))?,
    };
    let dim = Dimension::new(n).map_err(|e| CliError::Usage(e.to_string()))?;
    let defaults = Table::try_from(ExperimentConfig::for_dimension(dim))
        .map_err(|e| CliError::Usage(format!("default config: {e}")))?;

    for (key, value) in &defaults {
        match value {
            Value::Table(section) => {
                for sub in section.keys() {
                    if let Some(raw) = env(&env_name(Some(key), sub)) {
                        set(&mut user, Some(key), sub, parse_env_value(&raw));
                    }
                }
            }
            _ => {
                if let Some(raw) = env(&env_name(None, key)) {
                    set(&mut user, None, key, parse_env_value(&raw));
                }
            }
        }
    }

    let mut merged = defaults;
    merge(&mut merged, user);
    let cfg: ExperimentConfig = Value::Table(merged)
        .try_into()
        .map_err(|e| CliError::Usage(format!("config: {e}")))?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Config from `path` (or defaults) with the process environment applied.
pub fn load(path: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let user = match path {
        Some(p) => read_table(p)?,
        None => Table::new(),
    };
    resolve(user, |k| std::env::var(k).ok())
}

/// Compact JSON with sorted keys.
pub fn canonical_json(cfg: &ExperimentConfig) -> String {
    serde_json::to_value(cfg).expect("plain data").to_string()
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(canonical_json(cfg).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn empty_document_gives_the_flagship() {
        let cfg = resolve(Table::new(), no_env).unwrap();
        assert_eq!(cfg, ExperimentConfig::flagship());
    }

    #[test]
    fn dimension_drives_derived_defaults() {
        let user: Table = toml::from_str("[calibration]\nn = 128\n").unwrap();
        let cfg = resolve(user, no_env).unwrap();
        let expect = ExperimentConfig::for_dimension(Dimension::new(128).unwrap());
        assert_eq!(cfg.calibration, expect.calibration);
    }

    #[test]
    fn environment_beats_document() {
        let user: Table = toml::from_str("seed = 5\n[sampling]\npoints_per_sequence = 8\n").unwrap();
        let env: HashMap<String, String> = [
            ("CONEVOL_SEED", "9"),
            ("CONEVOL_SAMPLING_POINTS_PER_SEQUENCE", "12"),
            ("CONEVOL_DISTINGUISHERS", "[\"max_radius\"]"),
            ("CONEVOL_CALIBRATION_KAPPA", "0.5"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let cfg = resolve(user, |k| env.get(k).cloned()).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.sampling.points_per_sequence, 12);
        assert_eq!(cfg.distinguishers, vec!["max_radius".to_string()]);
        assert_eq!(cfg.calibration.kappa, 0.5);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let user: Table = toml::from_str("[sampling]\npoints = 8\n").unwrap();
        let err = resolve(user, no_env).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn hash_ignores_key_order_and_whitespace() {
        let a: Table = toml::from_str("seed = 3\n[sampling]\nvolume_bodies = 10\nvolume_samples = 100\n").unwrap();
        let b: Table =
            toml::from_str("[sampling]\nvolume_samples=100\n  volume_bodies   = 10\n\n[calibration]\n").unwrap();
        let mut b = b;
        b.insert("seed".into(), Value::Integer(3));
        let ha = config_hash(&resolve(a, no_env).unwrap());
        let hb = config_hash(&resolve(b, no_env).unwrap());
        assert_eq!(ha, hb);
        assert_eq!(ha.len(), 64);
    }
}
