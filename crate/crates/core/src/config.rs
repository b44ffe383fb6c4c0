//! Layered TOML configuration: preset, then file, then command-line overrides.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::{EcfError, Result};

/// Re-exported so callers can build override layers without a direct toml dependency.
pub use toml::Table as TomlTable;

/// Recursively overlays `top` onto `base`; tables merge, everything else replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Table(b), Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

pub fn load_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| EcfError::io(path, e))?;
    text.parse::<Table>()
        .map_err(|e| EcfError::Config(format!("{}: {e}", path.display())))
}

/// Parses `a.b.c=value` into a nested table. The value is read as a TOML
/// literal when possible and as a bare string otherwise.
pub fn parse_override(spec: &str) -> Result<Table> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| EcfError::Config(format!("override '{spec}' is not of the form key=value")))?;
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(EcfError::Config(format!("override '{spec}' has an empty key segment")));
    }
    let last = parts.pop().expect("split yields at least one part");
    let mut table = Table::new();
    table.insert(last.to_string(), value);
    for p in parts.into_iter().rev() {
        let mut outer = Table::new();
        outer.insert(p.to_string(), Value::Table(table));
        table = outer;
    }
    Ok(table)
}

/// Serializes `defaults`, applies each layer in order and deserializes the result.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, layers: impl IntoIterator<Item = Table>) -> Result<T> {
    let mut value = Value::try_from(defaults).map_err(|e| EcfError::Config(e.to_string()))?;
    for layer in layers {
        merge(&mut value, Value::Table(layer));
    }
    value.try_into().map_err(|e: toml::de::Error| EcfError::Config(e.message().to_string()))
}

/// Stable hex digest of a configuration's canonical JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    format!("{:08x}", crc32fast::hash(&json))
}
