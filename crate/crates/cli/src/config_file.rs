//! Config files: a flat TOML table whose keys are long flag names.
//!
//! Values from the file are appended to the command line only for flags the
//! user did not pass, so explicit flags always win.

use std::ffi::OsString;
use std::path::Path;

use toml::Value;

/// Returns the path given by `--config`, if any.
pub fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        let s = arg.to_string_lossy();
        if s == "--" {
            return None;
        }
        if s == "--config" {
            return iter.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

/// Appends `--key value` pairs from the file for flags absent from `args`.
pub fn merge(args: Vec<OsString>, path: &Path) -> Result<Vec<OsString>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| format!("invalid config file {}: {e}", path.display()))?;
    let mut out = args;
    for (key, value) in table {
        if key == "config" || given(&out, &key) {
            continue;
        }
        let flag = format!("--{key}");
        match value {
            Value::Boolean(true) => out.push(flag.into()),
            Value::Boolean(false) => {}
            Value::Array(items) => {
                let parts: Result<Vec<String>, String> =
                    items.iter().map(|v| scalar(&key, v)).collect();
                out.push(flag.into());
                out.push(parts?.join(",").into());
            }
            other => {
                out.push(flag.into());
                out.push(scalar(&key, &other)?.into());
            }
        }
    }
    Ok(out)
}

fn given(args: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    let prefix = format!("--{key}=");
    args.iter()
        .map(|a| a.to_string_lossy())
        .any(|a| a == flag || a.starts_with(&prefix))
}

fn scalar(key: &str, v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Boolean(b) => Ok(b.to_string()),
        _ => Err(format!(
            "config key {key:?} must hold a scalar or a list of scalars"
        )),
    }
}
