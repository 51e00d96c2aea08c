//! `--config` files: TOML or JSON tables whose keys are flag names. A run
//! manifest is accepted too, in which case its `config` table is used.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

fn parse_document(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    let value = if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing JSON config {}", path.display()))?
    } else {
        let t: toml::Table = toml::from_str(&text).with_context(|| format!("parsing TOML config {}", path.display()))?;
        serde_json::to_value(t)?
    };
    match value {
        Value::Object(mut map) => {
            if map.contains_key("tool_version") {
                if let Some(Value::Object(c)) = map.remove("config") {
                    return Ok(Value::Object(c));
                }
            }
            Ok(Value::Object(map))
        }
        _ => bail!("config {} must be a table of flag values", path.display()),
    }
}

fn scalar(key: &str, v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        _ => bail!("config key '{key}' must be a scalar or a list of scalars"),
    })
}

/// Flag arguments equivalent to the file's contents.
pub fn config_args(path: &Path) -> Result<Vec<OsString>> {
    let Value::Object(map) = parse_document(path)? else { unreachable!() };
    let mut out = Vec::new();
    for (key, v) in &map {
        if key == "config" {
            continue;
        }
        match v {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(OsString::from(format!("--{key}"))),
            Value::Array(items) => {
                let parts = items.iter().map(|i| scalar(key, i)).collect::<Result<Vec<_>>>()?;
                out.push(OsString::from(format!("--{key}={}", parts.join(","))));
            }
            other => out.push(OsString::from(format!("--{key}={}", scalar(key, other)?))),
        }
    }
    Ok(out)
}

/// Removes `--config <path>` from `argv` and splices the file's flags in
/// right after the subcommand so that explicit flags take precedence.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let p = it.next().context("--config needs a path")?;
            config = Some(std::path::PathBuf::from(p));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(std::path::PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let injected = config_args(&path)?;
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|i| i + 2)
        .unwrap_or(rest.len());
    let tail = rest.split_off(sub.min(rest.len()));
    rest.extend(injected);
    rest.extend(tail);
    Ok(rest)
}
