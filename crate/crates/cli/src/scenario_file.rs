//! Scenario files: TOML documents mirroring [`Scenario`] plus a
//! `schema_version` key, with `--set key=value` overrides applied on top.

use std::fs;
use std::path::Path;

use lorahop::engine::Scenario;
use toml::{Table, Value};

use crate::error::CliError;

pub const SCHEMA_VERSION: i64 = 1;

/// Keys without a default.
const REQUIRED: [&str; 2] = ["nodes", "links"];

pub fn load(path: &Path, overrides: &[String]) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let schema = |message: String| CliError::Schema {
        path: path.to_path_buf(),
        message,
    };
    let mut table = parse_document(&text).map_err(schema)?;
    if overrides.is_empty() {
        return toml::from_str(&strip_version(&text)).map_err(|e| schema(e.to_string()));
    }
    // Reports file mistakes with their line before overrides can shadow them.
    toml::from_str::<Scenario>(&strip_version(&text)).map_err(|e| schema(e.to_string()))?;
    for assignment in overrides {
        apply_override(&mut table, assignment)?;
    }
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| schema(format!("after overrides: {}", e.message())))
}

/// Parses the document and checks the version and required keys, returning
/// the table without `schema_version`.
fn parse_document(text: &str) -> Result<Table, String> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    match table.remove("schema_version") {
        None => return Err("missing required key `schema_version`".into()),
        Some(Value::Integer(SCHEMA_VERSION)) => {}
        Some(other) => {
            return Err(format!(
                "unsupported schema_version {other}, this build reads version {SCHEMA_VERSION}"
            ))
        }
    }
    if let Some(key) = REQUIRED.iter().find(|k| !table.contains_key(**k)) {
        return Err(format!("missing required key `{key}`"));
    }
    Ok(table)
}

/// Blanks the top-level `schema_version` line so line numbers in later
/// diagnostics still match the file.
fn strip_version(text: &str) -> String {
    let mut done = false;
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let trimmed = line.trim_start();
        if trimmed.starts_with('[') {
            done = true;
        }
        let is_version = !done
            && trimmed
                .strip_prefix("schema_version")
                .is_some_and(|rest| rest.trim_start().starts_with('='));
        if is_version {
            done = true;
        } else {
            out.push_str(line);
        }
        out.push('\n');
    }
    out
}

/// Parses the right-hand side as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `a.b.c=value`; numeric segments index into arrays, so
/// `links.0.per=0.1` edits the first link.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let fail = |message: String| CliError::Override {
        assignment: assignment.to_string(),
        message,
    };
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| fail("expected key=value".into()))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|s| s.is_empty()) {
        return Err(fail("empty key segment".into()));
    }
    let mut root = Value::Table(std::mem::take(table));
    let result = set_path(&mut root, &path, parse_value(raw.trim()));
    if let Value::Table(t) = root {
        *table = t;
    }
    result.map_err(fail)
}

fn set_path(node: &mut Value, path: &[&str], value: Value) -> Result<(), String> {
    let (seg, rest) = path.split_first().expect("path is never empty");
    let child = match node {
        Value::Table(t) if rest.is_empty() => {
            t.insert(seg.to_string(), value);
            return Ok(());
        }
        Value::Table(t) => t
            .entry(seg.to_string())
            .or_insert_with(|| Value::Table(Table::new())),
        Value::Array(items) => {
            let i: usize = seg.parse().map_err(|_| format!("`{seg}` is not an array index"))?;
            let len = items.len();
            let item = items
                .get_mut(i)
                .ok_or_else(|| format!("index {i} is out of range ({len} entries)"))?;
            if rest.is_empty() {
                *item = value;
                return Ok(());
            }
            item
        }
        _ => return Err(format!("cannot descend into `{seg}`: parent is not a table or array")),
    };
    set_path(child, rest, value)
}
