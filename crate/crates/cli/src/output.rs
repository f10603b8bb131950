//! Result files: CSV with `#` header lines, or one JSON document. Both embed
//! the schema version, the crate version and the full experiment config.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use noreplace::datagen;

use crate::experiment::{Experiment, Payload, Report};

/// Bumped whenever column names or envelope fields change.
pub const SCHEMA_VERSION: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    schema: u32,
    version: String,
    config: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    summary: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    table: Option<Value>,
}

/// Tabular commands default to CSV, verification summaries to JSON.
pub fn default_format(exp: &Experiment) -> Format {
    match exp {
        Experiment::Verify { .. } | Experiment::Rademacher { .. } => Format::Json,
        _ => Format::Csv,
    }
}

pub fn render(exp: &Experiment, report: &Report, format: Format) -> Result<String> {
    let config = serde_json::to_string(exp)?;
    let summary = serde_json::to_string(&report.summary)?;
    if let Payload::Dataset(data) = &report.payload {
        if format == Format::Json {
            bail!("gen writes the sparse text format; --format json is not available");
        }
        let mut out = header(&config, &summary);
        let mut body = Vec::new();
        datagen::write_sparse(data, &mut body)?;
        out.push_str(std::str::from_utf8(&body)?);
        return Ok(out);
    }
    match format {
        Format::Json => {
            let env = Envelope {
                schema: SCHEMA_VERSION,
                version: VERSION.to_string(),
                config: exp.clone(),
                summary: Some(report.summary.clone()),
                table: match &report.payload {
                    Payload::Table(t) => Some(serde_json::to_value(t)?),
                    _ => None,
                },
            };
            let mut s = serde_json::to_string_pretty(&env)?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => {
            let mut out = header(&config, &summary);
            let (columns, rows) = match &report.payload {
                Payload::Table(t) => (t.columns.clone(), t.rows.clone()),
                _ => {
                    let mut flat = Vec::new();
                    flatten("", &report.summary, &mut flat);
                    let (c, r): (Vec<String>, Vec<Value>) = flat.into_iter().unzip();
                    (c, vec![r])
                }
            };
            out.push_str(&columns.join(","));
            out.push('\n');
            for row in rows {
                let cells: Vec<String> = row.iter().map(cell).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
            Ok(out)
        }
    }
}

fn header(config: &str, summary: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# noreplace schema {SCHEMA_VERSION}");
    let _ = writeln!(s, "# version {VERSION}");
    let _ = writeln!(s, "# config {config}");
    let _ = writeln!(s, "# summary {summary}");
    s
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, x, out);
            }
        }
        other => out.push((prefix.to_string(), other.clone())),
    }
}

/// Recovers the experiment and format from a result file written by
/// [`render`].
pub fn parse_result(text: &str) -> Result<(Experiment, Format)> {
    if text.trim_start().starts_with('{') {
        let env: Envelope = serde_json::from_str(text).context("parsing JSON result file")?;
        check_schema(env.schema)?;
        return Ok((env.config, Format::Json));
    }
    let mut schema = None;
    let mut config = None;
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let rest = line[1..].trim();
        if let Some(v) = rest.strip_prefix("noreplace schema ") {
            schema = Some(v.trim().parse::<u32>().context("bad schema line")?);
        } else if let Some(v) = rest.strip_prefix("config ") {
            config = Some(v);
        }
    }
    check_schema(schema.context("no '# noreplace schema' header line; not a result file")?)?;
    let config = config.context("no '# config' header line")?;
    let exp = serde_json::from_str::<Experiment>(config).context("parsing embedded config")?;
    Ok((exp, Format::Csv))
}

fn check_schema(v: u32) -> Result<()> {
    if v != SCHEMA_VERSION {
        bail!("result schema {v} is not supported (this build reads schema {SCHEMA_VERSION})");
    }
    Ok(())
}

#[cfg(test)]
fn keys(v: &Value) -> Vec<String> {
    v.as_object()
        .map(serde_json::Map::keys)
        .into_iter()
        .flatten()
        .cloned()
        .collect()
}
