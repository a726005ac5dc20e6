//! Rendering of command results as text, JSON or CSV.

use anyhow::Result;
use clap::ValueEnum;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

/// Modeling assumptions echoed by commands that run the scheduler.
pub const SCHEDULER_ASSUMPTIONS: &[&str] = &[
    "verification takes zero simulated time",
    "final-answer generation after the last hop is excluded from wall_clock",
    "in-flight target calls of discarded threads are abandoned but counted in calls_target",
];

pub struct Report {
    pub command: &'static str,
    /// Every effective parameter, including the seed where it matters.
    pub config: Value,
    pub result: Value,
    /// Tabular form for `--format csv`; defaults to one row of the scalar fields.
    pub csv: Option<String>,
    pub assumptions: &'static [&'static str],
}

impl Report {
    pub fn new(command: &'static str, config: Value, result: Value) -> Self {
        Report {
            command,
            config,
            result,
            csv: None,
            assumptions: &[],
        }
    }

    pub fn with_csv(mut self, csv: String) -> Self {
        self.csv = Some(csv);
        self
    }

    pub fn with_assumptions(mut self, assumptions: &'static [&'static str]) -> Self {
        self.assumptions = assumptions;
        self
    }

    /// SHA-256 over the command name and canonical (key-sorted) config JSON.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(b"\n");
        h.update(self.config.to_string().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn render(&self, format: Format) -> Result<String> {
        Ok(match format {
            Format::Json => {
                let mut envelope = json!({
                    "command": self.command,
                    "config": self.config,
                    "fingerprint": self.fingerprint(),
                    "result": self.result,
                });
                if !self.assumptions.is_empty() {
                    envelope["assumptions"] = json!(self.assumptions);
                }
                let mut s = serde_json::to_string_pretty(&envelope)?;
                s.push('\n');
                s
            }
            Format::Text => {
                let mut s = format!(
                    "command: {}\nconfig: {}\nfingerprint: {}\n",
                    self.command,
                    self.config,
                    self.fingerprint()
                );
                for a in self.assumptions {
                    s.push_str(&format!("assumption: {a}\n"));
                }
                render_text(&self.result, "", &mut s);
                s
            }
            Format::Csv => match &self.csv {
                Some(csv) => csv.clone(),
                None => scalar_row_csv(&self.result)?,
            },
        })
    }
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some(String::new()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::String(s) => Some(s.clone()),
        Value::Array(items) if items.iter().all(|i| !i.is_object() && !i.is_array()) => {
            Some(items.iter().filter_map(scalar).collect::<Vec<_>>().join(" "))
        }
        _ => None,
    }
}

fn flatten(v: &Value, prefix: &str, out: &mut Vec<(String, String)>) {
    if let Value::Object(map) = v {
        for (k, item) in map {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match scalar(item) {
                Some(s) => out.push((key, s)),
                None => flatten(item, &key, out),
            }
        }
    }
}

fn render_text(v: &Value, prefix: &str, out: &mut String) {
    let Value::Object(map) = v else {
        if let Some(s) = scalar(v) {
            out.push_str(&s);
            out.push('\n');
        }
        return;
    };
    for (k, item) in map {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if let Some(s) = scalar(item) {
            out.push_str(&format!("{key}: {s}\n"));
        } else if let Value::Array(rows) = item {
            out.push_str(&format!("{key}:\n"));
            render_table(rows, out);
        } else {
            render_text(item, &key, out);
        }
    }
}

fn render_table(rows: &[Value], out: &mut String) {
    let flat: Vec<Vec<(String, String)>> = rows
        .iter()
        .map(|r| {
            let mut cells = Vec::new();
            flatten(r, "", &mut cells);
            cells
        })
        .collect();
    let Some(first) = flat.first() else {
        return;
    };
    let headers: Vec<&str> = first.iter().map(|(k, _)| k.as_str()).collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &flat {
        for (i, (_, v)) in row.iter().enumerate().take(widths.len()) {
            widths[i] = widths[i].max(v.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("  {}\n", padded.join("  ").trim_end())
    };
    out.push_str(&line(headers.clone()));
    for row in &flat {
        out.push_str(&line(row.iter().map(|(_, v)| v.as_str()).collect()));
    }
}

fn scalar_row_csv(v: &Value) -> Result<String> {
    let mut cells = Vec::new();
    flatten(v, "", &mut cells);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(cells.iter().map(|(k, _)| k))?;
    w.write_record(cells.iter().map(|(_, v)| v))?;
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Serializes any value into a JSON object map.
pub fn object(value: impl serde::Serialize) -> Result<Value> {
    let v = serde_json::to_value(value)?;
    match v {
        Value::Object(_) => Ok(v),
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            Ok(Value::Object(m))
        }
    }
}
