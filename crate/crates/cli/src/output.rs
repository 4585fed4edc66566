use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::commands::Failure;
use crate::{Common, Format};

/// Files of one run, written together at the end.
pub struct Outputs {
    files: Vec<(String, String)>,
    format: Format,
}

impl Outputs {
    pub fn new(format: Format) -> Self {
        Self {
            files: Vec::new(),
            format,
        }
    }

    /// Adds a table given as CSV text, converted when `--format json`.
    pub fn table(&mut self, stem: &str, csv_text: String) -> Result<(), Failure> {
        match self.format {
            Format::Csv => self.files.push((format!("{stem}.csv"), csv_text)),
            Format::Json => {
                let value = csv_to_json(&csv_text)?;
                self.json(stem, &value);
            }
        }
        Ok(())
    }

    pub fn json(&mut self, stem: &str, value: &Value) {
        self.files
            .push((format!("{stem}.json"), nullctl::export::to_json_text(value)));
    }

    /// Writes every file plus `manifest.json`.
    pub fn finish(
        mut self,
        common: &Common,
        h: f64,
        command: &str,
        config: &Value,
        extra: Value,
    ) -> Result<(), Failure> {
        let names: Vec<String> = self.files.iter().map(|(n, _)| n.clone()).collect();
        let manifest = json!({
            "command": command,
            "config_path": common.config.display().to_string(),
            "config": config,
            "h": h,
            "seed": common.seed,
            "format": match common.format { Format::Csv => "csv", Format::Json => "json" },
            "version": env!("CARGO_PKG_VERSION"),
            "outputs": names,
            "report": extra,
        });
        self.json("manifest", &manifest);
        write_all(&common.out, &self.files)
    }
}

fn write_all(dir: &Path, files: &[(String, String)]) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn csv_to_json(text: &str) -> Result<Value, Failure> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Failure::Io(e.to_string()))?
        .clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Failure::Io(e.to_string()))?;
        let mut row = Map::new();
        for (key, field) in headers.iter().zip(record.iter()) {
            let value = if field.is_empty() {
                Value::Null
            } else {
                field
                    .parse::<f64>()
                    .ok()
                    .and_then(|v| serde_json::Number::from_f64(v).map(Value::Number))
                    .unwrap_or_else(|| Value::String(field.to_string()))
            };
            row.insert(key.to_string(), value);
        }
        rows.push(Value::Object(row));
    }
    Ok(Value::Array(rows))
}
