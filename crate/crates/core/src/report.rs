//! Table and plot-data rendering plus the bundle manifest.
//!
//! A bundle is a list of named tables (written as markdown and CSV), plot
//! tables (CSV only) and JSON documents. File bodies never contain clock data;
//! the generation time lives only in `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    /// File stem; also the key in the manifest.
    pub name: String,
    pub title: String,
    pub producer_op: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Free-text lines printed under the markdown table.
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Table {
    pub fn new(name: &str, title: &str, producer_op: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            title: title.to_string(),
            producer_op: producer_op.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width in {}", self.name);
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonArtifact {
    pub name: String,
    pub producer_op: String,
    pub value: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetadata {
    pub run_name: String,
    pub model_ids: Vec<String>,
    pub corpora: Vec<String>,
    pub seed: u64,
    /// sha256 of the canonical JSON rendering of the run config.
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportBundle {
    pub metadata: RunMetadata,
    pub tables: Vec<Table>,
    pub plots: Vec<Table>,
    pub json: Vec<JsonArtifact>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub producer_op: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRun {
    #[serde(flatten)]
    pub metadata: RunMetadata,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub generated_at: u64,
    /// sha256 over the sorted `name sha256` lines of `files`.
    pub bundle_checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run: ManifestRun,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn bundle_checksum(files: &[ManifestEntry]) -> String {
    let mut lines: Vec<String> = files.iter().map(|f| format!("{} {}\n", f.name, f.sha256)).collect();
    lines.sort();
    sha256_hex(lines.concat().as_bytes())
}

fn generated_at() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

impl Manifest {
    pub fn new(metadata: RunMetadata, mut files: Vec<ManifestEntry>) -> Self {
        files.sort();
        Manifest {
            run: ManifestRun {
                metadata,
                generated_at: generated_at(),
                bundle_checksum: bundle_checksum(&files),
            },
            files,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), ReportError> {
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        write_file(&dir.join("manifest.json"), body.as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| ReportError::IoFailure {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| ReportError::IoFailure {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(dir: &Path, name: &str, producer_op: &str, bytes: &[u8]) -> Result<ManifestEntry, ReportError> {
    write_file(&dir.join(name), bytes)?;
    Ok(ManifestEntry {
        name: name.to_string(),
        sha256: sha256_hex(bytes),
        producer_op: producer_op.to_string(),
    })
}

pub fn render_csv(table: &Table) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

pub fn render_markdown(table: &Table) -> String {
    let mut out = format!("# {}\n\n", table.title);
    out.push_str(&format!(
        "| {} |\n",
        table.columns.iter().map(|c| md_cell(c)).collect::<Vec<_>>().join(" | ")
    ));
    out.push_str(&format!("|{}\n", "---|".repeat(table.columns.len())));
    for row in &table.rows {
        out.push_str(&format!(
            "| {} |\n",
            row.iter().map(|c| md_cell(c)).collect::<Vec<_>>().join(" | ")
        ));
    }
    if !table.notes.is_empty() {
        out.push('\n');
        for n in &table.notes {
            out.push_str(n);
            out.push('\n');
        }
    }
    out
}

/// Writes `tables/<name>.md`, `tables/<name>.csv` and `<name>.json` documents.
pub fn emit_tables(bundle: &ReportBundle, dir: &Path) -> Result<Manifest, ReportError> {
    let mut files = Vec::new();
    for t in &bundle.tables {
        files.push(emit(dir, &format!("tables/{}.md", t.name), &t.producer_op, render_markdown(t).as_bytes())?);
        files.push(emit(dir, &format!("tables/{}.csv", t.name), &t.producer_op, &render_csv(t)?)?);
    }
    for j in &bundle.json {
        let mut body = serde_json::to_string_pretty(&j.value)?;
        body.push('\n');
        files.push(emit(dir, &format!("{}.json", j.name), &j.producer_op, body.as_bytes())?);
    }
    Ok(Manifest::new(bundle.metadata.clone(), files))
}

/// Writes `plots/<name>.csv` for every plot table.
pub fn emit_plotdata(bundle: &ReportBundle, dir: &Path) -> Result<Manifest, ReportError> {
    let mut files = Vec::new();
    for t in &bundle.plots {
        files.push(emit(dir, &format!("plots/{}.csv", t.name), &t.producer_op, &render_csv(t)?)?);
    }
    Ok(Manifest::new(bundle.metadata.clone(), files))
}

/// Both emitters plus `manifest.json` listing every file.
pub fn write_bundle(bundle: &ReportBundle, dir: &Path) -> Result<Manifest, ReportError> {
    let mut files = emit_tables(bundle, dir)?.files;
    files.extend(emit_plotdata(bundle, dir)?.files);
    let manifest = Manifest::new(bundle.metadata.clone(), files);
    manifest.write(dir)?;
    Ok(manifest)
}

/// Shortest round-trip float rendering; empty for `None`.
pub fn num(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Fixed-precision rendering for human-facing tables.
pub fn fixed(x: Option<f64>, places: usize) -> String {
    x.map(|v| format!("{v:.places$}")).unwrap_or_else(|| "n/a".to_string())
}

/// Model ids may contain characters unsafe in file names.
pub fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bias_table() -> Table {
        let mut t = Table::new("bias_profile", "Identity bias (%)", "identity_bias_profile", &["identity", "lex"]);
        t.push(vec!["women".into(), fixed(Some(-15.0), 2)]);
        t.push(vec!["black people".into(), fixed(Some(20.0), 2)]);
        t
    }

    #[test]
    fn markdown_rendering() {
        let md = render_markdown(&bias_table());
        assert_eq!(
            md,
            "# Identity bias (%)\n\n| identity | lex |\n|---|---|\n| women | -15.00 |\n| black people | 20.00 |\n"
        );
    }

    #[test]
    fn csv_rendering_quotes() {
        let mut t = Table::new("x", "x", "op", &["a", "b"]);
        t.push(vec!["has,comma".into(), "".into()]);
        assert_eq!(String::from_utf8(render_csv(&t).unwrap()).unwrap(), "a,b\n\"has,comma\",\n");
    }

    #[test]
    fn empty_bundle_has_metadata_only() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_bundle(&ReportBundle::default(), dir.path()).unwrap();
        assert!(m.files.is_empty());
        assert_eq!(m.run.bundle_checksum, sha256_hex(b""));
        assert!(dir.path().join("manifest.json").exists());
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let bundle = ReportBundle {
            metadata: RunMetadata {
                run_name: "t".into(),
                seed: 42,
                ..Default::default()
            },
            tables: vec![bias_table()],
            plots: vec![bias_table()],
            json: vec![JsonArtifact {
                name: "metrics".into(),
                producer_op: "metrics".into(),
                value: serde_json::json!({"b": 1, "a": [1.5]}),
            }],
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = write_bundle(&bundle, a.path()).unwrap();
        let mb = write_bundle(&bundle, b.path()).unwrap();
        assert_eq!(ma.files, mb.files);
        assert_eq!(ma.run.bundle_checksum, mb.run.bundle_checksum);
        assert_eq!(ma.files.len(), 4);
        for f in &ma.files {
            let bytes = fs::read(a.path().join(&f.name)).unwrap();
            assert_eq!(sha256_hex(&bytes), f.sha256);
            assert_eq!(bytes, fs::read(b.path().join(&f.name)).unwrap());
        }
    }

    #[test]
    fn names_are_sanitized() {
        assert_eq!(file_safe("org/model:v1"), "org_model_v1");
    }
}
