//! Artifact writing with a manifest: every file a run produces is recorded
//! with its sha256, and the manifest itself is the last file written, so
//! reruns of the same config can be compared by hash.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use rps_core::{Result, RpsError};

pub struct OutputWriter {
    root: PathBuf,
    entries: Vec<(String, String)>,
    log: String,
}

impl OutputWriter {
    pub fn create(root: &Path) -> Result<OutputWriter> {
        std::fs::create_dir_all(root)?;
        Ok(OutputWriter { root: root.to_path_buf(), entries: Vec::new(), log: String::new() })
    }


    /// Appends a line to the run log (written on finalize). Log content must
    /// stay deterministic: no timestamps, no timings.
    pub fn log(&mut self, line: impl AsRef<str>) {
        self.log.push_str(line.as_ref());
        self.log.push('\n');
    }

    pub fn write_file(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        if rel.contains("..") || rel.starts_with('/') {
            return Err(RpsError::Config(format!("output path \"{rel}\" escapes the output dir")));
        }
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in digest {
            write!(hex, "{b:02x}").expect("writing to String cannot fail");
        }
        self.entries.push((rel.to_string(), hex));
        Ok(())
    }

    pub fn write_text(&mut self, rel: &str, text: impl AsRef<str>) -> Result<()> {
        self.write_file(rel, text.as_ref().as_bytes())
    }

    /// Writes run.log and manifest.json; returns the manifest path.
    pub fn finalize(mut self) -> Result<PathBuf> {
        let log = std::mem::take(&mut self.log);
        self.write_text("run.log", &log)?;
        self.entries.sort();
        let mut manifest = String::from("{\n  \"files\": [\n");
        for (k, (path, hash)) in self.entries.iter().enumerate() {
            let comma = if k + 1 == self.entries.len() { "" } else { "," };
            writeln!(manifest, "    {{ \"path\": \"{path}\", \"sha256\": \"{hash}\" }}{comma}")
                .expect("writing to String cannot fail");
        }
        manifest.push_str("  ]\n}\n");
        let path = self.root.join("manifest.json");
        std::fs::write(&path, manifest)?;
        Ok(path)
    }
}

/// Formats a float for CSV output (shortest round-trip representation).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn csv_table<R>(header: &str, rows: &[R], fmt_row: impl Fn(&R) -> String) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for r in rows {
        out.push_str(&fmt_row(r));
        out.push('\n');
    }
    out
}
