//! Output directory with a content-hash manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use qkin::QkinError;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const FAILURE: &str = "failure-snapshot.json";

#[derive(Serialize)]
struct Entry {
    sha256: String,
    bytes: usize,
}

pub struct Output {
    dir: PathBuf,
    files: BTreeMap<String, Entry>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    /// Writes `name` (relative, `/`-separated) and records its hash.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| CliError::Write {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, bytes).map_err(|source| CliError::Write { path, source })?;
        self.files.insert(
            name.to_string(),
            Entry {
                sha256: hex::encode(Sha256::digest(bytes)),
                bytes: bytes.len(),
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable report");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest of every file produced so far.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(&self.files).expect("serializable manifest");
        text.push('\n');
        let path = self.dir.join(MANIFEST);
        fs::write(&path, text).map_err(|source| CliError::Write {
            path: path.clone(),
            source,
        })?;
        Ok(self.dir)
    }

    /// Records a numerical failure next to the partial results and returns
    /// the error pointing at it.
    pub fn numerical(&self, err: QkinError) -> CliError {
        #[derive(Serialize)]
        struct Failure<'a> {
            error: String,
            t: Option<f64>,
            snapshot: Option<&'a [f64]>,
        }
        let (t, snapshot) = match &err {
            QkinError::StepUnderflow { t, snapshot, .. } => (Some(*t), Some(snapshot.as_slice())),
            _ => (None, None),
        };
        let failure = Failure {
            error: err.to_string(),
            t,
            snapshot,
        };
        let path = self.dir.join(FAILURE);
        let mut text = serde_json::to_string_pretty(&failure).expect("serializable failure");
        text.push('\n');
        if let Err(source) = fs::write(&path, text) {
            return CliError::Write { path, source };
        }
        CliError::Numerical { source: err, snapshot: path }
    }
}

/// Gnuplot script drawing `columns` (1-based, against column 1) of a CSV.
pub fn gnuplot(
    data: &str,
    title: &str,
    xlabel: &str,
    ylabel: &str,
    columns: &[(usize, &str)],
    logscale: &str,
) -> String {
    let png = data.rsplit_once('.').map_or(data, |(s, _)| s);
    let mut out = String::new();
    let _ = writeln!(out, "set datafile separator ','");
    let _ = writeln!(out, "set key autotitle columnhead");
    let _ = writeln!(out, "set terminal pngcairo size 900,600");
    let _ = writeln!(out, "set output '{png}.png'");
    let _ = writeln!(out, "set title '{title}'");
    let _ = writeln!(out, "set xlabel '{xlabel}'");
    let _ = writeln!(out, "set ylabel '{ylabel}'");
    if !logscale.is_empty() {
        let _ = writeln!(out, "set logscale {logscale}");
    }
    let plots: Vec<String> = columns
        .iter()
        .map(|(c, t)| format!("'{data}' using 1:{c} with linespoints title '{t}'"))
        .collect();
    let _ = writeln!(out, "plot {}", plots.join(", \\\n     "));
    out
}
