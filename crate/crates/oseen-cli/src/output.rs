//! Artifact emission: atomic writes, CSV and gnuplot tables, manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Write `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Column-oriented table rendered either as CSV or as a gnuplot data block.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| fmt_num(*v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    /// Whitespace table with a commented header; a blank line separates
    /// blocks whenever the first column changes.
    pub fn to_dat(&self) -> String {
        let mut s = format!("# {}\n", self.columns.join(" "));
        let mut prev: Option<f64> = None;
        for row in &self.rows {
            if let (Some(p), Some(&c)) = (prev, row.first()) {
                if p != c && self.columns.len() > 2 {
                    s.push('\n');
                }
            }
            prev = row.first().copied();
            let cells: Vec<String> = row.iter().map(|v| fmt_num(*v)).collect();
            let _ = writeln!(s, "{}", cells.join(" "));
        }
        s
    }
}

/// Shortest round-trip decimal form.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:e}")
    }
}

pub fn config_hash(config: &RunConfig) -> String {
    let digest = Sha256::digest(config.to_toml().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub oseen: &'static str,
    pub cli: &'static str,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub workers: usize,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config: RunConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: Versions,
    pub grid_report: Value,
    pub artifacts: Vec<String>,
    pub timing: Timing,
}

impl Manifest {
    pub fn new(subcommand: &str, config: &RunConfig, grid_report: Value, artifacts: Vec<String>, timing: Timing) -> Self {
        Self {
            subcommand: subcommand.into(),
            config: config.clone(),
            config_sha256: config_hash(config),
            seed: config.seed,
            versions: Versions { oseen: oseen::VERSION, cli: env!("CARGO_PKG_VERSION") },
            grid_report,
            artifacts,
            timing,
        }
    }
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_dat_layout() {
        let mut t = Table::new(&["n", "beta", "norm"]);
        t.push(vec![1.0, 100.0, 0.5]);
        t.push(vec![2.0, 100.0, 0.25]);
        assert_eq!(t.to_csv(), "n,beta,norm\n1e0,1e2,5e-1\n2e0,1e2,2.5e-1\n");
        assert_eq!(t.to_dat(), "# n beta norm\n1e0 1e2 5e-1\n\n2e0 1e2 2.5e-1\n");
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = std::env::temp_dir().join(format!("oseen-out-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("a.csv");
        write_atomic(&p, b"x\n").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"x\n");
        assert!(!dir.join("a.csv.tmp").exists());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn hash_tracks_config() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed += 1;
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
