//! Result serialization: long-format CSV tables and key-value metadata
//! files, both byte-stable across reruns. Every output file opens with the
//! root seed and a digest of the effective configuration so a result is
//! reproducible from the artifact alone. Wall-clock lines are written as
//! `#`-comments, which rerun comparisons may ignore.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use udcn_core::sim::experiments::{Cell, Table};

/// Nine-significant-digit float formatting used in every table.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v:.8e}")
    }
}

/// SHA-256 hex digest of the canonical configuration text.
pub fn config_digest(canonical: &str) -> String {
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub struct OutputWriter {
    dir: PathBuf,
    seed: u64,
    digest: String,
}

impl OutputWriter {
    pub fn new(dir: &Path, seed: u64, digest: String) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(OutputWriter {
            dir: dir.to_path_buf(),
            seed,
            digest,
        })
    }

    fn preamble(&self) -> String {
        format!("# seed = {}\n# config_sha256 = {}\n", self.seed, self.digest)
    }

    /// Write one table as `<name>.csv`.
    pub fn write_table(&self, table: &Table) -> Result<PathBuf> {
        let mut s = self.preamble();
        let _ = writeln!(s, "{}", table.columns.join(","));
        for row in &table.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Num(v) => fmt_num(*v),
                    Cell::Int(v) => v.to_string(),
                    Cell::Text(t) => t.clone(),
                })
                .collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        let path = self.dir.join(format!("{}.csv", table.name));
        fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Write a long-format field CSV with columns t,x,q,value.
    pub fn write_field(
        &self,
        name: &str,
        grid: &udcn_core::solver::Grid,
        field: &udcn_core::solver::ScalarField,
    ) -> Result<PathBuf> {
        let mut s = self.preamble();
        let _ = writeln!(s, "t,x,q,value");
        for (n, &t) in grid.ts.iter().enumerate() {
            for (i, &x) in grid.xs.iter().enumerate() {
                for (j, &q) in grid.qs.iter().enumerate() {
                    let _ = writeln!(
                        s,
                        "{},{},{},{}",
                        fmt_num(t),
                        fmt_num(x),
                        fmt_num(q),
                        fmt_num(field.data[[n, i, j]])
                    );
                }
            }
        }
        let path = self.dir.join(format!("{name}.csv"));
        fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Write a metadata file: deterministic `key = value` lines plus
    /// non-normative `#` diagnostics (wall time).
    pub fn write_meta(
        &self,
        name: &str,
        entries: &[(String, String)],
        wall_ms: u128,
    ) -> Result<PathBuf> {
        let mut s = self.preamble();
        for (k, v) in entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "# wall_ms = {wall_ms}");
        let path = self.dir.join(format!("{name}_meta.txt"));
        fs::write(&path, s).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Load a policy field written by `write_field`, reconstructing the grid
/// axes from the unique sorted coordinates.
pub fn load_field(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, udcn_core::ndarray::Array3<f64>)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading field file {}", path.display()))?;
    let mut rows: Vec<(f64, f64, f64, f64)> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('t') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            anyhow::bail!("malformed field row `{line}`");
        }
        rows.push((
            parts[0].parse()?,
            parts[1].parse()?,
            parts[2].parse()?,
            parts[3].parse()?,
        ));
    }
    let mut ts: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut xs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let mut qs: Vec<f64> = rows.iter().map(|r| r.2).collect();
    for v in [&mut ts, &mut xs, &mut qs] {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
    }
    if rows.len() != ts.len() * xs.len() * qs.len() {
        anyhow::bail!(
            "field file {} does not cover a full lattice ({} rows, {}x{}x{} axes)",
            path.display(),
            rows.len(),
            ts.len(),
            xs.len(),
            qs.len()
        );
    }
    let locate = |axis: &[f64], v: f64| -> Result<usize> {
        let idx = axis.partition_point(|&a| a < v - 1e-12);
        if idx < axis.len() && (axis[idx] - v).abs() < 1e-9 {
            Ok(idx)
        } else {
            anyhow::bail!("coordinate {v} off the reconstructed axis")
        }
    };
    let mut data = udcn_core::ndarray::Array3::<f64>::zeros((ts.len(), xs.len(), qs.len()));
    for (t, x, q, v) in rows {
        data[[locate(&ts, t)?, locate(&xs, x)?, locate(&qs, q)?]] = v;
    }
    Ok((ts, xs, qs, data))
}
