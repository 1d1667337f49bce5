//! On-disk formats: row CSVs for trajectories and experiment records, dense
//! kernel CSVs with a JSON sidecar, and the run manifest.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::datagen::fmt_f64;
use crate::error::{Error, Result};
use crate::kernels::{KernelMatrix, Provenance};

/// Version of the manifest layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Writes `rows` as a headed CSV, one row per record.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a headed CSV written by [`write_rows`].
pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Sidecar describing a dense kernel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSidecar {
    pub provenance: Provenance,
    pub n: usize,
    pub format: String,
}

/// Path of the JSON sidecar for a kernel CSV: `K.csv` → `K.csv.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the kernel as `n` header-less rows of `n` values, plus the sidecar.
pub fn write_kernel(kernel: &KernelMatrix, csv_path: &Path) -> Result<()> {
    let n = kernel.n();
    let mut out = BufWriter::new(File::create(csv_path)?);
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| fmt_f64(kernel.values[(i, j)])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    let sidecar = KernelSidecar {
        provenance: kernel.provenance,
        n,
        format: "dense-csv".into(),
    };
    fs::write(
        sidecar_path(csv_path),
        serde_json::to_string_pretty(&sidecar)? + "\n",
    )?;
    Ok(())
}

/// Reads a kernel written by [`write_kernel`].
pub fn read_kernel(csv_path: &Path) -> Result<KernelMatrix> {
    let sidecar: KernelSidecar =
        serde_json::from_str(&fs::read_to_string(sidecar_path(csv_path))?)?;
    let n = sidecar.n;
    let mut values = DMatrix::zeros(n, n);
    let reader = BufReader::new(File::open(csv_path)?);
    let mut rows = 0;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let parse_err = |msg: String| Error::Parse {
            path: csv_path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if i >= n {
            return Err(parse_err(format!("more than {n} rows")));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n {
            return Err(parse_err(format!(
                "expected {n} values, found {}",
                fields.len()
            )));
        }
        for (j, f) in fields.iter().enumerate() {
            values[(i, j)] = f
                .trim()
                .parse()
                .map_err(|e| parse_err(format!("column {}: {e}", j + 1)))?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse {
            path: csv_path.to_path_buf(),
            line: rows,
            msg: format!("expected {n} rows, found {rows}"),
        });
    }
    Ok(KernelMatrix {
        values,
        provenance: sidecar.provenance,
    })
}

/// Outcome of one configured check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub library: String,
    pub version: String,
    pub subcommand: String,
    /// The configuration as given, before defaults.
    pub config: serde_json::Value,
    /// Command-line overrides applied on top of `config`.
    pub overrides: serde_json::Value,
    /// The configuration after defaults and overrides.
    pub resolved: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Quantities the run derived from the configuration (learning rates,
    /// step counts, …).
    pub derived: serde_json::Value,
    pub outputs: Vec<String>,
    pub warnings: Vec<String>,
    pub assertions: Vec<Assertion>,
}

impl Manifest {
    pub fn new(subcommand: &str, config: serde_json::Value, resolved: serde_json::Value) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            library: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            config,
            overrides: serde_json::Value::Object(Default::default()),
            resolved,
            seeds: Vec::new(),
            derived: serde_json::Value::Object(Default::default()),
            outputs: Vec::new(),
            warnings: Vec::new(),
            assertions: Vec::new(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}
