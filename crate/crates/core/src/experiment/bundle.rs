//! On-disk bundles: a directory of CSV/JSON artifacts plus `manifest.json`
//! listing every file with its SHA-256.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Seeds;
use super::sensors::WindowSpec;
use crate::error::{Error, Result};
use crate::fields::{Field, Grid};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub system: String,
    pub solver: String,
    pub grid: Vec<usize>,
    pub seeds: Seeds,
    pub sensor_rule: String,
    pub heldout_rule: Option<String>,
    /// Command-specific facts (counts, warnings, diagnostics).
    pub details: BTreeMap<String, serde_json::Value>,
    /// File name → SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Re-hash every listed file and report the first mismatch.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (name, want) in &self.files {
            let got = sha256_hex(&fs::read(dir.join(name))?);
            if &got != want {
                return Err(Error::Config(format!("{name} in {} does not match its manifest hash", dir.display())));
            }
        }
        Ok(())
    }
}

/// Collects files written into one output directory.
pub struct BundleWriter {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl BundleWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    /// Record a file that was written elsewhere (for example appended to
    /// incrementally).
    pub fn track(&mut self, name: &str) -> Result<()> {
        let bytes = fs::read(self.dir.join(name))?;
        self.files.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.files = self.files;
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST), text)?;
        Ok(manifest)
    }
}

/// CSV with one header line from `header` and rows of already formatted
/// cells.
pub fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

/// Shortest round-tripping text form of a float.
pub fn fmt(x: f64) -> String {
    format!("{x:e}")
}

/// `index, lo_0.., hi_0.., reading` per observation window.
pub fn observations_csv(specs: &[WindowSpec], z: &[f64]) -> Result<Vec<u8>> {
    let d = specs.first().map_or(1, |s| s.lo.len());
    let mut header: Vec<String> = vec!["index".into()];
    header.extend((0..d).map(|a| format!("lo_{a}")));
    header.extend((0..d).map(|a| format!("hi_{a}")));
    header.push("reading".into());
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_bytes(
        &h,
        specs.iter().zip(z).enumerate().map(|(i, (s, v))| {
            let mut row = vec![i.to_string()];
            row.extend(s.lo.iter().chain(&s.hi).map(|&x| fmt(x)));
            row.push(fmt(*v));
            row
        }),
    )
}

fn parse(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Serde(format!("{what}: '{s}' is not a number")))
}

pub fn read_observations(path: &Path) -> Result<(Vec<WindowSpec>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let cols = r.headers()?.len();
    if cols < 4 || (cols - 2) % 2 != 0 {
        return Err(Error::Serde(format!("{}: unexpected column layout", path.display())));
    }
    let d = (cols - 2) / 2;
    let mut specs = Vec::new();
    let mut z = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec.iter().skip(1).map(|s| parse(s, "observation")).collect::<Result<_>>()?;
        specs.push(WindowSpec {
            lo: vals[..d].to_vec(),
            hi: vals[d..2 * d].to_vec(),
        });
        z.push(vals[2 * d]);
    }
    Ok((specs, z))
}

pub fn field_csv(f: &Field<f64>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f.write_csv(&mut buf)?;
    Ok(buf)
}

/// Read the `value` column written by [`Field::write_csv`] back onto `grid`.
pub fn read_field_csv(path: &Path, grid: &Grid<f64>) -> Result<Field<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let values: Vec<f64> = r
        .records()
        .map(|rec| {
            let rec = rec?;
            parse(rec.get(rec.len() - 1).unwrap_or(""), "field value")
        })
        .collect::<Result<_>>()?;
    Field::new(grid.clone(), values).map_err(|e| e.context(format!("reading {}", path.display())))
}
