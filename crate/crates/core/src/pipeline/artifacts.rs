// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-stage CSV tables and the staged output directory.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLEANED: &str = "cleaned.csv";
pub const CHANGEPOINTS: &str = "changepoints.csv";
pub const MASK: &str = "outlier_mask.csv";
pub const BANDS: &str = "bands.csv";
pub const EXPLAINED: &str = "explained_variance.csv";
pub const T2: &str = "t2.csv";
pub const PERIODS: &str = "periods.csv";
pub const OUTLIER_MAP: &str = "outlier_map.csv";
pub const LABELS: &str = "labels.csv";
pub const REPORT: &str = "report.toml";
pub const FIGURES: &str = "figures";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangePointRow {
    pub signal_id: String,
    pub index: usize,
    pub timestamp: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRow {
    pub signal_id: String,
    pub index: usize,
    pub raw_value: f64,
    pub imputed_value: f64,
}

/// Piece-wise band of one signal, for threshold overlays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub signal_id: String,
    pub start: usize,
    pub end: usize,
    pub center: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainedRow {
    pub component: usize,
    pub eigenvalue: f64,
    pub ratio: f64,
    pub cumulative: f64,
}

/// `t2` is empty for rows left out of the model because of missing values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct T2Row {
    pub index: usize,
    pub timestamp: String,
    pub t2: Option<f64>,
    pub flag: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodRow {
    pub start: usize,
    pub end: usize,
    pub n_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapRow {
    pub index: usize,
    pub pc1: f64,
    pub pc2: f64,
    pub flag: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub source_index: usize,
    pub pc1: f64,
    pub pc2: f64,
    pub cluster_id: usize,
}

pub fn write_rows<T: Serialize, W: Write>(rows: &[T], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Parses a table with a header row. Non-finite numbers are rejected.
pub fn read_rows<T: DeserializeOwned, R: Read>(reader: R) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().any(|f| matches!(f.parse::<f64>(), Ok(v) if !v.is_finite())) {
            return Err(Error::Parse {
                line,
                message: "non-finite number".into(),
            });
        }
        out.push(rec.deserialize(Some(&headers))?);
    }
    Ok(out)
}

pub fn read_table<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_rows(BufReader::new(file))
}

/// Collects output files in a hidden staging directory and moves them into
/// place only once every file has been written. Dropping an uncommitted
/// stage removes what it wrote.
pub struct Staging {
    out: PathBuf,
    dir: PathBuf,
    files: Vec<PathBuf>,
    committed: bool,
}

impl Staging {
    pub fn new(out: &Path) -> Result<Staging> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let dir = out.join(format!(".staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Staging {
            out: out.to_path_buf(),
            dir,
            files: Vec::new(),
            committed: false,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Path inside the staging directory; parents are created.
    pub fn path(&mut self, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.files.push(PathBuf::from(name));
        Ok(path)
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.path(name)?;
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    pub fn write_table<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        self.write_with(name, |w| write_rows(rows, w))
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        let mut done = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let (from, to) = (self.dir.join(name), self.out.join(name));
            if let Some(parent) = to.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
            done.push(to);
        }
        self.committed = true;
        fs::remove_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        Ok(done)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_round_trip() {
        let rows = vec![
            T2Row { index: 0, timestamp: "0".into(), t2: Some(1.25), flag: 0 },
            T2Row { index: 1, timestamp: "1".into(), t2: None, flag: 0 },
        ];
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "index,timestamp,t2,flag\n0,0,1.25,0\n1,1,,0\n");
        assert_eq!(read_rows::<T2Row, _>(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn bad_rows_are_parse_errors() {
        let text = "start,end,n_points\n1,2,1\n3,x,1\n";
        assert!(matches!(read_rows::<PeriodRow, _>(text.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let text = "source_index,pc1,pc2,cluster_id\n0,NaN,1,1\n";
        assert!(matches!(read_rows::<LabelRow, _>(text.as_bytes()), Err(Error::Parse { .. })));
    }

    #[test]
    fn staging_commits_or_leaves_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("run");
        {
            let mut stage = Staging::new(&out).unwrap();
            stage.write_table(PERIODS, &[PeriodRow { start: 0, end: 2, n_points: 2 }]).unwrap();
        }
        assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
        let mut stage = Staging::new(&out).unwrap();
        stage.write_table(PERIODS, &[PeriodRow { start: 0, end: 2, n_points: 2 }]).unwrap();
        stage.write_with("figures/x.svg", |w| w.write_all(b"<svg/>").map_err(|e| Error::io("x", e))).unwrap();
        stage.commit().unwrap();
        assert!(out.join(PERIODS).exists() && out.join("figures/x.svg").exists());
        assert_eq!(fs::read_dir(&out).unwrap().count(), 2);
    }
}
