// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta, Utc};

use super::{Dataset, Signal, Timestamp, CADENCE_SECONDS};
use crate::error::{Error, Result};

/// Upper bound on rows synthesised to fill cadence gaps; a larger jump is
/// almost certainly a corrupt timestamp rather than an outage.
const MAX_FILLED_ROWS: i64 = 50_000_000;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Schema {
    #[default]
    Infer,
    /// The header must name exactly these signals; columns are reordered to match.
    Expect(Vec<String>),
}

/// A run of rows that was absent from the file and inserted as missing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CadenceGap {
    /// Row index of the last sample before the gap.
    pub after_index: usize,
    pub inserted: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Loaded {
    pub dataset: Dataset,
    pub gaps: Vec<CadenceGap>,
}

impl Loaded {
    pub fn warning_count(&self) -> usize {
        self.gaps.len()
    }
}

#[derive(Clone, Copy)]
enum TimeMode {
    Index { origin: u64 },
    Wall { origin: DateTime<Utc> },
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Loaded> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(BufReader::new(file), schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(rec) => rec?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header row".into(),
            })
        }
    };
    let header_line = header.position().map(|p| p.line()).unwrap_or(1);
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("timestamp") {
        return Err(Error::Parse {
            line: header_line,
            message: "header must be `timestamp,<id1>,<id2>,...`".into(),
        });
    }
    let ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let mut seen = HashSet::new();
    for id in &ids {
        if id.is_empty() {
            return Err(Error::Parse {
                line: header_line,
                message: "empty signal id in header".into(),
            });
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::Validation(format!("duplicate signal id {id} in header")));
        }
    }
    let order = column_order(&ids, schema)?;

    let width = header.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); ids.len()];
    let mut gaps = Vec::new();
    let mut mode: Option<TimeMode> = None;
    let mut prev_slot: Option<i64> = None;
    let mut filled: i64 = 0;

    for rec in records {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        let slot = parse_slot(&rec[0], &mut mode, line)?;
        if let Some(prev) = prev_slot {
            if slot == prev {
                return Err(Error::Validation(format!("line {line}: duplicate timestamp `{}`", &rec[0])));
            }
            if slot < prev {
                return Err(Error::Validation(format!(
                    "line {line}: timestamp `{}` is earlier than the previous row",
                    &rec[0]
                )));
            }
            let skipped = slot - prev - 1;
            if skipped > 0 {
                filled += skipped;
                if filled > MAX_FILLED_ROWS {
                    return Err(Error::Validation(format!(
                        "line {line}: cadence gap of {skipped} rows exceeds the fill limit"
                    )));
                }
                gaps.push(CadenceGap {
                    after_index: columns[0].len() - 1,
                    inserted: skipped as usize,
                });
                for col in &mut columns {
                    col.extend(std::iter::repeat_n(f64::NAN, skipped as usize));
                }
            }
        } else if slot != 0 {
            unreachable!("first row defines the time origin");
        }
        prev_slot = Some(slot);
        for (col, field) in columns.iter_mut().zip(rec.iter().skip(1)) {
            col.push(parse_cell(field, line)?);
        }
    }

    let n = columns[0].len();
    if n < 2 {
        return Err(Error::Validation(format!("need at least 2 data rows, found {n}")));
    }
    let (timestamps, origin) = match mode.expect("at least one row was read") {
        TimeMode::Index { origin } => (
            (0..n).map(|index| Timestamp { index, wall_time: None }).collect(),
            origin,
        ),
        TimeMode::Wall { origin } => (
            (0..n)
                .map(|index| Timestamp {
                    index,
                    wall_time: Some(origin + TimeDelta::seconds(index as i64 * CADENCE_SECONDS)),
                })
                .collect(),
            0,
        ),
    };
    let mut signals = Vec::with_capacity(ids.len());
    let mut columns: Vec<Option<Vec<f64>>> = columns.into_iter().map(Some).collect();
    for &col in &order {
        let values = columns[col].take().expect("each column used once");
        signals.push(Signal::new(ids[col].clone(), values)?);
    }
    let dataset = Dataset::with_origin(timestamps, signals, origin)?;
    Ok(Loaded { dataset, gaps })
}

fn column_order(ids: &[String], schema: &Schema) -> Result<Vec<usize>> {
    match schema {
        Schema::Infer => Ok((0..ids.len()).collect()),
        Schema::Expect(expected) => {
            let pos: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
            if expected.len() != ids.len() {
                return Err(Error::Validation(format!(
                    "expected {} signals, header has {}",
                    expected.len(),
                    ids.len()
                )));
            }
            expected
                .iter()
                .map(|id| {
                    pos.get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::Validation(format!("expected signal {id} not in header")))
                })
                .collect()
        }
    }
}

fn parse_slot(field: &str, mode: &mut Option<TimeMode>, line: u64) -> Result<i64> {
    if field.is_empty() {
        return Err(Error::Parse {
            line,
            message: "empty timestamp".into(),
        });
    }
    let is_integer = field.bytes().all(|b| b.is_ascii_digit());
    match *mode {
        None => {
            *mode = Some(if is_integer {
                TimeMode::Index {
                    origin: parse_index(field, line)?,
                }
            } else {
                TimeMode::Wall {
                    origin: parse_wall(field, line)?,
                }
            });
            Ok(0)
        }
        Some(TimeMode::Index { origin }) => {
            if !is_integer {
                return Err(Error::Parse {
                    line,
                    message: format!("expected an integer index, found `{field}`"),
                });
            }
            let v = parse_index(field, line)?;
            Ok(v as i64 - origin as i64)
        }
        Some(TimeMode::Wall { origin }) => {
            let t = parse_wall(field, line)?;
            let secs = (t - origin).num_seconds();
            // snap to the nearest cadence slot
            Ok((secs as f64 / CADENCE_SECONDS as f64).round() as i64)
        }
    }
}

fn parse_index(field: &str, line: u64) -> Result<u64> {
    field
        .parse::<u64>()
        .ok()
        .filter(|v| *v <= i64::MAX as u64 / 2)
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("bad index `{field}`"),
        })
}

fn parse_wall(field: &str, line: u64) -> Result<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(field) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(field, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(Error::Parse {
        line,
        message: format!("unrecognised timestamp `{field}`"),
    })
}

fn parse_cell(field: &str, line: u64) -> Result<f64> {
    if field.is_empty() {
        return Ok(f64::NAN);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            line,
            message: format!("bad numeric value `{field}`"),
        }),
    }
}

/// Writes `dataset` in the same layout `read_csv` accepts. Values use the
/// shortest representation that parses back to the identical `f64`.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut row: Vec<String> = Vec::with_capacity(dataset.n_signals() + 1);
    row.push("timestamp".into());
    row.extend(dataset.signals().iter().map(|s| s.id().to_owned()));
    wtr.write_record(&row)?;
    for i in 0..dataset.n_samples() {
        row.clear();
        row.push(dataset.time_label(i));
        for s in dataset.signals() {
            row.push(match s.get(i) {
                Some(v) => format!("{v}"),
                None => String::new(),
            });
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e: io::Error| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn read(text: &str) -> Result<Loaded> {
        read_csv(text.as_bytes(), &Schema::Infer)
    }

    #[test]
    fn three_rows_two_sensors() {
        let l = read("timestamp,T0,F1\n0,1.5,2\n1,1.6,3\n2,1.7,4\n").unwrap();
        assert_eq!(l.dataset.n_samples(), 3);
        assert_eq!(l.dataset.n_signals(), 2);
        assert!(l.gaps.is_empty());
        assert!(l.dataset.signals().iter().all(|s| !s.has_missing()));
        assert_eq!(l.dataset.signal("F1").unwrap().values(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn empty_cell_is_missing() {
        let l = read("timestamp,A,B\n0,1,2\n1,,3\n2,4,5\n").unwrap();
        let a = l.dataset.signal("A").unwrap();
        assert_eq!(a.missing(), &[false, true, false]);
        assert_eq!(a.get(0), Some(1.0));
        assert_eq!(a.get(2), Some(4.0));
        assert_eq!(l.dataset.signal("B").unwrap().values(), &[2.0, 3.0, 5.0]);
    }

    /// Independent line-by-line reader used to cross-check gap filling.
    fn reference_rows(text: &str) -> Vec<Option<Vec<f64>>> {
        let mut out: Vec<Option<Vec<f64>>> = Vec::new();
        let mut prev: Option<i64> = None;
        for line in text.lines().skip(1) {
            let mut parts = line.split(',');
            let t: i64 = {
                let ts = parts.next().unwrap();
                let hm = &ts[11..16];
                let (h, m) = hm.split_at(2);
                h.parse::<i64>().unwrap() * 60 + m[1..].parse::<i64>().unwrap()
            };
            if let Some(p) = prev {
                for _ in p + 1..t {
                    out.push(None);
                }
            }
            prev = Some(t);
            out.push(Some(parts.map(|p| p.parse().unwrap()).collect()));
        }
        out
    }

    #[test]
    fn skipped_minute_is_filled() {
        let text = "timestamp,T0,T1\n\
                    2020-01-01T00:00:00Z,1,10\n\
                    2020-01-01T00:01:00Z,2,20\n\
                    2020-01-01T00:03:00Z,4,40\n\
                    2020-01-01T00:04:00Z,5,50\n";
        let l = read(text).unwrap();
        assert_eq!(l.warning_count(), 1);
        assert_eq!(l.gaps[0], CadenceGap { after_index: 1, inserted: 1 });
        let reference = reference_rows(text);
        assert_eq!(reference.len(), l.dataset.n_samples());
        for (i, row) in reference.iter().enumerate() {
            for (j, s) in l.dataset.signals().iter().enumerate() {
                assert_eq!(s.get(i), row.as_ref().map(|r| r[j]));
            }
        }
        let ts = l.dataset.timestamps();
        assert_eq!(l.dataset.time_label(2), "2020-01-01T00:02:00Z");
        assert_eq!(ts[2].index, 2);
    }

    #[test]
    fn off_cadence_timestamps_snap() {
        let l = read("timestamp,A\n2020-01-01 00:00:00,1\n2020-01-01 00:01:02,2\n2020-01-01 00:01:20,3\n");
        assert!(matches!(l, Err(Error::Validation(_))));
        let l = read("timestamp,A\n2020-01-01 00:00:00,1\n2020-01-01 00:01:02,2\n2020-01-01 00:01:58,3\n").unwrap();
        assert_eq!(l.dataset.n_samples(), 3);
    }

    #[test]
    fn malformed_row_reports_line() {
        match read("timestamp,A,B\n0,1,2\n1,2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match read("timestamp,A\n0,1\n1,abc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_and_non_monotone() {
        assert!(matches!(read("timestamp,A\n0,1\n1,2\n1,3\n"), Err(Error::Validation(m)) if m.contains("duplicate")));
        assert!(matches!(read("timestamp,A\n0,1\n2,2\n1,3\n"), Err(Error::Validation(m)) if m.contains("earlier")));
    }

    #[test]
    fn header_problems() {
        assert!(read("").is_err());
        assert!(read("time,A\n0,1\n1,2\n").is_err());
        assert!(read("timestamp,A,A\n0,1,1\n1,2,2\n").is_err());
        assert!(read("timestamp,A\n0,1\n").is_err());
    }

    #[test]
    fn expected_schema_reorders() {
        let l = read_csv(
            "timestamp,B,A\n0,1,2\n1,3,4\n".as_bytes(),
            &Schema::Expect(vec!["A".into(), "B".into()]),
        )
        .unwrap();
        assert_eq!(l.dataset.signals()[0].id(), "A");
        assert_eq!(l.dataset.signals()[0].values(), &[2.0, 4.0]);
        assert!(read_csv("timestamp,B,C\n0,1,2\n1,3,4\n".as_bytes(), &Schema::Expect(vec!["A".into(), "B".into()])).is_err());
    }

    #[test]
    fn integer_origin_is_preserved() {
        let l = read("timestamp,A\n100,1\n101,2\n103,3\n").unwrap();
        let mut out = Vec::new();
        write_csv(&l.dataset, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "timestamp,A\n100,1\n101,2\n102,\n103,3\n");
    }

    proptest! {
        #[test]
        fn write_then_read_round_trips(
            cols in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.9, -1e12f64..1e12), 2..30), 1..4)
        ) {
            let n = cols.iter().map(Vec::len).min().unwrap();
            let signals: Vec<Signal> = cols.iter().enumerate().map(|(j, c)| {
                let v = c[..n].iter().map(|x| x.unwrap_or(f64::NAN)).collect();
                Signal::new(format!("S{j}"), v).unwrap()
            }).collect();
            let ds = Dataset::from_signals(signals).unwrap();
            let mut buf = Vec::new();
            write_csv(&ds, &mut buf).unwrap();
            let back = read_csv(buf.as_slice(), &Schema::Infer).unwrap();
            prop_assert!(back.gaps.is_empty());
            for (a, b) in ds.signals().iter().zip(back.dataset.signals()) {
                prop_assert_eq!(a.missing(), b.missing());
                for i in 0..n {
                    prop_assert_eq!(a.get(i).map(f64::to_bits), b.get(i).map(f64::to_bits));
                }
            }
        }
    }
}
