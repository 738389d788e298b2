//! CSV records `subject,unit_location,subunit,response` to and from datasets.

use std::collections::HashMap;
use std::io::{Read, Write};

use anyhow::{anyhow, bail, Context, Result};
use kcorr::data::{Dataset, Subject};
use serde::{Deserialize, Serialize};

pub const HEADER: [&str; 4] = ["subject", "unit_location", "subunit", "response"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub subject: String,
    pub unit_location: f64,
    pub subunit: f64,
    pub response: f64,
}

/// 1-based file line of data record `index` (the header is line 1).
fn line(index: usize) -> usize {
    index + 2
}

pub fn read_records(reader: impl Read) -> Result<Vec<InputRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().context("reading CSV header")?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        bail!(
            "expected header `{}`, found `{}`",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        );
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<InputRecord>().enumerate() {
        let rec = rec.map_err(|e| anyhow!("line {}: {e}", line(i)))?;
        for (name, v) in [
            ("unit_location", rec.unit_location),
            ("subunit", rec.subunit),
            ("response", rec.response),
        ] {
            if !v.is_finite() {
                bail!("line {}: non-finite {name} `{v}`", line(i));
            }
        }
        if !(0.0..=1.0).contains(&rec.subunit) {
            bail!("line {}: subunit {} outside [0, 1]", line(i), rec.subunit);
        }
        out.push(rec);
    }
    if out.is_empty() {
        bail!("no data rows");
    }
    Ok(out)
}

/// Groups records into subjects and units; every unit must carry the same
/// subunit set. `domain_length` defaults to the largest unit location.
pub fn records_to_dataset(records: &[InputRecord], domain_length: Option<f64>) -> Result<Dataset> {
    let mut grid: Vec<f64> = records.iter().map(|r| r.subunit).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let m = grid.len();
    let slot: HashMap<u64, usize> = grid.iter().enumerate().map(|(j, x)| (x.to_bits(), j)).collect();

    // subject -> unit -> per-subunit (value, line)
    let mut subject_order: Vec<&str> = Vec::new();
    type Unit = (f64, Vec<Option<(f64, usize)>>);
    let mut units: HashMap<&str, (Vec<Unit>, HashMap<u64, usize>)> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let (list, index) = units.entry(r.subject.as_str()).or_insert_with(|| {
            subject_order.push(r.subject.as_str());
            Default::default()
        });
        // -0.0 and 0.0 are the same location
        let key = (r.unit_location + 0.0).to_bits();
        let u = *index.entry(key).or_insert_with(|| {
            list.push((r.unit_location, vec![None; m]));
            list.len() - 1
        });
        let j = slot[&r.subunit.to_bits()];
        if let Some((_, first)) = list[u].1[j] {
            bail!(
                "line {}: duplicate row for subject `{}`, unit {}, subunit {} (first at line {first})",
                line(i),
                r.subject,
                r.unit_location,
                r.subunit
            );
        }
        list[u].1[j] = Some((r.response, line(i)));
    }

    let mut subjects = Vec::with_capacity(subject_order.len());
    for id in subject_order {
        let (mut list, _) = units.remove(id).unwrap();
        list.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut locs = Vec::with_capacity(list.len());
        let mut ys = Vec::with_capacity(list.len() * m);
        for (s, vals) in list {
            if let Some(j) = vals.iter().position(Option::is_none) {
                let seen: Vec<usize> = vals.iter().flatten().map(|v| v.1).collect();
                bail!(
                    "ragged grid: subject `{id}`, unit at {s} has no row for subunit {} (unit rows at lines {seen:?})",
                    grid[j]
                );
            }
            locs.push(s);
            ys.extend(vals.into_iter().map(|v| v.unwrap().0));
        }
        subjects.push(Subject::new(id, locs, ys, m)?);
    }

    let max_loc = records.iter().map(|r| r.unit_location).fold(f64::NEG_INFINITY, f64::max);
    let min_loc = records.iter().map(|r| r.unit_location).fold(f64::INFINITY, f64::min);
    if min_loc < 0.0 {
        bail!("unit locations must be nonnegative, found {min_loc}");
    }
    let l = match domain_length {
        Some(l) if l < max_loc => bail!("domain length {l} is shorter than the largest unit location {max_loc}"),
        Some(l) => l,
        None if max_loc > 0.0 => max_loc,
        None => bail!("cannot infer a domain length from locations that are all 0; pass --domain-length"),
    };
    Ok(Dataset::new(subjects, grid, l)?)
}

pub fn ingest(path: &std::path::Path, domain_length: Option<f64>) -> Result<Dataset> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let records = read_records(file).with_context(|| format!("reading {}", path.display()))?;
    records_to_dataset(&records, domain_length).with_context(|| format!("validating {}", path.display()))
}

pub fn dataset_to_records(data: &Dataset) -> Vec<InputRecord> {
    let grid = data.subunit_grid();
    let mut out = Vec::with_capacity(data.total_units() * grid.len());
    for s in data.subjects() {
        for (i, &loc) in s.unit_locations().iter().enumerate() {
            for (j, &x) in grid.iter().enumerate() {
                out.push(InputRecord {
                    subject: s.id.clone(),
                    unit_location: loc,
                    subunit: x,
                    response: s.row(i)[j],
                });
            }
        }
    }
    out
}

pub fn write_records(records: &[InputRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for r in records {
        w.write_record([
            r.subject.clone(),
            r.unit_location.to_string(),
            r.subunit.to_string(),
            r.response.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export(data: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_records(&dataset_to_records(data), &mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        records_to_dataset(&read_records(text.as_bytes())?, None)
    }

    #[test]
    fn four_rows_two_units() {
        let d = parse("subject,unit_location,subunit,response\na,0,0.5,1.0\na,10,0.5,2.0\n").unwrap();
        assert_eq!(d.total_units(), 2);
        assert_eq!(d.domain_length(), 10.0);
    }

    #[test]
    fn ragged_grid_names_unit() {
        let e = parse("subject,unit_location,subunit,response\na,0,0,1\na,0,1,2\na,5,0,3\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("ragged grid") && e.contains("unit at 5"), "{e}");
    }

    #[test]
    fn duplicate_and_nonfinite_rows() {
        let e = parse("subject,unit_location,subunit,response\na,0,0,1\na,0,0,2\n").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
        let e = parse("subject,unit_location,subunit,response\na,0,0,NaN\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = parse("subject,unit_location,subunit,response\na,0,0,x\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn wrong_header() {
        assert!(parse("a,b,c,d\n1,2,3,4\n").is_err());
    }
}
