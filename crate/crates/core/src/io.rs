//! CSV readers and writers. Lines starting with `#` are comments.
//!
//! Panel layout: `location_id,lat,lon,<time id>...`, one row per site. Leave
//! `lat` and `lon` empty on every row when coordinates are unknown.
//! Truth layout: `t,value`, one row per time step.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::data::{ObservationPanel, TruthSeries, WeightVector};
use crate::error::{Result, SpatError};

/// Shortest round-trip text for `x`, in exponent form outside
/// `[1e-4, 1e15)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn reader<R: std::io::Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r)
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| SpatError::Parse(format!("{what}: cannot parse '{s}' as a number")))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| SpatError::Io(format!("{}: {e}", path.display())))
}

pub fn read_panel(path: &Path) -> Result<ObservationPanel> {
    parse_panel(open(path)?)
}

pub fn parse_panel<R: std::io::Read>(r: R) -> Result<ObservationPanel> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < 4 || &header[0] != "location_id" || &header[1] != "lat" || &header[2] != "lon" {
        return Err(SpatError::Parse(
            "panel header must be location_id,lat,lon followed by time ids".into(),
        ));
    }
    let time_ids: Vec<String> = header.iter().skip(3).map(str::to_owned).collect();
    let n_steps = time_ids.len();

    let mut ids = Vec::new();
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        if rec.len() != n_steps + 3 {
            return Err(SpatError::Parse(format!(
                "panel row {line}: expected {} fields, found {}",
                n_steps + 3,
                rec.len()
            )));
        }
        ids.push(rec[0].to_owned());
        coords.push(match (&rec[1], &rec[2]) {
            ("", "") => None,
            (lat, lon) => Some((
                parse_f64(lat, &format!("panel row {line} lat"))?,
                parse_f64(lon, &format!("panel row {line} lon"))?,
            )),
        });
        for (k, v) in rec.iter().skip(3).enumerate() {
            values.push(parse_f64(v, &format!("panel row {line}, {}", time_ids[k]))?);
        }
    }
    let n = ids.len();
    if n == 0 {
        return Err(SpatError::DegeneratePanel("panel has no sites".into()));
    }
    let coords = if coords.iter().all(Option::is_none) {
        None
    } else if coords.iter().all(Option::is_some) {
        Some(coords.into_iter().flatten().collect())
    } else {
        return Err(SpatError::Parse("coordinates must be given for all sites or none".into()));
    };
    ObservationPanel::new(DMatrix::from_row_slice(n, n_steps, &values), ids, coords, time_ids)
}

/// Reads a truth series and checks its time ids against `time_ids` when
/// given.
pub fn read_truth(path: &Path, time_ids: Option<&[String]>) -> Result<TruthSeries> {
    parse_truth(open(path)?, time_ids)
}

pub fn parse_truth<R: std::io::Read>(r: R, time_ids: Option<&[String]>) -> Result<TruthSeries> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    if header.len() != 2 || &header[0] != "t" || &header[1] != "value" {
        return Err(SpatError::Parse("truth header must be t,value".into()));
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        ids.push(rec[0].to_owned());
        values.push(parse_f64(&rec[1], &format!("truth row {}", row + 2))?);
    }
    if let Some(expected) = time_ids {
        if expected.len() != ids.len() {
            return Err(SpatError::DimensionMismatch(format!(
                "truth has {} steps, panel has {}",
                ids.len(),
                expected.len()
            )));
        }
        if let Some(k) = (0..ids.len()).find(|&k| ids[k] != expected[k]) {
            return Err(SpatError::DimensionMismatch(format!(
                "truth time id '{}' does not match panel column '{}'",
                ids[k], expected[k]
            )));
        }
    }
    TruthSeries::new(values)
}

/// Reads weights from a CSV with `location_id` and `beta` columns, in panel
/// order. Sites missing from the file get zero weight.
pub fn read_weights(path: &Path, location_ids: &[String]) -> Result<WeightVector> {
    parse_weights(open(path)?, location_ids)
}

pub fn parse_weights<R: std::io::Read>(r: R, location_ids: &[String]) -> Result<WeightVector> {
    let mut rdr = reader(r);
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SpatError::Parse(format!("weights file lacks a '{name}' column")))
    };
    let (id_col, beta_col) = (col("location_id")?, col("beta")?);
    let mut beta = vec![0.0; location_ids.len()];
    let mut seen = vec![false; location_ids.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let id = &rec[id_col];
        let i = location_ids
            .iter()
            .position(|l| l == id)
            .ok_or_else(|| SpatError::DimensionMismatch(format!("unknown location '{id}' in weights")))?;
        if seen[i] {
            return Err(SpatError::Parse(format!("duplicate location '{id}' in weights")));
        }
        seen[i] = true;
        beta[i] = parse_f64(&rec[beta_col], &format!("weight of {id}"))?;
    }
    WeightVector::new(beta)
}

/// Serializes rows of string fields to CSV text, preceded by `comment`
/// lines prefixed with `#`.
pub fn csv_text(comment: &[String], header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut out = String::new();
    for c in comment {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| SpatError::Io(e.to_string()))?;
    out.push_str(&String::from_utf8(bytes).map_err(|e| SpatError::Io(e.to_string()))?);
    Ok(out)
}

pub fn panel_text(panel: &ObservationPanel, comment: &[String]) -> Result<String> {
    let mut header = vec!["location_id", "lat", "lon"];
    header.extend(panel.time_ids().iter().map(String::as_str));
    let rows: Vec<Vec<String>> = (0..panel.n_sites())
        .map(|i| {
            let (lat, lon) = match panel.coords() {
                Some(c) => (fmt_f64(c[i].0), fmt_f64(c[i].1)),
                None => (String::new(), String::new()),
            };
            let mut row = vec![panel.location_ids()[i].clone(), lat, lon];
            row.extend((0..panel.n_steps()).map(|t| fmt_f64(panel.value(i, t))));
            row
        })
        .collect();
    csv_text(comment, &header, &rows)
}

pub fn truth_text(truth: &TruthSeries, time_ids: &[String], comment: &[String]) -> Result<String> {
    if time_ids.len() != truth.len() {
        return Err(SpatError::DimensionMismatch("time ids and truth differ in length".into()));
    }
    let rows: Vec<Vec<String>> = time_ids
        .iter()
        .zip(truth.values())
        .map(|(t, v)| vec![t.clone(), fmt_f64(*v)])
        .collect();
    csv_text(comment, &["t", "value"], &rows)
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run leaves no partial file behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    builder.prefix(".spatavg-");
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder
        .tempfile_in(dir)
        .map_err(|e| SpatError::Io(format!("{}: {e}", dir.display())))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| SpatError::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}
