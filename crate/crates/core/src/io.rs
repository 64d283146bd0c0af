//! File formats: single-column series input, track CSVs, and atomic writes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::averaging::PosteriorTrack;
use crate::error::{Error, Result};

/// Parses a single numeric column. A non-numeric first line is taken as a
/// header; any later non-numeric line is an error. Blank lines are ignored.
pub fn parse_series(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let field = line.trim_matches('"');
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(v) => return Err(Error::Parse { line: i + 1, message: format!("non-finite value {v}") }),
            Err(_) if out.is_empty() && i == first_content_line(text) => {}
            Err(_) => return Err(Error::Parse { line: i + 1, message: format!("not a number: {line:?}") }),
        }
    }
    Ok(out)
}

fn first_content_line(text: &str) -> usize {
    text.lines().position(|l| !l.trim().is_empty()).unwrap_or(0)
}

pub fn read_series(path: &Path) -> Result<Vec<f64>> {
    parse_series(&fs::read_to_string(path)?)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// CSV with a header row and one row per timepoint.
pub fn columns_to_csv(headers: &[&str], columns: &[&[f64]]) -> Result<String> {
    if headers.len() != columns.len() {
        return Err(Error::DimensionMismatch { expected: headers.len(), actual: columns.len() });
    }
    let n = columns.first().map_or(0, |c| c.len());
    if let Some(c) = columns.iter().find(|c| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, actual: c.len() });
    }
    let mut out = String::new();
    out.push_str("t,");
    out.push_str(&headers.join(","));
    out.push('\n');
    for t in 0..n {
        write!(out, "{}", t + 1).expect("string write");
        for c in columns {
            write!(out, ",{}", fmt_f64(c[t])).expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses CSV written by [`columns_to_csv`] back into named columns.
pub fn csv_to_columns(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty file".into() })?;
    let names: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
    let mut cols = vec![Vec::new(); names.len()];
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != names.len() + 1 {
            return Err(Error::Parse { line: i + 1, message: format!("expected {} fields", names.len() + 1) });
        }
        for (c, f) in cols.iter_mut().zip(&fields[1..]) {
            c.push(f.trim().parse::<f64>().map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?);
        }
    }
    Ok((names, cols))
}

pub fn track_to_csv(track: &PosteriorTrack) -> String {
    columns_to_csv(&[&track.source], &[&track.values]).expect("single column")
}

pub fn track_from_csv(text: &str) -> Result<PosteriorTrack> {
    let (names, mut cols) = csv_to_columns(text)?;
    if cols.len() != 1 {
        return Err(Error::Parse { line: 1, message: format!("expected one track column, got {}", cols.len()) });
    }
    PosteriorTrack::new(cols.remove(0), names[0].clone())
}
