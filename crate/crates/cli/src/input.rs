use std::fs::File;
use std::io::{self, BufRead, BufReader, Cursor, Read};
use std::path::Path;

use anyhow::{Context, Result};
use cpwatch_core::timeseries::{SampleRows, TimeSeries};

/// Columns used when none are selected: all of them, except a leading `t`
/// column as written by series export.
pub fn default_columns(first_line: &str) -> Vec<usize> {
    let fields: Vec<&str> = first_line.trim_end_matches(['\r', '\n']).split(',').collect();
    let skip = usize::from(fields.len() > 1 && fields[0].trim().eq_ignore_ascii_case("t"));
    (skip..fields.len()).collect()
}

fn open(path: &str) -> Result<Box<dyn BufRead>> {
    if path == "-" {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(Path::new(path)).with_context(|| format!("opening {path}"))?;
    Ok(Box::new(BufReader::new(f)))
}

/// Opens `path` (`-` for stdin) and resolves the column selection.
pub fn rows(path: &str, columns: Option<&[usize]>) -> Result<(Vec<usize>, SampleRows<impl Read>)> {
    let mut reader = open(path)?;
    let mut first = String::new();
    reader.read_line(&mut first).with_context(|| format!("reading {path}"))?;
    let cols = match columns {
        Some(c) => c.to_vec(),
        None => default_columns(&first),
    };
    let chained = Cursor::new(first).chain(reader);
    Ok((cols.clone(), SampleRows::new(chained, &cols)?))
}

pub fn load(path: &str, columns: Option<&[usize]>) -> Result<(Vec<usize>, TimeSeries)> {
    let (cols, rows) = rows(path, columns)?;
    let data = rows.collect::<cpwatch_core::Result<Vec<_>>>()?;
    if data.is_empty() {
        anyhow::bail!("{path}: no data rows");
    }
    let series = TimeSeries::from_rows(&data)?.with_label(path);
    Ok((cols, series))
}
