//! Metric streams and batch series.
//!
//! Samples are stored row-major (time × dimension). Public indices are
//! 1-based: sample `n` of a series with period `p` sits at time `(n - 1) * p`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Read-only access to an ordered block of d-dimensional samples.
///
/// `row(i)` is 0-based within the view; callers that report indices convert
/// to the 1-based convention themselves.
pub trait Samples {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn row(&self, i: usize) -> &[f64];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    len: usize,
    dim: usize,
    period: f64,
    label: String,
}

impl TimeSeries {
    /// Builds a series from row-major values. Rejects empty input, ragged
    /// rows and non-finite values.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::invalid("series has no rows"))?;
        let dim = first.as_ref().len();
        if dim == 0 {
            return Err(Error::invalid("series has zero columns"));
        }
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row: i + 1,
                        column: j + 1,
                        message: format!("non-finite value {v}"),
                    });
                }
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            values,
            len: rows.len(),
            dim,
            period: 1.0,
            label: String::new(),
        })
    }

    pub fn univariate(values: &[f64]) -> Result<Self> {
        let rows: Vec<[f64; 1]> = values.iter().map(|&v| [v]).collect();
        Self::from_rows(&rows)
    }

    pub fn with_period(mut self, period: f64) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::invalid(format!("period must be positive, got {period}")));
        }
        self.period = period;
        Ok(self)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Empty series of dimension `dim`, grown with [`TimeSeries::push`].
    pub fn with_dim(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("series has zero columns"));
        }
        Ok(Self {
            values: Vec::new(),
            len: 0,
            dim,
            period: 1.0,
            label: String::new(),
        })
    }

    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                row: self.len + 1,
                column: j + 1,
                message: format!("non-finite value {}", row[j]),
            });
        }
        self.values.extend_from_slice(row);
        self.len += 1;
        Ok(())
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Time stamp of 1-based sample `n`.
    pub fn time_of(&self, n: usize) -> f64 {
        (n as f64 - 1.0) * self.period
    }

    /// Column `j` (0-based) as an owned vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len).map(|i| self.values[i * self.dim + j]).collect()
    }

    /// Inclusive 1-based view `[lo, hi]`.
    pub fn segment(&self, lo: usize, hi: usize) -> Result<SeriesSegment<'_>> {
        SeriesSegment::new(self, lo, hi)
    }

    pub fn full(&self) -> SeriesSegment<'_> {
        SeriesSegment {
            parent: self,
            lo: 1,
            hi: self.len,
        }
    }

    /// Writes `t,x1..xd` CSV. Values use the shortest representation that
    /// parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.len {
            let mut rec = vec![self.time_of(i + 1).to_string()];
            rec.extend(self.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }
}

impl Samples for TimeSeries {
    fn len(&self) -> usize {
        self.len
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Inclusive 1-based window `[lo, hi]` of a parent series.
#[derive(Debug, Clone, Copy)]
pub struct SeriesSegment<'a> {
    parent: &'a TimeSeries,
    lo: usize,
    hi: usize,
}

impl<'a> SeriesSegment<'a> {
    pub fn new(parent: &'a TimeSeries, lo: usize, hi: usize) -> Result<Self> {
        if lo < 1 || lo > hi || hi > parent.len {
            return Err(Error::invalid(format!(
                "segment [{lo}, {hi}] outside 1..={}",
                parent.len
            )));
        }
        Ok(Self { parent, lo, hi })
    }

    pub fn lo(&self) -> usize {
        self.lo
    }

    pub fn hi(&self) -> usize {
        self.hi
    }

    pub fn parent(&self) -> &'a TimeSeries {
        self.parent
    }

    /// Narrows to `[lo, hi]` given in parent coordinates.
    pub fn sub(&self, lo: usize, hi: usize) -> Result<SeriesSegment<'a>> {
        if lo < self.lo || hi > self.hi {
            return Err(Error::invalid(format!(
                "[{lo}, {hi}] not inside [{}, {}]",
                self.lo, self.hi
            )));
        }
        SeriesSegment::new(self.parent, lo, hi)
    }
}

impl Samples for SeriesSegment<'_> {
    fn len(&self) -> usize {
        self.hi - self.lo + 1
    }
    fn dim(&self) -> usize {
        self.parent.dim
    }
    fn row(&self, i: usize) -> &[f64] {
        self.parent.row(self.lo - 1 + i)
    }
}

/// Per-dimension arithmetic mean.
pub fn sample_mean<S: Samples + ?Sized>(s: &S) -> Vec<f64> {
    let mut acc = vec![0.0; s.dim()];
    for i in 0..s.len() {
        for (a, v) in acc.iter_mut().zip(s.row(i)) {
            *a += v;
        }
    }
    let n = s.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Incremental CSV row decoder: comma-separated, optional header detected by
/// a non-numeric first row, selected columns only.
#[derive(Debug, Clone)]
pub struct RowDecoder {
    columns: Vec<usize>,
    seen_first: bool,
}

impl RowDecoder {
    pub fn new(columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("empty column selection"));
        }
        Ok(Self {
            columns: columns.to_vec(),
            seen_first: false,
        })
    }

    /// Decodes one record; `Ok(None)` for a header or blank line.
    pub fn decode(&mut self, record: &csv::StringRecord, line: usize) -> Result<Option<Vec<f64>>> {
        let first = !self.seen_first;
        if record.iter().all(|f| f.trim().is_empty()) {
            return Ok(None);
        }
        self.seen_first = true;
        if first && record.iter().any(|f| f.trim().parse::<f64>().is_err()) {
            return Ok(None);
        }
        let mut out = Vec::with_capacity(self.columns.len());
        for &c in &self.columns {
            let field = record.get(c).ok_or_else(|| Error::Parse {
                row: line,
                column: c + 1,
                message: "missing column".into(),
            })?;
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row: line,
                column: c + 1,
                message: format!("non-numeric value `{field}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: c + 1,
                    message: format!("non-finite value `{field}`"),
                });
            }
            out.push(v);
        }
        Ok(Some(out))
    }
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Streaming iterator over decoded sample rows.
pub struct SampleRows<R: Read> {
    reader: csv::Reader<R>,
    decoder: RowDecoder,
    record: csv::StringRecord,
}

impl<R: Read> SampleRows<R> {
    pub fn new(input: R, columns: &[usize]) -> Result<Self> {
        Ok(Self {
            reader: csv_reader(input),
            decoder: RowDecoder::new(columns)?,
            record: csv::StringRecord::new(),
        })
    }
}

impl<R: Read> Iterator for SampleRows<R> {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.reader.read_record(&mut self.record) {
                Ok(false) => return None,
                Ok(true) => {
                    let line = self.record.position().map_or(0, |p| p.line() as usize);
                    match self.decoder.decode(&self.record, line) {
                        Ok(Some(row)) => return Some(Ok(row)),
                        Ok(None) => continue,
                        Err(e) => return Some(Err(e)),
                    }
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

pub fn read_csv<R: Read>(input: R, columns: &[usize]) -> Result<TimeSeries> {
    let rows = SampleRows::new(input, columns)?.collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::invalid("no data rows"));
    }
    TimeSeries::from_rows(&rows)
}

/// Loads selected 0-based columns of a CSV file.
pub fn load_csv(path: impl AsRef<Path>, columns: &[usize]) -> Result<TimeSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(read_csv(file, columns)?.with_label(path.display().to_string()))
}
