use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, PowerSeries, Result};

/// Where the timestamp and power readings live in a delimited file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSpec {
    pub timestamp_column: usize,
    pub power_column: usize,
    pub delimiter: char,
    pub has_header: bool,
    /// Native sample period in seconds; inferred as the smallest positive
    /// timestamp step when absent.
    pub period: Option<f64>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            timestamp_column: 0,
            power_column: 1,
            delimiter: ',',
            has_header: false,
            period: None,
        }
    }
}

/// Reads `(unix timestamp, watts)` rows into a series on the native grid.
///
/// Timestamps must be nondecreasing; repeated timestamps keep the last row.
/// Grid slots without a row are flagged as gaps.
pub fn ingest_csv(path: &Path, spec: &ColumnSpec) -> Result<PowerSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_csv(&text, spec).map_err(|e| match e {
        DataError::Csv { line, message, .. } => DataError::Csv {
            path: path.display().to_string(),
            line,
            message,
        },
        DataError::Empty(_) => DataError::Empty(path.display().to_string()),
        other => other,
    })
}

pub fn parse_csv(text: &str, spec: &ColumnSpec) -> Result<PowerSeries> {
    if !spec.delimiter.is_ascii() {
        return Err(DataError::Invalid(format!("delimiter {:?} is not ASCII", spec.delimiter)));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(spec.has_header)
        .delimiter(spec.delimiter as u8)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let csv_err = |line: u64, message: String| DataError::Csv {
        path: String::new(),
        line,
        message,
    };

    let mut rows: Vec<(f64, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize, what: &str| -> Result<f64> {
            let raw = record
                .get(i)
                .ok_or_else(|| csv_err(line, format!("missing {what} column {i}")))?;
            let v: f64 = raw
                .parse()
                .map_err(|_| csv_err(line, format!("cannot parse {what} {raw:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(csv_err(line, format!("non-finite {what} {raw:?}")))
            }
        };
        let ts = field(spec.timestamp_column, "timestamp")?;
        let watts = field(spec.power_column, "power")?.max(0.0);
        match rows.last_mut() {
            Some(last) if ts < last.0 => {
                return Err(csv_err(line, format!("timestamp {ts} decreases from {}", last.0)));
            }
            Some(last) if ts == last.0 => last.1 = watts,
            _ => rows.push((ts, watts)),
        }
    }
    if rows.is_empty() {
        return Err(DataError::Empty(String::new()));
    }

    let period = match spec.period {
        Some(p) => p,
        None => rows
            .windows(2)
            .map(|w| w[1].0 - w[0].0)
            .fold(f64::INFINITY, f64::min),
    };
    let period = if period.is_finite() { period } else { super::TARGET_PERIOD };
    let start = rows[0].0;
    let last = ((rows[rows.len() - 1].0 - start) / period).round() as usize;
    let mut values = vec![0.0; last + 1];
    let mut gaps = vec![true; last + 1];
    for (ts, w) in rows {
        let i = ((ts - start) / period).round() as usize;
        values[i] = w;
        gaps[i] = false;
    }
    PowerSeries::with_gaps(start, period, values, gaps)
}

/// Writes a series as `timestamp,watts` rows, skipping gap slots.
pub fn write_csv(path: &Path, s: &PowerSeries) -> Result<()> {
    let mut out = String::with_capacity(s.len() * 16);
    for (i, (&v, &gap)) in s.values.iter().zip(&s.gaps).enumerate() {
        if !gap {
            out.push_str(&format!("{},{}\n", s.time_at(i), v));
        }
    }
    std::fs::write(path, out).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}
