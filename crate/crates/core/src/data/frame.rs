use std::fs::File;
use std::ops::Range;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellFlag {
    Valid,
    Missing,
    Outlier,
}

impl CellFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            CellFlag::Valid => "valid",
            CellFlag::Missing => "missing",
            CellFlag::Outlier => "outlier",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    /// `NaN` wherever the flag is `Missing`.
    pub values: Vec<f64>,
    pub flags: Vec<CellFlag>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        let flags = values
            .iter()
            .map(|v| if v.is_finite() { CellFlag::Valid } else { CellFlag::Missing })
            .collect();
        Self {
            name: name.into(),
            values,
            flags,
        }
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.flags)
            .filter(|(_, f)| **f == CellFlag::Valid)
            .map(|(v, _)| *v)
    }
}

/// Timestamped multivariate series with a validity flag per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesFrame {
    time_column: String,
    timestamps: Vec<NaiveDateTime>,
    columns: Vec<Column>,
}

impl TimeSeriesFrame {
    pub fn new(
        time_column: impl Into<String>,
        timestamps: Vec<NaiveDateTime>,
        columns: Vec<Column>,
    ) -> Result<Self> {
        let n = timestamps.len();
        for c in &columns {
            if c.values.len() != n || c.flags.len() != n {
                return Err(Error::Shape(format!(
                    "column {:?} has {} cells, timestamps have {n}",
                    c.name,
                    c.values.len()
                )));
            }
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::NonMonotoneTimestamp {
                    row: i + 1,
                    timestamp: format_timestamp(&w[1]),
                });
            }
        }
        let mut names: Vec<&str> = columns.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::MalformedHeader(format!("duplicate column {:?}", w[0])));
        }
        Ok(Self {
            time_column: time_column.into(),
            timestamps,
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn time_column(&self) -> &str {
        &self.time_column
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub(crate) fn columns_mut(&mut self) -> &mut [Column] {
        &mut self.columns
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    /// True when no cell is flagged missing or outlier.
    pub fn is_clean(&self) -> bool {
        self.columns
            .iter()
            .all(|c| c.flags.iter().all(|f| *f == CellFlag::Valid))
    }

    /// Keep only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let columns = names
            .iter()
            .map(|n| self.column(n).cloned())
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.time_column.clone(), self.timestamps.clone(), columns)
    }

    pub fn slice_rows(&self, rows: Range<usize>) -> Result<Self> {
        if rows.start > rows.end || rows.end > self.len() {
            return Err(Error::InvalidArgument(format!(
                "row range {rows:?} out of bounds for {} rows",
                self.len()
            )));
        }
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                values: c.values[rows.clone()].to_vec(),
                flags: c.flags[rows.clone()].to_vec(),
            })
            .collect();
        Self::new(
            self.time_column.clone(),
            self.timestamps[rows].to_vec(),
            columns,
        )
    }

    pub(crate) fn take_rows(&self, idx: &[usize]) -> Self {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                values: idx.iter().map(|&i| c.values[i]).collect(),
                flags: idx.iter().map(|&i| c.flags[i]).collect(),
            })
            .collect();
        Self {
            time_column: self.time_column.clone(),
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            columns,
        }
    }
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Read a sensor CSV: a timestamp column followed by numeric columns.
///
/// Empty or unparseable cells are kept as `NaN` and flagged missing. When
/// `schema` is given the value-column names must match it exactly.
pub fn load_csv(path: &Path, schema: Option<&[String]>) -> Result<TimeSeriesFrame> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?);
    let header = reader.headers()?.clone();
    if header.len() < 2 {
        return Err(Error::MalformedHeader(format!(
            "expected a timestamp column and at least one value column, got {} field(s)",
            header.len()
        )));
    }
    if header.iter().any(str::is_empty) {
        return Err(Error::MalformedHeader("empty column name".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if let Some(schema) = schema {
        if schema != names.as_slice() {
            return Err(Error::MalformedHeader(format!(
                "columns {names:?} do not match expected {schema:?}"
            )));
        }
    }

    let mut timestamps = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = i + 2;
        let raw_ts = record.get(0).unwrap_or_default();
        let ts = parse_timestamp(raw_ts).ok_or_else(|| Error::BadTimestamp {
            row: line,
            value: raw_ts.to_string(),
        })?;
        if let Some(prev) = timestamps.last() {
            if ts <= *prev {
                return Err(Error::NonMonotoneTimestamp {
                    row: line,
                    timestamp: raw_ts.to_string(),
                });
            }
        }
        timestamps.push(ts);
        for (j, col) in values.iter_mut().enumerate() {
            let cell = record.get(j + 1).unwrap_or_default();
            col.push(cell.parse::<f64>().ok().filter(|v| v.is_finite()).unwrap_or(f64::NAN));
        }
    }
    let columns = names
        .into_iter()
        .zip(values)
        .map(|(n, v)| Column::new(n, v))
        .collect();
    TimeSeriesFrame::new(header.get(0).unwrap(), timestamps, columns)
}

/// Write the frame in the input CSV schema; missing cells become empty strings.
///
/// With `with_flags`, a `<name>_flag` column follows every value column.
pub fn write_csv(frame: &TimeSeriesFrame, path: &Path, with_flags: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![frame.time_column().to_string()];
    for c in frame.columns() {
        header.push(c.name.clone());
        if with_flags {
            header.push(format!("{}_flag", c.name));
        }
    }
    w.write_record(&header)?;
    for (i, ts) in frame.timestamps().iter().enumerate() {
        let mut row = vec![format_timestamp(ts)];
        for c in frame.columns() {
            let v = c.values[i];
            row.push(if c.flags[i] == CellFlag::Missing || !v.is_finite() {
                String::new()
            } else {
                v.to_string()
            });
            if with_flags {
                row.push(c.flags[i].as_str().to_string());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_timestamp_forms() {
        let want = NaiveDate::from_ymd_opt(2021, 3, 4)
            .unwrap()
            .and_hms_opt(5, 30, 0)
            .unwrap();
        for s in [
            "2021-03-04T05:30:00",
            "2021-03-04 05:30:00",
            "2021-03-04T05:30",
            "2021-03-04T05:30:00Z",
            "2021-03-04T07:30:00+02:00",
        ] {
            assert_eq!(parse_timestamp(s), Some(want), "{s}");
        }
        assert!(parse_timestamp("yesterday").is_none());
    }
}
