use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Timestamp,
}

/// Column name to column type, as read from the JSON schema file.
pub type Schema = BTreeMap<String, ColumnKind>;

pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(file)?)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(String),
    Time(NaiveDateTime),
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Typed rows read from a CSV file, with the client-partition key and the
/// regression target identified.
#[derive(Debug, Clone)]
pub struct RawTable {
    columns: Vec<Column>,
    rows: Vec<Vec<Cell>>,
    region_column: usize,
    target_column: usize,
    /// Rows dropped during ingestion.
    pub dropped_rows: usize,
}

impl RawTable {
    pub fn new(
        columns: Vec<Column>,
        rows: Vec<Vec<Cell>>,
        region_column: &str,
        target_column: &str,
    ) -> Result<Self> {
        let region = columns
            .iter()
            .position(|c| c.name == region_column)
            .ok_or_else(|| Error::Schema(format!("region column `{region_column}` not found")))?;
        if columns[region].kind != ColumnKind::Categorical {
            return Err(Error::Schema(format!(
                "region column `{region_column}` must be categorical"
            )));
        }
        let target = columns
            .iter()
            .position(|c| c.name == target_column)
            .ok_or_else(|| Error::Schema(format!("target column `{target_column}` not found")))?;
        if columns[target].kind != ColumnKind::Numeric {
            return Err(Error::Schema(format!(
                "target column `{target_column}` must be numeric"
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::Schema(format!(
                    "row {i} has {} cells, expected {}",
                    row.len(),
                    columns.len()
                )));
            }
            if !matches!(row[region], Cell::Cat(_)) {
                return Err(Error::Schema(format!("row {i} has no region")));
            }
            if !matches!(row[target], Cell::Num(v) if v.is_finite()) {
                return Err(Error::Schema(format!("row {i} has no finite target")));
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyData("table has no rows".into()));
        }
        Ok(RawTable {
            columns,
            rows,
            region_column: region,
            target_column: target,
            dropped_rows: 0,
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn region_column(&self) -> &str {
        &self.columns[self.region_column].name
    }

    pub fn target_column(&self) -> &str {
        &self.columns[self.target_column].name
    }

    pub(crate) fn region_index(&self) -> usize {
        self.region_column
    }

    pub(crate) fn target_index(&self) -> usize {
        self.target_column
    }

    pub fn region(&self, row: usize) -> &str {
        match &self.rows[row][self.region_column] {
            Cell::Cat(s) => s,
            _ => unreachable!("region validated at construction"),
        }
    }

    pub fn target(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| match r[self.target_column] {
                Cell::Num(v) => v,
                _ => unreachable!("target validated at construction"),
            })
            .collect()
    }

    /// Value of the first timestamp column in `row`, if the table has one.
    pub fn timestamp(&self, row: usize) -> Option<NaiveDateTime> {
        let col = self
            .columns
            .iter()
            .position(|c| c.kind == ColumnKind::Timestamp)?;
        match self.rows[row][col] {
            Cell::Time(t) => Some(t),
            _ => None,
        }
    }

    pub fn has_timestamp(&self) -> bool {
        self.columns.iter().any(|c| c.kind == ColumnKind::Timestamp)
    }
}

pub(crate) fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const DATETIME: &[&str] = &[
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%m/%d/%Y %H:%M",
    ];
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(s) {
        return Some(t.naive_utc());
    }
    for fmt in DATETIME {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    for fmt in ["%Y-%m-%d", "%m/%d/%Y"] {
        if let Ok(d) = NaiveDate::parse_from_str(s, fmt) {
            return d.and_hms_opt(0, 0, 0);
        }
    }
    None
}

/// Reads a CSV file into a [`RawTable`].
///
/// Only the columns named in `schema` are kept; every schema column must be
/// present in the header. Rows are dropped (and counted in
/// [`RawTable::dropped_rows`]) when the region or target is missing, when a
/// timestamp is missing or unparseable, or when a non-empty numeric cell does
/// not parse. Empty numeric and categorical feature cells become
/// [`Cell::Missing`].
pub fn ingest_csv(
    path: impl AsRef<Path>,
    schema: &Schema,
    region_column: &str,
    target_column: &str,
) -> Result<RawTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();

    let mut picked = Vec::with_capacity(schema.len());
    for (i, h) in headers.iter().enumerate() {
        if let Some(kind) = schema.get(h.trim()) {
            picked.push((i, Column { name: h.trim().to_string(), kind: *kind }));
        }
    }
    let missing: Vec<&str> = schema
        .keys()
        .filter(|k| !picked.iter().any(|(_, c)| &c.name == *k))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "header lacks schema columns: {}",
            missing.join(", ")
        )));
    }
    for (name, want) in [
        (region_column, ColumnKind::Categorical),
        (target_column, ColumnKind::Numeric),
    ] {
        match schema.get(name) {
            Some(kind) if *kind == want => {}
            Some(_) => {
                return Err(Error::Schema(format!("column `{name}` must be {want:?}")));
            }
            None => return Err(Error::Schema(format!("column `{name}` not in schema"))),
        }
    }

    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record?;
        let mut row = Vec::with_capacity(picked.len());
        let mut ok = true;
        for (i, col) in &picked {
            let raw = record.get(*i).unwrap_or("").trim();
            let required = col.name == region_column || col.name == target_column;
            let cell = if raw.is_empty() {
                if required || col.kind == ColumnKind::Timestamp {
                    ok = false;
                    break;
                }
                Cell::Missing
            } else {
                match col.kind {
                    ColumnKind::Numeric => match raw.parse::<f64>() {
                        Ok(v) if v.is_finite() => Cell::Num(v),
                        _ => {
                            ok = false;
                            break;
                        }
                    },
                    ColumnKind::Categorical => Cell::Cat(raw.to_string()),
                    ColumnKind::Timestamp => match parse_timestamp(raw) {
                        Some(t) => Cell::Time(t),
                        None => {
                            ok = false;
                            break;
                        }
                    },
                }
            };
            row.push(cell);
        }
        if ok {
            rows.push(row);
        } else {
            dropped += 1;
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyData(format!(
            "no rows of {} survived parsing",
            path.display()
        )));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} unparseable rows from {}", path.display());
    }
    let columns = picked.into_iter().map(|(_, c)| c).collect();
    let mut table = RawTable::new(columns, rows, region_column, target_column)?;
    table.dropped_rows = dropped;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn schema() -> Schema {
        [
            ("region".to_string(), ColumnKind::Categorical),
            ("price".to_string(), ColumnKind::Numeric),
            ("sales".to_string(), ColumnKind::Numeric),
        ]
        .into_iter()
        .collect()
    }

    fn write_csv(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingests_three_rows() {
        let f = write_csv("region,price,sales\nA,1.0,10\nB,2.0,20\nA,3.0,30\n");
        let t = ingest_csv(f.path(), &schema(), "region", "sales").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.dropped_rows, 0);
        assert_eq!(t.target(), vec![10.0, 20.0, 30.0]);
        assert_eq!(t.region(1), "B");
    }

    #[test]
    fn drops_row_with_empty_target() {
        let f = write_csv("region,price,sales\nA,1.0,10\nB,2.0,\nA,3.0,30\n");
        let t = ingest_csv(f.path(), &schema(), "region", "sales").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dropped_rows, 1);
    }

    #[test]
    fn quoted_fields_and_missing_feature() {
        let f = write_csv("region,price,sales\n\"Central America\",,10\n\"West, USA\",2,20\n");
        let t = ingest_csv(f.path(), &schema(), "region", "sales").unwrap();
        assert_eq!(t.region(0), "Central America");
        assert_eq!(t.region(1), "West, USA");
        assert_eq!(t.rows()[0][1], Cell::Missing);
    }

    #[test]
    fn header_mismatch_and_missing_file() {
        let f = write_csv("region,cost,sales\nA,1,2\n");
        assert!(matches!(
            ingest_csv(f.path(), &schema(), "region", "sales"),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            ingest_csv("/nonexistent/x.csv", &schema(), "region", "sales"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn zero_surviving_rows_is_an_error() {
        let f = write_csv("region,price,sales\nA,abc,1\n,1,2\n");
        assert!(matches!(
            ingest_csv(f.path(), &schema(), "region", "sales"),
            Err(Error::EmptyData(_))
        ));
    }

    #[test]
    fn timestamp_formats() {
        let t = parse_timestamp("2017-03-05T14:00").unwrap();
        assert_eq!(t.to_string(), "2017-03-05 14:00:00");
        assert!(parse_timestamp("2017-03-05T14:00:00Z").is_some());
        assert!(parse_timestamp("2017-03-05").is_some());
        assert!(parse_timestamp("1/31/2018 22:56").is_some());
        assert!(parse_timestamp("yesterday").is_none());
    }
}
