//! Presence/absence records, CSV ingestion and the in-time / out-of-time split.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stable record identifier. Fold plans, audits and thinning all speak ids.
pub type RecordId = i64;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: RecordId,
    /// Degrees east, WGS84.
    pub lon: f64,
    /// Degrees north, WGS84.
    pub lat: f64,
    pub year: i32,
    /// 0 = absence, 1 = presence.
    pub label: u8,
    pub features: Vec<f64>,
}

/// An immutable table of records sharing one feature layout.
///
/// Coordinates and year are carried beside the feature vector and never
/// enter it; learners only ever see `features`.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<Record>,
    feature_names: Vec<String>,
    index: HashMap<RecordId, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records && self.feature_names == other.feature_names
    }
}

impl Dataset {
    pub fn new(records: Vec<Record>, feature_names: Vec<String>) -> Result<Self> {
        let width = feature_names.len();
        let mut index = HashMap::with_capacity(records.len());
        for (pos, r) in records.iter().enumerate() {
            if r.features.len() != width {
                return Err(Error::InvalidDataset(format!(
                    "record {} has {} features, expected {width}",
                    r.id,
                    r.features.len()
                )));
            }
            if !(-180.0..=180.0).contains(&r.lon) || !(-90.0..=90.0).contains(&r.lat) {
                return Err(Error::InvalidDataset(format!(
                    "record {} has coordinates ({}, {}) out of range",
                    r.id, r.lon, r.lat
                )));
            }
            if r.label > 1 {
                return Err(Error::InvalidDataset(format!("record {} has label {}", r.id, r.label)));
            }
            if index.insert(r.id, pos).is_some() {
                return Err(Error::InvalidDataset(format!("duplicate id {}", r.id)));
            }
        }
        Ok(Dataset {
            records,
            feature_names,
            index,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<RecordId> {
        self.records.iter().map(|r| r.id).collect()
    }

    pub fn position(&self, id: RecordId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn get(&self, id: RecordId) -> Option<&Record> {
        self.position(id).map(|p| &self.records[p])
    }

    /// Positions of `ids`, failing on the first unknown id.
    pub fn positions(&self, ids: &[RecordId]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|&id| {
                self.position(id)
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown record id {id}")))
            })
            .collect()
    }

    /// A new dataset holding the listed records in the order given.
    pub fn subset(&self, ids: &[RecordId]) -> Result<Self> {
        let records = self
            .positions(ids)?
            .into_iter()
            .map(|p| self.records[p].clone())
            .collect();
        Dataset::new(records, self.feature_names.clone())
    }

    /// Records satisfying `keep`, order preserved.
    pub fn filter(&self, keep: impl Fn(&Record) -> bool) -> Self {
        let records: Vec<Record> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        // Invariants already hold for every record of `self`.
        Dataset::new(records, self.feature_names.clone()).expect("subset of a valid dataset")
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// Bounding box as `(min_lon, min_lat, max_lon, max_lat)`.
    pub fn bbox(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.records.first()?;
        let mut b = (first.lon, first.lat, first.lon, first.lat);
        for r in &self.records[1..] {
            b.0 = b.0.min(r.lon);
            b.1 = b.1.min(r.lat);
            b.2 = b.2.max(r.lon);
            b.3 = b.3.max(r.lat);
        }
        Some(b)
    }

    /// Write `id,lon,lat,year,label,<features...>` with a header row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let csv_err = |e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        };
        let mut header = vec!["id", "lon", "lat", "year", "label"];
        header.extend(self.feature_names.iter().map(String::as_str));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.records {
            let mut row = vec![
                r.id.to_string(),
                r.lon.to_string(),
                r.lat.to_string(),
                r.year.to_string(),
                r.label.to_string(),
            ];
            row.extend(r.features.iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Which CSV columns feed which record fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    /// Id column; when absent the 1-based data row number is used.
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default = "default_lon")]
    pub lon: String,
    #[serde(default = "default_lat")]
    pub lat: String,
    #[serde(default = "default_year")]
    pub year: String,
    #[serde(default = "default_label")]
    pub label: String,
    pub features: Vec<String>,
}

fn default_lon() -> String {
    "lon".into()
}
fn default_lat() -> String {
    "lat".into()
}
fn default_year() -> String {
    "year".into()
}
fn default_label() -> String {
    "label".into()
}

impl CsvSchema {
    pub fn with_features<S: Into<String>>(features: impl IntoIterator<Item = S>) -> Self {
        CsvSchema {
            id: None,
            lon: default_lon(),
            lat: default_lat(),
            year: default_year(),
            label: default_label(),
            features: features.into_iter().map(Into::into).collect(),
        }
    }

    /// Schema matching the layout produced by [`Dataset::write_csv`].
    pub fn for_dataset(d: &Dataset) -> Self {
        let mut s = CsvSchema::with_features(d.feature_names().iter().cloned());
        s.id = Some("id".into());
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub dropped_missing: usize,
    pub dropped_out_of_range: usize,
}

impl IngestSummary {
    pub fn rows_dropped(&self) -> usize {
        self.dropped_missing + self.dropped_out_of_range
    }
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rows_read={} rows_kept={} rows_dropped={} missing_value={} coordinate_out_of_range={}",
            self.rows_read,
            self.rows_kept,
            self.rows_dropped(),
            self.dropped_missing,
            self.dropped_out_of_range
        )
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "na" | "N/A" | "NaN" | "nan" | "null" | "NULL")
}

fn parse_label(cell: &str) -> Option<u8> {
    match cell.trim() {
        "0" | "0.0" | "false" | "FALSE" => Some(0),
        "1" | "1.0" | "true" | "TRUE" => Some(1),
        _ => None,
    }
}

/// Load a comma-separated, header-first UTF-8 file.
///
/// Rows with a missing mapped cell (empty, `NA`, `NaN`, `null`) and rows whose
/// coordinates fall outside WGS84 bounds are dropped and counted. A label
/// other than 0/1 or a non-numeric mapped cell is a hard error.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<(Dataset, IngestSummary)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(std::io::BufReader::new(file));
    let headers = reader.headers().map_err(csv_err)?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = schema.id.as_deref().map(column).transpose()?;
    let lon_col = column(&schema.lon)?;
    let lat_col = column(&schema.lat)?;
    let year_col = column(&schema.year)?;
    let label_col = column(&schema.label)?;
    let feature_cols = schema.features.iter().map(|f| column(f)).collect::<Result<Vec<_>>>()?;

    let mut summary = IngestSummary::default();
    let mut records = Vec::new();
    for (row_index, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err)?;
        summary.rows_read += 1;
        let line = row.position().map_or(row_index as u64 + 2, |p| p.line());
        let mut mapped: Vec<usize> = vec![lon_col, lat_col, year_col, label_col];
        mapped.extend(&feature_cols);
        mapped.extend(id_col);
        if mapped.iter().any(|&c| row.get(c).is_none_or(is_missing)) {
            summary.dropped_missing += 1;
            continue;
        }
        let number = |c: usize, name: &str| -> Result<f64> {
            let cell = &row[c];
            cell.parse::<f64>().map_err(|_| Error::Unparseable {
                line,
                column: name.to_string(),
                value: cell.to_string(),
            })
        };
        let label = parse_label(&row[label_col]).ok_or_else(|| Error::NonBinaryLabel {
            line,
            column: schema.label.clone(),
            value: row[label_col].to_string(),
        })?;
        let lon = number(lon_col, &schema.lon)?;
        let lat = number(lat_col, &schema.lat)?;
        let year = number(year_col, &schema.year)?;
        if year.fract() != 0.0 || !year.is_finite() {
            return Err(Error::Unparseable {
                line,
                column: schema.year.clone(),
                value: row[year_col].to_string(),
            });
        }
        let id = match (id_col, &schema.id) {
            (Some(c), Some(name)) => {
                let v = number(c, name)?;
                if v.fract() != 0.0 {
                    return Err(Error::Unparseable {
                        line,
                        column: name.clone(),
                        value: row[c].to_string(),
                    });
                }
                v as RecordId
            }
            _ => row_index as RecordId + 1,
        };
        let features = feature_cols
            .iter()
            .zip(&schema.features)
            .map(|(&c, name)| number(c, name))
            .collect::<Result<Vec<_>>>()?;
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            summary.dropped_out_of_range += 1;
            continue;
        }
        records.push(Record {
            id,
            lon,
            lat,
            year: year as i32,
            label,
            features,
        });
    }
    summary.rows_kept = records.len();
    log::info!("ingest path={} {summary}", path.display());
    if records.is_empty() {
        return Err(Error::NoUsableRows);
    }
    let d = Dataset::new(records, schema.features.clone())?;
    Ok((d, summary))
}

/// Inclusive calendar-year range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "[i32; 2]", into = "[i32; 2]")]
pub struct YearRange {
    pub first: i32,
    pub last: i32,
}

impl YearRange {
    pub fn new(first: i32, last: i32) -> Result<Self> {
        if first > last {
            return Err(Error::InvalidArgument(format!("year range {first}-{last} is empty")));
        }
        Ok(YearRange { first, last })
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.first..=self.last).contains(&year)
    }

    pub fn overlaps(&self, other: &YearRange) -> bool {
        self.first <= other.last && other.first <= self.last
    }
}

impl TryFrom<[i32; 2]> for YearRange {
    type Error = Error;
    fn try_from(v: [i32; 2]) -> Result<Self> {
        YearRange::new(v[0], v[1])
    }
}

impl From<YearRange> for [i32; 2] {
    fn from(r: YearRange) -> Self {
        [r.first, r.last]
    }
}

impl fmt::Display for YearRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.first, self.last)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalSplitSpec {
    pub train_years: YearRange,
    pub test_years: YearRange,
}

impl TemporalSplitSpec {
    pub fn new(train_years: YearRange, test_years: YearRange) -> Result<Self> {
        if train_years.overlaps(&test_years) {
            return Err(Error::InvalidArgument(format!(
                "train years {train_years} overlap test years {test_years}"
            )));
        }
        Ok(TemporalSplitSpec {
            train_years,
            test_years,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TemporalSplit {
    pub in_time: Dataset,
    pub out_of_time: Dataset,
    /// Records whose year lies in neither range.
    pub dropped: usize,
}

/// Partition by year into in-time (training/validation) and out-of-time (test) data.
pub fn temporal_split(d: &Dataset, spec: &TemporalSplitSpec) -> Result<TemporalSplit> {
    if spec.train_years.overlaps(&spec.test_years) {
        return Err(Error::InvalidArgument("train and test years overlap".into()));
    }
    let in_time = d.filter(|r| spec.train_years.contains(r.year));
    let out_of_time = d.filter(|r| spec.test_years.contains(r.year));
    let dropped = d.len() - in_time.len() - out_of_time.len();
    if dropped > 0 {
        log::warn!("temporal split dropped {dropped} records outside both year ranges");
    }
    if in_time.is_empty() {
        return Err(Error::EmptySplit("in-time"));
    }
    if out_of_time.is_empty() {
        return Err(Error::EmptySplit("out-of-time"));
    }
    Ok(TemporalSplit {
        in_time,
        out_of_time,
        dropped,
    })
}

/// `(n_presence, n_absence)`.
pub fn class_counts(d: &Dataset) -> (usize, usize) {
    count_labels(d.records().iter().map(|r| r.label))
}

pub(crate) fn count_labels(labels: impl IntoIterator<Item = u8>) -> (usize, usize) {
    labels
        .into_iter()
        .fold((0, 0), |(p, a), l| if l == 1 { (p + 1, a) } else { (p, a + 1) })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn record(id: RecordId, lon: f64, lat: f64, year: i32, label: u8, features: Vec<f64>) -> Record {
        Record {
            id,
            lon,
            lat,
            year,
            label,
            features,
        }
    }

    pub fn labelled(labels: &[u8]) -> Dataset {
        let records = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| record(i as RecordId, 0.0, 0.0, 2000, l, vec![i as f64]))
            .collect();
        Dataset::new(records, vec!["x".into()]).unwrap()
    }
}
