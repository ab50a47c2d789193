//! CSV ingestion with light preprocessing: missing cells become `0.0` and
//! non-numeric feature columns are label-encoded by order of first
//! appearance. The fitted encoders can be replayed on later files, where an
//! unseen category maps to [`UNSEEN_CODE`].

use std::collections::HashSet;
use std::io::Read;
use std::path::PathBuf;

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Ordinal assigned to categories never seen while fitting.
pub const UNSEEN_CODE: f64 = -1.0;

const MISSING: &[&str] = &["", "?", "NA", "N/A", "NaN", "nan", "null", "NULL"];

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Open {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("label column {0} not found")]
    MissingLabelColumn(String),
    #[error("row {row}: label is missing")]
    MissingLabel { row: usize },
    #[error("row {row}: label {value:?} is not binary")]
    NonBinaryLabel { row: usize, value: String },
    #[error("file has {got} feature columns, encoders expect {expected}")]
    Width { expected: usize, got: usize },
    #[error("no feature columns")]
    NoFeatures,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// A bare integer is a column index; anything else is a header name.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

#[derive(Debug, Clone)]
pub struct DatasetFile {
    pub path: PathBuf,
    pub has_header: bool,
    pub label: Option<LabelColumn>,
    pub delimiter: u8,
}

impl DatasetFile {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        DatasetFile {
            path: path.into(),
            has_header: true,
            label: None,
            delimiter: b',',
        }
    }

    pub fn with_label(mut self, label: LabelColumn) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnEncoder {
    Numeric,
    Categorical { codes: IndexMap<String, usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelEncoder {
    /// Values parse as 0 or 1.
    Numeric,
    /// Up to two strings, coded by first appearance.
    Categorical { codes: IndexMap<String, u8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoders {
    pub feature_names: Vec<String>,
    pub columns: Vec<ColumnEncoder>,
    pub label_name: Option<String>,
    pub label: Option<LabelEncoder>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    /// Present when a label column was requested.
    pub y: Option<Vec<u8>>,
    pub encoders: Encoders,
}

fn is_missing(cell: &str) -> bool {
    MISSING.contains(&cell)
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table<R: Read>(reader: R, has_header: bool, delimiter: u8) -> Result<Table, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let mut header = None;
    let mut rows = Vec::new();
    let mut width = None;
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let fields: Vec<String> = record.iter().map(str::to_string).collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(IngestError::Ragged {
                    line,
                    expected: w,
                    found: fields.len(),
                })
            }
            _ => {}
        }
        if has_header && header.is_none() {
            header = Some(fields);
        } else {
            rows.push(fields);
        }
    }
    let width = width.unwrap_or(0);
    let header = header.unwrap_or_else(|| (0..width).map(|i| format!("c{i}")).collect());
    Ok(Table { header, rows })
}

fn label_index(header: &[String], label: &LabelColumn) -> Result<usize, IngestError> {
    match label {
        LabelColumn::Index(i) if *i < header.len() => Ok(*i),
        LabelColumn::Index(i) => Err(IngestError::MissingLabelColumn(i.to_string())),
        LabelColumn::Name(name) => header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingLabelColumn(name.clone())),
    }
}

fn fit_label(rows: &[Vec<String>], col: usize) -> Result<(LabelEncoder, Vec<u8>), IngestError> {
    for (row, r) in rows.iter().enumerate() {
        if is_missing(&r[col]) {
            return Err(IngestError::MissingLabel { row });
        }
    }
    if rows.iter().all(|r| parse_number(&r[col]).is_some()) {
        let y = rows
            .iter()
            .enumerate()
            .map(|(row, r)| numeric_label(&r[col], row))
            .collect::<Result<_, _>>()?;
        return Ok((LabelEncoder::Numeric, y));
    }
    let mut codes: IndexMap<String, u8> = IndexMap::new();
    let mut y = Vec::with_capacity(rows.len());
    for (row, r) in rows.iter().enumerate() {
        let next = codes.len();
        let code = *codes.entry(r[col].clone()).or_insert(next as u8);
        if codes.len() > 2 {
            return Err(IngestError::NonBinaryLabel {
                row,
                value: r[col].clone(),
            });
        }
        y.push(code);
    }
    Ok((LabelEncoder::Categorical { codes }, y))
}

fn numeric_label(cell: &str, row: usize) -> Result<u8, IngestError> {
    match parse_number(cell) {
        Some(v) if v == 0.0 => Ok(0),
        Some(v) if v == 1.0 => Ok(1),
        _ => Err(IngestError::NonBinaryLabel {
            row,
            value: cell.to_string(),
        }),
    }
}

fn apply_label(
    enc: &LabelEncoder,
    rows: &[Vec<String>],
    col: usize,
) -> Result<Vec<u8>, IngestError> {
    rows.iter()
        .enumerate()
        .map(|(row, r)| {
            let cell = &r[col];
            if is_missing(cell) {
                return Err(IngestError::MissingLabel { row });
            }
            match enc {
                LabelEncoder::Numeric => numeric_label(cell, row),
                LabelEncoder::Categorical { codes } => {
                    codes
                        .get(cell)
                        .copied()
                        .ok_or_else(|| IngestError::NonBinaryLabel {
                            row,
                            value: cell.clone(),
                        })
                }
            }
        })
        .collect()
}

/// Fits encoders on the file and returns the encoded table.
pub fn ingest_csv(file: &DatasetFile) -> Result<Dataset, IngestError> {
    let f = open(file)?;
    ingest_reader(f, file.has_header, file.label.as_ref(), file.delimiter)
}

/// Encodes a file with previously fitted encoders.
pub fn ingest_csv_with(file: &DatasetFile, encoders: &Encoders) -> Result<Dataset, IngestError> {
    let f = open(file)?;
    ingest_reader_with(f, file.has_header, file.label.as_ref(), file.delimiter, encoders)
}

fn open(file: &DatasetFile) -> Result<std::fs::File, IngestError> {
    std::fs::File::open(&file.path).map_err(|source| IngestError::Open {
        path: file.path.display().to_string(),
        source,
    })
}

pub fn ingest_reader<R: Read>(
    reader: R,
    has_header: bool,
    label: Option<&LabelColumn>,
    delimiter: u8,
) -> Result<Dataset, IngestError> {
    let table = read_table(reader, has_header, delimiter)?;
    let label_col = label.map(|l| label_index(&table.header, l)).transpose()?;
    let feature_cols: Vec<usize> = (0..table.header.len())
        .filter(|&c| Some(c) != label_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(IngestError::NoFeatures);
    }

    let columns: Vec<ColumnEncoder> = feature_cols
        .iter()
        .map(|&c| {
            let numeric = table
                .rows
                .iter()
                .all(|r| is_missing(&r[c]) || parse_number(&r[c]).is_some());
            if numeric {
                ColumnEncoder::Numeric
            } else {
                let mut codes = IndexMap::new();
                for r in &table.rows {
                    if !is_missing(&r[c]) {
                        let next = codes.len();
                        codes.entry(r[c].clone()).or_insert(next);
                    }
                }
                ColumnEncoder::Categorical { codes }
            }
        })
        .collect();

    let (label_enc, y) = match label_col {
        Some(c) => {
            let (enc, y) = fit_label(&table.rows, c)?;
            (Some(enc), Some(y))
        }
        None => (None, None),
    };

    let encoders = Encoders {
        feature_names: feature_cols.iter().map(|&c| table.header[c].clone()).collect(),
        columns,
        label_name: label_col.map(|c| table.header[c].clone()),
        label: label_enc,
    };
    let x = encode_features(&table.rows, &feature_cols, &encoders.columns);
    Ok(Dataset { x, y, encoders })
}

pub fn ingest_reader_with<R: Read>(
    reader: R,
    has_header: bool,
    label: Option<&LabelColumn>,
    delimiter: u8,
    encoders: &Encoders,
) -> Result<Dataset, IngestError> {
    let table = read_table(reader, has_header, delimiter)?;
    let label_col = label.map(|l| label_index(&table.header, l)).transpose()?;
    let feature_cols: Vec<usize> = (0..table.header.len())
        .filter(|&c| Some(c) != label_col)
        .collect();
    if feature_cols.len() != encoders.columns.len() {
        return Err(IngestError::Width {
            expected: encoders.columns.len(),
            got: feature_cols.len(),
        });
    }
    let y = match (label_col, &encoders.label) {
        (Some(c), Some(enc)) => Some(apply_label(enc, &table.rows, c)?),
        (Some(c), None) => Some(fit_label(&table.rows, c)?.1),
        (None, _) => None,
    };
    let x = encode_features(&table.rows, &feature_cols, &encoders.columns);
    Ok(Dataset {
        x,
        y,
        encoders: encoders.clone(),
    })
}

fn encode_features(rows: &[Vec<String>], cols: &[usize], encoders: &[ColumnEncoder]) -> Array2<f64> {
    let mut x = Array2::zeros((rows.len(), cols.len()));
    let mut warned: HashSet<usize> = HashSet::new();
    for (i, r) in rows.iter().enumerate() {
        for (j, (&c, enc)) in cols.iter().zip(encoders).enumerate() {
            let cell = &r[c];
            if is_missing(cell) {
                continue;
            }
            x[[i, j]] = match enc {
                ColumnEncoder::Numeric => parse_number(cell).unwrap_or_else(|| {
                    if warned.insert(j) {
                        log::warn!("column {j}: non-numeric value {cell:?} treated as missing");
                    }
                    0.0
                }),
                ColumnEncoder::Categorical { codes } => match codes.get(cell) {
                    Some(&code) => code as f64,
                    None => {
                        if warned.insert(j) {
                            log::warn!("column {j}: unseen category {cell:?} encoded as -1");
                        }
                        UNSEEN_CODE
                    }
                },
            };
        }
    }
    x
}
