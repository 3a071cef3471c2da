//! Tabular datasets: named columns, typed cell values, JSONL and CSV persistence.
//!
//! A [`Dataset`] is immutable once built. Every operation that changes it
//! returns a new dataset. Rows always carry every column; a missing value is an
//! explicit [`Value::Null`], which is written as JSON `null`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::Value as Json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: malformed JSON object: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: column `{column}` holds an unsupported value (expected string, integer, list of strings or null)")]
    UnsupportedValue { line: usize, column: String },
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` cannot be written to CSV because it holds a list value")]
    ListInCsv(String),
    #[error("row {row}: value `{value}` has no entry in the label mapping")]
    UnmappedValue { value: String, row: usize },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column names must be non-empty")]
    EmptyColumnName,
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("label mapping is not injective: `{first}` and `{second}` both map to `{label}`")]
    NonInjective {
        first: String,
        second: String,
        label: String,
    },
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// One cell of a dataset.
///
/// `Label` and `TagList` are semantic refinements of `Text` and `TextList`.
/// They serialize identically, and equality compares the underlying data, so a
/// dataset compares equal to itself after a save/load round-trip.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Text(String),
    Label(String),
    Integer(i64),
    TextList(Vec<String>),
    TagList(Vec<String>),
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        use Value::*;
        match (self, other) {
            (Null, Null) => true,
            (Text(a) | Label(a), Text(b) | Label(b)) => a == b,
            (Integer(a), Integer(b)) => a == b,
            (TextList(a) | TagList(a), TextList(b) | TagList(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl Value {
    pub fn text(s: impl Into<String>) -> Self {
        Value::Text(s.into())
    }

    pub fn label(s: impl Into<String>) -> Self {
        Value::Label(s.into())
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) | Value::Label(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[String]> {
        match self {
            Value::TextList(v) | Value::TagList(v) => Some(v),
            _ => None,
        }
    }

    /// Flat string form used in prompts and as a class key. Integers are
    /// stringified, lists are joined by a single space, null has no rendering.
    pub fn render(&self) -> Option<String> {
        match self {
            Value::Null => None,
            Value::Text(s) | Value::Label(s) => Some(s.clone()),
            Value::Integer(i) => Some(i.to_string()),
            Value::TextList(v) | Value::TagList(v) => Some(v.join(" ")),
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::Null => Json::Null,
            Value::Text(s) | Value::Label(s) => Json::String(s.clone()),
            Value::Integer(i) => Json::from(*i),
            Value::TextList(v) | Value::TagList(v) => {
                Json::Array(v.iter().cloned().map(Json::String).collect())
            }
        }
    }

    /// Inverse of [`Value::to_json`]; `None` for JSON shapes a cell cannot hold.
    pub fn from_json(json: &Json) -> Option<Self> {
        match json {
            Json::Null => Some(Value::Null),
            Json::String(s) => Some(Value::Text(s.clone())),
            Json::Number(n) => n.as_i64().map(Value::Integer),
            Json::Array(items) => items
                .iter()
                .map(|item| item.as_str().map(str::to_owned))
                .collect::<Option<Vec<_>>>()
                .map(Value::TextList),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.render() {
            Some(s) => f.write_str(&s),
            None => f.write_str("null"),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_owned())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Integer(i)
    }
}

/// A single row: column name to value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Record(BTreeMap<String, Value>);

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, column: &str) -> Option<&Value> {
        self.0.get(column)
    }

    pub fn insert(&mut self, column: impl Into<String>, value: impl Into<Value>) -> Option<Value> {
        self.0.insert(column.into(), value.into())
    }

    pub fn remove(&mut self, column: &str) -> Option<Value> {
        self.0.remove(column)
    }

    pub fn contains(&self, column: &str) -> bool {
        self.0.contains_key(column)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn columns(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

impl<K: Into<String>, V: Into<Value>> FromIterator<(K, V)> for Record {
    fn from_iter<T: IntoIterator<Item = (K, V)>>(iter: T) -> Self {
        Record(
            iter.into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }
}

/// Ordered columns plus rows. Provenance is informational and ignored by equality.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    columns: Vec<String>,
    rows: Vec<Record>,
    provenance: Option<String>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.columns == other.columns && self.rows == other.rows
    }
}

impl Eq for Dataset {}

impl Dataset {
    /// Builds a dataset, filling absent cells with `Null`.
    ///
    /// Fails if a column name is empty or repeated, or if a row carries a
    /// column not listed in `columns`.
    pub fn new(columns: Vec<String>, rows: Vec<Record>) -> Result<Self> {
        validate_columns(&columns)?;
        let rows = rows
            .into_iter()
            .map(|row| normalize_row(&columns, row))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            columns,
            rows,
            provenance: None,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = Some(provenance.into());
        self
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn has_column(&self, column: &str) -> bool {
        self.columns.iter().any(|c| c == column)
    }

    pub fn column_values<'a>(&'a self, column: &'a str) -> Result<impl Iterator<Item = &'a Value> + 'a> {
        if !self.has_column(column) {
            return Err(DatasetError::UnknownColumn(column.to_owned()));
        }
        Ok(self.rows.iter().map(move |r| r.get(column).unwrap_or(&Value::Null)))
    }

    /// Keeps only rows for which `keep` returns true.
    pub fn filter_rows(&self, mut keep: impl FnMut(&Record) -> bool) -> Dataset {
        Dataset {
            columns: self.columns.clone(),
            rows: self.rows.iter().filter(|r| keep(r)).cloned().collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Projection onto `keep`, in the order given, preserving row order.
    pub fn split_columns<S: AsRef<str>>(&self, keep: &[S]) -> Result<Dataset> {
        let mut columns = Vec::with_capacity(keep.len());
        for name in keep {
            let name = name.as_ref();
            if !self.has_column(name) {
                return Err(DatasetError::UnknownColumn(name.to_owned()));
            }
            if columns.iter().any(|c| c == name) {
                return Err(DatasetError::DuplicateColumn(name.to_owned()));
            }
            columns.push(name.to_owned());
        }
        let rows = self
            .rows
            .iter()
            .map(|row| {
                columns
                    .iter()
                    .map(|c| (c.clone(), row.get(c).cloned().unwrap_or(Value::Null)))
                    .collect()
            })
            .collect();
        Ok(Dataset {
            columns,
            rows,
            provenance: self.provenance.clone(),
        })
    }

    /// Replaces the verbalizer's column with natural-language labels.
    pub fn verbalize(&self, verbalizer: &LabelVerbalizer) -> Result<Dataset> {
        let column = verbalizer.column();
        if !self.has_column(column) {
            return Err(DatasetError::UnknownColumn(column.to_owned()));
        }
        let mut rows = Vec::with_capacity(self.rows.len());
        for (idx, row) in self.rows.iter().enumerate() {
            let raw = row.get(column).unwrap_or(&Value::Null);
            let label = verbalizer.lookup(raw).ok_or_else(|| DatasetError::UnmappedValue {
                value: raw.to_string(),
                row: idx,
            })?;
            let mut row = row.clone();
            row.insert(column, Value::Label(label.to_owned()));
            rows.push(row);
        }
        Ok(Dataset {
            columns: self.columns.clone(),
            rows,
            provenance: self.provenance.clone(),
        })
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| io_err(path, source))?;
        let dataset = Self::read_jsonl(BufReader::new(file)).map_err(|e| match e {
            DatasetError::IoFailure { source, .. } => io_err(path, source),
            other => other,
        })?;
        Ok(dataset.with_provenance(path.display().to_string()))
    }

    /// Reads JSONL from any buffered reader. Blank lines are skipped; line
    /// numbers in errors are 1-based.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Dataset> {
        let mut columns: Vec<String> = Vec::new();
        let mut rows = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|source| io_err(Path::new("<reader>"), source))?;
            if line.trim().is_empty() {
                continue;
            }
            let json: Json = serde_json::from_str(&line).map_err(|e| DatasetError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
            let Json::Object(object) = json else {
                return Err(DatasetError::MalformedLine {
                    line: line_no,
                    message: "expected a JSON object".into(),
                });
            };
            let mut record = Record::new();
            for (key, value) in &object {
                if key.is_empty() {
                    return Err(DatasetError::MalformedLine {
                        line: line_no,
                        message: "empty column name".into(),
                    });
                }
                let value = Value::from_json(value).ok_or_else(|| DatasetError::UnsupportedValue {
                    line: line_no,
                    column: key.clone(),
                })?;
                if !columns.iter().any(|c| c == key) {
                    columns.push(key.clone());
                }
                record.insert(key.clone(), value);
            }
            rows.push(record);
        }
        Dataset::new(columns, rows)
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|source| io_err(path, source))?;
        let mut out = BufWriter::new(file);
        self.write_jsonl(&mut out)
            .and_then(|_| out.flush())
            .map_err(|source| io_err(path, source))
    }

    /// One JSON object per row, keys in column order, LF-terminated.
    pub fn write_jsonl<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for row in &self.rows {
            out.write_all(self.row_to_json_line(row).as_bytes())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("JSON output is UTF-8")
    }

    fn row_to_json_line(&self, row: &Record) -> String {
        let object: serde_json::Map<String, Json> = self
            .columns
            .iter()
            .map(|c| (c.clone(), row.get(c).unwrap_or(&Value::Null).to_json()))
            .collect();
        serde_json::to_string(&Json::Object(object)).expect("cell values always serialize")
    }

    /// Reads a CSV file with a header row. Empty fields load as `Null`,
    /// fields that parse as 64-bit integers load as `Integer`.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| io_err(path, source))?;
        let mut reader = csv::Reader::from_reader(BufReader::new(file));
        let columns: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = columns
                .iter()
                .zip(record.iter())
                .map(|(c, field)| {
                    let value = if field.is_empty() {
                        Value::Null
                    } else if let Ok(i) = field.parse::<i64>() {
                        Value::Integer(i)
                    } else {
                        Value::text(field)
                    };
                    (c.clone(), value)
                })
                .collect();
            rows.push(row);
        }
        Ok(Dataset::new(columns, rows)?.with_provenance(path.display().to_string()))
    }

    /// Writes a flat CSV file. List-valued cells are rejected.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        for row in &self.rows {
            if let Some((column, _)) = row.iter().find(|(_, v)| v.as_list().is_some()) {
                return Err(DatasetError::ListInCsv(column.to_owned()));
            }
        }
        let file = fs::File::create(path).map_err(|source| io_err(path, source))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        if !self.columns.is_empty() {
            writer.write_record(&self.columns)?;
        }
        for row in &self.rows {
            writer.write_record(
                self.columns
                    .iter()
                    .map(|c| row.get(c).and_then(Value::render).unwrap_or_default()),
            )?;
        }
        writer.flush().map_err(|source| io_err(path, source))
    }

    /// Loads by extension: `.csv` as CSV, anything else as JSONL.
    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        if is_csv(path) {
            Self::load_csv(path)
        } else {
            Self::load_jsonl(path)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if is_csv(path) {
            self.save_csv(path)
        } else {
            self.save_jsonl(path)
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

fn validate_columns(columns: &[String]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for c in columns {
        if c.is_empty() {
            return Err(DatasetError::EmptyColumnName);
        }
        if !seen.insert(c.as_str()) {
            return Err(DatasetError::DuplicateColumn(c.clone()));
        }
    }
    Ok(())
}

fn normalize_row(columns: &[String], mut row: Record) -> Result<Record> {
    if let Some(extra) = row.columns().find(|c| !columns.iter().any(|k| k == c)) {
        return Err(DatasetError::UnknownColumn(extra.to_owned()));
    }
    for c in columns {
        if !row.contains(c) {
            row.insert(c.clone(), Value::Null);
        }
    }
    Ok(row)
}

/// Maps raw label values (class ids or strings) to natural-language labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVerbalizer {
    column: String,
    mapping: HashMap<String, String>,
}

impl LabelVerbalizer {
    /// Raw keys are compared in stringified form, so `0` matches both the
    /// integer cell `0` and the text cell `"0"`.
    pub fn new<K, V>(column: impl Into<String>, mapping: impl IntoIterator<Item = (K, V)>) -> Result<Self>
    where
        K: ToString,
        V: Into<String>,
    {
        let mapping: BTreeMap<String, String> = mapping
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.into()))
            .collect();
        let mut inverse: HashMap<&str, &str> = HashMap::new();
        for (raw, label) in &mapping {
            if let Some(first) = inverse.insert(label, raw) {
                return Err(DatasetError::NonInjective {
                    first: first.to_owned(),
                    second: raw.clone(),
                    label: label.clone(),
                });
            }
        }
        Ok(LabelVerbalizer {
            column: column.into(),
            mapping: mapping.into_iter().collect(),
        })
    }

    pub fn column(&self) -> &str {
        &self.column
    }

    pub fn lookup(&self, raw: &Value) -> Option<&str> {
        match raw {
            Value::Text(_) | Value::Label(_) | Value::Integer(_) => {
                self.mapping.get(&raw.render()?).map(String::as_str)
            }
            _ => None,
        }
    }
}
