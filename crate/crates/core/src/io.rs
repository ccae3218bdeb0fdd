//! CSV and binary readers/writers for data, draws and derived tables.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! file written here reads back bit-for-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Price levels; converted to log differences.
    Prices,
    /// Returns, used as given.
    #[default]
    Returns,
}

impl std::str::FromStr for InputMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "prices" => Ok(InputMode::Prices),
            "returns" => Ok(InputMode::Returns),
            other => Err(format!("unknown input mode '{other}' (expected prices or returns)")),
        }
    }
}

/// Named numeric columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

/// Parses a headed numeric CSV. Line numbers in errors are 1-based and
/// count the header.
pub fn parse_table<R: Read>(reader: R) -> Result<Table, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Parse { line: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(DataError::Malformed("missing header row".into()));
    }
    let mut columns = vec![Vec::new(); names.len()];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| DataError::Parse { line, message: e.to_string() })?;
        if rec.len() != names.len() {
            return Err(DataError::Parse { line, message: format!("expected {} fields, found {}", names.len(), rec.len()) });
        }
        for (j, field) in rec.iter().enumerate() {
            if field.is_empty() {
                return Err(DataError::Parse { line, message: format!("missing value in column '{}'", names[j]) });
            }
            let v: f64 = field
                .parse()
                .map_err(|_| DataError::Parse { line, message: format!("non-numeric value '{field}' in column '{}'", names[j]) })?;
            if !v.is_finite() {
                return Err(DataError::Parse { line, message: format!("non-finite value in column '{}'", names[j]) });
            }
            columns[j].push(v);
        }
    }
    Ok(Table { names, columns })
}

pub fn read_table(path: &Path) -> Result<Table, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    parse_table(BufReader::new(file))
}

/// Converts a parsed table to returns: log differences in prices mode, a
/// copy otherwise.
pub fn to_returns(table: Table, mode: InputMode) -> Result<Table, DataError> {
    match mode {
        InputMode::Returns => {
            if table.rows() < 2 {
                return Err(DataError::TooShort { required: 2, actual: table.rows() });
            }
            Ok(table)
        }
        InputMode::Prices => {
            if table.rows() < 3 {
                return Err(DataError::TooShort { required: 3, actual: table.rows() });
            }
            let mut columns = Vec::with_capacity(table.columns.len());
            for (name, col) in table.names.iter().zip(&table.columns) {
                if let Some(i) = col.iter().position(|&p| p <= 0.0) {
                    return Err(DataError::Parse { line: i + 2, message: format!("non-positive price in column '{name}'") });
                }
                columns.push(col.windows(2).map(|w| w[1].ln() - w[0].ln()).collect());
            }
            Ok(Table { names: table.names, columns })
        }
    }
}

/// Reads `path` and returns one return series per column.
pub fn load_returns(path: &Path, mode: InputMode) -> Result<Table, DataError> {
    to_returns(read_table(path)?, mode)
}

/// Writes named columns as CSV.
pub fn write_table(path: &Path, table: &Table) -> Result<(), DataError> {
    let n = table.rows();
    if table.columns.iter().any(|c| c.len() != n) || table.names.len() != table.columns.len() {
        return Err(DataError::Malformed("columns must share one length and have one name each".into()));
    }
    write_rows(path, &table.names, (0..n).map(|t| table.columns.iter().map(|c| c[t]).collect()))
}

/// Writes a header and numeric rows as CSV.
pub fn write_rows<I>(path: &Path, header: &[String], rows: I) -> Result<(), DataError>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| DataError::Malformed(format!("writing {}: {e}", path.display()));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

const BIN_MAGIC: &[u8; 8] = b"AISILDRW";
pub const BIN_VERSION: u32 = 1;

/// Writes draws in the compact binary layout: magic, `u32` version, `u32`
/// column count, `u64` row count, length-prefixed UTF-8 column names, then
/// little-endian `f64` values row by row.
pub fn write_binary(path: &Path, table: &Table) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
    put(BIN_MAGIC)?;
    put(&BIN_VERSION.to_le_bytes())?;
    put(&(table.names.len() as u32).to_le_bytes())?;
    put(&(table.rows() as u64).to_le_bytes())?;
    for name in &table.names {
        put(&(name.len() as u32).to_le_bytes())?;
        put(name.as_bytes())?;
    }
    for t in 0..table.rows() {
        for c in &table.columns {
            put(&c[t].to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_binary(path: &Path) -> Result<Table, DataError> {
    let mut bytes = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| io_err(path, e))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8], DataError> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| DataError::Malformed("truncated binary draws file".into()))?;
        pos += n;
        Ok(s)
    };
    if take(8)? != BIN_MAGIC {
        return Err(DataError::Malformed("not a binary draws file".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != BIN_VERSION {
        return Err(DataError::Malformed(format!("unsupported binary draws version {version}")));
    }
    let cols = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let rows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let mut names = Vec::with_capacity(cols);
    for _ in 0..cols {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(take(len)?).map_err(|e| DataError::Malformed(e.to_string()))?;
        names.push(name.to_string());
    }
    let mut columns = vec![Vec::with_capacity(rows); cols];
    for _ in 0..rows {
        for c in columns.iter_mut() {
            c.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
    }
    if take(1).is_ok() {
        return Err(DataError::Malformed("trailing bytes in binary draws file".into()));
    }
    Ok(Table { names, columns })
}
