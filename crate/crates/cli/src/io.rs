//! CSV with a mandatory header row. Numbers are written in shortest
//! round-trip form.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, CliResult};

pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, message: String| CliError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let width = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .len();
    if width == 0 {
        return Err(parse_err(1, "empty header row".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: {field:?}")))?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, width, &values))
}

pub fn read_vector(path: &Path) -> CliResult<DVector<f64>> {
    let m = read_matrix(path)?;
    if m.ncols() != 1 {
        return Err(CliError::Input(format!(
            "{}: expected one column, found {}",
            path.display(),
            m.ncols()
        )));
    }
    Ok(DVector::from_column_slice(m.as_slice()))
}

fn writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Writes a header row and then one row per item.
pub fn write_rows<I, R>(path: &Path, header: &[String], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_matrix(path: &Path, prefix: &str, m: &DMatrix<f64>) -> CliResult<()> {
    let header: Vec<String> = (1..=m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    write_rows(
        path,
        &header,
        m.row_iter().map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>()),
    )
}

pub fn write_vector(path: &Path, name: &str, v: &DVector<f64>) -> CliResult<()> {
    write_rows(path, &[name.to_string()], v.iter().map(|x| vec![x.to_string()]))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
