use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use tempfile::NamedTempFile;

use crate::CliError;

/// Numeric CSV table with a header row.
pub struct Table {
    pub names: Vec<String>,
    pub data: Array2<f64>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let names: Vec<String> = reader
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        if names.is_empty() {
            return Err(CliError::Input(format!("{}: empty header", path.display())));
        }
        let mut values = Vec::new();
        let mut rows = 0;
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let line = record.position().map_or(rows + 2, |p| p.line() as usize);
            for (col, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    CliError::Input(format!(
                        "{}: line {line}, column {} ('{}'): cannot parse '{field}' as a number",
                        path.display(),
                        col + 1,
                        names[col]
                    ))
                })?;
                values.push(v);
            }
            rows += 1;
        }
        let data = Array2::from_shape_vec((rows, names.len()), values).expect("rectangular csv");
        Ok(Self { names, data })
    }

    pub fn column_index(&self, name: &str) -> Result<usize, CliError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::Input(format!("no column named '{name}'")))
    }

    /// Splits off the response column; the rest are predictors in file order.
    pub fn split_response(&self, response: &str) -> Result<(Array2<f64>, Array1<f64>, Vec<String>), CliError> {
        let r = self.column_index(response)?;
        let keep: Vec<usize> = (0..self.names.len()).filter(|&j| j != r).collect();
        if keep.is_empty() {
            return Err(CliError::Input("no predictor columns besides the response".into()));
        }
        let x = self.data.select(ndarray::Axis(1), &keep);
        let names = keep.iter().map(|&j| self.names[j].clone()).collect();
        Ok((x, self.data.column(r).to_owned(), names))
    }

    /// Predictor matrix with columns picked by name, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Array2<f64>, CliError> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.data.select(ndarray::Axis(1), &idx))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let at = e
        .position()
        .map(|p| format!(", line {}", p.line()))
        .unwrap_or_default();
    CliError::Input(format!("{}{at}: {e}", path.display()))
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}
