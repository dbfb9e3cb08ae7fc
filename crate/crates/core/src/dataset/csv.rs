use std::path::Path;

use ndarray::Array2;

use super::{DataError, Dataset};

/// Loads a headered, comma-separated file.
///
/// Every column except `label_column` must hold finite reals. Row numbers in
/// errors count data rows from 0, matching the ids assigned to the rows.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = ::csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingColumn(name.to_string()))?,
        ),
        None => None,
    };
    let dims = header.len() - usize::from(label_idx.is_some());
    if dims == 0 {
        return Err(DataError::InvalidArgument(
            "csv has no feature columns".into(),
        ));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(DataError::Ragged {
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            if Some(col) == label_idx {
                let label = field.parse::<usize>().map_err(|_| DataError::Parse {
                    row,
                    column: header[col].clone(),
                    value: field.to_string(),
                    expected: "a non-negative integer label",
                })?;
                labels.push(label);
                continue;
            }
            let value = field.parse::<f64>().map_err(|_| DataError::Parse {
                row,
                column: header[col].clone(),
                value: field.to_string(),
                expected: "a real number",
            })?;
            if !value.is_finite() {
                return Err(DataError::NonFinite {
                    row,
                    column: header[col].clone(),
                    value: field.to_string(),
                });
            }
            values.push(value);
        }
        rows += 1;
    }

    let features = Array2::from_shape_vec((rows, dims), values)
        .map_err(|e| DataError::InvalidArgument(e.to_string()))?;
    match label_idx {
        Some(_) => {
            let class_count = labels.iter().max().map_or(0, |m| m + 1);
            Dataset::new(features, Some(labels), class_count)
        }
        None => Dataset::new(features, None, 0),
    }
}
