//! Atomic file output: every artifact is written to a temporary sibling and
//! renamed into place, so readers never see a half-written file.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::BenchError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

/// Writes whatever `fill` produces to `path` via write-then-rename.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<(), BenchError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), BenchError>,
{
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    let mut buf = Vec::new();
    fill(&mut buf)?;
    let tmp = temp_path(path);
    let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(&buf).map_err(io_err(&tmp))?;
    file.sync_all().map_err(io_err(&tmp))?;
    drop(file);
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Serializes `rows` as CSV with a header.
pub fn write_csv_rows<T: serde::Serialize>(
    path: &Path,
    rows: &[T],
    header: &[&str],
) -> Result<(), BenchError> {
    write_atomic(path, |buf| {
        let mut w = csv::WriterBuilder::new()
            .has_headers(!rows.is_empty())
            .from_writer(buf);
        if rows.is_empty() {
            w.write_record(header)?;
        }
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    })
}

pub fn read_csv_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<T>, _>>()?;
    Ok(rows)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    write_atomic(path, |buf| {
        serde_json::to_writer_pretty(&mut *buf, value)?;
        buf.push(b'\n');
        Ok(())
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}
