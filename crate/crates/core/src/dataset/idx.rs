//! IDX (MNIST-family) binary loader.
//!
//! Header: a big-endian `u32` magic number whose low byte is the tensor rank,
//! followed by one big-endian `u32` per dimension, then unsigned bytes.

use std::path::Path;

use ndarray::Array2;

use super::{DataError, Dataset};

/// Unsigned-byte rank-3 tensor (images).
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// Unsigned-byte rank-1 tensor (labels).
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            expected: offset + 4,
            found: bytes.len(),
        })
}

/// Parses the header and returns (dimension sizes, payload).
fn parse<'a>(
    bytes: &'a [u8],
    magic: u32,
    path: &Path,
) -> Result<(Vec<usize>, &'a [u8]), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != magic {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let header = 4 + 4 * rank;
    let payload: usize = dims.iter().product();
    if bytes.len() < header + payload {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: header + payload,
            found: bytes.len(),
        });
    }
    Ok((dims, &bytes[header..header + payload]))
}

/// Loads an image/label IDX pair. Pixels are flattened row-major and divided
/// by 255, so features lie in `[0, 1]`.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset, DataError> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    let (image_dims, pixels) = parse(&image_bytes, IDX_IMAGES_MAGIC, images_path)?;
    let (label_dims, raw_labels) = parse(&label_bytes, IDX_LABELS_MAGIC, labels_path)?;

    let (count, rows, cols) = (image_dims[0], image_dims[1], image_dims[2]);
    if count != label_dims[0] {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_dims[0],
        });
    }
    let features = Array2::from_shape_vec(
        (count, rows * cols),
        pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .map_err(|e| DataError::InvalidArgument(e.to_string()))?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| usize::from(l)).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, Some(labels), class_count)
}
