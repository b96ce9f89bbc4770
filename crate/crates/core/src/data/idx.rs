//! Big-endian IDX containers (MNIST family).

use std::fs;
use std::path::Path;

use crate::data::ImageSet;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    let b = bytes.get(at..at + 4).ok_or_else(|| Error::Truncated {
        path: path.to_path_buf(),
        needed: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Parses an `idx3-ubyte` image file into `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IMAGES_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let needed = 16 + n * rows * cols;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    Ok((n, rows, cols, bytes[16..needed].to_vec()))
}

/// Parses an `idx1-ubyte` label file.
pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let needed = 8 + n;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

/// Loads an image/label IDX pair. `class_count` is one more than the
/// largest label seen.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<ImageSet> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (n, rows, cols, pixels) = parse_images(&read(ip)?, ip)?;
    let labels = parse_labels(&read(lp)?, lp)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    let class_count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let name = ip
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ImageSet::new(name, pixels, rows, cols, 1, labels.into_iter().map(usize::from).collect(), class_count)
}

/// Serializes an image set in IDX form; inverse of [`load_idx`] for
/// single-channel sets.
pub fn write_idx(set: &ImageSet, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let mut img = Vec::with_capacity(16 + set.pixels().len());
    for v in [IMAGES_MAGIC, set.len() as u32, set.height() as u32, set.width() as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(set.pixels());
    let mut lab = Vec::with_capacity(8 + set.len());
    for v in [LABELS_MAGIC, set.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend(set.labels().iter().map(|&l| l as u8));
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    fs::write(ip, img).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, lab).map_err(|e| Error::io(lp, e))
}
