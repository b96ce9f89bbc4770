//! CIFAR-100 binary records: coarse label byte, fine label byte, then
//! 3072 pixel bytes as three 32x32 planes (R, G, B).

use std::fs;
use std::path::Path;

use crate::data::ImageSet;
use crate::error::{Error, Result};

pub const RECORD_SIZE: usize = 2 + 3 * 32 * 32;

pub fn parse_cifar100(bytes: &[u8], path: &Path) -> Result<ImageSet> {
    if !bytes.len().is_multiple_of(RECORD_SIZE) {
        return Err(Error::RecordMisaligned {
            path: path.to_path_buf(),
            size: bytes.len(),
            record: RECORD_SIZE,
        });
    }
    let n = bytes.len() / RECORD_SIZE;
    let mut pixels = vec![0u8; n * 3072];
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD_SIZE).enumerate() {
        labels.push(rec[1] as usize);
        let planes = &rec[2..];
        let out = &mut pixels[i * 3072..(i + 1) * 3072];
        // planar CHW -> interleaved HWC
        for p in 0..1024 {
            for c in 0..3 {
                out[p * 3 + c] = planes[c * 1024 + p];
            }
        }
    }
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ImageSet::new(name, pixels, 32, 32, 3, labels, 100)
}

pub fn load_cifar100_binary(path: impl AsRef<Path>) -> Result<ImageSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar100(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_and_interleaves_channels() {
        let mut bytes = Vec::new();
        for (coarse, fine) in [(3u8, 42u8), (0, 99)] {
            bytes.push(coarse);
            bytes.push(fine);
            bytes.extend(std::iter::repeat_n(10, 1024));
            bytes.extend(std::iter::repeat_n(20, 1024));
            bytes.extend(std::iter::repeat_n(30, 1024));
        }
        let set = parse_cifar100(&bytes, Path::new("x.bin")).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.labels(), &[42, 99]);
        assert_eq!(set.class_count(), 100);
        assert_eq!(&set.image(0)[..6], &[10, 20, 30, 10, 20, 30]);
    }

    #[test]
    fn empty_file_is_valid_and_empty() {
        let set = parse_cifar100(&[], Path::new("e.bin")).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn misaligned_file_is_rejected() {
        let bytes = vec![0u8; RECORD_SIZE + 5];
        assert!(matches!(
            parse_cifar100(&bytes, Path::new("bad.bin")),
            Err(Error::RecordMisaligned { .. })
        ));
    }
}
