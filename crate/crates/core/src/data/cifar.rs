//! CIFAR binary batches: per record, label byte(s) followed by 3072 pixel
//! bytes (1024 red, 1024 green, 1024 blue, each plane row-major).

use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Split};
use crate::error::{Error, Result};

pub const CIFAR_IMAGE_BYTES: usize = 3 * 32 * 32;
const RECORDS_PER_BATCH: usize = 10_000;

/// Parses packed records. `label_bytes` is 1 for CIFAR-10 and 2 for
/// CIFAR-100, whose second (fine) label is used.
pub fn parse_cifar_records(
    bytes: &[u8],
    label_bytes: usize,
    num_classes: usize,
    split: Split,
    path: &Path,
) -> Result<Dataset> {
    let record = label_bytes + CIFAR_IMAGE_BYTES;
    if bytes.is_empty() || !bytes.len().is_multiple_of(record) {
        return Err(Error::format(
            path,
            format!(
                "{} bytes is not a whole number of {record}-byte records",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / record;
    let mut images = Vec::with_capacity(n * CIFAR_IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for r in bytes.chunks_exact(record) {
        let label = r[label_bytes - 1] as usize;
        if label >= num_classes {
            return Err(Error::format(
                path,
                format!("label {label} out of range for {num_classes} classes"),
            ));
        }
        labels.push(label);
        images.extend_from_slice(&r[label_bytes..]);
    }
    Dataset::new(images, labels, [3, 32, 32], num_classes, split)
}

fn read_exact_records(path: &Path, label_bytes: usize, records: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = records * (label_bytes + CIFAR_IMAGE_BYTES);
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} bytes ({records} records of {}), found {}",
                label_bytes + CIFAR_IMAGE_BYTES,
                bytes.len()
            ),
        ));
    }
    Ok(bytes)
}

/// Accepts either the batch directory itself or its parent.
fn resolve(dir: &Path, probe: &str, nested: &str) -> PathBuf {
    if !dir.join(probe).exists() && dir.join(nested).join(probe).exists() {
        dir.join(nested)
    } else {
        dir.to_path_buf()
    }
}

/// Loads `data_batch_1..5.bin` and `test_batch.bin` (50,000 / 10,000).
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let dir = resolve(dir, "data_batch_1.bin", "cifar-10-batches-bin");
    let mut train = Vec::with_capacity(5 * RECORDS_PER_BATCH * (1 + CIFAR_IMAGE_BYTES));
    for b in 1..=5 {
        train.extend(read_exact_records(&dir.join(format!("data_batch_{b}.bin")), 1, RECORDS_PER_BATCH)?);
    }
    let test_path = dir.join("test_batch.bin");
    let test = read_exact_records(&test_path, 1, RECORDS_PER_BATCH)?;
    Ok((
        parse_cifar_records(&train, 1, 10, Split::Train, &dir)?,
        parse_cifar_records(&test, 1, 10, Split::Test, &test_path)?,
    ))
}

/// Loads `train.bin` / `test.bin` with fine labels (100 classes).
pub fn load_cifar100(dir: &Path) -> Result<(Dataset, Dataset)> {
    let dir = resolve(dir, "train.bin", "cifar-100-binary");
    let (train_path, test_path) = (dir.join("train.bin"), dir.join("test.bin"));
    let train = read_exact_records(&train_path, 2, 5 * RECORDS_PER_BATCH)?;
    let test = read_exact_records(&test_path, 2, RECORDS_PER_BATCH)?;
    Ok((
        parse_cifar_records(&train, 2, 100, Split::Train, &train_path)?,
        parse_cifar_records(&test, 2, 100, Split::Test, &test_path)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, seed: u8) -> Vec<u8> {
        let mut r = vec![label];
        r.extend((0..CIFAR_IMAGE_BYTES).map(|i| (i as u8).wrapping_mul(seed)));
        r
    }

    #[test]
    fn two_record_fixture() {
        let mut bytes = record(3, 1);
        bytes.extend(record(9, 7));
        let d = parse_cifar_records(&bytes, 1, 10, Split::Test, Path::new("fixture")).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels(), &[3, 9]);
        // Offsets 1..=1024 are the red plane: pixel (row 0, col 5) is byte 6.
        assert_eq!(d.image(0)[5], bytes[6]);
        assert_eq!(d.image(1)[1024], 1024u32.wrapping_mul(7) as u8);
        let (x, _) = d.batch(&[1]).unwrap();
        assert_eq!(x.data()[2 * 1024 + 33], bytes[3073 + 1 + 2048 + 33] as f32 / 255.0);
    }

    #[test]
    fn cifar100_uses_fine_label() {
        let mut r = vec![4u8, 77];
        r.extend(vec![0u8; CIFAR_IMAGE_BYTES]);
        let d = parse_cifar_records(&r, 2, 100, Split::Train, Path::new("f")).unwrap();
        assert_eq!(d.labels(), &[77]);
    }

    #[test]
    fn rejects_ragged_and_short() {
        let bytes = vec![0u8; 3073 + 5];
        let err = parse_cifar_records(&bytes, 1, 10, Split::Train, Path::new("f")).unwrap_err();
        assert!(err.to_string().contains("3073-byte records"));

        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("data_batch_1.bin"), record(0, 1)).unwrap();
        let err = load_cifar10(dir.path()).unwrap_err().to_string();
        assert!(err.contains("expected 30730000 bytes"), "{err}");

        let missing = tempfile::tempdir().unwrap();
        assert!(matches!(load_cifar10(missing.path()), Err(Error::Io { .. })));
    }
}
