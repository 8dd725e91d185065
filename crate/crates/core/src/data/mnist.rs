//! MNIST IDX files. Digits are zero-padded to 32×32 and replicated to three
//! channels so they fit the LeNet input.

use std::fs;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 2051;
const LABEL_MAGIC: u32 = 2049;
const SIDE: usize = 32;

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    if bytes.len() < 16 {
        return Err(Error::format(path, "IDX image header needs 16 bytes"));
    }
    let magic = be_u32(bytes, 0);
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            path,
            format!("bad IDX image magic {magic} (expected {IMAGE_MAGIC})"),
        ));
    }
    let (n, rows, cols) = (
        be_u32(bytes, 4) as usize,
        be_u32(bytes, 8) as usize,
        be_u32(bytes, 12) as usize,
    );
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} bytes for {n} images of {rows}x{cols}, found {}",
                bytes.len()
            ),
        ));
    }
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    if bytes.len() < 8 {
        return Err(Error::format(path, "IDX label header needs 8 bytes"));
    }
    let magic = be_u32(bytes, 0);
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            path,
            format!("bad IDX label magic {magic} (expected {LABEL_MAGIC})"),
        ));
    }
    let n = be_u32(bytes, 4) as usize;
    if bytes.len() != 8 + n {
        return Err(Error::format(
            path,
            format!("expected {} bytes for {n} labels, found {}", 8 + n, bytes.len()),
        ));
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

/// Centres each `rows×cols` digit in a 32×32 canvas and copies it to three
/// channels.
pub fn to_lenet_input(pixels: &[u8], n: usize, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows > SIDE || cols > SIDE {
        return Err(Error::Shape(format!("{rows}x{cols} digits do not fit a 32x32 canvas")));
    }
    let (top, left) = ((SIDE - rows) / 2, (SIDE - cols) / 2);
    let plane = SIDE * SIDE;
    let mut out = vec![0u8; n * 3 * plane];
    for i in 0..n {
        let src = &pixels[i * rows * cols..(i + 1) * rows * cols];
        let dst = &mut out[i * 3 * plane..(i + 1) * 3 * plane];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let at = (top + r) * SIDE + left;
            dst[at..at + cols].copy_from_slice(row);
        }
        let (first, rest) = dst.split_at_mut(plane);
        rest[..plane].copy_from_slice(first);
        rest[plane..].copy_from_slice(first);
    }
    Ok(out)
}

fn load_split(dir: &Path, prefix: &str, split: Split) -> Result<Dataset> {
    let img_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let lbl_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    let img = fs::read(&img_path).map_err(|e| Error::io(&img_path, e))?;
    let lbl = fs::read(&lbl_path).map_err(|e| Error::io(&lbl_path, e))?;
    let (n, rows, cols, pixels) = parse_idx_images(&img, &img_path)?;
    let labels = parse_idx_labels(&lbl, &lbl_path)?;
    if labels.len() != n {
        return Err(Error::format(
            &lbl_path,
            format!("{} labels for {n} images", labels.len()),
        ));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= 10) {
        return Err(Error::format(&lbl_path, format!("label {y} is not a digit")));
    }
    Dataset::new(to_lenet_input(&pixels, n, rows, cols)?, labels, [3, SIDE, SIDE], 10, split)
}

/// Loads `train-*` and `t10k-*` IDX pairs from `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    Ok((
        load_split(dir, "train", Split::Train)?,
        load_split(dir, "t10k", Split::Test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3];
        for v in [n, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn magic_from_header_bytes() {
        assert_eq!(be_u32(&[0, 0, 8, 3], 0), 2051);
        assert_eq!(be_u32(&[0, 0, 8, 1], 0), 2049);
    }

    #[test]
    fn single_image_fixture_round_trips() {
        let pixels: Vec<u8> = (0..28 * 28).map(|i| (i % 256) as u8).collect();
        let dir = tempfile::tempdir().unwrap();
        for prefix in ["train", "t10k"] {
            fs::write(
                dir.path().join(format!("{prefix}-images-idx3-ubyte")),
                idx_images(1, 28, 28, &pixels),
            )
            .unwrap();
            fs::write(
                dir.path().join(format!("{prefix}-labels-idx1-ubyte")),
                [0, 0, 8, 1, 0, 0, 0, 1, 7],
            )
            .unwrap();
        }
        let (train, test) = load_mnist(dir.path()).unwrap();
        assert_eq!(train.sample_shape(), [3, 32, 32]);
        assert_eq!((train.len(), test.len()), (1, 1));
        assert_eq!(train.labels(), &[7]);
        let img = train.image(0);
        for c in 0..3 {
            for r in 0..32 {
                for col in 0..32 {
                    let got = img[c * 1024 + r * 32 + col];
                    let want = if (2..30).contains(&r) && (2..30).contains(&col) {
                        pixels[(r - 2) * 28 + col - 2]
                    } else {
                        0
                    };
                    assert_eq!(got, want);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_length() {
        let p = Path::new("f");
        let mut bad = idx_images(1, 2, 2, &[1, 2, 3, 4]);
        bad[3] = 1;
        assert!(parse_idx_images(&bad, p).unwrap_err().to_string().contains("magic"));
        let short = idx_images(2, 2, 2, &[1, 2, 3, 4]);
        assert!(parse_idx_images(&short, p).unwrap_err().to_string().contains("expected 24 bytes"));
        assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 2, 1], p).is_err());
        assert!(parse_idx_labels(&[0, 0, 8, 3, 0, 0, 0, 1, 1], p).is_err());
    }
}
