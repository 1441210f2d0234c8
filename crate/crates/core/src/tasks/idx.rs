//! IDX reader for MNIST-style files, plain or gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::numkit::Tensor;
use crate::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: "file ends inside the header".into(),
        })
}

/// Returns `(rows, cols, pixels)` with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, Tensor)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = 16 + n * rows * cols;
    if bytes.len() < need {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated image data: header promises {need} bytes"),
        });
    }
    let data = bytes[16..need].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((rows, cols, Tensor::new(vec![n, rows * cols], data)?))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    if bytes.len() < 8 + n {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!("truncated label data: header promises {} bytes", 8 + n),
        });
    }
    Ok(bytes[8..8 + n].iter().map(|&b| b as usize).collect())
}

/// Images as `(N, rows*cols)` in `[0, 1]` and their labels.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<(Tensor, Vec<usize>)> {
    let (_, _, images) = parse_idx_images(&read_maybe_gz(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read_maybe_gz(labels_path.as_ref())?)?;
    if labels.len() != images.rows() {
        return Err(Error::Format {
            offset: 4,
            message: format!(
                "{} images in {} but {} labels in {}",
                images.rows(),
                images_path.as_ref().display(),
                labels.len(),
                labels_path.as_ref().display()
            ),
        });
    }
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn images_bytes(n: u32, side: u32, fill: u8) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGES_MAGIC, n, side, side] {
            b.extend(v.to_be_bytes());
        }
        b.extend(std::iter::repeat_n(fill, (n * side * side) as usize));
        b
    }

    fn labels_bytes(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(LABELS_MAGIC.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn one_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, images_bytes(1, 28, 255)).unwrap();
        fs::write(&lp, labels_bytes(&[7])).unwrap();
        let (x, y) = load_idx(&ip, &lp).unwrap();
        assert_eq!(x.shape(), &[1, 784]);
        assert!(x.data().iter().all(|&v| v == 1.0));
        assert_eq!(y, vec![7]);
    }

    #[test]
    fn count_mismatch_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, images_bytes(2, 4, 0)).unwrap();
        fs::write(&lp, labels_bytes(&[1])).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_and_truncation_report_offsets() {
        let mut b = images_bytes(1, 2, 0);
        b[3] = 0x01;
        assert!(matches!(parse_idx_images(&b), Err(Error::Format { offset: 0, .. })));
        let b = images_bytes(3, 2, 0);
        match parse_idx_images(&b[..20]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx_labels(&[0, 0, 8]), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img.gz"), dir.path().join("lab"));
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&images_bytes(2, 3, 51)).unwrap();
        fs::write(&ip, enc.finish().unwrap()).unwrap();
        fs::write(&lp, labels_bytes(&[0, 9])).unwrap();
        let (x, y) = load_idx(&ip, &lp).unwrap();
        assert_eq!(x.shape(), &[2, 9]);
        assert!(x.data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        assert_eq!(y, vec![0, 9]);
    }
}
