//! IDX (MNIST) file decoding.
//!
//! Layout: big-endian `u32` magic, one big-endian `u32` per dimension, then an
//! unsigned-byte payload. Images use magic `0x00000803` with dimensions
//! `(count, rows, cols)`; labels use `0x00000801` with `(count)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, IdxError, Result};
use crate::matrix::Matrix;

use super::Dataset;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IdxError> {
        let available = self.bytes.len().saturating_sub(self.pos);
        if available < n {
            return Err(IdxError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IdxError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<(), IdxError> {
        let offset = self.pos;
        let found = self.u32()?;
        if found != expected {
            return Err(IdxError::BadMagic {
                offset,
                expected,
                found,
            });
        }
        Ok(())
    }
}

/// Decodes an image file into `(count, rows * cols, pixels in [0, 1])`.
pub fn parse_images(bytes: &[u8]) -> Result<Matrix, IdxError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let features = rows * cols;
    let payload = r.take(count * features)?;
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Matrix::new(count, features, data).expect("payload sized from header"))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(LABEL_MAGIC)?;
    let count = r.u32()? as usize;
    Ok(r.take(count)?.to_vec())
}

/// Pairs decoded images and labels. Class count is `max label + 1`.
pub fn parse_pair(images: &[u8], labels: &[u8]) -> Result<Dataset, IdxError> {
    let inputs = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if inputs.rows() != labels.len() {
        return Err(IdxError::CountMismatch {
            offset: 4,
            images: inputs.rows(),
            labels: labels.len(),
        });
    }
    let class_count = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    Ok(Dataset {
        inputs,
        labels: labels.into_iter().map(usize::from).collect(),
        class_count,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(Error::Io)
}

/// Loads an image/label IDX file pair from disk.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read(ip)?;
    let labels = read(lp)?;
    let inputs = parse_images(&images).map_err(|source| Error::Idx {
        path: ip.to_path_buf(),
        source,
    })?;
    let raw_labels = parse_labels(&labels).map_err(|source| Error::Idx {
        path: lp.to_path_buf(),
        source,
    })?;
    if inputs.rows() != raw_labels.len() {
        return Err(Error::Idx {
            path: lp.to_path_buf(),
            source: IdxError::CountMismatch {
                offset: 4,
                images: inputs.rows(),
                labels: raw_labels.len(),
            },
        });
    }
    let class_count = raw_labels
        .iter()
        .map(|&l| l as usize + 1)
        .max()
        .unwrap_or(0);
    Ok(Dataset {
        inputs,
        labels: raw_labels.into_iter().map(usize::from).collect(),
        class_count,
    })
}

/// Encodes images (row-major bytes) in IDX form. Used for fixtures and exports.
pub fn encode_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGE_MAGIC, count, rows, cols] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        // two 2x2 images, built byte by byte
        let images = vec![
            0x00, 0x00, 0x08, 0x03, // magic
            0x00, 0x00, 0x00, 0x02, // count
            0x00, 0x00, 0x00, 0x02, // rows
            0x00, 0x00, 0x00, 0x02, // cols
            0, 255, 51, 102, // image 0
            255, 0, 0, 204, // image 1
        ];
        let labels = vec![0x00, 0x00, 0x08, 0x01, 0x00, 0x00, 0x00, 0x02, 7, 3];
        (images, labels)
    }

    #[test]
    fn parses_hand_built_pair() {
        let (images, labels) = fixture();
        let ds = parse_pair(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim(), 4);
        assert_eq!(ds.inputs.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.inputs.row(1), &[1.0, 0.0, 0.0, 0.8]);
        assert_eq!(ds.labels, vec![7, 3]);
        assert_eq!(ds.class_count, 8);
        assert_eq!(encode_images(2, 2, 2, &images[16..]), images);
        assert_eq!(encode_labels(&[7, 3]), labels);
    }

    #[test]
    fn wrong_magic_reports_offset_zero() {
        let (mut images, labels) = fixture();
        images[..4].copy_from_slice(&[0, 0, 0, 0]);
        assert_eq!(
            parse_pair(&images, &labels).unwrap_err(),
            IdxError::BadMagic {
                offset: 0,
                expected: IMAGE_MAGIC,
                found: 0
            }
        );
        // a label file handed in as images
        assert!(matches!(
            parse_images(&labels),
            Err(IdxError::BadMagic {
                offset: 0,
                found: LABEL_MAGIC,
                ..
            })
        ));
    }

    #[test]
    fn truncated_payload_and_header() {
        let (images, labels) = fixture();
        assert_eq!(
            parse_images(&images[..images.len() - 1]).unwrap_err(),
            IdxError::Truncated {
                offset: 16,
                needed: 8,
                available: 7
            }
        );
        assert_eq!(
            parse_labels(&labels[..6]).unwrap_err(),
            IdxError::Truncated {
                offset: 4,
                needed: 4,
                available: 2
            }
        );
    }

    #[test]
    fn count_mismatch() {
        let (images, _) = fixture();
        let labels = encode_labels(&[1, 2, 3]);
        assert_eq!(
            parse_pair(&images, &labels).unwrap_err(),
            IdxError::CountMismatch {
                offset: 4,
                images: 2,
                labels: 3
            }
        );
    }

    #[test]
    fn loads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = fixture();
        let ip = dir.path().join("img.idx");
        let lp = dir.path().join("lbl.idx");
        fs::write(&ip, images).unwrap();
        fs::write(&lp, &labels[..9]).unwrap();
        match load_idx(&ip, &lp) {
            Err(Error::Idx {
                path,
                source: IdxError::Truncated { offset: 8, .. },
            }) => {
                assert_eq!(path, lp)
            }
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&lp, labels).unwrap();
        assert_eq!(load_idx(&ip, &lp).unwrap().len(), 2);
    }
}
