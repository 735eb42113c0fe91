//! IDX container: two zero bytes, a type code (`0x08`, unsigned byte), the
//! number of dimensions, big-endian `u32` sizes, then the payload.

use std::path::Path;

use super::{DomainDataset, DomainTag};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
const UBYTE: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

impl IdxTensor {
    pub fn images(count: usize, height: usize, width: usize, payload: Vec<u8>) -> Result<Self> {
        Self::checked(IMAGES_MAGIC, vec![count, height, width], payload)
    }

    pub fn labels(labels: Vec<u8>) -> Result<Self> {
        Self::checked(LABELS_MAGIC, vec![labels.len()], labels)
    }

    fn checked(magic: u32, dims: Vec<usize>, payload: Vec<u8>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != payload.len() {
            return Err(Error::dim("IdxTensor", expected, payload.len()));
        }
        Ok(IdxTensor {
            magic,
            dims,
            payload,
        })
    }

    fn header_len(&self) -> usize {
        4 + 4 * self.dims.len()
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(format_err(bytes.len(), "file shorter than the 4-byte magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(format_err(0, "magic must start with two zero bytes"));
    }
    if bytes[2] != UBYTE {
        return Err(format_err(
            2,
            format!("unsupported type code {:#04x}, expected 0x08", bytes[2]),
        ));
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if magic != LABELS_MAGIC && magic != IMAGES_MAGIC {
        return Err(format_err(
            3,
            format!("magic {magic} is neither 2049 (labels) nor 2051 (images)"),
        ));
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(format_err(
            bytes.len(),
            format!("truncated header: {ndims} dims need {header} bytes"),
        ));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(4, "dimension product overflows"))?;
    let available = bytes.len() - header;
    if available < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: dims {dims:?} need {expected} bytes, found {available}"),
        ));
    }
    if available > expected {
        return Err(format_err(
            header + expected,
            format!("{} trailing bytes after payload", available - expected),
        ));
    }
    Ok(IdxTensor {
        magic,
        dims,
        payload: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.header_len() + t.payload.len());
    out.extend_from_slice(&[0, 0, UBYTE, t.dims.len() as u8]);
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&t.payload);
    out
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

pub fn write_idx(path: impl AsRef<Path>, t: &IdxTensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_idx(t)).map_err(|e| Error::io(path, e))
}

/// Images flattened row-major, one per matrix row, scaled to `[0, 1]`.
pub fn decode_images(t: &IdxTensor) -> Result<Matrix> {
    if t.magic != IMAGES_MAGIC || t.dims.len() != 3 {
        return Err(format_err(
            3,
            format!("expected image magic 2051 with 3 dims, found {} with {}", t.magic, t.dims.len()),
        ));
    }
    let (n, h, w) = (t.dims[0], t.dims[1], t.dims[2]);
    let data = t.payload.iter().map(|&b| b as f64 / 255.0).collect();
    Matrix::from_vec(n, h * w, data)
}

pub fn decode_labels(t: &IdxTensor) -> Result<Vec<usize>> {
    if t.magic != LABELS_MAGIC || t.dims.len() != 1 {
        return Err(format_err(
            3,
            format!("expected label magic 2049 with 1 dim, found {} with {}", t.magic, t.dims.len()),
        ));
    }
    Ok(t.payload.iter().map(|&b| b as usize).collect())
}

/// Bilinear resampling of each row (an `h x w` image) to `new_h x new_w`,
/// using pixel-centre alignment.
pub fn resize_bilinear(images: &Matrix, h: usize, w: usize, new_h: usize, new_w: usize) -> Result<Matrix> {
    if images.cols() != h * w {
        return Err(Error::dim("resize_bilinear", h * w, images.cols()));
    }
    if (h, w) == (new_h, new_w) {
        return Ok(images.clone());
    }
    let axis = |src: usize, dst: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = axis(h, new_h);
    let xs = axis(w, new_w);
    let mut out = Matrix::zeros(images.rows(), new_h * new_w);
    for r in 0..images.rows() {
        let src = images.row(r);
        let dst = out.row_mut(r);
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * new_w + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Ok(out)
}

/// Loads an image/label IDX pair as a labelled dataset, optionally resampled
/// to `resize` (height, width).
pub fn load_digits(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    domain: DomainTag,
    resize: Option<(usize, usize)>,
) -> Result<DomainDataset> {
    let it = load_idx(images)?;
    let lt = load_idx(labels)?;
    let mut x = decode_images(&it)?;
    let y = decode_labels(&lt)?;
    if y.len() != x.rows() {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            x.rows(),
            y.len()
        )));
    }
    if let Some((nh, nw)) = resize {
        x = resize_bilinear(&x, it.dims[1], it.dims[2], nh, nw)?;
    }
    let classes = y.iter().max().map_or(0, |m| m + 1).max(10);
    DomainDataset::new(x, Some(y), domain, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = vec![0x00, 0x00, 0x08, 0x03];
        b.extend_from_slice(&[0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2]);
        b.extend_from_slice(&[0, 255, 51, 102, 255, 0, 204, 153]);
        b
    }

    #[test]
    fn handcrafted_two_image_file() {
        let t = parse_idx(&fixture()).unwrap();
        assert_eq!(t.magic, 2051);
        assert_eq!(t.dims, vec![2, 2, 2]);
        let m = decode_images(&t).unwrap();
        let expected = Matrix::from_rows(&[[0.0, 1.0, 0.2, 0.4], [1.0, 0.0, 0.8, 0.6]]).unwrap();
        assert_eq!(m, expected);
    }

    #[test]
    fn label_decoder_rejects_image_magic() {
        let t = parse_idx(&fixture()).unwrap();
        assert!(matches!(decode_labels(&t), Err(Error::Format { offset: 3, .. })));
    }

    #[test]
    fn truncation_and_bad_magic_are_format_errors() {
        let mut b = fixture();
        b.pop();
        assert!(matches!(parse_idx(&b), Err(Error::Format { .. })));
        assert!(matches!(parse_idx(&b[..6]), Err(Error::Format { offset: 6, .. })));
        let mut b = fixture();
        b[2] = 0x0D;
        assert!(matches!(parse_idx(&b), Err(Error::Format { offset: 2, .. })));
        let mut b = fixture();
        b[3] = 0x02;
        assert!(matches!(parse_idx(&b), Err(Error::Format { offset: 3, .. })));
        assert!(parse_idx(&[]).is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bytes = fixture();
        assert_eq!(encode_idx(&parse_idx(&bytes).unwrap()), bytes);
        let labels = IdxTensor::labels(vec![3, 1, 4, 1, 5]).unwrap();
        assert_eq!(parse_idx(&encode_idx(&labels)).unwrap(), labels);
    }

    #[test]
    fn resize_identity_and_constant() {
        let m = Matrix::from_rows(&[[0.0, 1.0, 0.2, 0.4]]).unwrap();
        assert_eq!(resize_bilinear(&m, 2, 2, 2, 2).unwrap(), m);
        let c = Matrix::filled(1, 28 * 28, 0.3);
        let r = resize_bilinear(&c, 28, 28, 16, 16).unwrap();
        assert_eq!(r.cols(), 256);
        assert!(r.as_slice().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }
}
