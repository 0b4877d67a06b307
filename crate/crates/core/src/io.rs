//! Image file I/O.
//!
//! Two families of files are understood:
//!
//! * Rasters (PNG 8/16-bit gray or 8-bit RGB, binary PGM), decoded through the
//!   `image` crate with intensities kept at their native bit depth.
//! * The raw-tensor format used for every file the harness writes:
//!
//! ```text
//! magic   16 bytes  "UQIH-RAWTENSOR\0\0"
//! hlen     4 bytes  little-endian u32, length of the JSON header
//! header  hlen      {"h":int,"w":int,"c":int,"dtype":"f32le"}
//! payload h*w*c*4   f32 little-endian, row-major, channel-fastest
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, RangeHint};

pub const RAW_TENSOR_MAGIC: &[u8; 16] = b"UQIH-RAWTENSOR\0\0";
pub const DTYPE_F32LE: &str = "f32le";

/// File extension used for raw-tensor files written by the harness.
pub const RAW_TENSOR_EXT: &str = "uqt";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RawTensorHeader {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub dtype: String,
}

/// Splits a framed file into its JSON header and payload.
pub(crate) fn read_framed<'a, H: DeserializeOwned>(
    path: &Path,
    bytes: &'a [u8],
    magic: &[u8; 16],
) -> Result<(H, &'a [u8])> {
    if bytes.len() < 20 || &bytes[..16] != magic {
        return Err(Error::malformed(path, "bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
    let end = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::malformed(path, "truncated header"))?;
    let header_text = std::str::from_utf8(&bytes[20..end])
        .map_err(|_| Error::malformed(path, "header is not UTF-8"))?;
    let header = serde_json::from_str(header_text).map_err(|e| Error::json(path, e))?;
    Ok((header, &bytes[end..]))
}

pub(crate) fn write_framed<H: Serialize>(magic: &[u8; 16], header: &H, values: &[f64]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("header serialization");
    let mut out = Vec::with_capacity(20 + header.len() + values.len() * 4);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Decodes an exact-length little-endian f32 payload, rejecting non-finite values.
pub(crate) fn decode_f32_payload(path: &Path, payload: &[u8], count: usize) -> Result<Vec<f64>> {
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| Error::malformed(path, "dimension overflow"))?;
    if payload.len() != expected {
        return Err(Error::malformed(
            path,
            format!("payload has {} bytes, expected {expected}", payload.len()),
        ));
    }
    payload
        .chunks_exact(4)
        .enumerate()
        .map(|(i, b)| {
            let v = f32::from_le_bytes(b.try_into().unwrap());
            if v.is_finite() {
                Ok(v as f64)
            } else {
                Err(Error::malformed(path, format!("non-finite value at index {i}")))
            }
        })
        .collect()
}

pub fn decode_raw_tensor(path: &Path, bytes: &[u8]) -> Result<Image> {
    let (header, payload): (RawTensorHeader, _) = read_framed(path, bytes, RAW_TENSOR_MAGIC)?;
    if header.dtype != DTYPE_F32LE {
        return Err(Error::UnsupportedFormat(format!("dtype {}", header.dtype)));
    }
    if header.h == 0 || header.w == 0 || header.c == 0 {
        return Err(Error::malformed(path, "zero dimension in header"));
    }
    let count = header
        .h
        .checked_mul(header.w)
        .and_then(|n| n.checked_mul(header.c))
        .ok_or_else(|| Error::malformed(path, "dimension overflow"))?;
    let data = decode_f32_payload(path, payload, count)?;
    Image::new(header.w, header.h, header.c, data, RangeHint::Unspecified)
}

pub fn encode_raw_tensor(img: &Image) -> Vec<u8> {
    let header = RawTensorHeader {
        h: img.height(),
        w: img.width(),
        c: img.channels(),
        dtype: DTYPE_F32LE.to_string(),
    };
    write_framed(RAW_TENSOR_MAGIC, &header, img.data())
}

/// Writes `img` in raw-tensor format. Values are stored as `f32`.
pub fn save_raw_tensor(path: &Path, img: &Image) -> Result<()> {
    write_file(path, &encode_raw_tensor(img))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn decode_raster(path: &Path, bytes: &[u8]) -> Result<Image> {
    use ::image::DynamicImage;

    let decoded = ::image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Decode { path: path.to_path_buf(), source })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(buf) => {
            Image::new(w, h, 1, buf.into_raw().into_iter().map(f64::from).collect(), RangeHint::Byte)
        }
        DynamicImage::ImageLuma16(buf) => {
            Image::new(w, h, 1, buf.into_raw().into_iter().map(f64::from).collect(), RangeHint::Word)
        }
        DynamicImage::ImageRgb8(buf) => {
            Image::new(w, h, 3, buf.into_raw().into_iter().map(f64::from).collect(), RangeHint::Byte)
        }
        other => Err(Error::UnsupportedFormat(format!(
            "{}: pixel layout {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Loads a raster or raw-tensor image, dispatching on the file's magic bytes.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(RAW_TENSOR_MAGIC) {
        decode_raw_tensor(path, &bytes)
    } else {
        decode_raster(path, &bytes)
    }
}

/// Saves an 8-bit grayscale PNG after clamping and rounding intensities.
pub fn save_png_u8(path: &Path, img: &Image) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::InvalidArgument("save_png_u8 expects a single channel".into()));
    }
    let raw: Vec<u8> = img.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    let buf = ::image::GrayImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .ok_or_else(|| Error::InvalidImage("buffer size".into()))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    buf.save(path).map_err(|source| Error::Decode { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_tensor_layout_is_exact() {
        let img = Image::new(2, 2, 1, vec![1.0, -2.5, 0.0, 3.25], RangeHint::Unit).unwrap();
        let bytes = encode_raw_tensor(&img);
        assert_eq!(&bytes[..16], b"UQIH-RAWTENSOR\0\0");
        let header = br#"{"h":2,"w":2,"c":1,"dtype":"f32le"}"#;
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize, header.len());
        assert_eq!(&bytes[20..20 + header.len()], header);
        assert_eq!(&bytes[20 + header.len()..20 + header.len() + 4], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + header.len() + 16);
    }

    #[test]
    fn raw_tensor_rejects_bad_input() {
        let p = Path::new("mem");
        let img = Image::new(2, 1, 1, vec![1.0, 2.0], RangeHint::Unit).unwrap();
        let good = encode_raw_tensor(&img);

        let mut truncated = good.clone();
        truncated.pop();
        assert!(decode_raw_tensor(p, &truncated).is_err());

        let mut nan = good.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_raw_tensor(p, &nan).is_err());

        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(decode_raw_tensor(p, &magic).is_err());

        let header = br#"{"h":4294967296,"w":4294967296,"c":4,"dtype":"f32le"}"#;
        let mut overflow = RAW_TENSOR_MAGIC.to_vec();
        overflow.extend_from_slice(&(header.len() as u32).to_le_bytes());
        overflow.extend_from_slice(header);
        assert!(decode_raw_tensor(p, &overflow).is_err());

        let header = br#"{"h":1,"w":1,"c":1,"dtype":"f64le"}"#;
        let mut dtype = RAW_TENSOR_MAGIC.to_vec();
        dtype.extend_from_slice(&(header.len() as u32).to_le_bytes());
        dtype.extend_from_slice(header);
        dtype.extend_from_slice(&[0; 8]);
        assert!(matches!(decode_raw_tensor(p, &dtype), Err(Error::UnsupportedFormat(_))));
    }
}
