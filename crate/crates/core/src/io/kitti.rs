use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use super::{read_bytes, write_bytes, DisparityFile};
use crate::error::{Error, FormatError, Result};

/// Stored units per pixel of disparity.
pub const KITTI_SCALE: f32 = 256.0;
/// Largest encodable disparity.
pub const KITTI_MAX: f32 = u16::MAX as f32 / KITTI_SCALE;

/// 16-bit grayscale PNG holding `round(d * 256)`, with 0 reserved for
/// missing data. Invalid, negative and NaN pixels are written as 0; valid
/// values that would round to 0 are stored as 1.
pub fn encode_kitti_png(d: &DisparityFile) -> Result<Vec<u8>> {
    let mut raw = Vec::with_capacity(d.values.len());
    for (i, (&v, &valid)) in d.values.iter().zip(&d.mask).enumerate() {
        let stored = if !valid || v.is_nan() || v < 0.0 {
            0
        } else if v > KITTI_MAX {
            return Err(Error::format(
                "kitti png",
                FormatError::OutOfRange { value: v, x: i % d.width, y: i / d.width },
            ));
        } else {
            ((v * KITTI_SCALE).round() as u16).max(1)
        };
        raw.push(stored);
    }
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(d.width as u32, d.height as u32, raw).expect("raster size checked on construction");
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma16(img)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::format("kitti png", FormatError::Decode(e.to_string())))?;
    Ok(out.into_inner())
}

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];

/// Walks every chunk, checking its CRC, through to a well-formed `IEND`.
fn check_chunks(bytes: &[u8], origin: &str) -> Result<()> {
    let bad = |what: String| Error::format(origin, FormatError::Decode(what));
    if bytes.len() < 8 || bytes[..8] != PNG_SIGNATURE {
        return Err(bad("missing PNG signature".into()));
    }
    let mut at = 8;
    loop {
        let Some(head) = bytes.get(at..at + 8) else {
            return Err(bad(format!("truncated chunk header at byte {at}")));
        };
        let len = u32::from_be_bytes(head[..4].try_into().unwrap()) as usize;
        let Some(body) = bytes.get(at + 4..at + 8 + len) else {
            return Err(bad(format!("chunk at byte {at} runs past the end")));
        };
        let Some(stored) = bytes.get(at + 8 + len..at + 12 + len) else {
            return Err(bad(format!("chunk at byte {at} lacks a CRC")));
        };
        let stored = u32::from_be_bytes(stored.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::format(origin, FormatError::Checksum { stored, computed }));
        }
        at += 12 + len;
        if &head[4..] == b"IEND" {
            if len != 0 || at != bytes.len() {
                return Err(bad("malformed IEND chunk".into()));
            }
            return Ok(());
        }
    }
}

pub fn decode_kitti_png(bytes: &[u8], origin: &str) -> Result<DisparityFile> {
    check_chunks(bytes, origin)?;
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| Error::format(origin, FormatError::Decode(e.to_string())))?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::format(origin, FormatError::KittiLayout(format!("{:?}", img.color()))));
    };
    let (width, height) = (buf.width() as usize, buf.height() as usize);
    let raw = buf.into_raw();
    let mask: Vec<bool> = raw.iter().map(|&s| s != 0).collect();
    let values = raw.iter().map(|&s| s as f32 / KITTI_SCALE).collect();
    DisparityFile::new(width, height, values, mask)
}

pub fn read_kitti_png(path: impl AsRef<Path>) -> Result<DisparityFile> {
    let path = path.as_ref();
    decode_kitti_png(&read_bytes(path)?, &path.display().to_string())
}

pub fn write_kitti_png(path: impl AsRef<Path>, d: &DisparityFile) -> Result<()> {
    let bytes = encode_kitti_png(d).map_err(|e| match e {
        Error::Format { kind, .. } => Error::format(path.as_ref().display().to_string(), kind),
        other => other,
    })?;
    write_bytes(path.as_ref(), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode_raw(width: u32, height: u32, raw: Vec<u16>) -> Vec<u8> {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(width, height, raw).unwrap();
        let mut out = Cursor::new(Vec::new());
        DynamicImage::ImageLuma16(img).write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    #[test]
    fn stored_values_decode_by_definition() {
        let d = decode_kitti_png(&encode_raw(2, 1, vec![256, 0]), "t").unwrap();
        assert_eq!(d.values, [1.0, 0.0]);
        assert_eq!(d.mask, [true, false]);
    }

    #[test]
    fn write_policy() {
        let d = DisparityFile::new(4, 1, vec![-1.0, 0.0, 0.001, 255.99], vec![true, true, true, false]).unwrap();
        let back = decode_kitti_png(&encode_kitti_png(&d).unwrap(), "t").unwrap();
        assert_eq!(back.mask, [false, true, true, false]);
        assert_eq!(back.values[1], 1.0 / 256.0);
        let over = DisparityFile::dense(1, 1, vec![256.0]).unwrap();
        assert!(matches!(encode_kitti_png(&over), Err(Error::Format { kind: FormatError::OutOfRange { .. }, .. })));
        assert!(encode_kitti_png(&DisparityFile::dense(1, 1, vec![KITTI_MAX]).unwrap()).is_ok());
    }

    #[test]
    fn eight_bit_and_rgb_rejected() {
        let mut out = Cursor::new(Vec::new());
        DynamicImage::new_luma8(2, 2).write_to(&mut out, ImageFormat::Png).unwrap();
        assert!(matches!(
            decode_kitti_png(out.get_ref(), "t"),
            Err(Error::Format { kind: FormatError::KittiLayout(_), .. })
        ));
        let mut out = Cursor::new(Vec::new());
        DynamicImage::new_rgb16(2, 2).write_to(&mut out, ImageFormat::Png).unwrap();
        assert!(decode_kitti_png(out.get_ref(), "t").is_err());
    }
}
