use std::path::Path;

use super::{read_bytes, write_bytes, DisparityFile};
use crate::error::{Error, FormatError, Result};

/// Payload byte order, encoded by the sign of the header scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

/// Grayscale PFM. Rows are stored bottom-up; invalid pixels are written as
/// `+inf` so the mask survives a round trip.
pub fn encode_pfm(d: &DisparityFile, order: ByteOrder) -> Vec<u8> {
    let scale = match order {
        ByteOrder::Little => "-1.0",
        ByteOrder::Big => "1.0",
    };
    let mut out = format!("Pf\n{} {}\n{scale}\n", d.width, d.height).into_bytes();
    out.reserve(d.values.len() * 4);
    for row in (0..d.height).rev() {
        for x in 0..d.width {
            let i = row * d.width + x;
            let v = if d.mask[i] { d.values[i] } else { f32::INFINITY };
            out.extend_from_slice(&match order {
                ByteOrder::Little => v.to_le_bytes(),
                ByteOrder::Big => v.to_be_bytes(),
            });
        }
    }
    out
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize, origin: &str, what: &str) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos || *pos >= bytes.len() {
        return Err(Error::format(origin, FormatError::Header(format!("missing {what}"))));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| Error::format(origin, FormatError::Header(format!("non-ASCII {what}"))))
}

fn dimension(token: &str, origin: &str, what: &str) -> Result<usize> {
    match token.parse::<usize>() {
        Ok(v) if v > 0 && token.bytes().all(|b| b.is_ascii_digit()) => Ok(v),
        _ => Err(Error::format(origin, FormatError::Header(format!("invalid {what} {token:?}")))),
    }
}

pub fn decode_pfm(bytes: &[u8], origin: &str) -> Result<DisparityFile> {
    let mut pos = 0;
    match header_token(bytes, &mut pos, origin, "magic")? {
        "Pf" => {}
        "PF" => return Err(Error::format(origin, FormatError::ColorPfm)),
        other => return Err(Error::format(origin, FormatError::BadMagic(other.to_string()))),
    }
    let width = dimension(header_token(bytes, &mut pos, origin, "width")?, origin, "width")?;
    let height = dimension(header_token(bytes, &mut pos, origin, "height")?, origin, "height")?;
    let scale_token = header_token(bytes, &mut pos, origin, "scale")?;
    let scale: f32 = scale_token
        .parse()
        .ok()
        .filter(|s: &f32| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::format(origin, FormatError::Header(format!("invalid scale {scale_token:?}"))))?;
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let order = if scale < 0.0 { ByteOrder::Little } else { ByteOrder::Big };
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(origin, FormatError::Header("dimensions overflow".into())))?;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(Error::format(origin, FormatError::Truncated { expected, found: payload.len() }));
    }
    if payload.len() > expected {
        return Err(Error::format(origin, FormatError::TrailingBytes(payload.len() - expected)));
    }
    let mut values = vec![0.0f32; width * height];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = match order {
            ByteOrder::Little => f32::from_le_bytes(raw),
            ByteOrder::Big => f32::from_be_bytes(raw),
        };
        let (row, x) = (height - 1 - i / width, i % width);
        values[row * width + x] = v;
    }
    let mask = values.iter().map(|v| v.is_finite()).collect();
    DisparityFile::new(width, height, values, mask)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<DisparityFile> {
    let path = path.as_ref();
    decode_pfm(&read_bytes(path)?, &path.display().to_string())
}

/// Writes little-endian PFM.
pub fn write_pfm(path: impl AsRef<Path>, d: &DisparityFile) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pfm(d, ByteOrder::Little))
}
