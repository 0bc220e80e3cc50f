use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};

use super::{read_bytes, write_bytes};
use crate::error::{Error, FormatError, Result};
use crate::tensor::{Shape, Tensor};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Decodes an 8-bit RGB PNG or PPM into a standardised `(1, 3, h, w)`
/// tensor: `(v / 255 - mean) / std` per channel.
pub fn decode_image(bytes: &[u8], origin: &str) -> Result<Tensor> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::format(origin, FormatError::Decode(e.to_string())))?;
    let DynamicImage::ImageRgb8(rgb) = img else {
        return Err(Error::format(origin, FormatError::ImageLayout(format!("{:?}", img.color()))));
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        (raw[(y * w + x) * 3 + c] as f32 / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c]
    }))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_image(&read_bytes(path)?, &path.display().to_string())
}

/// Loads a left/right pair; both views must share one size.
pub fn load_image_pair(left: impl AsRef<Path>, right: impl AsRef<Path>) -> Result<(Tensor, Tensor)> {
    let l = load_image(left.as_ref())?;
    let r = load_image(right.as_ref())?;
    let (ls, rs) = (l.shape(), r.shape());
    if (ls.h, ls.w) != (rs.h, rs.w) {
        return Err(Error::shape(
            "load_image_pair",
            format!(
                "left image {} is {}x{} but right image {} is {}x{}",
                left.as_ref().display(),
                ls.w,
                ls.h,
                right.as_ref().display(),
                rs.w,
                rs.h
            ),
        ));
    }
    Ok((l, r))
}

/// Reads a grayscale or RGB image as a region mask: nonzero pixels are
/// inside. Returns `(width, height, mask)`.
pub fn read_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let path = path.as_ref();
    let img = image::load_from_memory(&read_bytes(path)?)
        .map_err(|e| Error::format(path.display().to_string(), FormatError::Decode(e.to_string())))?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((w, h, img.into_raw().into_iter().map(|v| v != 0).collect()))
}

/// Writes a single-channel map in `[0, 1]` as an 8-bit PNG, quantised with
/// round-half-up.
pub fn write_gray8_png(path: impl AsRef<Path>, map: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let s = map.shape();
    if s.c != 1 {
        return Err(Error::shape("write_gray8_png", format!("expected one channel, got {s}")));
    }
    let raw = map.plane(0, 0).iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8).collect();
    let img = GrayImage::from_raw(s.w as u32, s.h as u32, raw).expect("plane size matches shape");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::format(path.display().to_string(), FormatError::Decode(e.to_string())))?;
    write_bytes(path, out.get_ref())
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn encode(img: &RgbImage, format: ImageFormat) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, format).unwrap();
        out.into_inner()
    }

    #[test]
    fn constant_image_standardises_per_channel() {
        let img = RgbImage::from_pixel(5, 4, image::Rgb([128, 128, 128]));
        let t = decode_image(&encode(&img, ImageFormat::Png), "t").unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 4, 5));
        for c in 0..3 {
            let want = (128.0 / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
            assert!(t.plane(0, c).iter().all(|&v| v == want));
        }
    }

    #[test]
    fn png_and_ppm_agree() {
        let img = RgbImage::from_fn(7, 3, |x, y| image::Rgb([(x * 30) as u8, (y * 80) as u8, (x * y) as u8]));
        let png = decode_image(&encode(&img, ImageFormat::Png), "png").unwrap();
        let ppm = decode_image(&encode(&img, ImageFormat::Pnm), "ppm").unwrap();
        assert_eq!(png, ppm);
    }

    #[test]
    fn non_rgb_rejected() {
        let mut out = std::io::Cursor::new(Vec::new());
        DynamicImage::new_luma8(2, 2).write_to(&mut out, ImageFormat::Png).unwrap();
        assert!(matches!(
            decode_image(out.get_ref(), "t"),
            Err(Error::Format { kind: FormatError::ImageLayout(_), .. })
        ));
    }
}
