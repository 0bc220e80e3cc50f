//! Disparity and image file formats.

mod image;
mod kitti;
mod pfm;

pub use self::image::{
    decode_image, load_image, load_image_pair, read_mask, write_gray8_png, IMAGENET_MEAN, IMAGENET_STD,
};
pub use kitti::{decode_kitti_png, encode_kitti_png, read_kitti_png, write_kitti_png, KITTI_MAX, KITTI_SCALE};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm, ByteOrder};

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Dense disparity raster with a validity mask. Invalid pixels hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityFile {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    pub mask: Vec<bool>,
}

impl DisparityFile {
    /// All pixels valid.
    pub fn dense(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(width, height, values, mask)
    }

    pub fn new(width: usize, height: usize, mut values: Vec<f32>, mut mask: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height || mask.len() != values.len() {
            return Err(Error::shape(
                "disparity",
                format!("{width}x{height} raster with {} values and {} mask entries", values.len(), mask.len()),
            ));
        }
        for (v, m) in values.iter_mut().zip(mask.iter_mut()) {
            if !v.is_finite() {
                *m = false;
            }
            if !*m {
                *v = 0.0;
            }
        }
        Ok(DisparityFile { width, height, values, mask })
    }

    /// Takes the first batch entry of a single-channel map.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.c != 1 {
            return Err(Error::shape("disparity", format!("expected one channel, got {s}")));
        }
        Self::dense(s.w, s.h, t.plane(0, 0).to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(Shape::new(1, 1, self.height, self.width), self.values.clone())
            .expect("raster size checked on construction")
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Reads a `.pfm` or KITTI `.png` disparity file, chosen by extension.
pub fn read_disparity(path: impl AsRef<Path>) -> Result<DisparityFile> {
    let path = path.as_ref();
    match extension(path).as_deref() {
        Some("pfm") => read_pfm(path),
        Some("png") => read_kitti_png(path),
        _ => {
            Err(Error::InvalidArgument(format!("{}: unknown disparity format, expected .pfm or .png", path.display())))
        }
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
