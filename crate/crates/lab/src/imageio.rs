//! Lossless PNG codec for [`RgbImage`].

use std::io::Cursor;
use std::path::Path;

use damage_core::RgbImage;
use image::{ImageFormat, RgbImage as Buffer};

use crate::error::{IoContext, LabError, Result};

pub fn read_png(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).at(path)?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| LabError::format(path, e))?;
    let rgb = img.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok(RgbImage::from_raw(w, h, rgb.into_raw())?)
}

/// PNG bytes of `img`. The encoder settings are fixed so equal images give
/// equal bytes.
pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let buf = Buffer::from_raw(img.width() as u32, img.height() as u32, img.as_raw().to_vec())
        .expect("raster length matches its dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    std::fs::write(path, encode_png(img)).at(path)
}
