use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, RasterImage};

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads any supported raster as 8-bit RGB.
pub fn load_image(path: &Path) -> Result<RasterImage> {
    let img = image::open(path).map_err(image_err(path))?.to_rgb8();
    let (w, h) = img.dimensions();
    RasterImage::new(w as usize, h as usize, img.into_raw())
}

/// Reads a mask; any nonzero grey level is foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(image_err(path))?.to_luma8();
    let (w, h) = img.dimensions();
    BinaryMask::new(w as usize, h as usize, img.into_raw().into_iter().map(|v| v != 0).collect())
}

pub fn save_image(image: &RasterImage, path: &Path) -> Result<()> {
    let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, image.data().to_vec())
        .expect("length checked by RasterImage");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(image_err(path))
}

/// Writes a single-channel 0/255 PNG.
pub fn save_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let data = mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data)
        .expect("length checked by BinaryMask");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(image_err(path))
}
