use std::io::Cursor;

use facepoison_core::eval::Recompressor;
use facepoison_core::{Error, Image, Result};
use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageFormat};

/// Baseline JPEG round trip.
#[derive(Debug, Clone, Copy, Default)]
pub struct JpegCodec;

impl Recompressor for JpegCodec {
    fn recompress(&self, image: &Image, quality: u8) -> Result<Image> {
        image.ensure_rgb()?;
        let mut buf = Vec::new();
        JpegEncoder::new_with_quality(&mut buf, quality)
            .encode(image.data(), image.width() as u32, image.height() as u32, ExtendedColorType::Rgb8)
            .map_err(|e| Error::Input(format!("jpeg encode: {e}")))?;
        let decoded = image::load(Cursor::new(buf), ImageFormat::Jpeg)
            .map_err(|e| Error::Input(format!("jpeg decode: {e}")))?
            .to_rgb8();
        Image::from_raw(image.width(), image.height(), 3, decoded.into_raw())
    }
}
