//! Image and JSON file helpers. Protected outputs are always PNG.

use std::fs;
use std::path::{Path, PathBuf};

use facepoison_core::Image;
use image::{ExtendedColorType, ImageFormat};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{AppError, AppResult};

pub const PNG_MAGIC: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

pub fn read_image(path: &Path) -> AppResult<Image> {
    let img = image::open(path).map_err(|source| AppError::Image { path: path.to_path_buf(), source })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(Image::from_raw(w as usize, h as usize, 3, rgb.into_raw())?)
}

fn has_png_extension(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Writes `image` losslessly. Any other extension is refused.
pub fn write_png(path: &Path, image: &Image) -> AppResult<()> {
    if !has_png_extension(path) {
        return Err(AppError::Usage(format!("{}: protected images are written as .png only", path.display())));
    }
    ensure_parent(path)?;
    image::save_buffer_with_format(
        path,
        image.data(),
        image.width() as u32,
        image.height() as u32,
        ExtendedColorType::Rgb8,
        ImageFormat::Png,
    )
    .map_err(|source| AppError::Image { path: path.to_path_buf(), source })
}

/// True when the file starts with the PNG signature.
pub fn is_png(path: &Path) -> AppResult<bool> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    Ok(bytes.starts_with(&PNG_MAGIC))
}

/// PNG files in `dir`, ordered by file name.
pub fn list_pngs(dir: &Path) -> AppResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| AppError::io(dir, e))? {
        let path = entry.map_err(|e| AppError::io(dir, e))?.path();
        if path.is_file() && has_png_extension(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn ensure_parent(path: &Path) -> AppResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| AppError::io(p, e)),
        _ => Ok(()),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::format(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| AppError::format(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// `dir/name.ext` next to `path`, e.g. the sidecar of an output image.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    path.with_file_name(format!("{stem}{suffix}"))
}
