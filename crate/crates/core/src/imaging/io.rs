use super::{ImagingError, RasterImage};
use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};
use std::io::Cursor;
use std::path::Path;

pub fn load_image(path: &Path) -> Result<RasterImage, ImagingError> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ImagingError::NotFound(path.to_path_buf()),
        _ => ImagingError::IoFailure(e),
    })?;
    decode_image(&bytes)
}

/// Decodes PNG or binary PGM/PPM bytes. Sources with 16-bit samples are rejected;
/// an alpha channel is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage, ImagingError> {
    let format = image::guess_format(bytes)
        .map_err(|_| ImagingError::UnsupportedFormat("unrecognised image signature".into()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(ImagingError::UnsupportedFormat(format!("{format:?}")));
    }
    let decoded = image::load_from_memory_with_format(bytes, format).map_err(|e| match e {
        image::ImageError::Unsupported(u) => ImagingError::UnsupportedFormat(u.to_string()),
        other => ImagingError::CorruptImage(other.to_string()),
    })?;
    let (w, h) = (decoded.width(), decoded.height());
    let (channels, pixels) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        DynamicImage::ImageLumaA8(buf) => (1, buf.into_raw().chunks_exact(2).map(|p| p[0]).collect()),
        DynamicImage::ImageRgba8(buf) => (
            3,
            buf.into_raw().chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        ),
        other => {
            return Err(ImagingError::UnsupportedFormat(format!(
                "{:?} samples (only 8-bit gray or RGB)",
                other.color()
            )))
        }
    };
    RasterImage::new(w, h, channels, pixels).map_err(|e| ImagingError::CorruptImage(e.to_string()))
}

/// Writes PNG for `.png`, otherwise binary PGM (1 channel) or PPM (3 channels).
pub fn save_image(img: &RasterImage, path: &Path) -> Result<(), ImagingError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "png" => encode_png(img)?,
        "pgm" | "ppm" | "pnm" => encode_pnm(img)?,
        other => return Err(ImagingError::UnsupportedFormat(format!("cannot write `.{other}`"))),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>, ImagingError> {
    let mut out = Vec::new();
    PngEncoder::new(Cursor::new(&mut out))
        .write_image(img.pixels(), img.width(), img.height(), color_type(img))
        .map_err(|e| ImagingError::IoFailure(std::io::Error::other(e)))?;
    Ok(out)
}

fn encode_pnm(img: &RasterImage) -> Result<Vec<u8>, ImagingError> {
    let subtype = match img.channels() {
        1 => PnmSubtype::Graymap(SampleEncoding::Binary),
        _ => PnmSubtype::Pixmap(SampleEncoding::Binary),
    };
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(img.pixels(), img.width(), img.height(), color_type(img))
        .map_err(|e| ImagingError::IoFailure(std::io::Error::other(e)))?;
    Ok(out)
}

fn color_type(img: &RasterImage) -> ExtendedColorType {
    match img.channels() {
        1 => ExtendedColorType::L8,
        _ => ExtendedColorType::Rgb8,
    }
}
