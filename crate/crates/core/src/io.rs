//! Image file input and output: PNG or binary PPM in, PNG out.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

fn from_dynamic(img: DynamicImage) -> Result<RasterImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let color = img.color();
    if color.has_alpha() {
        RasterImage::from_u8(w, h, 4, img.to_rgba8().as_raw())
    } else if color.has_color() {
        RasterImage::from_u8(w, h, 3, img.to_rgb8().as_raw())
    } else {
        RasterImage::from_u8(w, h, 1, img.to_luma8().as_raw())
    }
}

/// Decodes PNG or PPM bytes, detected from their signature.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage> {
    let reader = ImageReader::new(Cursor::new(bytes)).with_guessed_format()?;
    match reader.format() {
        Some(ImageFormat::Png | ImageFormat::Pnm) => from_dynamic(reader.decode()?),
        _ => Err(Error::invalid("unsupported image format (expected PNG or PPM)")),
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    decode_image(&bytes)
}

/// Encodes to 8-bit PNG, keeping the channel layout (gray, RGB or RGBA).
pub fn encode_png(image: &RasterImage) -> Result<Vec<u8>> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let bytes = image.to_u8();
    let dynamic = match image.channels() {
        1 => DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("buffer sized")),
        3 => DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("buffer sized")),
        4 => DynamicImage::ImageRgba8(image::RgbaImage::from_raw(w, h, bytes).expect("buffer sized")),
        c => return Err(Error::invalid(format!("cannot encode {c} channels"))),
    };
    let mut out = Cursor::new(Vec::new());
    dynamic.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_png(path: impl AsRef<Path>, image: &RasterImage) -> Result<()> {
    std::fs::write(path, encode_png(image)?)?;
    Ok(())
}

/// Binary PPM (P6) encoding of the RGB channels.
pub fn encode_ppm(image: &RasterImage) -> Vec<u8> {
    let rgb = image.to_rgb();
    let mut out = format!("P6\n{} {}\n255\n", rgb.width(), rgb.height()).into_bytes();
    out.extend(rgb.to_u8());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_per_layout() {
        for ch in [1, 3, 4] {
            let bytes: Vec<u8> = (0..5 * 4 * ch).map(|i| (i * 13 % 256) as u8).collect();
            let img = RasterImage::from_u8(5, 4, ch, &bytes).unwrap();
            let back = decode_image(&encode_png(&img).unwrap()).unwrap();
            assert_eq!(back, img);
        }
    }

    #[test]
    fn ppm_decodes() {
        let bytes: Vec<u8> = (0..3 * 2 * 3).map(|i| (i * 29 % 256) as u8).collect();
        let img = RasterImage::from_u8(3, 2, 3, &bytes).unwrap();
        assert_eq!(decode_image(&encode_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(decode_image(b"definitely not an image").is_err());
    }
}
