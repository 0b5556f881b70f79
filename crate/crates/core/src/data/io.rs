//! Lossless PNG reading and writing.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

fn decode(path: &Path) -> Result<DynamicImage> {
    let fail = |reason: String| Error::DecodeFailure {
        path: path.to_path_buf(),
        reason,
    };
    let reader = image::ImageReader::open(path)?
        .with_guessed_format()
        .map_err(|e| fail(e.to_string()))?;
    reader.decode().map_err(|e| fail(e.to_string()))
}

/// Reads an 8- or 16-bit image as RGB in [0, 1]. Grayscale files are
/// replicated to three channels.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let img = decode(path.as_ref())?;
    let is16 = matches!(
        img.color(),
        image::ColorType::L16 | image::ColorType::La16 | image::ColorType::Rgb16 | image::ColorType::Rgba16
    );
    let (w, h) = (img.width() as usize, img.height() as usize);
    if is16 {
        let rgb = img.to_rgb16();
        Ok(ImageTensor::from_fn(h, w, 3, |y, x, c| {
            rgb.get_pixel(x as u32, y as u32)[c] as f64 / 65535.0
        }))
    } else {
        let rgb = img.to_rgb8();
        Ok(ImageTensor::from_fn(h, w, 3, |y, x, c| {
            rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        }))
    }
}

/// Reads a mask as a single channel of exact 0.0 / 1.0, thresholded at 0.5.
pub fn read_mask(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let img = decode(path.as_ref())?;
    let luma = img.to_luma16();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    Ok(ImageTensor::from_fn(h, w, 1, |y, x, _| {
        let v = luma.get_pixel(x as u32, y as u32)[0] as f64 / 65535.0;
        if v >= 0.5 {
            1.0
        } else {
            0.0
        }
    }))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PNG: RGB for 3 channels, grayscale for 1.
pub fn write_image(path: impl AsRef<Path>, image: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let (h, w, c) = image.shape();
    let encode_err = |e: image::ImageError| Error::Io(std::io::Error::other(e.to_string()));
    match c {
        3 => {
            let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                let (x, y) = (x as usize, y as usize);
                Rgb([
                    to_u8(image.get(y, x, 0)),
                    to_u8(image.get(y, x, 1)),
                    to_u8(image.get(y, x, 2)),
                ])
            });
            buf.save_with_format(path, image::ImageFormat::Png)
                .map_err(encode_err)
        }
        1 => {
            let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                Luma([to_u8(image.get(y as usize, x as usize, 0))])
            });
            buf.save_with_format(path, image::ImageFormat::Png)
                .map_err(encode_err)
        }
        other => Err(Error::UnsupportedImageShape {
            height: h,
            width: w,
            channels: other,
            reason: "only 1 or 3 channels can be written".into(),
        }),
    }
}

/// Rounds every value to the nearest 8-bit level, as `write_image` would.
pub fn quantize_8bit(image: &ImageTensor) -> ImageTensor {
    let (h, w, c) = image.shape();
    ImageTensor::from_fn(h, w, c, |y, x, ch| to_u8(image.get(y, x, ch)) as f64 / 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eight_bit_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let img = ImageTensor::from_fn(9, 7, 3, |_, _, _| rng.random_range(0..=255u8) as f64 / 255.0);
        let p = dir.path().join("a.png");
        write_image(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
    }

    #[test]
    fn truncated_file_fails_to_decode() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        write_image(&p, &ImageTensor::filled(16, 16, 3, 0.5)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(read_image(&p), Err(Error::DecodeFailure { .. })));
    }

    #[test]
    fn sixteen_bit_mask_is_binarized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let buf = ImageBuffer::from_fn(4, 1, |x, _| Luma([[0u16, 30000, 40000, 65535][x as usize]]));
        buf.save_with_format(&p, image::ImageFormat::Png).unwrap();
        let m = read_mask(&p).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 1.0, 1.0]);
    }
}
