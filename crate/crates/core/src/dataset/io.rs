//! Raster file I/O. Images decode to three-channel `[0, 1]` grids; masks
//! are single-channel 8-bit PNGs with 0 for background and 255 for lung.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::DynamicImage;

use crate::grid::{BinaryMask, ImageGrid};
use crate::{Error, Result};

/// Largest value of a 12-bit radiograph stored in a 16-bit container.
const TWELVE_BIT_MAX: f32 = 4095.0;

fn decode(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let reader = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Loads an image as a single-channel grid, averaging colour channels.
pub fn load_grayscale(path: &Path) -> Result<ImageGrid> {
    Ok(load_image(path)?.to_grayscale())
}

/// Loads a PNG or JPEG as a three-channel grid; grayscale files are
/// replicated into all three channels.
pub fn load_image(path: &Path) -> Result<ImageGrid> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let has_color = img.color().has_color();
    let sixteen_bit = img.color().bytes_per_pixel() / img.color().channel_count() == 2;

    let gray_or_rgb: (usize, Vec<f32>) = if sixteen_bit {
        let (c, raw) = if has_color {
            (3, img.to_rgb16().into_raw())
        } else {
            (1, img.to_luma16().into_raw())
        };
        let max = raw.iter().copied().max().unwrap_or(0);
        let scale = if max as f32 <= TWELVE_BIT_MAX {
            TWELVE_BIT_MAX
        } else {
            u16::MAX as f32
        };
        (c, raw.into_iter().map(|v| v as f32 / scale).collect())
    } else if has_color {
        (
            3,
            img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        )
    } else {
        (
            1,
            img.to_luma8()
                .into_raw()
                .into_iter()
                .map(|v| v as f32 / 255.0)
                .collect(),
        )
    };

    let (c, interleaved) = gray_or_rgb;
    let plane = h * w;
    let mut planar = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for ch in 0..3 {
            planar[ch * plane + i] = interleaved[i * c + ch.min(c - 1)];
        }
    }
    ImageGrid::new(3, h, w, planar)
}

/// Any nonzero pixel counts as foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = decode(path)?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| (v != 0) as u8).collect();
    BinaryMask::new(h as usize, w as usize, data)
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    bytes: &[u8],
    note: Option<&str>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e.to_string()));
    if let Some(note) = note {
        encoder
            .add_text_chunk("lednet".to_string(), note.to_string())
            .map_err(to_io)?;
    }
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Writes 8-bit grayscale (one channel) or RGB (three channels) PNG.
/// `note` is stored in a tEXt chunk.
pub fn save_image(path: &Path, image: &ImageGrid, note: Option<&str>) -> Result<()> {
    let (c, h, w) = image.dims();
    let color = match c {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::Parameter(format!("cannot save a {c}-channel image"))),
    };
    let plane = h * w;
    let mut bytes = Vec::with_capacity(c * plane);
    for i in 0..plane {
        for ch in 0..c {
            bytes.push((image.data()[ch * plane + i] * 255.0).round() as u8);
        }
    }
    write_png(path, w, h, color, &bytes, note)
}

pub fn save_mask(path: &Path, mask: &BinaryMask, note: Option<&str>) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    write_png(
        path,
        mask.width(),
        mask.height(),
        png::ColorType::Grayscale,
        &bytes,
        note,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_file_becomes_three_identical_channels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let gray = ImageGrid::from_fn(1, 64, 64, |_, y, x| if (y + x) % 3 == 0 { 1.0 } else { 0.0 });
        save_image(&path, &gray, Some("seed=1")).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.dims(), (3, 64, 64));
        assert_eq!(back.plane(0), back.plane(1));
        assert_eq!(back.plane(1), back.plane(2));
        assert_eq!(back.plane(0), gray.data());
        assert!(back.data().contains(&1.0) && back.data().contains(&0.0));
    }

    #[test]
    fn sixteen_bit_twelve_bit_range_is_scaled_by_4095() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("jsrt.png");
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 1, vec![4095u16, 0]).unwrap();
        buf.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(img.plane(0), &[1.0, 0.0]);
    }

    #[test]
    fn mask_round_trip_and_nonzero_foreground() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let m = BinaryMask::from_fn(5, 7, |y, x| y == x);
        save_mask(&path, &m, None).unwrap();
        assert_eq!(load_mask(&path).unwrap(), m);

        let path = dir.path().join("odd.png");
        let buf = image::GrayImage::from_raw(3, 1, vec![0, 1, 200]).unwrap();
        buf.save(&path).unwrap();
        assert_eq!(load_mask(&path).unwrap().data(), &[0, 1, 1]);
    }

    #[test]
    fn missing_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        match load_image(&missing) {
            Err(Error::Io { path, .. }) => assert_eq!(path, missing),
            other => panic!("{other:?}"),
        }
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not an image").unwrap();
        assert!(matches!(load_image(&junk), Err(Error::Format { .. })));
    }
}
