//! 8-bit raster load/store and debug dumps.

use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{FuseError, Result};
use crate::raster::{Grid, Image};

const EXTENSIONS: [&str; 5] = ["png", "tif", "tiff", "bmp", "dib"];

/// Loads an 8-bit grayscale or RGB(A) raster; alpha is dropped.
pub fn load_image(path: &Path) -> Result<Image> {
    let decoded = image::open(path).map_err(|source| FuseError::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let color = decoded.color();
    if color.bytes_per_pixel() / color.channel_count() != 1 {
        return Err(FuseError::UnsupportedBitDepth {
            path: path.to_path_buf(),
            detail: format!("{color:?}; only 8-bit samples are accepted"),
        });
    }
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let to_unit = |v: u8| v as f64 / 255.0;
    match color {
        ColorType::L8 | ColorType::La8 => {
            let gray = decoded.to_luma8();
            Image::new(w, h, 1, gray.into_raw().into_iter().map(to_unit).collect())
        }
        _ => {
            let rgb = decoded.to_rgb8();
            Image::new(w, h, 3, rgb.into_raw().into_iter().map(to_unit).collect())
        }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an image as 8 bits per sample; the format follows the extension.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes: Vec<u8> = img.as_slice().iter().map(|&v| quantize(v)).collect();
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer size")),
        _ => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer size")),
    };
    ensure_parent(path)?;
    dynamic.save(path).map_err(|source| FuseError::Encode {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a real grid as an 8-bit PNG stretched to its own min..max range.
pub fn save_grid_normalized(path: &Path, grid: &Grid<f64>) -> Result<()> {
    let (lo, hi) = grid
        .as_slice()
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(grid.width() as u32, grid.height() as u32, |x, y| {
        let v = grid.get(x as usize, y as usize);
        Luma([quantize(if v.is_finite() { (v - lo) / span } else { 0.0 })])
    });
    ensure_parent(path)?;
    buf.save(path).map_err(|source| FuseError::Encode {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a `[0, 1]` grid without stretching.
pub fn save_unit_grid(path: &Path, grid: &Grid<f64>) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(grid.width() as u32, grid.height() as u32, |x, y| {
        let v = quantize(grid.get(x as usize, y as usize));
        Rgb([v, v, v])
    });
    ensure_parent(path)?;
    buf.save(path).map_err(|source| FuseError::Encode {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

/// Supported rasters in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma};

    #[test]
    fn round_trips_8bit_formats() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(7, 5, |x, y| ((x * 5 + y) * 6) as f64 / 255.0);
        for ext in ["png", "tif", "bmp"] {
            let path = dir.path().join(format!("a.{ext}"));
            save_image(&path, &img).unwrap();
            let back = load_image(&path).unwrap();
            assert_eq!(back.channels(), if ext == "bmp" { back.channels() } else { 1 });
            let gray = crate::raster::to_grayscale(&back).unwrap();
            for (a, b) in gray.as_slice().iter().zip(img.as_slice()) {
                assert!((a - b).abs() < 1e-9, "{ext}");
            }
        }
        let rgb = Image::new(2, 1, 3, vec![1.0, 0.0, 0.0, 0.0, 0.5, 1.0]).unwrap();
        let path = dir.path().join("c.png");
        save_image(&path, &rgb).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.channels(), 3);
        assert_eq!(back.get(1, 0, 1), 128.0 / 255.0);
    }

    #[test]
    fn rejects_16bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(4, 4, |x, _| Luma([x as u16 * 1000]));
        buf.save(&path).unwrap();
        assert!(matches!(load_image(&path), Err(FuseError::UnsupportedBitDepth { .. })));
    }

    #[test]
    fn lists_images_lexicographically() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(2, 2, |_, _| 0.5);
        for name in ["b.png", "a.tif", "c.bmp"] {
            save_image(&dir.path().join(name), &img).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let names: Vec<String> = list_images(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["a.tif", "b.png", "c.bmp"]);
    }
}
