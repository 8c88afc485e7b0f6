//! PNG image and mask I/O. Images live internally in [-1, 1]; masks threshold
//! at >127 on the 8-bit grayscale scale.

use super::CompositeSample;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use image::{GrayImage, ImageReader, RgbImage};
use std::path::Path;

/// [-1,1] float -> 8-bit, round-to-nearest.
pub fn to_unit_byte(v: f32) -> u8 {
    (((v + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0)) as u8
}

/// 8-bit -> [-1,1] float.
pub fn from_unit_byte(b: u8) -> f32 {
    f32::from(b) / 255.0 * 2.0 - 1.0
}

/// Load an 8-bit RGB PNG as a (1,3,H,W) tensor in [-1,1].
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let img = ImageReader::open(path)?
        .decode()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let rgb: RgbImage = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0f32; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let p = rgb.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                data[c * h * w + y * w + x] = from_unit_byte(p.0[c]);
            }
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data)
}

/// Save a (1,3,H,W) tensor in [-1,1] as an 8-bit RGB PNG.
pub fn save_image(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::Image(format!("save_image expects 1x3xHxW, got {s}")));
    }
    let mut img = RgbImage::new(s.w as u32, s.h as u32);
    for y in 0..s.h {
        for x in 0..s.w {
            let px: [u8; 3] =
                core::array::from_fn(|c| to_unit_byte(t.data()[c * s.plane() + y * s.w + x]));
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Load a grayscale PNG as a binary (1,1,H,W) mask: value > 127 -> 1.
pub fn load_mask(path: &Path) -> Result<Tensor<f32>> {
    let img = ImageReader::open(path)?
        .decode()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let gray: GrayImage = img.into_luma8();
    let (w, h) = gray.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            if gray.get_pixel(x as u32, y as u32).0[0] > 127 {
                data[y * w + x] = 1.0;
            }
        }
    }
    Tensor::from_vec(Shape::new(1, 1, h, w), data)
}

/// Save a (1,1,H,W) binary mask as grayscale PNG (1 -> 255).
pub fn save_mask(path: &Path, m: &Tensor<f32>) -> Result<()> {
    let s = m.shape();
    let mut img = GrayImage::new(s.w as u32, s.h as u32);
    for y in 0..s.h {
        for x in 0..s.w {
            let v = if m.data()[y * s.w + x] != 0.0 { 255u8 } else { 0u8 };
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Load user-supplied triples `<stem>_comp.png`, `<stem>_mask.png`,
/// `<stem>_gt.png` from a directory, sorted by stem.
pub fn load_triples_dir(dir: &Path) -> Result<Vec<CompositeSample>> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix("_comp.png") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Dataset(format!(
            "no *_comp.png files in {}",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(stems.len());
    for stem in stems {
        let composite = load_image(&dir.join(format!("{stem}_comp.png")))?;
        let mask = load_mask(&dir.join(format!("{stem}_mask.png")))?;
        let ground_truth = load_image(&dir.join(format!("{stem}_gt.png")))?;
        let s = composite.shape();
        if ground_truth.shape() != s || mask.shape().h != s.h || mask.shape().w != s.w {
            return Err(Error::Dataset(format!("size mismatch in triple {stem}")));
        }
        out.push(CompositeSample { composite, mask, ground_truth });
    }
    Ok(out)
}

/// Write samples as PNG triples (the adapter's on-disk format).
pub fn save_sample_dir(dir: &Path, samples: &[CompositeSample]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let width = samples.len().to_string().len().max(3);
    for (i, s) in samples.iter().enumerate() {
        let stem = format!("{i:0width$}");
        save_image(&dir.join(format!("{stem}_comp.png")), &s.composite)?;
        save_mask(&dir.join(format!("{stem}_mask.png")), &s.mask)?;
        save_image(&dir.join(format!("{stem}_gt.png")), &s.ground_truth)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping_round_trips_within_one_step() {
        for b in [0u8, 1, 64, 127, 128, 200, 255] {
            let v = from_unit_byte(b);
            assert_eq!(to_unit_byte(v), b);
        }
        // arbitrary values round-trip within 1/255 on the unit scale
        for i in 0..100 {
            let v = -1.0 + 2.0 * (i as f32) / 99.0;
            let back = from_unit_byte(to_unit_byte(v));
            assert!((back - v).abs() <= 2.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn png_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut rng = crate::rng::rng_from(95, "io", 0);
        // quantize first so the round trip is exact
        let t = Tensor::<f32>::rand_uniform(Shape::new(1, 3, 9, 7), -1.0, 1.0, &mut rng)
            .map(|v| from_unit_byte(to_unit_byte(v)));
        save_image(&path, &t).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        let a: Vec<u32> = t.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn mask_threshold_is_strictly_above_127() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mut img = GrayImage::new(2, 1);
        img.put_pixel(0, 0, image::Luma([127]));
        img.put_pixel(1, 0, image::Luma([128]));
        img.save(&path).unwrap();
        let m = load_mask(&path).unwrap();
        assert_eq!(m.data(), &[0.0, 1.0]);
    }

    #[test]
    fn triples_round_trip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let data = crate::data::synth_dataset(3, 16, 23, &crate::data::JitterSpec::strong());
        save_sample_dir(dir.path(), &data).unwrap();
        let back = load_triples_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.mask.data(), b.mask.data());
            // pixel data round-trips through 8-bit quantization
            for (x, y) in a.composite.data().iter().zip(b.composite.data()) {
                assert!((x - y).abs() <= 2.0 / 255.0 + 1e-6);
            }
        }
    }
}
