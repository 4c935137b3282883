use std::fs;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use super::Sample;
use crate::labels::{ClassId, Mask};
use crate::numerics::Tensor;
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

fn ingest(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_image(path: &Path) -> Result<image::DynamicImage> {
    let bytes = fs::read(path).map_err(|e| ingest(path, e.to_string()))?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Pnm).map_err(|e| ingest(path, e.to_string()))
}

/// Reads a `manifest.txt` directory of PPM images and PGM label masks.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let manifest = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest).map_err(|e| ingest(&manifest, e.to_string()))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| ingest(&manifest, "missing classes=<N> header"))?;
    let classes: usize = header
        .strip_prefix("classes=")
        .and_then(|n| n.trim().parse().ok())
        .ok_or_else(|| ingest(&manifest, format!("bad header {header:?}")))?;
    let mut out = Vec::new();
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [id, img_name, mask_name] = parts[..] else {
            return Err(ingest(&manifest, format!("expected `<id> <image> <mask>`, got {line:?}")));
        };
        let (img_path, mask_path) = (dir.join(img_name), dir.join(mask_name));
        let img = match read_image(&img_path)? {
            image::DynamicImage::ImageRgb8(i) => i,
            _ => return Err(ingest(&img_path, "expected an 8-bit RGB (P6) image")),
        };
        let mask = match read_image(&mask_path)? {
            image::DynamicImage::ImageLuma8(m) => m,
            _ => return Err(ingest(&mask_path, "expected an 8-bit grey (P5) mask")),
        };
        if img.dimensions() != mask.dimensions() {
            return Err(ingest(
                &mask_path,
                format!("mask is {:?} but image is {:?}", mask.dimensions(), img.dimensions()),
            ));
        }
        if let Some(bad) = mask.as_raw().iter().find(|&&v| v as usize > classes) {
            return Err(ingest(&mask_path, format!("label {bad} exceeds the {classes} declared classes")));
        }
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        out.push(Sample {
            id: id.to_string(),
            image: Tensor::new(vec![h as usize, w as usize, 3], data)?,
            mask: Mask::new(h as usize, w as usize, mask.as_raw().iter().map(|&v| ClassId::from(v)).collect())?,
        });
    }
    Ok(out)
}

/// Writes samples in the layout [`load_dataset`] reads. Pixel values are
/// quantised to 8 bits.
pub fn write_dataset(dir: &Path, samples: &[Sample], num_classes: usize) -> Result<()> {
    if num_classes > u8::MAX as usize {
        return Err(Error::InvalidInput("8-bit masks hold at most 255 classes".into()));
    }
    fs::create_dir_all(dir)?;
    let mut manifest = format!("classes={num_classes}\n");
    for s in samples {
        let shape = s.image.shape();
        if shape.len() != 3 || shape[2] != 3 || shape[0] != s.mask.height() || shape[1] != s.mask.width() {
            return Err(Error::InvalidInput(format!("sample {} is not an RGB image matching its mask", s.id)));
        }
        let (h, w) = (shape[0] as u32, shape[1] as u32);
        let px: Vec<u8> = s.image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let labels = s
            .mask
            .labels()
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| Error::InvalidInput(format!("label {l} does not fit in 8 bits"))))
            .collect::<Result<Vec<u8>>>()?;
        let (img_name, mask_name) = (format!("{}.ppm", s.id), format!("{}.pgm", s.id));
        write_pnm(&dir.join(&img_name), &px, w, h, PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8)?;
        write_pnm(&dir.join(&mask_name), &labels, w, h, PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8)?;
        manifest.push_str(&format!("{} {img_name} {mask_name}\n", s.id));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn write_pnm(path: &Path, data: &[u8], w: u32, h: u32, subtype: PnmSubtype, color: ExtendedColorType) -> Result<()> {
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(subtype)
        .write_image(data, w, h, color)
        .map_err(|e| ingest(path, e.to_string()))?;
    fs::write(path, buf)?;
    Ok(())
}
