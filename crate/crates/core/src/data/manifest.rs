use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{mask_to_bbox, BBox};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One manifest line. Relative paths resolve against the manifest's
/// directory when read through [`read_manifest`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image: PathBuf,
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::dataset(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| Error::dataset(path, format!("line {}: {e}", i + 1)))?;
        if rec.image.is_relative() {
            rec.image = base.join(&rec.image);
        }
        if rec.mask.is_relative() {
            rec.mask = base.join(&rec.mask);
        }
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::EmptyManifest);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// RGB image as `[3,H,W]` in `[0,1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::dataset(path, e))?.to_rgb8();
    Ok(rgb_to_tensor(&img))
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = f32::from(px[c]) / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data).expect("sized from the image")
}

/// Grayscale mask as `[1,H,W]`, 1 where the 8-bit value is at least 128.
pub fn load_mask(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::dataset(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.as_raw().iter().map(|&v| if v >= 128 { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::new(&[1, h, w], data).expect("sized from the image"))
}

pub fn load_sample(record: &SampleRecord) -> Result<(Tensor, Tensor)> {
    let image = load_image(&record.image)?;
    let mask = load_mask(&record.mask)?;
    if image.shape()[1..] != mask.shape()[1..] {
        return Err(Error::dataset(
            &record.mask,
            format!(
                "mask is {}x{} but image {} is {}x{}",
                mask.shape()[1],
                mask.shape()[2],
                record.image.display(),
                image.shape()[1],
                image.shape()[2]
            ),
        ));
    }
    Ok((image, mask))
}

/// `[3,H,W]` in `[0,1]` to an 8-bit RGB image.
pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    let [c, h, w] = super::resample::chw(t, "tensor_to_rgb")?;
    if c != 3 {
        return Err(Error::Dimension(format!("expected 3 channels, got {c}")));
    }
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |ch: usize| to_u8(d[(ch * h + y as usize) * w + x as usize]);
        image::Rgb([at(0), at(1), at(2)])
    }))
}

/// `[1,H,W]` (or `[H,W]`) to an 8-bit mask, 255 for nonzero.
pub fn tensor_to_mask(t: &Tensor) -> Result<GrayImage> {
    let (h, w) = match *t.shape() {
        [1, h, w] | [h, w] => (h, w),
        _ => return Err(Error::Dimension(format!("expected a single-channel mask, got {:?}", t.shape()))),
    };
    let raw = t.data().iter().map(|&v| if v != 0.0 { 255 } else { 0 }).collect();
    Ok(GrayImage::from_raw(w as u32, h as u32, raw).expect("sized from the tensor"))
}

pub fn save_mask_png(t: &Tensor, path: &Path) -> Result<()> {
    tensor_to_mask(t)?.save(path)?;
    Ok(())
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// A decoded record with its tight ground-truth box.
#[derive(Clone, Debug)]
pub struct Sample {
    pub record: SampleRecord,
    pub image: Tensor,
    pub mask: Tensor,
    pub bbox: BBox,
}

impl Sample {
    pub fn load(record: &SampleRecord) -> Result<Self> {
        let (image, mask) = load_sample(record)?;
        let (h, w) = (mask.shape()[1], mask.shape()[2]);
        let bbox = match record.bbox {
            Some(b) => b,
            None => mask_to_bbox(mask.data(), h, w, 0.0)?,
        };
        Ok(Self { record: record.clone(), image, mask, bbox })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }
}

pub fn load_all(records: &[SampleRecord]) -> Result<Vec<Sample>> {
    records.iter().map(Sample::load).collect()
}

/// Deterministic train/validation partition: shuffles with `seed` and puts
/// the last `val_count` records into validation.
pub fn split<T: Clone>(items: &[T], val_count: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if val_count >= items.len() {
        return Err(Error::Config(format!(
            "cannot hold out {val_count} of {} samples",
            items.len()
        )));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = items.len() - val_count;
    Ok((
        idx[..cut].iter().map(|&i| items[i].clone()).collect(),
        idx[cut..].iter().map(|&i| items[i].clone()).collect(),
    ))
}
