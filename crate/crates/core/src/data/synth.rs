//! Synthetic dermoscopy-like images: textured skin background with one
//! irregular, darker, low-contrast blob.

use std::f32::consts::PI;
use std::path::Path;

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, SampleRecord};
use crate::detector::{mask_to_bbox, BBox};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub min_foreground: f32,
    pub max_foreground: f32,
    /// Lesion colour as a fraction of the local skin colour.
    pub darkening: (f32, f32),
    pub noise_std: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { min_foreground: 0.05, max_foreground: 0.40, darkening: (0.55, 0.75), noise_std: 0.03 }
    }
}

/// One generated sample in memory: RGB8 pixels, 0/1 mask, tight box.
pub struct SynthSample {
    pub image: RgbImage,
    pub mask: GrayImage,
    pub bbox: BBox,
}

/// Generates sample `index` of the sequence determined by `seed`.
pub fn synth_sample(size: usize, seed: u64, index: u64, cfg: &SynthConfig) -> Result<SynthSample> {
    if size < 8 {
        return Err(Error::Config(format!("synthetic images need at least 8 pixels per side, got {size}")));
    }
    if !(0.0 < cfg.min_foreground && cfg.min_foreground < cfg.max_foreground && cfg.max_foreground < 1.0) {
        return Err(Error::Config("foreground band must satisfy 0 < min < max < 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let s = size as f32;
    let mask = loop {
        let target = rng.gen_range(cfg.min_foreground..cfg.max_foreground);
        let area = target * s * s;
        let aspect: f32 = rng.gen_range(0.6..1.6);
        let a = (area / PI * aspect).sqrt();
        let b = (area / PI / aspect).sqrt();
        let phi: f32 = rng.gen_range(0.0..PI);
        let r_max = a.max(b) * 1.2;
        let lo = r_max.min(s / 2.0 - 1.0);
        let cx = rng.gen_range(lo..=(s - lo).max(lo));
        let cy = rng.gen_range(lo..=(s - lo).max(lo));
        let harmonics: Vec<(f32, f32)> = (2..6).map(|_| (rng.gen_range(0.0..0.08f32), rng.gen_range(0.0..2.0 * PI))).collect();
        let (cp, sp) = (phi.cos(), phi.sin());
        let mut m = vec![0u8; size * size];
        let mut count = 0usize;
        for i in 0..size {
            for j in 0..size {
                let (dx, dy) = (j as f32 + 0.5 - cx, i as f32 + 0.5 - cy);
                let (u, v) = ((cp * dx + sp * dy) / a, (-sp * dx + cp * dy) / b);
                let theta = v.atan2(u);
                let edge = 1.0 + harmonics.iter().enumerate().map(|(k, &(amp, ph))| amp * ((k as f32 + 2.0) * theta + ph).cos()).sum::<f32>();
                if (u * u + v * v).sqrt() <= edge {
                    m[i * size + j] = 1;
                    count += 1;
                }
            }
        }
        let frac = count as f32 / (s * s);
        if frac >= cfg.min_foreground && frac <= cfg.max_foreground {
            break m;
        }
    };

    let base = [rng.gen_range(0.78..0.92f32), rng.gen_range(0.58..0.70f32), rng.gen_range(0.48..0.60f32)];
    let gradient = (rng.gen_range(-0.08..0.08f32), rng.gen_range(-0.08..0.08f32));
    let dark = rng.gen_range(cfg.darkening.0..cfg.darkening.1);
    let tint = [1.0, rng.gen_range(0.85..1.0f32), rng.gen_range(0.85..1.05f32)];
    let noise = Normal::new(0.0f32, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let blob_noise = Normal::new(0.0f32, 2.0 * cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let image = RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let (fx, fy) = (x as f32 / s - 0.5, y as f32 / s - 0.5);
        let shade = 1.0 + gradient.0 * fx + gradient.1 * fy;
        let inside = mask[y as usize * size + x as usize] == 1;
        let mut px = [0u8; 3];
        for c in 0..3 {
            let mut v = base[c] * shade + noise.sample(&mut rng);
            if inside {
                v = base[c] * shade * dark * tint[c] + blob_noise.sample(&mut rng);
            }
            px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        image::Rgb(px)
    });
    let mask_f: Vec<f32> = mask.iter().map(|&v| f32::from(v)).collect();
    let bbox = mask_to_bbox(&mask_f, size, size, 0.0)?;
    let mask = GrayImage::from_raw(size as u32, size as u32, mask.into_iter().map(|v| v * 255).collect())
        .expect("sized from the image");
    Ok(SynthSample { image, mask, bbox })
}

/// Writes `images/NNNN.png`, `masks/NNNN.png` and `meta.jsonl` (which is
/// also a manifest) under `dir`.
pub fn synth_dataset(dir: &Path, count: usize, size: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<SampleRecord>> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let sample = synth_sample(size, seed, i as u64, cfg)?;
        let rel_img = format!("images/{i:04}.png");
        let rel_mask = format!("masks/{i:04}.png");
        sample.image.save(dir.join(&rel_img))?;
        sample.mask.save(dir.join(&rel_mask))?;
        records.push(SampleRecord { image: rel_img.into(), mask: rel_mask.into(), bbox: Some(sample.bbox) });
    }
    write_manifest(&dir.join("meta.jsonl"), &records)?;
    Ok(records.into_iter().map(|r| SampleRecord { image: dir.join(r.image), mask: dir.join(r.mask), ..r }).collect())
}
