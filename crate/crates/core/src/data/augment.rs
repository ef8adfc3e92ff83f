//! Paired image/mask augmentation. Geometric ops resample the image
//! bilinearly and the mask by nearest neighbour, filling with zeros.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::resample::{chw, sample_bilinear, sample_nearest};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Chance of applying each op independently.
    pub probability: f64,
    pub max_rotation_deg: f32,
    pub max_shear_deg: f32,
    pub stretch: (f32, f32),
    pub center_crop: (f32, f32),
    pub contrast: (f32, f32),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            probability: 0.5,
            max_rotation_deg: 30.0,
            max_shear_deg: 10.0,
            stretch: (0.8, 1.2),
            center_crop: (0.8, 1.0),
            contrast: (0.7, 1.3),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AugmentOp {
    HFlip,
    VFlip,
    /// Degrees; positive turns +x towards +y.
    Rotate(f32),
    /// Degrees; `x' = x + tan(s)·(y − cy)`.
    Shear(f32),
    /// Horizontal scale about the centre.
    Stretch(f32),
    /// Keeps the central fraction and scales it back to full size.
    CenterCrop(f32),
    /// Scales deviation from the image mean.
    ContrastShift(f32),
}

impl AugmentOp {
    pub fn check(&self, cfg: &AugmentConfig) -> Result<()> {
        let within = |v: f32, lo: f32, hi: f32, what: &str| {
            if v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} {v} outside [{lo}, {hi}]")))
            }
        };
        match *self {
            AugmentOp::HFlip | AugmentOp::VFlip => Ok(()),
            AugmentOp::Rotate(d) => within(d, -cfg.max_rotation_deg, cfg.max_rotation_deg, "rotation"),
            AugmentOp::Shear(d) => within(d, -cfg.max_shear_deg, cfg.max_shear_deg, "shear"),
            AugmentOp::Stretch(f) => within(f, cfg.stretch.0, cfg.stretch.1, "stretch"),
            AugmentOp::CenterCrop(c) => within(c, cfg.center_crop.0, cfg.center_crop.1, "center crop"),
            AugmentOp::ContrastShift(a) => within(a, cfg.contrast.0, cfg.contrast.1, "contrast"),
        }
    }
}

/// Each op drawn independently with `cfg.probability`, in a fixed order.
pub fn sample_ops(cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<AugmentOp> {
    let mut ops = Vec::new();
    let coin = |rng: &mut dyn rand::RngCore| rng.gen_bool(cfg.probability);
    if coin(rng) {
        ops.push(AugmentOp::HFlip);
    }
    if coin(rng) {
        ops.push(AugmentOp::VFlip);
    }
    if coin(rng) {
        ops.push(AugmentOp::Rotate(rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)));
    }
    if coin(rng) {
        ops.push(AugmentOp::Shear(rng.gen_range(-cfg.max_shear_deg..=cfg.max_shear_deg)));
    }
    if coin(rng) {
        ops.push(AugmentOp::Stretch(rng.gen_range(cfg.stretch.0..=cfg.stretch.1)));
    }
    if coin(rng) {
        ops.push(AugmentOp::CenterCrop(rng.gen_range(cfg.center_crop.0..=cfg.center_crop.1)));
    }
    if coin(rng) {
        ops.push(AugmentOp::ContrastShift(rng.gen_range(cfg.contrast.0..=cfg.contrast.1)));
    }
    ops
}

pub fn augment(image: &Tensor, mask: &Tensor, cfg: &AugmentConfig, seed: u64) -> Result<(Tensor, Tensor)> {
    let ops = sample_ops(cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    apply_ops(image, mask, &ops, cfg)
}

pub fn apply_ops(image: &Tensor, mask: &Tensor, ops: &[AugmentOp], cfg: &AugmentConfig) -> Result<(Tensor, Tensor)> {
    let (mut img, mut msk) = (image.clone(), mask.clone());
    for op in ops {
        op.check(cfg)?;
        (img, msk) = apply_op(&img, &msk, *op)?;
    }
    Ok((img, msk))
}

/// Applies one op without range checks.
pub fn apply_op(image: &Tensor, mask: &Tensor, op: AugmentOp) -> Result<(Tensor, Tensor)> {
    let [_, h, w] = chw(image, "augment")?;
    let [_, mh, mw] = chw(mask, "augment")?;
    if (h, w) != (mh, mw) {
        return Err(Error::Dimension(format!("image is {h}x{w}, mask {mh}x{mw}")));
    }
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    // inverse maps: output pixel -> source position relative to the centre
    let inverse: Box<dyn Fn(f32, f32) -> (f32, f32)> = match op {
        AugmentOp::HFlip => return Ok((flip(image, true), flip(mask, true))),
        AugmentOp::VFlip => return Ok((flip(image, false), flip(mask, false))),
        AugmentOp::ContrastShift(a) => return Ok((contrast(image, a), mask.clone())),
        AugmentOp::Rotate(0.0) => return Ok((image.clone(), mask.clone())),
        AugmentOp::Shear(0.0) => return Ok((image.clone(), mask.clone())),
        AugmentOp::Stretch(f) | AugmentOp::CenterCrop(f) if f == 1.0 => return Ok((image.clone(), mask.clone())),
        AugmentOp::Rotate(d) => {
            let (s, c) = d.to_radians().sin_cos();
            Box::new(move |x, y| (c * x + s * y, -s * x + c * y))
        }
        AugmentOp::Shear(d) => {
            let t = d.to_radians().tan();
            Box::new(move |x, y| (x - t * y, y))
        }
        AugmentOp::Stretch(f) => Box::new(move |x, y| (x / f, y)),
        AugmentOp::CenterCrop(f) => Box::new(move |x, y| (x * f, y * f)),
    };
    let warp = |t: &Tensor, sampler: fn(&[f32], usize, usize, f32, f32, f32) -> f32| {
        let mut out = Vec::with_capacity(t.numel());
        for plane in t.data().chunks_exact(h * w) {
            for i in 0..h {
                for j in 0..w {
                    let (sx, sy) = inverse(j as f32 - cx, i as f32 - cy);
                    out.push(sampler(plane, h, w, sy + cy, sx + cx, 0.0));
                }
            }
        }
        Tensor::new(t.shape(), out).expect("same shape")
    };
    Ok((warp(image, sample_bilinear), warp(mask, sample_nearest)))
}

fn flip(t: &Tensor, horizontal: bool) -> Tensor {
    let s = t.shape();
    let (h, w) = (s[1], s[2]);
    let mut out = Vec::with_capacity(t.numel());
    for plane in t.data().chunks_exact(h * w) {
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = if horizontal { (i, w - 1 - j) } else { (h - 1 - i, j) };
                out.push(plane[si * w + sj]);
            }
        }
    }
    Tensor::new(s, out).expect("same shape")
}

fn contrast(t: &Tensor, alpha: f32) -> Tensor {
    if alpha == 1.0 {
        return t.clone();
    }
    let mean = (t.data().iter().map(|&v| f64::from(v)).sum::<f64>() / t.numel().max(1) as f64) as f32;
    let data = t.data().iter().map(|&v| (mean + alpha * (v - mean)).clamp(0.0, 1.0)).collect();
    Tensor::new(t.shape(), data).expect("same shape")
}
