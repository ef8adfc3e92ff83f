use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::engine::{backward_step, run_stages, Accumulator, EpochStats, Trainable, TrainingReport};
use super::schedule::{Schedule, StageKind};
use crate::data::{augment, crop_and_normalize, crop_mask, AugmentConfig, Sample};
use crate::detector::{mask_to_bbox, BBox};
use crate::error::{Error, Result};
use crate::metrics::{binarize, compute_metrics, dice_loss, DICE_SMOOTH};
use crate::nn::Segmentor;
use crate::param::ParamStore;
use crate::pipeline::{segment_boxes, CROP_MARGIN};
use crate::tensor::{ops, Mode, Tensor};

/// Where training and validation crops come from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropSource {
    /// Ground-truth box plus margin, randomly enlarged by up to `jitter` of
    /// its size per side during training.
    GroundTruth { jitter: f32 },
    /// The full image, as when no detector runs in front.
    WholeImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegTrainOptions {
    pub augment: Option<AugmentConfig>,
    pub crop: CropSource,
}

impl Default for SegTrainOptions {
    fn default() -> Self {
        Self { augment: Some(AugmentConfig::default()), crop: CropSource::GroundTruth { jitter: 0.15 } }
    }
}

impl Trainable for Segmentor {
    fn store(&self) -> &ParamStore {
        Segmentor::store(self)
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        Segmentor::store_mut(self)
    }

    fn arch_json(&self) -> serde_json::Value {
        serde_json::to_value(self.config()).expect("config serializes")
    }

    fn prepare_stage(&mut self, kind: StageKind) -> Result<()> {
        match kind {
            StageKind::AeOnly if self.hourglass_count() > 0 => Err(Error::Contract(format!(
                "AE_ONLY trains the plain encoder-decoder, model already has {} hourglass modules",
                self.hourglass_count()
            ))),
            StageKind::HgOnly(k) if self.hourglass_count() + 1 == k => self.grow_hourglass(k - 1),
            StageKind::HgOnly(k) if self.hourglass_count() < k => Err(Error::Contract(format!(
                "HG_{k}_ONLY needs {} hourglass modules first, model has {}",
                k - 1,
                self.hourglass_count()
            ))),
            k if k.is_detector() => Err(Error::Config(format!("{k} is a detector stage"))),
            _ => Ok(()),
        }
    }
}

fn epoch_rng(seed: u64, epoch: usize, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x2545_F491_4F6C_DD1D) ^ salt)
}

/// Crop box of a training example.
fn training_box(mask: &Tensor, crop: CropSource, rng: &mut impl Rng) -> Result<BBox> {
    let (h, w) = (mask.shape()[1], mask.shape()[2]);
    let whole = BBox::new(0.0, 0.0, w as f32, h as f32);
    match crop {
        CropSource::WholeImage => Ok(whole),
        CropSource::GroundTruth { jitter } => {
            let b = mask_to_bbox(mask.data(), h, w, CROP_MARGIN)?;
            if jitter <= 0.0 {
                return Ok(b);
            }
            let (bw, bh) = (b.width(), b.height());
            let mut grow = || rng.gen_range(0.0..=jitter);
            let j = BBox::new(b.x1 - grow() * bw, b.y1 - grow() * bh, b.x2 + grow() * bw, b.y2 + grow() * bh);
            Ok(j.clip(w as f32, h as f32))
        }
    }
}

/// Cropped `[3,T,T]` input and `[1,T,T]` target of one sample.
pub fn training_example(
    sample: &Sample,
    opts: &SegTrainOptions,
    target_size: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor, Tensor)> {
    let (img, mask) = match &opts.augment {
        Some(cfg) => augment(&sample.image, &sample.mask, cfg, rng.gen())?,
        None => (sample.image.clone(), sample.mask.clone()),
    };
    let b = training_box(&mask, opts.crop, rng)?;
    let (crop, tf) = crop_and_normalize(&img, &b, target_size)?;
    Ok((crop, crop_mask(&mask, &tf)?))
}

/// Box the validation pass crops from.
pub fn validation_box(sample: &Sample, crop: CropSource) -> BBox {
    let (w, h) = (sample.width() as f32, sample.height() as f32);
    match crop {
        CropSource::WholeImage => BBox::new(0.0, 0.0, w, h),
        CropSource::GroundTruth { .. } => crate::pipeline::grow_box(&sample.bbox, CROP_MARGIN, w, h),
    }
}

/// Mean full-image dice of the eval-mode segmentor on `samples`.
pub fn validation_dice(seg: &Segmentor, samples: &[Sample], crop: CropSource) -> Result<f32> {
    if samples.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let mut total = 0.0f64;
    for s in samples {
        let out = segment_boxes(seg, &s.image, &[validation_box(s, crop)])?;
        total += compute_metrics(&out.mask, &s.mask)?.dice;
    }
    Ok((total / samples.len() as f64) as f32)
}

fn segmentor_epoch(
    seg: &mut Segmentor,
    adam: &mut crate::optim::Adam,
    train: &[Sample],
    opts: &SegTrainOptions,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<EpochStats> {
    let t = seg.config().input_size;
    let mut rng = epoch_rng(seed, epoch, 0x5E6);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut acc = Accumulator::default();
    for chunk in order.chunks(batch_size) {
        let mut xs = Vec::with_capacity(chunk.len());
        let mut ys = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let (x, y) = training_example(&train[i], opts, t, &mut rng)?;
            xs.push(x.reshape(&[1, 3, t, t])?);
            ys.push(y.reshape(&[1, 1, t, t])?);
        }
        let x = ops::concat_batch(&xs)?;
        let y = ops::concat_batch(&ys)?;
        let pred = seg.forward(&x, Mode::Train)?;
        let loss = dice_loss(&pred, &y, DICE_SMOOTH)?;
        let v = backward_step(&loss, adam, seg.store_mut())?;
        acc.add("loss", v);
        let batch_dice = compute_metrics(&binarize(&pred.detach(), 0.5), &y)?.dice;
        acc.add("train_dice", batch_dice as f32);
        acc.step();
    }
    Ok(acc.finish())
}

/// Runs a segmentor schedule, validating by mean dice on `val` after every
/// epoch.
pub fn run_segmentor_schedule(
    seg: &mut Segmentor,
    schedule: &Schedule,
    train: &[Sample],
    val: &[Sample],
    opts: &SegTrainOptions,
) -> Result<TrainingReport> {
    if train.is_empty() {
        return Err(Error::EmptyManifest);
    }
    if schedule.stages.iter().any(|s| s.kind.is_detector()) {
        return Err(Error::Config("segmentor schedule contains detector stages".into()));
    }
    let (bs, seed) = (schedule.batch_size, schedule.seed);
    run_stages(
        seg,
        schedule,
        "val_dice",
        |m, adam, _stage, epoch| segmentor_epoch(m, adam, train, opts, bs, seed, epoch),
        |m, _stage| if val.is_empty() { Ok(None) } else { validation_dice(m, val, opts.crop).map(Some) },
    )
}
