//! Detector → crop → segmentor → restore inference chain and dataset
//! evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{crop_and_normalize, load_sample, restore_mask, CropTransform, Sample, SampleRecord};
use crate::detector::{BBox, Detector, DetectorConfig};
use crate::error::{Error, Result};
use crate::metrics::{binarize, compute_metrics, ImageResult, MetricsReport};
use crate::nn::{SegMentorConfig, Segmentor};
use crate::tensor::{no_grad, ops, Mode, Tensor};

/// Detected boxes grow by this fraction per side before cropping, matching
/// the margin used for training crops.
pub const CROP_MARGIN: f32 = 0.05;

const EVAL_BATCH: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Segment the padded full image when nothing is detected.
    #[default]
    WholeImage,
    /// Return an empty mask when nothing is detected.
    Skip,
}

fn default_threshold() -> f32 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// `None` segments the whole image without detection.
    pub detector_checkpoint: Option<PathBuf>,
    pub segmentor_checkpoint: PathBuf,
    pub segmentor_arch: SegMentorConfig,
    #[serde(default = "default_threshold")]
    pub score_threshold: f32,
    #[serde(default = "default_threshold")]
    pub nms_threshold: f32,
    #[serde(default)]
    pub fallback: Fallback,
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.segmentor_checkpoint.is_relative() {
            cfg.segmentor_checkpoint = base.join(&cfg.segmentor_checkpoint);
        }
        if let Some(d) = cfg.detector_checkpoint.as_mut().filter(|d| d.is_relative()) {
            *d = base.join(&*d);
        }
        Ok(cfg)
    }
}

/// Path of the architecture file stored next to a checkpoint.
pub fn arch_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_arch<T: Serialize>(checkpoint: &Path, arch: &T) -> Result<()> {
    std::fs::write(arch_path(checkpoint), serde_json::to_string_pretty(arch)?)?;
    Ok(())
}

pub fn read_arch<T: for<'de> Deserialize<'de>>(checkpoint: &Path) -> Result<T> {
    let p = arch_path(checkpoint);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", p.display())))
}

pub fn load_segmentor(checkpoint: &Path, arch: &SegMentorConfig) -> Result<Segmentor> {
    let mut seg = Segmentor::new(arch.clone(), 0)?;
    seg.load(checkpoint)?;
    Ok(seg)
}

pub fn load_detector(checkpoint: &Path) -> Result<Detector> {
    let arch: DetectorConfig = read_arch(checkpoint)?;
    let mut det = Detector::new(arch, 0)?;
    det.load(checkpoint)?;
    Ok(det)
}

/// One segmented region.
#[derive(Clone, Debug)]
pub struct CropResult {
    pub bbox: BBox,
    pub transform: CropTransform,
    /// `[3,T,T]`
    pub crop: Tensor,
    /// Binary `[1,T,T]`
    pub crop_mask: Tensor,
}

#[derive(Clone, Debug)]
pub struct Segmentation {
    /// Binary `[1,H,W]`
    pub mask: Tensor,
    /// Boxes that were segmented, in image coordinates.
    pub boxes: Vec<BBox>,
    pub crops: Vec<CropResult>,
}

/// Eval-mode probability maps `[1,T,T]` for a list of `[3,T,T]` crops.
pub fn segment_crops(seg: &Segmentor, crops: &[Tensor]) -> Result<Vec<Tensor>> {
    let t = seg.config().input_size;
    let mut out = Vec::with_capacity(crops.len());
    no_grad(|| {
        for chunk in crops.chunks(EVAL_BATCH) {
            let batch = ops::concat_batch(
                &chunk.iter().map(|c| c.reshape(&[1, 3, t, t])).collect::<Result<Vec<_>>>()?,
            )?;
            let y = seg.forward(&batch, Mode::Eval)?;
            for k in 0..chunk.len() {
                out.push(Tensor::new(&[1, t, t], y.data()[k * t * t..(k + 1) * t * t].to_vec())?);
            }
        }
        Ok(out)
    })
}

/// Crops every box, segments the crops and ORs the restored masks.
pub fn segment_boxes(seg: &Segmentor, image: &Tensor, boxes: &[BBox]) -> Result<Segmentation> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let t = seg.config().input_size;
    let mut crops = Vec::with_capacity(boxes.len());
    let mut transforms = Vec::with_capacity(boxes.len());
    for b in boxes {
        let (crop, tf) = crop_and_normalize(image, b, t)?;
        crops.push(crop);
        transforms.push(tf);
    }
    let probs = segment_crops(seg, &crops)?;
    let mut merged = vec![0.0f32; h * w];
    let mut results = Vec::with_capacity(boxes.len());
    for (((b, tf), crop), p) in boxes.iter().zip(transforms).zip(crops).zip(probs) {
        let crop_mask = binarize(&p, 0.5);
        let full = restore_mask(&crop_mask, &tf, h, w)?;
        for (m, &v) in merged.iter_mut().zip(full.data()) {
            if v != 0.0 {
                *m = 1.0;
            }
        }
        results.push(CropResult { bbox: *b, transform: tf, crop, crop_mask });
    }
    Ok(Segmentation { mask: Tensor::new(&[1, h, w], merged)?, boxes: boxes.to_vec(), crops: results })
}

pub fn grow_box(b: &BBox, fraction: f32, width: f32, height: f32) -> BBox {
    let (mx, my) = (b.width() * fraction, b.height() * fraction);
    BBox { x1: b.x1 - mx, y1: b.y1 - my, x2: b.x2 + mx, y2: b.y2 + my, score: b.score }.clip(width, height)
}

pub struct Pipeline {
    config: PipelineConfig,
    detector: Option<Detector>,
    segmentor: Segmentor,
}

impl Pipeline {
    pub fn load(config: PipelineConfig) -> Result<Self> {
        let segmentor = load_segmentor(&config.segmentor_checkpoint, &config.segmentor_arch)?;
        let detector = config.detector_checkpoint.as_deref().map(load_detector).transpose()?;
        Ok(Self { config, detector, segmentor })
    }

    pub fn from_parts(config: PipelineConfig, detector: Option<Detector>, segmentor: Segmentor) -> Result<Self> {
        if segmentor.config() != &config.segmentor_arch {
            return Err(Error::Config("segmentor does not match segmentor_arch".into()));
        }
        Ok(Self { config, detector, segmentor })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn segmentor(&self) -> &Segmentor {
        &self.segmentor
    }

    pub fn detector(&self) -> Option<&Detector> {
        self.detector.as_ref()
    }

    /// Regions to segment: detector boxes grown by [`CROP_MARGIN`], the whole
    /// image without a detector, or the fallback when nothing is found.
    pub fn regions(&self, image: &Tensor) -> Result<Vec<BBox>> {
        let (h, w) = (image.shape()[1] as f32, image.shape()[2] as f32);
        let whole = BBox::new(0.0, 0.0, w, h);
        let Some(det) = &self.detector else {
            return Ok(vec![whole]);
        };
        let found = det.detect(image, self.config.score_threshold, self.config.nms_threshold)?;
        if found.is_empty() {
            return Ok(match self.config.fallback {
                Fallback::WholeImage => vec![whole],
                Fallback::Skip => Vec::new(),
            });
        }
        Ok(found.iter().map(|b| grow_box(b, CROP_MARGIN, w, h)).collect())
    }

    /// Full-resolution binary mask of a `[3,H,W]` image.
    pub fn segment_image(&self, image: &Tensor) -> Result<Segmentation> {
        if image.shape().len() != 3 || image.shape()[0] != 3 {
            return Err(Error::Dimension(format!("expected a [3,H,W] image, got {:?}", image.shape())));
        }
        let boxes = self.regions(image)?;
        segment_boxes(&self.segmentor, image, &boxes)
    }

    /// Per-image metrics over already decoded samples.
    pub fn evaluate_samples(&self, samples: &[Sample]) -> Result<MetricsReport> {
        if samples.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let rows = samples
            .iter()
            .map(|s| {
                let m = self.segment_image(&s.image).and_then(|seg| compute_metrics(&seg.mask, &s.mask))?;
                Ok(ImageResult { image: s.record.image.display().to_string(), metrics: Some(m), error: None })
            })
            .collect::<Result<Vec<_>>>()?;
        MetricsReport::from_rows(rows)
    }

    /// Per-image metrics over a manifest; unreadable records become failure
    /// rows and evaluation continues.
    pub fn evaluate(&self, records: &[SampleRecord]) -> Result<MetricsReport> {
        if records.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let rows = records
            .iter()
            .map(|r| {
                let name = r.image.display().to_string();
                let outcome = load_sample(r).and_then(|(img, gt)| {
                    let seg = self.segment_image(&img)?;
                    compute_metrics(&seg.mask, &gt)
                });
                match outcome {
                    Ok(m) => ImageResult { image: name, metrics: Some(m), error: None },
                    Err(e) => {
                        log::warn!("{name}: {e}");
                        ImageResult { image: name, metrics: None, error: Some(e.to_string()) }
                    }
                }
            })
            .collect();
        MetricsReport::from_rows(rows)
    }
}
