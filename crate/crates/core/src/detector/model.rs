use serde::{Deserialize, Serialize};

use super::geometry::{decode_box, generate_anchors, nms, AnchorConfig, BBox, BoxDelta};
use super::losses::RCNN_DELTA_STD;
use crate::data::resize_bilinear;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBn};
use crate::param::ParamStore;
use crate::tensor::{maxpool2d, no_grad, ops, roi_crop_resize, Mode, Roi, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Images are resized to `input_size × input_size` before the backbone.
    pub input_size: usize,
    /// One conv-bn-relu-pool stage per entry; four stages give stride 16.
    pub backbone_channels: Vec<usize>,
    pub rpn_channels: usize,
    pub anchors: AnchorConfig,
    /// Backbone stage whose output feeds the refinement head.
    pub roi_stage: usize,
    pub roi_size: usize,
    pub head_channels: usize,
    pub pre_nms_top_k: usize,
    pub proposal_nms: f32,
    pub proposals_per_image: usize,
    pub min_proposal_size: f32,
}

impl DetectorConfig {
    /// Small configuration for 64×64 inputs.
    pub fn desk() -> Self {
        Self {
            input_size: 64,
            backbone_channels: vec![8, 16, 32, 32],
            rpn_channels: 32,
            anchors: AnchorConfig { base_sizes: vec![16.0, 32.0, 64.0], aspect_ratios: vec![0.5, 1.0, 2.0], stride: 16 },
            roi_stage: 2,
            roi_size: 7,
            head_channels: 32,
            pre_nms_top_k: 200,
            proposal_nms: 0.7,
            proposals_per_image: 50,
            min_proposal_size: 2.0,
        }
    }

    pub fn stride(&self) -> usize {
        1 << self.backbone_channels.len()
    }

    pub fn roi_stride(&self) -> usize {
        1 << (self.roi_stage + 1)
    }

    pub fn feature_size(&self) -> usize {
        self.input_size / self.stride()
    }

    pub fn validate(&self) -> Result<()> {
        self.anchors.validate()?;
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return Err(Error::Config("backbone needs at least one stage with nonzero channels".into()));
        }
        if self.anchors.stride != self.stride() {
            return Err(Error::Config(format!(
                "anchor stride {} does not match backbone stride {}",
                self.anchors.stride,
                self.stride()
            )));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(self.stride()) {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of {}",
                self.input_size,
                self.stride()
            )));
        }
        if self.roi_stage >= self.backbone_channels.len() || self.roi_size == 0 {
            return Err(Error::Config("roi_stage must name a backbone stage and roi_size be positive".into()));
        }
        if self.proposals_per_image == 0 || self.pre_nms_top_k == 0 {
            return Err(Error::Config("proposal counts must be positive".into()));
        }
        Ok(())
    }
}

/// Outputs of the shared trunk for a batch.
pub struct TrunkOutput {
    pub roi_features: Tensor,
    /// `[N,A,Hf,Wf]`
    pub objectness: Tensor,
    /// `[N,4A,Hf,Wf]`
    pub deltas: Tensor,
}

/// Backbone, region proposal head and per-proposal refinement head.
/// Parameters live under `backbone.*`, `rpn.*` and `rcnn.*`.
pub struct Detector {
    config: DetectorConfig,
    store: ParamStore,
    stages: Vec<ConvBn>,
    rpn_conv: Conv2d,
    rpn_objectness: Conv2d,
    rpn_deltas: Conv2d,
    rcnn_conv: Conv2d,
    rcnn_fc: Conv2d,
    rcnn_cls: Conv2d,
    rcnn_reg: Conv2d,
}

impl Detector {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let mut stages = Vec::new();
        let mut cin = 3;
        for (i, &c) in config.backbone_channels.iter().enumerate() {
            stages.push(ConvBn::same3x3(&mut store, &format!("backbone.stage{i}"), cin, c)?);
            cin = c;
        }
        let a = config.anchors.per_location();
        let rpn_conv = Conv2d::same3x3(&mut store, "rpn.conv", cin, config.rpn_channels)?;
        let rpn_objectness = Conv2d::pointwise(&mut store, "rpn.objectness", config.rpn_channels, a)?;
        let rpn_deltas = Conv2d::pointwise(&mut store, "rpn.deltas", config.rpn_channels, 4 * a)?;
        let roi_c = config.backbone_channels[config.roi_stage];
        let hc = config.head_channels;
        let rcnn_conv = Conv2d::same3x3(&mut store, "rcnn.conv", roi_c, hc)?;
        let rcnn_fc = Conv2d::new(&mut store, "rcnn.fc", hc, hc, config.roi_size, 1, 0)?;
        let rcnn_cls = Conv2d::pointwise(&mut store, "rcnn.cls", hc, 2)?;
        let rcnn_reg = Conv2d::pointwise(&mut store, "rcnn.reg", hc, 4)?;
        // small output layers keep the first proposals close to the anchors
        for name in ["rpn.objectness.weight", "rpn.deltas.weight", "rcnn.cls.weight", "rcnn.reg.weight"] {
            let p = store.get_mut(name).expect("layer just created");
            let v: Vec<f32> = p.value().iter().map(|x| x * 0.1).collect();
            p.set_value(v)?;
        }
        Ok(Self {
            config,
            store,
            stages,
            rpn_conv,
            rpn_objectness,
            rpn_deltas,
            rcnn_conv,
            rcnn_fc,
            rcnn_cls,
            rcnn_reg,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Backbone and proposal head on `[N,3,S,S]` with `S = input_size`.
    pub fn trunk(&self, batch: &Tensor, mode: Mode) -> Result<TrunkOutput> {
        let s = self.config.input_size;
        if batch.shape().len() != 4 || batch.shape()[1..] != [3, s, s] {
            return Err(Error::Dimension(format!(
                "detector expects [N,3,{s},{s}], got {:?}",
                batch.shape()
            )));
        }
        let mut x = batch.clone();
        let mut roi_features = None;
        for (i, stage) in self.stages.iter().enumerate() {
            x = maxpool2d(&stage.forward(&self.store, &x, mode)?)?;
            if i == self.config.roi_stage {
                roi_features = Some(x.clone());
            }
        }
        let h = ops::relu(&self.rpn_conv.forward(&self.store, &x)?);
        Ok(TrunkOutput {
            roi_features: roi_features.expect("roi_stage validated"),
            objectness: self.rpn_objectness.forward(&self.store, &h)?,
            deltas: self.rpn_deltas.forward(&self.store, &h)?,
        })
    }

    pub fn anchors(&self) -> Vec<BBox> {
        let f = self.config.feature_size();
        generate_anchors(f, f, &self.config.anchors)
    }

    /// Decoded, clipped and suppressed proposals per image in input-space
    /// pixels, best first, each scored by its objectness probability.
    pub fn proposals(&self, trunk: &TrunkOutput) -> Result<Vec<Vec<BBox>>> {
        let shape = trunk.objectness.shape();
        let (n, a, hf, wf) = (shape[0], shape[1], shape[2], shape[3]);
        let anchors = self.anchors();
        let s = self.config.input_size as f32;
        let (obj, del) = (trunk.objectness.data(), trunk.deltas.data());
        let mut out = Vec::with_capacity(n);
        for img in 0..n {
            let mut cands = Vec::with_capacity(anchors.len());
            for i in 0..hf {
                for j in 0..wf {
                    for k in 0..a {
                        let logit = obj[((img * a + k) * hf + i) * wf + j];
                        let d = |c: usize| del[((img * 4 * a + 4 * k + c) * hf + i) * wf + j];
                        let delta = BoxDelta { tx: d(0), ty: d(1), tw: d(2), th: d(3) };
                        let b = decode_box(&delta, &anchors[(i * wf + j) * a + k]).clip(s, s);
                        if b.width() >= self.config.min_proposal_size && b.height() >= self.config.min_proposal_size {
                            cands.push(b.with_score(crate::tensor::ops::sigmoid_scalar(logit)));
                        }
                    }
                }
            }
            cands.sort_by(|x, y| y.score.partial_cmp(&x.score).unwrap_or(std::cmp::Ordering::Equal));
            cands.truncate(self.config.pre_nms_top_k);
            let mut kept = nms(&cands, self.config.proposal_nms);
            kept.truncate(self.config.proposals_per_image);
            out.push(kept);
        }
        Ok(out)
    }

    /// Refinement head on `(batch index, box)` pairs in input-space pixels.
    /// Returns class logits `[R,2,1,1]` and normalized deltas `[R,4,1,1]`.
    pub fn refine(&self, roi_features: &Tensor, boxes: &[(usize, BBox)]) -> Result<(Tensor, Tensor)> {
        let stride = self.config.roi_stride() as f32;
        let rois: Vec<Roi> = boxes
            .iter()
            .map(|&(batch, b)| Roi { batch, x1: b.x1 / stride, y1: b.y1 / stride, x2: b.x2 / stride, y2: b.y2 / stride })
            .collect();
        let pooled = roi_crop_resize(roi_features, &rois, self.config.roi_size)?;
        let h = ops::relu(&self.rcnn_conv.forward(&self.store, &pooled)?);
        let h = ops::relu(&self.rcnn_fc.forward(&self.store, &h)?);
        Ok((self.rcnn_cls.forward(&self.store, &h)?, self.rcnn_reg.forward(&self.store, &h)?))
    }

    /// Lesion boxes in the coordinates of `image` (`[1,3,H,W]` or `[3,H,W]`,
    /// values in `[0,1]`). Boxes scoring at most `score_threshold` are
    /// dropped before suppression.
    pub fn detect(&self, image: &Tensor, score_threshold: f32, nms_threshold: f32) -> Result<Vec<BBox>> {
        let img = match *image.shape() {
            [1, c, h, w] => image.reshape(&[c, h, w])?,
            [_, _, _] => image.clone(),
            _ => return Err(Error::Dimension(format!("detect expects one image, got {:?}", image.shape()))),
        };
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let s = self.config.input_size;
        no_grad(|| {
            let resized = resize_bilinear(&img, s, s)?.reshape(&[1, 3, s, s])?;
            let trunk = self.trunk(&resized, Mode::Eval)?;
            let proposals = self.proposals(&trunk)?.remove(0);
            if proposals.is_empty() {
                return Ok(Vec::new());
            }
            let pairs: Vec<(usize, BBox)> = proposals.iter().map(|&b| (0, b)).collect();
            let (cls, reg) = self.refine(&trunk.roi_features, &pairs)?;
            let sf = s as f32;
            let mut scored = Vec::new();
            for (r, p) in proposals.iter().enumerate() {
                let z = &cls.data()[2 * r..2 * r + 2];
                let score = crate::tensor::ops::sigmoid_scalar(z[1] - z[0]);
                if score <= score_threshold {
                    continue;
                }
                let d = &reg.data()[4 * r..4 * r + 4];
                let delta = BoxDelta {
                    tx: d[0] * RCNN_DELTA_STD[0],
                    ty: d[1] * RCNN_DELTA_STD[1],
                    tw: d[2] * RCNN_DELTA_STD[2],
                    th: d[3] * RCNN_DELTA_STD[3],
                };
                let b = decode_box(&delta, p).clip(sf, sf);
                if !b.is_degenerate() {
                    scored.push(b.with_score(score));
                }
            }
            let (sx, sy) = (w as f32 / sf, h as f32 / sf);
            Ok(nms(&scored, nms_threshold)
                .into_iter()
                .map(|b| b.scaled(sx, sy).clip(w as f32, h as f32))
                .collect())
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.store.save_checkpoint(path)
    }

    pub fn load(&mut self, path: &std::path::Path) -> Result<()> {
        self.store.load_checkpoint(path)
    }
}
