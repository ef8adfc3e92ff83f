//! UNet encoder/decoder with a chain of hourglass modules at the bottleneck.
//!
//! Parameter namespaces:
//! - `encoder.*`: three blocks of 2×(conv3×3+bn+relu), each followed by 2×2 max-pool
//! - `hourglass.<k>.*`: the k-th hourglass module; `hourglass.0.adapter` maps
//!   the chain output back to the bottleneck width expected by the decoder
//! - `decoder.*`: three blocks of (upsample + conv) → concat with the encoder
//!   skip → 2×(conv3×3+bn+relu), then a 1×1 head and sigmoid

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::{maxpool2d, ops, upsample2x, Mode, Tensor};

use super::hourglass::Hourglass;
use super::layers::{Conv2d, ConvBn};

pub const ENCODER_STAGES: usize = 3;

fn default_in_channels() -> usize {
    3
}

fn default_multiplier() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegMentorConfig {
    pub input_size: usize,
    #[serde(skip_serializing, default = "default_in_channels")]
    pub in_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub hourglass_count: usize,
    pub hourglass_depth: usize,
    #[serde(skip_serializing, default = "default_multiplier")]
    pub bottleneck_out_multiplier: usize,
}

impl SegMentorConfig {
    /// Full-resolution layout: 512 input, [16, 64, 128] encoder widths.
    pub fn full(hourglass_count: usize) -> Self {
        Self {
            input_size: 512,
            in_channels: 3,
            encoder_channels: vec![16, 64, 128],
            hourglass_count,
            hourglass_depth: 2,
            bottleneck_out_multiplier: 2,
        }
    }

    /// Desk-scale layout used for CPU training runs.
    pub fn desk(hourglass_count: usize) -> Self {
        Self {
            input_size: 64,
            encoder_channels: vec![8, 16, 32],
            ..Self::full(hourglass_count)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let factor = 1usize
            .checked_shl((ENCODER_STAGES + self.hourglass_depth) as u32)
            .ok_or_else(|| Error::Config("hourglass_depth too large".into()))?;
        if self.input_size == 0 || !self.input_size.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "input_size {} must be a positive multiple of 2^(3 + hourglass_depth) = {factor}",
                self.input_size
            )));
        }
        if self.encoder_channels.len() != ENCODER_STAGES {
            return Err(Error::Config(format!(
                "encoder_channels must list {ENCODER_STAGES} widths, got {:?}",
                self.encoder_channels
            )));
        }
        if self.encoder_channels[0] == 0 || self.encoder_channels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "encoder_channels must be positive and strictly increasing, got {:?}",
                self.encoder_channels
            )));
        }
        if self.hourglass_depth == 0 {
            return Err(Error::Config("hourglass_depth must be at least 1".into()));
        }
        if self.in_channels == 0 || self.bottleneck_out_multiplier == 0 {
            return Err(Error::Config("in_channels and bottleneck_out_multiplier must be positive".into()));
        }
        Ok(())
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.encoder_channels[ENCODER_STAGES - 1]
    }

    pub fn hourglass_channels(&self) -> usize {
        self.bottleneck_channels() * self.bottleneck_out_multiplier
    }
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    conv1: ConvBn,
    conv2: ConvBn,
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    up: ConvBn,
    merge: ConvBn,
    conv: ConvBn,
}

#[derive(Clone, Debug)]
struct HourglassStage {
    module: Hourglass,
}

/// Shapes observed at the bottleneck during one forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BottleneckTrace {
    /// Encoder output entering the hourglass chain.
    pub chain_input: Vec<usize>,
    /// Output of the last hourglass module; `None` when the chain is empty.
    pub chain_output: Option<Vec<usize>>,
}

#[derive(Debug)]
pub struct Segmentor {
    config: SegMentorConfig,
    store: ParamStore,
    encoder: Vec<EncoderBlock>,
    hourglasses: Vec<HourglassStage>,
    adapter: Option<ConvBn>,
    decoder: Vec<DecoderBlock>,
    head: Conv2d,
}

impl Segmentor {
    pub fn new(config: SegMentorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let ch = config.encoder_channels.clone();

        let mut encoder = Vec::with_capacity(ENCODER_STAGES);
        let mut cin = config.in_channels;
        for (i, &c) in ch.iter().enumerate() {
            let name = format!("encoder.block{}", i + 1);
            encoder.push(EncoderBlock {
                conv1: ConvBn::same3x3(&mut store, &format!("{name}.conv1"), cin, c)?,
                conv2: ConvBn::same3x3(&mut store, &format!("{name}.conv2"), c, c)?,
            });
            cin = c;
        }

        let mut decoder = Vec::with_capacity(ENCODER_STAGES);
        let mut cur = config.bottleneck_channels();
        for i in (0..ENCODER_STAGES).rev() {
            let c = ch[i];
            let name = format!("decoder.block{}", i + 1);
            decoder.push(DecoderBlock {
                up: ConvBn::same3x3(&mut store, &format!("{name}.up"), cur, c)?,
                merge: ConvBn::same3x3(&mut store, &format!("{name}.merge"), 2 * c, c)?,
                conv: ConvBn::same3x3(&mut store, &format!("{name}.conv"), c, c)?,
            });
            cur = c;
        }
        let head = Conv2d::pointwise(&mut store, "decoder.head", ch[0], 1)?;

        let target = config.hourglass_count;
        let mut model = Self {
            config: SegMentorConfig {
                hourglass_count: 0,
                ..config
            },
            store,
            encoder,
            hourglasses: Vec::new(),
            adapter: None,
            decoder,
            head,
        };
        for k in 0..target {
            model.grow_hourglass(k)?;
        }
        Ok(model)
    }

    pub fn config(&self) -> &SegMentorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn hourglass_count(&self) -> usize {
        self.hourglasses.len()
    }

    /// Appends hourglass module `position` to the bottleneck chain. Existing
    /// parameters are untouched; the new module is freshly initialized.
    pub fn grow_hourglass(&mut self, position: usize) -> Result<()> {
        if position != self.hourglasses.len() {
            return Err(Error::Contract(format!(
                "grow_hourglass: model has {} modules, cannot add at position {position}",
                self.hourglasses.len()
            )));
        }
        let bottleneck = self.config.bottleneck_channels();
        let width = self.config.hourglass_channels();
        let cin = if position == 0 { bottleneck } else { width };
        let name = format!("hourglass.{position}");
        let module = Hourglass::new(&mut self.store, &name, cin, width, self.config.hourglass_depth)?;
        if position == 0 {
            let conv = Conv2d::pointwise(&mut self.store, "hourglass.0.adapter.conv", width, bottleneck)?;
            self.adapter = Some(ConvBn::new(&mut self.store, "hourglass.0.adapter", conv, bottleneck, true)?);
        }
        self.hourglasses.push(HourglassStage { module });
        self.config.hourglass_count = self.hourglasses.len();
        Ok(())
    }

    /// Sets `frozen` on every parameter under `prefix`, e.g. `"encoder."`.
    pub fn freeze_namespace(&mut self, prefix: &str, frozen: bool) -> Result<usize> {
        self.store.freeze_prefix(prefix, frozen)
    }

    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_traced(batch, mode).map(|(y, _)| y)
    }

    /// Forward pass that also reports the bottleneck shapes.
    pub fn forward_traced(&self, batch: &Tensor, mode: Mode) -> Result<(Tensor, BottleneckTrace)> {
        let s = self.config.input_size;
        let expected = [self.config.in_channels, s, s];
        if batch.shape().len() != 4 || batch.shape()[1..] != expected {
            return Err(Error::Dimension(format!(
                "segmentor expects [N, {}, {s}, {s}], got {:?}",
                self.config.in_channels,
                batch.shape()
            )));
        }
        let store = &self.store;
        let mut skips = Vec::with_capacity(ENCODER_STAGES);
        let mut x = batch.clone();
        for block in &self.encoder {
            let h = block.conv1.forward(store, &x, mode)?;
            let h = block.conv2.forward(store, &h, mode)?;
            x = maxpool2d(&h)?;
            skips.push(h);
        }

        let chain_input = x.shape().to_vec();
        let mut chain_output = None;
        if !self.hourglasses.is_empty() {
            for hg in &self.hourglasses {
                x = hg.module.forward(store, &x, mode)?;
            }
            chain_output = Some(x.shape().to_vec());
            let adapter = self.adapter.as_ref().expect("adapter exists with hourglass 0");
            x = adapter.forward(store, &x, mode)?;
        }

        for (block, skip) in self.decoder.iter().zip(skips.iter().rev()) {
            let up = block.up.forward(store, &upsample2x(&x)?, mode)?;
            let merged = block.merge.forward(store, &ops::concat_channels(&up, skip)?, mode)?;
            x = block.conv.forward(store, &merged, mode)?;
        }
        let logits = self.head.forward(store, &x)?;
        Ok((
            ops::sigmoid(&logits),
            BottleneckTrace {
                chain_input,
                chain_output,
            },
        ))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.store.save_checkpoint(path)
    }

    pub fn load(&mut self, path: &std::path::Path) -> Result<()> {
        self.store.load_checkpoint(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(n: usize, s: usize, seed: u32) -> Tensor {
        let len = n * 3 * s * s;
        let data = (0..len)
            .map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) % 997)
            .map(|v| v as f32 / 997.0)
            .collect();
        Tensor::new(&[n, 3, s, s], data).unwrap()
    }

    fn tiny(n: usize) -> SegMentorConfig {
        SegMentorConfig {
            input_size: 32,
            encoder_channels: vec![2, 3, 4],
            ..SegMentorConfig::desk(n)
        }
    }

    #[test]
    fn config_validation() {
        assert!(SegMentorConfig::desk(1).validate().is_ok());
        assert!(SegMentorConfig::full(2).validate().is_ok());
        let mut c = SegMentorConfig::desk(1);
        c.input_size = 48;
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("input_size")));
        let mut c = SegMentorConfig::desk(1);
        c.encoder_channels = vec![8, 8, 16];
        assert!(matches!(c.validate(), Err(Error::Config(m)) if m.contains("increasing")));
        let mut c = SegMentorConfig::desk(1);
        c.encoder_channels = vec![8, 16];
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_has_exactly_the_architecture_keys() {
        let json = serde_json::to_value(SegMentorConfig::desk(2)).unwrap();
        let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["encoder_channels", "hourglass_count", "hourglass_depth", "input_size"]);
        let back: SegMentorConfig = serde_json::from_value(json).unwrap();
        assert_eq!(back, SegMentorConfig::desk(2));
    }

    #[test]
    fn namespaces_partition_parameters() {
        let m = Segmentor::new(tiny(2), 0).unwrap();
        for p in m.store().params() {
            let n = p.name();
            assert!(
                n.starts_with("encoder.") || n.starts_with("decoder.") || n.starts_with("hourglass.0.") || n.starts_with("hourglass.1."),
                "{n}"
            );
        }
        let plain = Segmentor::new(tiny(0), 0).unwrap();
        assert!(!plain.store().has_prefix("hourglass."));
    }

    #[test]
    fn output_is_probability_map_of_input_size() {
        let m = Segmentor::new(tiny(1), 1).unwrap();
        for n in 1..=4 {
            // a 32-pixel input leaves a 1x1 hourglass floor, so a single
            // image cannot be batch-normalized in train mode
            let mode = if n == 1 { Mode::Eval } else { Mode::Train };
            let y = m.forward(&random_batch(n, 32, 5), mode).unwrap();
            assert_eq!(y.shape(), &[n, 1, 32, 32]);
            assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(matches!(m.forward(&random_batch(1, 32, 5), Mode::Train), Err(Error::DegenerateBatch(1))));
    }

    #[test]
    fn wrong_input_size_rejected() {
        let m = Segmentor::new(tiny(0), 1).unwrap();
        assert!(matches!(m.forward(&random_batch(1, 64, 0), Mode::Eval), Err(Error::Dimension(_))));
    }

    #[test]
    fn bottleneck_trace_doubles_channels() {
        let m = Segmentor::new(tiny(2), 1).unwrap();
        let (_, trace) = m.forward_traced(&random_batch(2, 32, 1), Mode::Eval).unwrap();
        assert_eq!(trace.chain_input, vec![2, 4, 4, 4]);
        assert_eq!(trace.chain_output, Some(vec![2, 8, 4, 4]));
        let plain = Segmentor::new(tiny(0), 1).unwrap();
        let (_, trace) = plain.forward_traced(&random_batch(1, 32, 1), Mode::Eval).unwrap();
        assert_eq!(trace.chain_output, None);
    }

    #[test]
    fn more_hourglasses_more_parameters() {
        let counts: Vec<usize> = (0..3).map(|n| Segmentor::new(tiny(n), 0).unwrap().store().num_scalars()).collect();
        assert!(counts[0] < counts[1] && counts[1] < counts[2], "{counts:?}");
    }

    #[test]
    fn grow_requires_next_position() {
        let mut m = Segmentor::new(tiny(1), 0).unwrap();
        assert!(matches!(m.grow_hourglass(0), Err(Error::Contract(_))));
        assert!(matches!(m.grow_hourglass(2), Err(Error::Contract(_))));
        m.grow_hourglass(1).unwrap();
        assert_eq!(m.config().hourglass_count, 2);
    }

    #[test]
    fn grown_model_matches_fresh_model() {
        let mut grown = Segmentor::new(tiny(0), 4).unwrap();
        grown.grow_hourglass(0).unwrap();
        let fresh = Segmentor::new(tiny(1), 4).unwrap();
        assert_eq!(grown.store().checkpoint_bytes().unwrap(), fresh.store().checkpoint_bytes().unwrap());
    }
}
