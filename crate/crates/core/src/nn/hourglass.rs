//! Residual blocks and the hourglass module stacked at the segmentor bottleneck.

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::{maxpool2d, ops, upsample2x, Mode, Tensor};

use super::layers::{Conv2d, ConvBn};

/// Three 3×3 conv+bn layers with an additive shortcut from block input to
/// block output. The shortcut is a 1×1 projection when channel counts differ.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    layers: [ConvBn; 3],
    projection: Option<Conv2d>,
}

impl ResidualBlock {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let c1 = Conv2d::same3x3(store, &format!("{name}.conv1"), cin, cout)?;
        let c2 = Conv2d::same3x3(store, &format!("{name}.conv2"), cout, cout)?;
        let c3 = Conv2d::same3x3(store, &format!("{name}.conv3"), cout, cout)?;
        let layers = [
            ConvBn::new(store, &format!("{name}.conv1"), c1, cout, true)?,
            ConvBn::new(store, &format!("{name}.conv2"), c2, cout, true)?,
            ConvBn::new(store, &format!("{name}.conv3"), c3, cout, false)?,
        ];
        let projection = if cin != cout {
            Some(Conv2d::pointwise(store, &format!("{name}.proj"), cin, cout)?)
        } else {
            None
        };
        Ok(Self { layers, projection })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(store, &h, mode)?;
        }
        let skip = match &self.projection {
            Some(p) => p.forward(store, x)?,
            None => x.clone(),
        };
        Ok(ops::relu(&ops::add(&h, &skip)?))
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        self.layers.iter().map(ConvBn::conv).chain(self.projection.iter())
    }
}

/// Encoder–decoder over residual blocks. Each encoder level feeds the
/// decoder through its own intermediate residual block before channel
/// concatenation. Spatial size is preserved; channels go `cin → channels`.
#[derive(Clone, Debug)]
pub struct Hourglass {
    down: Vec<ResidualBlock>,
    skips: Vec<ResidualBlock>,
    bottom: ResidualBlock,
    up: Vec<ResidualBlock>,
    channels: usize,
}

impl Hourglass {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, channels: usize, depth: usize) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("hourglass depth must be at least 1".into()));
        }
        let mut down = Vec::with_capacity(depth);
        let mut skips = Vec::with_capacity(depth);
        let mut up = Vec::with_capacity(depth);
        for level in 0..depth {
            let c_in = if level == 0 { cin } else { channels };
            down.push(ResidualBlock::new(store, &format!("{name}.down{level}"), c_in, channels)?);
            skips.push(ResidualBlock::new(store, &format!("{name}.skip{level}"), channels, channels)?);
        }
        let bottom = ResidualBlock::new(store, &format!("{name}.bottom"), channels, channels)?;
        for level in 0..depth {
            up.push(ResidualBlock::new(store, &format!("{name}.up{level}"), 2 * channels, channels)?);
        }
        Ok(Self {
            down,
            skips,
            bottom,
            up,
            channels,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.channels
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut cur = x.clone();
        let mut skipped = Vec::with_capacity(self.down.len());
        for (down, skip) in self.down.iter().zip(&self.skips) {
            let feat = down.forward(store, &cur, mode)?;
            skipped.push(skip.forward(store, &feat, mode)?);
            cur = maxpool2d(&feat)?;
        }
        cur = self.bottom.forward(store, &cur, mode)?;
        for (level, up) in self.up.iter().enumerate().rev() {
            let merged = ops::concat_channels(&upsample2x(&cur)?, &skipped[level])?;
            cur = up.forward(store, &merged, mode)?;
        }
        Ok(cur)
    }
}
