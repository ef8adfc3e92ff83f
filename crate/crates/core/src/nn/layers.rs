use crate::error::Result;
use crate::param::{BufferId, Init, ParamId, ParamStore};
use crate::tensor::{batchnorm2d, conv2d, ops, BatchNormStats, Mode, Tensor, BN_EPSILON, BN_MOMENTUM};

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: ParamId,
    bias: ParamId,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// He-normal weights, zero bias.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = cin * kernel * kernel;
        Ok(Self {
            weight: store.add_param(
                &format!("{name}.weight"),
                &[cout, cin, kernel, kernel],
                Init::HeNormal { fan_in },
            )?,
            bias: store.add_param(&format!("{name}.bias"), &[cout], Init::Zeros)?,
            stride,
            padding,
        })
    }

    /// 3×3, stride 1, same padding.
    pub fn same3x3(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Self::new(store, name, cin, cout, 3, 1, 1)
    }

    pub fn pointwise(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<Self> {
        Self::new(store, name, cin, cout, 1, 1, 0)
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        conv2d(x, store.tensor(self.weight), store.tensor(self.bias), self.stride, self.padding)
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }
}

/// Batch norm whose running statistics live in the store as
/// `<name>.running_mean` / `<name>.running_var` buffers.
///
/// A layer whose `gamma` is frozen normalizes with its running statistics
/// even in train mode, so a frozen sub-network stays fixed as a function.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    gamma: ParamId,
    beta: ParamId,
    running_mean: BufferId,
    running_var: BufferId,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add_param(&format!("{name}.gamma"), &[channels], Init::Ones)?,
            beta: store.add_param(&format!("{name}.beta"), &[channels], Init::Zeros)?,
            running_mean: store.add_buffer(&format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: store.add_buffer(&format!("{name}.running_var"), &[channels], 1.0)?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mode = if store.param(self.gamma).is_frozen() { Mode::Eval } else { mode };
        let mut mean = store.buffer(self.running_mean).lock();
        let mut var = store.buffer(self.running_var).lock();
        let mut stats = BatchNormStats {
            mean: std::mem::take(&mut *mean),
            var: std::mem::take(&mut *var),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        };
        let out = batchnorm2d(x, store.tensor(self.gamma), store.tensor(self.beta), mode, &mut stats);
        *mean = stats.mean;
        *var = stats.var;
        out
    }
}

/// conv → batch norm → optional relu.
#[derive(Clone, Debug)]
pub struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
    relu: bool,
}

impl ConvBn {
    pub fn new(store: &mut ParamStore, name: &str, conv: Conv2d, channels: usize, relu: bool) -> Result<Self> {
        let bn = BatchNorm2d::new(store, &format!("{name}.bn"), channels)?;
        Ok(Self { conv, bn, relu })
    }

    /// 3×3 same-padded conv + bn + relu, parameters under `name.conv` / `name.bn`.
    pub fn same3x3(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let conv = Conv2d::same3x3(store, &format!("{name}.conv"), cin, cout)?;
        Self::new(store, name, conv, cout, true)
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let y = self.bn.forward(store, &self.conv.forward(store, x)?, mode)?;
        Ok(if self.relu { ops::relu(&y) } else { y })
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }
}
