use super::autograd::{expect_rank4, Tensor};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f32 = 0.9;
pub const BN_EPSILON: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running per-channel statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    /// Weight of the old running value in each update.
    pub momentum: f32,
    pub epsilon: f32,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }
}

/// Per-channel batch normalization of `[N,C,H,W]`.
///
/// Train mode normalizes with batch statistics over N·H·W and folds them into
/// `stats`; eval mode normalizes with `stats` and leaves them untouched.
pub fn batchnorm2d(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: Mode,
    stats: &mut BatchNormStats,
) -> Result<Tensor> {
    let [n, c, h, w] = expect_rank4(input, "batchnorm2d")?;
    if gamma.shape() != [c] || beta.shape() != [c] || stats.mean.len() != c {
        return Err(Error::Dimension(format!(
            "batchnorm2d: input {:?} needs {c} channels, gamma {:?}, beta {:?}, stats {}",
            input.shape(),
            gamma.shape(),
            beta.shape(),
            stats.mean.len()
        )));
    }
    let plane = h * w;
    let m = n * plane;
    if mode == Mode::Train && m < 2 {
        return Err(Error::DegenerateBatch(m));
    }
    let x = input.data();
    let channel_iter = move |ch: usize| (0..n).flat_map(move |i| (i * c + ch) * plane..(i * c + ch + 1) * plane);

    let mut mean = vec![0.0f32; c];
    let mut inv_std = vec![0.0f32; c];
    for ch in 0..c {
        let (mu, var) = match mode {
            Mode::Train => {
                let mu = channel_iter(ch).map(|j| f64::from(x[j])).sum::<f64>() / m as f64;
                let var = channel_iter(ch)
                    .map(|j| {
                        let d = f64::from(x[j]) - mu;
                        d * d
                    })
                    .sum::<f64>()
                    / m as f64;
                let unbiased = var * m as f64 / (m - 1) as f64;
                stats.mean[ch] = stats.momentum * stats.mean[ch] + (1.0 - stats.momentum) * mu as f32;
                stats.var[ch] = stats.momentum * stats.var[ch] + (1.0 - stats.momentum) * unbiased as f32;
                (mu as f32, var as f32)
            }
            Mode::Eval => (stats.mean[ch], stats.var[ch]),
        };
        mean[ch] = mu;
        inv_std[ch] = 1.0 / (var + stats.epsilon).sqrt();
    }

    let mut xhat = vec![0.0f32; x.len()];
    let mut out = vec![0.0f32; x.len()];
    for ch in 0..c {
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for j in channel_iter(ch) {
            let xh = (x[j] - mean[ch]) * inv_std[ch];
            xhat[j] = xh;
            out[j] = g * xh + b;
        }
    }

    let gamma_saved = gamma.clone();
    let need_input = input.requires_grad();
    Ok(Tensor::from_op(
        "batchnorm2d",
        vec![n, c, h, w],
        out,
        vec![input.clone(), gamma.clone(), beta.clone()],
        move |g| {
            let mut gx = vec![0.0f32; if need_input { g.len() } else { 0 }];
            let mut ggamma = vec![0.0f32; c];
            let mut gbeta = vec![0.0f32; c];
            for ch in 0..c {
                let mut sum_g = 0.0f64;
                let mut sum_gx = 0.0f64;
                for j in channel_iter(ch) {
                    sum_g += f64::from(g[j]);
                    sum_gx += f64::from(g[j]) * f64::from(xhat[j]);
                }
                gbeta[ch] = sum_g as f32;
                ggamma[ch] = sum_gx as f32;
                if !need_input {
                    continue;
                }
                let scale = gamma_saved.data()[ch] * inv_std[ch];
                match mode {
                    Mode::Train => {
                        let mean_g = (sum_g / m as f64) as f32;
                        let mean_gx = (sum_gx / m as f64) as f32;
                        for j in channel_iter(ch) {
                            gx[j] = scale * (g[j] - mean_g - xhat[j] * mean_gx);
                        }
                    }
                    Mode::Eval => {
                        for j in channel_iter(ch) {
                            gx[j] = scale * g[j];
                        }
                    }
                }
            }
            vec![need_input.then_some(gx), Some(ggamma), Some(gbeta)]
        },
    ))
}
