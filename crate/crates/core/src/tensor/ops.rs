//! Elementwise ops, reductions and channel concatenation.

use super::autograd::{expect_rank4, Tensor};
use crate::error::{Error, Result};

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes differ, {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn relu(x: &Tensor) -> Tensor {
    let data: Vec<f32> = x.data().iter().map(|&v| v.max(0.0)).collect();
    let xc = x.clone();
    Tensor::from_op("relu", x.shape().to_vec(), data, vec![x.clone()], move |g| {
        let gx = g
            .iter()
            .zip(xc.data())
            .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
            .collect();
        vec![Some(gx)]
    })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let data: Vec<f32> = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    let out = data.clone();
    Tensor::from_op("sigmoid", x.shape().to_vec(), data, vec![x.clone()], move |g| {
        let gx = g.iter().zip(&out).map(|(&g, &s)| g * s * (1.0 - s)).collect();
        vec![Some(gx)]
    })
}

pub(crate) fn sigmoid_scalar(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        "add",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        |g| vec![Some(g.to_vec()), Some(g.to_vec())],
    ))
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "sub")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(
        "sub",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        |g| vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())],
    ))
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape(a, b, "mul")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        "mul",
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        move |g| {
            let ga = g.iter().zip(bc.data()).map(|(g, y)| g * y).collect();
            let gb = g.iter().zip(ac.data()).map(|(g, x)| g * x).collect();
            vec![Some(ga), Some(gb)]
        },
    ))
}

pub fn scale(x: &Tensor, factor: f32) -> Tensor {
    let data = x.data().iter().map(|v| v * factor).collect();
    Tensor::from_op("scale", x.shape().to_vec(), data, vec![x.clone()], move |g| {
        vec![Some(g.iter().map(|v| v * factor).collect())]
    })
}

/// Sum of all elements as a `[1]` tensor. Accumulates in f64.
pub fn sum(x: &Tensor) -> Tensor {
    let total = x.data().iter().map(|&v| f64::from(v)).sum::<f64>() as f32;
    let n = x.numel();
    Tensor::from_op("sum", vec![1], vec![total], vec![x.clone()], move |g| {
        vec![Some(vec![g[0]; n])]
    })
}

pub fn mean(x: &Tensor) -> Tensor {
    let n = x.numel();
    scale(&sum(x), 1.0 / n as f32)
}

/// Concatenates two `[N,C,H,W]` tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, ca, h, w] = expect_rank4(a, "concat_channels")?;
    let [nb, cb, hb, wb] = expect_rank4(b, "concat_channels")?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::Dimension(format!(
            "concat_channels: N,H,W must match, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let plane = h * w;
    let c = ca + cb;
    let mut data = Vec::with_capacity(n * c * plane);
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
        data.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
    }
    Ok(Tensor::from_op(
        "concat_channels",
        vec![n, c, h, w],
        data,
        vec![a.clone(), b.clone()],
        move |g| {
            let mut ga = Vec::with_capacity(n * ca * plane);
            let mut gb = Vec::with_capacity(n * cb * plane);
            for i in 0..n {
                let base = i * c * plane;
                ga.extend_from_slice(&g[base..base + ca * plane]);
                gb.extend_from_slice(&g[base + ca * plane..base + c * plane]);
            }
            vec![Some(ga), Some(gb)]
        },
    ))
}

/// Concatenates 4-D tensors along the batch axis.
pub fn concat_batch(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Contract("concat_batch needs at least one tensor".into()))?;
    let [_, c, h, w] = expect_rank4(first, "concat_batch")?;
    let mut n = 0;
    let mut data = Vec::new();
    let mut sizes = Vec::with_capacity(parts.len());
    for p in parts {
        let [pn, pc, ph, pw] = expect_rank4(p, "concat_batch")?;
        if (pc, ph, pw) != (c, h, w) {
            return Err(Error::Dimension(format!(
                "concat_batch: C,H,W must match, got {:?} and {:?}",
                first.shape(),
                p.shape()
            )));
        }
        n += pn;
        sizes.push(p.numel());
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::from_op(
        "concat_batch",
        vec![n, c, h, w],
        data,
        parts.to_vec(),
        move |g| {
            let mut off = 0;
            sizes
                .iter()
                .map(|&s| {
                    let part = g[off..off + s].to_vec();
                    off += s;
                    Some(part)
                })
                .collect()
        },
    ))
}
