use super::autograd::{expect_rank4, Tensor};
use crate::error::{Error, Result};

/// 2×2 max pooling with stride 2. Returns the pooled tensor and, per output
/// element, the flat input index it was taken from. Ties resolve to the first
/// maximal element in row-major window order.
pub fn maxpool2d_with_indices(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = expect_rank4(input, "maxpool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "maxpool2d needs even spatial dims, got {:?}",
            input.shape()
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    let routes = argmax.clone();
    let len = input.numel();
    let pooled = Tensor::from_op(
        "maxpool2d",
        vec![n, c, oh, ow],
        out,
        vec![input.clone()],
        move |g| {
            let mut gx = vec![0.0f32; len];
            for (&src, &gv) in routes.iter().zip(g) {
                gx[src] += gv;
            }
            vec![Some(gx)]
        },
    );
    Ok((pooled, argmax))
}

pub fn maxpool2d(input: &Tensor) -> Result<Tensor> {
    maxpool2d_with_indices(input).map(|(t, _)| t)
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x(input: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = expect_rank4(input, "upsample2x")?;
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![0.0f32; n * c * oh * ow];
    for nc in 0..n * c {
        let src = &x[nc * h * w..(nc + 1) * h * w];
        let dst = &mut out[nc * oh * ow..(nc + 1) * oh * ow];
        for y in 0..oh {
            let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
            for (xo, v) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *v = srow[xo / 2];
            }
        }
    }
    Ok(Tensor::from_op(
        "upsample2x",
        vec![n, c, oh, ow],
        out,
        vec![input.clone()],
        move |g| {
            let mut gx = vec![0.0f32; n * c * h * w];
            for nc in 0..n * c {
                let src = &g[nc * oh * ow..(nc + 1) * oh * ow];
                let dst = &mut gx[nc * h * w..(nc + 1) * h * w];
                for y in 0..oh {
                    for xo in 0..ow {
                        dst[(y / 2) * w + xo / 2] += src[y * ow + xo];
                    }
                }
            }
            vec![Some(gx)]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;

    #[test]
    fn pools_window_max() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2d(&x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn constant_input_routes_to_first_position() {
        let x = Tensor::leaf(&[1, 1, 4, 4], vec![3.0; 16]).unwrap();
        let (y, idx) = maxpool2d_with_indices(&x).unwrap();
        assert_eq!(y.data(), &[3.0; 4]);
        assert_eq!(idx, vec![0, 2, 8, 10]);
        ops::sum(&y).backward().unwrap();
        let g = x.grad().unwrap();
        for (i, v) in g.iter().enumerate() {
            let expect = if [0, 2, 8, 10].contains(&i) { 1.0 } else { 0.0 };
            assert_eq!(*v, expect);
        }
    }

    #[test]
    fn odd_dims_rejected() {
        let x = Tensor::zeros(&[1, 1, 3, 4]);
        assert!(matches!(maxpool2d(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn upsample_replicates() {
        let x = Tensor::new(&[1, 1, 1, 1], vec![5.0]).unwrap();
        let y = upsample2x(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[5.0; 4]);
    }

    #[test]
    fn upsample_then_pool_is_identity() {
        let data: Vec<f32> = (0..2 * 3 * 5 * 3).map(|i| ((i * 7919) % 101) as f32 - 50.0).collect();
        let x = Tensor::new(&[2, 3, 5, 3], data).unwrap();
        let back = maxpool2d(&upsample2x(&x).unwrap()).unwrap();
        assert_eq!(back.shape(), x.shape());
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn upsample_backward_is_block_sum() {
        let x = Tensor::leaf(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        let y = upsample2x(&x).unwrap();
        let w = Tensor::new(&[1, 1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        ops::sum(&ops::mul(&y, &w).unwrap()).backward().unwrap();
        // block sums of [[0,1,2,3],[4,5,6,7],[8,9,10,11],[12,13,14,15]]
        assert_eq!(x.grad().unwrap(), vec![10.0, 18.0, 42.0, 50.0]);
    }
}
