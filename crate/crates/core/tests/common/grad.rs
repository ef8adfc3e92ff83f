//! Central finite differences over f64 reference forwards, compared against
//! the library's reverse-mode gradients.

use lesionseg::detector::{rpn_losses, AnchorLabel, BoxDelta};
use lesionseg::metrics::dice_loss;
use lesionseg::tensor::{batchnorm2d, conv2d, maxpool2d, ops, upsample2x, BatchNormStats, Mode, Tensor};
use rand::Rng;

use super::{away_from_zero, distinct, rng, to_f32, uniform};

pub const EPS: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_FLOOR: f64 = 1e-5;

type Forward<'a> = Box<dyn Fn(&[Vec<f64>]) -> f64 + 'a>;

/// ∂f/∂inputs[k] by central differences.
pub fn numeric_grad(f: &dyn Fn(&[Vec<f64>]) -> f64, inputs: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut x = inputs.to_vec();
    (0..inputs[k].len())
        .map(|i| {
            let orig = x[k][i];
            x[k][i] = orig + EPS;
            let up = f(&x);
            x[k][i] = orig - EPS;
            let down = f(&x);
            x[k][i] = orig;
            (up - down) / (2.0 * EPS)
        })
        .collect()
}

pub fn compare(what: &str, analytic: &[f32], numeric: &[f64]) -> Result<(), String> {
    if analytic.len() != numeric.len() {
        return Err(format!("{what}: {} analytic vs {} numeric entries", analytic.len(), numeric.len()));
    }
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let a = f64::from(a);
        let tol = (REL_TOL * a.abs().max(n.abs())).max(ABS_FLOOR);
        if (a - n).abs() > tol || !a.is_finite() {
            return Err(format!("{what}[{i}]: analytic {a:.6e} vs numeric {n:.6e}"));
        }
    }
    Ok(())
}

/// Runs `forward_lib` on leaves built from `inputs`, backpropagates and
/// compares each input's gradient against finite differences of `reference`.
fn check(
    name: &str,
    inputs: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
    reference: Forward<'_>,
    forward_lib: &dyn Fn(&[Tensor]) -> Tensor,
) -> Result<(), String> {
    let leaves: Vec<Tensor> = inputs
        .iter()
        .zip(&shapes)
        .map(|(v, s)| Tensor::leaf(s, to_f32(v)).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let loss = forward_lib(&leaves);
    let lib_value = f64::from(loss.item().map_err(|e| e.to_string())?);
    let ref_value = reference(&inputs);
    if (lib_value - ref_value).abs() > 1e-4 * (1.0 + ref_value.abs()) {
        return Err(format!("{name}: forward {lib_value:.6e} vs reference {ref_value:.6e}"));
    }
    loss.backward().map_err(|e| e.to_string())?;
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        compare(&format!("{name} input {k}"), &analytic, &numeric_grad(reference.as_ref(), &inputs, k))?;
    }
    Ok(())
}

/// Scalar probe `Σ r·y` so every output element contributes to the gradient.
fn probe_lib(y: &Tensor, r: &[f64]) -> Tensor {
    let rt = Tensor::new(y.shape(), to_f32(r)).expect("probe shape");
    ops::sum(&ops::mul(y, &rt).expect("same shape"))
}

fn probe_ref(y: &[f64], r: &[f64]) -> f64 {
    y.iter().zip(r).map(|(a, b)| a * b).sum()
}

// ---------------------------------------------------------------- references

#[allow(clippy::too_many_arguments)]
pub fn ref_conv2d(
    x: &[f64],
    [n, cin, h, w]: [usize; 4],
    wt: &[f64],
    [cout, kh, kw]: [usize; 3],
    b: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((ni * cin + ci) * h + iy as usize) * w + ix as usize];
                                acc += xv * wt[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

pub fn ref_batchnorm(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    gamma: &[f64],
    beta: &[f64],
    running: Option<(&[f64], &[f64])>,
    eps: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let m = (n * h * w) as f64;
    for ch in 0..c {
        let idx = |ni: usize, p: usize| (ni * c + ch) * h * w + p;
        let (mu, var) = match running {
            Some((rm, rv)) => (rm[ch], rv[ch]),
            None => {
                let mut s = 0.0;
                for ni in 0..n {
                    for p in 0..h * w {
                        s += x[idx(ni, p)];
                    }
                }
                let mu = s / m;
                let mut v = 0.0;
                for ni in 0..n {
                    for p in 0..h * w {
                        v += (x[idx(ni, p)] - mu).powi(2);
                    }
                }
                (mu, v / m)
            }
        };
        for ni in 0..n {
            for p in 0..h * w {
                out[idx(ni, p)] = gamma[ch] * (x[idx(ni, p)] - mu) / (var + eps).sqrt() + beta[ch];
            }
        }
    }
    out
}

pub fn ref_maxpool2(x: &[f64], [n, c, h, w]: [usize; 4]) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![f64::NEG_INFINITY; n * c * oh * ow];
    for nc in 0..n * c {
        for y in 0..oh * 2 {
            for xx in 0..ow * 2 {
                let o = &mut out[(nc * oh + y / 2) * ow + xx / 2];
                *o = o.max(x[(nc * h + y) * w + xx]);
            }
        }
    }
    out
}

pub fn ref_upsample2(x: &[f64], [n, c, h, w]: [usize; 4]) -> Vec<f64> {
    let mut out = vec![0.0; n * c * 4 * h * w];
    for nc in 0..n * c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out[(nc * 2 * h + y) * 2 * w + xx] = x[(nc * h + y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn ref_dice(p: &[f64], t: &[f64], smooth: f64) -> f64 {
    let inter: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
    let total: f64 = p.iter().sum::<f64>() + t.iter().sum::<f64>();
    1.0 - (2.0 * inter + smooth) / (total + smooth)
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean BCE over labelled anchors plus mean squared error over the four
/// deltas of every positive anchor, reading the `[N,A,Hf,Wf]` and
/// `[N,4A,Hf,Wf]` maps with anchor index `(i·Wf + j)·A + a` per image.
pub fn ref_rpn(obj: &[f64], deltas: &[f64], [n, a, hf, wf]: [usize; 4], labels: &[AnchorLabel], targets: &[BoxDelta]) -> (f64, f64) {
    let (mut cls, mut ncls, mut reg, mut nreg) = (0.0, 0usize, 0.0, 0usize);
    for img in 0..n {
        for i in 0..hf {
            for j in 0..wf {
                for k in 0..a {
                    let anchor = img * hf * wf * a + (i * wf + j) * a + k;
                    let z = obj[((img * a + k) * hf + i) * wf + j];
                    match labels[anchor] {
                        AnchorLabel::Positive => {
                            cls += softplus(-z);
                            ncls += 1;
                            let t = [targets[anchor].tx, targets[anchor].ty, targets[anchor].tw, targets[anchor].th];
                            for (c, tv) in t.iter().enumerate() {
                                let d = deltas[((img * 4 * a + 4 * k + c) * hf + i) * wf + j];
                                reg += (d - f64::from(*tv)).powi(2);
                                nreg += 1;
                            }
                        }
                        AnchorLabel::Negative => {
                            cls += softplus(z);
                            ncls += 1;
                        }
                        AnchorLabel::Ignore => {}
                    }
                }
            }
        }
    }
    (if ncls > 0 { cls / ncls as f64 } else { 0.0 }, if nreg > 0 { reg / nreg as f64 } else { 0.0 })
}

// --------------------------------------------------------------------- cases

pub fn conv2d_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (n, cin, cout) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
    let (h, w) = (r.gen_range(4..=7), r.gen_range(4..=7));
    let k = if r.gen_bool(0.5) { 3 } else { 1 };
    let stride = r.gen_range(1..=2);
    let pad = if k == 3 { r.gen_range(0..=1) } else { 0 };
    let x = uniform(&mut r, n * cin * h * w, -1.0, 1.0);
    let wt = uniform(&mut r, cout * cin * k * k, -1.0, 1.0);
    let b = uniform(&mut r, cout, -0.5, 0.5);
    let (_, oh, ow) = ref_conv2d(&x, [n, cin, h, w], &wt, [cout, k, k], &b, stride, pad);
    let probe = uniform(&mut r, n * cout * oh * ow, -1.0, 1.0);
    let p2 = probe.clone();
    check(
        &format!("conv2d seed {seed}"),
        vec![x, wt, b],
        vec![vec![n, cin, h, w], vec![cout, cin, k, k], vec![cout]],
        Box::new(move |v| probe_ref(&ref_conv2d(&v[0], [n, cin, h, w], &v[1], [cout, k, k], &v[2], stride, pad).0, &probe)),
        &|t| probe_lib(&conv2d(&t[0], &t[1], &t[2], stride, pad).unwrap(), &p2),
    )
}

pub fn batchnorm_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (n, c, h, w) = (r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(2..=4), r.gen_range(2..=4));
    let eval = seed % 4 == 3;
    let x = uniform(&mut r, n * c * h * w, -2.0, 2.0);
    let gamma = uniform(&mut r, c, 0.5, 1.5);
    let beta = uniform(&mut r, c, -0.5, 0.5);
    let rm = uniform(&mut r, c, -0.5, 0.5);
    let rv = uniform(&mut r, c, 0.5, 2.0);
    let probe = uniform(&mut r, x.len(), -1.0, 1.0);
    let p2 = probe.clone();
    let eps = f64::from(lesionseg::tensor::BN_EPSILON);
    let (rm2, rv2) = (rm.clone(), rv.clone());
    check(
        &format!("batchnorm2d {} seed {seed}", if eval { "eval" } else { "train" }),
        vec![x, gamma, beta],
        vec![vec![n, c, h, w], vec![c], vec![c]],
        Box::new(move |v| {
            let running = eval.then_some((rm.as_slice(), rv.as_slice()));
            probe_ref(&ref_batchnorm(&v[0], [n, c, h, w], &v[1], &v[2], running, eps), &probe)
        }),
        &|t| {
            let mut stats = BatchNormStats::new(c);
            stats.mean = to_f32(&rm2);
            stats.var = to_f32(&rv2);
            let mode = if eval { Mode::Eval } else { Mode::Train };
            probe_lib(&batchnorm2d(&t[0], &t[1], &t[2], mode, &mut stats).unwrap(), &p2)
        },
    )
}

pub fn maxpool_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (n, c, h, w) = (r.gen_range(1..=2), r.gen_range(1..=3), 2 * r.gen_range(1..=3), 2 * r.gen_range(1..=3));
    // spacing 0.01 ≫ 2·EPS keeps every window's argmax fixed under perturbation
    let x = distinct(&mut r, n * c * h * w, 0.01);
    let probe = uniform(&mut r, n * c * (h / 2) * (w / 2), -1.0, 1.0);
    let p2 = probe.clone();
    check(
        &format!("maxpool2d seed {seed}"),
        vec![x],
        vec![vec![n, c, h, w]],
        Box::new(move |v| probe_ref(&ref_maxpool2(&v[0], [n, c, h, w]), &probe)),
        &|t| probe_lib(&maxpool2d(&t[0]).unwrap(), &p2),
    )
}

pub fn upsample_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (n, c, h, w) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4));
    let x = uniform(&mut r, n * c * h * w, -1.0, 1.0);
    let probe = uniform(&mut r, 4 * x.len(), -1.0, 1.0);
    let p2 = probe.clone();
    check(
        &format!("upsample2x seed {seed}"),
        vec![x],
        vec![vec![n, c, h, w]],
        Box::new(move |v| probe_ref(&ref_upsample2(&v[0], [n, c, h, w]), &probe)),
        &|t| probe_lib(&upsample2x(&t[0]).unwrap(), &p2),
    )
}

/// relu, sigmoid, add, sub, mul, scale, mean and channel concat chained in
/// one expression.
pub fn elementwise_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (n, c, h, w) = (r.gen_range(1..=2), r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
    let len = n * c * h * w;
    // relu inputs stay ≥ 0.05 away from the kink
    let a = away_from_zero(&mut r, len, 0.05, 1.5);
    let b = uniform(&mut r, len, -1.5, 1.5);
    let cc = uniform(&mut r, len, -1.5, 1.5);
    let probe = uniform(&mut r, 2 * len, -1.0, 1.0);
    let p2 = probe.clone();
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    check(
        &format!("elementwise seed {seed}"),
        vec![a, b, cc],
        vec![vec![n, c, h, w]; 3],
        Box::new(move |v| {
            // u = relu(a)·sigmoid(b) − 0.7·c ; w = a + c ; y = concat(u, w) along channels
            let u: Vec<f64> = (0..len).map(|i| v[0][i].max(0.0) * sig(v[1][i]) - 0.7 * v[2][i]).collect();
            let wv: Vec<f64> = (0..len).map(|i| v[0][i] + v[2][i]).collect();
            let mut y = Vec::with_capacity(2 * len);
            for ni in 0..n {
                y.extend_from_slice(&u[ni * c * h * w..(ni + 1) * c * h * w]);
                y.extend_from_slice(&wv[ni * c * h * w..(ni + 1) * c * h * w]);
            }
            let mean_u = u.iter().sum::<f64>() / len as f64;
            probe_ref(&y, &probe) + mean_u
        }),
        &|t| {
            let u = ops::sub(&ops::mul(&ops::relu(&t[0]), &ops::sigmoid(&t[1])).unwrap(), &ops::scale(&t[2], 0.7)).unwrap();
            let wv = ops::add(&t[0], &t[2]).unwrap();
            let y = ops::concat_channels(&u, &wv).unwrap();
            ops::add(&probe_lib(&y, &p2), &ops::mean(&u)).unwrap()
        },
    )
}

pub fn dice_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (n, h, w) = (r.gen_range(1..=2), r.gen_range(2..=6), r.gen_range(2..=6));
    let p = uniform(&mut r, n * h * w, 0.01, 0.99);
    let t: Vec<f64> = (0..p.len()).map(|_| if r.gen_bool(0.4) { 1.0 } else { 0.0 }).collect();
    let smooth = if seed.is_multiple_of(2) { 1.0 } else { 1e-3 };
    let t2 = t.clone();
    check(
        &format!("dice_loss seed {seed}"),
        vec![p],
        vec![vec![n, 1, h, w]],
        Box::new(move |v| ref_dice(&v[0], &t, smooth)),
        &|x| dice_loss(&x[0], &Tensor::new(&[n, 1, h, w], to_f32(&t2)).unwrap(), smooth as f32).unwrap(),
    )
}

pub fn rpn_case(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let (n, a, hf, wf) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=3));
    let count = n * a * hf * wf;
    let labels: Vec<AnchorLabel> = (0..count)
        .map(|_| match r.gen_range(0..3) {
            0 => AnchorLabel::Positive,
            1 => AnchorLabel::Negative,
            _ => AnchorLabel::Ignore,
        })
        .collect();
    let targets: Vec<BoxDelta> = (0..count)
        .map(|_| BoxDelta { tx: r.gen_range(-1.0..1.0), ty: r.gen_range(-1.0..1.0), tw: r.gen_range(-1.0..1.0), th: r.gen_range(-1.0..1.0) })
        .collect();
    let obj = uniform(&mut r, count, -3.0, 3.0);
    let del = uniform(&mut r, 4 * count, -1.5, 1.5);
    let (l2, t2) = (labels.clone(), targets.clone());
    check(
        &format!("rpn_losses seed {seed}"),
        vec![obj, del],
        vec![vec![n, a, hf, wf], vec![n, 4 * a, hf, wf]],
        Box::new(move |v| {
            let (c, g) = ref_rpn(&v[0], &v[1], [n, a, hf, wf], &labels, &targets);
            c + g
        }),
        &|t| {
            let (c, g) = rpn_losses(&t[0], &t[1], &l2, &t2).unwrap();
            ops::add(&c, &g).unwrap()
        },
    )
}

pub type Case = fn(u64) -> Result<(), String>;

pub const SUITE: [(&str, Case); 7] = [
    ("conv2d", conv2d_case),
    ("batchnorm2d", batchnorm_case),
    ("maxpool2d", maxpool_case),
    ("upsample2x", upsample_case),
    ("elementwise", elementwise_case),
    ("dice_loss", dice_case),
    ("rpn_losses", rpn_case),
];

/// Runs `cases` seeds of every op; returns per-op failure messages.
pub fn run_suite(cases: u64) -> Vec<(&'static str, Vec<String>)> {
    SUITE
        .iter()
        .map(|&(name, f)| (name, (0..cases).filter_map(|s| f(s).err()).collect()))
        .collect()
}
