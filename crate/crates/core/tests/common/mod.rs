#![allow(dead_code)]

use gasca::data::{PairedDataset, Split};
use gasca::layer::{Block, Layer, LayerSpec};
use gasca::{SeededRng, ShallowAutoencoder, Tensor};

pub fn random_tensor(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a
        .iter()
        .chain(b)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}

/// Direct cross-correlation with explicit signed index arithmetic.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, s: usize, p: usize) -> Tensor {
    let [n, cin, h, wd] = x.shape()[..] else {
        panic!()
    };
    let [cout, _, k, _] = w.shape()[..] else {
        panic!()
    };
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (wd + 2 * p - k) / s + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()
                                    [((ni * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin + ci) * k + ky) * k + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc + b.data()[co];
                }
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out).unwrap()
}

/// Transposed convolution as a gather: every output pixel sums the input
/// taps that land on it.
pub fn naive_conv_transpose2d(x: &Tensor, w: &Tensor, b: &Tensor, s: usize, p: usize) -> Tensor {
    let [n, cin, h, wd] = x.shape()[..] else {
        panic!()
    };
    let [_, cout, k, _] = w.shape()[..] else {
        panic!()
    };
    let oh = (h - 1) * s + k - 2 * p;
    let ow = (wd - 1) * s + k - 2 * p;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            let t = oy as isize + p as isize - ky as isize;
                            if t < 0 || t % s as isize != 0 || t / s as isize >= h as isize {
                                continue;
                            }
                            let iy = (t / s as isize) as usize;
                            for kx in 0..k {
                                let u = ox as isize + p as isize - kx as isize;
                                if u < 0 || u % s as isize != 0 || u / s as isize >= wd as isize {
                                    continue;
                                }
                                let ix = (u / s as isize) as usize;
                                acc += x.data()[((ni * cin + ci) * h + iy) * wd + ix]
                                    * w.data()[((ci * cout + co) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out).unwrap()
}

/// Random conv hyperparameters with a valid output: (n, cin, cout, h, w, k, s, p).
pub fn random_conv_case(
    rng: &mut SeededRng,
) -> (usize, usize, usize, usize, usize, usize, usize, usize) {
    loop {
        let n = 1 + rng.below(2);
        let cin = 1 + rng.below(3);
        let cout = 1 + rng.below(3);
        let k = 1 + rng.below(4);
        let s = 1 + rng.below(3);
        let p = rng.below(k);
        let h = 2 + rng.below(6);
        let w = 2 + rng.below(6);
        if h + 2 * p >= k && w + 2 * p >= k {
            return (n, cin, cout, h, w, k, s, p);
        }
    }
}

fn eye_block(channels: usize, transposed: bool) -> Block {
    let w = Tensor::from_fn(&[channels, channels, 1, 1], |i| {
        if i % (channels + 1) == 0 {
            1.0
        } else {
            0.0
        }
    });
    let (in_channels, out_channels, kernel_size, stride, padding) = (channels, channels, 1, 1, 0);
    let spec = if transposed {
        LayerSpec::ConvTranspose {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
        }
    } else {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
        }
    };
    Block::new(vec![Layer::with_params(
        spec,
        Some(w),
        Some(Tensor::zeros(&[channels])),
    )
    .unwrap()])
    .unwrap()
}

/// 1×1 identity conv encoder and decoder with no activation.
pub fn identity_stage(stage: usize, input_shape: &[usize]) -> ShallowAutoencoder {
    let c = input_shape[0];
    ShallowAutoencoder::new(stage, input_shape, eye_block(c, false), eye_block(c, true)).unwrap()
}

/// `n` pixel pairs in [0,1]; targets are a smoothed copy of inputs.
pub fn tiny_dataset(n: usize, shape: &[usize], rng: &mut SeededRng) -> PairedDataset {
    let mut full = vec![n];
    full.extend_from_slice(shape);
    let inputs = Tensor::from_fn(&full, |_| rng.uniform());
    let targets = inputs.map(|v| 0.25 + 0.5 * v);
    PairedDataset::new(inputs, targets, Split::Train).unwrap()
}

pub fn param_bytes<'a>(params: impl IntoIterator<Item = &'a gasca::param::Parameter>) -> Vec<u8> {
    params
        .into_iter()
        .flat_map(|p| p.value.data().iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

/// Input shape (per item) and layer for a random instance of `kind`.
pub fn random_layer(kind: usize, rng: &mut SeededRng) -> (Vec<usize>, Layer) {
    let (n_in, spec) = match kind {
        0 | 1 => {
            let (_, cin, cout, h, w, k, s, p) = random_conv_case(rng);
            let (in_channels, out_channels, kernel_size, stride, padding) = (cin, cout, k, s, p);
            if kind == 0 {
                (
                    vec![cin, h, w],
                    LayerSpec::Conv {
                        in_channels,
                        out_channels,
                        kernel_size,
                        stride,
                        padding,
                    },
                )
            } else if (h - 1) * s + k > 2 * p && (w - 1) * s + k > 2 * p {
                (
                    vec![cin, h, w],
                    LayerSpec::ConvTranspose {
                        in_channels,
                        out_channels,
                        kernel_size,
                        stride,
                        padding,
                    },
                )
            } else {
                return random_layer(kind, rng);
            }
        }
        2 => {
            let (c, h) = (1 + rng.below(3), 1 + rng.below(4));
            (
                vec![c, h, h],
                LayerSpec::Dense {
                    in_features: c * h * h,
                    out_features: 1 + rng.below(4),
                },
            )
        }
        3 => (
            vec![1 + rng.below(3), 2 + rng.below(4), 2 + rng.below(4)],
            LayerSpec::LeakyRelu { alpha: 0.2 },
        ),
        _ => (
            vec![1 + rng.below(3), 2 + rng.below(4), 2 + rng.below(4)],
            LayerSpec::Sigmoid,
        ),
    };
    (n_in, Layer::init(spec, rng).unwrap())
}

pub fn away_from_kink(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v = rng.uniform_range(-2.0, 2.0);
        if v.abs() < 1e-3 {
            0.1
        } else {
            v
        }
    })
}
