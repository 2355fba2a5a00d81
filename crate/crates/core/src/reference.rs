//! Direct loop implementations used as oracles and benchmark baselines.
//! Everything here accumulates in f64 and favours clarity over speed.

use crate::tensor::{Real, Tensor};

/// Seven nested loops; zero padding, batch 1.
pub fn conv2d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, stride: usize, padding: usize) -> Tensor<T> {
    let (_, cin, h, w) = input.dims4().expect("rank 4 input");
    let (cout, _, kh, kw) = weight.dims4().expect("rank 4 weight");
    let ho = (h + 2 * padding - kh) / stride + 1;
    let wo = (w + 2 * padding - kw) / stride + 1;
    let (x, k) = (input.data(), weight.data());
    let mut out = vec![T::zero(); cout * ho * wo];
    for co in 0..cout {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias.map_or(0.0, |b| b.data()[co].f64());
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let xv = x[(ci * h + iy as usize) * w + ix as usize].f64();
                            let kv = k[((co * cin + ci) * kh + ky) * kw + kx].f64();
                            acc += xv * kv;
                        }
                    }
                }
                out[(co * ho + oy) * wo + ox] = T::of(acc);
            }
        }
    }
    Tensor::new(vec![1, cout, ho, wo], out).expect("consistent dims")
}

/// 2×2 stride-2 max pooling.
pub fn max_pool2d<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let (_, c, h, w) = input.dims4().expect("rank 4 input");
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    Tensor::from_fn(vec![1, c, ho, wo], |i| {
        let (ch, oy, ox) = (i / (ho * wo), (i / wo) % ho, i % wo);
        let mut best = T::neg_infinity();
        for dy in 0..2 {
            for dx in 0..2 {
                let v = x[(ch * h + 2 * oy + dy) * w + 2 * ox + dx];
                if v > best {
                    best = v;
                }
            }
        }
        best
    })
}

pub fn batch_norm_eval<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &Tensor<T>,
    var: &Tensor<T>,
    eps: f64,
) -> Tensor<T> {
    let (_, _, h, w) = input.dims4().expect("rank 4 input");
    let x = input.data();
    Tensor::from_fn(input.shape().to_vec(), |i| {
        let c = i / (h * w);
        let norm = (x[i].f64() - mean.data()[c].f64()) / (var.data()[c].f64() + eps).sqrt();
        T::of(gamma.data()[c].f64() * norm + beta.data()[c].f64())
    })
}

/// `G_ij = Σ_k F_ik F_jk` by double loop over channel pairs.
pub fn gram<T: Real>(features: &Tensor<T>) -> Tensor<T> {
    let (d, m) = features.as_channels_by_positions().expect("feature map");
    let f = features.data();
    Tensor::from_fn(vec![d, d], |idx| {
        let (i, j) = (idx / d, idx % d);
        T::of((0..m).map(|k| f[i * m + k].f64() * f[j * m + k].f64()).sum())
    })
}

/// `−Σ p log p / log N` with `p` the plain (unshifted) softmax.
pub fn normalized_entropy(values: &[f64]) -> f64 {
    let n = values.len();
    if n <= 1 {
        return 1.0;
    }
    let z: f64 = values.iter().map(|v| v.exp()).sum();
    let h: f64 = values
        .iter()
        .map(|v| {
            let p = v.exp() / z;
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .sum();
    h / (n as f64).ln()
}

/// `exp(x_i / T) / Σ exp(x_j / T)` without a max shift.
pub fn softmax(values: &[f64], temperature: f64) -> Vec<f64> {
    let e: Vec<f64> = values.iter().map(|v| (v / temperature).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
