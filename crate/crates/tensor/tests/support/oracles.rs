//! Brute-force reference implementations used to check the fast kernels.
//! Deliberately naive: direct index arithmetic, no shared code with `ops`.
#![allow(dead_code)]

use fpnr_tensor::{ConvSpec, Tensor};
use rand::Rng;

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

pub fn conv2d_direct(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    spec: &ConvSpec,
) -> Tensor<f64> {
    let s = x.shape();
    let (bn, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let (cout, kh, kw) = (spec.out_channels, spec.kernel.0, spec.kernel.1);
    let (d, st, p) = (
        spec.dilation as i64,
        spec.stride as i64,
        spec.padding as i64,
    );
    let ho = ((h as i64 + 2 * p - d * (kh as i64 - 1) - 1) / st + 1) as usize;
    let wo = ((wd as i64 + 2 * p - d * (kw as i64 - 1) - 1) / st + 1) as usize;
    let xv = |bi: usize, c: usize, y: i64, xx: i64| -> f64 {
        if y < 0 || xx < 0 || y >= h as i64 || xx >= wd as i64 {
            0.0
        } else {
            x.data()[((bi * cin + c) * h + y as usize) * wd + xx as usize]
        }
    };
    let mut out = vec![0.0; bn * cout * ho * wo];
    for bi in 0..bn {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = oy as i64 * st - p + ky as i64 * d;
                                let ix = ox as i64 * st - p + kx as i64 * d;
                                acc += w.data()[((co * cin + ci) * kh + ky) * kw + kx]
                                    * xv(bi, ci, iy, ix);
                            }
                        }
                    }
                    out[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(&[bn, cout, ho, wo], out).unwrap()
}

/// 2x2 window maximum; odd extents replicate the final row/column.
pub fn max_pool2_scan(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let at = |p: usize, y: usize, xx: usize| x.data()[(p * h + y.min(h - 1)) * w + xx.min(w - 1)];
    let mut out = Vec::new();
    for p in 0..bn * c {
        for oy in 0..ho {
            for ox in 0..wo {
                let vals = [
                    at(p, 2 * oy, 2 * ox),
                    at(p, 2 * oy, 2 * ox + 1),
                    at(p, 2 * oy + 1, 2 * ox),
                    at(p, 2 * oy + 1, 2 * ox + 1),
                ];
                out.push(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            }
        }
    }
    Tensor::new(&[bn, c, ho, wo], out).unwrap()
}

pub fn global_avg_pool_sum(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (bn, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = Vec::new();
    for bi in 0..bn {
        for ci in 0..c {
            let mut acc = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    acc += x.data()[((bi * c + ci) * h + y) * w + xx];
                }
            }
            out.push(acc / (h * w) as f64);
        }
    }
    Tensor::new(&[bn, c], out).unwrap()
}

pub fn dense_dot(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (bn, n) = (x.shape()[0], x.shape()[1]);
    let m = w.shape()[1];
    let mut out = Vec::new();
    for bi in 0..bn {
        for j in 0..m {
            let dot: f64 = (0..n)
                .map(|i| x.data()[bi * n + i] * w.data()[i * m + j])
                .sum();
            out.push(dot + b.data()[j]);
        }
    }
    Tensor::new(&[bn, m], out).unwrap()
}

/// `out[b, c, r*y + dy, r*x + dx] = in[b, c*r*r + dy*r + dx, y, x]`, written
/// as a gather over output coordinates.
pub fn pixel_shuffle_index(x: &Tensor<f64>, r: usize) -> Tensor<f64> {
    let s = x.shape();
    let (bn, crr, h, w) = (s[0], s[1], s[2], s[3]);
    let c = crr / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut out = vec![0.0; bn * c * ho * wo];
    for bi in 0..bn {
        for ci in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let (y, dy, xx, dx) = (oy / r, oy % r, ox / r, ox % r);
                    let src = ((bi * crr + ci * r * r + dy * r + dx) * h + y) * w + xx;
                    out[((bi * c + ci) * ho + oy) * wo + ox] = x.data()[src];
                }
            }
        }
    }
    Tensor::new(&[bn, c, ho, wo], out).unwrap()
}
