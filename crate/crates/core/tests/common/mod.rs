//! Naive reference implementations shared by the integration suites: plain
//! nested loops with no shared code paths into the library internals.
//!
//! Each test binary compiles its own copy, so not every helper is used
//! everywhere.
#![allow(dead_code)]

use camb_core::{SplitMix64, Tensor};

pub fn rand_tensor(rng: &mut SplitMix64, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.range(lo, hi)).unwrap()
}

/// Quadruple-loop convolution over an H×W×Cin input with a kh×kw×Cin×Cout
/// kernel, zero padding, returning an OH×OW×Cout tensor.
pub fn oracle_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Tensor {
    let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw, cout) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[3]);
    assert_eq!(kernel.shape()[2], cin);
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let x = input.data();
    let k = kernel.data();
    let b = bias.data();
    let mut out = vec![0.0; oh * ow * cout];
    for orow in 0..oh {
        for ocol in 0..ow {
            for co in 0..cout {
                let mut acc = b[co];
                for kr in 0..kh {
                    for kc in 0..kw {
                        let ir = orow * stride + kr;
                        let ic = ocol * stride + kc;
                        if ir < padding || ic < padding {
                            continue;
                        }
                        let (ir, ic) = (ir - padding, ic - padding);
                        if ir >= h || ic >= w {
                            continue;
                        }
                        for ci in 0..cin {
                            acc += x[(ir * w + ic) * cin + ci]
                                * k[((kr * kw + kc) * cin + ci) * cout + co];
                        }
                    }
                }
                out[(orow * ow + ocol) * cout + co] = acc;
            }
        }
    }
    Tensor::new(vec![oh, ow, cout], out).unwrap()
}

/// Double-loop x·W + b for x of length n and W of shape n×m.
pub fn oracle_dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (n, m) = (w.shape()[0], w.shape()[1]);
    assert_eq!(x.numel(), n);
    let mut out = b.data().to_vec();
    for (j, o) in out.iter_mut().enumerate() {
        for i in 0..n {
            *o += x.data()[i] * w.data()[i * m + j];
        }
    }
    Tensor::new(vec![m], out).unwrap()
}

/// Mean of ln(|y − ŷ| + theta) over all elements.
pub fn oracle_depth_loss(y: &Tensor, yhat: &Tensor, theta: f64) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in y.data().iter().zip(yhat.data()) {
        acc += ((a - b).abs() + theta).ln();
    }
    acc / y.numel() as f64
}

/// Sliding b×b window means with stride 1 over an H×W image.
pub fn oracle_block_means(img: &Tensor, b: usize) -> Tensor {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let (oh, ow) = (h - b + 1, w - b + 1);
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for dr in 0..b {
                for dc in 0..b {
                    acc += img.data()[(r + dr) * w + c + dc];
                }
            }
            out[r * ow + c] = acc / (b * b) as f64;
        }
    }
    Tensor::new(vec![oh, ow], out).unwrap()
}

/// Differences of block means along one offset, cropped to the fixed
/// (MH−1)×(MW−1) region shared by all three directions.
pub fn oracle_offset_diff(means: &Tensor, dr: usize, dc: usize) -> Tensor {
    let (h, w) = (means.shape()[0], means.shape()[1]);
    let (oh, ow) = (h - 1, w - 1);
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = means.data()[(r + dr) * w + c + dc] - means.data()[r * w + c];
        }
    }
    Tensor::new(vec![oh, ow], out).unwrap()
}

/// The three block-gradient maps of an image.
pub fn oracle_block_gradients(img: &Tensor, b: usize) -> (Tensor, Tensor, Tensor) {
    let m = oracle_block_means(img, b);
    (
        oracle_offset_diff(&m, 0, 1),
        oracle_offset_diff(&m, 1, 0),
        oracle_offset_diff(&m, 1, 1),
    )
}

/// Mean over positions of the summed ln(|Δgradient| + theta) terms across
/// the offsets (0,1), (1,0) and, when `include_diag`, (1,1).
pub fn oracle_grad_loss(y: &Tensor, yhat: &Tensor, b: usize, theta: f64, include_diag: bool) -> f64 {
    let (gyx, gyy, gyd) = oracle_block_gradients(y, b);
    let (ghx, ghy, ghd) = oracle_block_gradients(yhat, b);
    let pairs: Vec<(&Tensor, &Tensor)> = if include_diag {
        vec![(&gyx, &ghx), (&gyy, &ghy), (&gyd, &ghd)]
    } else {
        vec![(&gyx, &ghx), (&gyy, &ghy)]
    };
    let n = gyx.numel();
    let mut acc = 0.0;
    for (g, h) in pairs {
        for (&a, &b) in g.data().iter().zip(h.data()) {
            acc += ((a - b).abs() + theta).ln();
        }
    }
    acc / n as f64
}

/// All seven metrics over the valid mask, as
/// (rmse, log_rel, abs_rel, sq_rel, delta1, delta2, delta3).
pub fn oracle_evaluate(pred: &Tensor, gt: &Tensor, min_valid: f64) -> (f64, f64, f64, f64, f64, f64, f64) {
    let mut n = 0.0;
    let (mut sq, mut lg, mut ab, mut sr) = (0.0, 0.0, 0.0, 0.0);
    let (mut d1, mut d2, mut d3) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if g < min_valid || p <= 0.0 {
            continue;
        }
        n += 1.0;
        sq += (p - g) * (p - g);
        lg += (p.log10() - g.log10()).abs();
        ab += (p - g).abs() / g;
        sr += (p - g) * (p - g) / g;
        let ratio = (p / g).max(g / p);
        if ratio < 1.25 {
            d1 += 1.0;
        }
        if ratio < 1.5625 {
            d2 += 1.0;
        }
        if ratio < 1.953125 {
            d3 += 1.0;
        }
    }
    ((sq / n).sqrt(), lg / n, ab / n, sr / n, d1 / n, d2 / n, d3 / n)
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!(
        (a - b).abs() <= tol,
        "{what}: {a} vs {b} differ by {}",
        (a - b).abs()
    );
}

pub fn assert_tensors_close(a: &Tensor, b: &Tensor, tol: f64, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        assert!(
            (x - y).abs() <= tol,
            "{what}: element {i}: {x} vs {y} differ by {}",
            (x - y).abs()
        );
    }
}
