//! Reverse-mode automatic differentiation on an explicit tape.
//!
//! Each operation appends a node holding its forward value; nodes reference
//! their inputs by index, so the tape is topologically ordered by
//! construction. `backward` sweeps the tape once in reverse. A node consumed
//! by several later nodes accumulates the sum of their contributions.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    BroadcastMul(Var, Var),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    LnOffset(Var, f64),
    AddScalar(Var),
    MulScalar(Var, f64),
    SumAll(Var),
    MeanAll(Var),
    ClampUnit(Var),
    Reshape(Var),
    ConcatChannels(Var, Var),
    Upsample2(Var),
    AvgPool2(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    },
    Dense {
        input: Var,
        weights: Var,
        bias: Var,
    },
    PapGlobal(Var, f64),
    PapChannel(Var, f64),
    BlockMeans(Var, usize),
    OffsetDiff {
        input: Var,
        dr: usize,
        dc: usize,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the backward output with respect to `v`, if any flowed.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Numerically stable sigmoid, clamped so outputs stay strictly inside (0,1)
/// even where exp saturates.
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Row-major strides with 0 on extent-1 axes, for broadcast index mapping.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] == out_shape[i] && shape[i] > 1 {
            strides[i] = acc;
        } else {
            strides[i] = if shape[i] == 1 { 0 } else { acc };
        }
        acc *= shape[i];
    }
    strides
}

/// Maps a flat index in `out_shape` to a flat index under `strides`.
fn broadcast_index(flat: usize, out_shape: &[usize], strides: &[usize]) -> usize {
    let mut rem = flat;
    let mut idx = 0;
    for i in (0..out_shape.len()).rev() {
        let coord = rem % out_shape[i];
        rem /= out_shape[i];
        idx += coord * strides[i];
    }
    idx
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input tensor. Its `requires_grad` flag decides whether
    /// `backward` reports a gradient for it.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs = t.requires_grad();
        self.push(Op::Leaf, t, needs)
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                op,
                format!(
                    "operand shapes differ: {:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("add", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), t, self.needs(a) || self.needs(b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("sub", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Sub(a, b), t, self.needs(a) || self.needs(b)))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("mul", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), t, self.needs(a) || self.needs(b)))
    }

    /// Elementwise quotient of equal-shape tensors.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape("div", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x / y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Div(a, b), t, self.needs(a) || self.needs(b)))
    }

    /// Elementwise product with broadcasting: equal ranks, each axis extent
    /// matching or 1. Covers 1×1×C × H×W×C and H×W×1 × H×W×C.
    pub fn broadcast_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != sb.len() {
            return Err(Error::shape(
                "broadcast_mul",
                format!("rank mismatch: {:?} vs {:?}", sa, sb),
            ));
        }
        let mut out_shape = Vec::with_capacity(sa.len());
        for (&ea, &eb) in sa.iter().zip(sb) {
            if ea == eb || ea == 1 || eb == 1 {
                out_shape.push(ea.max(eb));
            } else {
                return Err(Error::shape(
                    "broadcast_mul",
                    format!("incompatible shapes: {:?} vs {:?}", sa, sb),
                ));
            }
        }
        let stra = broadcast_strides(sa, &out_shape);
        let strb = broadcast_strides(sb, &out_shape);
        let numel: usize = out_shape.iter().product();
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(numel);
        for o in 0..numel {
            let ia = broadcast_index(o, &out_shape, &stra);
            let ib = broadcast_index(o, &out_shape, &strb);
            data.push(da[ia] * db[ib]);
        }
        let t = Tensor::new(out_shape, data)?;
        Ok(self.push(Op::BroadcastMul(a, b), t, self.needs(a) || self.needs(b)))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.abs()).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Abs(a), t, self.needs(a)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Relu(a), t, self.needs(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| sigmoid_scalar(x))
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::Sigmoid(a), t, self.needs(a)))
    }

    /// Elementwise ln(x + theta). Inputs must be nonnegative; theta > 0 keeps
    /// the logarithm defined at zero.
    pub fn ln_offset(&mut self, a: Var, theta: f64) -> Result<Var> {
        if !(theta > 0.0) {
            return Err(Error::Param {
                name: "theta",
                msg: format!("must be > 0, got {theta}"),
            });
        }
        if let Some((i, &x)) = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .find(|(_, &x)| x < 0.0)
        {
            return Err(Error::Domain {
                op: "ln_offset",
                index: i,
                value: x,
                msg: "negative input".into(),
            });
        }
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|x| (x + theta).ln())
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::LnOffset(a, theta), t, self.needs(a)))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x + s).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::AddScalar(a), t, self.needs(a)))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * s).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::MulScalar(a, s), t, self.needs(a)))
    }

    /// Sum of all elements, as a shape-[1] scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().sum();
        Ok(self.push(Op::SumAll(a), Tensor::scalar(s), self.needs(a)))
    }

    /// Mean of all elements, as a shape-[1] scalar.
    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s: f64 = self.value(a).data().iter().sum();
        Ok(self.push(Op::MeanAll(a), Tensor::scalar(s / n), self.needs(a)))
    }

    /// Clamps elementwise to [0, 1]; gradient passes only inside the interval
    /// (boundary included).
    pub fn clamp_unit(&mut self, a: Var) -> Result<Var> {
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|x| x.clamp(0.0, 1.0))
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(Op::ClampUnit(a), t, self.needs(a)))
    }

    pub fn reshape(&mut self, a: Var, new_shape: Vec<usize>) -> Result<Var> {
        let t = Tensor::new(new_shape, self.value(a).data().to_vec())?;
        Ok(self.push(Op::Reshape(a), t, self.needs(a)))
    }

    /// Concatenates two H×W×C feature maps along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[1] != sb[1] {
            return Err(Error::shape(
                "concat_channels",
                format!("expected H×W×C maps with equal H, W: {:?} vs {:?}", sa, sb),
            ));
        }
        let (h, w, ca, cb) = (sa[0], sa[1], sa[2], sb[2]);
        let mut data = Vec::with_capacity(h * w * (ca + cb));
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for pix in 0..h * w {
            data.extend_from_slice(&da[pix * ca..(pix + 1) * ca]);
            data.extend_from_slice(&db[pix * cb..(pix + 1) * cb]);
        }
        let t = Tensor::new(vec![h, w, ca + cb], data)?;
        Ok(self.push(
            Op::ConcatChannels(a, b),
            t,
            self.needs(a) || self.needs(b),
        ))
    }

    /// Nearest-neighbor upsampling by a factor of 2 in H and W.
    pub fn upsample_nearest2(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).shape();
        if s.len() != 3 {
            return Err(Error::shape("upsample_nearest2", "expected H×W×C input"));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        let din = self.value(a).data();
        let mut data = vec![0.0; 4 * h * w * c];
        for r in 0..2 * h {
            for col in 0..2 * w {
                let src = ((r / 2) * w + col / 2) * c;
                let dst = (r * 2 * w + col) * c;
                data[dst..dst + c].copy_from_slice(&din[src..src + c]);
            }
        }
        let t = Tensor::new(vec![2 * h, 2 * w, c], data)?;
        Ok(self.push(Op::Upsample2(a), t, self.needs(a)))
    }

    /// 2×2 average pooling with stride 2. H and W must be even.
    pub fn avgpool2(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).shape();
        if s.len() != 3 {
            return Err(Error::shape("avgpool2", "expected H×W×C input"));
        }
        let (h, w, c) = (s[0], s[1], s[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "avgpool2",
                format!("H and W must be even, got {h}×{w}"),
            ));
        }
        let din = self.value(a).data();
        let mut data = vec![0.0; (h / 2) * (w / 2) * c];
        for r in 0..h / 2 {
            for col in 0..w / 2 {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for i in 0..2 {
                        for j in 0..2 {
                            acc += din[((2 * r + i) * w + 2 * col + j) * c + ch];
                        }
                    }
                    data[(r * (w / 2) + col) * c + ch] = acc / 4.0;
                }
            }
        }
        let t = Tensor::new(vec![h / 2, w / 2, c], data)?;
        Ok(self.push(Op::AvgPool2(a), t, self.needs(a)))
    }

    /// 2D convolution of an H×W×Cin map with a k×k×Cin×Cout kernel under zero
    /// padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let si = self.value(input).shape().to_vec();
        let sk = self.value(kernel).shape().to_vec();
        let sb = self.value(bias).shape().to_vec();
        if si.len() != 3 {
            return Err(Error::shape("conv2d", "expected H×W×Cin input"));
        }
        if sk.len() != 4 || sk[0] != sk[1] {
            return Err(Error::shape(
                "conv2d",
                format!("expected square k×k×Cin×Cout kernel, got {:?}", sk),
            ));
        }
        if sk[2] != si[2] {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {} input channels, input has {}", sk[2], si[2]),
            ));
        }
        if sb.len() != 1 || sb[0] != sk[3] {
            return Err(Error::shape(
                "conv2d",
                format!("bias shape {:?} does not match {} output channels", sb, sk[3]),
            ));
        }
        if stride == 0 {
            return Err(Error::Param {
                name: "stride",
                msg: "must be positive".into(),
            });
        }
        let (h, w, cin) = (si[0], si[1], si[2]);
        let (k, cout) = (sk[0], sk[3]);
        if k > h + 2 * padding || k > w + 2 * padding {
            return Err(Error::shape(
                "conv2d",
                format!("kernel size {k} exceeds padded input {h}×{w} (padding {padding})"),
            ));
        }
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        let din = self.value(input).data();
        let dk = self.value(kernel).data();
        let db = self.value(bias).data();
        let mut out = vec![0.0; oh * ow * cout];
        for r in 0..oh {
            for col in 0..ow {
                let obase = (r * ow + col) * cout;
                out[obase..obase + cout].copy_from_slice(db);
                for kh in 0..k {
                    let ih = (r * stride + kh) as isize - padding as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for kw in 0..k {
                        let iw = (col * stride + kw) as isize - padding as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let ibase = (ih as usize * w + iw as usize) * cin;
                        for ic in 0..cin {
                            let x = din[ibase + ic];
                            let kbase = ((kh * k + kw) * cin + ic) * cout;
                            for oc in 0..cout {
                                out[obase + oc] += x * dk[kbase + oc];
                            }
                        }
                    }
                }
            }
        }
        let t = Tensor::new(vec![oh, ow, cout], out)?;
        let needs = self.needs(input) || self.needs(kernel) || self.needs(bias);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            t,
            needs,
        ))
    }

    /// Fully connected layer: out[j] = Σ_i input[i]·weights[i][j] + bias[j].
    pub fn dense(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var> {
        let si = self.value(input).shape().to_vec();
        let sw = self.value(weights).shape().to_vec();
        let sb = self.value(bias).shape().to_vec();
        if si.len() != 1 || sw.len() != 2 || sb.len() != 1 {
            return Err(Error::shape(
                "dense",
                format!("expected [n] × [n×m] + [m], got {:?}, {:?}, {:?}", si, sw, sb),
            ));
        }
        if sw[0] != si[0] || sw[1] != sb[0] {
            return Err(Error::shape(
                "dense",
                format!("dimension mismatch: input {:?}, weights {:?}, bias {:?}", si, sw, sb),
            ));
        }
        let (n, m) = (sw[0], sw[1]);
        let din = self.value(input).data();
        let dw = self.value(weights).data();
        let db = self.value(bias).data();
        let mut out = db.to_vec();
        for i in 0..n {
            let x = din[i];
            for j in 0..m {
                out[j] += x * dw[i * m + j];
            }
        }
        let t = Tensor::new(vec![m], out)?;
        let needs = self.needs(input) || self.needs(weights) || self.needs(bias);
        Ok(self.push(
            Op::Dense {
                input,
                weights,
                bias,
            },
            t,
            needs,
        ))
    }

    fn check_pap(&self, op: &'static str, a: Var, p: f64) -> Result<()> {
        if !(p >= 1.0) {
            return Err(Error::Param {
                name: "p",
                msg: format!("power-average exponent must be ≥ 1, got {p}"),
            });
        }
        if self.value(a).rank() != 3 {
            return Err(Error::shape(op, "expected H×W×C input"));
        }
        if let Some((i, &x)) = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .find(|(_, &x)| x < 0.0)
        {
            return Err(Error::Domain {
                op,
                index: i,
                value: x,
                msg: "power-average pooling requires nonnegative inputs".into(),
            });
        }
        Ok(())
    }

    /// Global power-average pooling: per channel, (Σ x^p)^(1/p) over all
    /// spatial positions. p=1 reduces to an exact sum.
    pub fn pap_global(&mut self, a: Var, p: f64) -> Result<Var> {
        self.check_pap("pap_global", a, p)?;
        let s = self.value(a).shape();
        let (h, w, c) = (s[0], s[1], s[2]);
        let din = self.value(a).data();
        let mut out = vec![0.0; c];
        for ch in 0..c {
            let mut acc = 0.0;
            for pix in 0..h * w {
                let x = din[pix * c + ch];
                acc += if p == 1.0 { x } else { x.powf(p) };
            }
            out[ch] = if p == 1.0 { acc } else { acc.powf(1.0 / p) };
        }
        let t = Tensor::new(vec![1, 1, c], out)?;
        Ok(self.push(Op::PapGlobal(a, p), t, self.needs(a)))
    }

    /// Channel power-average pooling: per spatial position, (Σ x^p)^(1/p)
    /// over channels.
    pub fn pap_channel(&mut self, a: Var, p: f64) -> Result<Var> {
        self.check_pap("pap_channel", a, p)?;
        let s = self.value(a).shape();
        let (h, w, c) = (s[0], s[1], s[2]);
        let din = self.value(a).data();
        let mut out = vec![0.0; h * w];
        for pix in 0..h * w {
            let mut acc = 0.0;
            for ch in 0..c {
                let x = din[pix * c + ch];
                acc += if p == 1.0 { x } else { x.powf(p) };
            }
            out[pix] = if p == 1.0 { acc } else { acc.powf(1.0 / p) };
        }
        let t = Tensor::new(vec![h, w, 1], out)?;
        Ok(self.push(Op::PapChannel(a, p), t, self.needs(a)))
    }

    /// Sliding b×b window means with stride 1 over an H×W map.
    pub fn block_means(&mut self, a: Var, b: usize) -> Result<Var> {
        let s = self.value(a).shape();
        if s.len() != 2 {
            return Err(Error::shape("block_means", "expected H×W input"));
        }
        let (h, w) = (s[0], s[1]);
        if b == 0 || b > h.min(w) {
            return Err(Error::shape(
                "block_means",
                format!("block size {b} invalid for {h}×{w} input"),
            ));
        }
        let (oh, ow) = (h - b + 1, w - b + 1);
        let din = self.value(a).data();
        let inv = 1.0 / (b * b) as f64;
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for col in 0..ow {
                let mut acc = 0.0;
                for i in 0..b {
                    for j in 0..b {
                        acc += din[(r + i) * w + col + j];
                    }
                }
                out[r * ow + col] = acc * inv;
            }
        }
        let t = Tensor::new(vec![oh, ow], out)?;
        Ok(self.push(Op::BlockMeans(a, b), t, self.needs(a)))
    }

    /// Differences at a fixed (dr, dc) offset over an H×W map, cropped to the
    /// (H−1)×(W−1) region where all of (0,1), (1,0), (1,1) offsets exist:
    /// out(r,c) = in(r+dr, c+dc) − in(r,c).
    pub fn offset_diff(&mut self, a: Var, dr: usize, dc: usize) -> Result<Var> {
        if dr > 1 || dc > 1 || dr + dc == 0 {
            return Err(Error::Param {
                name: "offset",
                msg: format!("expected (0,1), (1,0) or (1,1), got ({dr},{dc})"),
            });
        }
        let s = self.value(a).shape();
        if s.len() != 2 {
            return Err(Error::shape("offset_diff", "expected H×W input"));
        }
        let (h, w) = (s[0], s[1]);
        if h < 2 || w < 2 {
            return Err(Error::shape(
                "offset_diff",
                format!("degenerate valid region for {h}×{w} input"),
            ));
        }
        let din = self.value(a).data();
        let (oh, ow) = (h - 1, w - 1);
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for col in 0..ow {
                out[r * ow + col] = din[(r + dr) * w + col + dc] - din[r * w + col];
            }
        }
        let t = Tensor::new(vec![oh, ow], out)?;
        Ok(self.push(Op::OffsetDiff { input: a, dr, dc }, t, self.needs(a)))
    }

    /// Reverse sweep from a scalar output. Returns a gradient per node that
    /// gradient flowed to; leaves with `requires_grad` that the output does
    /// not depend on get explicit zeros.
    pub fn backward(&self, out: Var) -> Result<Grads> {
        if self.value(out).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar output, got shape {:?}",
                self.value(out).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(1.0));
        for i in (0..self.nodes.len()).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let (lo, hi) = grads.split_at_mut(i);
            let g = hi[0].as_ref().unwrap().clone();
            self.backprop_node(i, g.data(), lo);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.value.requires_grad() && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape().to_vec())?);
            }
        }
        Ok(Grads { grads })
    }

    /// Adds node `i`'s contribution, with upstream gradient `g`, into the
    /// gradient slots of its inputs (all of which precede `i`).
    fn backprop_node(&self, i: usize, g: &[f64], lo: &mut [Option<Tensor>]) {
        let slot = |lo: &mut [Option<Tensor>], v: Var, shape: &[usize]| {
            if lo[v.0].is_none() {
                lo[v.0] = Some(Tensor::zeros(shape.to_vec()).unwrap());
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        slot(lo, v, self.value(v).shape());
                        let ga = lo[v.0].as_mut().unwrap().data_mut();
                        for (gi, &go) in ga.iter_mut().zip(g) {
                            *gi += go;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for (gi, &go) in ga.iter_mut().zip(g) {
                        *gi += go;
                    }
                }
                if self.needs(*b) {
                    slot(lo, *b, self.value(*b).shape());
                    let gb = lo[b.0].as_mut().unwrap().data_mut();
                    for (gi, &go) in gb.iter_mut().zip(g) {
                        *gi -= go;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let db = self.value(*b).data();
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for k in 0..g.len() {
                        ga[k] += g[k] * db[k];
                    }
                }
                if self.needs(*b) {
                    slot(lo, *b, self.value(*b).shape());
                    let da = self.value(*a).data();
                    let gb = lo[b.0].as_mut().unwrap().data_mut();
                    for k in 0..g.len() {
                        gb[k] += g[k] * da[k];
                    }
                }
            }
            Op::Div(a, b) => {
                let db = self.value(*b).data();
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for k in 0..g.len() {
                        ga[k] += g[k] / db[k];
                    }
                }
                if self.needs(*b) {
                    slot(lo, *b, self.value(*b).shape());
                    let out = self.value(Var(i)).data();
                    let gb = lo[b.0].as_mut().unwrap().data_mut();
                    for k in 0..g.len() {
                        gb[k] -= g[k] * out[k] / db[k];
                    }
                }
            }
            Op::BroadcastMul(a, b) => {
                let out_shape = self.value(Var(i)).shape().to_vec();
                let (sa, sb) = (
                    self.value(*a).shape().to_vec(),
                    self.value(*b).shape().to_vec(),
                );
                let stra = broadcast_strides(&sa, &out_shape);
                let strb = broadcast_strides(&sb, &out_shape);
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let (na, nb) = (self.needs(*a), self.needs(*b));
                if na {
                    slot(lo, *a, &sa);
                }
                if nb {
                    slot(lo, *b, &sb);
                }
                for (o, &go) in g.iter().enumerate() {
                    let ia = broadcast_index(o, &out_shape, &stra);
                    let ib = broadcast_index(o, &out_shape, &strb);
                    if na {
                        lo[a.0].as_mut().unwrap().data_mut()[ia] += go * db[ib];
                    }
                    if nb {
                        lo[b.0].as_mut().unwrap().data_mut()[ib] += go * da[ia];
                    }
                }
            }
            Op::Abs(a) => {
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let da = self.value(*a).data();
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for k in 0..g.len() {
                        ga[k] += g[k] * if da[k] > 0.0 {
                            1.0
                        } else if da[k] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    }
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let da = self.value(*a).data();
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for k in 0..g.len() {
                        if da[k] > 0.0 {
                            ga[k] += g[k];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let y = self.value(Var(i)).data();
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for k in 0..g.len() {
                        ga[k] += g[k] * y[k] * (1.0 - y[k]);
                    }
                }
            }
            Op::LnOffset(a, theta) => {
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let da = self.value(*a).data();
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for k in 0..g.len() {
                        ga[k] += g[k] / (da[k] + theta);
                    }
                }
            }
            Op::AddScalar(a) => {
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for k in 0..g.len() {
                        ga[k] += g[k];
                    }
                }
            }
            Op::MulScalar(a, s) => {
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for k in 0..g.len() {
                        ga[k] += g[k] * s;
                    }
                }
            }
            Op::SumAll(a) => {
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for gi in ga.iter_mut() {
                        *gi += g[0];
                    }
                }
            }
            Op::MeanAll(a) => {
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let n = self.value(*a).numel() as f64;
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for gi in ga.iter_mut() {
                        *gi += g[0] / n;
                    }
                }
            }
            Op::ClampUnit(a) => {
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let da = self.value(*a).data();
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for k in 0..g.len() {
                        if (0.0..=1.0).contains(&da[k]) {
                            ga[k] += g[k];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if self.needs(*a) {
                    slot(lo, *a, self.value(*a).shape());
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for k in 0..g.len() {
                        ga[k] += g[k];
                    }
                }
            }
            Op::ConcatChannels(a, b) => {
                let sa = self.value(*a).shape().to_vec();
                let sb = self.value(*b).shape().to_vec();
                let (ca, cb) = (sa[2], sb[2]);
                let pixels = sa[0] * sa[1];
                if self.needs(*a) {
                    slot(lo, *a, &sa);
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for pix in 0..pixels {
                        for ch in 0..ca {
                            ga[pix * ca + ch] += g[pix * (ca + cb) + ch];
                        }
                    }
                }
                if self.needs(*b) {
                    slot(lo, *b, &sb);
                    let gb = lo[b.0].as_mut().unwrap().data_mut();
                    for pix in 0..pixels {
                        for ch in 0..cb {
                            gb[pix * cb + ch] += g[pix * (ca + cb) + ca + ch];
                        }
                    }
                }
            }
            Op::Upsample2(a) => {
                if self.needs(*a) {
                    let s = self.value(*a).shape().to_vec();
                    let (h, w, c) = (s[0], s[1], s[2]);
                    slot(lo, *a, &s);
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for r in 0..2 * h {
                        for col in 0..2 * w {
                            let src = ((r / 2) * w + col / 2) * c;
                            let dst = (r * 2 * w + col) * c;
                            for ch in 0..c {
                                ga[src + ch] += g[dst + ch];
                            }
                        }
                    }
                }
            }
            Op::AvgPool2(a) => {
                if self.needs(*a) {
                    let s = self.value(*a).shape().to_vec();
                    let (h, w, c) = (s[0], s[1], s[2]);
                    slot(lo, *a, &s);
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for r in 0..h / 2 {
                        for col in 0..w / 2 {
                            for ch in 0..c {
                                let go = g[(r * (w / 2) + col) * c + ch] / 4.0;
                                for ii in 0..2 {
                                    for jj in 0..2 {
                                        ga[((2 * r + ii) * w + 2 * col + jj) * c + ch] += go;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let si = self.value(*input).shape().to_vec();
                let sk = self.value(*kernel).shape().to_vec();
                let (h, w, cin) = (si[0], si[1], si[2]);
                let (k, cout) = (sk[0], sk[3]);
                let so = self.value(Var(i)).shape().to_vec();
                let (oh, ow) = (so[0], so[1]);
                let (need_in, need_k, need_b) =
                    (self.needs(*input), self.needs(*kernel), self.needs(*bias));
                if need_b {
                    slot(lo, *bias, &[cout]);
                    let gb = lo[bias.0].as_mut().unwrap().data_mut();
                    for pix in 0..oh * ow {
                        for oc in 0..cout {
                            gb[oc] += g[pix * cout + oc];
                        }
                    }
                }
                if need_in {
                    slot(lo, *input, &si);
                }
                if need_k {
                    slot(lo, *kernel, &sk);
                }
                if !(need_in || need_k) {
                    return;
                }
                let din = self.value(*input).data();
                let dk = self.value(*kernel).data();
                // dIn and dKer live in disjoint slots; take them one at a
                // time to satisfy the borrow checker without cloning.
                for r in 0..oh {
                    for col in 0..ow {
                        let obase = (r * ow + col) * cout;
                        for kh in 0..k {
                            let ih = (r * stride + kh) as isize - *padding as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for kw in 0..k {
                                let iw = (col * stride + kw) as isize - *padding as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let ibase = (ih as usize * w + iw as usize) * cin;
                                for ic in 0..cin {
                                    let kbase = ((kh * k + kw) * cin + ic) * cout;
                                    if need_in {
                                        let mut acc = 0.0;
                                        for oc in 0..cout {
                                            acc += g[obase + oc] * dk[kbase + oc];
                                        }
                                        lo[input.0].as_mut().unwrap().data_mut()[ibase + ic] +=
                                            acc;
                                    }
                                    if need_k {
                                        let x = din[ibase + ic];
                                        let gk = lo[kernel.0].as_mut().unwrap().data_mut();
                                        for oc in 0..cout {
                                            gk[kbase + oc] += x * g[obase + oc];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Dense {
                input,
                weights,
                bias,
            } => {
                let n = self.value(*input).numel();
                let m = self.value(*bias).numel();
                let din = self.value(*input).data();
                let dw = self.value(*weights).data();
                if self.needs(*bias) {
                    slot(lo, *bias, &[m]);
                    let gb = lo[bias.0].as_mut().unwrap().data_mut();
                    for j in 0..m {
                        gb[j] += g[j];
                    }
                }
                if self.needs(*input) {
                    slot(lo, *input, &[n]);
                    let gi = lo[input.0].as_mut().unwrap().data_mut();
                    for ii in 0..n {
                        let mut acc = 0.0;
                        for j in 0..m {
                            acc += g[j] * dw[ii * m + j];
                        }
                        gi[ii] += acc;
                    }
                }
                if self.needs(*weights) {
                    slot(lo, *weights, &[n, m]);
                    let gw = lo[weights.0].as_mut().unwrap().data_mut();
                    for ii in 0..n {
                        for j in 0..m {
                            gw[ii * m + j] += din[ii] * g[j];
                        }
                    }
                }
            }
            Op::PapGlobal(a, p) => {
                if self.needs(*a) {
                    let s = self.value(*a).shape().to_vec();
                    let (h, w, c) = (s[0], s[1], s[2]);
                    slot(lo, *a, &s);
                    let din = self.value(*a).data();
                    let out = self.value(Var(i)).data();
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for ch in 0..c {
                        if out[ch] <= 0.0 {
                            continue;
                        }
                        for pix in 0..h * w {
                            let idx = pix * c + ch;
                            ga[idx] += g[ch] * (din[idx] / out[ch]).powf(p - 1.0);
                        }
                    }
                }
            }
            Op::PapChannel(a, p) => {
                if self.needs(*a) {
                    let s = self.value(*a).shape().to_vec();
                    let (h, w, c) = (s[0], s[1], s[2]);
                    slot(lo, *a, &s);
                    let din = self.value(*a).data();
                    let out = self.value(Var(i)).data();
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for pix in 0..h * w {
                        if out[pix] <= 0.0 {
                            continue;
                        }
                        for ch in 0..c {
                            let idx = pix * c + ch;
                            ga[idx] += g[pix] * (din[idx] / out[pix]).powf(p - 1.0);
                        }
                    }
                }
            }
            Op::BlockMeans(a, b) => {
                if self.needs(*a) {
                    let s = self.value(*a).shape().to_vec();
                    let (h, w) = (s[0], s[1]);
                    let (oh, ow) = (h - b + 1, w - b + 1);
                    let inv = 1.0 / (b * b) as f64;
                    slot(lo, *a, &s);
                    let ga = lo[a.0].as_mut().unwrap().data_mut();
                    for r in 0..oh {
                        for col in 0..ow {
                            let go = g[r * ow + col] * inv;
                            for ii in 0..*b {
                                for jj in 0..*b {
                                    ga[(r + ii) * w + col + jj] += go;
                                }
                            }
                        }
                    }
                }
            }
            Op::OffsetDiff { input, dr, dc } => {
                if self.needs(*input) {
                    let s = self.value(*input).shape().to_vec();
                    let w = s[1];
                    let (oh, ow) = (s[0] - 1, s[1] - 1);
                    slot(lo, *input, &s);
                    let ga = lo[input.0].as_mut().unwrap().data_mut();
                    for r in 0..oh {
                        for col in 0..ow {
                            let go = g[r * ow + col];
                            ga[(r + dr) * w + col + dc] += go;
                            ga[r * w + col] -= go;
                        }
                    }
                }
            }
        }
    }
}
