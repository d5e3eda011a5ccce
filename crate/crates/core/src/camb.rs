//! Convolutional attention block for skip connections: channel attention
//! from globally pooled features, then spatial attention from channel-pooled
//! features, residually added to the input.

use crate::error::{Error, Result};
use crate::init::{glorot_uniform, zeros_param};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Learnable state of one attention block: a three-layer bottleneck MLP for
/// channel attention and a single 7×7 convolution for spatial attention.
#[derive(Debug, Clone)]
pub struct CambParams {
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
    pub mlp_w3: Tensor,
    pub mlp_b3: Tensor,
    pub spatial_kernel: Tensor,
    pub spatial_bias: Tensor,
    pub p: f64,
    pub reduction: usize,
}

/// Tape handles for one registered [`CambParams`] instance.
#[derive(Debug, Clone, Copy)]
pub struct CambVars {
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
    pub mlp_w3: Var,
    pub mlp_b3: Var,
    pub spatial_kernel: Var,
    pub spatial_bias: Var,
    pub p: f64,
}

pub const CAMB_FIELD_NAMES: [&str; 8] = [
    "mlp_w1",
    "mlp_b1",
    "mlp_w2",
    "mlp_b2",
    "mlp_w3",
    "mlp_b3",
    "spatial_kernel",
    "spatial_bias",
];

impl CambParams {
    /// Seeded initialization for a block over `channels`-wide features.
    /// `reduction` must divide `channels`; the MLP bottleneck width is
    /// channels/reduction.
    pub fn init(
        channels: usize,
        reduction: usize,
        p: f64,
        rng: &mut SplitMix64,
    ) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) || channels / reduction == 0 {
            return Err(Error::Param {
                name: "reduction",
                msg: format!("must divide channel count {channels}, got {reduction}"),
            });
        }
        if !(p >= 1.0) {
            return Err(Error::Param {
                name: "p",
                msg: format!("power-average exponent must be ≥ 1, got {p}"),
            });
        }
        let hidden = channels / reduction;
        Ok(CambParams {
            mlp_w1: glorot_uniform(vec![channels, hidden], channels, hidden, rng)?,
            mlp_b1: zeros_param(vec![hidden])?,
            mlp_w2: glorot_uniform(vec![hidden, hidden], hidden, hidden, rng)?,
            mlp_b2: zeros_param(vec![hidden])?,
            mlp_w3: glorot_uniform(vec![hidden, channels], hidden, channels, rng)?,
            mlp_b3: zeros_param(vec![channels])?,
            spatial_kernel: glorot_uniform(vec![7, 7, 1, 1], 49, 49, rng)?,
            spatial_bias: zeros_param(vec![1])?,
            p,
            reduction,
        })
    }

    pub fn channels(&self) -> usize {
        self.mlp_w1.shape()[0]
    }

    /// Tensors in registry order, paired with [`CAMB_FIELD_NAMES`].
    pub fn fields(&self) -> [&Tensor; 8] {
        [
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
            &self.mlp_w3,
            &self.mlp_b3,
            &self.spatial_kernel,
            &self.spatial_bias,
        ]
    }

    pub fn fields_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
            &mut self.mlp_w3,
            &mut self.mlp_b3,
            &mut self.spatial_kernel,
            &mut self.spatial_bias,
        ]
    }

    /// Puts every parameter on the tape, in registry order.
    pub fn register(&self, tape: &mut Tape) -> CambVars {
        CambVars {
            mlp_w1: tape.leaf(self.mlp_w1.clone()),
            mlp_b1: tape.leaf(self.mlp_b1.clone()),
            mlp_w2: tape.leaf(self.mlp_w2.clone()),
            mlp_b2: tape.leaf(self.mlp_b2.clone()),
            mlp_w3: tape.leaf(self.mlp_w3.clone()),
            mlp_b3: tape.leaf(self.mlp_b3.clone()),
            spatial_kernel: tape.leaf(self.spatial_kernel.clone()),
            spatial_bias: tape.leaf(self.spatial_bias.clone()),
            p: self.p,
        }
    }

    /// Rebuilds the handle struct from vars laid out in registry order.
    pub fn vars_from_slice(&self, vars: &[Var]) -> Result<CambVars> {
        if vars.len() != 8 {
            return Err(Error::Contract(format!(
                "attention block expects 8 parameter vars, got {}",
                vars.len()
            )));
        }
        Ok(CambVars {
            mlp_w1: vars[0],
            mlp_b1: vars[1],
            mlp_w2: vars[2],
            mlp_b2: vars[3],
            mlp_w3: vars[4],
            mlp_b3: vars[5],
            spatial_kernel: vars[6],
            spatial_bias: vars[7],
            p: self.p,
        })
    }
}

/// Channel attention: sigmoid(MLP(global power-average pool)) ∈ R^{1×1×C}.
pub fn channel_attention(tape: &mut Tape, f: Var, params: &CambVars) -> Result<Var> {
    let shape = tape.value(f).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("channel_attention", "expected H×W×C input"));
    }
    let c = shape[2];
    let pooled = tape.pap_global(f, params.p)?;
    let flat = tape.reshape(pooled, vec![c])?;
    let h1 = tape.dense(flat, params.mlp_w1, params.mlp_b1)?;
    let h1 = tape.relu(h1)?;
    let h2 = tape.dense(h1, params.mlp_w2, params.mlp_b2)?;
    let h2 = tape.relu(h2)?;
    let h3 = tape.dense(h2, params.mlp_w3, params.mlp_b3)?;
    let s = tape.sigmoid(h3)?;
    tape.reshape(s, vec![1, 1, c])
}

/// Spatial attention: sigmoid(conv7×7(channel power-average pool)) ∈
/// R^{H×W×1}. Padding 3 preserves H×W.
pub fn spatial_attention(tape: &mut Tape, f_sa_in: Var, params: &CambVars) -> Result<Var> {
    let pooled = tape.pap_channel(f_sa_in, params.p)?;
    let conv = tape.conv2d(pooled, params.spatial_kernel, params.spatial_bias, 1, 3)?;
    tape.sigmoid(conv)
}

/// Full block: channel-scale the input, spatially scale the result, add the
/// original input back.
pub fn camb_forward(tape: &mut Tape, f: Var, params: &CambVars) -> Result<Var> {
    let ca = channel_attention(tape, f, params)?;
    let f_sa_in = tape.broadcast_mul(ca, f)?;
    let sa = spatial_attention(tape, f_sa_in, params)?;
    let f_am = tape.broadcast_mul(sa, f_sa_in)?;
    tape.add(f_am, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::sigmoid_scalar;

    fn forward(f: Tensor, params: &CambParams) -> Tensor {
        let mut tape = Tape::new();
        let v = tape.leaf(f);
        let vars = params.register(&mut tape);
        let out = camb_forward(&mut tape, v, &vars).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn channel_attention_is_half_for_zero_input_and_zero_biases() {
        let mut rng = SplitMix64::new(3);
        let params = CambParams::init(8, 4, 3.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        let f = tape.leaf(Tensor::zeros(vec![4, 4, 8]).unwrap());
        let vars = params.register(&mut tape);
        let ca = channel_attention(&mut tape, f, &vars).unwrap();
        assert_eq!(tape.value(ca).shape(), &[1, 1, 8]);
        for &v in tape.value(ca).data() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn channel_attention_shape_contract() {
        let mut rng = SplitMix64::new(4);
        let params = CambParams::init(16, 4, 3.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        let f = tape.leaf(Tensor::filled(vec![8, 8, 16], 0.25).unwrap());
        let vars = params.register(&mut tape);
        let ca = channel_attention(&mut tape, f, &vars).unwrap();
        assert_eq!(tape.value(ca).shape(), &[1, 1, 16]);
    }

    #[test]
    fn channel_attention_single_path_closed_form() {
        let one = |shape: Vec<usize>| Tensor::filled(shape, 1.0).unwrap();
        let zero = |shape: Vec<usize>| Tensor::zeros(shape).unwrap();
        let params = CambParams {
            mlp_w1: one(vec![1, 1]),
            mlp_b1: zero(vec![1]),
            mlp_w2: one(vec![1, 1]),
            mlp_b2: zero(vec![1]),
            mlp_w3: one(vec![1, 1]),
            mlp_b3: zero(vec![1]),
            spatial_kernel: zero(vec![7, 7, 1, 1]),
            spatial_bias: zero(vec![1]),
            p: 1.0,
            reduction: 1,
        };
        let mut tape = Tape::new();
        let f = tape.leaf(one(vec![4, 4, 1]));
        let vars = params.register(&mut tape);
        let ca = channel_attention(&mut tape, f, &vars).unwrap();
        let expected = sigmoid_scalar(16.0);
        assert!((tape.value(ca).data()[0] - expected).abs() < 1e-15);
        assert!(tape.value(ca).data()[0] > 0.999999);
    }

    #[test]
    fn spatial_attention_zero_params_gives_uniform_half() {
        let mut rng = SplitMix64::new(5);
        let mut params = CambParams::init(4, 2, 3.0, &mut rng).unwrap();
        params.spatial_kernel = Tensor::zeros(vec![7, 7, 1, 1]).unwrap();
        let mut tape = Tape::new();
        let f = tape.leaf(Tensor::filled(vec![5, 6, 4], 0.7).unwrap());
        let vars = params.register(&mut tape);
        let sa = spatial_attention(&mut tape, f, &vars).unwrap();
        assert_eq!(tape.value(sa).shape(), &[5, 6, 1]);
        for &v in tape.value(sa).data() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn spatial_attention_shape_contract() {
        let mut rng = SplitMix64::new(6);
        let params = CambParams::init(16, 4, 3.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        let f = tape.leaf(Tensor::filled(vec![8, 8, 16], 0.3).unwrap());
        let vars = params.register(&mut tape);
        let sa = spatial_attention(&mut tape, f, &vars).unwrap();
        assert_eq!(tape.value(sa).shape(), &[8, 8, 1]);
    }

    #[test]
    fn spatial_attention_single_tap_is_sigmoid_of_value() {
        let mut kernel = Tensor::zeros(vec![7, 7, 1, 1]).unwrap();
        kernel.data_mut()[3 * 7 + 3] = 1.0;
        let params = CambParams {
            mlp_w1: Tensor::zeros(vec![1, 1]).unwrap(),
            mlp_b1: Tensor::zeros(vec![1]).unwrap(),
            mlp_w2: Tensor::zeros(vec![1, 1]).unwrap(),
            mlp_b2: Tensor::zeros(vec![1]).unwrap(),
            mlp_w3: Tensor::zeros(vec![1, 1]).unwrap(),
            mlp_b3: Tensor::zeros(vec![1]).unwrap(),
            spatial_kernel: kernel,
            spatial_bias: Tensor::zeros(vec![1]).unwrap(),
            p: 3.0,
            reduction: 1,
        };
        let v = 0.8;
        let mut tape = Tape::new();
        let f = tape.leaf(Tensor::filled(vec![1, 1, 1], v).unwrap());
        let vars = params.register(&mut tape);
        let sa = spatial_attention(&mut tape, f, &vars).unwrap();
        assert!((tape.value(sa).data()[0] - sigmoid_scalar(v)).abs() < 1e-15);
    }

    #[test]
    fn camb_forward_zero_is_fixed_point() {
        let mut rng = SplitMix64::new(7);
        let params = CambParams::init(8, 4, 3.0, &mut rng).unwrap();
        let out = forward(Tensor::zeros(vec![4, 4, 8]).unwrap(), &params);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn camb_forward_preserves_shape() {
        let mut rng = SplitMix64::new(8);
        let params = CambParams::init(8, 4, 3.0, &mut rng).unwrap();
        let out = forward(Tensor::filled(vec![16, 16, 8], 0.4).unwrap(), &params);
        assert_eq!(out.shape(), &[16, 16, 8]);
    }

    #[test]
    fn camb_forward_bounded_by_residual_interval() {
        let mut rng = SplitMix64::new(9);
        let params = CambParams::init(4, 2, 3.0, &mut rng).unwrap();
        let mut data_rng = SplitMix64::new(10);
        let f = Tensor::from_fn(vec![6, 5, 4], |_| data_rng.range(0.05, 2.0)).unwrap();
        let out = forward(f.clone(), &params);
        for (x, y) in f.data().iter().zip(out.data()) {
            assert!(y >= x, "residual lower bound violated: {y} < {x}");
            assert!(*y < 2.0 * x, "attention upper bound violated: {y} >= {}", 2.0 * x);
        }
    }

    #[test]
    fn camb_forward_deterministic() {
        let mut rng = SplitMix64::new(11);
        let params = CambParams::init(4, 2, 3.0, &mut rng).unwrap();
        let mut data_rng = SplitMix64::new(12);
        let f = Tensor::from_fn(vec![4, 4, 4], |_| data_rng.next_f64()).unwrap();
        let a = forward(f.clone(), &params);
        let b = forward(f, &params);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn init_rejects_nondividing_reduction() {
        let mut rng = SplitMix64::new(13);
        assert!(matches!(
            CambParams::init(6, 4, 3.0, &mut rng),
            Err(Error::Param { .. })
        ));
    }
}
