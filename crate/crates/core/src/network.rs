//! Toy encoder-decoder with attention-gated skip connections.
//!
//! The encoder halves resolution per stage with conv+relu+avgpool; each
//! pre-pool activation feeds a skip connection. The decoder walks the stages
//! deepest-first, upsampling, concatenating the (attention-filtered) skip,
//! and convolving back down to the stage width. A 1×1 head produces a single
//! nonnegative depth channel.

use crate::camb::{camb_forward, CambParams, CambVars, CAMB_FIELD_NAMES};
use crate::error::{Error, Result};
use crate::init::{filled_param, glorot_uniform, zeros_param};
use crate::rng::SplitMix64;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub stage_channels: Vec<usize>,
    pub input_channels: usize,
    pub reduction: usize,
    pub p: f64,
    pub use_camb: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stage_channels: vec![16, 32, 64, 128],
            input_channels: 3,
            reduction: 4,
            p: 3.0,
            use_camb: true,
        }
    }
}

impl ModelConfig {
    pub fn num_stages(&self) -> usize {
        self.stage_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() < 2 {
            return Err(Error::Param {
                name: "stage_channels",
                msg: format!("need at least 2 stages, got {}", self.stage_channels.len()),
            });
        }
        if self.input_channels == 0 {
            return Err(Error::Param {
                name: "input_channels",
                msg: "must be positive".into(),
            });
        }
        if !(self.p >= 1.0) {
            return Err(Error::Param {
                name: "p",
                msg: format!("power-average exponent must be ≥ 1, got {}", self.p),
            });
        }
        if self.use_camb {
            for &c in &self.stage_channels {
                if self.reduction == 0 || c % self.reduction != 0 || c / self.reduction == 0 {
                    return Err(Error::Param {
                        name: "reduction",
                        msg: format!("{} does not divide stage width {c}", self.reduction),
                    });
                }
            }
        }
        Ok(())
    }

    /// Input channel count of the decoder conv at stage `s`: the skip width
    /// plus the upsampled width arriving from the next-deeper stage (or the
    /// bottleneck, at the deepest stage).
    fn decoder_in_channels(&self, s: usize) -> usize {
        let n = self.num_stages();
        let from_below = if s == n - 1 {
            self.stage_channels[n - 1]
        } else {
            self.stage_channels[s + 1]
        };
        self.stage_channels[s] + from_below
    }
}

#[derive(Debug, Clone)]
pub struct ConvParams {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    fn init(k: usize, cin: usize, cout: usize, rng: &mut SplitMix64) -> Result<Self> {
        Ok(ConvParams {
            kernel: glorot_uniform(vec![k, k, cin, cout], k * k * cin, k * k * cout, rng)?,
            bias: zeros_param(vec![cout])?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvVars {
    pub kernel: Var,
    pub bias: Var,
}

/// Initial value of the head bias: unit depth, so untrained predictions
/// start at a plausible depth scale.
const HEAD_BIAS_INIT: f64 = 1.0;

/// All learnable tensors of the model, with a deterministic flat registry.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: Vec<ConvParams>,
    pub cambs: Vec<CambParams>,
    pub decoder: Vec<ConvParams>,
    pub head: ConvParams,
}

/// Tape handles for one registered [`ModelParams`] instance.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub encoder: Vec<ConvVars>,
    pub cambs: Vec<CambVars>,
    pub decoder: Vec<ConvVars>,
    pub head: ConvVars,
}

impl ModelParams {
    /// Seeded initialization. Draw order follows the registry order, so the
    /// whole parameter set is a pure function of (config, seed).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SplitMix64::new(seed);
        let n = config.num_stages();
        let mut encoder = Vec::with_capacity(n);
        let mut cin = config.input_channels;
        for &c in &config.stage_channels {
            encoder.push(ConvParams::init(3, cin, c, &mut rng)?);
            cin = c;
        }
        let mut cambs = Vec::new();
        if config.use_camb {
            for &c in &config.stage_channels {
                cambs.push(CambParams::init(c, config.reduction, config.p, &mut rng)?);
            }
        }
        let mut decoder = Vec::with_capacity(n);
        for s in 0..n {
            decoder.push(ConvParams::init(
                3,
                config.decoder_in_channels(s),
                config.stage_channels[s],
                &mut rng,
            )?);
        }
        let mut head = ConvParams::init(1, config.stage_channels[0], 1, &mut rng)?;
        // A positive start keeps the output relu open, so initial
        // predictions sit at a plausible depth instead of zero and the first
        // training step already reaches every parameter.
        head.bias = filled_param(vec![1], HEAD_BIAS_INIT)?;
        Ok(ModelParams {
            config,
            encoder,
            cambs,
            decoder,
            head,
        })
    }

    /// Named parameters in registry order. Every parameter appears exactly
    /// once; the order is the contract for gradients, optimizer state, and
    /// checkpoints.
    pub fn registry(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (s, conv) in self.encoder.iter().enumerate() {
            out.push((format!("enc{s}.kernel"), &conv.kernel));
            out.push((format!("enc{s}.bias"), &conv.bias));
        }
        for (s, camb) in self.cambs.iter().enumerate() {
            for (name, t) in CAMB_FIELD_NAMES.iter().zip(camb.fields()) {
                out.push((format!("camb{s}.{name}"), t));
            }
        }
        for (s, conv) in self.decoder.iter().enumerate() {
            out.push((format!("dec{s}.kernel"), &conv.kernel));
            out.push((format!("dec{s}.bias"), &conv.bias));
        }
        out.push(("head.kernel".into(), &self.head.kernel));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    /// Mutable registry view, same order as [`ModelParams::registry`].
    pub fn registry_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (s, conv) in self.encoder.iter_mut().enumerate() {
            out.push((format!("enc{s}.kernel"), &mut conv.kernel));
            out.push((format!("enc{s}.bias"), &mut conv.bias));
        }
        for (s, camb) in self.cambs.iter_mut().enumerate() {
            for (name, t) in CAMB_FIELD_NAMES.iter().zip(camb.fields_mut()) {
                out.push((format!("camb{s}.{name}"), t));
            }
        }
        for (s, conv) in self.decoder.iter_mut().enumerate() {
            out.push((format!("dec{s}.kernel"), &mut conv.kernel));
            out.push((format!("dec{s}.bias"), &mut conv.bias));
        }
        out.push(("head.kernel".into(), &mut self.head.kernel));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    pub fn num_tensors(&self) -> usize {
        let camb = if self.config.use_camb {
            self.cambs.len() * 8
        } else {
            0
        };
        self.encoder.len() * 2 + camb + self.decoder.len() * 2 + 2
    }

    /// Puts every parameter on the tape in registry order.
    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        let vars: Vec<Var> = self
            .registry()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        self.vars_from_slice(&vars)
            .expect("registry and assembly orders agree")
    }

    /// Rebuilds structured handles from a flat var list in registry order.
    pub fn vars_from_slice(&self, vars: &[Var]) -> Result<ModelVars> {
        if vars.len() != self.num_tensors() {
            return Err(Error::Contract(format!(
                "expected {} parameter vars, got {}",
                self.num_tensors(),
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked above");
        let encoder: Vec<ConvVars> = (0..self.encoder.len())
            .map(|_| ConvVars {
                kernel: next(),
                bias: next(),
            })
            .collect();
        let mut cambs = Vec::with_capacity(self.cambs.len());
        for camb in &self.cambs {
            let eight: Vec<Var> = (0..8).map(|_| next()).collect();
            cambs.push(camb.vars_from_slice(&eight)?);
        }
        let decoder: Vec<ConvVars> = (0..self.decoder.len())
            .map(|_| ConvVars {
                kernel: next(),
                bias: next(),
            })
            .collect();
        let head = ConvVars {
            kernel: next(),
            bias: next(),
        };
        Ok(ModelVars {
            encoder,
            cambs,
            decoder,
            head,
        })
    }
}

/// Runs the downsampling path. Returns the bottleneck and one pre-pool skip
/// activation per stage, shallowest first.
pub fn encoder_forward(
    tape: &mut Tape,
    image: Var,
    vars: &ModelVars,
) -> Result<(Var, Vec<Var>)> {
    let shape = tape.value(image).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::shape("encoder_forward", "expected H×W×C image"));
    }
    let n = vars.encoder.len();
    let div = 1usize << n;
    if !shape[0].is_multiple_of(div) || !shape[1].is_multiple_of(div) {
        return Err(Error::shape(
            "encoder_forward",
            format!(
                "input {}×{} not divisible by 2^{n} stages",
                shape[0], shape[1]
            ),
        ));
    }
    let mut x = image;
    let mut skips = Vec::with_capacity(n);
    for conv in &vars.encoder {
        let c = tape.conv2d(x, conv.kernel, conv.bias, 1, 1)?;
        let pre = tape.relu(c)?;
        skips.push(pre);
        x = tape.avgpool2(pre)?;
    }
    Ok((x, skips))
}

/// Runs the upsampling path deepest-first and the 1×1 head. Output is a
/// nonnegative H×W×1 depth map.
pub fn decoder_forward(
    tape: &mut Tape,
    bottleneck: Var,
    skips: &[Var],
    vars: &ModelVars,
) -> Result<Var> {
    if skips.len() != vars.decoder.len() {
        return Err(Error::shape(
            "decoder_forward",
            format!(
                "got {} skips for {} decoder stages",
                skips.len(),
                vars.decoder.len()
            ),
        ));
    }
    let mut x = bottleneck;
    for s in (0..vars.decoder.len()).rev() {
        let up = tape.upsample_nearest2(x)?;
        let skip = if vars.cambs.is_empty() {
            skips[s]
        } else {
            camb_forward(tape, skips[s], &vars.cambs[s])?
        };
        let cat = tape.concat_channels(up, skip)?;
        let conv = tape.conv2d(cat, vars.decoder[s].kernel, vars.decoder[s].bias, 1, 1)?;
        x = tape.relu(conv)?;
    }
    let head = tape.conv2d(x, vars.head.kernel, vars.head.bias, 1, 0)?;
    tape.relu(head)
}

/// Full image-to-depth forward pass.
pub fn model_forward(tape: &mut Tape, image: Var, vars: &ModelVars) -> Result<Var> {
    let (bottleneck, skips) = encoder_forward(tape, image, vars)?;
    decoder_forward(tape, bottleneck, &skips, vars)
}

/// Forward-only convenience: predicted H×W×1 depth for one image.
pub fn predict(params: &ModelParams, image: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.leaf(image.clone());
    let vars = params.register(&mut tape);
    let out = model_forward(&mut tape, v, &vars)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            stage_channels: vec![4, 8],
            input_channels: 3,
            reduction: 2,
            p: 3.0,
            use_camb: true,
        }
    }

    fn random_image(seed: u64, h: usize, w: usize, c: usize) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        Tensor::from_fn(vec![h, w, c], |_| rng.next_f64()).unwrap()
    }

    #[test]
    fn encoder_shapes_halve_per_stage() {
        let params = ModelParams::init(ModelConfig::default(), 1).unwrap();
        let mut tape = Tape::new();
        let img = tape.leaf(random_image(2, 32, 32, 3));
        let vars = params.register(&mut tape);
        let (bottleneck, skips) = encoder_forward(&mut tape, img, &vars).unwrap();
        assert_eq!(tape.value(bottleneck).shape(), &[2, 2, 128]);
        let expected = [[32, 32, 16], [16, 16, 32], [8, 8, 64], [4, 4, 128]];
        for (skip, want) in skips.iter().zip(expected) {
            assert_eq!(tape.value(*skip).shape(), &want);
        }
    }

    #[test]
    fn encoder_rejects_indivisible_input() {
        let params = ModelParams::init(ModelConfig::default(), 1).unwrap();
        let mut tape = Tape::new();
        let img = tape.leaf(random_image(3, 20, 32, 3));
        let vars = params.register(&mut tape);
        assert!(matches!(
            encoder_forward(&mut tape, img, &vars),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn zero_image_zero_params_stay_zero() {
        let mut params = ModelParams::init(tiny_config(), 4).unwrap();
        for (_, t) in params.registry_mut() {
            for x in t.data_mut() {
                *x = 0.0;
            }
        }
        let mut tape = Tape::new();
        let img = tape.leaf(Tensor::zeros(vec![8, 8, 3]).unwrap());
        let vars = params.register(&mut tape);
        let (bottleneck, skips) = encoder_forward(&mut tape, img, &vars).unwrap();
        assert!(tape.value(bottleneck).data().iter().all(|&v| v == 0.0));
        for s in skips {
            assert!(tape.value(s).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn skips_are_nonnegative() {
        let params = ModelParams::init(tiny_config(), 5).unwrap();
        let mut tape = Tape::new();
        let img = tape.leaf(random_image(6, 8, 8, 3));
        let vars = params.register(&mut tape);
        let (_, skips) = encoder_forward(&mut tape, img, &vars).unwrap();
        for s in skips {
            assert!(tape.value(s).data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn model_inverts_to_single_channel_map() {
        let params = ModelParams::init(ModelConfig::default(), 7).unwrap();
        let pred = predict(&params, &random_image(8, 32, 32, 3)).unwrap();
        assert_eq!(pred.shape(), &[32, 32, 1]);
        assert!(pred.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn no_camb_preserves_shape_and_shrinks_registry() {
        let mut cfg = tiny_config();
        let with = ModelParams::init(cfg.clone(), 9).unwrap();
        cfg.use_camb = false;
        let without = ModelParams::init(cfg, 9).unwrap();
        assert!(without.num_tensors() < with.num_tensors());
        assert_eq!(without.registry().len(), without.num_tensors());
        let pred = predict(&without, &random_image(10, 16, 16, 3)).unwrap();
        assert_eq!(pred.shape(), &[16, 16, 1]);
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::init(tiny_config(), 11).unwrap();
        let b = ModelParams::init(tiny_config(), 11).unwrap();
        for ((na, ta), (nb, tb)) in a.registry().iter().zip(b.registry().iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
        let img = random_image(12, 8, 8, 3);
        assert_eq!(
            predict(&a, &img).unwrap().data(),
            predict(&b, &img).unwrap().data()
        );
    }

    #[test]
    fn registry_names_are_unique_and_ordered() {
        let params = ModelParams::init(tiny_config(), 13).unwrap();
        let names: Vec<String> = params.registry().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names[0], "enc0.kernel");
        assert_eq!(names.last().unwrap(), "head.bias");
    }

    #[test]
    fn vars_from_slice_round_trips_register() {
        let params = ModelParams::init(tiny_config(), 14).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<Var> = params
            .registry()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.clone()))
            .collect();
        let mv = params.vars_from_slice(&vars).unwrap();
        let img = tape.leaf(random_image(15, 8, 8, 3));
        let out = model_forward(&mut tape, img, &mv).unwrap();
        assert_eq!(tape.value(out).shape(), &[8, 8, 1]);
    }
}
