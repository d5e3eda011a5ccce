//! Seeded synthetic RGB+depth scenes and flip augmentation.
//!
//! A scene is a far background plane plus axis-aligned rectangles at random
//! depths, drawn far-to-near so the nearest rectangle wins each pixel. Each
//! region's brightness falls off linearly with depth (plus a small seeded
//! tint), so depth is recoverable from appearance.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Fraction of brightness spanned by the depth ramp; the rest is headroom so
/// even the farthest region stays visibly shaded.
const DEPTH_SHADE_SPAN: f64 = 0.8;
/// Maximum per-channel tint attenuation of a region.
const TINT_SPAN: f64 = 0.1;
/// Nearest allowed rectangle depth, as a fraction of the background depth.
const MIN_DEPTH_FRACTION: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub n_shapes: usize,
    pub depth_max: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(16) || !self.width.is_multiple_of(16) {
            return Err(Error::Param {
                name: "size",
                msg: format!(
                    "height and width must be positive multiples of 16, got {}×{}",
                    self.height, self.width
                ),
            });
        }
        if !(self.depth_max > 0.0) {
            return Err(Error::Param {
                name: "depth_max",
                msg: format!("must be > 0, got {}", self.depth_max),
            });
        }
        Ok(())
    }
}

/// One training pair: RGB image in [0,1] and strictly positive depth.
#[derive(Debug, Clone)]
pub struct DepthSample {
    pub image: Tensor,
    pub depth: Tensor,
    pub id: String,
}

struct Region {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    depth: f64,
    tint: [f64; 3],
}

fn shade(depth: f64, depth_max: f64) -> f64 {
    1.0 - DEPTH_SHADE_SPAN * (depth / depth_max)
}

/// Deterministically renders the scene described by `spec`.
pub fn synth_scene(spec: &SceneSpec) -> Result<DepthSample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = SplitMix64::new(spec.seed);
    let bg_tint = [
        1.0 - TINT_SPAN * rng.next_f64(),
        1.0 - TINT_SPAN * rng.next_f64(),
        1.0 - TINT_SPAN * rng.next_f64(),
    ];
    let mut shapes = Vec::with_capacity(spec.n_shapes);
    for _ in 0..spec.n_shapes {
        let x0 = rng.below(w);
        let y0 = rng.below(h);
        let rw = 1 + rng.below(w - x0);
        let rh = 1 + rng.below(h - y0);
        let depth = rng.range(MIN_DEPTH_FRACTION * spec.depth_max, spec.depth_max);
        let tint = [
            1.0 - TINT_SPAN * rng.next_f64(),
            1.0 - TINT_SPAN * rng.next_f64(),
            1.0 - TINT_SPAN * rng.next_f64(),
        ];
        shapes.push(Region {
            x0,
            y0,
            x1: x0 + rw,
            y1: y0 + rh,
            depth,
            tint,
        });
    }
    // Far-to-near paint order, so the nearest shape covering a pixel wins.
    shapes.sort_by(|a, b| b.depth.partial_cmp(&a.depth).expect("depths are finite"));

    let mut depth = Tensor::filled(vec![h, w], spec.depth_max)?;
    let bg_shade = shade(spec.depth_max, spec.depth_max);
    let mut image = Tensor::from_fn(vec![h, w, 3], |i| bg_shade * bg_tint[i % 3])?;
    for s in &shapes {
        let b = shade(s.depth, spec.depth_max);
        for r in s.y0..s.y1 {
            for c in s.x0..s.x1 {
                depth.data_mut()[r * w + c] = s.depth;
                for ch in 0..3 {
                    image.data_mut()[(r * w + c) * 3 + ch] = b * s.tint[ch];
                }
            }
        }
    }
    Ok(DepthSample {
        image,
        depth,
        id: format!("scene_{:016x}", spec.seed),
    })
}

fn flip_rows(t: &Tensor) -> Tensor {
    let s = t.shape();
    let (h, row) = (s[0], t.numel() / s[0]);
    Tensor::from_fn(s.to_vec(), |i| {
        let (r, rest) = (i / row, i % row);
        t.data()[(h - 1 - r) * row + rest]
    })
    .expect("shape is preserved")
}

fn flip_cols(t: &Tensor) -> Tensor {
    let s = t.shape();
    let (w, ch) = (s[1], if s.len() == 3 { s[2] } else { 1 });
    let row = w * ch;
    Tensor::from_fn(s.to_vec(), |i| {
        let r = i / row;
        let c = (i % row) / ch;
        let k = i % ch.max(1);
        t.data()[r * row + (w - 1 - c) * ch + k]
    })
    .expect("shape is preserved")
}

/// Applies a vertical flip with probability `zeta`, then a horizontal flip
/// with probability `eta`, identically to image and depth. Consumes exactly
/// two RNG draws regardless of outcome.
pub fn augment_flip(
    sample: &DepthSample,
    zeta: f64,
    eta: f64,
    rng: &mut SplitMix64,
) -> Result<DepthSample> {
    for (name, p) in [("zeta", zeta), ("eta", eta)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Param {
                name,
                msg: format!("probability must be in [0,1], got {p}"),
            });
        }
    }
    let vertical = rng.next_f64() < zeta;
    let horizontal = rng.next_f64() < eta;
    let mut image = sample.image.clone();
    let mut depth = sample.depth.clone();
    if vertical {
        image = flip_rows(&image);
        depth = flip_rows(&depth);
    }
    if horizontal {
        image = flip_cols(&image);
        depth = flip_cols(&depth);
    }
    Ok(DepthSample {
        image,
        depth,
        id: sample.id.clone(),
    })
}
