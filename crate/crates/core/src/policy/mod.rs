//! Convolutional visuomotor policy: 5-channel hand-eye image to a bounded
//! pose delta and a grasp logit, with exact reverse-mode gradients and a
//! deterministic SGD trainer.

mod io;
pub mod kernels;
mod net;
mod train;

pub use io::{load_params, save_params, PARAMS_MAGIC, PARAMS_SCHEMA_VERSION};
pub use train::{
    batch_gradient, evaluate_samples, loss, train, DatasetMetrics, EpochStats, LossTerms, LossWeights, Sample,
    TrainConfig, TrainingLog,
};

use crate::render::Frame;
use kernels::{ConvGeom, Scalar};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

pub const INPUT_CHANNELS: usize = 5;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("dataset has no steps")]
    EmptyDataset,
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("architecture mismatch: file has {found}, expected {expected}")]
    ArchitectureMismatch { expected: String, found: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: byte {position}: {msg}")]
    Corrupt { path: PathBuf, position: u64, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Three stride-2 convolutions, pooled, one hidden layer, three heads.
/// Translation and rotation heads are squashed radially so their norms stay
/// below `t_max` and `r_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub height: usize,
    pub width: usize,
    pub conv_channels: [usize; 3],
    pub conv_kernels: [usize; 3],
    pub stride: usize,
    /// pooled regions per side; 1 is global average pooling
    pub pool_grid: usize,
    pub hidden: usize,
    /// meters
    pub t_max: f64,
    /// radians
    pub r_max: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            height: 128,
            width: 128,
            conv_channels: [16, 32, 64],
            conv_kernels: [5, 3, 3],
            stride: 2,
            pool_grid: 1,
            hidden: 128,
            t_max: 0.05,
            r_max: 0.30,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| Err(PolicyError::InvalidConfig(format!("architecture: {m}")));
        if self.height < 8 || self.width < 8 {
            return bad("input must be at least 8×8");
        }
        if self.conv_channels.contains(&0) || self.conv_kernels.iter().any(|&k| k == 0 || k % 2 == 0) {
            return bad("channels must be positive and kernels odd");
        }
        if self.stride == 0 || self.hidden == 0 {
            return bad("stride and hidden width must be positive");
        }
        if !(self.t_max > 0.0 && self.r_max > 0.0) {
            return bad("output bounds must be positive");
        }
        let last = self.layout().convs[2].geom;
        if self.pool_grid == 0 || self.pool_grid > last.h_out.min(last.w_out) {
            return bad("pool_grid must be between 1 and the final feature map size");
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn describe(&self) -> String {
        format!(
            "{}x{}x{} conv{:?}/k{:?}/s{} pool{} fc{} t{} r{}",
            self.height,
            self.width,
            INPUT_CHANNELS,
            self.conv_channels,
            self.conv_kernels,
            self.stride,
            self.pool_grid,
            self.hidden,
            self.t_max,
            self.r_max
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSlot {
    pub geom: ConvGeom,
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenseSlot {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
}

/// Offsets of every tensor inside the flat parameter vector, in
/// declaration order. Weights are `(fan_in × fan_out)` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub convs: Vec<ConvSlot>,
    pub features: usize,
    pub pool_grid: usize,
    pub fc: DenseSlot,
    /// translation, rotation, grasp
    pub heads: [DenseSlot; 3],
    pub total: usize,
}

impl Layout {
    fn new(a: &Architecture) -> Self {
        let mut off = 0;
        let mut convs = Vec::new();
        let (mut h, mut w, mut cin) = (a.height, a.width, INPUT_CHANNELS);
        for i in 0..3 {
            let geom = ConvGeom::new(cin, a.conv_channels[i], a.conv_kernels[i], a.stride, h, w);
            let wo = off;
            off += geom.patch() * geom.cout;
            let bo = off;
            off += geom.cout;
            convs.push(ConvSlot { geom, w: wo, b: bo });
            (h, w, cin) = (geom.h_out, geom.w_out, geom.cout);
        }
        let mut dense = |n_in: usize, n_out: usize| {
            let s = DenseSlot {
                n_in,
                n_out,
                w: off,
                b: off + n_in * n_out,
            };
            off += n_in * n_out + n_out;
            s
        };
        let features = cin * a.pool_grid * a.pool_grid;
        let fc = dense(features, a.hidden);
        let heads = [dense(a.hidden, 3), dense(a.hidden, 3), dense(a.hidden, 1)];
        Layout {
            convs,
            features,
            pool_grid: a.pool_grid,
            fc,
            heads,
            total: off,
        }
    }

    /// `(weight offset, weight len, fan_in)` per layer in declaration order.
    fn weight_blocks(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut v: Vec<(usize, usize, usize, usize)> = self
            .convs
            .iter()
            .map(|c| (c.w, c.geom.patch() * c.geom.cout, c.geom.patch(), c.geom.cout))
            .collect();
        v.push((self.fc.w, self.fc.n_in * self.fc.n_out, self.fc.n_in, self.fc.n_out));
        for h in &self.heads {
            v.push((h.w, h.n_in * h.n_out, h.n_in, h.n_out));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: Architecture,
    pub values: Vec<f32>,
}

impl PolicyParams {
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.layout().total;
        PolicyParams {
            arch,
            values: vec![0.0; n],
        }
    }

    /// He-uniform trunk weights, smaller uniform head weights, zero biases.
    pub fn init<R: Rng>(arch: Architecture, rng: &mut R) -> Self {
        let layout = arch.layout();
        let mut p = Self::zeros(arch);
        let blocks = layout.weight_blocks();
        let n_trunk = blocks.len() - 3;
        for (i, (off, len, fan_in, _)) in blocks.into_iter().enumerate() {
            let bound = if i < n_trunk {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (1.0 / fan_in as f64).sqrt()
            };
            for v in &mut p.values[off..off + len] {
                *v = rng.gen_range(-bound..bound) as f32;
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Zeroes the three output heads (weights and biases).
    pub fn zero_heads(&mut self) {
        let layout = self.arch.layout();
        for h in &layout.heads {
            self.values[h.w..h.b + h.n_out].fill(0.0);
        }
    }
}

/// Channels-last `H×W×5` tensor: RGB, object mask, hand mask, all in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

pub(crate) fn frame_bytes(frame: &Frame) -> Vec<u8> {
    let n = frame.width * frame.height;
    let mut out = Vec::with_capacity(n * INPUT_CHANNELS);
    for i in 0..n {
        out.extend_from_slice(&frame.rgb[3 * i..3 * i + 3]);
        out.push(frame.object_mask[i]);
        out.push(frame.hand_mask[i]);
    }
    out
}

pub(crate) fn bytes_to<T: Scalar>(bytes: &[u8]) -> Vec<T> {
    let inv = T::one() / T::of(255.0);
    bytes.iter().map(|&b| T::of(b as f64) * inv).collect()
}

impl PolicyInput {
    pub fn from_frame(frame: &Frame) -> Self {
        PolicyInput {
            height: frame.height,
            width: frame.width,
            data: bytes_to(&frame_bytes(frame)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    /// meters
    pub delta_t: [f64; 3],
    /// axis-angle, radians
    pub delta_r: [f64; 3],
    pub grasp_logit: f64,
    pub grasp_prob: f64,
}

impl PolicyOutput {
    pub fn action(&self) -> crate::geometry::DeltaAction {
        crate::geometry::DeltaAction {
            translation: self.delta_t.into(),
            rotation: self.delta_r.into(),
        }
    }
}

fn check_shape(arch: &Architecture, h: usize, w: usize, len: usize) -> Result<(), PolicyError> {
    if h != arch.height || w != arch.width || len != h * w * INPUT_CHANNELS {
        return Err(PolicyError::ShapeMismatch(format!(
            "input {h}x{w} ({len} values), network expects {}x{}x{INPUT_CHANNELS}",
            arch.height, arch.width
        )));
    }
    Ok(())
}

/// Single-sample inference.
pub fn forward(params: &PolicyParams, input: &PolicyInput) -> Result<PolicyOutput, PolicyError> {
    check_shape(&params.arch, input.height, input.width, input.data.len())?;
    let layout = params.arch.layout();
    if params.values.len() != layout.total {
        return Err(PolicyError::ShapeMismatch(format!(
            "{} parameters, layout needs {}",
            params.values.len(),
            layout.total
        )));
    }
    let tr = net::forward(&layout, &params.values, &input.data);
    // squash in f64 so the norm bounds hold exactly, not to f32 rounding
    let raw = tr.raw.map(|v| v as f64);
    let (delta_t, delta_r, logit) = net::squash(&raw, params.arch.t_max, params.arch.r_max);
    Ok(PolicyOutput {
        delta_t,
        delta_r,
        grasp_logit: logit,
        grasp_prob: net::prob(logit),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> Architecture {
        Architecture {
            height: 24,
            width: 20,
            conv_channels: [4, 6, 8],
            hidden: 10,
            ..Default::default()
        }
    }

    fn random_input(arch: &Architecture, seed: u64) -> PolicyInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PolicyInput {
            height: arch.height,
            width: arch.width,
            data: (0..arch.height * arch.width * INPUT_CHANNELS).map(|_| rng.gen()).collect(),
        }
    }

    #[test]
    fn default_parameter_count() {
        let l = Architecture::default().layout();
        let want = (125 * 16 + 16) + (144 * 32 + 32) + (288 * 64 + 64) + (64 * 128 + 128) + (128 * 3 + 3) * 2 + 129;
        assert_eq!(l.total, want);
        assert_eq!(l.convs[2].geom.h_out, 16);
    }

    #[test]
    fn zero_heads_give_neutral_output() {
        let arch = Architecture::default();
        let mut p = PolicyParams::init(arch, &mut ChaCha8Rng::seed_from_u64(1));
        p.zero_heads();
        let input = PolicyInput {
            height: 128,
            width: 128,
            data: vec![0.0; 128 * 128 * 5],
        };
        let out = forward(&p, &input).unwrap();
        assert_eq!(out.delta_t, [0.0; 3]);
        assert_eq!(out.delta_r, [0.0; 3]);
        assert_eq!(out.grasp_prob, 0.5);
    }

    #[test]
    fn shape_mismatch() {
        let arch = small_arch();
        let p = PolicyParams::zeros(arch);
        let mut input = random_input(&arch, 0);
        input.width += 1;
        assert!(matches!(forward(&p, &input), Err(PolicyError::ShapeMismatch(_))));
    }

    #[test]
    fn outputs_bounded_and_deterministic() {
        let arch = small_arch();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = PolicyParams::init(arch, &mut rng);
            // exaggerate weights so the squashing saturates
            p.values.iter_mut().for_each(|v| *v *= 8.0);
            let input = random_input(&arch, seed + 100);
            let a = forward(&p, &input).unwrap();
            let b = forward(&p, &input).unwrap();
            assert_eq!(a, b);
            let norm = |v: [f64; 3]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm(a.delta_t) <= 0.05 * (1.0 + 1e-6));
            assert!(norm(a.delta_r) <= 0.30 * (1.0 + 1e-6));
            assert!((0.0..=1.0).contains(&a.grasp_prob));
        }
    }

    #[test]
    fn pooling_grid_covers_every_pixel_once() {
        let (h, w, c, g) = (7, 5, 2, 3);
        let a: Vec<f64> = vec![1.0; h * w * c];
        let mut out = vec![0.0; g * g * c];
        net::pool(&a, h, w, c, g, &mut out);
        assert!(out.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }
}
