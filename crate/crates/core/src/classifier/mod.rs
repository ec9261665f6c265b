//! Multi-branch patch embedding and a one-layer transformer encoder.
//!
//! Branch `j` cuts feature matrix `A_j` into non-overlapping
//! `h_j x w_j` patches (zero-padded at the bottom and right), embeds every
//! patch into 32 channels with a strided convolution followed by a linear
//! projection, and the tokens of all branches are concatenated in
//! ascending `j` and layer-normalized. One post-norm encoder layer
//! (multihead self-attention, then a per-token ReLU feedforward), a mean
//! over tokens and a linear softmax head follow. There is no positional
//! encoding and no class token, so the output does not depend on token
//! order.
//!
//! Vectors are rows: a linear map is `x W + b` with `W` of shape
//! `in x out`.

mod layers;
mod train;

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;

use crate::binio::{ByteReader, ByteWriter};
use crate::dictionary::levels_for;
use crate::error::{Error, Result};
use crate::signal_io::MurmurClass;

pub use layers::{
    attention, encoder_layer, forward, forward_tokens, layer_norm, loss_and_grads, multihead, patch_embed,
    predict, relu_margin, tokenize_stack, TokenMatrix,
};
pub use train::{sgdm_step, train, EpochLog, Momentum, TrainConfig, TrainOutput};

/// Channels per token.
pub const EMBED: usize = 32;
pub const N_CLASSES: usize = MurmurClass::COUNT;
pub const LN_EPS: f64 = 1e-5;

const MAGIC: &[u8; 4] = b"MRGM";
const VERSION: u16 = 1;

/// Shapes of everything: segment length, attention size and the patch
/// schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Arch {
    pub m: usize,
    pub levels: u32,
    pub heads: usize,
    pub d_head: usize,
    /// `(h_j, w_j)` for `j = 1..=J`.
    pub kernels: Vec<(usize, usize)>,
}

/// `clamp(round(2^(j/1.75)), 1, rows) x clamp(round(2^(6 - j/1.75)), 1, cols)`.
pub fn kernel_size(j: u32, rows: usize, cols: usize) -> (usize, usize) {
    let e = j as f64 / 1.75;
    let h = (2f64.powf(e).round() as usize).clamp(1, rows);
    let w = (2f64.powf(6.0 - e).round() as usize).clamp(1, cols);
    (h, w)
}

impl Arch {
    pub fn new(m: usize, heads: usize, d_head: usize) -> Result<Self> {
        let levels = levels_for(m)?;
        if heads == 0 || d_head == 0 {
            return Err(Error::Config(format!("heads={heads} and d_head={d_head} must both be >= 1")));
        }
        let kernels = (1..=levels)
            .map(|j| {
                let (rows, cols) = branch_shape(m, j);
                kernel_size(j, rows, cols)
            })
            .collect();
        Ok(Self {
            m,
            levels,
            heads,
            d_head,
            kernels,
        })
    }

    pub fn branch_shape(&self, j: u32) -> (usize, usize) {
        branch_shape(self.m, j)
    }

    /// Patch rows and columns of branch `j` after padding.
    pub fn patch_grid(&self, j: u32) -> (usize, usize) {
        let (rows, cols) = self.branch_shape(j);
        let (h, w) = self.kernels[j as usize - 1];
        (rows.div_ceil(h), cols.div_ceil(w))
    }

    pub fn tokens_per_branch(&self) -> Vec<usize> {
        (1..=self.levels)
            .map(|j| {
                let (a, b) = self.patch_grid(j);
                a * b
            })
            .collect()
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens_per_branch().iter().sum()
    }

    fn inner(&self) -> usize {
        self.heads * self.d_head
    }
}

fn branch_shape(m: usize, j: u32) -> (usize, usize) {
    let rows = 1usize << j;
    (rows, m / rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

impl LayerNormParams {
    fn identity(n: usize) -> Self {
        Self {
            gain: Array1::ones(n),
            bias: Array1::zeros(n),
        }
    }
}

/// Embedding of one branch. Filter `i` of the convolution kernel is column
/// `i` of `conv_w`, with kernel cell `(a, b)` at row `a * w_j + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    pub conv_w: Array2<f64>,
    pub conv_b: Array1<f64>,
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
}

/// Every trainable tensor. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub branches: Vec<BranchParams>,
    pub embed_norm: LayerNormParams,
    pub heads: Vec<HeadParams>,
    /// `(H * d_head) x 32`.
    pub wo: Array2<f64>,
    pub norm1: LayerNormParams,
    pub ffn_w: Array2<f64>,
    pub ffn_b: Array1<f64>,
    pub norm2: LayerNormParams,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let values = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..=limit)).collect();
    Array2::from_shape_vec((fan_in, fan_out), values).expect("shape matches")
}

impl Params {
    /// Zero weights, unit layer-norm gains.
    pub fn zeros(arch: &Arch) -> Self {
        let z2 = |a, b| Array2::zeros((a, b));
        let z1 = |a| Array1::zeros(a);
        Self {
            branches: arch
                .kernels
                .iter()
                .map(|&(h, w)| BranchParams {
                    conv_w: z2(h * w, EMBED),
                    conv_b: z1(EMBED),
                    proj_w: z2(EMBED, EMBED),
                    proj_b: z1(EMBED),
                })
                .collect(),
            embed_norm: LayerNormParams::identity(EMBED),
            heads: (0..arch.heads)
                .map(|_| HeadParams {
                    wq: z2(EMBED, arch.d_head),
                    wk: z2(EMBED, arch.d_head),
                    wv: z2(EMBED, arch.d_head),
                })
                .collect(),
            wo: z2(arch.inner(), EMBED),
            norm1: LayerNormParams::identity(EMBED),
            ffn_w: z2(EMBED, EMBED),
            ffn_b: z1(EMBED),
            norm2: LayerNormParams::identity(EMBED),
            head_w: z2(EMBED, N_CLASSES),
            head_b: z1(N_CLASSES),
        }
    }

    /// Every entry zero, gains included; the starting point for gradients.
    pub fn zeroed(arch: &Arch) -> Self {
        let mut p = Self::zeros(arch);
        p.scale(0.0);
        p
    }

    /// Glorot-uniform weights, zero biases, unit gains.
    pub fn init(arch: &Arch, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(arch);
        // conv fan-in is the patch size, fan-out the filter count
        for (b, &(h, w)) in p.branches.iter_mut().zip(&arch.kernels) {
            b.conv_w = glorot(rng, h * w, EMBED);
            b.proj_w = glorot(rng, EMBED, EMBED);
        }
        for head in &mut p.heads {
            head.wq = glorot(rng, EMBED, arch.d_head);
            head.wk = glorot(rng, EMBED, arch.d_head);
            head.wv = glorot(rng, EMBED, arch.d_head);
        }
        p.wo = glorot(rng, arch.inner(), EMBED);
        p.ffn_w = glorot(rng, EMBED, EMBED);
        p.head_w = glorot(rng, EMBED, N_CLASSES);
        p
    }

    /// All tensors with their names, in checkpoint order.
    pub fn named(&self) -> Vec<(String, &[f64])> {
        fn s2(a: &Array2<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        fn s1(a: &Array1<f64>) -> &[f64] {
            a.as_slice().expect("standard layout")
        }
        let mut out = Vec::new();
        for (i, b) in self.branches.iter().enumerate() {
            let j = i + 1;
            out.push((format!("branch{j}.conv_w"), s2(&b.conv_w)));
            out.push((format!("branch{j}.conv_b"), s1(&b.conv_b)));
            out.push((format!("branch{j}.proj_w"), s2(&b.proj_w)));
            out.push((format!("branch{j}.proj_b"), s1(&b.proj_b)));
        }
        out.push(("embed_norm.gain".into(), s1(&self.embed_norm.gain)));
        out.push(("embed_norm.bias".into(), s1(&self.embed_norm.bias)));
        for (h, head) in self.heads.iter().enumerate() {
            out.push((format!("head{h}.wq"), s2(&head.wq)));
            out.push((format!("head{h}.wk"), s2(&head.wk)));
            out.push((format!("head{h}.wv"), s2(&head.wv)));
        }
        out.push(("wo".into(), s2(&self.wo)));
        out.push(("norm1.gain".into(), s1(&self.norm1.gain)));
        out.push(("norm1.bias".into(), s1(&self.norm1.bias)));
        out.push(("ffn_w".into(), s2(&self.ffn_w)));
        out.push(("ffn_b".into(), s1(&self.ffn_b)));
        out.push(("norm2.gain".into(), s1(&self.norm2.gain)));
        out.push(("norm2.bias".into(), s1(&self.norm2.bias)));
        out.push(("head_w".into(), s2(&self.head_w)));
        out.push(("head_b".into(), s1(&self.head_b)));
        out
    }

    /// Mutable tensors in the same order as [`Params::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        fn s2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn s1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out = Vec::new();
        for b in &mut self.branches {
            out.push(s2(&mut b.conv_w));
            out.push(s1(&mut b.conv_b));
            out.push(s2(&mut b.proj_w));
            out.push(s1(&mut b.proj_b));
        }
        out.push(s1(&mut self.embed_norm.gain));
        out.push(s1(&mut self.embed_norm.bias));
        for head in &mut self.heads {
            out.push(s2(&mut head.wq));
            out.push(s2(&mut head.wk));
            out.push(s2(&mut head.wv));
        }
        out.push(s2(&mut self.wo));
        out.push(s1(&mut self.norm1.gain));
        out.push(s1(&mut self.norm1.bias));
        out.push(s2(&mut self.ffn_w));
        out.push(s1(&mut self.ffn_b));
        out.push(s1(&mut self.norm2.gain));
        out.push(s1(&mut self.norm2.bias));
        out.push(s2(&mut self.head_w));
        out.push(s1(&mut self.head_b));
        out
    }

    pub fn len(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += other`, tensor by tensor in fixed order.
    pub fn add_assign(&mut self, other: &Params) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.named()) {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.named().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    fn fill_from(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[pos..pos + t.len()]);
            pos += t.len();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Arch,
    pub params: Params,
    pub seed: u64,
}

/// Trainable scalar counts by component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCount {
    pub embedding: usize,
    pub attention: usize,
    pub norms: usize,
    pub feedforward: usize,
    pub head: usize,
    pub total: usize,
}

impl Model {
    pub fn new(arch: Arch, seed: u64, rng: &mut impl Rng) -> Self {
        let params = Params::init(&arch, rng);
        Self { arch, params, seed }
    }

    pub fn class_names(&self) -> [&'static str; N_CLASSES] {
        MurmurClass::ALL.map(|c| c.name())
    }

    pub fn count_params(&self) -> ParamCount {
        let p = &self.params;
        let embedding = p
            .branches
            .iter()
            .map(|b| b.conv_w.len() + b.conv_b.len() + b.proj_w.len() + b.proj_b.len())
            .sum::<usize>()
            + 2 * EMBED;
        let attention = p.heads.iter().map(|h| h.wq.len() + h.wk.len() + h.wv.len()).sum::<usize>() + p.wo.len();
        let norms = 4 * EMBED;
        let feedforward = p.ffn_w.len() + p.ffn_b.len();
        let head = p.head_w.len() + p.head_b.len();
        ParamCount {
            embedding,
            attention,
            norms,
            feedforward,
            head,
            total: embedding + attention + norms + feedforward + head,
        }
    }

    /// `.mrgm`: magic, version u16, M u32, J u32, H u32, d_head u32, seed
    /// u64, `J` kernel sizes `(h, w)` as u32 pairs, parameter count u32,
    /// then every parameter as f64 in [`Params::named`] order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let a = &self.arch;
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u32(a.m as u32);
        w.u32(a.levels);
        w.u32(a.heads as u32);
        w.u32(a.d_head as u32);
        w.u64(self.seed);
        for &(h, k) in &a.kernels {
            w.u32(h as u32);
            w.u32(k as u32);
        }
        let flat = self.params.to_flat();
        w.u32(flat.len() as u32);
        w.f64s(&flat);
        w.into_inner()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf, "model checkpoint");
        r.magic(MAGIC)?;
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Header(format!("model checkpoint: unsupported version {version}")));
        }
        let m = r.u32()? as usize;
        let levels = r.u32()?;
        let heads = r.u32()? as usize;
        let d_head = r.u32()? as usize;
        let seed = r.u64()?;
        let arch = Arch::new(m, heads, d_head).map_err(|e| Error::Header(format!("model checkpoint: {e}")))?;
        if arch.levels != levels {
            return Err(Error::Header(format!("model checkpoint: J={levels} but M={m} implies J={}", arch.levels)));
        }
        for j in 0..levels as usize {
            let k = (r.u32()? as usize, r.u32()? as usize);
            if k != arch.kernels[j] {
                return Err(Error::Header(format!(
                    "model checkpoint: branch {} kernel {k:?} differs from the schedule {:?}",
                    j + 1,
                    arch.kernels[j]
                )));
            }
        }
        let mut params = Params::zeros(&arch);
        let n = r.u32()? as usize;
        if n != params.len() {
            return Err(Error::Header(format!(
                "model checkpoint: {n} parameters, architecture needs {}",
                params.len()
            )));
        }
        params.fill_from(&r.f64s(n)?);
        r.finish()?;
        Ok(Self { arch, params, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
