//! Block-structured embedding network and the trainable/frozen split.
//!
//! Block `i` (1-based) is a 3x3 convolution followed by a rectifier; odd
//! blocks additionally halve the spatial resolution with a 2x2 average pool.
//! Block 1 doubles as the stem (3 input channels to `channels_per_block[0]`).
//! The head is a global average pool followed by an affine map to the
//! embedding dimension. Outputs are raw, unnormalized embeddings.

mod checkpoint;
pub(crate) mod layers;

use std::collections::BTreeSet;
use std::ops::Range;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DiuError, Result};
use crate::image::Image;
use crate::seed::{derive_seed, CounterRng};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ManifestEntry, CHECKPOINT_FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    pub num_blocks: usize,
    pub channels_per_block: Vec<usize>,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_height: 32,
            input_width: 32,
            input_channels: 3,
            num_blocks: 8,
            channels_per_block: vec![8, 8, 16, 16, 16, 16, 32, 32],
            embedding_dim: 64,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 {
            return Err(DiuError::config("num_blocks", "must be at least 1"));
        }
        if self.embedding_dim == 0 {
            return Err(DiuError::config("embedding_dim", "must be at least 1"));
        }
        if self.input_channels != 3 {
            return Err(DiuError::config(
                "input_channels",
                format!("network input is always 3 channels, got {}", self.input_channels),
            ));
        }
        if self.channels_per_block.len() != self.num_blocks {
            return Err(DiuError::config(
                "channels_per_block",
                format!(
                    "has {} entries but num_blocks is {}",
                    self.channels_per_block.len(),
                    self.num_blocks
                ),
            ));
        }
        if self.channels_per_block.contains(&0) {
            return Err(DiuError::config("channels_per_block", "every block needs at least one channel"));
        }
        let (mut h, mut w) = (self.input_height, self.input_width);
        if h == 0 || w == 0 {
            return Err(DiuError::config("input_height", "input must be at least 1x1"));
        }
        for block in 0..self.num_blocks {
            if pools_after(block) {
                if h < 2 || w < 2 {
                    return Err(DiuError::config(
                        "input_height",
                        format!("{}x{} input is too small for {} blocks", self.input_height, self.input_width, self.num_blocks),
                    ));
                }
                h /= 2;
                w /= 2;
            }
        }
        Ok(())
    }

    /// Spatial size at the input of every block, plus the final map size.
    fn spatial_plan(&self) -> Vec<(usize, usize)> {
        let mut plan = Vec::with_capacity(self.num_blocks + 1);
        let (mut h, mut w) = (self.input_height, self.input_width);
        for block in 0..self.num_blocks {
            plan.push((h, w));
            if pools_after(block) {
                h /= 2;
                w /= 2;
            }
        }
        plan.push((h, w));
        plan
    }
}

const INPUT_CENTER: f32 = 0.5;

/// Zero-based block index `b` downsamples when it is an odd-numbered block.
#[inline]
fn pools_after(block: usize) -> bool {
    block.is_multiple_of(2)
}

/// Which part of the network a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    /// 1-based block number.
    Block(usize),
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub data: Vec<f32>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Per-tensor gradients aligned with [`EmbeddingNetwork::params`]. Tensors
/// outside the trainable set are never materialized.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub tensors: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn zeros_for(net: &EmbeddingNetwork, trainable: &[bool]) -> Self {
        Self {
            tensors: net
                .params
                .iter()
                .zip(trainable)
                .map(|(p, &t)| t.then(|| vec![0.0; p.len()]))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if let (Some(a), Some(b)) = (a.as_mut(), b.as_ref()) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f32) {
        for t in self.tensors.iter_mut().flatten() {
            for x in t.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Intermediate activations of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct Trace {
    block_inputs: Vec<Vec<f32>>,
    block_activations: Vec<Vec<f32>>,
    pooled: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNetwork {
    config: NetworkConfig,
    params: Vec<Param>,
}

pub fn build_network(config: NetworkConfig) -> Result<EmbeddingNetwork> {
    EmbeddingNetwork::new(config)
}

impl EmbeddingNetwork {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::with_capacity(2 * config.num_blocks + 2);
        let mut c_in = config.input_channels;
        for (b, &c_out) in config.channels_per_block.iter().enumerate() {
            let fan_in = c_in * 9;
            let bound = (6.0 / fan_in as f64).sqrt();
            params.push(init_param(
                format!("block{}.conv.weight", b + 1),
                vec![c_out, c_in, 3, 3],
                ParamGroup::Block(b + 1),
                bound,
                config.seed,
            ));
            params.push(init_param(
                format!("block{}.conv.bias", b + 1),
                vec![c_out],
                ParamGroup::Block(b + 1),
                0.0,
                config.seed,
            ));
            c_in = c_out;
        }
        let bound = (3.0 / c_in as f64).sqrt();
        params.push(init_param(
            "head.weight".into(),
            vec![config.embedding_dim, c_in],
            ParamGroup::Head,
            bound,
            config.seed,
        ));
        params.push(init_param(
            "head.bias".into(),
            vec![config.embedding_dim],
            ParamGroup::Head,
            0.0,
            config.seed,
        ));
        Ok(Self { config, params })
    }

    pub(crate) fn from_parts(config: NetworkConfig, params: Vec<Param>) -> Self {
        Self { config, params }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn num_blocks(&self) -> usize {
        self.config.num_blocks
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    /// Tensor indices belonging to 1-based `block`.
    pub fn block_param_range(&self, block: usize) -> Range<usize> {
        assert!((1..=self.config.num_blocks).contains(&block), "block {block} out of range");
        2 * (block - 1)..2 * block
    }

    pub fn head_param_range(&self) -> Range<usize> {
        2 * self.config.num_blocks..2 * self.config.num_blocks + 2
    }

    /// SHA-256 over the little-endian bytes of the selected tensors.
    pub fn checksum_of(&self, mut include: impl FnMut(&Param) -> bool) -> String {
        let mut hasher = Sha256::new();
        for p in self.params.iter().filter(|p| include(p)) {
            hasher.update(p.name.as_bytes());
            for v in &p.data {
                hasher.update(v.to_le_bytes());
            }
        }
        hex(&hasher.finalize())
    }

    pub fn checksum(&self) -> String {
        self.checksum_of(|_| true)
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let cfg = &self.config;
        if image.height() != cfg.input_height || image.width() != cfg.input_width || image.channels() != cfg.input_channels {
            return Err(DiuError::Shape(format!(
                "expected {}x{}x{} input, got {}x{}x{}",
                cfg.input_height,
                cfg.input_width,
                cfg.input_channels,
                image.height(),
                image.width(),
                image.channels()
            )));
        }
        if image.data().iter().any(|v| !v.is_finite()) {
            return Err(DiuError::Data("input image contains non-finite values".into()));
        }
        Ok(())
    }

    /// Embeds a batch; row `i` is the embedding of `images[i]`.
    pub fn forward(&self, images: &[Image]) -> Result<Array2<f32>> {
        let d = self.config.embedding_dim;
        let mut out = Array2::zeros((images.len(), d));
        for (i, image) in images.iter().enumerate() {
            let e = self.embed(image)?;
            out.row_mut(i).iter_mut().zip(e).for_each(|(o, v)| *o = v);
        }
        Ok(out)
    }

    pub fn embed(&self, image: &Image) -> Result<Vec<f32>> {
        self.check_input(image)?;
        Ok(self.forward_planar(&image.to_planar(), false).0)
    }

    /// Forward pass returning the embedding and the activations needed by
    /// [`backward`](Self::backward).
    pub fn forward_traced(&self, image: &Image) -> Result<(Vec<f32>, Trace)> {
        self.check_input(image)?;
        let (e, trace) = self.forward_planar(&image.to_planar(), true);
        Ok((e, trace.expect("trace requested")))
    }

    fn forward_planar(&self, input: &[f32], keep: bool) -> (Vec<f32>, Option<Trace>) {
        let cfg = &self.config;
        let plan = cfg.spatial_plan();
        // pixels in [0, 1] are centred before the first convolution
        let mut x: Vec<f32> = input.iter().map(|v| v - INPUT_CENTER).collect();
        let mut c_in = cfg.input_channels;
        let mut block_inputs = Vec::new();
        let mut block_activations = Vec::new();
        for (b, &(h, w)) in plan.iter().enumerate().take(cfg.num_blocks) {
            let c_out = cfg.channels_per_block[b];
            let mut act = vec![0.0f32; c_out * h * w];
            layers::conv3x3_forward(&x, c_in, h, w, &self.params[2 * b].data, &self.params[2 * b + 1].data, c_out, &mut act);
            layers::relu_inplace(&mut act);
            let next = if pools_after(b) {
                layers::avg_pool2_forward(&act, c_out, h, w)
            } else if keep {
                act.clone()
            } else {
                std::mem::take(&mut act)
            };
            if keep {
                block_inputs.push(std::mem::replace(&mut x, next));
                block_activations.push(act);
            } else {
                x = next;
            }
            c_in = c_out;
        }
        let (fh, fw) = plan[cfg.num_blocks];
        let pooled = layers::global_avg_pool(&x, c_in, fh * fw);
        let head_w = &self.params[2 * cfg.num_blocks].data;
        let head_b = &self.params[2 * cfg.num_blocks + 1].data;
        let embedding = (0..cfg.embedding_dim)
            .map(|j| {
                head_b[j]
                    + head_w[j * c_in..(j + 1) * c_in]
                        .iter()
                        .zip(&pooled)
                        .map(|(a, b)| a * b)
                        .sum::<f32>()
            })
            .collect();
        let trace = keep.then_some(Trace {
            block_inputs,
            block_activations,
            pooled,
        });
        (embedding, trace)
    }

    /// Accumulates `d(loss)/d(params)` into `grads` for every tensor marked
    /// in `trainable`, given `d(loss)/d(embedding)`. Backpropagation stops at
    /// the lowest block that still owns a trainable tensor.
    pub fn backward(&self, trace: &Trace, grad_embedding: &[f32], trainable: &[bool], grads: &mut Gradients) {
        let cfg = &self.config;
        let n = cfg.num_blocks;
        let Some(lowest) = trainable.iter().position(|&t| t) else {
            return;
        };
        let lowest_block = lowest / 2; // zero-based; == n for head-only
        let c_last = cfg.channels_per_block[n - 1];
        let plan = cfg.spatial_plan();

        let head_w = &self.params[2 * n].data;
        if let Some(gw) = grads.tensors[2 * n].as_mut() {
            for j in 0..cfg.embedding_dim {
                let g = grad_embedding[j];
                for (w, p) in gw[j * c_last..(j + 1) * c_last].iter_mut().zip(&trace.pooled) {
                    *w += g * p;
                }
            }
        }
        if let Some(gb) = grads.tensors[2 * n + 1].as_mut() {
            for (b, g) in gb.iter_mut().zip(grad_embedding) {
                *b += g;
            }
        }
        if lowest_block >= n {
            return;
        }

        // gradient w.r.t. the global-pool input
        let (fh, fw) = plan[n];
        let plane = fh * fw;
        let mut grad_x = vec![0.0f32; c_last * plane];
        for c in 0..c_last {
            let gp: f32 = (0..cfg.embedding_dim).map(|j| head_w[j * c_last + c] * grad_embedding[j]).sum();
            grad_x[c * plane..(c + 1) * plane].fill(gp / plane as f32);
        }

        for b in (lowest_block..n).rev() {
            let (h, w) = plan[b];
            let c_out = cfg.channels_per_block[b];
            let c_in = if b == 0 { cfg.input_channels } else { cfg.channels_per_block[b - 1] };
            let mut grad_act = if pools_after(b) {
                layers::avg_pool2_backward(&grad_x, c_out, h, w)
            } else {
                grad_x
            };
            layers::relu_backward_inplace(&trace.block_activations[b], &mut grad_act);

            let need_input_grad = b > lowest_block;
            let mut grad_in = if need_input_grad { vec![0.0f32; c_in * h * w] } else { Vec::new() };
            let (left, right) = grads.tensors.split_at_mut(2 * b + 1);
            let weight_grads = match (left[2 * b].as_mut(), right[0].as_mut()) {
                (Some(gw), Some(gb)) => Some((gw.as_mut_slice(), gb.as_mut_slice())),
                (None, None) => None,
                _ => panic!("block {} weight and bias must share trainability", b + 1),
            };
            layers::conv3x3_backward(
                &trace.block_inputs[b],
                c_in,
                h,
                w,
                &self.params[2 * b].data,
                c_out,
                &grad_act,
                weight_grads,
                need_input_grad.then_some(grad_in.as_mut_slice()),
            );
            grad_x = grad_in;
        }
    }
}

fn init_param(name: String, shape: Vec<usize>, group: ParamGroup, bound: f64, seed: u64) -> Param {
    let len: usize = shape.iter().product();
    let rng = CounterRng::new(derive_seed(seed, &name));
    let data = (0..len as u64)
        .map(|i| if bound == 0.0 { 0.0 } else { ((2.0 * rng.uniform(i) - 1.0) * bound) as f32 })
        .collect();
    Param { name, shape, group, data }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn forward(net: &EmbeddingNetwork, images: &[Image]) -> Result<Array2<f32>> {
    net.forward(images)
}

/// Split of student parameters into adapted lower blocks and frozen rest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterPartition {
    pub diu_cutoff: usize,
    pub trainable_ids: BTreeSet<String>,
    pub frozen_ids: BTreeSet<String>,
}

impl ParameterPartition {
    /// Blocks `1..=cutoff` are trainable; deeper blocks and the head are frozen.
    pub fn new(net: &EmbeddingNetwork, diu_cutoff: usize) -> Result<Self> {
        if diu_cutoff > net.num_blocks() {
            return Err(DiuError::config(
                "diu_cutoff",
                format!("{diu_cutoff} exceeds the {} available blocks", net.num_blocks()),
            ));
        }
        let (trainable_ids, frozen_ids) = net
            .params()
            .iter()
            .map(|p| (p.name.clone(), matches!(p.group, ParamGroup::Block(b) if b <= diu_cutoff)))
            .fold((BTreeSet::new(), BTreeSet::new()), |(mut t, mut f), (name, trainable)| {
                if trainable {
                    t.insert(name);
                } else {
                    f.insert(name);
                }
                (t, f)
            });
        Ok(Self {
            diu_cutoff,
            trainable_ids,
            frozen_ids,
        })
    }

    /// Boolean mask aligned with `net.params()`.
    pub fn mask(&self, net: &EmbeddingNetwork) -> Vec<bool> {
        net.params().iter().map(|p| self.trainable_ids.contains(&p.name)).collect()
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.trainable_ids.contains(name)
    }
}

/// Copies the teacher into a student and marks its lower `diu_cutoff` blocks trainable.
pub fn clone_as_student(teacher: &EmbeddingNetwork, diu_cutoff: usize) -> Result<(EmbeddingNetwork, ParameterPartition)> {
    let partition = ParameterPartition::new(teacher, diu_cutoff)?;
    Ok((teacher.clone(), partition))
}

/// Promotes a single-channel image to three identical channels; 3-channel
/// input passes through unchanged.
pub fn replicate_channels(image: &Image) -> Result<Image> {
    match image.channels() {
        3 => Ok(image.clone()),
        1 => {
            let data = image.data().iter().flat_map(|&v| [v, v, v]).collect();
            Image::new(image.height(), image.width(), 3, data)
        }
        c => Err(DiuError::Data(format!("cannot replicate a {c}-channel image to 3 channels"))),
    }
}
