//! The fusion network: two tied-weight pre-fusion layers applied to each
//! input luminance plane, an elementwise (or concatenation) merge of the
//! feature stacks, and three reconstruction layers producing the fused
//! plane. The pre-fusion weights are stored once, so the operator applied
//! to both inputs is the identical function at every training step.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, TrainState};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gradcore::{
    concat_backward, concat_forward, conv2d_backward, conv2d_forward, merge_backward,
    merge_forward, Activation, ConvGrads, ConvLayer, MergeMode, Tensor3,
};
use crate::planar::PlanarImage;

pub const PRE_FUSION_LAYERS: usize = 2;
pub const RECONSTRUCTION_LAYERS: usize = 3;
pub const LAYERS: usize = PRE_FUSION_LAYERS + RECONSTRUCTION_LAYERS;

/// Architecture plan: per-layer kernel sizes and output channel counts,
/// the merge mode, and the initialization seed. The first layer's kernel
/// is fixed at 5x5.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    pub kernels: [usize; LAYERS],
    pub channels: [usize; LAYERS],
    pub merge: MergeMode,
    pub seed: u64,
}

impl ArchConfig {
    /// Full-size plan: 5/7/7/5/5 kernels over 16/32/32/16/1 channels.
    pub fn paper(merge: MergeMode, seed: u64) -> Self {
        ArchConfig { kernels: [5, 7, 7, 5, 5], channels: [16, 32, 32, 16, 1], merge, seed }
    }

    /// Small plan sized for CPU desk runs: 5/3/3/3/3 kernels over
    /// 8/16/16/8/1 channels (receptive field 13 pixels).
    pub fn desk(merge: MergeMode, seed: u64) -> Self {
        ArchConfig { kernels: [5, 3, 3, 3, 3], channels: [8, 16, 16, 8, 1], merge, seed }
    }

    /// Minimal plan for gradient checks and fast tests.
    pub fn tiny(merge: MergeMode, seed: u64) -> Self {
        ArchConfig { kernels: [5, 3, 3, 3, 3], channels: [4, 8, 8, 4, 1], merge, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels[0] != 5 {
            return Err(Error::config(format!(
                "first layer kernel is fixed at 5x5, got {}",
                self.kernels[0]
            )));
        }
        for (i, &k) in self.kernels.iter().enumerate() {
            if k % 2 == 0 || k == 0 {
                return Err(Error::config(format!("layer {i} kernel {k} must be odd")));
            }
        }
        for (i, &c) in self.channels.iter().enumerate() {
            if c == 0 {
                return Err(Error::config(format!("layer {i} has zero channels")));
            }
        }
        if self.channels[LAYERS - 1] != 1 {
            return Err(Error::config(format!(
                "final layer must emit one channel, got {}",
                self.channels[LAYERS - 1]
            )));
        }
        Ok(())
    }

    /// Input channel count per layer, accounting for concat widening C3.
    pub fn layer_cin(&self, layer: usize) -> usize {
        match layer {
            0 => 1,
            i if i == PRE_FUSION_LAYERS && self.merge == MergeMode::Concat => {
                2 * self.channels[i - 1]
            }
            i => self.channels[i - 1],
        }
    }

    pub fn layer_activation(&self, layer: usize) -> Activation {
        if layer == LAYERS - 1 {
            Activation::Linear
        } else {
            Activation::ReLU
        }
    }

    /// Side length of the receptive field of the final output.
    pub fn receptive_field(&self) -> usize {
        1 + self.kernels.iter().map(|k| k - 1).sum::<usize>()
    }

    pub fn param_count(&self) -> usize {
        (0..LAYERS)
            .map(|i| {
                let k = self.kernels[i];
                k * k * self.layer_cin(i) * self.channels[i] + self.channels[i]
            })
            .sum()
    }
}

/// The learned weights: five convolution layers. Layers 0..2 are the tied
/// pre-fusion pair (applied to both inputs), layers 2..5 reconstruct.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: ArchConfig,
    layers: Vec<ConvLayer>,
}

impl NetworkParams {
    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    /// Parameters flattened layer by layer, kernel then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.kernel);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Writes a flat vector (as produced by [`flatten`](Self::flatten))
    /// back into the layer buffers.
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::config(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let klen = l.kernel.len();
            l.kernel.copy_from_slice(&flat[off..off + klen]);
            off += klen;
            let blen = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
        Ok(())
    }

    /// Rounds every parameter onto the f32 grid. Checkpoints store 32-bit
    /// floats, so keeping the live values on that grid makes save/load an
    /// identity.
    pub fn quantize_f32(&mut self) {
        for l in &mut self.layers {
            for v in l.kernel.iter_mut().chain(l.bias.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }

    pub(crate) fn from_layers(arch: ArchConfig, layers: Vec<ConvLayer>) -> Self {
        NetworkParams { arch, layers }
    }
}

/// Draws kernels from a zero-mean fan-in-scaled normal distribution
/// (ReLU layers use std `sqrt(2/fan_in)`, the linear head `sqrt(1/fan_in)`)
/// and zeroes every bias. Deterministic under the seed.
pub fn init_network(arch: &ArchConfig) -> Result<NetworkParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(arch.seed);
    let mut layers = Vec::with_capacity(LAYERS);
    for i in 0..LAYERS {
        let k = arch.kernels[i];
        let cin = arch.layer_cin(i);
        let cout = arch.channels[i];
        let act = arch.layer_activation(i);
        let fan_in = (k * k * cin) as f64;
        let std = match act {
            Activation::ReLU => (2.0 / fan_in).sqrt(),
            Activation::Linear => (1.0 / fan_in).sqrt(),
        };
        let kernel = (0..k * k * cin * cout).map(|_| std * normal_sample(&mut rng)).collect();
        let bias = vec![0.0; cout];
        layers.push(ConvLayer::new(k, k, cin, cout, kernel, bias, act)?);
    }
    let mut params = NetworkParams { arch: *arch, layers };
    params.quantize_f32();
    Ok(params)
}

/// Standard normal via Box-Muller, driven by the seeded stream.
fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    loop {
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let v = r * (std::f64::consts::TAU * u2).cos();
        if v.is_finite() {
            return v;
        }
    }
}

/// Activations retained by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    in1: Tensor3,
    in2: Tensor3,
    /// (pre, out) per pre-fusion layer, one vec per stream.
    stream1: Vec<(Tensor3, Tensor3)>,
    stream2: Vec<(Tensor3, Tensor3)>,
    merged: Tensor3,
    /// (pre, out) per reconstruction layer.
    recon: Vec<(Tensor3, Tensor3)>,
}

impl ForwardCache {
    pub fn output_plane(&self) -> Result<PlanarImage> {
        self.recon.last().unwrap().1.clone().into_planar()
    }
}

/// Runs both inputs through the shared pre-fusion layers, merges the
/// feature stacks, and reconstructs the fused luminance plane. The output
/// is the raw linear head (no clamping); inference clamps, the loss does
/// not. The cache retains every activation for [`backward`].
pub fn forward(
    params: &NetworkParams,
    y1: &PlanarImage,
    y2: &PlanarImage,
) -> Result<(PlanarImage, ForwardCache)> {
    if !y1.same_dims(y2) {
        return Err(Error::config(format!(
            "input planes differ in dims: {:?} vs {:?}",
            y1.dims(),
            y2.dims()
        )));
    }
    let in1 = Tensor3::from_planar(y1);
    let in2 = Tensor3::from_planar(y2);

    let mut stream = |input: &Tensor3| -> Result<Vec<(Tensor3, Tensor3)>> {
        let mut acts = Vec::with_capacity(PRE_FUSION_LAYERS);
        let mut cur = input.clone();
        for layer in &params.layers[..PRE_FUSION_LAYERS] {
            let (out, pre) = conv2d_forward(&cur, layer)?;
            cur = out.clone();
            acts.push((pre, out));
        }
        Ok(acts)
    };
    let stream1 = stream(&in1)?;
    let stream2 = stream(&in2)?;

    let f1 = &stream1.last().unwrap().1;
    let f2 = &stream2.last().unwrap().1;
    let merged = match params.arch.merge {
        MergeMode::Concat => concat_forward(f1, f2)?,
        mode => merge_forward(f1, f2, mode)?,
    };

    let mut recon = Vec::with_capacity(RECONSTRUCTION_LAYERS);
    let mut cur = merged.clone();
    for layer in &params.layers[PRE_FUSION_LAYERS..] {
        let (out, pre) = conv2d_forward(&cur, layer)?;
        cur = out.clone();
        recon.push((pre, out));
    }

    let cache = ForwardCache { in1, in2, stream1, stream2, merged, recon };
    let out = cache.output_plane()?;
    Ok((out, cache))
}

/// Per-layer parameter gradients, in layer order. Tied layers hold the sum
/// of both streams' contributions — one gradient per stored weight.
#[derive(Debug, Clone)]
pub struct NetworkGrads {
    pub layers: Vec<ConvGrads>,
}

impl NetworkGrads {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        NetworkGrads {
            layers: params
                .layers
                .iter()
                .map(|l| ConvGrads { kernel: vec![0.0; l.kernel.len()], bias: vec![0.0; l.bias.len()] })
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(&g.kernel);
            out.extend_from_slice(&g.bias);
        }
        out
    }

    pub fn add_assign(&mut self, other: &NetworkGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.kernel.iter_mut().zip(&b.kernel) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            for v in g.kernel.iter_mut().chain(g.bias.iter_mut()) {
                *v *= factor;
            }
        }
    }
}

/// Backpropagates the loss gradient on the fused plane to every parameter.
pub fn backward(
    params: &NetworkParams,
    cache: &ForwardCache,
    dloss_dout: &PlanarImage,
) -> Result<NetworkGrads> {
    let out_shape = cache.recon.last().unwrap().1.shape();
    if (dloss_dout.height(), dloss_dout.width(), 1) != out_shape {
        return Err(Error::config(format!(
            "upstream gradient dims {:?} do not match cached forward output {:?}; \
             the cache must come from the matching forward call",
            dloss_dout.dims(),
            out_shape
        )));
    }

    let mut grads: Vec<Option<ConvGrads>> = vec![None; LAYERS];
    let mut g = Tensor3::from_planar(dloss_dout);

    // Reconstruction layers, last to first.
    for i in (0..RECONSTRUCTION_LAYERS).rev() {
        let layer = &params.layers[PRE_FUSION_LAYERS + i];
        let input = if i == 0 { &cache.merged } else { &cache.recon[i - 1].1 };
        let pre = &cache.recon[i].0;
        let (gin, gl) = conv2d_backward(input, layer, pre, &g)?;
        grads[PRE_FUSION_LAYERS + i] = Some(gl);
        g = gin;
    }

    // Split across the merge.
    let f1 = &cache.stream1.last().unwrap().1;
    let f2 = &cache.stream2.last().unwrap().1;
    let (mut g1, mut g2) = match params.arch.merge {
        MergeMode::Concat => concat_backward(&g, f1.channels(), f2.channels())?,
        mode => merge_backward(f1, f2, mode, &g)?,
    };

    // Tied pre-fusion layers: sum both streams' parameter gradients.
    for i in (0..PRE_FUSION_LAYERS).rev() {
        let layer = &params.layers[i];
        let (input1, input2) = if i == 0 {
            (&cache.in1, &cache.in2)
        } else {
            (&cache.stream1[i - 1].1, &cache.stream2[i - 1].1)
        };
        let (gin1, gl1) = conv2d_backward(input1, layer, &cache.stream1[i].0, &g1)?;
        let (gin2, gl2) = conv2d_backward(input2, layer, &cache.stream2[i].0, &g2)?;
        let mut sum = gl1;
        for (a, b) in sum.kernel.iter_mut().zip(&gl2.kernel) {
            *a += b;
        }
        for (a, b) in sum.bias.iter_mut().zip(&gl2.bias) {
            *a += b;
        }
        grads[i] = Some(sum);
        g1 = gin1;
        g2 = gin2;
    }

    Ok(NetworkGrads { layers: grads.into_iter().map(Option::unwrap).collect() })
}
