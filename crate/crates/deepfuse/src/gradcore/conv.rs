//! Stride-1 "same"-padded 2-D convolution with exact gradients.

use crate::error::{Error, Result};

use super::tensor::Tensor3;

/// Elementwise nonlinearity applied after the convolution sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ReLU,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if v > 0.0 {
                    v
                } else {
                    0.0
                }
            }
            Activation::Linear => v,
        }
    }

    /// Gradient gate w.r.t. the pre-activation. The ReLU gate keys off the
    /// forward pre-activation sign; exactly zero gates to zero.
    #[inline]
    fn gate(self, pre: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One convolution layer: kernel `[kh, kw, cin, cout]`, bias `[cout]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    /// Flattened as `((dy * kw + dx) * cin + ci) * cout + co`.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl ConvLayer {
    pub fn new(
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        kernel: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!("kernel dims must be odd, got {kh}x{kw}")));
        }
        if kernel.len() != kh * kw * cin * cout {
            return Err(Error::config(format!(
                "kernel length {} does not match {}x{}x{}x{}",
                kernel.len(),
                kh,
                kw,
                cin,
                cout
            )));
        }
        if bias.len() != cout {
            return Err(Error::config(format!(
                "bias length {} does not match cout {}",
                bias.len(),
                cout
            )));
        }
        Ok(ConvLayer { kh, kw, cin, cout, kernel, bias, activation })
    }

    pub fn zeros(kh: usize, kw: usize, cin: usize, cout: usize, activation: Activation) -> Result<Self> {
        ConvLayer::new(kh, kw, cin, cout, vec![0.0; kh * kw * cin * cout], vec![0.0; cout], activation)
    }

    #[inline]
    pub fn kernel_idx(&self, dy: usize, dx: usize, ci: usize, co: usize) -> usize {
        ((dy * self.kw + dx) * self.cin + ci) * self.cout + co
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }
}

/// Gradients for one layer's parameters, shaped like the layer buffers.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Runs the layer on `input`, returning post-activation output and the
/// pre-activation map the backward pass needs for its ReLU gate.
pub fn conv2d_forward(input: &Tensor3, layer: &ConvLayer) -> Result<(Tensor3, Tensor3)> {
    if input.channels() != layer.cin {
        return Err(Error::config(format!(
            "conv input has {} channels, layer expects {}",
            input.channels(),
            layer.cin
        )));
    }
    input.ensure_finite("conv input")?;

    let (h, w) = (input.height(), input.width());
    let (cin, cout) = (layer.cin, layer.cout);
    let ph = layer.kh / 2;
    let pw = layer.kw / 2;

    let mut pre = Tensor3::zeros(h, w, cout);
    for y in 0..h {
        for x in 0..w {
            let out_px = pre.pixel_mut(y, x);
            out_px.copy_from_slice(&layer.bias);
        }
    }

    for y in 0..h {
        for dy in 0..layer.kh {
            let sy = y + dy;
            if sy < ph || sy - ph >= h {
                continue;
            }
            let sy = sy - ph;
            for x in 0..w {
                // Mutable pixel borrowed once per output position.
                let base_out = (y * w + x) * cout;
                for dx in 0..layer.kw {
                    let sx = x + dx;
                    if sx < pw || sx - pw >= w {
                        continue;
                    }
                    let sx = sx - pw;
                    let in_px = input.pixel(sy, sx);
                    let krow = &layer.kernel[(dy * layer.kw + dx) * cin * cout..];
                    let out = &mut pre.as_mut_slice()[base_out..base_out + cout];
                    for ci in 0..cin {
                        let v = in_px[ci];
                        if v == 0.0 {
                            continue;
                        }
                        let kk = &krow[ci * cout..ci * cout + cout];
                        for (o, k) in out.iter_mut().zip(kk) {
                            *o += v * k;
                        }
                    }
                }
            }
        }
    }

    let mut out = pre.clone();
    let act = layer.activation;
    for v in out.as_mut_slice() {
        *v = act.apply(*v);
    }
    out.ensure_finite("conv output")?;
    Ok((out, pre))
}

/// Exact gradients of [`conv2d_forward`] given the upstream gradient on the
/// post-activation output. `pre` is the pre-activation map from the matching
/// forward call.
pub fn conv2d_backward(
    input: &Tensor3,
    layer: &ConvLayer,
    pre: &Tensor3,
    upstream: &Tensor3,
) -> Result<(Tensor3, ConvGrads)> {
    let (h, w) = (input.height(), input.width());
    if upstream.shape() != (h, w, layer.cout) {
        return Err(Error::config(format!(
            "upstream gradient shape {:?} does not match conv output {:?}",
            upstream.shape(),
            (h, w, layer.cout)
        )));
    }
    if pre.shape() != upstream.shape() {
        return Err(Error::config("pre-activation cache does not match upstream gradient"));
    }
    if input.channels() != layer.cin {
        return Err(Error::config(format!(
            "conv input has {} channels, layer expects {}",
            input.channels(),
            layer.cin
        )));
    }

    let (cin, cout) = (layer.cin, layer.cout);
    let ph = layer.kh / 2;
    let pw = layer.kw / 2;

    // Gate the upstream gradient through the activation.
    let mut gp = upstream.clone();
    {
        let gate = layer.activation;
        let gp_s = gp.as_mut_slice();
        let pre_s = pre.as_slice();
        for (g, &p) in gp_s.iter_mut().zip(pre_s) {
            *g *= gate.gate(p);
        }
    }

    let mut grad_bias = vec![0.0; cout];
    for y in 0..h {
        for x in 0..w {
            let g = gp.pixel(y, x);
            for (gb, &gv) in grad_bias.iter_mut().zip(g) {
                *gb += gv;
            }
        }
    }

    let mut grad_kernel = vec![0.0; layer.kernel.len()];
    let mut grad_input = Tensor3::zeros(h, w, cin);
    for y in 0..h {
        for dy in 0..layer.kh {
            let sy = y + dy;
            if sy < ph || sy - ph >= h {
                continue;
            }
            let sy = sy - ph;
            for x in 0..w {
                let g_px = gp.pixel(y, x);
                for dx in 0..layer.kw {
                    let sx = x + dx;
                    if sx < pw || sx - pw >= w {
                        continue;
                    }
                    let sx = sx - pw;
                    let in_px = input.pixel(sy, sx);
                    let kbase = (dy * layer.kw + dx) * cin * cout;
                    let gi_px = grad_input.pixel_mut(sy, sx);
                    for ci in 0..cin {
                        let v = in_px[ci];
                        let krow = &layer.kernel[kbase + ci * cout..kbase + ci * cout + cout];
                        let gkrow = &mut grad_kernel[kbase + ci * cout..kbase + ci * cout + cout];
                        let mut acc = 0.0;
                        for ((gk, &k), &g) in gkrow.iter_mut().zip(krow).zip(g_px) {
                            *gk += v * g;
                            acc += k * g;
                        }
                        gi_px[ci] += acc;
                    }
                }
            }
        }
    }

    Ok((grad_input, ConvGrads { kernel: grad_kernel, bias: grad_bias }))
}
