//! Single-scale SSIM with a Gaussian window, differentiable in the first
//! argument. Used by the supervised training mode.

use crate::error::{Error, Result};
use crate::planar::PlanarImage;

/// Conventional SSIM parameters for intensities in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03 }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let mut w = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let dy = y as f64 - half;
            let dx = x as f64 - half;
            w.push((-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean SSIM over all valid window positions.
pub fn ssim(a: &PlanarImage, b: &PlanarImage, cfg: &SsimConfig) -> Result<f64> {
    Ok(ssim_impl(a, b, cfg, false)?.0)
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &PlanarImage, b: &PlanarImage, cfg: &SsimConfig) -> Result<(f64, PlanarImage)> {
    let (s, g) = ssim_impl(a, b, cfg, true)?;
    Ok((s, g.unwrap()))
}

fn ssim_impl(
    a: &PlanarImage,
    b: &PlanarImage,
    cfg: &SsimConfig,
    want_grad: bool,
) -> Result<(f64, Option<PlanarImage>)> {
    if !a.same_dims(b) {
        return Err(Error::config("ssim inputs differ in dims"));
    }
    let (h, w) = a.dims();
    let win = cfg.window.min(h).min(w);
    if win < 2 {
        return Err(Error::config("image too small for ssim"));
    }
    let weights = gaussian_window(win, cfg.sigma);
    let c1 = (cfg.k1 * cfg.k1) as f64;
    let c2 = (cfg.k2 * cfg.k2) as f64;

    let mut grad = want_grad.then(|| PlanarImage::zeros(h, w));
    let mut total = 0.0;
    let mut count = 0usize;

    for y0 in 0..=(h - win) {
        for x0 in 0..=(w - win) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for dy in 0..win {
                let ra = &a.row(y0 + dy)[x0..x0 + win];
                let rb = &b.row(y0 + dy)[x0..x0 + win];
                let wr = &weights[dy * win..(dy + 1) * win];
                for i in 0..win {
                    mu_a += wr[i] * ra[i];
                    mu_b += wr[i] * rb[i];
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for dy in 0..win {
                let ra = &a.row(y0 + dy)[x0..x0 + win];
                let rb = &b.row(y0 + dy)[x0..x0 + win];
                let wr = &weights[dy * win..(dy + 1) * win];
                for i in 0..win {
                    let da = ra[i] - mu_a;
                    let db = rb[i] - mu_b;
                    var_a += wr[i] * da * da;
                    var_b += wr[i] * db * db;
                    cov += wr[i] * da * db;
                }
            }

            let a1 = 2.0 * mu_a * mu_b + c1;
            let a2 = 2.0 * cov + c2;
            let b1 = mu_a * mu_a + mu_b * mu_b + c1;
            let b2 = var_a + var_b + c2;
            let s = (a1 * a2) / (b1 * b2);
            total += s;
            count += 1;

            if let Some(g) = grad.as_mut() {
                // dS/da_i with weighted statistics; see the chain terms for
                // mu_a, var_a and cov.
                let inv_bb = 1.0 / (b1 * b2);
                for dy in 0..win {
                    let ra = &a.row(y0 + dy)[x0..x0 + win];
                    let rb = &b.row(y0 + dy)[x0..x0 + win];
                    let wr = &weights[dy * win..(dy + 1) * win];
                    let grow = g.row_mut(y0 + dy);
                    for i in 0..win {
                        let gi = wr[i];
                        let da = ra[i] - mu_a;
                        let db = rb[i] - mu_b;
                        let d_a1 = 2.0 * gi * mu_b;
                        let d_a2 = 2.0 * gi * db;
                        let d_b1 = 2.0 * gi * mu_a;
                        let d_b2 = 2.0 * gi * da;
                        let ds = (d_a1 * a2 + a1 * d_a2) * inv_bb
                            - s * (d_b1 / b1 + d_b2 / b2);
                        grow[x0 + i] += ds;
                    }
                }
            }
        }
    }

    let mean = total / count as f64;
    if let Some(g) = grad.as_mut() {
        let scale = 1.0 / count as f64;
        for v in g.as_mut_slice() {
            *v *= scale;
        }
    }
    Ok((mean, grad))
}
