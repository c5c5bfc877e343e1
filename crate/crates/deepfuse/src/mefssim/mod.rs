//! The no-reference fusion quality metric and training loss.
//!
//! A fused luminance plane is scored against the two input planes by
//! decomposing windows around every pixel into contrast, structure and
//! luminance, building the desired patch from the inputs alone, and
//! measuring structural consistency between the desired and fused windows.
//! The per-window scores are averaged per scale on a box-filtered pyramid
//! and the per-scale means are multiplied into the final score. The loss is
//! `1 - score`, with an exact analytic gradient with respect to every fused
//! pixel.

mod patch;
mod ssim;

pub use patch::{
    decompose_patch, desired_patch, mean_subtracted, score_at, DesiredPatch, PatchDecomposition,
};
pub use ssim::{ssim, ssim_with_grad, SsimConfig};

use crate::error::{Error, Result};
use crate::planar::PlanarImage;

use patch::score_parts;

/// Metric configuration. Defaults: 8x8 uniform windows at stride 1,
/// three dyadic scales, `C = 0.03^2` for intensities in `[0, 1]`, and
/// structure weight `||y~||^4`.
#[derive(Debug, Clone, Copy)]
pub struct MefSsimConfig {
    pub window: usize,
    pub stride: usize,
    pub stability: f64,
    pub scales: usize,
    pub structure_exponent: f64,
}

impl Default for MefSsimConfig {
    fn default() -> Self {
        MefSsimConfig {
            window: 8,
            stride: 1,
            stability: 0.03 * 0.03,
            scales: 3,
            structure_exponent: 4.0,
        }
    }
}

impl MefSsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::config("metric window must be at least 2 pixels"));
        }
        if self.stride == 0 {
            return Err(Error::config("metric stride must be positive"));
        }
        if self.scales == 0 {
            return Err(Error::config("metric needs at least one scale"));
        }
        if !(self.stability > 0.0) {
            return Err(Error::config("stability constant must be positive"));
        }
        if self.structure_exponent < 0.0 {
            return Err(Error::config("structure exponent must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-pixel quality values at the finest scale: each pixel carries the
/// mean score of every window covering it. Values lie in `[-1, 1]` and the
/// map has the fused plane's dimensions. With non-overlapping windows
/// (stride == window) at a single scale its mean equals the scalar score.
#[derive(Debug, Clone)]
pub struct ScoreMap {
    pub plane: PlanarImage,
}

impl ScoreMap {
    pub fn mean(&self) -> f64 {
        self.plane.mean()
    }
}

/// Full metric result: the scalar score, per-scale means, and the map.
#[derive(Debug, Clone)]
pub struct MefSsimScore {
    pub score: f64,
    pub per_scale: Vec<f64>,
    pub map: ScoreMap,
}

fn check_triple(y1: &PlanarImage, y2: &PlanarImage, fused: &PlanarImage) -> Result<()> {
    if !y1.same_dims(y2) || !y1.same_dims(fused) {
        return Err(Error::config(format!(
            "metric inputs differ in dims: {:?}, {:?}, {:?}",
            y1.dims(),
            y2.dims(),
            fused.dims()
        )));
    }
    Ok(())
}

/// Number of scales actually usable: every scale's image must still hold
/// one full window.
fn usable_scales(dims: (usize, usize), cfg: &MefSsimConfig) -> Result<usize> {
    let (mut h, mut w) = dims;
    if h < cfg.window || w < cfg.window {
        return Err(Error::config(format!(
            "image {h}x{w} is smaller than the {0}x{0} metric window",
            cfg.window
        )));
    }
    let mut usable = 1;
    while usable < cfg.scales {
        h /= 2;
        w /= 2;
        if h < cfg.window || w < cfg.window {
            break;
        }
        usable += 1;
    }
    if usable < cfg.scales {
        log::warn!(
            "image {}x{} too small for {} scales with window {}; using {}",
            dims.0,
            dims.1,
            cfg.scales,
            cfg.window,
            usable
        );
    }
    Ok(usable)
}

struct ScalePass {
    mean_score: f64,
    /// d(mean_score)/d(fused pixel) for this scale's resolution.
    grad: Option<PlanarImage>,
    /// Per-pixel (sum, count) accumulation of covering-window scores.
    map: Option<PlanarImage>,
}

fn copy_window(src: &PlanarImage, y0: usize, x0: usize, win: usize, out: &mut [f64]) {
    for dy in 0..win {
        let row = src.row(y0 + dy);
        out[dy * win..(dy + 1) * win].copy_from_slice(&row[x0..x0 + win]);
    }
}

fn scale_pass(
    y1: &PlanarImage,
    y2: &PlanarImage,
    fused: &PlanarImage,
    cfg: &MefSsimConfig,
    want_grad: bool,
    want_map: bool,
) -> Result<ScalePass> {
    let (h, w) = fused.dims();
    let win = cfg.window;
    let n = win * win;
    let n_f = n as f64;

    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut wf = vec![0.0; n];

    let mut grad = want_grad.then(|| PlanarImage::zeros(h, w));
    let mut map_sum = want_map.then(|| PlanarImage::zeros(h, w));
    let mut map_cnt = want_map.then(|| PlanarImage::zeros(h, w));

    let mut total = 0.0;
    let mut count = 0usize;
    let mut y0 = 0;
    while y0 + win <= h {
        let mut x0 = 0;
        while x0 + win <= w {
            copy_window(y1, y0, x0, win, &mut w1);
            copy_window(y2, y0, x0, win, &mut w2);
            copy_window(fused, y0, x0, win, &mut wf);

            let desired = desired_patch(&w1, &w2, cfg.structure_exponent);
            let parts = score_parts(&desired, &wf, cfg.stability);
            if !parts.score.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite score in window at ({y0}, {x0})"
                )));
            }
            total += parts.score;
            count += 1;

            if let Some(g) = grad.as_mut() {
                if !desired.degenerate {
                    // d(score)/d(fused_i) = 2/(n*B) * (des_i - score * f~_i)
                    let (f_tilde, _) = mean_subtracted(&wf);
                    let coeff = 2.0 / (n_f * parts.denom);
                    for dy in 0..win {
                        let row = g.row_mut(y0 + dy);
                        for dx in 0..win {
                            let i = dy * win + dx;
                            row[x0 + dx] +=
                                coeff * (desired.values[i] - parts.score * f_tilde[i]);
                        }
                    }
                }
            }
            if let (Some(ms), Some(mc)) = (map_sum.as_mut(), map_cnt.as_mut()) {
                for dy in 0..win {
                    let srow = ms.row_mut(y0 + dy);
                    for dx in 0..win {
                        srow[x0 + dx] += parts.score;
                    }
                }
                for dy in 0..win {
                    let crow = mc.row_mut(y0 + dy);
                    for dx in 0..win {
                        crow[x0 + dx] += 1.0;
                    }
                }
            }

            x0 += cfg.stride;
        }
        y0 += cfg.stride;
    }

    if count == 0 {
        return Err(Error::config(format!(
            "no {win}x{win} windows fit a {h}x{w} image"
        )));
    }

    // Mean over windows; the clamp trims float overshoot near a perfect 1.
    let mean_score = (total / count as f64).clamp(-1.0, 1.0);
    if let Some(g) = grad.as_mut() {
        let scale = 1.0 / count as f64;
        for v in g.as_mut_slice() {
            *v *= scale;
        }
    }

    let map = match (map_sum, map_cnt) {
        (Some(ms), Some(mc)) => {
            let mut plane = ms;
            for (s, &c) in plane.as_mut_slice().iter_mut().zip(mc.as_slice()) {
                if c > 0.0 {
                    *s = (*s / c).clamp(-1.0, 1.0);
                }
            }
            Some(plane)
        }
        _ => None,
    };

    Ok(ScalePass { mean_score, grad, map })
}

fn build_pyramid(img: &PlanarImage, scales: usize) -> Vec<PlanarImage> {
    let mut out = Vec::with_capacity(scales);
    out.push(img.clone());
    for _ in 1..scales {
        let next = out.last().unwrap().box_downsample2();
        out.push(next);
    }
    out
}

/// Scores a fused plane against the two inputs.
pub fn mef_ssim(
    y1: &PlanarImage,
    y2: &PlanarImage,
    fused: &PlanarImage,
    cfg: &MefSsimConfig,
) -> Result<MefSsimScore> {
    cfg.validate()?;
    check_triple(y1, y2, fused)?;
    let scales = usable_scales(fused.dims(), cfg)?;

    let p1 = build_pyramid(y1, scales);
    let p2 = build_pyramid(y2, scales);
    let pf = build_pyramid(fused, scales);

    let mut per_scale = Vec::with_capacity(scales);
    let mut map = None;
    for s in 0..scales {
        let pass = scale_pass(&p1[s], &p2[s], &pf[s], cfg, false, s == 0)?;
        per_scale.push(pass.mean_score);
        if s == 0 {
            map = pass.map;
        }
    }
    let score: f64 = per_scale.iter().product::<f64>().clamp(-1.0, 1.0);
    Ok(MefSsimScore { score, per_scale, map: ScoreMap { plane: map.unwrap() } })
}

/// The training loss `1 - score` and its exact gradient with respect to
/// every fused pixel. The desired patches depend only on the inputs, so
/// they are constants of the differentiation.
pub fn mef_ssim_loss_grad(
    y1: &PlanarImage,
    y2: &PlanarImage,
    fused: &PlanarImage,
    cfg: &MefSsimConfig,
) -> Result<(f64, PlanarImage)> {
    cfg.validate()?;
    check_triple(y1, y2, fused)?;
    let scales = usable_scales(fused.dims(), cfg)?;

    let p1 = build_pyramid(y1, scales);
    let p2 = build_pyramid(y2, scales);
    let pf = build_pyramid(fused, scales);

    let mut means = Vec::with_capacity(scales);
    let mut grads = Vec::with_capacity(scales);
    for s in 0..scales {
        let pass = scale_pass(&p1[s], &p2[s], &pf[s], cfg, true, false)?;
        means.push(pass.mean_score);
        grads.push(pass.grad.unwrap());
    }

    let score: f64 = means.iter().product();
    let loss = 1.0 - score.clamp(-1.0, 1.0);

    // d(prod)/d(fused) = sum_s (prod_{j != s} mean_j) * up(grad_s),
    // where up() chains the box-filter adjoint back to full resolution.
    let mut total_grad = PlanarImage::zeros(fused.height(), fused.width());
    for s in 0..scales {
        let others: f64 = (0..scales).filter(|&j| j != s).map(|j| means[j]).product();
        let mut g = grads[s].clone();
        for parent in (0..s).rev() {
            g = g.box_upsample2_adjoint(pf[parent].dims());
        }
        for (t, &v) in total_grad.as_mut_slice().iter_mut().zip(g.as_slice()) {
            // Loss = 1 - score, hence the sign flip.
            *t -= others * v;
        }
    }

    Ok((loss, total_grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_plane(rng: &mut ChaCha8Rng, h: usize, w: usize) -> PlanarImage {
        PlanarImage::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0))
    }

    /// A plane with smooth, structured content (not pure noise).
    fn structured_plane(h: usize, w: usize, phase: f64) -> PlanarImage {
        PlanarImage::from_fn(h, w, |y, x| {
            let u = x as f64 / w as f64;
            let v = y as f64 / h as f64;
            0.5 + 0.3 * ((6.0 * u + phase).sin() * (4.0 * v).cos()) + 0.1 * (u - v)
        })
        .clamped01()
    }

    #[test]
    fn identical_triple_scores_exactly_one() {
        let y = structured_plane(32, 40, 0.3);
        let out = mef_ssim(&y, &y, &y, &MefSsimConfig::default()).unwrap();
        assert_eq!(out.score, 1.0);
        for m in &out.per_scale {
            assert_eq!(*m, 1.0);
        }
        let (loss, grad) = mef_ssim_loss_grad(&y, &y, &y, &MefSsimConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn swap_symmetry_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let y1 = random_plane(&mut rng, 24, 24);
        let y2 = random_plane(&mut rng, 24, 24);
        let f = random_plane(&mut rng, 24, 24);
        let cfg = MefSsimConfig::default();
        let a = mef_ssim(&y1, &y2, &f, &cfg).unwrap();
        let b = mef_ssim(&y2, &y1, &f, &cfg).unwrap();
        assert_eq!(a.score, b.score);
    }

    #[test]
    fn score_and_loss_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let cfg = MefSsimConfig::default();
        for _ in 0..5 {
            let y1 = random_plane(&mut rng, 17, 23);
            let y2 = random_plane(&mut rng, 17, 23);
            let f = random_plane(&mut rng, 17, 23);
            let out = mef_ssim(&y1, &y2, &f, &cfg).unwrap();
            assert!(out.score >= -1.0 && out.score <= 1.0);
            for &v in out.map.plane.as_slice() {
                assert!((-1.0..=1.0).contains(&v), "map entry {v} out of range");
            }
            let (loss, _) = mef_ssim_loss_grad(&y1, &y2, &f, &cfg).unwrap();
            assert!((0.0..=2.0).contains(&loss), "loss {loss} out of range");
        }
    }

    #[test]
    fn map_mean_matches_score_for_tiled_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let y1 = random_plane(&mut rng, 32, 32);
        let y2 = random_plane(&mut rng, 32, 32);
        let f = random_plane(&mut rng, 32, 32);
        let cfg = MefSsimConfig { stride: 8, scales: 1, ..Default::default() };
        let out = mef_ssim(&y1, &y2, &f, &cfg).unwrap();
        assert!((out.map.mean() - out.score).abs() < 1e-12);
        assert_eq!(out.map.plane.dims(), f.dims());
    }

    #[test]
    fn desired_mosaic_attains_near_perfect_score() {
        let y1 = structured_plane(32, 32, 0.0);
        let y2 = structured_plane(32, 32, 1.5);
        let cfg = MefSsimConfig { stride: 8, scales: 1, ..Default::default() };
        // Build the fused image by tiling desired patches (plus a luminance
        // offset, which the score ignores).
        let mut fused = PlanarImage::filled(32, 32, 0.5);
        let mut w1 = vec![0.0; 64];
        let mut w2 = vec![0.0; 64];
        for by in (0..32).step_by(8) {
            for bx in (0..32).step_by(8) {
                copy_window(&y1, by, bx, 8, &mut w1);
                copy_window(&y2, by, bx, 8, &mut w2);
                let d = desired_patch(&w1, &w2, cfg.structure_exponent);
                for dy in 0..8 {
                    for dx in 0..8 {
                        fused.set(by + dy, bx + dx, 0.5 + d.values[dy * 8 + dx]);
                    }
                }
            }
        }
        let out = mef_ssim(&y1, &y2, &fused, &cfg).unwrap();
        assert!(out.score > 1.0 - 1e-3, "mosaic scored {}", out.score);
    }

    #[test]
    fn flat_fused_scores_below_either_input() {
        let y1 = structured_plane(32, 32, 0.0);
        let y2 = structured_plane(32, 32, 2.0);
        let cfg = MefSsimConfig::default();
        let flat = PlanarImage::filled(32, 32, 0.5);
        let s_flat = mef_ssim(&y1, &y2, &flat, &cfg).unwrap().score;
        let s_y1 = mef_ssim(&y1, &y2, &y1, &cfg).unwrap().score;
        let s_y2 = mef_ssim(&y1, &y2, &y2, &cfg).unwrap().score;
        assert!(s_flat < s_y1, "flat {s_flat} vs input1 {s_y1}");
        assert!(s_flat < s_y2, "flat {s_flat} vs input2 {s_y2}");
    }

    #[test]
    fn additive_shift_leaves_single_scale_score_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let y1 = random_plane(&mut rng, 16, 16);
        let y2 = random_plane(&mut rng, 16, 16);
        let f = random_plane(&mut rng, 16, 16);
        let cfg = MefSsimConfig { stride: 8, scales: 1, ..Default::default() };
        let base = mef_ssim(&y1, &y2, &f, &cfg).unwrap().score;
        let shifted = mef_ssim(&y1, &y2, &f.map(|v| v + 0.17), &cfg).unwrap().score;
        assert!((base - shifted).abs() < 1e-12);
    }

    #[test]
    fn too_small_image_reduces_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let y1 = random_plane(&mut rng, 12, 12);
        let y2 = random_plane(&mut rng, 12, 12);
        let f = random_plane(&mut rng, 12, 12);
        // 12 -> 6 < 8, so only one scale is usable out of three.
        let out = mef_ssim(&y1, &y2, &f, &MefSsimConfig::default()).unwrap();
        assert_eq!(out.per_scale.len(), 1);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let y1 = random_plane(&mut rng, 16, 16);
        let y2 = random_plane(&mut rng, 16, 16);
        let f = random_plane(&mut rng, 16, 16);
        let cfg = MefSsimConfig { scales: 2, ..Default::default() };

        let (_, grad) = mef_ssim_loss_grad(&y1, &y2, &f, &cfg).unwrap();
        let loss = |p: &[f64]| {
            let img = PlanarImage::from_vec(16, 16, p.to_vec()).unwrap();
            mef_ssim_loss_grad(&y1, &y2, &img, &cfg).unwrap().0
        };
        let err = finite_diff_check(loss, f.as_slice(), grad.as_slice(), 1e-4);
        assert!(err < 1e-4, "loss gradient max relative error {err}");
    }

    #[test]
    fn dim_mismatch_is_config_error() {
        let a = PlanarImage::zeros(16, 16);
        let b = PlanarImage::zeros(16, 17);
        assert!(matches!(
            mef_ssim(&a, &a, &b, &MefSsimConfig::default()),
            Err(Error::Config(_))
        ));
    }
}
