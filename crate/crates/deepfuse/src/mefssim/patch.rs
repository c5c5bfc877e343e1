//! Patch-level building blocks: contrast/structure/luminance decomposition,
//! the desired-patch construction, and the per-window consistency score.

/// A patch split into contrast (norm of the mean-subtracted patch),
/// structure (its unit direction), and luminance (the mean).
#[derive(Debug, Clone)]
pub struct PatchDecomposition {
    pub contrast: f64,
    pub structure: Vec<f64>,
    pub luminance: f64,
    /// Set for flat patches, whose structure is undefined and stored as zeros.
    pub degenerate: bool,
}

/// The ideal local fusion target: a mean-free vector whose norm equals the
/// winning contrast.
#[derive(Debug, Clone)]
pub struct DesiredPatch {
    pub values: Vec<f64>,
    /// Set when both source patches were flat; the window is scored 1.
    pub degenerate: bool,
}

/// Subtracts the mean. Shared by every caller so that identical inputs take
/// bit-identical paths through the metric.
pub fn mean_subtracted(patch: &[f64]) -> (Vec<f64>, f64) {
    let n = patch.len() as f64;
    let mean = patch.iter().sum::<f64>() / n;
    (patch.iter().map(|&v| v - mean).collect(), mean)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn decompose_patch(patch: &[f64]) -> PatchDecomposition {
    assert!(!patch.is_empty(), "cannot decompose an empty patch");
    let (tilde, mean) = mean_subtracted(patch);
    let contrast = norm(&tilde);
    if contrast > 0.0 {
        let structure = tilde.iter().map(|&v| v / contrast).collect();
        PatchDecomposition { contrast, structure, luminance: mean, degenerate: false }
    } else {
        PatchDecomposition {
            contrast: 0.0,
            structure: vec![0.0; patch.len()],
            luminance: mean,
            degenerate: true,
        }
    }
}

/// Builds the desired patch from two input patches: the winning contrast
/// times the normalized weighted sum of structures, with the luminance
/// discarded. `exponent` shapes the structure weight `||y~||^p`.
///
/// Bit-identical inputs short-circuit to the mean-subtracted patch itself,
/// which is what the construction reduces to algebraically.
pub fn desired_patch(p1: &[f64], p2: &[f64], exponent: f64) -> DesiredPatch {
    assert_eq!(p1.len(), p2.len(), "desired_patch needs equally sized patches");
    if p1 == p2 {
        let (tilde, _) = mean_subtracted(p1);
        let degenerate = tilde.iter().all(|&v| v == 0.0);
        return DesiredPatch { values: tilde, degenerate };
    }

    let d1 = decompose_patch(p1);
    let d2 = decompose_patch(p2);
    if d1.degenerate && d2.degenerate {
        return DesiredPatch { values: vec![0.0; p1.len()], degenerate: true };
    }

    let c_hat = d1.contrast.max(d2.contrast);
    let w1 = d1.contrast.powf(exponent);
    let w2 = d2.contrast.powf(exponent);

    // The normalization by (w1 + w2) cancels when the sum is rescaled to
    // unit norm, so the weighted sum is kept unnormalized here.
    let mut bar: Vec<f64> = d1
        .structure
        .iter()
        .zip(&d2.structure)
        .map(|(&s1, &s2)| w1 * s1 + w2 * s2)
        .collect();
    let bar_norm = norm(&bar);
    if bar_norm > 0.0 {
        for v in &mut bar {
            *v = c_hat * (*v / bar_norm);
        }
        DesiredPatch { values: bar, degenerate: false }
    } else {
        // Structures cancelled exactly (anti-parallel with equal weight).
        // Fall back to the higher-contrast structure; break contrast ties
        // by lexicographic order so the choice is symmetric in the inputs.
        let pick = if d1.contrast > d2.contrast {
            &d1.structure
        } else if d2.contrast > d1.contrast {
            &d2.structure
        } else if d1.structure.as_slice() >= d2.structure.as_slice() {
            &d1.structure
        } else {
            &d2.structure
        };
        let values = pick.iter().map(|&s| c_hat * s).collect();
        DesiredPatch { values, degenerate: false }
    }
}

/// Statistics of one scored window, used by the gradient path.
#[derive(Debug, Clone, Copy)]
pub struct ScoreParts {
    pub score: f64,
    /// Denominator `var(y_hat) + var(y_f) + C`.
    pub denom: f64,
}

/// Structural consistency between the desired patch and a fused window:
/// `(2 cov + C) / (var_des + var_fused + C)`, clamped into `[-1, 1]`.
/// A degenerate desired patch (both inputs flat) scores 1 by convention.
pub fn score_at(desired: &DesiredPatch, fused: &[f64], c: f64) -> f64 {
    score_parts(desired, fused, c).score
}

pub fn score_parts(desired: &DesiredPatch, fused: &[f64], c: f64) -> ScoreParts {
    assert_eq!(desired.values.len(), fused.len(), "score_at length mismatch");
    assert!(c > 0.0, "stability constant must be positive");
    if desired.degenerate {
        return ScoreParts { score: 1.0, denom: c };
    }
    let n = fused.len() as f64;
    let (f_tilde, _) = mean_subtracted(fused);
    let mut var_d = 0.0;
    let mut var_f = 0.0;
    let mut cov = 0.0;
    for (&d, &f) in desired.values.iter().zip(&f_tilde) {
        var_d += d * d;
        var_f += f * f;
        cov += d * f;
    }
    var_d /= n;
    var_f /= n;
    cov /= n;
    let num = 2.0 * cov + c;
    let denom = var_d + var_f + c;
    // The clamp only trims float overshoot; the analytic range is (-1, 1].
    let score = (num / denom).clamp(-1.0, 1.0);
    ScoreParts { score, denom }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decompose_known_patch() {
        let d = decompose_patch(&[1.0, 2.0, 3.0, 4.0]);
        assert!((d.luminance - 2.5).abs() < 1e-12);
        assert!((d.contrast - 5.0f64.sqrt()).abs() < 1e-12);
        let want = [-1.5, -0.5, 0.5, 1.5].map(|v| v / 5.0f64.sqrt());
        for (s, w) in d.structure.iter().zip(want) {
            assert!((s - w).abs() < 1e-12);
        }
        assert!(!d.degenerate);
    }

    #[test]
    fn constant_patch_is_degenerate() {
        let d = decompose_patch(&[5.0, 5.0, 5.0]);
        assert_eq!(d.luminance, 5.0);
        assert_eq!(d.contrast, 0.0);
        assert!(d.degenerate);
        assert!(d.structure.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruction_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let patch: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
            let d = decompose_patch(&patch);
            for (i, &p) in patch.iter().enumerate() {
                let rebuilt = d.contrast * d.structure[i] + d.luminance;
                assert!((rebuilt - p).abs() < 1e-6, "reconstruction off at {i}");
            }
            assert!(
                !d.degenerate && (norm(&d.structure) - 1.0).abs() < 1e-6,
                "structure must be unit length"
            );
        }
    }

    #[test]
    fn identical_patches_give_mean_subtracted_target() {
        let y = [0.2, 0.8, 0.4, 0.6];
        let d = desired_patch(&y, &y, 4.0);
        let mean = 0.5;
        for (v, &p) in d.values.iter().zip(&y) {
            assert_eq!(*v, p - mean);
        }
        assert!(!d.degenerate);
    }

    #[test]
    fn flat_patch_cedes_all_weight() {
        let flat = [0.3; 4];
        let textured = [0.1, 0.5, 0.2, 0.9];
        for p in [1.0, 2.0, 4.0] {
            let d = desired_patch(&flat, &textured, p);
            let (want, _) = mean_subtracted(&textured);
            for (v, w) in d.values.iter().zip(&want) {
                assert!((v - w).abs() < 1e-9, "exponent {p}: got {v}, want {w}");
            }
        }
    }

    #[test]
    fn hand_worked_two_element_case() {
        // y1 = [0, 2], y2 = [0, 4], p = 1: both structures are
        // [-1, 1]/sqrt(2), the winning contrast is 2*sqrt(2),
        // so the desired patch is [-2, 2].
        let d = desired_patch(&[0.0, 2.0], &[0.0, 4.0], 1.0);
        assert!((d.values[0] + 2.0).abs() < 1e-9);
        assert!((d.values[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn both_degenerate_flags_and_scores_one() {
        let d = desired_patch(&[0.5; 4], &[0.9; 4], 4.0);
        assert!(d.degenerate);
        assert!(d.values.iter().all(|&v| v == 0.0));
        assert_eq!(score_at(&d, &[0.2, 0.4, 0.1, 0.9], 9e-4), 1.0);
    }

    #[test]
    fn desired_norm_equals_winning_contrast() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let p1: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let p2: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let d = desired_patch(&p1, &p2, 4.0);
            let c_hat = decompose_patch(&p1).contrast.max(decompose_patch(&p2).contrast);
            assert!((norm(&d.values) - c_hat).abs() < 1e-6);
        }
    }

    #[test]
    fn score_is_one_for_shifted_copy() {
        let y1 = [0.1, 0.7, 0.3, 0.5];
        let y2 = [0.2, 0.6, 0.4, 0.8];
        let d = desired_patch(&y1, &y2, 4.0);
        // Fused equal to the desired patch up to an additive constant.
        let fused: Vec<f64> = d.values.iter().map(|v| v + 0.5).collect();
        let s = score_at(&d, &fused, 9e-4);
        assert!((s - 1.0).abs() < 1e-12, "shifted copy scored {s}");
    }

    #[test]
    fn anti_correlated_score_approaches_minus_one() {
        let y1 = [0.0, 1.0, 0.0, 1.0];
        let y2 = [0.0, 0.9, 0.1, 1.0];
        let d = desired_patch(&y1, &y2, 4.0);
        let fused: Vec<f64> = d.values.iter().map(|v| -v).collect();
        let s = score_at(&d, &fused, 1e-12);
        assert!(s < -0.999, "anti-correlated fused scored {s}");
    }

    #[test]
    fn flat_desired_and_flat_fused_score_one() {
        let d = desired_patch(&[0.4; 4], &[0.4; 4], 4.0);
        assert_eq!(score_at(&d, &[0.7; 4], 9e-4), 1.0);
    }

    #[test]
    fn swap_symmetry_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let p1: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let p2: Vec<f64> = (0..8).map(|_| rng.gen_range(0.0..1.0)).collect();
            let a = desired_patch(&p1, &p2, 4.0);
            let b = desired_patch(&p2, &p1, 4.0);
            assert_eq!(a.values, b.values, "desired patch must ignore input order");
        }
    }
}
