//! Central-difference gradient verification.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relative disagreement between an analytic and a central-difference value.
#[inline]
pub fn relative_error(analytic: f64, central: f64) -> f64 {
    (analytic - central).abs() / (analytic.abs() + central.abs() + 1e-12)
}

/// Compares `analytic` against central differences of `loss` at `params`,
/// over every coordinate. Returns the max relative error. `loss` must be
/// deterministic; coordinates sitting exactly on a nondifferentiable point
/// (a ReLU kink) are the caller's responsibility to avoid.
pub fn finite_diff_check(
    mut loss: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
) -> f64 {
    let coords: Vec<usize> = (0..params.len()).collect();
    finite_diff_check_at(&mut loss, params, analytic, eps, &coords)
}

/// Like [`finite_diff_check`] but only probes `max_coords` coordinates,
/// chosen by a seeded shuffle. Useful when a full sweep is too slow.
pub fn finite_diff_check_sampled(
    mut loss: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    max_coords: usize,
    seed: u64,
) -> f64 {
    let mut coords: Vec<usize> = (0..params.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    coords.shuffle(&mut rng);
    coords.truncate(max_coords);
    finite_diff_check_at(&mut loss, params, analytic, eps, &coords)
}

fn finite_diff_check_at(
    loss: &mut impl FnMut(&[f64]) -> f64,
    params: &[f64],
    analytic: &[f64],
    eps: f64,
    coords: &[usize],
) -> f64 {
    assert_eq!(params.len(), analytic.len(), "gradient length mismatch");
    let mut scratch = params.to_vec();
    let mut max_rel: f64 = 0.0;
    for &i in coords {
        let saved = scratch[i];
        scratch[i] = saved + eps;
        let up = loss(&scratch);
        scratch[i] = saved - eps;
        let down = loss(&scratch);
        scratch[i] = saved;
        let central = (up - down) / (2.0 * eps);
        max_rel = max_rel.max(relative_error(analytic[i], central));
    }
    max_rel
}
