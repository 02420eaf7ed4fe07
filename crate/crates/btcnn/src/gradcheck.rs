//! Central finite-difference gradient verification.

use rayon::prelude::*;

/// Compares an analytic gradient against central differences
/// (f(θ+h) − f(θ−h)) / 2h, one coordinate at a time, and returns the worst
/// relative error |analytic − numeric| / max(1e−8, |analytic| + |numeric|).
///
/// `f` must be a pure function of the parameter vector. Coordinates are
/// checked independently (in parallel), so results do not depend on thread
/// count.
pub fn finite_difference_check<F>(f: F, theta: &[f64], analytic: &[f64], h: f64) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert_eq!(
        theta.len(),
        analytic.len(),
        "analytic gradient must be congruent with the parameter vector"
    );
    let chunk = 64usize;
    (0..theta.len())
        .into_par_iter()
        .chunks(chunk)
        .map(|coords| {
            let mut local = theta.to_vec();
            let mut worst = 0.0f64;
            for i in coords {
                let orig = local[i];
                local[i] = orig + h;
                let up = f(&local);
                local[i] = orig - h;
                let down = f(&local);
                local[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let denom = (analytic[i].abs() + numeric.abs()).max(1e-8);
                worst = worst.max((analytic[i] - numeric).abs() / denom);
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}
