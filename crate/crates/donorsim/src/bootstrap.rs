//! Nonparametric uncertainty estimates for benchmarking fits: resample
//! sequences within each length bin, refit, and report the spread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Result, SimError};
use crate::fit::{fit_decay, DecayFit};
use crate::rb::RbPoint;

/// Fit the per-length mean difference signal to A·pⁿ.
pub fn fit_points(points: &[RbPoint]) -> Result<DecayFit> {
    let xs: Vec<f64> = points.iter().map(|p| p.length as f64).collect();
    let ys: Vec<f64> = points.iter().map(RbPoint::mean).collect();
    fit_decay(&xs, &ys)
}

fn resample(points: &[RbPoint], rng: &mut impl Rng) -> Vec<RbPoint> {
    points
        .iter()
        .map(|p| {
            let diffs = (0..p.diffs.len())
                .map(|_| p.diffs[rng.gen_range(0..p.diffs.len())])
                .collect();
            RbPoint {
                length: p.length,
                diffs,
            }
        })
        .collect()
}

fn std_dev(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Bootstrap distribution of the decay rate p.
pub fn bootstrap_decay(points: &[RbPoint], resamples: usize, seed: u64) -> Result<Vec<f64>> {
    if resamples < 2 {
        return Err(SimError::Fit("need at least 2 bootstrap resamples".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut rates = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let sample = resample(points, &mut rng);
        if let Ok(fit) = fit_points(&sample) {
            rates.push(fit.rate);
        }
    }
    if rates.len() * 2 < resamples {
        return Err(SimError::Fit(
            "most bootstrap resamples failed to fit a decay".into(),
        ));
    }
    Ok(rates)
}

/// Standard error of the decay rate.
pub fn decay_rate_sigma(points: &[RbPoint], resamples: usize, seed: u64) -> Result<f64> {
    Ok(std_dev(&bootstrap_decay(points, resamples, seed)?))
}

/// Bootstrap distribution of the ratio p_interleaved / p_reference, with the
/// two data sets resampled independently.
pub fn bootstrap_ratio(
    reference: &[RbPoint],
    interleaved: &[RbPoint],
    resamples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if resamples < 2 {
        return Err(SimError::Fit("need at least 2 bootstrap resamples".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut ratios = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let r = fit_points(&resample(reference, &mut rng));
        let i = fit_points(&resample(interleaved, &mut rng));
        if let (Ok(r), Ok(i)) = (r, i) {
            ratios.push(i.rate / r.rate);
        }
    }
    if ratios.len() * 2 < resamples {
        return Err(SimError::Fit(
            "most bootstrap resamples failed to fit a decay".into(),
        ));
    }
    Ok(ratios)
}

/// Standard error of the interleaved/reference decay ratio.
pub fn ratio_sigma(
    reference: &[RbPoint],
    interleaved: &[RbPoint],
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    Ok(std_dev(&bootstrap_ratio(
        reference,
        interleaved,
        resamples,
        seed,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_points(p: f64, scatter: f64, seed: u64) -> Vec<RbPoint> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        [1usize, 4, 16, 64, 160]
            .iter()
            .map(|&n| RbPoint {
                length: n,
                diffs: (0..24)
                    .map(|_| p.powi(n as i32) + rng.gen_range(-scatter..scatter))
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn sigma_tracks_the_scatter() {
        let tight = decay_rate_sigma(&synthetic_points(0.99, 0.002, 1), 120, 7).unwrap();
        let loose = decay_rate_sigma(&synthetic_points(0.99, 0.03, 1), 120, 7).unwrap();
        assert!(tight < loose, "tight {tight} loose {loose}");
        assert!(tight > 0.0 && loose < 0.05);
    }

    #[test]
    fn ratio_sigma_is_finite_and_small_for_clean_data() {
        let reference = synthetic_points(0.99, 0.004, 2);
        let interleaved = synthetic_points(0.99 * 0.98, 0.004, 3);
        let sigma = ratio_sigma(&reference, &interleaved, 120, 11).unwrap();
        assert!(sigma > 0.0 && sigma < 0.02, "sigma {sigma}");
        let ratios = bootstrap_ratio(&reference, &interleaved, 120, 11).unwrap();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean - 0.98).abs() < 0.01, "mean ratio {mean}");
    }
}
