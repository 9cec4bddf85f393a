//! Empirical checks of the geometric claims: concentration of measure on
//! the sphere, equator-collapse statistics, and angular-coordinate
//! histograms exportable as CSV.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{CoreError, Result};
use crate::manifold::{cartesian_to_angular, UnitVector};

/// Distance to the singular set below which a sample is tallied in the
/// degenerate bucket instead of receiving arbitrary angles.
const SINGULAR_TOL: f64 = 1e-6;

/// One histogram over a fixed range.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub label: String,
    pub low: f64,
    pub high: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    fn new(label: &str, low: f64, high: f64, bins: usize) -> Self {
        Histogram {
            label: label.to_string(),
            low,
            high,
            counts: vec![0; bins],
        }
    }

    fn add(&mut self, value: f64) {
        let bins = self.counts.len();
        let frac = (value - self.low) / (self.high - self.low);
        let idx = ((frac * bins as f64) as usize).min(bins - 1);
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Angular histograms for a batch of embeddings plus collapse summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleHistogram {
    /// One histogram per latitude psi_i over [0, pi].
    pub latitudes: Vec<Histogram>,
    /// Longitude histogram over [0, 2 pi).
    pub longitude: Histogram,
    /// Samples too close to the singular set for angle assignment.
    pub degenerate: usize,
    /// Mean |z_d|: the equator-collapse scalar (0 = collapsed to equator).
    pub mean_abs_polar: f64,
    /// Excess kurtosis of the final latitude.
    pub latitude_kurtosis: f64,
    pub sample_count: usize,
}

/// Gaussian-then-normalize samples, uniform on the sphere, seeded.
pub fn uniform_sphere_sample(d: usize, n: usize, seed: u64) -> Result<Vec<UnitVector>> {
    if d < 2 || n == 0 {
        return Err(CoreError::InvalidParameter(
            "need d >= 2 and n >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-9 {
            continue;
        }
        out.push(UnitVector::from_normalized(
            v.iter().map(|x| x / norm).collect(),
        ));
    }
    Ok(out)
}

/// Empirical polar-cap mass versus the analytic concentration bound
/// 2 exp(-d eps^2 / 2). Passes when the sample stays within Monte Carlo
/// slack of the bound.
pub fn concentration_check(
    d: usize,
    epsilon: f64,
    n: usize,
    seed: u64,
) -> Result<(f64, f64, bool)> {
    if !(0.0..1.0).contains(&epsilon) || epsilon <= 0.0 {
        return Err(CoreError::InvalidParameter(
            "epsilon must be in (0,1)".into(),
        ));
    }
    let samples = uniform_sphere_sample(d, n, seed)?;
    let hits = samples
        .iter()
        .filter(|z| z.polar_component().abs() >= epsilon)
        .count();
    let empirical = hits as f64 / n as f64;
    let bound = 2.0 * (-(d as f64) * epsilon * epsilon / 2.0).exp();
    let slack = 3.0 * (bound / n as f64).sqrt();
    Ok((empirical, bound, empirical <= bound + slack))
}

/// Histograms of the angular chart over a batch of embeddings.
pub fn angle_histograms(embeddings: &[UnitVector], bins: usize) -> Result<AngleHistogram> {
    if embeddings.is_empty() {
        return Err(CoreError::EmptyBatch);
    }
    if bins == 0 {
        return Err(CoreError::InvalidParameter("need at least one bin".into()));
    }
    let d = embeddings[0].dim();
    let mut latitudes: Vec<Histogram> = (0..d.saturating_sub(2))
        .map(|i| Histogram::new(&format!("psi{}", i + 1), 0.0, std::f64::consts::PI, bins))
        .collect();
    let mut longitude = Histogram::new("theta", 0.0, std::f64::consts::TAU, bins);
    let mut degenerate = 0usize;
    let mut polar_sum = 0.0;
    let mut last_lat: Vec<f64> = Vec::new();
    for z in embeddings {
        polar_sum += z.polar_component().abs();
        match cartesian_to_angular(z) {
            Ok(a) => {
                // Near-singular radicals produce unstable angles; route
                // them to the degenerate bucket.
                if is_near_singular(z) {
                    degenerate += 1;
                    continue;
                }
                for (h, psi) in latitudes.iter_mut().zip(&a.latitudes) {
                    h.add(*psi);
                }
                longitude.add(a.longitude.rem_euclid(std::f64::consts::TAU));
                if let Some(&psi) = a.latitudes.last() {
                    last_lat.push(psi);
                }
            }
            Err(_) => degenerate += 1,
        }
    }
    let kurtosis = excess_kurtosis(&last_lat);
    Ok(AngleHistogram {
        latitudes,
        longitude,
        degenerate,
        mean_abs_polar: polar_sum / embeddings.len() as f64,
        latitude_kurtosis: kurtosis,
        sample_count: embeddings.len(),
    })
}

fn is_near_singular(z: &UnitVector) -> bool {
    let c = z.as_slice();
    let d = c.len();
    // The chart's longitude needs a nonzero radical over the last pair.
    if c[d - 2] * c[d - 2] + c[d - 1] * c[d - 1] < SINGULAR_TOL * SINGULAR_TOL {
        return true;
    }
    // Pole-concentrated mass: every non-polar coordinate vanishes and the
    // angles stop identifying a direction, so tally it as degenerate
    // rather than piling artifacts into the pi/2 bins.
    1.0 - z.polar_component().abs() < SINGULAR_TOL
}

fn excess_kurtosis(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    if m2 < 1e-18 {
        return 0.0;
    }
    m4 / (m2 * m2) - 3.0
}

impl AngleHistogram {
    /// CSV export: coordinate,bin_low,bin_high,count rows, plus one
    /// degenerate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("coordinate,bin_low,bin_high,count\n");
        let mut write_hist = |h: &Histogram| {
            let bins = h.counts.len();
            let width = (h.high - h.low) / bins as f64;
            for (i, &c) in h.counts.iter().enumerate() {
                let lo = h.low + width * i as f64;
                out.push_str(&format!("{},{:.6},{:.6},{}\n", h.label, lo, lo + width, c));
            }
        };
        for h in &self.latitudes {
            write_hist(h);
        }
        write_hist(&self.longitude);
        out.push_str(&format!("degenerate,,,{}\n", self.degenerate));
        out
    }

    /// Flat key: value summary block.
    pub fn summary(&self) -> String {
        format!(
            "samples: {}\ndegenerate: {}\nmean_abs_polar: {:.6}\nlatitude_kurtosis: {:.6}\n",
            self.sample_count, self.degenerate, self.mean_abs_polar, self.latitude_kurtosis
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn samples_are_unit_norm_and_deterministic() {
        let a = uniform_sphere_sample(8, 50, 3).unwrap();
        let b = uniform_sphere_sample(8, 50, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.as_slice(), y.as_slice());
            let n: f64 = x.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn circle_angles_pass_chi_square() {
        let n = 100_000;
        let samples = uniform_sphere_sample(2, n, 11).unwrap();
        let bins = 20usize;
        let mut counts = vec![0usize; bins];
        for z in &samples {
            let angle = z.as_slice()[1].atan2(z.as_slice()[0]).rem_euclid(std::f64::consts::TAU);
            let idx = ((angle / std::f64::consts::TAU * bins as f64) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        let expected = n as f64 / bins as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let chi = ChiSquared::new((bins - 1) as f64).unwrap();
        let p = 1.0 - chi.cdf(stat);
        assert!(p > 0.01, "chi-square p-value {p} too small (stat {stat})");
    }

    #[test]
    fn polar_mean_vanishes_in_high_dimension() {
        let samples = uniform_sphere_sample(128, 100_000, 5).unwrap();
        let mean: f64 =
            samples.iter().map(|z| z.polar_component()).sum::<f64>() / samples.len() as f64;
        assert!(mean.abs() < 0.01, "mean polar component {mean}");
    }

    #[test]
    fn concentration_bound_examples() {
        let (_, bound, _) = concentration_check(512, 0.2, 1000, 1).unwrap();
        assert!((bound - 2.0 * (-10.24f64).exp()).abs() < 1e-12);
        // Tiny epsilon: the bound exceeds 1 and trivially passes.
        let (emp, bound, pass) = concentration_check(16, 0.01, 1000, 1).unwrap();
        assert!(bound >= 1.0 && pass && emp <= 1.0);
        // A realistic case must also pass.
        let (_, _, pass) = concentration_check(64, 0.3, 100_000, 2).unwrap();
        assert!(pass);
    }

    #[test]
    fn histograms_conserve_counts() {
        let samples = uniform_sphere_sample(5, 2000, 9).unwrap();
        let h = angle_histograms(&samples, 60).unwrap();
        assert_eq!(h.longitude.total() + h.degenerate, h.sample_count);
        for lat in &h.latitudes {
            assert_eq!(lat.total() + h.degenerate, h.sample_count);
        }
        // Uniform in d=5 is nowhere near collapsed.
        assert!(h.mean_abs_polar < 0.6);
    }

    #[test]
    fn all_north_pole_is_degenerate_with_full_polar_mass() {
        let z = UnitVector::north_pole(4);
        let h = angle_histograms(&vec![z; 10], 10).unwrap();
        assert_eq!(h.degenerate, 10);
        assert_eq!(h.longitude.total(), 0);
        assert!((h.mean_abs_polar - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_high_dim_mean_polar_is_small() {
        let samples = uniform_sphere_sample(64, 20_000, 13).unwrap();
        let h = angle_histograms(&samples, 60).unwrap();
        assert!(h.mean_abs_polar < 0.2, "mean |z_d| = {}", h.mean_abs_polar);
    }

    #[test]
    fn csv_export_shape() {
        let samples = uniform_sphere_sample(4, 100, 21).unwrap();
        let h = angle_histograms(&samples, 5).unwrap();
        let csv = h.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        // Header + 2 latitude histograms x 5 + longitude x 5 + degenerate.
        assert_eq!(lines.len(), 1 + 2 * 5 + 5 + 1);
        assert!(lines[0].starts_with("coordinate,"));
    }
}
