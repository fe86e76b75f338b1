//! Static channel gains for a deployment around the base station.

use alloc::vec::Vec;

use rand::Rng;

/// Log-distance path loss over a disc-shaped deployment.
///
/// Node positions are uniform over the annulus `min_distance..=radius` and
/// the effective gain is `ref_gain * (ref_distance / d)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PathLossModel {
    pub radius: f64,
    pub min_distance: f64,
    pub ref_distance: f64,
    pub ref_gain: f64,
    pub exponent: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self {
            radius: 50.0,
            min_distance: 20.0,
            ref_distance: 20.0,
            ref_gain: 2.5,
            exponent: 2.0,
        }
    }
}

impl PathLossModel {
    pub fn gain_at(&self, distance: f64) -> f64 {
        self.ref_gain * libm::pow(self.ref_distance / distance, self.exponent)
    }

    /// Area-uniform distance in the annulus.
    pub fn sample_distance<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let lo = self.min_distance * self.min_distance;
        let hi = self.radius * self.radius;
        let u: f64 = rng.random();
        libm::sqrt(lo + u * (hi - lo))
    }

    pub fn draw_gains<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n)
            .map(|_| self.gain_at(self.sample_distance(rng)))
            .collect()
    }
}

/// Unit-mean exponential power fading sample (Rayleigh amplitude).
pub fn rayleigh_power<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    // 1 - u lies in (0, 1], so the log is finite.
    -libm::log(1.0 - u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gains_fall_within_annulus_bounds() {
        let m = PathLossModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = m.draw_gains(500, &mut rng);
        let lo = m.gain_at(m.radius);
        let hi = m.gain_at(m.min_distance);
        assert!(g.iter().all(|&x| x >= lo && x <= hi));
        assert_eq!(hi, 2.5);
        assert!((lo - 0.4).abs() < 1e-12);
    }

    #[test]
    fn fading_has_unit_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| rayleigh_power(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }
}
