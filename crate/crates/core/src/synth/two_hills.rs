//! The ambiguous 1-D two-hills world.
//!
//! A camera slides along `[0, 1]` looking at terrain with two identical
//! Gaussian hills. An observation is a fixed-width window of terrain samples
//! around the camera, so a window showing one hill cannot reveal which hill
//! it is: the two positions `0.25 + d` and `0.75 + d` produce the same
//! observation. Plain regression trained on such data averages the two valid
//! answers; that collapse is what this world exists to expose.
//!
//! Terrain height is the bump of the distance to the *nearest* hill, which
//! makes the two hills literally identical rather than identical up to a
//! far-hill tail of ~1e-11. Window samples are taken relative to the window
//! center, and the center offset is formed by subtracting the hill center
//! directly (exact by Sterbenz for in-domain positions), so mirrored windows
//! at exactly representable positions match bit for bit.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoHillsWorld {
    pub hill_centers: [f64; 2],
    /// Gaussian width of each hill.
    pub hill_width: f64,
    pub window_half_width: f64,
    pub samples_per_observation: usize,
}

impl Default for TwoHillsWorld {
    fn default() -> Self {
        Self {
            hill_centers: [0.25, 0.75],
            hill_width: 0.05,
            window_half_width: 0.1,
            samples_per_observation: 32,
        }
    }
}

impl TwoHillsWorld {
    /// Terrain height at `p`: unit-height Gaussian bump of the distance to
    /// the nearest hill.
    pub fn terrain(&self, p: f64) -> f64 {
        let d = self
            .hill_centers
            .iter()
            .map(|c| (p - c).abs())
            .fold(f64::INFINITY, f64::min);
        self.bump(d)
    }

    fn bump(&self, distance: f64) -> f64 {
        let z = distance / self.hill_width;
        (-0.5 * z * z).exp()
    }

    /// Renders the observation window centered at `position`: terrain
    /// sampled at cell centers across `[position - hw, position + hw]`.
    pub fn render(&self, position: f64) -> Result<Vec<f64>> {
        let hw = self.window_half_width;
        if !(position - hw >= 0.0 && position + hw <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "observation window at {position} +- {hw} leaves the [0,1] domain"
            )));
        }
        let n = self.samples_per_observation;
        // Offsets of the two hills from the window center. For positions of
        // the form hill + dyadic delta the subtraction is exact, so the
        // mirrored window sees bit-identical offsets.
        let offsets: Vec<f64> = self.hill_centers.iter().map(|c| position - c).collect();
        let mut obs = Vec::with_capacity(n);
        for i in 0..n {
            let u = -hw + 2.0 * hw * (i as f64 + 0.5) / n as f64;
            let d = offsets
                .iter()
                .map(|off| (off + u).abs())
                .fold(f64::INFINITY, f64::min);
            obs.push(self.bump(d));
        }
        Ok(obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mirrored_windows_are_bit_identical() {
        let world = TwoHillsWorld::default();
        // delta grid of multiples of 2^-10: 0.25 + delta and 0.75 + delta
        // are exactly representable, so the symmetry must be exact.
        for k in -102..=102i32 {
            let delta = k as f64 / 1024.0;
            let a = world.render(0.25 + delta).unwrap();
            let b = world.render(0.75 + delta).unwrap();
            assert_eq!(a, b, "asymmetry at delta = {delta}");
        }
    }

    #[test]
    fn mirrored_windows_at_offset() {
        let world = TwoHillsWorld::default();
        let delta = 0.03;
        let a = world.render(0.25 + delta).unwrap();
        let b = world.render(0.75 + delta).unwrap();
        // 0.03 is not dyadic; agreement still holds to rounding.
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn window_away_from_hills_is_near_zero() {
        // Window at 0.5 +- 0.1: nearest sample sits 0.15 from a hill center,
        // so every sample is below exp(-(0.15/0.05)^2 / 2) ~= 0.0111.
        let world = TwoHillsWorld::default();
        let obs = world.render(0.5).unwrap();
        let bound = (-0.5f64 * (0.15f64 / 0.05).powi(2)).exp();
        assert!(bound < 0.0112 && bound > 0.011);
        let max = obs.iter().cloned().fold(f64::MIN, f64::max);
        assert!(max < bound, "max {max} not below {bound}");
    }

    #[test]
    fn out_of_domain_window_is_rejected() {
        let world = TwoHillsWorld::default();
        assert!(world.render(0.05).is_err());
        assert!(world.render(0.95).is_err());
        assert!(world.render(0.1).is_ok());
    }

    #[test]
    fn observation_length_matches_config() {
        let world = TwoHillsWorld::default();
        assert_eq!(world.render(0.25).unwrap().len(), 32);
    }

    proptest! {
        #[test]
        fn symmetry_over_dyadic_grid(k in -102i32..=102) {
            let world = TwoHillsWorld::default();
            let delta = k as f64 / 1024.0;
            let a = world.render(0.25 + delta).unwrap();
            let b = world.render(0.75 + delta).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn observations_are_bounded_by_unit_height(pos in 0.1f64..=0.9) {
            let world = TwoHillsWorld::default();
            let obs = world.render(pos).unwrap();
            prop_assert!(obs.iter().all(|v| *v >= 0.0 && *v <= 1.0));
        }
    }
}
