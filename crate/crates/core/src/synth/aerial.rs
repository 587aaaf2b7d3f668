//! Orthographic aerial frame synthesis.
//!
//! A downward-facing camera at altitude `a` with horizontal field of view
//! `fov` images a square ground footprint of side `2 a tan(fov / 2)`,
//! orthographically projected. Poses are sampled uniformly over altitude,
//! yaw, and every position whose rotated footprint lies entirely inside the
//! tile; frames are bilinear resamples of the tile raster, normalized to
//! `[-1, 1]`.

use super::tile::TileScene;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::pose::PosePlanar;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSampleSpec {
    /// Altitude range in meters, inclusive-exclusive for sampling.
    pub altitude_range: (f64, f64),
    /// Horizontal field of view, degrees.
    pub fov_deg: f64,
    /// Output frames are `output_resolution` square.
    pub output_resolution: usize,
}

impl Default for CameraSampleSpec {
    fn default() -> Self {
        Self { altitude_range: (2000.0, 3000.0), fov_deg: 100.0, output_resolution: 64 }
    }
}

impl CameraSampleSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.altitude_range;
        if !(lo > 0.0) || hi < lo {
            return Err(Error::InvalidConfig(format!(
                "altitude range [{lo}, {hi}] must be positive and ordered"
            )));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidConfig(format!(
                "field of view {} must lie in (0, 180) degrees",
                self.fov_deg
            )));
        }
        if self.output_resolution == 0 {
            return Err(Error::InvalidConfig("output resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn max_footprint_side(&self) -> f64 {
        footprint_side(self.altitude_range.1, self.fov_deg)
    }
}

/// Ground footprint side in meters at the given altitude.
pub fn footprint_side(altitude_m: f64, fov_deg: f64) -> f64 {
    2.0 * altitude_m * (fov_deg.to_radians() / 2.0).tan()
}

/// Half-extent of the axis-aligned bounding box of a square of side `side`
/// rotated by `yaw`: the clearance the footprint needs from each tile edge.
pub fn rotated_half_extent(side: f64, yaw_rad: f64) -> f64 {
    side * (yaw_rad.cos().abs() + yaw_rad.sin().abs()) / 2.0
}

/// Draws a pose with altitude and yaw uniform over their ranges and position
/// uniform over the region where the rotated footprint fits inside the tile.
pub fn sample_pose<R: Rng>(
    tile: &TileScene,
    spec: &CameraSampleSpec,
    rng: &mut R,
) -> Result<PosePlanar> {
    spec.validate()?;
    let (w_m, h_m) = tile.extent_meters();
    // Worst case must fit, otherwise the configuration is rejected up front.
    let worst = rotated_half_extent(spec.max_footprint_side(), std::f64::consts::FRAC_PI_4);
    if 2.0 * worst > w_m || 2.0 * worst > h_m {
        return Err(Error::InvalidConfig(format!(
            "tile '{}' ({w_m:.0}x{h_m:.0} m) cannot contain the {:.0} m footprint at any yaw",
            tile.id,
            spec.max_footprint_side()
        )));
    }
    let (alt_lo, alt_hi) = spec.altitude_range;
    let altitude =
        if alt_hi > alt_lo { rng.gen_range(alt_lo..alt_hi) } else { alt_lo };
    let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
    let extent = rotated_half_extent(footprint_side(altitude, spec.fov_deg), yaw);
    let x = rng.gen_range(extent..=w_m - extent);
    let y = rng.gen_range(extent..=h_m - extent);
    Ok(PosePlanar::from_yaw(x, y, altitude, yaw))
}

/// A synthesized frame with its ground truth.
#[derive(Debug, Clone)]
pub struct RenderedSample {
    /// `[3, R, R]` tensor with values in `[-1, 1]`.
    pub image: Tensor,
    pub pose: PosePlanar,
    pub scene_id: String,
    pub seed: u64,
}

/// Renders the orthographic frame for a pose.
///
/// Output pixel `(row, col)` looks at the tile point
/// `center + R(yaw) * ((col + 0.5 - R/2) * pitch, (row + 0.5 - R/2) * pitch)`
/// where `pitch = footprint_side / R` and `R(yaw)` is the standard
/// counterclockwise rotation; channels are sampled bilinearly and mapped to
/// `[-1, 1]` via `v / 127.5 - 1`.
pub fn render_aerial_frame(
    tile: &TileScene,
    pose: &PosePlanar,
    spec: &CameraSampleSpec,
) -> Result<RenderedSample> {
    spec.validate()?;
    let side = footprint_side(pose.altitude, spec.fov_deg);
    let (w_m, h_m) = tile.extent_meters();
    let yaw = pose.heading[1].atan2(pose.heading[0]);
    let extent = rotated_half_extent(side, yaw);
    if pose.x - extent < 0.0 || pose.x + extent > w_m || pose.y - extent < 0.0 || pose.y + extent > h_m
    {
        return Err(Error::InvalidInput(format!(
            "footprint of side {side:.1} m at ({:.1}, {:.1}) yaw {:.3} leaves tile '{}'",
            pose.x, pose.y, yaw, tile.id
        )));
    }
    let res = spec.output_resolution;
    let pitch = side / res as f64;
    let (cos_y, sin_y) = (pose.heading[0], pose.heading[1]);
    let mut data = vec![0.0f64; 3 * res * res];
    let half = res as f64 / 2.0;
    for row in 0..res {
        let dy = (row as f64 + 0.5 - half) * pitch;
        for col in 0..res {
            let dx = (col as f64 + 0.5 - half) * pitch;
            let tx = pose.x + cos_y * dx - sin_y * dy;
            let ty = pose.y + sin_y * dx + cos_y * dy;
            for ch in 0..3 {
                let v = tile.sample_bilinear(tx, ty, ch);
                data[ch * res * res + row * res + col] = v / 127.5 - 1.0;
            }
        }
    }
    Ok(RenderedSample {
        image: Tensor::new(vec![3, res, res], data)?,
        pose: *pose,
        scene_id: tile.id.clone(),
        seed: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn checker_tile(n: usize) -> TileScene {
        let mut raster = vec![0u8; n * n * 3];
        for r in 0..n {
            for c in 0..n {
                let v = (((r * 7 + c * 13) % 251) + ((r / 3) % 5)) as u8;
                for ch in 0..3 {
                    raster[(r * n + c) * 3 + ch] = v.wrapping_add(ch as u8 * 40);
                }
            }
        }
        TileScene::new("checker", "none", 10.0, n, n, raster).unwrap()
    }

    #[test]
    fn footprint_trigonometry() {
        // FOV 100 degrees at 2500 m: side = 2 * 2500 * tan(50 deg)
        // = 5958.8 m, or 595.9 px at 10 m/px.
        let side = footprint_side(2500.0, 100.0);
        assert!((side - 5958.8).abs() < 0.1, "side = {side}");
        assert!((side / 10.0 - 595.9).abs() < 0.05);
    }

    #[test]
    fn rotated_clearance_at_45_degrees_is_side_over_sqrt2() {
        let side = 100.0;
        let e = rotated_half_extent(side, std::f64::consts::FRAC_PI_4);
        assert!((e - side / 2.0f64.sqrt()).abs() < 1e-9);
        // Axis-aligned square needs side/2.
        assert!((rotated_half_extent(side, 0.0) - 50.0).abs() < 1e-12);
    }

    #[test]
    fn yaw_marginal_is_uniform() {
        // Chi-square over 36 bins at 1e5 draws; the 0.999 quantile of
        // chi-square with 35 degrees of freedom is 66.62, so statistic
        // below that accepts uniformity at p > 0.001.
        let tile = checker_tile(64);
        let spec = CameraSampleSpec {
            altitude_range: (100.0, 150.0),
            fov_deg: 100.0,
            output_resolution: 8,
        };
        let mut rng = stream(99, "yaw-uniformity", 0);
        let n = 100_000;
        let mut bins = [0usize; 36];
        for _ in 0..n {
            let pose = sample_pose(&tile, &spec, &mut rng).unwrap();
            let yaw = pose.heading[1].atan2(pose.heading[0]).rem_euclid(std::f64::consts::TAU);
            let bin = ((yaw / std::f64::consts::TAU) * 36.0) as usize % 36;
            bins[bin] += 1;
        }
        let expected = n as f64 / 36.0;
        let stat: f64 = bins.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum();
        assert!(stat < 66.62, "chi-square statistic {stat}");
    }

    #[test]
    fn sampled_poses_always_fit() {
        let tile = checker_tile(128);
        let spec = CameraSampleSpec {
            altitude_range: (150.0, 250.0),
            fov_deg: 100.0,
            output_resolution: 8,
        };
        let mut rng = stream(5, "fit", 0);
        for _ in 0..500 {
            let pose = sample_pose(&tile, &spec, &mut rng).unwrap();
            assert!(render_aerial_frame(&tile, &pose, &spec).is_ok());
        }
    }

    #[test]
    fn oversized_footprint_is_rejected() {
        let tile = checker_tile(32);
        let spec = CameraSampleSpec::default();
        let mut rng = stream(5, "fit", 1);
        assert!(sample_pose(&tile, &spec, &mut rng).is_err());
    }

    /// Geometry where every float in the resample chain is exact: this FOV
    /// computes tan(fov/2) == 1.5 bit-exactly, so altitude 256 gives a
    /// footprint side of exactly 768 m = 64 px at 12 m/px.
    fn exact_identity_geometry() -> (f64, f64, f64) {
        let fov_deg = 2.0 * 1.5f64.atan().to_degrees();
        assert_eq!((fov_deg.to_radians() / 2.0).tan(), 1.5);
        (fov_deg, 256.0, 12.0)
    }

    fn checker_tile_mpp(n: usize, mpp: f64) -> TileScene {
        let mut tile = checker_tile(n);
        tile.meters_per_pixel = mpp;
        tile
    }

    #[test]
    fn identity_resample_equals_raw_crop() {
        // Footprint of exactly 64 tile pixels, axis aligned, integer
        // placement: every output pixel lands on a tile pixel center.
        let (fov_deg, altitude, mpp) = exact_identity_geometry();
        let tile = checker_tile_mpp(128, mpp);
        let res = 64usize;
        let spec = CameraSampleSpec {
            altitude_range: (100.0, 400.0),
            fov_deg,
            output_resolution: res,
        };
        assert_eq!(footprint_side(altitude, fov_deg), res as f64 * mpp);
        let (r0, c0) = (21usize, 35usize);
        let pose = PosePlanar::from_yaw(
            (c0 as f64 + res as f64 / 2.0) * mpp,
            (r0 as f64 + res as f64 / 2.0) * mpp,
            altitude,
            0.0,
        );
        let frame = render_aerial_frame(&tile, &pose, &spec).unwrap();
        for row in 0..res {
            for col in 0..res {
                for ch in 0..3 {
                    let raw = tile.raster[((r0 + row) * 128 + c0 + col) * 3 + ch] as f64;
                    let expect = raw / 127.5 - 1.0;
                    let got = frame.image.data()[ch * res * res + row * res + col];
                    assert_eq!(got, expect, "pixel ({row},{col}) channel {ch}");
                }
            }
        }
    }

    #[test]
    fn yaw_90_equals_rotated_crop() {
        // With the counterclockwise convention, out90(r, c) samples the tile
        // point that yaw-0 sampled at (c, R-1-r); assert against an explicit
        // rotation of the yaw-0 render.
        let tile = checker_tile(128);
        let res = 64usize;
        let spec = CameraSampleSpec {
            altitude_range: (100.0, 400.0),
            fov_deg: 100.0,
            output_resolution: res,
        };
        let side = res as f64 * tile.meters_per_pixel;
        let altitude = side / (2.0 * (spec.fov_deg.to_radians() / 2.0).tan());
        let center_x = 64.0 * tile.meters_per_pixel;
        let center_y = 60.0 * tile.meters_per_pixel;
        let pose0 = PosePlanar::from_yaw(center_x, center_y, altitude, 0.0);
        let pose90 =
            PosePlanar { heading: [0.0, 1.0], ..pose0 };
        let f0 = render_aerial_frame(&tile, &pose0, &spec).unwrap();
        let f90 = render_aerial_frame(&tile, &pose90, &spec).unwrap();
        for row in 0..res {
            for col in 0..res {
                for ch in 0..3 {
                    let got = f90.image.data()[ch * res * res + row * res + col];
                    let expect = f0.image.data()[ch * res * res + col * res + (res - 1 - row)];
                    assert_eq!(got, expect, "pixel ({row},{col}) channel {ch}");
                }
            }
        }
    }

    #[test]
    fn constant_tile_region_renders_constant() {
        let tile = TileScene::new("flat", "none", 10.0, 64, 64, vec![200u8; 64 * 64 * 3]).unwrap();
        let spec = CameraSampleSpec {
            altitude_range: (50.0, 80.0),
            fov_deg: 100.0,
            output_resolution: 16,
        };
        let mut rng = stream(12, "const", 0);
        let pose = sample_pose(&tile, &spec, &mut rng).unwrap();
        let frame = render_aerial_frame(&tile, &pose, &spec).unwrap();
        let expect = 200.0 / 127.5 - 1.0;
        for v in frame.image.data() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rendered_pixels_stay_in_unit_range() {
        let tile = checker_tile(128);
        let spec = CameraSampleSpec {
            altitude_range: (150.0, 350.0),
            fov_deg: 100.0,
            output_resolution: 16,
        };
        let mut rng = stream(13, "range", 0);
        for _ in 0..50 {
            let pose = sample_pose(&tile, &spec, &mut rng).unwrap();
            let frame = render_aerial_frame(&tile, &pose, &spec).unwrap();
            assert!(frame.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let tile = checker_tile(128);
        let spec = CameraSampleSpec {
            altitude_range: (150.0, 350.0),
            fov_deg: 100.0,
            output_resolution: 16,
        };
        let mut rng = stream(14, "det", 0);
        let pose = sample_pose(&tile, &spec, &mut rng).unwrap();
        let a = render_aerial_frame(&tile, &pose, &spec).unwrap();
        let b = render_aerial_frame(&tile, &pose, &spec).unwrap();
        assert_eq!(a.image.data(), b.image.data());
    }
}
