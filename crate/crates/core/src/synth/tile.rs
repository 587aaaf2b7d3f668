//! Tile rasters: loading, quantization, and procedural generation.
//!
//! A [`TileScene`] is a large 8-bit RGB raster with a ground resolution in
//! meters per pixel. Real tiles arrive either as 8-bit PNG or as a raw
//! 16-bit planar file (see [`load_raw16`] for the layout); 16-bit data is
//! quantized to 8 bits per channel from a percentile intensity range.
//!
//! Tests and the procedural aerial world use [`ProceduralTileConfig`]: a
//! seeded multi-octave value-noise raster, optionally with a duplicated
//! square patch that plants the same landmark in two places.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Raw 16-bit tile container.
///
/// File layout, all integers little-endian:
/// magic `RT16`, then `u32` height, `u32` width, `u32` channels, followed by
/// `channels` planes of `height * width` `u16` samples (planar, row-major).
pub const RAW16_MAGIC: &[u8; 4] = b"RT16";

#[derive(Debug, Clone)]
pub struct Raw16 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Planar storage: channel-major, then row-major.
    pub data: Vec<u16>,
}

pub fn load_raw16(path: &Path) -> Result<Raw16> {
    let mut file = std::fs::File::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open tile '{}': {e}", path.display())))?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)
        .map_err(|e| Error::InvalidInput(format!("tile '{}' truncated: {e}", path.display())))?;
    if &header[0..4] != RAW16_MAGIC {
        return Err(Error::InvalidInput(format!(
            "tile '{}' is not a raw16 tile (bad magic)",
            path.display()
        )));
    }
    let h = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let c = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    if h == 0 || w == 0 || c == 0 || c > 16 {
        return Err(Error::InvalidInput(format!(
            "tile '{}' has implausible dimensions {h}x{w}x{c}",
            path.display()
        )));
    }
    let mut bytes = vec![0u8; h * w * c * 2];
    file.read_exact(&mut bytes)
        .map_err(|e| Error::InvalidInput(format!("tile '{}' truncated: {e}", path.display())))?;
    let data = bytes.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
    Ok(Raw16 { height: h, width: w, channels: c, data })
}

pub fn write_raw16(path: &Path, raw: &Raw16) -> Result<()> {
    let mut out = Vec::with_capacity(16 + raw.data.len() * 2);
    out.extend_from_slice(RAW16_MAGIC);
    out.extend_from_slice(&(raw.height as u32).to_le_bytes());
    out.extend_from_slice(&(raw.width as u32).to_le_bytes());
    out.extend_from_slice(&(raw.channels as u32).to_le_bytes());
    for v in &raw.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Quantizes one 16-bit channel plane to 8 bits: values at or below the
/// `p_low` percentile map to 0, at or above `p_high` to 255, linearly in
/// between. Percentiles use the nearest-rank convention. A constant channel
/// maps to 128.
pub fn quantize_channel(plane: &[u16], p_low: f64, p_high: f64) -> Result<Vec<u8>> {
    if plane.is_empty() {
        return Err(Error::InvalidInput("cannot quantize an empty raster".into()));
    }
    if !(0.0..=100.0).contains(&p_low) || !(0.0..=100.0).contains(&p_high) || p_low > p_high {
        return Err(Error::InvalidConfig(format!(
            "percentile range [{p_low}, {p_high}] is invalid"
        )));
    }
    let mut sorted = plane.to_vec();
    sorted.sort_unstable();
    let rank = |p: f64| -> u16 {
        let n = sorted.len() as f64;
        let idx = ((p / 100.0 * n).ceil() as usize).saturating_sub(1).min(sorted.len() - 1);
        sorted[idx]
    };
    let lo = rank(p_low) as f64;
    let hi = rank(p_high) as f64;
    if hi <= lo {
        return Ok(vec![128; plane.len()]);
    }
    let scale = 255.0 / (hi - lo);
    Ok(plane
        .iter()
        .map(|&v| ((v as f64 - lo) * scale).round().clamp(0.0, 255.0) as u8)
        .collect())
}

/// Quantizes a full 16-bit raster to interleaved 8-bit RGB-like data.
pub fn quantize_tile(raw: &Raw16, p_low: f64, p_high: f64) -> Result<Vec<u8>> {
    let plane = raw.height * raw.width;
    let mut channels = Vec::with_capacity(raw.channels);
    for c in 0..raw.channels {
        channels.push(quantize_channel(&raw.data[c * plane..(c + 1) * plane], p_low, p_high)?);
    }
    let mut out = vec![0u8; plane * raw.channels];
    for i in 0..plane {
        for (c, ch) in channels.iter().enumerate() {
            out[i * raw.channels + c] = ch[i];
        }
    }
    Ok(out)
}

/// Default percentile window for 16-to-8-bit conversion.
pub const DEFAULT_P_LOW: f64 = 1.0;
pub const DEFAULT_P_HIGH: f64 = 99.0;

/// A ground tile: interleaved 8-bit RGB raster plus its ground resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct TileScene {
    pub id: String,
    pub season: String,
    pub meters_per_pixel: f64,
    pub height: usize,
    pub width: usize,
    /// Interleaved RGB, row-major: `raster[(r * width + c) * 3 + ch]`.
    pub raster: Vec<u8>,
}

impl TileScene {
    pub fn new(
        id: impl Into<String>,
        season: impl Into<String>,
        meters_per_pixel: f64,
        height: usize,
        width: usize,
        raster: Vec<u8>,
    ) -> Result<Self> {
        if raster.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "raster has {} bytes, expected {}x{}x3",
                raster.len(),
                height,
                width
            )));
        }
        if !(meters_per_pixel > 0.0) {
            return Err(Error::InvalidConfig("meters_per_pixel must be positive".into()));
        }
        Ok(Self { id: id.into(), season: season.into(), meters_per_pixel, height, width, raster })
    }

    /// Loads an 8-bit PNG tile.
    pub fn from_png(
        path: &Path,
        id: impl Into<String>,
        season: impl Into<String>,
        meters_per_pixel: f64,
    ) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::InvalidInput(format!("cannot open tile '{}': {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(id, season, meters_per_pixel, h as usize, w as usize, img.into_raw())
    }

    /// Loads a raw 16-bit tile, quantizing with the default percentiles.
    /// Tiles with fewer than 3 channels repeat the last channel; extra
    /// channels beyond 3 are dropped.
    pub fn from_raw16(
        path: &Path,
        id: impl Into<String>,
        season: impl Into<String>,
        meters_per_pixel: f64,
    ) -> Result<Self> {
        let raw = load_raw16(path)?;
        let quantized = quantize_tile(&raw, DEFAULT_P_LOW, DEFAULT_P_HIGH)?;
        let plane = raw.height * raw.width;
        let mut raster = vec![0u8; plane * 3];
        for i in 0..plane {
            for ch in 0..3 {
                let src_ch = ch.min(raw.channels - 1);
                raster[i * 3 + ch] = quantized[i * raw.channels + src_ch];
            }
        }
        Self::new(id, season, meters_per_pixel, raw.height, raw.width, raster)
    }

    /// Tile extent in meters, `(width_m, height_m)`.
    pub fn extent_meters(&self) -> (f64, f64) {
        (self.width as f64 * self.meters_per_pixel, self.height as f64 * self.meters_per_pixel)
    }

    /// Bilinear sample of one channel at continuous tile coordinates in
    /// meters, clamped to the raster edge.
    pub fn sample_bilinear(&self, x_m: f64, y_m: f64, channel: usize) -> f64 {
        let u = x_m / self.meters_per_pixel - 0.5;
        let v = y_m / self.meters_per_pixel - 0.5;
        let x0 = u.floor();
        let y0 = v.floor();
        let fx = u - x0;
        let fy = v - y0;
        let clamp_x = |i: isize| -> usize { i.clamp(0, self.width as isize - 1) as usize };
        let clamp_y = |i: isize| -> usize { i.clamp(0, self.height as isize - 1) as usize };
        let (x0i, x1i) = (clamp_x(x0 as isize), clamp_x(x0 as isize + 1));
        let (y0i, y1i) = (clamp_y(y0 as isize), clamp_y(y0 as isize + 1));
        let at = |r: usize, c: usize| self.raster[(r * self.width + c) * 3 + channel] as f64;
        let top = at(y0i, x0i) * (1.0 - fx) + at(y0i, x1i) * fx;
        let bot = at(y1i, x0i) * (1.0 - fx) + at(y1i, x1i) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

/// Seeded procedural tile: multi-octave value noise per channel, optionally
/// with a duplicated square patch to plant the same landmark twice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralTileConfig {
    pub size: usize,
    pub meters_per_pixel: f64,
    pub octaves: u32,
    /// Lattice cell size of the coarsest octave, in pixels.
    pub base_cell: f64,
    pub duplicate_patch: Option<DuplicatePatch>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicatePatch {
    pub size: usize,
    /// Top-left corner (row, col) of the source patch.
    pub src: (usize, usize),
    /// Top-left corner (row, col) of the copy.
    pub dst: (usize, usize),
}

impl Default for ProceduralTileConfig {
    fn default() -> Self {
        Self {
            size: 1024,
            meters_per_pixel: 10.0,
            octaves: 4,
            base_cell: 256.0,
            duplicate_patch: Some(DuplicatePatch {
                size: 256,
                src: (128, 128),
                dst: (600, 560),
            }),
            seed: 0,
        }
    }
}

fn hash2(seed: u64, x: i64, y: i64, channel: u64) -> u64 {
    let mut z = seed
        ^ (x as u64).wrapping_mul(0x9e3779b97f4a7c15)
        ^ (y as u64).wrapping_mul(0xc2b2ae3d27d4eb4f)
        ^ channel.wrapping_mul(0x165667b19e3779f9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn lattice_value(seed: u64, x: i64, y: i64, channel: u64) -> f64 {
    (hash2(seed, x, y, channel) >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Value noise in `[0, 1]` at pixel coordinates.
fn value_noise(seed: u64, x: f64, y: f64, channel: u64) -> f64 {
    let xi = x.floor() as i64;
    let yi = y.floor() as i64;
    let fx = fade(x - xi as f64);
    let fy = fade(y - yi as f64);
    let v00 = lattice_value(seed, xi, yi, channel);
    let v10 = lattice_value(seed, xi + 1, yi, channel);
    let v01 = lattice_value(seed, xi, yi + 1, channel);
    let v11 = lattice_value(seed, xi + 1, yi + 1, channel);
    let top = v00 + (v10 - v00) * fx;
    let bot = v01 + (v11 - v01) * fx;
    top + (bot - top) * fy
}

pub fn generate_procedural_tile(cfg: &ProceduralTileConfig) -> Result<TileScene> {
    if cfg.size == 0 || cfg.octaves == 0 || !(cfg.base_cell > 0.0) {
        return Err(Error::InvalidConfig("procedural tile needs size, octaves, base_cell".into()));
    }
    let n = cfg.size;
    let mut raster = vec![0u8; n * n * 3];
    for r in 0..n {
        for c in 0..n {
            for ch in 0..3u64 {
                let mut amp = 0.5;
                let mut freq = 1.0 / cfg.base_cell;
                let mut acc = 0.0;
                let mut total = 0.0;
                for o in 0..cfg.octaves {
                    let oseed = cfg.seed.wrapping_add(o as u64 * 0x9e3779b97f4a7c15);
                    acc += amp * value_noise(oseed, c as f64 * freq, r as f64 * freq, ch);
                    total += amp;
                    amp *= 0.5;
                    freq *= 2.0;
                }
                raster[(r * n + c) * 3 + ch as usize] = ((acc / total) * 255.0).round() as u8;
            }
        }
    }
    if let Some(p) = &cfg.duplicate_patch {
        if p.src.0 + p.size > n || p.src.1 + p.size > n || p.dst.0 + p.size > n || p.dst.1 + p.size > n {
            return Err(Error::InvalidConfig("duplicate patch leaves the tile".into()));
        }
        for dr in 0..p.size {
            for dc in 0..p.size {
                for ch in 0..3 {
                    let src = ((p.src.0 + dr) * n + p.src.1 + dc) * 3 + ch;
                    let dst = ((p.dst.0 + dr) * n + p.dst.1 + dc) * 3 + ch;
                    raster[dst] = raster[src];
                }
            }
        }
    }
    TileScene::new(
        format!("procedural-{}", cfg.seed),
        "synthetic",
        cfg.meters_per_pixel,
        n,
        n,
        raster,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_full_range_with_extreme_percentiles() {
        // 0th/100th percentiles: min -> 0, max -> 255.
        let plane: Vec<u16> = vec![100, 200, 300, 400, 500];
        let q = quantize_channel(&plane, 0.0, 100.0).unwrap();
        assert_eq!(q[0], 0);
        assert_eq!(q[4], 255);
    }

    #[test]
    fn quantize_constant_channel_gives_128() {
        let q = quantize_channel(&[777; 64], DEFAULT_P_LOW, DEFAULT_P_HIGH).unwrap();
        assert!(q.iter().all(|&v| v == 128));
    }

    #[test]
    fn quantize_linear_ramp_handpicked_points() {
        // Ramp 0..999 over 1000 samples. Nearest-rank percentiles:
        // 1st -> ceil(0.01 * 1000) - 1 = index 9 -> value 9,
        // 99th -> ceil(0.99 * 1000) - 1 = index 989 -> value 989.
        // Affine map: q(v) = round((v - 9) * 255 / 980), clamped.
        let plane: Vec<u16> = (0..1000).collect();
        let q = quantize_channel(&plane, 1.0, 99.0).unwrap();
        let expect = |v: f64| ((v - 9.0) * 255.0 / 980.0).round().clamp(0.0, 255.0) as u8;
        assert_eq!(q[9], 0);
        assert_eq!(q[500], expect(500.0));
        assert_eq!(q[750], expect(750.0));
        assert_eq!(q[989], 255);
        // Below the low percentile clamps to zero.
        assert_eq!(q[0], 0);
    }

    #[test]
    fn raw16_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tile.rt16");
        let raw = Raw16 {
            height: 4,
            width: 3,
            channels: 3,
            data: (0..36).map(|i| (i * 1000) as u16).collect(),
        };
        write_raw16(&path, &raw).unwrap();
        let back = load_raw16(&path).unwrap();
        assert_eq!(back.height, 4);
        assert_eq!(back.width, 3);
        assert_eq!(back.channels, 3);
        assert_eq!(back.data, raw.data);
    }

    #[test]
    fn raw16_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.rt16");
        std::fs::write(&path, b"NOPE0000000000000000").unwrap();
        assert!(load_raw16(&path).is_err());
    }

    #[test]
    fn procedural_tile_is_deterministic() {
        let cfg = ProceduralTileConfig { size: 64, base_cell: 16.0, duplicate_patch: None, ..Default::default() };
        let a = generate_procedural_tile(&cfg).unwrap();
        let b = generate_procedural_tile(&cfg).unwrap();
        assert_eq!(a.raster, b.raster);
        let cfg2 = ProceduralTileConfig { seed: 1, ..cfg };
        let c = generate_procedural_tile(&cfg2).unwrap();
        assert_ne!(a.raster, c.raster);
    }

    #[test]
    fn duplicate_patch_copies_pixels() {
        let cfg = ProceduralTileConfig {
            size: 64,
            base_cell: 16.0,
            duplicate_patch: Some(DuplicatePatch { size: 16, src: (4, 4), dst: (40, 30) }),
            ..Default::default()
        };
        let tile = generate_procedural_tile(&cfg).unwrap();
        for dr in 0..16 {
            for dc in 0..16 {
                for ch in 0..3 {
                    let src = ((4 + dr) * 64 + 4 + dc) * 3 + ch;
                    let dst = ((40 + dr) * 64 + 30 + dc) * 3 + ch;
                    assert_eq!(tile.raster[src], tile.raster[dst]);
                }
            }
        }
    }

    #[test]
    fn bilinear_at_pixel_centers_is_exact() {
        let raster: Vec<u8> = (0..4 * 4 * 3).map(|i| (i % 251) as u8).collect();
        let tile = TileScene::new("t", "none", 10.0, 4, 4, raster.clone()).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let x = (c as f64 + 0.5) * 10.0;
                let y = (r as f64 + 0.5) * 10.0;
                for ch in 0..3 {
                    assert_eq!(tile.sample_bilinear(x, y, ch), raster[(r * 4 + c) * 3 + ch] as f64);
                }
            }
        }
    }
}
