//! Dataset assembly: worlds, split streams, manifests, materialization.
//!
//! Samples are generated online: sample `i` of a split is a pure function of
//! `(dataset seed, split, i)`, so streams never need materializing and two
//! runs with one seed see bit-identical data. Ground-truth targets are
//! derivable without rendering, which keeps whitener fitting cheap.
//!
//! Split policy: multi-tile datasets draw train and test from disjoint tile
//! sets and every declared season must appear on both sides. Single-scene
//! worlds (two-hills, one procedural tile) share the scene and keep the
//! splits disjoint at the sample level through split-tagged seeds.

use super::aerial::{render_aerial_frame, sample_pose, CameraSampleSpec};
use super::tile::{generate_procedural_tile, ProceduralTileConfig, TileScene};
use super::two_hills::TwoHillsWorld;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::EncoderConfig;
use crate::pose::PoseLayout;
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoHillsDatasetConfig {
    #[serde(default)]
    pub world: TwoHillsWorld,
    /// Camera positions are drawn uniformly within this offset of a hill
    /// center, so every window frames exactly one hill and is ambiguous.
    #[serde(default = "default_max_offset")]
    pub max_offset: f64,
}

fn default_max_offset() -> f64 {
    0.1
}

impl Default for TwoHillsDatasetConfig {
    fn default() -> Self {
        Self { world: TwoHillsWorld::default(), max_offset: default_max_offset() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WorldConfig {
    TwoHills(TwoHillsDatasetConfig),
    AerialProcedural(ProceduralTileConfig),
    AerialTiles { manifest: PathBuf },
}

impl WorldConfig {
    pub fn layout(&self) -> PoseLayout {
        match self {
            WorldConfig::TwoHills(_) => PoseLayout::Scalar1D,
            _ => PoseLayout::PlanarAerial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub world: WorldConfig,
    #[serde(default)]
    pub camera: CameraSampleSpec,
    pub train_samples: u64,
    pub test_samples: u64,
    pub seed: u64,
}

/// Input manifest for file-backed tile datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileManifest {
    pub version: u32,
    pub tiles: Vec<TileEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileEntry {
    pub path: String,
    #[serde(default)]
    pub id: Option<String>,
    pub meters_per_pixel: f64,
    pub season: String,
    /// "train" or "test".
    pub split: String,
}

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(&self) -> &'static str {
        match self {
            Split::Train => "sample-train",
            Split::Test => "sample-test",
        }
    }

    pub fn dir_name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug)]
enum World {
    TwoHills(TwoHillsDatasetConfig),
    Aerial { train_tiles: Vec<TileScene>, test_tiles: Vec<TileScene> },
}

/// One observation with its ground truth and provenance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub index: u64,
    /// `[32]` terrain vector or `[3, R, R]` image.
    pub features: Tensor,
    /// Raw (unwhitened) target vector in layout order.
    pub target: Vec<f64>,
    pub scene_id: String,
    pub seed: u64,
}

/// A fully validated dataset; cheap to sample from any number of times.
#[derive(Debug)]
pub struct Dataset {
    world: World,
    camera: CameraSampleSpec,
    layout: PoseLayout,
    train_samples: u64,
    test_samples: u64,
    seed: u64,
}

impl Dataset {
    pub fn build(cfg: &DatasetConfig) -> Result<Self> {
        if cfg.train_samples == 0 || cfg.test_samples == 0 {
            return Err(Error::InvalidConfig("train and test sample counts must be positive".into()));
        }
        let layout = cfg.world.layout();
        let world = match &cfg.world {
            WorldConfig::TwoHills(th) => {
                if !(th.max_offset > 0.0)
                    || th.world.hill_centers[0] - th.max_offset - th.world.window_half_width < 0.0
                    || th.world.hill_centers[1] + th.max_offset + th.world.window_half_width > 1.0
                {
                    return Err(Error::InvalidConfig(
                        "two-hills offsets push observation windows outside the domain".into(),
                    ));
                }
                World::TwoHills(th.clone())
            }
            WorldConfig::AerialProcedural(p) => {
                cfg.camera.validate()?;
                let tile = generate_procedural_tile(p)?;
                validate_tile_fits(&tile, &cfg.camera)?;
                // Single shared scene: the splits stay disjoint at the
                // sample level through split-tagged seeds.
                World::Aerial { train_tiles: vec![tile.clone()], test_tiles: vec![tile] }
            }
            WorldConfig::AerialTiles { manifest } => {
                cfg.camera.validate()?;
                let (train_tiles, test_tiles) = load_manifest_tiles(manifest)?;
                validate_split_policy(&train_tiles, &test_tiles)?;
                for t in train_tiles.iter().chain(&test_tiles) {
                    validate_tile_fits(t, &cfg.camera)?;
                }
                World::Aerial { train_tiles, test_tiles }
            }
        };
        Ok(Self {
            world,
            camera: cfg.camera.clone(),
            layout,
            train_samples: cfg.train_samples,
            test_samples: cfg.test_samples,
            seed: cfg.seed,
        })
    }

    pub fn layout(&self) -> PoseLayout {
        self.layout
    }

    pub fn camera(&self) -> &CameraSampleSpec {
        &self.camera
    }

    /// Default hint noise for this world's axes: 0.3 everywhere for the
    /// 1-D world, 0.2 spatial / 0.5 angular for aerial poses.
    pub fn default_hint_sigma(&self) -> Vec<f64> {
        match self.layout {
            PoseLayout::Scalar1D => vec![0.3],
            PoseLayout::PlanarAerial => vec![0.2, 0.2, 0.2, 0.5, 0.5],
            PoseLayout::SixDof => vec![0.3; 7],
        }
    }

    /// Encoder matching this world's observation shape.
    pub fn default_encoder_config(&self) -> EncoderConfig {
        match &self.world {
            World::TwoHills(th) => {
                EncoderConfig::default_vector(th.world.samples_per_observation)
            }
            World::Aerial { .. } => {
                let mut cfg = EncoderConfig::default_conv();
                if let EncoderConfig::Conv(c) = &mut cfg {
                    c.image_size = self.camera.output_resolution;
                }
                cfg
            }
        }
    }

    pub fn train(&self) -> TrainStream<'_> {
        TrainStream(StreamCore { ds: self, split: Split::Train, n: self.train_samples })
    }

    pub fn test(&self) -> TestStream<'_> {
        TestStream(StreamCore { ds: self, split: Split::Test, n: self.test_samples })
    }

    fn tiles(&self, split: Split) -> &[TileScene] {
        match &self.world {
            World::TwoHills(_) => &[],
            World::Aerial { train_tiles, test_tiles, .. } => match split {
                Split::Train => train_tiles,
                Split::Test => test_tiles,
            },
        }
    }

    /// Scene choice and ground truth for a sample, without rendering.
    fn draw(&self, split: Split, index: u64) -> Result<(usize, Vec<f64>, u64)> {
        let seed = rng::derive_seed(self.seed, split.tag(), index);
        let mut rng = rng::stream(self.seed, split.tag(), index);
        match &self.world {
            World::TwoHills(th) => {
                let hill = rng.gen_range(0..2usize);
                let delta = rng.gen_range(-th.max_offset..=th.max_offset);
                let position = th.world.hill_centers[hill] + delta;
                Ok((0, vec![position], seed))
            }
            World::Aerial { .. } => {
                let tiles = self.tiles(split);
                let tile_idx = rng.gen_range(0..tiles.len());
                let pose = sample_pose(&tiles[tile_idx], &self.camera, &mut rng)?;
                Ok((tile_idx, pose.to_target(), seed))
            }
        }
    }

    fn sample(&self, split: Split, index: u64) -> Result<Sample> {
        let (scene_idx, target, seed) = self.draw(split, index)?;
        match &self.world {
            World::TwoHills(th) => {
                let obs = th.world.render(target[0])?;
                Ok(Sample {
                    index,
                    features: Tensor::from_vec(obs),
                    target,
                    scene_id: "two-hills".into(),
                    seed,
                })
            }
            World::Aerial { .. } => {
                let tile = &self.tiles(split)[scene_idx];
                let pose = crate::pose::PosePlanar {
                    x: target[0],
                    y: target[1],
                    altitude: target[2],
                    heading: [target[3], target[4]],
                };
                let frame = render_aerial_frame(tile, &pose, &self.camera)?;
                Ok(Sample {
                    index,
                    features: frame.image,
                    target,
                    scene_id: tile.id.clone(),
                    seed,
                })
            }
        }
    }
}

struct StreamCore<'a> {
    ds: &'a Dataset,
    split: Split,
    n: u64,
}

impl StreamCore<'_> {
    fn len(&self) -> u64 {
        self.n
    }

    fn sample(&self, index: u64) -> Result<Sample> {
        self.ds.sample(self.split, index % self.n.max(1))
    }

    fn target(&self, index: u64) -> Result<Vec<f64>> {
        Ok(self.ds.draw(self.split, index % self.n.max(1))?.1)
    }
}

/// Training split. Whitener fitting accepts only this type, so fitting on
/// test data is unrepresentable.
pub struct TrainStream<'a>(StreamCore<'a>);

/// Test split.
pub struct TestStream<'a>(StreamCore<'a>);

impl TrainStream<'_> {
    pub fn len(&self) -> u64 {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn sample(&self, index: u64) -> Result<Sample> {
        self.0.sample(index)
    }

    pub fn target(&self, index: u64) -> Result<Vec<f64>> {
        self.0.target(index)
    }
}

impl TestStream<'_> {
    pub fn len(&self) -> u64 {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn sample(&self, index: u64) -> Result<Sample> {
        self.0.sample(index)
    }

    pub fn target(&self, index: u64) -> Result<Vec<f64>> {
        self.0.target(index)
    }
}

/// Stacks sample features into a batch tensor: `[b, d]` for vector
/// observations, `[b, c, h, w]` for images.
pub fn stack_features(samples: &[Sample]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot stack an empty batch".into()))?;
    let feat_shape = first.features.shape().to_vec();
    let mut shape = vec![samples.len()];
    shape.extend(&feat_shape);
    let mut data = Vec::with_capacity(samples.len() * first.features.len());
    for s in samples {
        if s.features.shape() != feat_shape.as_slice() {
            return Err(Error::ShapeMismatch("batch features have mixed shapes".into()));
        }
        data.extend_from_slice(s.features.data());
    }
    Tensor::new(shape, data)
}

/// A single sample's features with a leading batch axis of one.
pub fn single_features(sample: &Sample) -> Result<Tensor> {
    stack_features(std::slice::from_ref(sample))
}

fn validate_tile_fits(tile: &TileScene, camera: &CameraSampleSpec) -> Result<()> {
    let worst = super::aerial::rotated_half_extent(
        camera.max_footprint_side(),
        std::f64::consts::FRAC_PI_4,
    );
    let (w_m, h_m) = tile.extent_meters();
    if 2.0 * worst > w_m || 2.0 * worst > h_m {
        return Err(Error::InvalidConfig(format!(
            "tile '{}' ({w_m:.0}x{h_m:.0} m) is smaller than the worst-case footprint {:.0} m",
            tile.id,
            2.0 * worst
        )));
    }
    Ok(())
}

fn validate_split_policy(train: &[TileScene], test: &[TileScene]) -> Result<()> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Manifest("both splits need at least one tile".into()));
    }
    for t in train {
        if test.iter().any(|u| u.id == t.id) {
            return Err(Error::Manifest(format!(
                "tile '{}' appears in both train and test splits",
                t.id
            )));
        }
    }
    let seasons: std::collections::BTreeSet<&str> = train
        .iter()
        .chain(test)
        .map(|t| t.season.as_str())
        .collect();
    for season in seasons {
        let in_train = train.iter().any(|t| t.season == season);
        let in_test = test.iter().any(|t| t.season == season);
        if !in_train || !in_test {
            return Err(Error::Manifest(format!(
                "season '{season}' is not represented in both splits"
            )));
        }
    }
    Ok(())
}

fn load_manifest_tiles(path: &Path) -> Result<(Vec<TileScene>, Vec<TileScene>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Manifest(format!("cannot read '{}': {e}", path.display())))?;
    let manifest: TileManifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("'{}': {e}", path.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Manifest(format!(
            "manifest version {} unsupported (expected {MANIFEST_VERSION})",
            manifest.version
        )));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for entry in &manifest.tiles {
        let tile_path = base.join(&entry.path);
        if !tile_path.exists() {
            return Err(Error::Manifest(format!(
                "tile file '{}' does not exist",
                tile_path.display()
            )));
        }
        let id = entry.id.clone().unwrap_or_else(|| {
            tile_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        });
        let is_raw = tile_path.extension().map(|e| e == "rt16").unwrap_or(false);
        let tile = if is_raw {
            TileScene::from_raw16(&tile_path, id, &entry.season, entry.meters_per_pixel)?
        } else {
            TileScene::from_png(&tile_path, id, &entry.season, entry.meters_per_pixel)?
        };
        match entry.split.as_str() {
            "train" => train.push(tile),
            "test" => test.push(tile),
            other => {
                return Err(Error::Manifest(format!(
                    "tile '{}' has unknown split '{other}'",
                    entry.path
                )))
            }
        }
    }
    Ok((train, test))
}

// ---- materialization ----------------------------------------------------

/// Manifest written next to materialized datasets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedManifest {
    pub version: u32,
    pub seed: u64,
    pub world: WorldConfig,
    pub camera: CameraSampleSpec,
    pub counts: SplitCounts,
    pub layout: PoseLayout,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: u64,
    pub test: u64,
}

/// Writes the dataset to disk: a manifest, per-split poses tables, and
/// observations (CSV rows for the 1-D world, PNG frames for aerial worlds).
/// Deterministic: identical config and seed produce byte-identical files.
pub fn materialize(ds: &Dataset, cfg: &DatasetConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let manifest = GeneratedManifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        world: cfg.world.clone(),
        camera: cfg.camera.clone(),
        counts: SplitCounts { train: cfg.train_samples, test: cfg.test_samples },
        layout: ds.layout(),
    };
    let mut manifest_json = serde_json::to_string_pretty(&manifest)?;
    manifest_json.push('\n');
    std::fs::write(out_dir.join("manifest.json"), manifest_json)?;

    for (split, n) in [(Split::Train, cfg.train_samples), (Split::Test, cfg.test_samples)] {
        let mut poses = String::new();
        let image_dir = out_dir.join(split.dir_name());
        let vector_world = matches!(ds.layout(), PoseLayout::Scalar1D);
        let mut observations = String::new();
        if vector_world {
            poses.push_str("index,x,tile,seed\n");
        } else {
            poses.push_str("index,x,y,altitude,yaw_cos,yaw_sin,tile,seed\n");
            std::fs::create_dir_all(&image_dir)?;
        }
        for i in 0..n {
            let sample = ds.sample(split, i)?;
            if vector_world {
                let _ = write!(observations, "{i}");
                for v in sample.features.data() {
                    let _ = write!(observations, ",{v}");
                }
                observations.push('\n');
                let _ = writeln!(poses, "{i},{},{},{}", sample.target[0], sample.scene_id, sample.seed);
            } else {
                let t = &sample.target;
                let _ = writeln!(
                    poses,
                    "{i},{},{},{},{},{},{},{}",
                    t[0], t[1], t[2], t[3], t[4], sample.scene_id, sample.seed
                );
                write_frame_png(&image_dir.join(format!("{i:06}.png")), &sample.features)?;
            }
        }
        std::fs::write(out_dir.join(format!("poses_{}.csv", split.dir_name())), poses)?;
        if vector_world {
            std::fs::write(
                out_dir.join(format!("observations_{}.csv", split.dir_name())),
                observations,
            )?;
        }
    }
    Ok(())
}

fn write_frame_png(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::ShapeMismatch(format!("expected [3,h,w] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let mut buf = vec![0u8; plane * 3];
    for i in 0..plane {
        for ch in 0..3 {
            let v = image.data()[ch * plane + i];
            buf[i * 3 + ch] = ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        }
    }
    let img: image::RgbImage = image::ImageBuffer::from_raw(w as u32, h as u32, buf)
        .expect("buffer sized from shape");
    img.save(path).map_err(|e| Error::Image(format!("writing '{}': {e}", path.display())))?;
    Ok(())
}
