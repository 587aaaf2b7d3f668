//! Synthetic worlds and dataset assembly.

mod aerial;
mod dataset;
mod tile;
mod two_hills;

pub use aerial::{
    footprint_side, render_aerial_frame, rotated_half_extent, sample_pose, CameraSampleSpec,
    RenderedSample,
};
pub use dataset::{
    materialize, single_features, stack_features, Dataset, DatasetConfig, GeneratedManifest,
    Sample, Split, SplitCounts, TestStream, TileEntry, TileManifest, TrainStream,
    TwoHillsDatasetConfig, WorldConfig, MANIFEST_VERSION,
};
pub use tile::{
    generate_procedural_tile, load_raw16, quantize_channel, quantize_tile, write_raw16,
    DuplicatePatch, ProceduralTileConfig, Raw16, TileScene, DEFAULT_P_HIGH, DEFAULT_P_LOW,
    RAW16_MAGIC,
};
pub use two_hills::TwoHillsWorld;
