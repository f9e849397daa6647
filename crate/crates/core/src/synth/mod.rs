//! Procedural off-road worlds and expert demonstrations sampled from a known
//! ground-truth reward.

mod balance;
mod dataset;
mod demo;
mod terrain;

pub use balance::{apportion, balance_dataset, balance_indices, TagFractions};
pub use dataset::{
    decode_record, encode_record, generate_dataset, read_dataset, read_manifest, read_record,
    write_dataset, Dataset, DatasetConfig, Manifest, RecordEntry,
};
pub use demo::{
    augment_rotations, classify, draw_start, expert_policy, generate_demonstration,
    ground_truth_reward, synthesize_past, DemoRequest, DemoStart, Demonstration, GroundTruthConfig,
    ScenarioTag,
};
pub use terrain::{
    generate_layout, generate_world, paint_world, straight_layout, t_junction_layout,
    world_from_layout, Palette, Palettes, SyntheticWorld, TerrainClass, TrailMask, WorldSpec,
};
