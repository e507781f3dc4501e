//! The stereo + LIDAR fusion network and its monocular ablation.

mod checkpoint;
mod config;
mod model;
mod params;
mod verify;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use config::{LidarBranchKind, ModelConfig, Variant, DESK_DEPTH_CAP_M};
pub use model::{
    encoder, forward, fuse_and_decode, lidar_branch, prepare_input, psp_module, siamese_extract, soft_argmax,
    transform_layer, NetInput, NetOutput, SiameseFeatures, Skips,
};
pub use params::{init_tensor, Builder, Init, ParamStore};
pub use verify::{end_to_end_gradcheck, random_problem, tiny_config};
