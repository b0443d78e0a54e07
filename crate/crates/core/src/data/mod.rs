//! Synthetic scenes, a procedural quadruped, kinematic motion, clip sampling
//! and the JSON-lines dataset format.

mod clips;
mod io;
mod motion;
pub mod quadruped;
mod scene;
mod synth;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::motion_vae::MotionError;
use crate::skeleton::SkeletonError;

pub use clips::{augment, augment_with, normalize_record, random_augmentation, sample_clip, DEFAULT_AUGMENT_SHIFT};
pub use io::{read_dataset, read_dataset_file, write_dataset, write_dataset_file, DATASET_FORMAT, DATASET_VERSION};
pub use motion::{generate_motion, random_start, Behavior, MotionRecord, MotionSpec, Start};
pub use quadruped::{Quadruped, QuadrupedSpec};
pub use scene::{generate_scene, Cuboid, Scene, SceneSpec};
pub use synth::{synthesize, DatasetSpec, SyntheticDataset};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("jump of height {gap:.3} exceeds the maximum of {max:.3}")]
    UnreachableJump { gap: f64, max: f64 },
    #[error("record has {len} frames, a clip needs {need}")]
    RecordTooShort { len: usize, need: usize },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("dataset version {found}, expected {expected}")]
    Version { found: u64, expected: u64 },
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
