//! Trajectory and articulation VAEs: conditioning, losses, training and
//! sampling.

mod clip;
mod config;
mod generate;
mod losses;
mod model;
mod train;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::encoders::EncoderError;
use crate::geometry::GeometryError;
use crate::skeleton::SkeletonError;

pub use clip::{extract_deltas, integrate_trajectory, BehaviorTag, MotionClip};
pub use config::{Config, ModelConfig, Normalizers, TrainConfig};
pub use generate::{generate, GeneratedMotion};
pub use losses::{
    artic_recon_loss, clip_objective, floating_loss, traj_recon_loss, ClipNoise, ClipObjective, ClipReference,
    LossBreakdown, LossWeights, LOSS_CSV_HEADER,
};
pub use model::{DecodedTraj, MotionModel, SceneInputs, ARTIC_FREQS};
pub use train::{fit_normalizers, EpochRecord, PreparedClip, Trainer};

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("invalid clip: {0}")]
    Invalid(String),
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Schema(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[cfg(test)]
pub(crate) mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::{PointCloud, RigidTransform, UnitQuat, Vec3};
    use crate::skeleton::ArticulationFrame;

    pub fn small_config() -> ModelConfig {
        ModelConfig {
            t_frames: 6,
            joints: 2,
            latent_g: 4,
            latent_a: 3,
            embed: 8,
            hidden: 8,
            n_fg: 10,
            n_bg: 40,
            use_dfg: true,
            norms: Normalizers::identity(2),
        }
    }

    /// Random walk-like clip over a flat grid floor at y = 0.
    pub fn toy_clip(cfg: &ModelConfig, seed: u64) -> MotionClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |s: f64| rng.random_range(-s..s);
        let g0 = RigidTransform::new(UnitQuat::from_yaw(r(3.0)), Vec3::new(r(0.3), 0.2 + r(0.05), r(0.3)));
        let deltas = (0..cfg.t_frames)
            .map(|_| {
                RigidTransform::new(
                    UnitQuat::from_axis_angle(Vec3::new(r(0.05), r(0.1), r(0.05))),
                    Vec3::new(r(0.02), r(0.01), 0.03 + r(0.01)),
                )
            })
            .collect();
        let articulations = (0..=cfg.t_frames)
            .map(|_| ArticulationFrame::new((0..cfg.joints).map(|_| Vec3::new(r(0.5), r(0.5), r(0.5))).collect()))
            .collect();
        let limb = (0..cfg.n_fg).map(|_| Vec3::new(r(0.2), -0.15 + r(0.05), r(0.2))).collect();
        let side = (cfg.n_bg as f64).sqrt().ceil() as usize;
        let bg = (0..cfg.n_bg)
            .map(|i| Vec3::new((i % side) as f64 * 0.2 - 0.587, 0.0, (i / side) as f64 * 0.2 - 0.613))
            .collect();
        MotionClip::new(
            g0,
            deltas,
            articulations,
            PointCloud::new(limb).unwrap(),
            PointCloud::new(bg).unwrap(),
            0.2 + r(0.05),
            BehaviorTag::Walk,
        )
        .unwrap()
    }
}
