use crate::geometry::{center_distance, sample_surface, PointCloud, RigidTransform, TriMesh};
use crate::skeleton::{limb_vertices, pose_mesh, ArticulationFrame, Skeleton};

use crate::mix_seed as mix;
use super::{MotionError, MotionModel, SceneInputs};

/// A sampled motion and the inputs it was conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedMotion {
    /// `G_0 … G_T`
    pub trajectory: Vec<RigidTransform>,
    /// `A_0 … A_T`
    pub articulations: Vec<ArticulationFrame>,
    pub limb_points: PointCloud,
    pub bg_points: PointCloud,
    pub d_fg: f64,
}

/// Samples a `frames`-step motion of `fg` in `bg` starting at `(g0, a0)`.
///
/// The trajectory is drawn first; the articulation is then conditioned on it.
pub fn generate(
    model: &MotionModel,
    fg: &TriMesh,
    skel: &Skeleton,
    bg: &TriMesh,
    g0: &RigidTransform,
    a0: &ArticulationFrame,
    frames: usize,
    seed: u64,
) -> Result<GeneratedMotion, MotionError> {
    if frames == 0 {
        return Err(MotionError::Invalid("frames must be positive".into()));
    }
    if !g0.is_finite() {
        return Err(MotionError::Invalid("start pose is not finite".into()));
    }
    if skel.num_joints() != model.config.joints {
        return Err(MotionError::Invalid(format!(
            "skeleton has {} joints, model expects {}",
            skel.num_joints(),
            model.config.joints
        )));
    }
    let limb_points = limb_vertices(fg, skel, model.config.n_fg)?;
    let bg_points = sample_surface(bg, model.config.n_bg, mix(seed, 0x6267, 0))?;
    let start = pose_mesh(fg, skel, a0, g0)?;
    let d_fg = center_distance(&start, &bg_points)?;
    let scene = SceneInputs { g0: *g0, limb: limb_points.points(), bg: bg_points.points(), d_fg };
    let trajectory = model.sample_trajectory(&scene, frames, mix(seed, 0x7472, 0))?;
    let articulations = model.sample_articulation(&trajectory, a0, mix(seed, 0x6172, 0))?;
    Ok(GeneratedMotion { trajectory, articulations, limb_points, bg_points, d_fg })
}
