use serde::{Deserialize, Serialize};

use crate::geometry::{compose, relative, PointCloud, RigidTransform};
use crate::skeleton::ArticulationFrame;

use super::MotionError;

/// Where a synthetic clip came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorTag {
    Walk,
    Jump,
    Idle,
}

impl BehaviorTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorTag::Walk => "walk",
            BehaviorTag::Jump => "jump",
            BehaviorTag::Idle => "idle",
        }
    }
}

/// A `T`-frame training sample. [`MotionClip::new`] stores every rotation
/// with w ≥ 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionClip {
    pub g0: RigidTransform,
    /// `dG_1 … dG_T`
    pub deltas: Vec<RigidTransform>,
    /// `A_0 … A_T`
    pub articulations: Vec<ArticulationFrame>,
    pub limb_points: PointCloud,
    pub bg_points: PointCloud,
    pub d_fg: f64,
    pub tag: BehaviorTag,
}

impl MotionClip {
    pub fn new(
        g0: RigidTransform,
        deltas: Vec<RigidTransform>,
        articulations: Vec<ArticulationFrame>,
        limb_points: PointCloud,
        bg_points: PointCloud,
        d_fg: f64,
        tag: BehaviorTag,
    ) -> Result<MotionClip, MotionError> {
        let g0 = g0.canonical();
        let deltas = deltas.iter().map(RigidTransform::canonical).collect();
        let clip = MotionClip { g0, deltas, articulations, limb_points, bg_points, d_fg, tag };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        let t = self.deltas.len();
        if t == 0 {
            return Err(MotionError::Invalid("clip has no frames".into()));
        }
        if self.articulations.len() != t + 1 {
            return Err(MotionError::Invalid(format!(
                "{} articulation frames for {t} deltas",
                self.articulations.len()
            )));
        }
        let joints = self.articulations[0].num_joints();
        if self.articulations.iter().any(|a| a.num_joints() != joints) {
            return Err(MotionError::Invalid("articulation frames disagree on joint count".into()));
        }
        let finite = self.g0.is_finite()
            && self.deltas.iter().all(RigidTransform::is_finite)
            && self.articulations.iter().all(|a| a.to_flat().iter().all(|x| x.is_finite()));
        if !finite {
            return Err(MotionError::Invalid("non-finite pose or articulation".into()));
        }
        if !(self.d_fg >= 0.0) || !self.d_fg.is_finite() {
            return Err(MotionError::Invalid(format!("D_fg must be a finite non-negative number, got {}", self.d_fg)));
        }
        Ok(())
    }

    pub fn t_frames(&self) -> usize {
        self.deltas.len()
    }

    pub fn num_joints(&self) -> usize {
        self.articulations[0].num_joints()
    }

    /// `G_0 … G_T`.
    pub fn trajectory(&self) -> Vec<RigidTransform> {
        integrate_trajectory(&self.g0, &self.deltas)
    }
}

/// `G_t = G_{t-1} ∘ dG_t`, starting from `g0`; returns `T + 1` poses.
pub fn integrate_trajectory(g0: &RigidTransform, deltas: &[RigidTransform]) -> Vec<RigidTransform> {
    let mut out = Vec::with_capacity(deltas.len() + 1);
    out.push(*g0);
    for d in deltas {
        let prev = *out.last().unwrap();
        out.push(compose(&prev, d));
    }
    out
}

/// `dG_t = G_{t-1}⁻¹ ∘ G_t` for consecutive poses.
pub fn extract_deltas(trajectory: &[RigidTransform]) -> Vec<RigidTransform> {
    trajectory.windows(2).map(|w| relative(&w[0], &w[1])).collect()
}
