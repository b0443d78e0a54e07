//! Trajectory reconstruction error, sample diversity and floating error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::geometry::{chamfer_transformed, GeometryError, NnIndex, RigidTransform};
use crate::mix_seed;
use crate::motion_vae::{BehaviorTag, MotionClip, MotionError, MotionModel, SceneInputs};

pub const DEFAULT_SAMPLES: usize = 8;
pub const REPORT_CSV_HEADER: &str = "recon,diversity,floating_err,n,clips";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("diversity needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("every frame was excluded from the floating error")]
    AllFramesExcluded,
    #[error("trajectory has {got} poses, clip has {want}")]
    Length { got: usize, want: usize },
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Anything that reconstructs and samples clip trajectories.
pub trait TrajectoryModel: Sync {
    /// `G_0 … G_T` decoded from the posterior mean.
    fn reconstruct(&self, clip: &MotionClip) -> Result<Vec<RigidTransform>, MetricsError>;
    /// `G_0 … G_T` decoded from a prior sample, conditioned on the clip's scene.
    fn sample(&self, clip: &MotionClip, seed: u64) -> Result<Vec<RigidTransform>, MetricsError>;
}

impl TrajectoryModel for MotionModel {
    fn reconstruct(&self, clip: &MotionClip) -> Result<Vec<RigidTransform>, MetricsError> {
        Ok(self.reconstruct_trajectory(clip)?)
    }

    fn sample(&self, clip: &MotionClip, seed: u64) -> Result<Vec<RigidTransform>, MetricsError> {
        Ok(self.sample_trajectory(&SceneInputs::of_clip(clip), clip.t_frames(), seed)?)
    }
}

/// Returns the ground truth for every query.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleCopy;

impl TrajectoryModel for OracleCopy {
    fn reconstruct(&self, clip: &MotionClip) -> Result<Vec<RigidTransform>, MetricsError> {
        Ok(clip.trajectory())
    }

    fn sample(&self, clip: &MotionClip, _seed: u64) -> Result<Vec<RigidTransform>, MetricsError> {
        Ok(clip.trajectory())
    }
}

/// A trained model whose samples always decode the zero latent.
#[derive(Clone, Copy, Debug)]
pub struct ZeroLatent<'a>(pub &'a MotionModel);

impl TrajectoryModel for ZeroLatent<'_> {
    fn reconstruct(&self, clip: &MotionClip) -> Result<Vec<RigidTransform>, MetricsError> {
        self.0.reconstruct(clip)
    }

    fn sample(&self, clip: &MotionClip, _seed: u64) -> Result<Vec<RigidTransform>, MetricsError> {
        let z = Tensor::zeros(vec![1, self.0.config.latent_g]);
        Ok(self.0.decode_trajectory(&SceneInputs::of_clip(clip), clip.t_frames(), z)?)
    }
}

/// Sum over frames of the L1 distance between pose 7-vectors, rotations in
/// the w ≥ 0 hemisphere.
pub fn trajectory_l1(a: &[RigidTransform], b: &[RigidTransform]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::Length { got: a.len(), want: b.len() });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| x.to_array7().iter().zip(y.to_array7()).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .sum())
}

pub fn recon_error(model: &impl TrajectoryModel, clip: &MotionClip) -> Result<f64, MetricsError> {
    trajectory_l1(&model.reconstruct(clip)?, &clip.trajectory())
}

fn samples(model: &impl TrajectoryModel, clip: &MotionClip, n: usize, seed: u64) -> Result<Vec<Vec<RigidTransform>>, MetricsError> {
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    (0..n).map(|i| model.sample(clip, mix_seed(seed, i as u64, 0x6469_76))).collect()
}

/// Mean distance of `n` sampled trajectories to the ground truth.
pub fn diversity(model: &impl TrajectoryModel, clip: &MotionClip, n: usize, seed: u64) -> Result<f64, MetricsError> {
    let gt = clip.trajectory();
    let s = samples(model, clip, n, seed)?;
    mean_distance_to(&s, &gt)
}

fn mean_distance_to(samples: &[Vec<RigidTransform>], gt: &[RigidTransform]) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    for s in samples {
        sum += trajectory_l1(s, gt)?;
    }
    Ok(sum / samples.len() as f64)
}

/// Mean pairwise distance between `n` sampled trajectories; zero when the
/// samples ignore the latent.
pub fn sample_spread(model: &impl TrajectoryModel, clip: &MotionClip, n: usize, seed: u64) -> Result<f64, MetricsError> {
    let s = samples(model, clip, n, seed)?;
    let mut sum = 0.0;
    let mut pairs = 0.0;
    for i in 0..s.len() {
        for j in i + 1..s.len() {
            sum += trajectory_l1(&s[i], &s[j])?;
            pairs += 1.0;
        }
    }
    Ok(sum / pairs)
}

/// Per-frame mean distance from the placed limb points to the background.
fn frame_floating(trajectory: &[RigidTransform], clip: &MotionClip, index: &NnIndex) -> Vec<f64> {
    trajectory.iter().map(|g| chamfer_transformed(g, clip.limb_points.points(), index)).collect()
}

/// Mean over frames of the one-sided chamfer distance from `G_t · P_limb` to
/// `P_bg`. With `exclude_jumps`, a jump-tagged clip has no frames left.
pub fn floating_error(trajectory: &[RigidTransform], clip: &MotionClip, exclude_jumps: bool) -> Result<f64, MetricsError> {
    if exclude_jumps && clip.tag == BehaviorTag::Jump {
        return Err(MetricsError::AllFramesExcluded);
    }
    if trajectory.is_empty() {
        return Err(MetricsError::AllFramesExcluded);
    }
    if clip.limb_points.is_empty() || clip.bg_points.is_empty() {
        return Err(GeometryError::EmptyCloud.into());
    }
    let index = NnIndex::build(&clip.bg_points);
    let f = frame_floating(trajectory, clip, &index);
    Ok(f.iter().sum::<f64>() / f.len() as f64)
}

/// Settings of [`evaluate_suite`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// samples per clip for diversity and floating error
    pub n: usize,
    pub seed: u64,
    pub exclude_jumps: bool,
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n: DEFAULT_SAMPLES, seed: 0, exclude_jumps: true, threads: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// mean over clips of the summed per-frame L1
    pub recon: f64,
    pub diversity: f64,
    /// mean over retained frames of prior samples
    pub floating_err: f64,
    pub n: usize,
    pub clips: usize,
    pub t_frames: usize,
    pub seed: u64,
    pub exclude_jumps: bool,
}

impl EvalReport {
    pub fn csv(&self) -> String {
        format!("{REPORT_CSV_HEADER}\n{},{},{},{},{}\n", self.recon, self.diversity, self.floating_err, self.n, self.clips)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<EvalReport, serde_json::Error> {
        serde_json::from_str(text)
    }
}

struct ClipStats {
    recon: f64,
    diversity: f64,
    /// sum and count of retained floating frames
    floating: (f64, usize),
}

fn clip_stats(model: &impl TrajectoryModel, clip: &MotionClip, k: usize, cfg: &EvalConfig) -> Result<ClipStats, MetricsError> {
    let gt = clip.trajectory();
    let recon = trajectory_l1(&model.reconstruct(clip)?, &gt)?;
    let s = samples(model, clip, cfg.n, mix_seed(cfg.seed, k as u64, 0))?;
    let diversity = mean_distance_to(&s, &gt)?;
    let mut floating = (0.0, 0);
    if !(cfg.exclude_jumps && clip.tag == BehaviorTag::Jump) {
        let index = NnIndex::build(&clip.bg_points);
        for traj in &s {
            let f = frame_floating(traj, clip, &index);
            floating.0 += f.iter().sum::<f64>();
            floating.1 += f.len();
        }
    }
    Ok(ClipStats { recon, diversity, floating })
}

/// All three metrics over a dataset. Clip `k` draws its samples from
/// `(seed, k)`, so the report does not depend on `threads`.
pub fn evaluate_suite(model: &impl TrajectoryModel, clips: &[MotionClip], cfg: &EvalConfig) -> Result<EvalReport, MetricsError> {
    if clips.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    if cfg.n < 2 {
        return Err(MetricsError::TooFewSamples(cfg.n));
    }
    let threads = cfg.threads.clamp(1, clips.len());
    let stats: Vec<Result<ClipStats, MetricsError>> = if threads == 1 {
        clips.iter().enumerate().map(|(k, c)| clip_stats(model, c, k, cfg)).collect()
    } else {
        let chunk = clips.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = clips
                .chunks(chunk)
                .enumerate()
                .map(|(j, part)| {
                    scope.spawn(move || {
                        part.iter()
                            .enumerate()
                            .map(|(i, c)| clip_stats(model, c, j * chunk + i, cfg))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("evaluation worker panicked")).collect()
        })
    };
    let mut recon = 0.0;
    let mut div = 0.0;
    let mut float_sum = 0.0;
    let mut float_n = 0usize;
    for s in stats {
        let s = s?;
        recon += s.recon;
        div += s.diversity;
        float_sum += s.floating.0;
        float_n += s.floating.1;
    }
    if float_n == 0 {
        return Err(MetricsError::AllFramesExcluded);
    }
    let n = clips.len() as f64;
    Ok(EvalReport {
        recon: recon / n,
        diversity: div / n,
        floating_err: float_sum / float_n as f64,
        n: cfg.n,
        clips: clips.len(),
        t_frames: clips[0].t_frames(),
        seed: cfg.seed,
        exclude_jumps: cfg.exclude_jumps,
    })
}

/// Mean ground-truth floating error over the retained frames of a dataset.
pub fn dataset_floating(clips: &[MotionClip], exclude_jumps: bool) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for clip in clips {
        if exclude_jumps && clip.tag == BehaviorTag::Jump {
            continue;
        }
        let index = NnIndex::build(&clip.bg_points);
        let f = frame_floating(&clip.trajectory(), clip, &index);
        sum += f.iter().sum::<f64>();
        count += f.len();
    }
    if count == 0 {
        return Err(MetricsError::AllFramesExcluded);
    }
    Ok(sum / count as f64)
}
