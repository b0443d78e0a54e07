use crate::geometry::PointCloud;
use crate::mix_seed;
use crate::motion_vae::MotionClip;

use super::{
    generate_motion, generate_scene, normalize_record, sample_clip, Behavior, DataError, MotionRecord, MotionSpec,
    Quadruped, QuadrupedSpec, Scene, SceneSpec,
};

/// Size and seeds of a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub scenes: usize,
    pub records: usize,
    pub clips: usize,
    /// clip length `T`
    pub t_frames: usize,
    /// record length `L`
    pub record_frames: usize,
    pub n_fg: usize,
    pub n_bg: usize,
    pub seed: u64,
    pub quadruped: QuadrupedSpec,
    pub motion: MotionSpec,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            scenes: 8,
            records: 32,
            clips: 512,
            t_frames: 32,
            record_frames: 300,
            n_fg: 256,
            n_bg: 1024,
            seed: 0,
            quadruped: QuadrupedSpec::default(),
            motion: MotionSpec::default(),
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let positive = [
            ("scenes", self.scenes),
            ("records", self.records),
            ("clips", self.clips),
            ("t_frames", self.t_frames),
            ("n_fg", self.n_fg),
            ("n_bg", self.n_bg),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(DataError::Spec(format!("{name} must be positive")));
        }
        if self.record_frames < self.t_frames {
            return Err(DataError::RecordTooShort { len: self.record_frames, need: self.t_frames });
        }
        Ok(())
    }
}

/// Everything produced by [`synthesize`]. Scenes and records are centered.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub scenes: Vec<Scene>,
    pub quadruped: Quadruped,
    pub limb_points: PointCloud,
    pub records: Vec<MotionRecord>,
    pub clips: Vec<MotionClip>,
}

impl SyntheticDataset {
    /// Mean bounding-box diagonal of the scenes.
    pub fn mean_scene_diagonal(&self) -> f64 {
        self.scenes.iter().map(|s| s.mesh.bbox_diagonal()).sum::<f64>() / self.scenes.len().max(1) as f64
    }
}

/// Random scenes, mixed-behavior records spread round-robin over them, and
/// clips cut round-robin from the records.
pub fn synthesize(spec: &DatasetSpec) -> Result<SyntheticDataset, DataError> {
    spec.validate()?;
    let quadruped = Quadruped::build(&spec.quadruped)?;
    let limb_points = quadruped.limb_points(spec.n_fg)?;
    let raw: Vec<Scene> = (0..spec.scenes)
        .map(|i| generate_scene(&SceneSpec::random(mix_seed(spec.seed, 1, i as u64)), spec.n_bg, mix_seed(spec.seed, 2, i as u64)))
        .collect::<Result<_, _>>()?;
    let scenes: Vec<Scene> = raw.iter().map(|s| s.translated(-s.mesh.centroid())).collect();
    let mut records = Vec::with_capacity(spec.records);
    for r in 0..spec.records {
        let k = r % spec.scenes;
        let seed = mix_seed(spec.seed, 3, r as u64);
        let mut rec =
            generate_motion(&raw[k], &quadruped, Behavior::Mixed, spec.record_frames, None, &spec.motion, seed)?;
        rec.scene = k;
        records.push(normalize_record(&rec, &raw[k]).0);
    }
    let clips = (0..spec.clips)
        .map(|c| {
            let rec = &records[c % spec.records];
            sample_clip(rec, &scenes[rec.scene], &quadruped, &limb_points, spec.t_frames, mix_seed(spec.seed, 4, c as u64))
        })
        .collect::<Result<_, _>>()?;
    Ok(SyntheticDataset { scenes, quadruped, limb_points, records, clips })
}
