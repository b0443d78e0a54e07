use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Adam, Checkpoint, Tape, Tensor};
use crate::data::{augment_with, random_augmentation};

use super::{
    clip_objective, ClipNoise, ClipReference, Config, LossBreakdown, LossWeights, MotionClip, MotionError,
    MotionModel, Normalizers, TrainConfig,
};
use crate::encoders::PoseNormalizer;
use crate::mix_seed as mix;

const DELTA_SCALE_FLOOR: f64 = 1e-4;
const ARTIC_SCALE_FLOOR: f64 = 1e-3;

/// Input and output scaling statistics of a dataset.
///
/// Delta inputs are standardized per component. Decoder outputs are scaled
/// by the RMS distance of each component from the identity pose (and of each
/// articulation component from zero), so zero-initialized heads start at
/// identity with unit-scale outputs.
pub fn fit_normalizers(clips: &[MotionClip], joints: usize) -> Result<Normalizers, MotionError> {
    if clips.is_empty() {
        return Err(MotionError::Schema("dataset is empty".into()));
    }
    let rows: Vec<[f64; 7]> = clips.iter().flat_map(|c| c.deltas.iter().map(|d| d.to_array7())).collect();
    let n = rows.len() as f64;
    let mut shift = [0.0; 7];
    let mut scale = [0.0; 7];
    let mut traj_out = [0.0; 7];
    let identity = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    for r in &rows {
        for i in 0..7 {
            shift[i] += r[i] / n;
            traj_out[i] += (r[i] - identity[i]).powi(2) / n;
        }
    }
    for r in &rows {
        for i in 0..7 {
            scale[i] += (r[i] - shift[i]).powi(2) / n;
        }
    }
    for i in 0..7 {
        scale[i] = scale[i].sqrt().max(DELTA_SCALE_FLOOR);
        traj_out[i] = traj_out[i].sqrt().max(DELTA_SCALE_FLOOR);
    }
    let mut artic_out = vec![0.0; 3 * joints];
    let mut frames = 0.0;
    for c in clips {
        for a in &c.articulations[1..] {
            let flat = a.to_flat();
            if flat.len() != artic_out.len() {
                return Err(MotionError::Schema(format!("clip has {} joints, expected {joints}", a.num_joints())));
            }
            for (o, v) in artic_out.iter_mut().zip(flat) {
                *o += v * v;
            }
            frames += 1.0;
        }
    }
    for o in &mut artic_out {
        *o = (*o / frames).sqrt().max(ARTIC_SCALE_FLOOR);
    }
    Ok(Normalizers { delta: PoseNormalizer { shift, scale }, traj_out, artic_out })
}

/// A training clip with its cached floating-loss ground truth.
#[derive(Clone, Debug)]
pub struct PreparedClip {
    pub clip: MotionClip,
    pub reference: ClipReference,
}

impl PreparedClip {
    pub fn new(clip: MotionClip) -> PreparedClip {
        let reference = ClipReference::new(&clip);
        PreparedClip { clip, reference }
    }
}

/// Mean losses over the clips seen in one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based
    pub epoch: usize,
    pub steps: u64,
    pub loss: LossBreakdown,
}

type ParamGrads = Vec<Option<Vec<f64>>>;

/// Joint training of both VAEs with Adam.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: MotionModel,
    pub adam: Adam,
    pub train: TrainConfig,
    /// completed epochs
    pub epoch: usize,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: MotionModel, train: TrainConfig) -> Trainer {
        let adam = Adam::new(&model.store, train.lr);
        Trainer { model, adam, train, epoch: 0, step: 0 }
    }

    /// Fresh model scaled to the dataset, initialized from the training seed.
    pub fn for_dataset(clips: &[MotionClip], config: &Config) -> Result<Trainer, MotionError> {
        config.validate()?;
        check_dataset(clips, config.model.t_frames, config.model.joints)?;
        let mut model_cfg = config.model.clone();
        model_cfg.norms = fit_normalizers(clips, model_cfg.joints)?;
        let model = MotionModel::new(model_cfg, config.train.seed)?;
        Ok(Trainer::new(model, config.train.clone()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        for (k, t) in self.adam.to_entries(&self.model.store) {
            ck.push(k, t);
        }
        ck.push("train.epoch", Tensor::new(vec![1], vec![self.epoch as f64]).unwrap());
        ck.push("train.step", Tensor::new(vec![1], vec![self.step as f64]).unwrap());
        ck
    }

    /// Resumes from a checkpoint written by [`Trainer::to_checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint, train: TrainConfig) -> Result<Trainer, MotionError> {
        let model = MotionModel::from_checkpoint(ck)?;
        let adam = Adam::from_entries(&model.store, train.lr, |k| ck.get(k))?;
        let count = |k: &str| -> Result<f64, MotionError> {
            Ok(ck.get(k).ok_or_else(|| MotionError::Checkpoint(format!("missing {k}")))?.data()[0])
        };
        let epoch = count("train.epoch")? as usize;
        let step = count("train.step")? as u64;
        Ok(Trainer { model, adam, train, epoch, step })
    }

    pub fn prepare(&self, clips: Vec<MotionClip>) -> Result<Vec<PreparedClip>, MotionError> {
        check_dataset(&clips, self.model.config.t_frames, self.model.config.joints)?;
        Ok(clips.into_iter().map(PreparedClip::new).collect())
    }

    fn budget_left(&self) -> bool {
        self.train.max_steps == 0 || self.step < self.train.max_steps
    }

    /// One pass over a shuffled dataset. `None` once the step budget is spent.
    pub fn run_epoch(&mut self, data: &[PreparedClip]) -> Result<Option<EpochRecord>, MotionError> {
        if data.is_empty() {
            return Err(MotionError::Schema("dataset is empty".into()));
        }
        if !self.budget_left() {
            return Ok(None);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.train.seed, self.epoch as u64, 0x5348_5546)));
        let batch = self.train.batch.min(data.len());
        let mut seen = Vec::with_capacity(data.len());
        let start = self.step;
        for idx in order.chunks(batch) {
            if !self.budget_left() {
                break;
            }
            seen.extend(self.step_batch(data, idx)?);
        }
        self.epoch += 1;
        Ok(Some(EpochRecord { epoch: self.epoch, steps: self.step - start, loss: LossBreakdown::mean(&seen) }))
    }

    /// Runs epochs until `train.epochs` have completed or the step budget is
    /// spent, calling `on_epoch` after each.
    pub fn fit<E: From<MotionError>>(
        &mut self,
        data: &[PreparedClip],
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<(), E>,
    ) -> Result<Vec<EpochRecord>, E> {
        let mut history = Vec::new();
        while self.epoch < self.train.epochs {
            match self.run_epoch(data)? {
                Some(rec) => {
                    on_epoch(self, &rec)?;
                    history.push(rec);
                }
                None => break,
            }
        }
        Ok(history)
    }

    /// One optimizer step on the mean objective of the given clips.
    pub fn step_batch(&mut self, data: &[PreparedClip], idx: &[usize]) -> Result<Vec<LossBreakdown>, MotionError> {
        let results = self.clip_gradients(data, idx)?;
        let scale = 1.0 / idx.len() as f64;
        let mut sum: ParamGrads = vec![None; self.model.store.len()];
        let mut losses = Vec::with_capacity(idx.len());
        for (grads, loss) in results {
            for (acc, g) in sum.iter_mut().zip(grads) {
                let Some(g) = g else { continue };
                match acc {
                    Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                    None => *acc = Some(g),
                }
            }
            losses.push(loss);
        }
        for g in sum.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= scale);
        }
        self.adam.step(&mut self.model.store, &sum)?;
        self.step += 1;
        Ok(losses)
    }

    /// Mean objective at the posterior mean, without augmentation.
    pub fn evaluate(&self, data: &[PreparedClip]) -> Result<LossBreakdown, MotionError> {
        let weights = LossWeights::from(&self.train);
        let noise = ClipNoise::zeros(&self.model);
        let mut losses = Vec::with_capacity(data.len());
        for p in data {
            let mut tape = Tape::with_params(&self.model.store);
            let obj = clip_objective(&mut tape, &self.model, &p.clip, &p.reference, &noise, &weights, None)?;
            losses.push(obj.breakdown(&tape));
        }
        Ok(LossBreakdown::mean(&losses))
    }

    fn clip_gradients(&self, data: &[PreparedClip], idx: &[usize]) -> Result<Vec<(ParamGrads, LossBreakdown)>, MotionError> {
        let threads = self.train.threads.min(idx.len()).max(1);
        let job = |i: usize| clip_gradient(&self.model, &self.train, &data[i], mix(self.train.seed, self.step, i as u64));
        if threads == 1 {
            return idx.iter().map(|&i| job(i)).collect();
        }
        let per = idx.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = idx
                .chunks(per)
                .map(|chunk| s.spawn(move || chunk.iter().map(|&i| job(i)).collect::<Vec<_>>()))
                .collect();
            let mut out = Vec::with_capacity(idx.len());
            for h in handles {
                out.extend(h.join().expect("training worker panicked"));
            }
            out.into_iter().collect()
        })
    }
}

fn clip_gradient(
    model: &MotionModel,
    train: &TrainConfig,
    prepared: &PreparedClip,
    seed: u64,
) -> Result<(ParamGrads, LossBreakdown), MotionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = ClipNoise::sample(model, &mut rng);
    let augmented;
    let input = if train.augment {
        augmented = augment_with(&prepared.clip, &random_augmentation(&mut rng, train.aug_shift));
        &augmented
    } else {
        &prepared.clip
    };
    let mut tape = Tape::with_params(&model.store);
    let obj = clip_objective(&mut tape, model, input, &prepared.reference, &noise, &LossWeights::from(train), None)?;
    let loss = obj.breakdown(&tape);
    let grads = tape.backward(obj.total)?.into_param_grads();
    Ok((grads, loss))
}

fn check_dataset(clips: &[MotionClip], t_frames: usize, joints: usize) -> Result<(), MotionError> {
    if clips.is_empty() {
        return Err(MotionError::Schema("dataset is empty".into()));
    }
    for (i, c) in clips.iter().enumerate() {
        if c.t_frames() != t_frames {
            return Err(MotionError::Schema(format!("clip {i} has {} frames, config expects {t_frames}", c.t_frames())));
        }
        if c.num_joints() != joints {
            return Err(MotionError::Schema(format!("clip {i} has {} joints, config expects {joints}", c.num_joints())));
        }
    }
    Ok(())
}
