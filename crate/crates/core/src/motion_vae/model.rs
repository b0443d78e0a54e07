use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    clamp_log_sigma, standard_normal, time_embeddings, Checkpoint, Conv1d, Linear, Mlp, ParamStore, Tape, Tensor, Var,
};
use crate::encoders::{
    build_condition_artic, build_condition_traj, embed_delta_sequence, embed_pose, embed_poses, ConditionVector,
    Embedder, PointEncoder, PoseNormalizer, POSE_FREQS,
};
use crate::geometry::{RigidTransform, UnitQuat, Vec3, Quat};
use crate::skeleton::ArticulationFrame;

use super::{integrate_trajectory, ModelConfig, MotionClip, MotionError, Normalizers};

/// Fourier bands used for articulation rows.
pub const ARTIC_FREQS: usize = 4;

/// Convolutional sequence encoder: two temporal convolutions, mean over time,
/// then separate MLP heads for the mean and log-σ.
#[derive(Clone, Debug)]
pub struct SeqEncoder {
    convs: [Conv1d; 2],
    mu: Mlp,
    log_sigma: Mlp,
}

impl SeqEncoder {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, hidden: usize, latent: usize, rng: &mut ChaCha8Rng) -> Result<Self, MotionError> {
        Ok(SeqEncoder {
            convs: [
                Conv1d::new(store, &format!("{name}.conv0"), c_in, hidden, rng)?,
                Conv1d::new(store, &format!("{name}.conv1"), hidden, hidden, rng)?,
            ],
            mu: Mlp::new(store, &format!("{name}.mu"), &[hidden, hidden, latent], false, rng)?,
            log_sigma: Mlp::new(store, &format!("{name}.log_sigma"), &[hidden, hidden, latent], false, rng)?,
        })
    }

    fn forward(&self, tape: &mut Tape, rows: Var) -> Result<(Var, Var), MotionError> {
        let mut h = rows;
        for c in &self.convs {
            let y = c.forward(tape, h)?;
            h = tape.relu(y);
        }
        let pooled = tape.mean_rows(h);
        let mu = self.mu.forward(tape, pooled)?;
        let ls = self.log_sigma.forward(tape, pooled)?;
        Ok((mu, clamp_log_sigma(tape, ls)))
    }
}

/// Two temporal convolutions and a zero-initialized per-step linear head.
#[derive(Clone, Debug)]
pub struct SeqDecoder {
    convs: [Conv1d; 2],
    head: Linear,
}

impl SeqDecoder {
    fn new(store: &mut ParamStore, name: &str, c_in: usize, hidden: usize, out: usize, rng: &mut ChaCha8Rng) -> Result<Self, MotionError> {
        Ok(SeqDecoder {
            convs: [
                Conv1d::new(store, &format!("{name}.conv0"), c_in, hidden, rng)?,
                Conv1d::new(store, &format!("{name}.conv1"), hidden, hidden, rng)?,
            ],
            head: Linear::zeros(store, &format!("{name}.head"), hidden, out)?,
        })
    }

    fn forward(&self, tape: &mut Tape, rows: Var) -> Result<Var, MotionError> {
        let mut h = rows;
        for c in &self.convs {
            let y = c.forward(tape, h)?;
            h = tape.relu(y);
        }
        Ok(self.head.forward(tape, h)?)
    }
}

/// Parameters of E_G, D_G and the trajectory condition embedders.
#[derive(Clone, Debug)]
pub struct TrajectoryVae {
    pub bg_encoder: PointEncoder,
    pub limb_encoder: PointEncoder,
    pub pose_embedder: Embedder,
    pub delta_embedder: Embedder,
    pub encoder: SeqEncoder,
    pub decoder: SeqDecoder,
}

impl TrajectoryVae {
    pub fn decoder_head_weight(&self) -> crate::autodiff::ParamId {
        self.decoder.head.w
    }
}

/// Parameters of E_A, D_A and the articulation condition embedders.
#[derive(Clone, Debug)]
pub struct ArticulationVae {
    pub pose_embedder: Embedder,
    pub artic_embedder: Embedder,
    pub encoder: SeqEncoder,
    pub decoder: SeqDecoder,
}

impl ArticulationVae {
    pub fn decoder_head_weight(&self) -> crate::autodiff::ParamId {
        self.decoder.head.w
    }
}

/// Both VAEs and the parameters they share a store with.
#[derive(Clone, Debug)]
pub struct MotionModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub traj: TrajectoryVae,
    pub artic: ArticulationVae,
}

/// Everything the trajectory condition is computed from.
#[derive(Clone, Copy, Debug)]
pub struct SceneInputs<'a> {
    pub g0: RigidTransform,
    pub limb: &'a [Vec3],
    pub bg: &'a [Vec3],
    pub d_fg: f64,
}

impl<'a> SceneInputs<'a> {
    pub fn of_clip(clip: &'a MotionClip) -> SceneInputs<'a> {
        SceneInputs { g0: clip.g0, limb: clip.limb_points.points(), bg: clip.bg_points.points(), d_fg: clip.d_fg }
    }
}

/// Decoder output: per-step unit quaternions `[T, 4]` and translations `[T, 3]`.
#[derive(Clone, Copy, Debug)]
pub struct DecodedTraj {
    pub dq: Var,
    pub dt: Var,
}

fn quat_row(q: &[f64]) -> RigidTransform {
    RigidTransform::from_rotation(UnitQuat::from_quat(Quat::new(q[0], q[1], q[2], q[3])))
}

impl MotionModel {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<MotionModel, MotionError> {
        if config.norms.artic_out.len() != 3 * config.joints {
            return Err(MotionError::Config(format!(
                "articulation scale has {} entries for {} joints",
                config.norms.artic_out.len(),
                config.joints
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (e, h) = (config.embed, config.hidden);
        let widths = [3, 64, 128, e];
        let s = &mut store;
        let traj_cond = 3 * e + 2 * crate::encoders::DFG_FREQS + 1;
        let traj = TrajectoryVae {
            bg_encoder: PointEncoder::new(s, "traj.bg_encoder", &widths, &mut rng)?,
            limb_encoder: PointEncoder::new(s, "traj.limb_encoder", &widths, &mut rng)?,
            pose_embedder: Embedder::new(s, "traj.pose_embedder", 7, POSE_FREQS, e, e, &mut rng)?,
            delta_embedder: Embedder::new(s, "traj.delta_embedder", 7, POSE_FREQS, e, e, &mut rng)?,
            encoder: SeqEncoder::new(s, "traj.encoder", e + e + traj_cond, h, config.latent_g, &mut rng)?,
            decoder: SeqDecoder::new(s, "traj.decoder", config.latent_g + traj_cond + e, h, 7, &mut rng)?,
        };
        let dof = 3 * config.joints;
        let artic_cond = 3 * e;
        let artic = ArticulationVae {
            pose_embedder: Embedder::new(s, "artic.pose_embedder", 7, POSE_FREQS, e, e, &mut rng)?,
            artic_embedder: Embedder::new(s, "artic.artic_embedder", dof, ARTIC_FREQS, e, e, &mut rng)?,
            encoder: SeqEncoder::new(s, "artic.encoder", e + artic_cond + e, h, config.latent_a, &mut rng)?,
            decoder: SeqDecoder::new(s, "artic.decoder", config.latent_a + artic_cond + e, h, dof, &mut rng)?,
        };
        Ok(MotionModel { config, store, traj, artic })
    }

    /// `[T, embed]` time table as a constant.
    pub fn tau(&self, tape: &mut Tape, frames: usize) -> Result<Var, MotionError> {
        Ok(tape.constant(time_embeddings(frames, self.config.embed))?)
    }

    pub fn traj_condition(&self, tape: &mut Tape, scene: &SceneInputs) -> Result<ConditionVector, MotionError> {
        let t = &self.traj;
        let z_bg = t.bg_encoder.encode_points(tape, scene.bg)?;
        let z_limb = t.limb_encoder.encode_points(tape, scene.limb)?;
        let z_g0 = embed_pose(tape, &t.pose_embedder, &scene.g0)?;
        let d_fg = self.config.use_dfg.then_some(scene.d_fg);
        Ok(build_condition_traj(tape, z_g0, z_limb, z_bg, d_fg)?)
    }

    /// `(μ, log σ)` of q(z_G | dG, c_G), each `[1, latent_g]`.
    pub fn traj_encode_with(
        &self,
        tape: &mut Tape,
        deltas: &[RigidTransform],
        cond: Var,
        tau: Var,
    ) -> Result<(Var, Var), MotionError> {
        let t = deltas.len();
        let zd = embed_delta_sequence(tape, &self.traj.delta_embedder, deltas, &self.config.norms.delta)?;
        let c = tape.repeat_rows(cond, t)?;
        let rows = tape.concat_cols(&[zd, tau, c])?;
        self.traj.encoder.forward(tape, rows)
    }

    pub fn traj_encode(&self, tape: &mut Tape, clip: &MotionClip) -> Result<(Var, Var), MotionError> {
        let cond = self.traj_condition(tape, &SceneInputs::of_clip(clip))?;
        let tau = self.tau(tape, clip.t_frames())?;
        self.traj_encode_with(tape, &clip.deltas, cond.var, tau)
    }

    /// Decodes `z` into `T = rows(tau)` deltas. Quaternions are the head's
    /// scaled output added to the identity, normalized, and flipped to w ≥ 0.
    pub fn traj_decode(&self, tape: &mut Tape, z: Var, cond: Var, tau: Var) -> Result<DecodedTraj, MotionError> {
        let t = tape.value(tau).rows();
        let zr = tape.repeat_rows(z, t)?;
        let c = tape.repeat_rows(cond, t)?;
        let rows = tape.concat_cols(&[zr, c, tau])?;
        let raw = self.traj.decoder.forward(tape, rows)?;
        let s = self.config.norms.traj_out;
        let q_raw = tape.slice_cols(raw, 0, 4)?;
        let q_scale = tape.constant(Tensor::row(s[..4].to_vec()))?;
        let q_scaled = tape.mul_row(q_raw, q_scale)?;
        let one = tape.constant(Tensor::row(vec![1.0, 0.0, 0.0, 0.0]))?;
        let q_biased = tape.add_row_bias(q_scaled, one)?;
        let mut dq = tape.normalize_rows(q_biased)?;
        let signs: Vec<f64> = tape.value(dq).data().chunks(4).flat_map(|r| [if r[0] < 0.0 { -1.0 } else { 1.0 }; 4]).collect();
        if signs.iter().any(|&s| s < 0.0) {
            let sv = tape.constant(Tensor::new(vec![t, 4], signs)?)?;
            dq = tape.mul(dq, sv)?;
        }
        let t_raw = tape.slice_cols(raw, 4, 3)?;
        let t_scale = tape.constant(Tensor::row(s[4..].to_vec()))?;
        let dt = tape.mul_row(t_raw, t_scale)?;
        Ok(DecodedTraj { dq, dt })
    }

    /// Plain deltas from decoder nodes.
    pub fn deltas_of(&self, tape: &Tape, d: &DecodedTraj) -> Vec<RigidTransform> {
        let q = tape.value(d.dq);
        let t = tape.value(d.dt);
        (0..q.rows())
            .map(|r| {
                let rot = quat_row(q.row_slice(r)).rotation;
                let tr = t.row_slice(r);
                RigidTransform::new(rot, Vec3::new(tr[0], tr[1], tr[2]))
            })
            .collect()
    }

    /// `c_A` from the full trajectory `G_0 … G_T` and the start articulation.
    pub fn artic_condition(
        &self,
        tape: &mut Tape,
        trajectory: &[RigidTransform],
        a0: &ArticulationFrame,
    ) -> Result<ConditionVector, MotionError> {
        let a = &self.artic;
        let z_g0 = embed_pose(tape, &a.pose_embedder, &trajectory[0])?;
        let z_steps = embed_poses(tape, &a.pose_embedder, &trajectory[1..])?;
        let z_a0 = a.artic_embedder.forward_rows(tape, &[a0.to_flat()])?;
        Ok(build_condition_artic(tape, z_steps, z_g0, z_a0)?)
    }

    /// `(μ, log σ)` of q(z_A | A_1..T, c_A).
    pub fn artic_encode_with(
        &self,
        tape: &mut Tape,
        articulations: &[ArticulationFrame],
        cond: Var,
        tau: Var,
    ) -> Result<(Var, Var), MotionError> {
        let rows: Vec<Vec<f64>> = articulations.iter().map(ArticulationFrame::to_flat).collect();
        let za = self.artic.artic_embedder.forward_rows(tape, &rows)?;
        let x = tape.concat_cols(&[za, cond, tau])?;
        self.artic.encoder.forward(tape, x)
    }

    /// Encodes a clip's articulations against its ground-truth trajectory.
    pub fn artic_encode(&self, tape: &mut Tape, clip: &MotionClip) -> Result<(Var, Var), MotionError> {
        let cond = self.artic_condition(tape, &clip.trajectory(), &clip.articulations[0])?;
        let tau = self.tau(tape, clip.t_frames())?;
        self.artic_encode_with(tape, &clip.articulations[1..], cond.var, tau)
    }

    /// `[T, 3B]` articulation for steps `1 … T`.
    pub fn artic_decode(&self, tape: &mut Tape, z: Var, cond: Var, tau: Var) -> Result<Var, MotionError> {
        let t = tape.value(tau).rows();
        let zr = tape.repeat_rows(z, t)?;
        let rows = tape.concat_cols(&[zr, cond, tau])?;
        let raw = self.artic.decoder.forward(tape, rows)?;
        let s = tape.constant(Tensor::row(self.config.norms.artic_out.clone()))?;
        Ok(tape.mul_row(raw, s)?)
    }

    /// Articulation frames (wrapped below π) from a decoder node.
    pub fn frames_of(&self, tape: &Tape, a: Var) -> Vec<ArticulationFrame> {
        let v = tape.value(a);
        (0..v.rows()).map(|r| ArticulationFrame::from_flat(v.row_slice(r)).expect("rows are 3B wide")).collect()
    }

    /// Trajectory decoded from the posterior mean.
    pub fn reconstruct_trajectory(&self, clip: &MotionClip) -> Result<Vec<RigidTransform>, MotionError> {
        let mut tape = Tape::with_params(&self.store);
        let cond = self.traj_condition(&mut tape, &SceneInputs::of_clip(clip))?;
        let tau = self.tau(&mut tape, clip.t_frames())?;
        let (mu, _) = self.traj_encode_with(&mut tape, &clip.deltas, cond.var, tau)?;
        let d = self.traj_decode(&mut tape, mu, cond.var, tau)?;
        Ok(integrate_trajectory(&clip.g0, &self.deltas_of(&tape, &d)))
    }

    /// `G_0 … G_T` decoded from `z_G ~ N(0, I)`; `G_0` is the given start.
    pub fn sample_trajectory(&self, scene: &SceneInputs, frames: usize, seed: u64) -> Result<Vec<RigidTransform>, MotionError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = standard_normal(&mut rng, 1, self.config.latent_g);
        self.decode_trajectory(scene, frames, eps)
    }

    pub fn decode_trajectory(&self, scene: &SceneInputs, frames: usize, z: Tensor) -> Result<Vec<RigidTransform>, MotionError> {
        let mut tape = Tape::with_params(&self.store);
        let cond = self.traj_condition(&mut tape, scene)?;
        let tau = self.tau(&mut tape, frames)?;
        let zv = tape.constant(z)?;
        let d = self.traj_decode(&mut tape, zv, cond.var, tau)?;
        Ok(integrate_trajectory(&scene.g0, &self.deltas_of(&tape, &d)))
    }

    /// `A_0 … A_T` for a given trajectory, decoded from `z_A ~ N(0, I)`.
    pub fn sample_articulation(
        &self,
        trajectory: &[RigidTransform],
        a0: &ArticulationFrame,
        seed: u64,
    ) -> Result<Vec<ArticulationFrame>, MotionError> {
        if a0.num_joints() != self.config.joints {
            return Err(MotionError::Invalid(format!("start articulation has {} joints, model expects {}", a0.num_joints(), self.config.joints)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = standard_normal(&mut rng, 1, self.config.latent_a);
        let mut tape = Tape::with_params(&self.store);
        let cond = self.artic_condition(&mut tape, trajectory, a0)?;
        let tau = self.tau(&mut tape, trajectory.len() - 1)?;
        let z = tape.constant(eps)?;
        let a = self.artic_decode(&mut tape, z, cond.var, tau)?;
        let mut out = vec![a0.clone()];
        out.extend(self.frames_of(&tape, a));
        Ok(out)
    }

    /// Model settings, scaling statistics and parameters.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let mut ck = Checkpoint::new();
        let scalar = |v: f64| Tensor::new(vec![1], vec![v]).unwrap();
        for (k, v) in [
            ("t_frames", c.t_frames as f64),
            ("joints", c.joints as f64),
            ("latent_g", c.latent_g as f64),
            ("latent_a", c.latent_a as f64),
            ("embed", c.embed as f64),
            ("hidden", c.hidden as f64),
            ("n_fg", c.n_fg as f64),
            ("n_bg", c.n_bg as f64),
            ("use_dfg", if c.use_dfg { 1.0 } else { 0.0 }),
        ] {
            ck.push(format!("config.{k}"), scalar(v));
        }
        let vec = |v: &[f64]| Tensor::new(vec![v.len()], v.to_vec()).unwrap();
        ck.push("norm.delta_shift", vec(&c.norms.delta.shift));
        ck.push("norm.delta_scale", vec(&c.norms.delta.scale));
        ck.push("norm.traj_out", vec(&c.norms.traj_out));
        ck.push("norm.artic_out", vec(&c.norms.artic_out));
        for (_, name, t) in self.store.iter() {
            ck.push(name, t.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<MotionModel, MotionError> {
        let get = |k: &str| -> Result<&Tensor, MotionError> {
            ck.get(k).ok_or_else(|| MotionError::Checkpoint(format!("missing {k}")))
        };
        let int = |k: &str| -> Result<usize, MotionError> {
            let v = get(&format!("config.{k}"))?.data()[0];
            if v < 0.0 || v.fract() != 0.0 {
                return Err(MotionError::Checkpoint(format!("config.{k} is not a count")));
            }
            Ok(v as usize)
        };
        let arr7 = |k: &str| -> Result<[f64; 7], MotionError> {
            get(k)?.data().try_into().map_err(|_| MotionError::Checkpoint(format!("{k} must have 7 values")))
        };
        let config = ModelConfig {
            t_frames: int("t_frames")?,
            joints: int("joints")?,
            latent_g: int("latent_g")?,
            latent_a: int("latent_a")?,
            embed: int("embed")?,
            hidden: int("hidden")?,
            n_fg: int("n_fg")?,
            n_bg: int("n_bg")?,
            use_dfg: int("use_dfg")? != 0,
            norms: Normalizers {
                delta: PoseNormalizer { shift: arr7("norm.delta_shift")?, scale: arr7("norm.delta_scale")? },
                traj_out: arr7("norm.traj_out")?,
                artic_out: get("norm.artic_out")?.data().to_vec(),
            },
        };
        let mut model = MotionModel::new(config, 0)?;
        model.store.load_from(|name| ck.get(name))?;
        Ok(model)
    }
}
