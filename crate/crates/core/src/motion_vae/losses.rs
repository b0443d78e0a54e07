use serde::{Deserialize, Serialize};

use crate::autodiff::{kl_diag_gaussian, reparameterize_with, Tape, Tensor, Var};
use crate::geometry::{chamfer_transformed, NnIndex, PointCloud, RigidTransform};
use crate::skeleton::ArticulationFrame;

use super::{DecodedTraj, MotionClip, MotionError, MotionModel, SceneInputs, TrainConfig};

pub const LOSS_CSV_HEADER: &str = "epoch,traj_recon,traj_kl,artic_recon,artic_kl,floating,total";

/// Term weights of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub g_kl: f64,
    pub a_kl: f64,
    pub cdd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights::from(&TrainConfig::default())
    }
}

impl From<&TrainConfig> for LossWeights {
    fn from(c: &TrainConfig) -> Self {
        LossWeights { recon: c.recon_weight, g_kl: c.lambda_g_kl, a_kl: c.lambda_a_kl, cdd: c.lambda_cdd }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub traj_recon: f64,
    pub traj_kl: f64,
    pub artic_recon: f64,
    pub artic_kl: f64,
    pub floating: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Fills in `total` from the components.
    pub fn new(traj_recon: f64, traj_kl: f64, artic_recon: f64, artic_kl: f64, floating: f64, w: &LossWeights) -> Self {
        let total = w.recon * (traj_recon + artic_recon) + w.g_kl * traj_kl + w.cdd * floating + w.a_kl * artic_kl;
        LossBreakdown { traj_recon, traj_kl, artic_recon, artic_kl, floating, total }
    }

    /// Component-wise mean.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.traj_recon += b.traj_recon / n;
            m.traj_kl += b.traj_kl / n;
            m.artic_recon += b.artic_recon / n;
            m.artic_kl += b.artic_kl / n;
            m.floating += b.floating / n;
            m.total += b.total / n;
        }
        m
    }

    pub fn csv_row(&self, epoch: usize) -> String {
        format!(
            "{epoch},{},{},{},{},{},{}",
            self.traj_recon, self.traj_kl, self.artic_recon, self.artic_kl, self.floating, self.total
        )
    }
}

fn check_lengths(a: usize, b: usize) -> Result<(), MotionError> {
    if a != b || a == 0 {
        return Err(MotionError::Invalid(format!("sequence lengths {a} and {b} must match and be nonzero")));
    }
    Ok(())
}

/// Absolute difference summed over the 7 pose components (quaternion with
/// w ≥ 0, then translation) of every delta: the negative log-likelihood of a
/// unit Laplace decoder, up to a constant.
pub fn traj_recon_loss(pred: &[RigidTransform], gt: &[RigidTransform]) -> Result<f64, MotionError> {
    check_lengths(pred.len(), gt.len())?;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .flat_map(|(a, b)| {
            let (a, b) = (a.to_array7(), b.to_array7());
            (0..7).map(move |i| (a[i] - b[i]).abs())
        })
        .sum();
    Ok(sum)
}

/// Absolute difference of axis-angle components, summed over frames and
/// joints.
pub fn artic_recon_loss(pred: &[ArticulationFrame], gt: &[ArticulationFrame]) -> Result<f64, MotionError> {
    check_lengths(pred.len(), gt.len())?;
    let mut sum = 0.0;
    for (a, b) in pred.iter().zip(gt) {
        let (a, b) = (a.to_flat(), b.to_flat());
        if a.len() != b.len() {
            return Err(MotionError::Invalid("articulation frames differ in joint count".into()));
        }
        sum += a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>();
    }
    Ok(sum)
}

/// `(1/T) Σ_{t=1..T} |CD(G_t^gt · P_limb, P_bg) − CD(G_t^pred · P_limb, P_bg)|`
/// over trajectories of `T + 1` poses. Frame 0 is the shared start pose.
pub fn floating_loss(
    g_gt: &[RigidTransform],
    g_pred: &[RigidTransform],
    limb: &PointCloud,
    bg: &PointCloud,
) -> Result<f64, MotionError> {
    check_lengths(g_gt.len(), g_pred.len())?;
    if g_gt.len() < 2 {
        return Err(MotionError::Invalid("floating loss needs at least one step".into()));
    }
    if limb.is_empty() || bg.is_empty() {
        return Err(crate::geometry::GeometryError::EmptyCloud.into());
    }
    let index = NnIndex::build(bg);
    let sum: f64 = g_gt[1..]
        .iter()
        .zip(&g_pred[1..])
        .map(|(a, b)| {
            (chamfer_transformed(a, limb.points(), &index) - chamfer_transformed(b, limb.points(), &index)).abs()
        })
        .sum();
    Ok(sum / (g_gt.len() - 1) as f64)
}

/// Ground truth a clip's floating term is measured against. Built from the
/// clip before augmentation; the Chamfer values are rigid-invariant, so the
/// predicted deltas can be integrated from the original start pose.
#[derive(Clone, Debug)]
pub struct ClipReference {
    pub g0: RigidTransform,
    pub limb: Vec<crate::geometry::Vec3>,
    pub index: NnIndex,
    /// `CD(G_t · P_limb, P_bg)` for `t = 0 … T`
    pub gt_chamfer: Vec<f64>,
}

impl ClipReference {
    pub fn new(clip: &MotionClip) -> ClipReference {
        let index = NnIndex::build(&clip.bg_points);
        let limb = clip.limb_points.points().to_vec();
        let gt_chamfer = clip.trajectory().iter().map(|g| chamfer_transformed(g, &limb, &index)).collect();
        ClipReference { g0: clip.g0, limb, index, gt_chamfer }
    }
}

/// Reparameterization noise for both latents.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipNoise {
    pub eps_g: Tensor,
    pub eps_a: Tensor,
}

impl ClipNoise {
    pub fn zeros(model: &MotionModel) -> ClipNoise {
        ClipNoise {
            eps_g: Tensor::zeros(vec![1, model.config.latent_g]),
            eps_a: Tensor::zeros(vec![1, model.config.latent_a]),
        }
    }

    pub fn sample(model: &MotionModel, rng: &mut impl rand::Rng) -> ClipNoise {
        ClipNoise {
            eps_g: crate::autodiff::standard_normal(rng, 1, model.config.latent_g),
            eps_a: crate::autodiff::standard_normal(rng, 1, model.config.latent_a),
        }
    }
}

/// Loss nodes of one clip's objective.
#[derive(Clone, Debug)]
pub struct ClipObjective {
    pub traj_recon: Var,
    pub traj_kl: Var,
    pub artic_recon: Var,
    pub artic_kl: Var,
    pub floating: Var,
    pub total: Var,
    /// nearest-neighbour assignments of the floating term, one list per step
    pub assignments: Vec<Vec<usize>>,
}

impl ClipObjective {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            traj_recon: tape.scalar(self.traj_recon),
            traj_kl: tape.scalar(self.traj_kl),
            artic_recon: tape.scalar(self.artic_recon),
            artic_kl: tape.scalar(self.artic_kl),
            floating: tape.scalar(self.floating),
            total: tape.scalar(self.total),
        }
    }
}

fn floating_on_tape(
    tape: &mut Tape,
    d: &DecodedTraj,
    reference: &ClipReference,
    frozen: Option<&[Vec<usize>]>,
) -> Result<(Var, Vec<Vec<usize>>), MotionError> {
    let steps = tape.value(d.dq).rows();
    if reference.gt_chamfer.len() != steps + 1 {
        return Err(MotionError::Invalid("reference length does not match the decoded sequence".into()));
    }
    let g0 = reference.g0.to_array7();
    let mut r = tape.constant(Tensor::row(g0[..4].to_vec()))?;
    let mut s = tape.constant(Tensor::row(g0[4..].to_vec()))?;
    let mut terms = Vec::with_capacity(steps);
    let mut used = Vec::with_capacity(steps);
    for t in 0..steps {
        let dq = tape.slice_rows(d.dq, t, 1)?;
        let dt = tape.slice_rows(d.dt, t, 1)?;
        let moved = tape.quat_rotate(r, dt)?;
        s = tape.add(s, moved)?;
        r = tape.quat_mul(r, dq)?;
        let (c, ids) = tape.rigid_chamfer(r, s, &reference.limb, &reference.index, frozen.map(|f| f[t].as_slice()))?;
        let diff = tape.add_scalar(c, -reference.gt_chamfer[t + 1]);
        terms.push(tape.abs(diff));
        used.push(ids);
    }
    let all = tape.concat_cols(&terms)?;
    Ok((tape.mean(all), used))
}

/// Full objective of one clip with teacher-forced articulation.
///
/// `input` is what the networks see (possibly augmented); `reference` holds
/// the ground truth the floating term compares against.
pub fn clip_objective(
    tape: &mut Tape,
    model: &MotionModel,
    input: &MotionClip,
    reference: &ClipReference,
    noise: &ClipNoise,
    weights: &LossWeights,
    frozen: Option<&[Vec<usize>]>,
) -> Result<ClipObjective, MotionError> {
    let frames = input.t_frames();
    let tau = model.tau(tape, frames)?;

    let cond_g = model.traj_condition(tape, &SceneInputs::of_clip(input))?;
    let (mu_g, ls_g) = model.traj_encode_with(tape, &input.deltas, cond_g.var, tau)?;
    let z_g = reparameterize_with(tape, mu_g, ls_g, noise.eps_g.clone())?;
    let decoded = model.traj_decode(tape, z_g, cond_g.var, tau)?;
    let pred = tape.concat_cols(&[decoded.dq, decoded.dt])?;
    let gt_rows: Vec<Vec<f64>> = input.deltas.iter().map(|d| d.to_array7().to_vec()).collect();
    let gt = tape.constant(Tensor::from_rows(&gt_rows)?)?;
    let err = tape.sub(pred, gt)?;
    let err = tape.abs(err);
    let traj_recon = tape.sum(err);
    let traj_kl = kl_diag_gaussian(tape, mu_g, ls_g)?;

    let (floating, assignments) = floating_on_tape(tape, &decoded, reference, frozen)?;

    let cond_a = model.artic_condition(tape, &input.trajectory(), &input.articulations[0])?;
    let (mu_a, ls_a) = model.artic_encode_with(tape, &input.articulations[1..], cond_a.var, tau)?;
    let z_a = reparameterize_with(tape, mu_a, ls_a, noise.eps_a.clone())?;
    let a_pred = model.artic_decode(tape, z_a, cond_a.var, tau)?;
    let a_rows: Vec<Vec<f64>> = input.articulations[1..].iter().map(ArticulationFrame::to_flat).collect();
    let a_gt = tape.constant(Tensor::from_rows(&a_rows)?)?;
    let a_err = tape.sub(a_pred, a_gt)?;
    let a_err = tape.abs(a_err);
    let artic_recon = tape.sum(a_err);
    let artic_kl = kl_diag_gaussian(tape, mu_a, ls_a)?;

    let recon = tape.add(traj_recon, artic_recon)?;
    let mut total = tape.scale(recon, weights.recon);
    for (v, w) in [(traj_kl, weights.g_kl), (floating, weights.cdd), (artic_kl, weights.a_kl)] {
        let term = tape.scale(v, w);
        total = tape.add(total, term)?;
    }
    Ok(ClipObjective { traj_recon, traj_kl, artic_recon, artic_kl, floating, total, assignments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck::check_params, AutodiffError};
    use crate::geometry::{UnitQuat, Vec3};
    use crate::motion_vae::tests::{small_config, toy_clip};
    use crate::motion_vae::{integrate_trajectory, Normalizers};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pose(a: [f64; 3], t: [f64; 3]) -> RigidTransform {
        RigidTransform::new(UnitQuat::from_axis_angle(Vec3::from_array(a)), Vec3::from_array(t))
    }

    #[test]
    fn recon_loss_elementwise_oracle() {
        let gt: Vec<_> = (0..5).map(|i| pose([0.1 * i as f64, 0.0, 0.2], [0.0, 1.0, i as f64])).collect();
        assert_eq!(traj_recon_loss(&gt, &gt).unwrap(), 0.0);
        let off: Vec<_> = gt.iter().map(|g| RigidTransform::new(g.rotation, g.translation + Vec3::new(1.0, 0.0, 0.0))).collect();
        let expected: f64 = {
            let mut s = 0.0;
            for (a, b) in off.iter().zip(&gt) {
                let (a, b) = (a.to_array7(), b.to_array7());
                for i in 0..7 {
                    s += (a[i] - b[i]).abs();
                }
            }
            s
        };
        let got = traj_recon_loss(&off, &gt).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 5.0).abs() < 1e-12);
        assert_eq!(got, traj_recon_loss(&gt, &off).unwrap());
        assert!(traj_recon_loss(&gt[..3], &gt).is_err());
    }

    fn grid_floor(n: usize, step: f64) -> PointCloud {
        let pts = (0..n * n).map(|i| Vec3::new((i % n) as f64 * step - 1.0, 0.0, (i / n) as f64 * step - 1.0)).collect();
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn floating_loss_planar_oracle() {
        let bg = grid_floor(21, 0.1);
        // limb points sit exactly above grid nodes
        let limb = PointCloud::new(vec![Vec3::new(0.0, 0.05, 0.0), Vec3::new(0.1, 0.02, -0.2), Vec3::new(-0.3, 0.0, 0.4)]).unwrap();
        let gt: Vec<_> = (0..6).map(|i| RigidTransform::from_translation(Vec3::new(0.1 * i as f64, 0.0, 0.0))).collect();
        let lifted: Vec<_> = gt.iter().map(|g| RigidTransform::from_translation(g.translation + Vec3::Y)).collect();
        assert_eq!(floating_loss(&gt, &gt, &limb, &bg).unwrap(), 0.0);
        let l = floating_loss(&gt, &lifted, &limb, &bg).unwrap();
        assert!((l - 1.0).abs() < 1e-12, "{l}");
        assert_eq!(l, floating_loss(&lifted, &gt, &limb, &bg).unwrap());
    }

    #[test]
    fn weights_are_linear() {
        let w = LossWeights::default();
        let a = LossBreakdown::new(1.0, 2.0, 3.0, 4.0, 5.0, &w);
        let b = LossBreakdown::new(1.0, 2.0, 3.0, 4.0, 10.0, &w);
        assert!((b.total - a.total - 0.1 * 5.0).abs() < 1e-12);
        let expected = a.traj_recon + 1e-2 * a.traj_kl + 0.1 * a.floating + a.artic_recon + 1e-4 * a.artic_kl;
        assert!((a.total - expected).abs() < 1e-12);
        assert_eq!(LossBreakdown::new(0.0, 0.0, 0.0, 0.0, 0.0, &w).total, 0.0);
    }

    #[test]
    fn perfect_decode_with_zero_posterior_costs_nothing() {
        // zero heads decode identity deltas and zero articulation
        let cfg = small_config();
        let model = MotionModel::new(cfg.clone(), 4).unwrap();
        let mut clip = toy_clip(&cfg, 9);
        clip.deltas = vec![RigidTransform::IDENTITY; cfg.t_frames];
        clip.articulations = vec![ArticulationFrame::zeros(cfg.joints); cfg.t_frames + 1];
        let mut tape = Tape::with_params(&model.store);
        let obj = clip_objective(&mut tape, &model, &clip, &ClipReference::new(&clip), &ClipNoise::zeros(&model), &LossWeights::default(), None).unwrap();
        let b = obj.breakdown(&tape);
        assert_eq!(b.traj_recon, 0.0);
        assert_eq!(b.artic_recon, 0.0);
        assert!(b.floating < 1e-12);
        let w = LossWeights::default();
        let again = LossBreakdown::new(b.traj_recon, b.traj_kl, b.artic_recon, b.artic_kl, b.floating, &w);
        assert!((again.total - b.total).abs() < 1e-12);
    }

    #[test]
    fn tape_floating_matches_plain_floating() {
        let cfg = small_config();
        let mut model = MotionModel::new(cfg.clone(), 4).unwrap();
        let head = model.traj.decoder_head_weight();
        for (i, v) in model.store.get_mut(head).data_mut().iter_mut().enumerate() {
            *v = ((i * 31) % 17) as f64 * 0.01 - 0.08;
        }
        let clip = toy_clip(&cfg, 5);
        let reference = ClipReference::new(&clip);
        let mut tape = Tape::with_params(&model.store);
        let obj = clip_objective(&mut tape, &model, &clip, &reference, &ClipNoise::zeros(&model), &LossWeights::default(), None).unwrap();
        // rebuild the predicted trajectory by hand
        let mut tape2 = Tape::with_params(&model.store);
        let cond = model.traj_condition(&mut tape2, &SceneInputs::of_clip(&clip)).unwrap();
        let tau = model.tau(&mut tape2, cfg.t_frames).unwrap();
        let (mu, _) = model.traj_encode_with(&mut tape2, &clip.deltas, cond.var, tau).unwrap();
        let d = model.traj_decode(&mut tape2, mu, cond.var, tau).unwrap();
        let pred = integrate_trajectory(&clip.g0, &model.deltas_of(&tape2, &d));
        let plain = floating_loss(&clip.trajectory(), &pred, &clip.limb_points, &clip.bg_points).unwrap();
        assert!((tape.scalar(obj.floating) - plain).abs() < 1e-10);
        assert!(plain > 0.0);
    }

    fn end_to_end_error(lambda_cdd: f64, seed: u64) -> f64 {
        let mut cfg = small_config();
        cfg.norms = Normalizers { traj_out: [0.05, 0.05, 0.05, 0.05, 0.03, 0.03, 0.03], ..Normalizers::identity(cfg.joints) };
        let mut model = MotionModel::new(cfg.clone(), seed).unwrap();
        // zero heads would hide most of the network from the check
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for id in [model.traj.decoder_head_weight(), model.artic.decoder_head_weight()] {
            for v in model.store.get_mut(id).data_mut() {
                *v = rand::Rng::random_range(&mut rng, -0.3..0.3);
            }
        }
        let clip = toy_clip(&cfg, seed);
        let reference = ClipReference::new(&clip);
        let noise = ClipNoise::sample(&model, &mut rng);
        let weights = LossWeights { cdd: lambda_cdd, ..LossWeights::default() };
        let frozen = {
            let mut tape = Tape::with_params(&model.store);
            clip_objective(&mut tape, &model, &clip, &reference, &noise, &weights, None).unwrap().assignments
        };
        let to_ad = |e: MotionError| AutodiffError::Config(e.to_string());
        check_params(&model.store, 2, seed, 1e-4, |tape| {
            clip_objective(tape, &model, &clip, &reference, &noise, &weights, Some(&frozen)).map(|o| o.total).map_err(to_ad)
        })
        .unwrap()
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        for seed in 0..3 {
            let err = end_to_end_error(0.1, seed);
            assert!(err < 1e-2, "seed {seed}: {err}");
        }
        // floating term alone, weighted up so it dominates
        let err = end_to_end_error(50.0, 7);
        assert!(err < 1e-2, "{err}");
    }
}
