use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{center_distance, relative, PointCloud, RigidTransform, UnitQuat, Vec3};
use crate::motion_vae::{BehaviorTag, MotionClip};

use super::{DataError, MotionRecord, Quadruped, Scene};

/// Half width of the horizontal box augmentation translations are drawn from.
pub const DEFAULT_AUGMENT_SHIFT: f64 = 0.5;

/// Cuts a random `t`-step window out of `record`.
///
/// `limb_points` are the canonical limb samples of `quad`; `scene` is the
/// scene the record was generated in.
pub fn sample_clip(
    record: &MotionRecord,
    scene: &Scene,
    quad: &Quadruped,
    limb_points: &PointCloud,
    t: usize,
    seed: u64,
) -> Result<MotionClip, DataError> {
    if t == 0 || record.len() < t {
        return Err(DataError::RecordTooShort { len: record.len(), need: t.max(1) });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = rng.random_range(0..=record.len() - t);
    let window = &record.trajectory[s..=s + t];
    let deltas: Vec<RigidTransform> = window.windows(2).map(|w| relative(&w[0], &w[1])).collect();
    let articulations = record.articulations[s..=s + t].to_vec();
    let posed = quad.skinned.pose(&articulations[0], &window[0])?;
    let d_fg = center_distance(&posed, &scene.points)?;
    let tag = majority_tag(&record.tags[s..=s + t]);
    Ok(MotionClip::new(window[0], deltas, articulations, limb_points.clone(), scene.points.clone(), d_fg, tag)?)
}

/// Most frequent tag; ties go to jump, then walk.
fn majority_tag(tags: &[BehaviorTag]) -> BehaviorTag {
    let count = |t| tags.iter().filter(|&&x| x == t).count();
    [BehaviorTag::Jump, BehaviorTag::Walk, BehaviorTag::Idle]
        .into_iter()
        .rev()
        .max_by_key(|&t| count(t))
        .unwrap_or(BehaviorTag::Idle)
}

/// Moves the scene so its vertex centroid is at the origin and shifts the
/// motion by the same translation.
pub fn normalize_record(record: &MotionRecord, scene: &Scene) -> (MotionRecord, Scene) {
    let shift = -scene.mesh.centroid();
    let mut out = record.clone();
    for g in &mut out.trajectory {
        g.translation = g.translation + shift;
    }
    (out, scene.translated(shift))
}

/// Random rotation about the vertical axis followed by a horizontal
/// translation in `[-shift, shift]²`.
pub fn random_augmentation(rng: &mut impl Rng, shift: f64) -> RigidTransform {
    let yaw = rng.random_range(0.0..TAU);
    let (x, z) = if shift > 0.0 { (rng.random_range(-shift..=shift), rng.random_range(-shift..=shift)) } else { (0.0, 0.0) };
    RigidTransform::new(UnitQuat::from_yaw(yaw), Vec3::new(x, 0.0, z))
}

/// Applies `q` to the start pose and the background. Deltas, articulations,
/// limb points and `D_fg` are relative quantities and stay as they are.
pub fn augment_with(clip: &MotionClip, q: &RigidTransform) -> MotionClip {
    let mut out = clip.clone();
    out.g0 = q.compose(&clip.g0).canonical();
    out.bg_points = clip.bg_points.transformed(q);
    out
}

pub fn augment(clip: &MotionClip, seed: u64) -> MotionClip {
    let q = random_augmentation(&mut ChaCha8Rng::seed_from_u64(seed), DEFAULT_AUGMENT_SHIFT);
    augment_with(clip, &q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_motion, generate_scene, Behavior, MotionSpec, QuadrupedSpec, SceneSpec, Start};
    use crate::geometry::chamfer_one_sided;
    use crate::motion_vae::integrate_trajectory;

    fn setup(behavior: Behavior, frames: usize) -> (MotionRecord, Scene, Quadruped, PointCloud) {
        let mut spec = SceneSpec::floor_only(1.0, 1.0);
        spec.cuboids.push(crate::data::Cuboid::on_floor(0.5, 0.5, Vec3::new(0.2, 0.15, 0.2)));
        let scene = generate_scene(&spec, 2048, 3).unwrap();
        let quad = Quadruped::build(&QuadrupedSpec::default()).unwrap();
        let start = Start { x: -0.5, z: -0.5, heading: 0.3 };
        let rec = generate_motion(&scene, &quad, behavior, frames, Some(start), &MotionSpec::default(), 5).unwrap();
        let limb = quad.limb_points(64).unwrap();
        (rec, scene, quad, limb)
    }

    #[test]
    fn full_length_clip_reproduces_record() {
        let (rec, scene, quad, limb) = setup(Behavior::Walk, 40);
        let clip = sample_clip(&rec, &scene, &quad, &limb, 40, 1).unwrap();
        let traj = integrate_trajectory(&clip.g0, &clip.deltas);
        for (a, b) in traj.iter().zip(&rec.trajectory) {
            assert!((a.translation - b.translation).norm() < 1e-9);
            let p = Vec3::new(0.3, -0.2, 0.5);
            assert!((a.apply(p) - b.apply(p)).norm() < 1e-9);
        }
        assert_eq!(clip.articulations, rec.articulations);
        assert!(matches!(
            sample_clip(&rec, &scene, &quad, &limb, 41, 1),
            Err(DataError::RecordTooShort { len: 40, need: 41 })
        ));
    }

    #[test]
    fn idle_clip_has_identity_deltas() {
        let (rec, scene, quad, limb) = setup(Behavior::Idle, 30);
        let clip = sample_clip(&rec, &scene, &quad, &limb, 10, 4).unwrap();
        for d in &clip.deltas {
            let a = d.to_array7();
            let id = RigidTransform::IDENTITY.to_array7();
            assert!(a.iter().zip(id).all(|(x, y)| (x - y).abs() < 1e-12), "{a:?}");
        }
        assert_eq!(clip.tag, BehaviorTag::Idle);
    }

    #[test]
    fn window_is_seeded() {
        let (rec, scene, quad, limb) = setup(Behavior::Walk, 60);
        let a = sample_clip(&rec, &scene, &quad, &limb, 8, 7).unwrap();
        assert_eq!(a, sample_clip(&rec, &scene, &quad, &limb, 8, 7).unwrap());
        let differs = (0..10).any(|s| sample_clip(&rec, &scene, &quad, &limb, 8, s).unwrap().g0 != a.g0);
        assert!(differs);
    }

    #[test]
    fn majority_tag_prefers_jump_on_ties() {
        use BehaviorTag::*;
        assert_eq!(majority_tag(&[Walk, Walk, Idle]), Walk);
        assert_eq!(majority_tag(&[Walk, Jump]), Jump);
        assert_eq!(majority_tag(&[Idle, Walk]), Walk);
    }

    #[test]
    fn normalization_undoes_a_scene_shift() {
        let scene = generate_scene(&SceneSpec::floor_only(1.0, 1.0), 80, 0).unwrap();
        let quad = Quadruped::build(&QuadrupedSpec::default()).unwrap();
        let rec = generate_motion(&scene, &quad, Behavior::Walk, 20, None, &MotionSpec::default(), 0).unwrap();
        let shift = Vec3::new(3.0, 0.0, 0.0);
        let moved_scene = scene.translated(shift);
        let mut moved = rec.clone();
        for g in &mut moved.trajectory {
            g.translation = g.translation + shift;
        }
        let (n, s) = normalize_record(&moved, &moved_scene);
        for (a, b) in n.trajectory.iter().zip(&moved.trajectory) {
            assert!((a.translation - (b.translation - shift)).norm() < 1e-12);
        }
        assert!(s.mesh.centroid().norm() < 1e-12);
    }

    #[test]
    fn normalization_preserves_contact_distances() {
        let (rec, scene, _, limb) = setup(Behavior::Walk, 30);
        let (n, s) = normalize_record(&rec, &scene);
        assert!(s.mesh.centroid().norm() < 1e-12);
        for (g, h) in rec.trajectory.iter().zip(&n.trajectory) {
            let a = chamfer_one_sided(&limb.transformed(g), &scene.points).unwrap();
            let b = chamfer_one_sided(&limb.transformed(h), &s.points).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn centered_scene_is_unchanged() {
        let scene = generate_scene(&SceneSpec::floor_only(1.0, 1.0), 50, 0).unwrap();
        let quad = Quadruped::build(&QuadrupedSpec::default()).unwrap();
        let rec = generate_motion(&scene, &quad, Behavior::Walk, 10, None, &MotionSpec::default(), 0).unwrap();
        let (r, s) = normalize_record(&rec, &scene);
        assert_eq!(r, rec);
        assert_eq!(s.points, scene.points);
    }

    #[test]
    fn augmentation_keeps_contact_distances() {
        let (rec, scene, quad, limb) = setup(Behavior::Mixed, 80);
        let clip = sample_clip(&rec, &scene, &quad, &limb, 20, 2).unwrap();
        let same = augment_with(&clip, &RigidTransform::IDENTITY);
        assert!(same.g0.to_array7().iter().zip(clip.g0.to_array7()).all(|(a, b)| (a - b).abs() < 1e-15));
        assert_eq!(MotionClip { g0: clip.g0, ..same }, clip);
        let moved = augment(&clip, 11);
        assert_eq!(moved.d_fg, clip.d_fg);
        assert_eq!(moved.deltas, clip.deltas);
        let (ta, tb) = (integrate_trajectory(&clip.g0, &clip.deltas), integrate_trajectory(&moved.g0, &moved.deltas));
        for (g, h) in ta.iter().zip(&tb) {
            let a = chamfer_one_sided(&clip.limb_points.transformed(g), &clip.bg_points).unwrap();
            let b = chamfer_one_sided(&moved.limb_points.transformed(h), &moved.bg_points).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }
}
