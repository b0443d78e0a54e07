use proptest::prelude::*;

use vpet::autodiff::{kl_diag_gaussian, Tape, Tensor};
use vpet::data::{augment, augment_with, random_augmentation, synthesize, DatasetSpec};
use vpet::geometry::{
    apply_points, center_distance, chamfer_one_sided, compose, NnIndex, PointCloud, RigidTransform, UnitQuat, Vec3,
};
use vpet::metrics::{floating_error, recon_error, OracleCopy};
use vpet::motion_vae::{extract_deltas, integrate_trajectory};
use vpet::skeleton::{
    forward_kinematics, gaussian_bones, pose_mesh, skinning_weights, ArticulationFrame, DEFAULT_TEMPERATURE,
};

use std::sync::OnceLock;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-r..r).prop_map(Vec3::from_array)
}

fn pose() -> impl Strategy<Value = RigidTransform> {
    (vec3(3.0), vec3(2.0)).prop_map(|(a, t)| RigidTransform::new(UnitQuat::from_axis_angle(a), t))
}

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(vec3(1.0), 1..max).prop_map(|p| PointCloud::new(p).unwrap())
}

fn close(a: Vec3, b: Vec3, tol: f64) -> bool {
    (a - b).norm() <= tol
}

fn small_dataset() -> &'static vpet::data::SyntheticDataset {
    static D: OnceLock<vpet::data::SyntheticDataset> = OnceLock::new();
    D.get_or_init(|| {
        synthesize(&DatasetSpec { scenes: 2, records: 4, clips: 16, t_frames: 16, record_frames: 120, ..Default::default() })
            .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compose_with_inverse_is_identity(p in pose(), x in vec3(5.0)) {
        let id = compose(&p, &p.inverse());
        prop_assert!(close(id.apply(x), x, 1e-9));
        prop_assert!(id.translation.norm() < 1e-9);
    }

    #[test]
    fn composition_matches_sequential_application(a in pose(), b in pose(), c in cloud(20)) {
        let lhs = apply_points(&compose(&a, &b), &c);
        let rhs = apply_points(&a, &apply_points(&b, &c));
        for (u, v) in lhs.points().iter().zip(rhs.points()) {
            prop_assert!(close(*u, *v, 1e-9));
        }
    }

    #[test]
    fn chamfer_vanishes_on_subsets(b in cloud(40), picks in prop::collection::vec(any::<prop::sample::Index>(), 1..20)) {
        let a = PointCloud::new(picks.iter().map(|i| b.points()[i.index(b.len())]).collect()).unwrap();
        prop_assert!(chamfer_one_sided(&a, &b).unwrap() <= 1e-12);
    }

    #[test]
    fn chamfer_is_positive_off_the_target(b in cloud(40), off in 0.01f64..1.0) {
        let far = PointCloud::new(vec![Vec3::new(2.0 + off, 0.0, 0.0)]).unwrap();
        prop_assert!(chamfer_one_sided(&far, &b).unwrap() > 0.0);
    }

    #[test]
    fn index_matches_exhaustive_scan(dst in cloud(80), queries in prop::collection::vec(vec3(1.5), 1..30)) {
        let index = NnIndex::build(&dst);
        for q in queries {
            let best = dst.points().iter().map(|p| (*p - q).norm()).fold(f64::INFINITY, f64::min);
            let (_, d) = index.nearest(q);
            prop_assert!((d - best).abs() <= 1e-12);
        }
    }

    #[test]
    fn delta_round_trip(traj in prop::collection::vec(pose(), 2..30)) {
        let back = integrate_trajectory(&traj[0], &extract_deltas(&traj));
        for (a, b) in traj.iter().zip(&back) {
            prop_assert!(close(a.translation, b.translation, 1e-9));
            prop_assert!(close(a.apply(Vec3::X), b.apply(Vec3::X), 1e-9));
        }
    }

    #[test]
    fn kl_is_nonnegative(mu in prop::collection::vec(-3.0f64..3.0, 1..12), seed in 0u64..1000) {
        let n = mu.len();
        let ls: Vec<f64> = (0..n).map(|i| ((seed as f64 + i as f64) * 0.37).sin() * 2.0).collect();
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::new(vec![1, n], mu.clone()).unwrap()).unwrap();
        let l = tape.constant(Tensor::new(vec![1, n], ls).unwrap()).unwrap();
        let kl = kl_diag_gaussian(&mut tape, m, l).unwrap();
        prop_assert!(tape.scalar(kl) >= 0.0);
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(vec![1, n])).unwrap();
        let kl0 = kl_diag_gaussian(&mut tape, z, z).unwrap();
        prop_assert_eq!(tape.scalar(kl0), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn skin_weights_are_convex(points in prop::collection::vec(vec3(0.5), 1..60)) {
        let d = small_dataset();
        let skel = d.quadruped.skinned.skeleton();
        let w = skinning_weights(&points, &gaussian_bones(skel), DEFAULT_TEMPERATURE);
        for row in w.rows() {
            prop_assert!(row.iter().all(|&x| x >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn rest_pose_is_rigid(g in pose()) {
        let d = small_dataset();
        let skel = d.quadruped.skinned.skeleton();
        let zero = ArticulationFrame::zeros(skel.num_joints());
        for b in forward_kinematics(skel, &zero).unwrap().transforms() {
            prop_assert!(close(b.apply(Vec3::new(0.3, -0.1, 0.2)), Vec3::new(0.3, -0.1, 0.2), 1e-12));
        }
        let mesh = d.quadruped.skinned.mesh();
        let posed = pose_mesh(mesh, skel, &zero, &g).unwrap();
        for (v, p) in mesh.vertices().iter().zip(posed.vertices()) {
            prop_assert!(close(g.apply(*v), *p, 1e-9));
        }
    }

    #[test]
    fn augmentation_preserves_contact_metrics(k in 0usize..16, seed in any::<u64>()) {
        let clip = &small_dataset().clips[k];
        let moved = augment(clip, seed);
        prop_assert_eq!(moved.d_fg, clip.d_fg);
        let a = floating_error(&clip.trajectory(), clip, false).unwrap();
        let b = floating_error(&moved.trajectory(), &moved, false).unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "{} {}", a, b);
        // D_fg recomputed from scratch in the augmented frame
        let q = random_augmentation(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed), 0.5);
        let again = augment_with(clip, &q);
        let quad = &small_dataset().quadruped;
        let posed = quad.skinned.pose(&again.articulations[0], &again.g0).unwrap();
        prop_assert!((center_distance(&posed, &again.bg_points).unwrap() - clip.d_fg).abs() <= 1e-9);
    }

    #[test]
    fn oracle_reconstruction_is_exact(k in 0usize..16) {
        prop_assert_eq!(recon_error(&OracleCopy, &small_dataset().clips[k]).unwrap(), 0.0);
    }
}

#[test]
fn synthesis_is_a_pure_function_of_its_spec() {
    let spec = DatasetSpec { scenes: 2, records: 4, clips: 16, t_frames: 16, record_frames: 120, ..Default::default() };
    assert_eq!(synthesize(&spec).unwrap().clips, small_dataset().clips);
}
