//! Conditioning encoders: a PointNet-style set encoder, Fourier + MLP
//! embedders for poses, deltas and articulations, and the fixed layouts of the
//! two condition vectors.

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{fourier_embed, fourier_features, AutodiffError, Mlp, ParamStore, Tape, Tensor, Var};
use crate::geometry::{PointCloud, RigidTransform, Vec3};

pub const EMBED_DIM: usize = 128;
pub const POSE_FREQS: usize = 6;
pub const DFG_FREQS: usize = 4;
pub const POINT_WIDTHS: [usize; 4] = [3, 64, 128, EMBED_DIM];

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("cannot encode an empty point set")]
    EmptyCloud,
    #[error("{what}: expected {expected} columns, got {got}")]
    Dim { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Shared per-point MLP followed by a column-wise max over points.
#[derive(Clone, Debug)]
pub struct PointEncoder {
    mlp: Mlp,
}

impl PointEncoder {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Result<Self, EncoderError> {
        if widths.first() != Some(&3) {
            return Err(EncoderError::Dim { what: "point encoder input", expected: 3, got: widths[0] });
        }
        Ok(PointEncoder { mlp: Mlp::new(store, name, widths, false, rng)? })
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    /// `[1, out_dim]` embedding of the points.
    pub fn encode_points(&self, tape: &mut Tape, points: &[Vec3]) -> Result<Var, EncoderError> {
        if points.is_empty() {
            return Err(EncoderError::EmptyCloud);
        }
        let flat = points.iter().flat_map(|p| p.to_array()).collect();
        let x = tape.constant(Tensor::new(vec![points.len(), 3], flat)?)?;
        let h = self.mlp.forward(tape, x)?;
        Ok(tape.max_pool_rows(h))
    }
}

pub fn pointnet_encode(tape: &mut Tape, enc: &PointEncoder, cloud: &PointCloud) -> Result<Var, EncoderError> {
    enc.encode_points(tape, cloud.points())
}

/// Row-wise Fourier features followed by an MLP.
#[derive(Clone, Debug)]
pub struct Embedder {
    mlp: Mlp,
    in_dim: usize,
    freqs: usize,
}

impl Embedder {
    /// `in_dim` raw inputs per row, `hidden` width, `out` output width.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        freqs: usize,
        hidden: usize,
        out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, EncoderError> {
        let mlp = Mlp::new(store, name, &[in_dim * (2 * freqs + 1), hidden, out], false, rng)?;
        Ok(Embedder { mlp, in_dim, freqs })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    /// `[n, in_dim] -> [n, out]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, EncoderError> {
        let got = tape.value(x).cols();
        if got != self.in_dim {
            return Err(EncoderError::Dim { what: "embedder input", expected: self.in_dim, got });
        }
        let f = fourier_embed(tape, x, self.freqs)?;
        Ok(self.mlp.forward(tape, f)?)
    }

    /// Embeds plain rows.
    pub fn forward_rows(&self, tape: &mut Tape, rows: &[Vec<f64>]) -> Result<Var, EncoderError> {
        let x = tape.constant(Tensor::from_rows(rows)?)?;
        self.forward(tape, x)
    }
}

/// Quaternion (w ≥ 0) followed by translation.
pub fn pose_row(g: &RigidTransform) -> [f64; 7] {
    g.to_array7()
}

/// Affine per-component normalization `(x − shift) / scale` for 7-vector
/// pose rows.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseNormalizer {
    pub shift: [f64; 7],
    pub scale: [f64; 7],
}

impl Default for PoseNormalizer {
    fn default() -> Self {
        PoseNormalizer { shift: [0.0; 7], scale: [1.0; 7] }
    }
}

impl PoseNormalizer {
    pub fn apply(&self, row: [f64; 7]) -> Vec<f64> {
        (0..7).map(|i| (row[i] - self.shift[i]) / self.scale[i]).collect()
    }
}

/// `z_G0`: Fourier-embedded 7-vector of the pose, then an MLP. `[1, out]`.
pub fn embed_pose(tape: &mut Tape, emb: &Embedder, g: &RigidTransform) -> Result<Var, EncoderError> {
    emb.forward_rows(tape, &[pose_row(g).to_vec()])
}

/// One embedding row per pose. `[n, out]`.
pub fn embed_poses(tape: &mut Tape, emb: &Embedder, poses: &[RigidTransform]) -> Result<Var, EncoderError> {
    let rows: Vec<Vec<f64>> = poses.iter().map(|g| pose_row(g).to_vec()).collect();
    emb.forward_rows(tape, &rows)
}

/// Per-step embedding of normalized deltas. `[T, out]`.
pub fn embed_delta_sequence(
    tape: &mut Tape,
    emb: &Embedder,
    deltas: &[RigidTransform],
    norm: &PoseNormalizer,
) -> Result<Var, EncoderError> {
    let rows: Vec<Vec<f64>> = deltas.iter().map(|d| norm.apply(pose_row(d))).collect();
    emb.forward_rows(tape, &rows)
}

/// Named column blocks of a condition vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditionLayout {
    parts: Vec<(&'static str, usize)>,
}

impl ConditionLayout {
    /// `[z_G0 | z_limb | z_bg | fourier(D_fg)]`.
    pub fn trajectory(embed: usize, dfg_freqs: usize) -> Self {
        ConditionLayout { parts: vec![("z_g0", embed), ("z_limb", embed), ("z_bg", embed), ("d_fg", 2 * dfg_freqs + 1)] }
    }

    /// Per-step `[z_Gt | z_G0 | z_A0]`.
    pub fn articulation(embed: usize) -> Self {
        ConditionLayout { parts: vec![("z_gt", embed), ("z_g0", embed), ("z_a0", embed)] }
    }

    pub fn dim(&self) -> usize {
        self.parts.iter().map(|p| p.1).sum()
    }

    pub fn parts(&self) -> &[(&'static str, usize)] {
        &self.parts
    }

    /// Column range of a named block.
    pub fn range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for &(n, len) in &self.parts {
            if n == name {
                return Some(start..start + len);
            }
            start += len;
        }
        None
    }
}

/// A condition tensor and its layout.
#[derive(Clone, Debug)]
pub struct ConditionVector {
    pub var: Var,
    pub layout: ConditionLayout,
}

/// `c_G` as a `[1, 3·embed + 2K + 1]` row. `None` for `d_fg` zeroes its block,
/// which is how the D_fg ablation keeps the layout unchanged.
pub fn build_condition_traj(
    tape: &mut Tape,
    z_g0: Var,
    z_limb: Var,
    z_bg: Var,
    d_fg: Option<f64>,
) -> Result<ConditionVector, EncoderError> {
    let embed = tape.value(z_g0).cols();
    for (what, v) in [("z_limb", z_limb), ("z_bg", z_bg)] {
        let got = tape.value(v).cols();
        if got != embed || tape.value(v).rows() != 1 {
            return Err(EncoderError::Dim { what, expected: embed, got });
        }
    }
    let layout = ConditionLayout::trajectory(embed, DFG_FREQS);
    let feats = match d_fg {
        Some(d) => fourier_features(&[d], DFG_FREQS),
        None => vec![0.0; 2 * DFG_FREQS + 1],
    };
    let d = tape.constant(Tensor::row(feats))?;
    let var = tape.concat_cols(&[z_g0, z_limb, z_bg, d])?;
    Ok(ConditionVector { var, layout })
}

/// `c_A` as `[T, 3·embed]`: row `t` holds the embedding of `G_{t+1}`, then
/// the start pose and start articulation embeddings.
pub fn build_condition_artic(
    tape: &mut Tape,
    z_g_steps: Var,
    z_g0: Var,
    z_a0: Var,
) -> Result<ConditionVector, EncoderError> {
    let embed = tape.value(z_g_steps).cols();
    let t = tape.value(z_g_steps).rows();
    for (what, v) in [("z_g0", z_g0), ("z_a0", z_a0)] {
        let got = tape.value(v).cols();
        if got != embed || tape.value(v).rows() != 1 {
            return Err(EncoderError::Dim { what, expected: embed, got });
        }
    }
    let g0 = tape.repeat_rows(z_g0, t)?;
    let a0 = tape.repeat_rows(z_a0, t)?;
    let var = tape.concat_cols(&[z_g_steps, g0, a0])?;
    Ok(ConditionVector { var, layout: ConditionLayout::articulation(embed) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::check_params;
    use crate::geometry::UnitQuat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random(), rng.random_range(-1.0..1.0))).collect()
    }

    fn encoder(seed: u64) -> (ParamStore, PointEncoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = PointEncoder::new(&mut store, "pn", &POINT_WIDTHS, &mut rng).unwrap();
        (store, enc)
    }

    fn encode(store: &ParamStore, enc: &PointEncoder, pts: &[Vec3]) -> Vec<f64> {
        let mut tape = Tape::with_params(store);
        let v = enc.encode_points(&mut tape, pts).unwrap();
        tape.value(v).data().to_vec()
    }

    #[test]
    fn pointnet_is_permutation_invariant() {
        let (store, enc) = encoder(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = random_points(&mut rng, 100);
        let base = encode(&store, &enc, &pts);
        assert_eq!(base.len(), EMBED_DIM);
        let mut shuffled = pts.clone();
        shuffled.reverse();
        shuffled.rotate_left(37);
        assert_eq!(encode(&store, &enc, &shuffled), base);
        let doubled: Vec<Vec3> = pts.iter().flat_map(|&p| [p, p]).collect();
        assert_eq!(encode(&store, &enc, &doubled), base);
    }

    #[test]
    fn pointnet_rejects_empty() {
        let (store, enc) = encoder(1);
        let mut tape = Tape::with_params(&store);
        assert!(matches!(enc.encode_points(&mut tape, &[]), Err(EncoderError::EmptyCloud)));
    }

    #[test]
    fn pointnet_parameter_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..10 {
            let mut store = ParamStore::new();
            let enc = PointEncoder::new(&mut store, "pn", &[3, 16, 12, 8], &mut rng).unwrap();
            let pts = random_points(&mut rng, 24);
            let w = crate::autodiff::standard_normal(&mut rng, 1, 8);
            let err = check_params(&store, 20, trial, 1e-4, |tape| {
                let e = enc.encode_points(tape, &pts).map_err(|e| AutodiffError::Config(e.to_string()))?;
                let wv = tape.constant(w.clone())?;
                let p = tape.mul(e, wv)?;
                Ok(tape.sum(p))
            })
            .unwrap();
            assert!(err < 1e-3, "trial {trial}: {err}");
        }
    }

    fn pose_embedder(seed: u64) -> (ParamStore, Embedder) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = Embedder::new(&mut store, "pose", 7, POSE_FREQS, EMBED_DIM, EMBED_DIM, &mut rng).unwrap();
        (store, emb)
    }

    #[test]
    fn pose_embedding_is_deterministic() {
        let (store, emb) = pose_embedder(4);
        let g = RigidTransform::new(UnitQuat::new(0.8, 0.1, 0.5, 0.0), Vec3::new(0.3, 0.2, -0.4));
        let run = || {
            let mut tape = Tape::with_params(&store);
            let v = embed_pose(&mut tape, &emb, &g).unwrap();
            tape.value(v).clone()
        };
        let a = run();
        assert_eq!(a.shape(), &[1, EMBED_DIM]);
        assert_eq!(a, run());
    }

    #[test]
    fn zero_final_layer_gives_zero_pose_embedding() {
        let (mut store, emb) = pose_embedder(4);
        let last = emb.mlp().layers.last().unwrap();
        for id in [last.w, last.b] {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let mut tape = Tape::with_params(&store);
        let v = embed_pose(&mut tape, &emb, &RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0))).unwrap();
        assert!(tape.value(v).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pose_embedder_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let mut store = ParamStore::new();
            let emb = Embedder::new(&mut store, "pose", 7, 2, 10, 6, &mut rng).unwrap();
            let g = RigidTransform::new(
                UnitQuat::new(rng.random(), rng.random(), rng.random(), rng.random()),
                Vec3::new(rng.random(), rng.random(), rng.random()),
            );
            let err = check_params(&store, 20, trial, 1e-4, |tape| {
                let e = embed_pose(tape, &emb, &g).map_err(|e| AutodiffError::Config(e.to_string()))?;
                let s = tape.square(e);
                Ok(tape.sum(s))
            })
            .unwrap();
            assert!(err < 1e-3, "trial {trial}: {err}");
        }
    }

    #[test]
    fn delta_sequence_rows_follow_steps() {
        let (store, emb) = pose_embedder(6);
        let norm = PoseNormalizer::default();
        let ident = vec![RigidTransform::IDENTITY; 5];
        let mut tape = Tape::with_params(&store);
        let v = embed_delta_sequence(&mut tape, &emb, &ident, &norm).unwrap();
        let t = tape.value(v).clone();
        assert_eq!(t.rows(), 5);
        for r in 1..5 {
            assert_eq!(t.row_slice(r), t.row_slice(0));
        }
        let steps: Vec<RigidTransform> = (0..4)
            .map(|i| RigidTransform::new(UnitQuat::from_yaw(0.1 * i as f64), Vec3::new(0.0, 0.0, 0.01 * i as f64)))
            .collect();
        let perm = [2, 0, 3, 1];
        let permuted: Vec<RigidTransform> = perm.iter().map(|&i| steps[i]).collect();
        let a = embed_delta_sequence(&mut tape, &emb, &steps, &norm).unwrap();
        let b = embed_delta_sequence(&mut tape, &emb, &permuted, &norm).unwrap();
        for (r, &i) in perm.iter().enumerate() {
            assert_eq!(tape.value(b).row_slice(r), tape.value(a).row_slice(i));
        }
    }

    #[test]
    fn delta_embedder_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..10 {
            let mut store = ParamStore::new();
            let emb = Embedder::new(&mut store, "delta", 7, 3, 10, 6, &mut rng).unwrap();
            let deltas: Vec<RigidTransform> = (0..4)
                .map(|_| {
                    RigidTransform::new(
                        UnitQuat::from_axis_angle(Vec3::new(rng.random(), rng.random(), rng.random()) * 0.1),
                        Vec3::new(rng.random(), rng.random(), rng.random()) * 0.05,
                    )
                })
                .collect();
            let norm = PoseNormalizer { shift: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.02], scale: [0.01, 0.05, 0.05, 0.05, 0.02, 0.02, 0.02] };
            let err = check_params(&store, 20, trial, 1e-4, |tape| {
                let e = embed_delta_sequence(tape, &emb, &deltas, &norm).map_err(|e| AutodiffError::Config(e.to_string()))?;
                let s = tape.tanh(e);
                Ok(tape.sum(s))
            })
            .unwrap();
            assert!(err < 1e-3, "trial {trial}: {err}");
        }
    }

    #[test]
    fn trajectory_condition_layout() {
        let layout = ConditionLayout::trajectory(EMBED_DIM, DFG_FREQS);
        assert_eq!(layout.dim(), 393);
        assert_eq!(layout.range("z_bg"), Some(256..384));
        assert_eq!(layout.range("d_fg"), Some(384..393));
        assert_eq!(layout, ConditionLayout::trajectory(EMBED_DIM, DFG_FREQS));
    }

    #[test]
    fn zeroing_z_bg_touches_only_its_slice() {
        let mut tape = Tape::new();
        let mk = |tape: &mut Tape, v: f64| tape.constant(Tensor::filled(vec![1, EMBED_DIM], v)).unwrap();
        let (g0, limb, bg, zero) = (mk(&mut tape, 0.5), mk(&mut tape, -0.25), mk(&mut tape, 2.0), mk(&mut tape, 0.0));
        let full = build_condition_traj(&mut tape, g0, limb, bg, Some(0.17)).unwrap();
        let cut = build_condition_traj(&mut tape, g0, limb, zero, Some(0.17)).unwrap();
        let (a, b) = (tape.value(full.var).data().to_vec(), tape.value(cut.var).data().to_vec());
        assert_eq!(a.len(), full.layout.dim());
        let bg_range = full.layout.range("z_bg").unwrap();
        for i in 0..a.len() {
            if bg_range.contains(&i) {
                assert_eq!((a[i], b[i]), (2.0, 0.0));
            } else {
                assert_eq!(a[i], b[i]);
            }
        }
        let no_dfg = build_condition_traj(&mut tape, g0, limb, bg, None).unwrap();
        let d = tape.value(no_dfg.var).data();
        assert!(d[384..].iter().all(|&x| x == 0.0));
        assert_eq!(&d[..384], &a[..384]);
    }

    #[test]
    fn articulation_condition_shape() {
        let mut tape = Tape::new();
        let steps = tape.constant(Tensor::filled(vec![5, 4], 1.0)).unwrap();
        let g0 = tape.constant(Tensor::filled(vec![1, 4], 2.0)).unwrap();
        let a0 = tape.constant(Tensor::filled(vec![1, 4], 3.0)).unwrap();
        let c = build_condition_artic(&mut tape, steps, g0, a0).unwrap();
        let t = tape.value(c.var);
        assert_eq!(t.shape(), &[5, 12]);
        assert_eq!(t.row_slice(4), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
        let bad = tape.constant(Tensor::filled(vec![1, 3], 0.0)).unwrap();
        assert!(build_condition_artic(&mut tape, steps, bad, a0).is_err());
    }
}
