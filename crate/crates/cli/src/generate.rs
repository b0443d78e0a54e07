use std::path::PathBuf;

use anyhow::Context;
use serde::Serialize;

use vpet::autodiff::Checkpoint;
use vpet::geometry::obj::{load_obj, save_obj};
use vpet::geometry::{Recenter, RigidTransform};
use vpet::motion_vae::{generate, MotionModel};
use vpet::skeleton::{forward_kinematics, ArticulationFrame, Skeleton, SkinnedMesh, DEFAULT_TEMPERATURE};

use crate::exit::{fail, WithCode, DATA, MODEL, USAGE};
use crate::train::SCENE_DIAGONAL_KEY;

const FPS: f64 = 30.0;

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    ckpt: PathBuf,
    /// canonical foreground mesh
    #[arg(long)]
    fg: PathBuf,
    /// skeleton JSON matching the foreground mesh
    #[arg(long)]
    skel: PathBuf,
    /// background mesh; recentered and rescaled to the training scene size
    #[arg(long)]
    bg: PathBuf,
    /// start pose "qw qx qy qz tx ty tz" in the normalized background frame
    #[arg(long, allow_hyphen_values = true)]
    start: String,
    /// number of generated steps; defaults to the trained clip length
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "motion")]
    out: PathBuf,
}

#[derive(Serialize)]
struct MotionFile {
    frames: usize,
    seed: u64,
    fps: f64,
    /// factor the background was scaled by after recentering
    bg_scale: f64,
    /// translation applied to the background before scaling
    bg_offset: [f64; 3],
    d_fg: f64,
    /// `G_0 … G_T` as `[qw, qx, qy, qz, tx, ty, tz]`
    trajectory: Vec<[f64; 7]>,
    /// `A_0 … A_T`, axis-angle per joint, flattened
    articulations: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct AnimationFile {
    fps: f64,
    bones: usize,
    /// per frame, the world transform of every bone
    frames: Vec<Vec<[f64; 7]>>,
}

fn parse_start(text: &str) -> anyhow::Result<RigidTransform> {
    let vals: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| fail(USAGE, format!("--start: {e}")))?;
    let arr: [f64; 7] = vals.try_into().map_err(|v: Vec<f64>| fail(USAGE, format!("--start needs 7 numbers, got {}", v.len())))?;
    RigidTransform::from_array7(arr).ok_or_else(|| fail(USAGE, "--start is not a valid pose"))
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let g0 = parse_start(&a.start)?;
    let ck = Checkpoint::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display())).code(DATA)?;
    let model = MotionModel::from_checkpoint(&ck).code(DATA)?;
    let diagonal = ck
        .get(SCENE_DIAGONAL_KEY)
        .map(|t| t.data()[0])
        .ok_or_else(|| fail(DATA, format!("{} does not record the training scene size", a.ckpt.display())))?;
    let fg = load_obj(&a.fg).with_context(|| format!("loading {}", a.fg.display())).code(DATA)?;
    let skel = Skeleton::load(&a.skel).with_context(|| format!("loading {}", a.skel.display())).code(DATA)?;
    let bg = load_obj(&a.bg).with_context(|| format!("loading {}", a.bg.display())).code(DATA)?;
    let frames = a.frames.unwrap_or(model.config.t_frames);
    if frames == 0 {
        return Err(fail(USAGE, "--frames must be positive"));
    }

    let (centered, offset) = bg.recenter();
    let size = centered.bbox_diagonal();
    if !(size > 0.0) {
        return Err(fail(MODEL, "background mesh has no extent"));
    }
    let scale = diagonal / size;
    let bg = centered.map_vertices(|v| v * scale);

    let skinned = SkinnedMesh::new(fg.clone(), skel.clone(), DEFAULT_TEMPERATURE).code(MODEL)?;
    let a0 = ArticulationFrame::zeros(skel.num_joints());
    let motion = generate(&model, &fg, &skel, &bg, &g0, &a0, frames, a.seed).code(MODEL)?;

    crate::create_dir(&a.out.join("frames"))?;
    let mut animation = AnimationFile { fps: FPS, bones: skel.num_bones(), frames: Vec::with_capacity(frames + 1) };
    for (t, (g, art)) in motion.trajectory.iter().zip(&motion.articulations).enumerate() {
        let posed = skinned.pose(art, g).code(MODEL)?;
        if posed.vertices().iter().any(|v| !v.is_finite()) {
            return Err(fail(MODEL, format!("frame {t} has non-finite vertices")));
        }
        let p = a.out.join("frames").join(format!("frame_{t:04}.obj"));
        save_obj(&posed, &p).with_context(|| format!("writing {}", p.display()))?;
        let bones = forward_kinematics(&skel, art).code(MODEL)?;
        animation.frames.push(bones.transforms().iter().map(|b| g.compose(b).to_array7()).collect());
    }
    save_obj(&bg, a.out.join("background.obj")).context("writing background.obj")?;

    let file = MotionFile {
        frames,
        seed: a.seed,
        fps: FPS,
        bg_scale: scale,
        bg_offset: offset.to_array(),
        d_fg: motion.d_fg,
        trajectory: motion.trajectory.iter().map(RigidTransform::to_array7).collect(),
        articulations: motion.articulations.iter().map(ArticulationFrame::to_flat).collect(),
    };
    std::fs::write(a.out.join("motion.json"), serde_json::to_string(&file)? + "\n").context("writing motion.json")?;
    std::fs::write(a.out.join("animation.json"), serde_json::to_string(&animation)? + "\n")
        .context("writing animation.json")?;

    let echo = format!(
        "command=generate\nckpt={}\nfg={}\nskel={}\nbg={}\nstart={}\nframes={frames}\nseed={}\nbg_scale={scale}\n",
        a.ckpt.display(),
        a.fg.display(),
        a.skel.display(),
        a.bg.display(),
        g0.to_array7().map(|v| v.to_string()).join(" "),
        a.seed,
    );
    crate::write_echo(&a.out, &echo)?;
    println!("wrote {} frames to {}", frames + 1, a.out.display());
    Ok(())
}
