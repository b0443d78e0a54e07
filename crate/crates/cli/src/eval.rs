use std::path::PathBuf;

use anyhow::Context;

use vpet::autodiff::Checkpoint;
use vpet::data::read_dataset_file;
use vpet::metrics::{evaluate_suite, EvalConfig, MetricsError, OracleCopy, DEFAULT_SAMPLES};
use vpet::motion_vae::MotionModel;

use crate::exit::{fail, WithCode, DATA, USAGE};

#[derive(clap::Args)]
pub struct Args {
    /// checkpoint to evaluate; not needed with --oracle-copy
    #[arg(long, required_unless_present = "oracle_copy")]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// samples per clip
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// keep jump clips in the floating error
    #[arg(long)]
    include_jumps: bool,
    /// evaluate a stand-in that returns the ground truth
    #[arg(long)]
    oracle_copy: bool,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    if a.n < 2 {
        return Err(fail(USAGE, format!("--n must be at least 2, got {}", a.n)));
    }
    let clips = read_dataset_file(&a.data).with_context(|| format!("reading {}", a.data.display())).code(DATA)?;
    let cfg = EvalConfig { n: a.n, seed: a.seed, exclude_jumps: !a.include_jumps, threads: crate::thread_cap(std::thread::available_parallelism().map_or(1, |n| n.get()))? };
    let report = if a.oracle_copy {
        evaluate_suite(&OracleCopy, &clips, &cfg)
    } else {
        let path = a.ckpt.as_ref().expect("required unless oracle copy");
        let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display())).code(DATA)?;
        let model = MotionModel::from_checkpoint(&ck).code(DATA)?;
        let (t, j) = (model.config.t_frames, model.config.joints);
        if let Some((i, c)) = clips.iter().enumerate().find(|(_, c)| c.t_frames() != t || c.num_joints() != j) {
            return Err(fail(
                DATA,
                format!("clip {i} has {} frames and {} joints, the model expects {t} and {j}", c.t_frames(), c.num_joints()),
            ));
        }
        evaluate_suite(&model, &clips, &cfg)
    };
    let report = report.map_err(|e| match e {
        MetricsError::EmptyDataset | MetricsError::AllFramesExcluded | MetricsError::Length { .. } => {
            fail(DATA, e)
        }
        other => other.into(),
    })?;

    crate::create_dir(&a.out)?;
    let echo = format!(
        "command=eval\nckpt={}\ndata={}\nn={}\nseed={}\nexclude_jumps={}\noracle_copy={}\nthreads={}\n",
        a.ckpt.as_ref().map_or(String::new(), |p| p.display().to_string()),
        a.data.display(),
        cfg.n,
        cfg.seed,
        cfg.exclude_jumps,
        a.oracle_copy,
        cfg.threads,
    );
    crate::write_echo(&a.out, &echo)?;
    std::fs::write(a.out.join("report.json"), report.to_json() + "\n").context("writing report.json")?;
    std::fs::write(a.out.join("report.csv"), report.csv()).context("writing report.csv")?;
    print!("{}", report.csv());
    Ok(())
}
