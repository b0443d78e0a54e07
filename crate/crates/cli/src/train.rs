use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;

use vpet::autodiff::{Checkpoint, Tensor};
use vpet::data::read_dataset_file;
use vpet::motion_vae::{Config, MotionClip, Trainer, LOSS_CSV_HEADER};

use crate::exit::{fail, WithCode, DATA, USAGE};

/// Checkpoint entry holding the mean bounding-box diagonal of the training
/// backgrounds; `generate` rescales unseen rooms to it.
pub const SCENE_DIAGONAL_KEY: &str = "data.scene_diagonal";

#[derive(clap::Args)]
pub struct Args {
    /// dataset written by `vpet synth`
    #[arg(long)]
    data: PathBuf,
    /// key=value config file; defaults are used for missing keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// extra key=value override, applied after the config file
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    lambda_cdd: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// continue from a checkpoint written by an earlier run
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn resolve_config(a: &Args) -> anyhow::Result<Config> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Config::parse(&text).code(USAGE)?
        }
        None => Config::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| fail(USAGE, format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).code(USAGE)?;
    }
    if let Some(v) = a.lambda_cdd {
        cfg.train.lambda_cdd = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    cfg.train.threads = crate::thread_cap(cfg.train.threads)?;
    cfg.validate().code(USAGE)?;
    Ok(cfg)
}

fn scene_diagonal(clips: &[MotionClip]) -> f64 {
    let sum: f64 = clips
        .iter()
        .map(|c| {
            let (lo, hi) = c.bg_points.bounds();
            (hi - lo).norm()
        })
        .sum();
    sum / clips.len().max(1) as f64
}

fn checkpoint(tr: &Trainer, diagonal: f64) -> Checkpoint {
    let mut ck = tr.to_checkpoint();
    ck.push(SCENE_DIAGONAL_KEY, Tensor::new(vec![1], vec![diagonal]).expect("one value"));
    ck
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let mut cfg = resolve_config(&a)?;
    let clips = read_dataset_file(&a.data).with_context(|| format!("reading {}", a.data.display())).code(DATA)?;
    if clips.is_empty() {
        return Err(fail(DATA, format!("{} holds no clips", a.data.display())));
    }
    let mut trainer = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p).with_context(|| format!("loading {}", p.display())).code(DATA)?;
            let tr = Trainer::from_checkpoint(&ck, cfg.train.clone()).code(DATA)?;
            cfg.model = tr.model.config.clone();
            tr
        }
        None => Trainer::for_dataset(&clips, &cfg).code(DATA)?,
    };
    let diagonal = scene_diagonal(&clips);
    let data = trainer.prepare(clips).code(DATA)?;

    crate::create_dir(&a.out)?;
    let mut echo = format!("command=train\ndata={}\n", a.data.display());
    if let Some(p) = &a.resume {
        echo += &format!("resume={}\nresume_epoch={}\nresume_step={}\n", p.display(), trainer.epoch, trainer.step);
    }
    echo += &cfg.to_kv();
    crate::write_echo(&a.out, &echo)?;

    let csv_path = a.out.join("loss.csv");
    let mut kept = format!("{LOSS_CSV_HEADER}\n");
    if a.resume.is_some() {
        // rows past the resumed epoch belong to the run being replaced
        if let Ok(old) = std::fs::read_to_string(&csv_path) {
            for line in old.lines().skip(1) {
                let epoch = line.split(',').next().and_then(|e| e.parse::<usize>().ok());
                if epoch.is_some_and(|e| e <= trainer.epoch) {
                    kept += line;
                    kept.push('\n');
                }
            }
        }
    }
    let mut csv = File::create(&csv_path)
        .and_then(|mut f| f.write_all(kept.as_bytes()).map(|_| f))
        .with_context(|| format!("writing {}", csv_path.display()))?;

    let every = cfg.train.checkpoint_every;
    let out = a.out.clone();
    trainer.fit::<anyhow::Error>(&data, |tr, rec| {
        writeln!(csv, "{}", rec.loss.csv_row(rec.epoch))?;
        csv.flush()?;
        if every > 0 && rec.epoch % every == 0 {
            let p = out.join(format!("epoch_{:04}.ckpt", rec.epoch));
            checkpoint(tr, diagonal).save(&p).with_context(|| format!("writing {}", p.display()))?;
        }
        eprintln!("epoch {} step {} total {:.6}", rec.epoch, tr.step, rec.loss.total);
        Ok(())
    })?;
    let final_path = a.out.join("final.ckpt");
    checkpoint(&trainer, diagonal).save(&final_path).with_context(|| format!("writing {}", final_path.display()))?;
    println!("trained {} epochs ({} steps); checkpoint at {}", trainer.epoch, trainer.step, final_path.display());
    Ok(())
}
