use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use vpet::data::{synthesize, write_dataset_file, DatasetSpec};
use vpet::geometry::obj::save_obj;

use crate::exit::{WithCode, USAGE};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    scenes: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    records: u64,
    #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u64).range(1..))]
    clips: u64,
    /// clip length T
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    frames: u64,
    /// frames per generated record
    #[arg(long, default_value_t = 300)]
    record_frames: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    seed: u64,
    clips: usize,
    t_frames: usize,
    mean_scene_diagonal: f64,
    files: Vec<FileEntry>,
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let spec = DatasetSpec {
        scenes: a.scenes as usize,
        records: a.records as usize,
        clips: a.clips as usize,
        t_frames: a.frames as usize,
        record_frames: a.record_frames as usize,
        seed: a.seed,
        ..DatasetSpec::default()
    };
    spec.validate().code(USAGE)?;
    let data = synthesize(&spec).context("synthesizing dataset")?;
    crate::create_dir(&a.out)?;

    let mut files = Vec::new();
    for (i, scene) in data.scenes.iter().enumerate() {
        let name = format!("scene_{i:03}.obj");
        save_obj(&scene.mesh, a.out.join(&name)).with_context(|| format!("writing {name}"))?;
        files.push(name);
    }
    save_obj(data.quadruped.mesh(), a.out.join("quadruped.obj")).context("writing quadruped.obj")?;
    files.push("quadruped.obj".into());
    data.quadruped.skeleton().save(a.out.join("skeleton.json")).context("writing skeleton.json")?;
    files.push("skeleton.json".into());
    write_dataset_file(a.out.join("dataset.jsonl"), &data.clips).context("writing dataset.jsonl")?;
    files.push("dataset.jsonl".into());

    let mut echo = String::new();
    for (k, v) in [
        ("command", "synth".to_string()),
        ("scenes", spec.scenes.to_string()),
        ("records", spec.records.to_string()),
        ("clips", spec.clips.to_string()),
        ("frames", spec.t_frames.to_string()),
        ("record_frames", spec.record_frames.to_string()),
        ("n_fg", spec.n_fg.to_string()),
        ("n_bg", spec.n_bg.to_string()),
        ("seed", spec.seed.to_string()),
    ] {
        writeln!(echo, "{k}={v}").unwrap();
    }
    crate::write_echo(&a.out, &echo)?;
    files.push("config.txt".into());

    let manifest = Manifest {
        seed: spec.seed,
        clips: data.clips.len(),
        t_frames: spec.t_frames,
        mean_scene_diagonal: data.mean_scene_diagonal(),
        files: files.iter().map(|f| checksum(&a.out, f)).collect::<anyhow::Result<_>>()?,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(a.out.join("manifest.json"), text + "\n").context("writing manifest.json")?;
    println!("wrote {} clips from {} scenes to {}", data.clips.len(), data.scenes.len(), a.out.display());
    Ok(())
}

fn checksum(dir: &Path, name: &str) -> anyhow::Result<FileEntry> {
    let bytes = std::fs::read(dir.join(name)).with_context(|| format!("reading back {name}"))?;
    let digest = Sha256::digest(&bytes);
    let sha256 = digest.iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    });
    Ok(FileEntry { path: name.to_string(), bytes: bytes.len() as u64, sha256 })
}
