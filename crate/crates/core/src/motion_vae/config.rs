//! Model and training settings, read from and echoed to `key=value` text.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::encoders::{PoseNormalizer, EMBED_DIM};

use super::MotionError;

/// Dataset statistics the networks are scaled by. Fixed at model creation and
/// stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizers {
    /// input normalization of delta rows
    pub delta: PoseNormalizer,
    /// per-component output scale of the trajectory head (quaternion, translation)
    pub traj_out: [f64; 7],
    /// per-component output scale of the articulation head
    pub artic_out: Vec<f64>,
}

impl Normalizers {
    pub fn identity(joints: usize) -> Normalizers {
        Normalizers { delta: PoseNormalizer::default(), traj_out: [1.0; 7], artic_out: vec![1.0; 3 * joints] }
    }
}

/// Network shape and scaling.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub t_frames: usize,
    pub joints: usize,
    pub latent_g: usize,
    pub latent_a: usize,
    pub embed: usize,
    pub hidden: usize,
    pub n_fg: usize,
    pub n_bg: usize,
    pub use_dfg: bool,
    pub norms: Normalizers,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t_frames: 32,
            joints: 16,
            latent_g: 64,
            latent_a: 64,
            embed: EMBED_DIM,
            hidden: 128,
            n_fg: 256,
            n_bg: 1024,
            use_dfg: true,
            norms: Normalizers::identity(16),
        }
    }
}

/// Optimization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lambda_g_kl: f64,
    pub lambda_a_kl: f64,
    pub lambda_cdd: f64,
    pub recon_weight: f64,
    pub augment: bool,
    /// half-extent of the horizontal augmentation shift
    pub aug_shift: f64,
    pub checkpoint_every: usize,
    pub threads: usize,
    /// stop after this many optimizer steps (0 = no limit)
    pub max_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            batch: 16,
            epochs: 50,
            seed: 0,
            lambda_g_kl: 1e-2,
            lambda_a_kl: 1e-4,
            lambda_cdd: 0.1,
            recon_weight: 1.0,
            augment: true,
            aug_shift: 0.5,
            checkpoint_every: 10,
            threads: 1,
            max_steps: 0,
        }
    }
}

/// Everything a training run is configured by.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, MotionError> {
    value.trim().parse().map_err(|_| MotionError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, MotionError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(MotionError::Config(format!("{key}: expected true/false, got {other:?}"))),
    }
}

impl Config {
    /// Parses `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Config, MotionError> {
        let mut cfg = Config::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| MotionError::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), MotionError> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "t_frames" => m.t_frames = parse(key, value)?,
            "joints" => m.joints = parse(key, value)?,
            "latent_g" => m.latent_g = parse(key, value)?,
            "latent_a" => m.latent_a = parse(key, value)?,
            "embed" => m.embed = parse(key, value)?,
            "hidden" => m.hidden = parse(key, value)?,
            "n_fg" => m.n_fg = parse(key, value)?,
            "n_bg" => m.n_bg = parse(key, value)?,
            "use_dfg" => m.use_dfg = parse_bool(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "batch" => t.batch = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "lambda_g_kl" => t.lambda_g_kl = parse(key, value)?,
            "lambda_a_kl" => t.lambda_a_kl = parse(key, value)?,
            "lambda_cdd" => t.lambda_cdd = parse(key, value)?,
            "recon_weight" => t.recon_weight = parse(key, value)?,
            "augment" => t.augment = parse_bool(key, value)?,
            "aug_shift" => t.aug_shift = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "threads" => t.threads = parse(key, value)?,
            "max_steps" => t.max_steps = parse(key, value)?,
            _ => return Err(MotionError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        let m = &self.model;
        let t = &self.train;
        let positive = [
            ("t_frames", m.t_frames),
            ("joints", m.joints),
            ("latent_g", m.latent_g),
            ("latent_a", m.latent_a),
            ("embed", m.embed),
            ("hidden", m.hidden),
            ("n_fg", m.n_fg),
            ("n_bg", m.n_bg),
            ("batch", t.batch),
            ("threads", t.threads),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(MotionError::Config(format!("{k} must be positive")));
        }
        if !(t.lr > 0.0) {
            return Err(MotionError::Config("lr must be positive".into()));
        }
        for (k, v) in [("lambda_g_kl", t.lambda_g_kl), ("lambda_a_kl", t.lambda_a_kl), ("lambda_cdd", t.lambda_cdd), ("recon_weight", t.recon_weight), ("aug_shift", t.aug_shift)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(MotionError::Config(format!("{k} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// The fully resolved settings as `key=value` lines, in a fixed order.
    pub fn to_kv(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let pairs: BTreeMap<&str, String> = [
            ("t_frames", m.t_frames.to_string()),
            ("joints", m.joints.to_string()),
            ("latent_g", m.latent_g.to_string()),
            ("latent_a", m.latent_a.to_string()),
            ("embed", m.embed.to_string()),
            ("hidden", m.hidden.to_string()),
            ("n_fg", m.n_fg.to_string()),
            ("n_bg", m.n_bg.to_string()),
            ("use_dfg", m.use_dfg.to_string()),
            ("lr", t.lr.to_string()),
            ("batch", t.batch.to_string()),
            ("epochs", t.epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("lambda_g_kl", t.lambda_g_kl.to_string()),
            ("lambda_a_kl", t.lambda_a_kl.to_string()),
            ("lambda_cdd", t.lambda_cdd.to_string()),
            ("recon_weight", t.recon_weight.to_string()),
            ("augment", t.augment.to_string()),
            ("aug_shift", t.aug_shift.to_string()),
            ("checkpoint_every", t.checkpoint_every.to_string()),
            ("threads", t.threads.to_string()),
            ("max_steps", t.max_steps.to_string()),
        ]
        .into_iter()
        .collect();
        let mut out = String::new();
        for (k, v) in pairs {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }
}
