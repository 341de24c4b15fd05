//! Plain-text `key=value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown keys and malformed values are rejected with the line
//! number.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fdiv::FDivergence;
use crate::nets::GeneratorSpec;
use crate::synthdeg::{DegradationKind, DegradationSpec};
use crate::uda::{AuditConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub latent_dim: usize,
    pub image_size: usize,
    pub train: TrainConfig,
    pub degradation: DegradationSpec,
    pub n_src: usize,
    pub n_trg: usize,
    /// Paired latents in the evaluation split.
    pub n_eval: usize,
    pub audit_steps: usize,
    pub audit_lr: f64,
    pub audit_pairs: usize,
    /// Edits sweep `α` over `edit_alphas` evenly spaced values in
    /// `[-edit_alpha_max, edit_alpha_max]`.
    pub edit_alpha_max: f64,
    pub edit_alphas: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            latent_dim: 8,
            image_size: 16,
            train: TrainConfig::default(),
            degradation: DegradationSpec::new(DegradationKind::Mask, 0),
            n_src: 2000,
            n_trg: 2000,
            n_eval: 500,
            audit_steps: 500,
            audit_lr: 1e-3,
            audit_pairs: 2000,
            edit_alpha_max: 2.0,
            edit_alphas: 5,
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Every recognised key, in file order.
pub const KEYS: &[&str] = &[
    "latent_dim",
    "image_size",
    "lambda1",
    "lambda2",
    "lambda3",
    "lambda_uda",
    "divergence",
    "batch_size",
    "iterations",
    "inner_steps",
    "lr_encoder",
    "lr_hhat",
    "hhat_jitter",
    "log_every",
    "seed",
    "degradation",
    "rain_streaks",
    "rain_length",
    "rain_angle_min",
    "rain_angle_max",
    "rain_intensity",
    "mask_steps",
    "mask_radius_min",
    "mask_radius_max",
    "mask_fill",
    "downsample_factor",
    "n_src",
    "n_trg",
    "n_eval",
    "audit_steps",
    "audit_lr",
    "audit_pairs",
    "edit_alpha_max",
    "edit_alphas",
    "out_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Result<String> {
        let t = &self.train;
        let p = &self.degradation.params;
        Ok(match key {
            "latent_dim" => self.latent_dim.to_string(),
            "image_size" => self.image_size.to_string(),
            "lambda1" => t.lambda1.to_string(),
            "lambda2" => t.lambda2.to_string(),
            "lambda3" => t.lambda3.to_string(),
            "lambda_uda" => t.lambda_uda.to_string(),
            "divergence" => t.divergence.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "iterations" => t.iterations.to_string(),
            "inner_steps" => t.inner_steps.to_string(),
            "lr_encoder" => t.lr_encoder.to_string(),
            "lr_hhat" => t.lr_hhat.to_string(),
            "hhat_jitter" => t.hhat_jitter.to_string(),
            "log_every" => t.log_every.to_string(),
            "seed" => t.seed.to_string(),
            "degradation" => self.degradation.kind.to_string(),
            "rain_streaks" => p.rain.streaks.to_string(),
            "rain_length" => p.rain.length.to_string(),
            "rain_angle_min" => p.rain.angle_deg.0.to_string(),
            "rain_angle_max" => p.rain.angle_deg.1.to_string(),
            "rain_intensity" => p.rain.intensity.to_string(),
            "mask_steps" => p.mask.steps.to_string(),
            "mask_radius_min" => p.mask.radius.0.to_string(),
            "mask_radius_max" => p.mask.radius.1.to_string(),
            "mask_fill" => p.mask.fill.to_string(),
            "downsample_factor" => p.downsample.factor.to_string(),
            "n_src" => self.n_src.to_string(),
            "n_trg" => self.n_trg.to_string(),
            "n_eval" => self.n_eval.to_string(),
            "audit_steps" => self.audit_steps.to_string(),
            "audit_lr" => self.audit_lr.to_string(),
            "audit_pairs" => self.audit_pairs.to_string(),
            "edit_alpha_max" => self.edit_alpha_max.to_string(),
            "edit_alphas" => self.edit_alphas.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        let p = &mut self.degradation.params;
        match key {
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "image_size" => self.image_size = parse(key, v)?,
            "lambda1" => t.lambda1 = parse(key, v)?,
            "lambda2" => t.lambda2 = parse(key, v)?,
            "lambda3" => t.lambda3 = parse(key, v)?,
            "lambda_uda" => t.lambda_uda = parse(key, v)?,
            "divergence" => t.divergence = v.parse::<FDivergence>()?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "iterations" => t.iterations = parse(key, v)?,
            "inner_steps" => t.inner_steps = parse(key, v)?,
            "lr_encoder" => t.lr_encoder = parse(key, v)?,
            "lr_hhat" => t.lr_hhat = parse(key, v)?,
            "hhat_jitter" => t.hhat_jitter = parse(key, v)?,
            "log_every" => t.log_every = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "degradation" => self.degradation.kind = v.parse()?,
            "rain_streaks" => p.rain.streaks = parse(key, v)?,
            "rain_length" => p.rain.length = parse(key, v)?,
            "rain_angle_min" => p.rain.angle_deg.0 = parse(key, v)?,
            "rain_angle_max" => p.rain.angle_deg.1 = parse(key, v)?,
            "rain_intensity" => p.rain.intensity = parse(key, v)?,
            "mask_steps" => p.mask.steps = parse(key, v)?,
            "mask_radius_min" => p.mask.radius.0 = parse(key, v)?,
            "mask_radius_max" => p.mask.radius.1 = parse(key, v)?,
            "mask_fill" => p.mask.fill = parse(key, v)?,
            "downsample_factor" => p.downsample.factor = parse(key, v)?,
            "n_src" => self.n_src = parse(key, v)?,
            "n_trg" => self.n_trg = parse(key, v)?,
            "n_eval" => self.n_eval = parse(key, v)?,
            "audit_steps" => self.audit_steps = parse(key, v)?,
            "audit_lr" => self.audit_lr = parse(key, v)?,
            "audit_pairs" => self.audit_pairs = parse(key, v)?,
            "edit_alpha_max" => self.edit_alpha_max = parse(key, v)?,
            "edit_alphas" => self.edit_alphas = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every key with its current value, one per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k}={}", self.get(k).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.generator()?;
        self.train.validate()?;
        if self.n_src == 0 || self.n_eval == 0 {
            return Err(Error::Config("n_src and n_eval must be > 0".into()));
        }
        if self.train.lambda_uda != 0.0 && self.n_trg == 0 {
            return Err(Error::Config(
                "n_trg must be > 0 unless lambda_uda = 0".into(),
            ));
        }
        if self.edit_alphas < 2 || !(self.edit_alpha_max > 0.0) {
            return Err(Error::Config(
                "edit sweep needs edit_alphas >= 2 and edit_alpha_max > 0".into(),
            ));
        }
        let r = self.degradation.params.mask.radius;
        if r.0 > r.1 {
            return Err(Error::Config(
                "mask_radius_min exceeds mask_radius_max".into(),
            ));
        }
        let a = self.degradation.params.rain.angle_deg;
        if a.0 > a.1 {
            return Err(Error::Config(
                "rain_angle_min exceeds rain_angle_max".into(),
            ));
        }
        Ok(())
    }

    pub fn generator(&self) -> Result<GeneratorSpec> {
        GeneratorSpec::new(self.latent_dim, self.image_size)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn audit(&self) -> AuditConfig {
        let mut a = AuditConfig::new(self.train.clone(), self.degradation.clone());
        a.ascent_steps = self.audit_steps;
        a.ascent_lr = self.audit_lr;
        a.joint_pairs = self.audit_pairs;
        a
    }

    pub fn alphas(&self) -> Vec<f64> {
        let n = self.edit_alphas;
        (0..n)
            .map(|i| -self.edit_alpha_max + 2.0 * self.edit_alpha_max * i as f64 / (n - 1) as f64)
            .collect()
    }
}
