use crate::error::{Error, Result};
use crate::model::{CenterRole, ModelConfig};
use crate::nn::AdamConfig;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Everything a run depends on. Serialized verbatim into checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many optimizer steps; 0 means no cap.
    pub max_steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub image_size: usize,
    pub downsample: usize,
    pub channels: usize,
    pub heads: usize,
    pub layers: usize,
    pub classes: usize,
    pub blocks_per_stage: usize,
    pub no_csa: bool,
    pub no_isa: bool,
    pub center_role: CenterRole,
    pub attn_scaling: bool,
    pub clahe: bool,
    pub augment: bool,
    /// σ of the extra noise added to every training triplet's center slice.
    pub center_noise: f32,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub loss_log: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        RunConfig {
            seed: 0,
            epochs: 50,
            batch_size: 8,
            max_steps: 0,
            lr: 1e-3,
            weight_decay: 1e-5,
            image_size: m.image_size,
            downsample: m.downsample,
            channels: m.channels,
            heads: m.heads,
            layers: m.layers,
            classes: m.classes,
            blocks_per_stage: m.blocks_per_stage,
            no_csa: false,
            no_isa: false,
            center_role: CenterRole::KeyValue,
            attn_scaling: false,
            clahe: false,
            augment: true,
            center_noise: 0.0,
            manifest: None,
            checkpoint: None,
            loss_log: None,
            metrics: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("invalid value {v:?} for {key}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean {v:?} for {key}"))),
    }
}

fn path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "max_steps" => self.max_steps = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "weight_decay" => self.weight_decay = parse_value(key, v)?,
            "image_size" => self.image_size = parse_value(key, v)?,
            "downsample" => self.downsample = parse_value(key, v)?,
            "channels" => self.channels = parse_value(key, v)?,
            "heads" => self.heads = parse_value(key, v)?,
            "layers" => self.layers = parse_value(key, v)?,
            "classes" => self.classes = parse_value(key, v)?,
            "blocks_per_stage" => self.blocks_per_stage = parse_value(key, v)?,
            "no_csa" => self.no_csa = parse_bool(key, v)?,
            "no_isa" => self.no_isa = parse_bool(key, v)?,
            "center_role" => self.center_role = v.parse()?,
            "attn_scaling" => self.attn_scaling = parse_bool(key, v)?,
            "clahe" => self.clahe = parse_bool(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "center_noise" => self.center_noise = parse_value(key, v)?,
            "manifest" => self.manifest = path(v),
            "checkpoint" => self.checkpoint = path(v),
            "loss_log" => self.loss_log = path(v),
            "metrics" => self.metrics = path(v),
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Flat `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        kv("seed", self.seed.to_string());
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("max_steps", self.max_steps.to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("weight_decay", format!("{:?}", self.weight_decay));
        kv("image_size", self.image_size.to_string());
        kv("downsample", self.downsample.to_string());
        kv("channels", self.channels.to_string());
        kv("heads", self.heads.to_string());
        kv("layers", self.layers.to_string());
        kv("classes", self.classes.to_string());
        kv("blocks_per_stage", self.blocks_per_stage.to_string());
        kv("no_csa", self.no_csa.to_string());
        kv("no_isa", self.no_isa.to_string());
        kv("center_role", self.center_role.to_string());
        kv("attn_scaling", self.attn_scaling.to_string());
        kv("clahe", self.clahe.to_string());
        kv("augment", self.augment.to_string());
        kv("center_noise", format!("{:?}", self.center_noise));
        kv("manifest", p(&self.manifest));
        kv("checkpoint", p(&self.checkpoint));
        kv("loss_log", p(&self.loss_log));
        kv("metrics", p(&self.metrics));
        s
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            image_size: self.image_size,
            downsample: self.downsample,
            channels: self.channels,
            heads: self.heads,
            layers: self.layers,
            classes: self.classes,
            blocks_per_stage: self.blocks_per_stage,
            use_csa: !self.no_csa,
            use_isa: !self.no_isa,
            center_role: self.center_role,
            attn_scaling: self.attn_scaling,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("lr must be positive and weight_decay non-negative"));
        }
        if !(self.center_noise >= 0.0) {
            return Err(Error::config("center_noise must be non-negative"));
        }
        Ok(())
    }

    /// Fails unless `other` builds the same network and preprocessing.
    pub fn check_compatible(&self, other: &RunConfig) -> Result<()> {
        if self.model() != other.model() || self.clahe != other.clahe {
            return Err(Error::config(format!(
                "checkpoint was trained with {:?} (clahe {}), requested {:?} (clahe {})",
                self.model(),
                self.clahe,
                other.model(),
                other.clahe
            )));
        }
        Ok(())
    }
}
