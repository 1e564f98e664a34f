//! Architecture and training hyperparameters, plus the flat `key = value`
//! run-config file the CLI consumes. Unknown keys are a hard error; missing
//! keys fall back to the documented defaults.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};

/// Attention stage selection inside each residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionVariant {
    /// Grouped strip and square depth-wise kernels, plain and dilated.
    MmLka,
    /// Classic large-kernel attention: DW5, DW-D5 (dilation 3), 1x1.
    Lka13,
    /// Attention disabled (pass-through).
    None,
}

impl AttentionVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionVariant::MmLka => "MM_LKA",
            AttentionVariant::Lka13 => "LKA13",
            AttentionVariant::None => "NONE",
        }
    }

    pub fn parse(s: &str) -> Result<AttentionVariant> {
        match s {
            "MM_LKA" => Ok(AttentionVariant::MmLka),
            "LKA13" => Ok(AttentionVariant::Lka13),
            "NONE" => Ok(AttentionVariant::None),
            other => Err(Error::config(format!(
                "attention_variant must be MM_LKA, LKA13 or NONE, got '{other}'"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Upscaling factor, one of 2, 3, 4.
    pub scale: usize,
    /// Feature width C, divisible by 4.
    pub channels: usize,
    /// Number of residual blocks M.
    pub num_blocks: usize,
    /// How many times the input image is stacked along channels.
    pub replicate_n: usize,
    /// Depth-wise kernel size inside StarConv (kz, odd).
    pub star_kernel: usize,
    /// Strip kernel length k in the attention groups (odd).
    pub strip_kernel: usize,
    /// Square kernel size s in the attention groups (odd).
    pub square_kernel: usize,
    /// Dilation d of the dilated attention branches.
    pub dilation: usize,
    /// Width of each distilled slice.
    pub distill_channels: usize,
    /// Distillation stage on (StarConv distillation) or off (plain conv).
    pub enable_sdm: bool,
    pub attention: AttentionVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            scale: 2,
            channels: 56,
            num_blocks: 7,
            replicate_n: 1,
            star_kernel: 3,
            strip_kernel: 11,
            square_kernel: 7,
            dilation: 3,
            distill_channels: 28,
            enable_sdm: true,
            attention: AttentionVariant::MmLka,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.scale, 2 | 3 | 4) {
            return Err(Error::config(format!("scale must be 2, 3 or 4, got {}", self.scale)));
        }
        if self.channels == 0 || self.channels % 4 != 0 {
            return Err(Error::config(format!(
                "channels must be positive and divisible by 4, got {}",
                self.channels
            )));
        }
        if self.num_blocks == 0 {
            return Err(Error::config("num_blocks must be positive"));
        }
        if self.replicate_n == 0 {
            return Err(Error::config("replicate_n must be positive"));
        }
        if self.dilation == 0 {
            return Err(Error::config("dilation must be positive"));
        }
        for (name, k) in [
            ("star_kernel", self.star_kernel),
            ("strip_kernel", self.strip_kernel),
            ("square_kernel", self.square_kernel),
        ] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::config(format!("{name} must be odd, got {k}")));
            }
        }
        if self.distill_channels == 0 || self.distill_channels >= self.channels {
            return Err(Error::config(format!(
                "distill_channels must be in 1..channels, got {} (channels {})",
                self.distill_channels, self.channels
            )));
        }
        Ok(())
    }

    /// Largest effective kernel extent used anywhere in the network.
    pub fn max_effective_extent(&self) -> usize {
        let attention = match self.attention {
            AttentionVariant::MmLka => {
                let strip = self.strip_kernel + (self.strip_kernel - 1) * (self.dilation - 1);
                let square = self.square_kernel + (self.square_kernel - 1) * (self.dilation - 1);
                strip.max(square)
            }
            AttentionVariant::Lka13 => 5 + 4 * 2, // DW-D-Conv5 at dilation 3
            AttentionVariant::None => 1,
        };
        [self.star_kernel, attention, 3].into_iter().max().unwrap()
    }
}

/// Optimizer, EMA, schedule and sampling settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub ema_decay: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-3,
            beta1: 0.98,
            beta2: 0.92,
            beta3: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
            ema_decay: 0.999,
            iterations: 1_000_000,
            batch_size: 64,
            patch_size: 64,
            seed: 0,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2), ("beta3", self.beta3)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.ema_decay >= 0.0 && self.ema_decay <= 1.0) {
            return Err(Error::config(format!("ema_decay must lie in [0, 1], got {}", self.ema_decay)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.patch_size < model.max_effective_extent() {
            return Err(Error::config(format!(
                "patch_size {} is smaller than the largest effective kernel extent {}",
                self.patch_size,
                model.max_effective_extent()
            )));
        }
        Ok(())
    }
}

/// Fully resolved run configuration: architecture, training and paths.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data_root: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data_root: PathBuf::from("data"),
            out_dir: PathBuf::from("run"),
        }
    }
}

/// Every key the run-config file accepts, in canonical echo order.
pub const CONFIG_KEYS: [&str; 25] = [
    "scale",
    "channels",
    "num_blocks",
    "replicate_n",
    "star_kernel",
    "strip_kernel",
    "square_kernel",
    "dilation",
    "distill_channels",
    "attention_variant",
    "enable_sdm",
    "lr",
    "beta1",
    "beta2",
    "beta3",
    "eps",
    "weight_decay",
    "ema_decay",
    "iterations",
    "batch_size",
    "patch_size",
    "seed",
    "deterministic",
    "data_root",
    "out_dir",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::config(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!("key '{key}': expected true or false, got '{value}'"))),
    }
}

impl RunConfig {
    /// Parse the flat `key = value` format. Lines that are empty or start
    /// with `#` are skipped. Unknown and duplicate keys are hard errors.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let Some(&canon) = CONFIG_KEYS.iter().find(|&&k| k == key) else {
                return Err(Error::config(format!("line {}: unknown key '{key}'", lineno + 1)));
            };
            if seen.contains(&canon) {
                return Err(Error::config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
            seen.push(canon);
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "scale" => self.model.scale = parse_num(key, value)?,
            "channels" => self.model.channels = parse_num(key, value)?,
            "num_blocks" => self.model.num_blocks = parse_num(key, value)?,
            "replicate_n" => self.model.replicate_n = parse_num(key, value)?,
            "star_kernel" => self.model.star_kernel = parse_num(key, value)?,
            "strip_kernel" => self.model.strip_kernel = parse_num(key, value)?,
            "square_kernel" => self.model.square_kernel = parse_num(key, value)?,
            "dilation" => self.model.dilation = parse_num(key, value)?,
            "distill_channels" => self.model.distill_channels = parse_num(key, value)?,
            "attention_variant" => self.model.attention = AttentionVariant::parse(value)?,
            "enable_sdm" => self.model.enable_sdm = parse_bool(key, value)?,
            "lr" => self.train.lr = parse_num(key, value)?,
            "beta1" => self.train.beta1 = parse_num(key, value)?,
            "beta2" => self.train.beta2 = parse_num(key, value)?,
            "beta3" => self.train.beta3 = parse_num(key, value)?,
            "eps" => self.train.eps = parse_num(key, value)?,
            "weight_decay" => self.train.weight_decay = parse_num(key, value)?,
            "ema_decay" => self.train.ema_decay = parse_num(key, value)?,
            "iterations" => self.train.iterations = parse_num(key, value)?,
            "batch_size" => self.train.batch_size = parse_num(key, value)?,
            "patch_size" => self.train.patch_size = parse_num(key, value)?,
            "seed" => self.train.seed = parse_num(key, value)?,
            "deterministic" => self.train.deterministic = parse_bool(key, value)?,
            "data_root" => self.data_root = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => unreachable!("key checked against CONFIG_KEYS"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(&self.model)
    }

    /// Canonical echo of the fully resolved configuration. Feeding the text
    /// back through [`RunConfig::parse`] reproduces this config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scale = {}", self.model.scale);
        let _ = writeln!(s, "channels = {}", self.model.channels);
        let _ = writeln!(s, "num_blocks = {}", self.model.num_blocks);
        let _ = writeln!(s, "replicate_n = {}", self.model.replicate_n);
        let _ = writeln!(s, "star_kernel = {}", self.model.star_kernel);
        let _ = writeln!(s, "strip_kernel = {}", self.model.strip_kernel);
        let _ = writeln!(s, "square_kernel = {}", self.model.square_kernel);
        let _ = writeln!(s, "dilation = {}", self.model.dilation);
        let _ = writeln!(s, "distill_channels = {}", self.model.distill_channels);
        let _ = writeln!(s, "attention_variant = {}", self.model.attention.as_str());
        let _ = writeln!(s, "enable_sdm = {}", self.model.enable_sdm);
        let _ = writeln!(s, "lr = {}", self.train.lr);
        let _ = writeln!(s, "beta1 = {}", self.train.beta1);
        let _ = writeln!(s, "beta2 = {}", self.train.beta2);
        let _ = writeln!(s, "beta3 = {}", self.train.beta3);
        let _ = writeln!(s, "eps = {}", self.train.eps);
        let _ = writeln!(s, "weight_decay = {}", self.train.weight_decay);
        let _ = writeln!(s, "ema_decay = {}", self.train.ema_decay);
        let _ = writeln!(s, "iterations = {}", self.train.iterations);
        let _ = writeln!(s, "batch_size = {}", self.train.batch_size);
        let _ = writeln!(s, "patch_size = {}", self.train.patch_size);
        let _ = writeln!(s, "seed = {}", self.train.seed);
        let _ = writeln!(s, "deterministic = {}", self.train.deterministic);
        let _ = writeln!(s, "data_root = {}", self.data_root.display());
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        s
    }
}

/// Serialize just the architecture block, used inside checkpoints.
pub fn model_config_to_text(cfg: &ModelConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scale = {}", cfg.scale);
    let _ = writeln!(s, "channels = {}", cfg.channels);
    let _ = writeln!(s, "num_blocks = {}", cfg.num_blocks);
    let _ = writeln!(s, "replicate_n = {}", cfg.replicate_n);
    let _ = writeln!(s, "star_kernel = {}", cfg.star_kernel);
    let _ = writeln!(s, "strip_kernel = {}", cfg.strip_kernel);
    let _ = writeln!(s, "square_kernel = {}", cfg.square_kernel);
    let _ = writeln!(s, "dilation = {}", cfg.dilation);
    let _ = writeln!(s, "distill_channels = {}", cfg.distill_channels);
    let _ = writeln!(s, "attention_variant = {}", cfg.attention.as_str());
    let _ = writeln!(s, "enable_sdm = {}", cfg.enable_sdm);
    s
}

/// Parse the architecture block embedded in a checkpoint.
pub fn model_config_from_text(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!("model config: bad line '{line}'")));
        };
        let (key, value) = (key.trim(), value.trim());
        match key {
            "scale" => cfg.scale = parse_num(key, value)?,
            "channels" => cfg.channels = parse_num(key, value)?,
            "num_blocks" => cfg.num_blocks = parse_num(key, value)?,
            "replicate_n" => cfg.replicate_n = parse_num(key, value)?,
            "star_kernel" => cfg.star_kernel = parse_num(key, value)?,
            "strip_kernel" => cfg.strip_kernel = parse_num(key, value)?,
            "square_kernel" => cfg.square_kernel = parse_num(key, value)?,
            "dilation" => cfg.dilation = parse_num(key, value)?,
            "distill_channels" => cfg.distill_channels = parse_num(key, value)?,
            "attention_variant" => cfg.attention = AttentionVariant::parse(value)?,
            "enable_sdm" => cfg.enable_sdm = parse_bool(key, value)?,
            other => return Err(Error::config(format!("model config: unknown key '{other}'"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = RunConfig::parse("chanels = 56\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("chanels"), "{msg}");
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn duplicate_key_is_rejected() {
        assert!(RunConfig::parse("scale = 2\nscale = 3\n").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let text = "scale = 3\nchannels = 32\nnum_blocks = 2\nlr = 0.001\nseed = 7\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.model.scale, 3);
        assert_eq!(cfg.model.channels, 32);
        assert_eq!(cfg.model.distill_channels, 28); // default retained
        let echoed = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn model_config_text_round_trips() {
        let mut cfg = ModelConfig::default();
        cfg.scale = 4;
        cfg.attention = AttentionVariant::Lka13;
        cfg.enable_sdm = false;
        let parsed = model_config_from_text(&model_config_to_text(&cfg)).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn rejects_even_kernels_and_bad_scale() {
        let mut cfg = ModelConfig::default();
        cfg.star_kernel = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::default();
        cfg.scale = 5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn patch_must_cover_largest_kernel() {
        let model = ModelConfig::default(); // strip 11 at dilation 3 -> extent 31
        let mut train = TrainConfig::default();
        train.patch_size = 16;
        assert!(train.validate(&model).is_err());
        train.patch_size = 64;
        train.validate(&model).unwrap();
    }
}
