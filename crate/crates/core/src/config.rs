//! Plain-text run configuration: `[section]` headers followed by
//! `key = value` lines. `#` starts a comment. Unknown sections and keys are
//! errors.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::denoise::DenoiseConfig;
use crate::error::{config_err, Result};
use crate::loss::GanMode;
use crate::trainer::TrainConfig;

pub const SECTIONS: [&str; 5] = ["gen", "disc", "loss", "train", "denoise"];

/// Everything `train` and `ablation` need beyond file paths.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Share of the dataset held out for evaluation.
    pub val_fraction: f64,
    /// Train on train + val together (the held-out split is then empty).
    pub merge_val: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { train: TrainConfig::default(), val_fraction: 0.25, merge_val: false }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| config_err!("{section}.{key}: cannot parse {value:?}"))
}

fn parse_bool(section: &str, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(config_err!("{section}.{key}: expected a boolean, got {value:?}")),
    }
}

impl RunConfig {
    /// Applies one `section.key = value` assignment.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let v = value.trim();
        match (section, key) {
            ("gen", "in_channels") => t.generator.in_channels = parse(section, key, v)?,
            ("gen", "out_channels") => t.generator.out_channels = parse(section, key, v)?,
            ("gen", "base_width") => t.generator.base_width = parse(section, key, v)?,
            ("gen", "g1_res_blocks") => t.generator.g1_res_blocks = parse(section, key, v)?,
            ("gen", "g2_res_blocks") => t.generator.g2_res_blocks = parse(section, key, v)?,
            ("gen", "resolution") => t.generator.full_resolution = parse(section, key, v)?,
            ("disc", "in_channels") => t.discriminator.in_channels = parse(section, key, v)?,
            ("disc", "layers") => t.discriminator.layers = parse(section, key, v)?,
            ("disc", "base_width") => t.discriminator.base_width = parse(section, key, v)?,
            ("loss", "lambda_fm") => t.loss.lambda_fm = parse(section, key, v)?,
            ("loss", "gan_mode") => {
                t.loss.gan_mode = match v {
                    "lsgan" => GanMode::LeastSquares,
                    _ => return Err(config_err!("loss.gan_mode: unsupported {v:?} (only lsgan)")),
                }
            }
            ("train", "seed") => t.seed = parse(section, key, v)?,
            ("train", "batch_size") => t.batch_size = parse(section, key, v)?,
            ("train", "lr") => t.lr = parse(section, key, v)?,
            ("train", "epochs_g1") => t.stage_epochs[0] = parse(section, key, v)?,
            ("train", "epochs_g2") => t.stage_epochs[1] = parse(section, key, v)?,
            ("train", "epochs_joint") => t.stage_epochs[2] = parse(section, key, v)?,
            ("train", "val_fraction") => self.val_fraction = parse(section, key, v)?,
            ("train", "merge_val") => self.merge_val = parse_bool(section, key, v)?,
            ("denoise", "enabled") => {
                t.denoise = if parse_bool(section, key, v)? { Some(t.denoise.unwrap_or_default()) } else { None }
            }
            ("denoise", "window") => {
                let w: DenoiseConfig = v.parse()?;
                t.denoise = Some(w);
            }
            _ if !SECTIONS.contains(&section) => return Err(config_err!("unknown section [{section}]")),
            _ => return Err(config_err!("unknown key {key:?} in [{section}]")),
        }
        Ok(())
    }

    /// Applies a `section.key=value` override as given on the command line.
    pub fn set_dotted(&mut self, assignment: &str) -> Result<()> {
        let (path, value) =
            assignment.split_once('=').ok_or_else(|| config_err!("override {assignment:?} is not section.key=value"))?;
        let (section, key) =
            path.trim().split_once('.').ok_or_else(|| config_err!("override {assignment:?} is not section.key=value"))?;
        self.set(section, key, value)
    }

    /// Defaults overlaid with the assignments in `text`.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| config_err!("line {}: unterminated section header", no + 1))?;
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(config_err!("line {}: unknown section [{name}]", no + 1));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| config_err!("line {}: expected key = value", no + 1))?;
            let sec = section.as_deref().ok_or_else(|| config_err!("line {}: key outside any [section]", no + 1))?;
            cfg.set(sec, key.trim(), value)
                .map_err(|e| config_err!("line {}: {}", no + 1, e.to_string().trim_start_matches("config error: ")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !self.merge_val && !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(config_err!("train.val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.train;
        let g = &t.generator;
        let d = &t.discriminator;
        let mut s = String::new();
        let _ = writeln!(s, "[gen]");
        let _ = writeln!(s, "in_channels = {}", g.in_channels);
        let _ = writeln!(s, "out_channels = {}", g.out_channels);
        let _ = writeln!(s, "base_width = {}", g.base_width);
        let _ = writeln!(s, "g1_res_blocks = {}", g.g1_res_blocks);
        let _ = writeln!(s, "g2_res_blocks = {}", g.g2_res_blocks);
        let _ = writeln!(s, "resolution = {}", g.full_resolution);
        let _ = writeln!(s, "\n[disc]");
        let _ = writeln!(s, "in_channels = {}", d.in_channels);
        let _ = writeln!(s, "layers = {}", d.layers);
        let _ = writeln!(s, "base_width = {}", d.base_width);
        let _ = writeln!(s, "\n[loss]");
        let _ = writeln!(s, "lambda_fm = {:?}", t.loss.lambda_fm);
        let _ = writeln!(s, "gan_mode = lsgan");
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "lr = {:?}", t.lr);
        let _ = writeln!(s, "epochs_g1 = {}", t.stage_epochs[0]);
        let _ = writeln!(s, "epochs_g2 = {}", t.stage_epochs[1]);
        let _ = writeln!(s, "epochs_joint = {}", t.stage_epochs[2]);
        let _ = writeln!(s, "val_fraction = {:?}", self.val_fraction);
        let _ = writeln!(s, "merge_val = {}", self.merge_val);
        let _ = writeln!(s, "\n[denoise]");
        let _ = writeln!(s, "enabled = {}", t.denoise.is_some());
        if let Some(w) = &t.denoise {
            let _ = writeln!(s, "window = {w}");
        }
        f.write_str(&s)
    }
}
