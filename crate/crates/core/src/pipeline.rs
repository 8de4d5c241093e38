//! End-to-end helpers shared by the CLI and the test suites: held-out
//! evaluation of a checkpoint and the denoising ablation.

use std::fmt;

use crate::chip::ImageChip;
use crate::config::RunConfig;
use crate::dataset::{split_manifest, DatasetManifest, PairedSample, Split};
use crate::denoise::DenoiseConfig;
use crate::error::{Error, Result};
use crate::metrics::{EvalOptions, FeatureExtractor, MetricsReport};
use crate::trainer::{train, Checkpoint, Translator};

/// Translates each sample's SAR with the checkpoint's own denoising setting.
pub fn translate_samples(ckpt: &Checkpoint, samples: &[PairedSample]) -> Result<Vec<ImageChip>> {
    let t = Translator::new(ckpt)?;
    let denoise = t.default_denoise();
    samples.iter().map(|s| t.translate(&s.sar, denoise.as_ref())).collect()
}

pub fn evaluate_samples(
    ckpt: &Checkpoint,
    samples: &[PairedSample],
    extractor: &FeatureExtractor,
    opts: EvalOptions,
) -> Result<MetricsReport> {
    let pred = translate_samples(ckpt, samples)?;
    let reference: Vec<ImageChip> = samples.iter().map(|s| s.eo.clone()).collect();
    MetricsReport::evaluate(&pred, &reference, extractor, opts)
}

/// The manifest labelled according to the run's split settings.
pub fn label_for_run(manifest: &DatasetManifest, cfg: &RunConfig) -> Result<DatasetManifest> {
    // the fraction is unused when merging but must still be valid
    let fraction = if cfg.merge_val { 0.5 } else { cfg.val_fraction };
    split_manifest(manifest, fraction, cfg.train.seed, cfg.merge_val)
}

/// Train and held-out samples according to the run's split settings.
pub fn split_for_run(manifest: &DatasetManifest, cfg: &RunConfig) -> Result<(Vec<PairedSample>, Vec<PairedSample>)> {
    let split = label_for_run(manifest, cfg)?;
    Ok((split.subset(Split::Train), split.subset(Split::Val)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub base: MetricsReport,
    pub denoised: MetricsReport,
    pub window: DenoiseConfig,
}

impl AblationReport {
    pub const LABELS: [&'static str; 2] = ["base", "+denoise"];

    pub fn rows(&self) -> [(&'static str, &MetricsReport); 2] {
        [(Self::LABELS[0], &self.base), (Self::LABELS[1], &self.denoised)]
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# denoise window {}", self.window)?;
        writeln!(f, "variant\tl2\tperceptual\tfrechet\tfinal_score")?;
        for (label, r) in self.rows() {
            writeln!(f, "{label}\t{:?}\t{:?}\t{:?}\t{:?}", r.l2, r.perceptual, r.frechet, r.final_score)?;
        }
        Ok(())
    }
}

/// Trains the same configuration twice, without and with median filtering,
/// and scores both on the held-out samples.
pub fn ablation(
    train_set: &[PairedSample],
    held_out: &[PairedSample],
    cfg: &RunConfig,
    extractor: &FeatureExtractor,
    opts: EvalOptions,
) -> Result<AblationReport> {
    if held_out.len() < 2 {
        return Err(Error::Data(format!("ablation needs at least 2 held-out samples, got {}", held_out.len())));
    }
    let window = cfg.train.denoise.unwrap_or_default();
    let mut base_cfg = cfg.train.clone();
    base_cfg.denoise = None;
    let mut den_cfg = cfg.train.clone();
    den_cfg.denoise = Some(window);

    let base = evaluate_samples(&train(train_set, &base_cfg)?, held_out, extractor, opts)?;
    let denoised = evaluate_samples(&train(train_set, &den_cfg)?, held_out, extractor, opts)?;
    Ok(AblationReport { base, denoised, window })
}
