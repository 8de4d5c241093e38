//! Staged adversarial training (G1 alone, then G2 with G1 frozen, then
//! everything jointly), checkpoints, and the translate entry point.
//!
//! SAR chips are median filtered before they reach any network when
//! denoising is enabled; EO labels are only normalised.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chip::ImageChip;
use crate::dataset::PairedSample;
use crate::denoise::{median_filter, DenoiseConfig};
use crate::discriminator::{DiscriminatorConfig, MultiScaleDiscriminator};
use crate::error::{config_err, dim_err, Error, Result};
use crate::generator::{is_g1_param, is_g2_param, CoarseToFineGenerator, GeneratorConfig};
use crate::loss::{gan_loss_discriminator, total_generator_loss, unzip_scales, LossWeights};
use crate::tensor::{
    ops, read_records, write_records, Adam, AdamConfig, AdamSlot, ParamStore, Tape, Tensor, TensorRecord,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    /// G1 and its temporary head at half resolution.
    Global,
    /// G2 at full resolution, G1 frozen.
    Local,
    /// Everything.
    Joint,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Global, Stage::Local, Stage::Joint];

    fn tag(self) -> f32 {
        match self {
            Stage::Global => 0.0,
            Stage::Local => 1.0,
            Stage::Joint => 2.0,
        }
    }

    fn from_tag(t: f32) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|s| s.tag() == t)
            .ok_or_else(|| Error::Format(format!("unknown stage tag {t}")))
    }

    /// Which generator parameters this stage updates.
    pub fn trains(self, name: &str) -> bool {
        match self {
            Stage::Global => is_g1_param(name),
            Stage::Local => is_g2_param(name),
            Stage::Joint => true,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Global => "g1",
            Stage::Local => "g2",
            Stage::Joint => "joint",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f32,
    /// Epochs of the G1, G2 and joint stages.
    pub stage_epochs: [usize; 3],
    pub loss: LossWeights,
    /// `None` disables the median filter.
    pub denoise: Option<DenoiseConfig>,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 4,
            lr: 2e-4,
            stage_epochs: [10, 10, 40],
            loss: LossWeights::default(),
            denoise: Some(DenoiseConfig::default()),
            generator: GeneratorConfig { full_resolution: 64, ..Default::default() },
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn resolution(&self) -> usize {
        self.generator.full_resolution
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be >= 1"));
        }
        if self.stage_epochs.iter().all(|&e| e == 0) {
            return Err(config_err!("at least one stage needs a nonzero epoch count"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(config_err!("learning rate must be positive"));
        }
        if let Some(d) = &self.denoise {
            d.validate()?;
        }
        self.loss.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        let want = self.generator.in_channels + self.generator.out_channels;
        if self.discriminator.in_channels != want {
            return Err(config_err!(
                "discriminator takes {} channels but the pair has {want}",
                self.discriminator.in_channels
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub stage: Stage,
    pub generator_loss: f32,
    pub discriminator_loss: f32,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub generator_config: GeneratorConfig,
    pub discriminator_config: DiscriminatorConfig,
    pub denoise: Option<DenoiseConfig>,
    pub generator_params: ParamStore<f32>,
    pub discriminator_params: ParamStore<f32>,
    pub generator_opt: Adam,
    pub discriminator_opt: Adam,
    pub stage: Stage,
    pub epoch: usize,
    pub history: Vec<StepRecord>,
}

/// What one training step looked like, for instrumentation.
pub struct StepEvent<'a> {
    pub stage: Stage,
    pub epoch: usize,
    pub step: usize,
    /// The SAR tensor handed to the generator (half resolution in the G1 stage).
    pub generator_input: &'a Tensor<f32>,
    /// The EO tensor the losses compare against.
    pub label: &'a Tensor<f32>,
    pub batch_ids: Vec<&'a str>,
    pub generator_params: &'a ParamStore<f32>,
    pub discriminator_params: &'a ParamStore<f32>,
    pub record: StepRecord,
}

pub trait TrainObserver {
    /// Called before the step's updates, with parameters as they were going in.
    fn before_step(&mut self, _event: &StepEvent<'_>) {}
    /// Called after both updates.
    fn after_step(&mut self, _event: &StepEvent<'_>) {}
}

impl TrainObserver for () {}

struct Batch {
    ids: Vec<usize>,
    sar: Tensor<f32>,
    eo: Tensor<f32>,
}

/// SAR as the networks see it: median filtered if enabled.
pub fn prepare_sar(sar: &ImageChip, denoise: Option<&DenoiseConfig>) -> Result<ImageChip> {
    match denoise {
        Some(cfg) => median_filter(sar, cfg),
        None => Ok(sar.clone()),
    }
}

fn disc_seed(seed: u64) -> u64 {
    seed ^ 0xD15C
}

/// Freshly initialised networks and optimisers, as training would start.
pub fn initial_checkpoint(cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let mut gparams = ParamStore::new();
    CoarseToFineGenerator::new(cfg.generator.clone(), &mut gparams, cfg.seed)?;
    let mut dparams = ParamStore::new();
    MultiScaleDiscriminator::new(cfg.discriminator.clone(), &mut dparams, disc_seed(cfg.seed))?;
    let adam = AdamConfig { lr: cfg.lr, ..Default::default() };
    Ok(Checkpoint {
        generator_config: cfg.generator.clone(),
        discriminator_config: cfg.discriminator.clone(),
        denoise: cfg.denoise,
        generator_opt: Adam::new(adam, &gparams),
        discriminator_opt: Adam::new(adam, &dparams),
        generator_params: gparams,
        discriminator_params: dparams,
        stage: Stage::Global,
        epoch: 0,
        history: Vec::new(),
    })
}

pub fn train(samples: &[PairedSample], cfg: &TrainConfig) -> Result<Checkpoint> {
    train_observed(samples, cfg, &mut ())
}

pub fn train_observed(samples: &[PairedSample], cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<Checkpoint> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let res = cfg.resolution();
    for s in samples {
        if s.sar.width() != res || s.sar.height() != res || !s.sar.same_extent(&s.eo) {
            return Err(dim_err!("sample {} is {}x{}, expected {res}x{res}", s.id, s.sar.width(), s.sar.height()));
        }
    }
    let sars = samples
        .iter()
        .map(|s| prepare_sar(&s.sar, cfg.denoise.as_ref()))
        .collect::<Result<Vec<_>>>()?;

    let gen = CoarseToFineGenerator::new(cfg.generator.clone(), &mut ParamStore::new(), cfg.seed)?;
    let disc = MultiScaleDiscriminator::new(cfg.discriminator.clone(), &mut ParamStore::new(), disc_seed(cfg.seed))?;
    let mut ckpt = initial_checkpoint(cfg)?;

    for (si, stage) in Stage::ALL.into_iter().enumerate() {
        for epoch in 0..cfg.stage_epochs[si] {
            let mut order: Vec<usize> = (0..samples.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(si as u64));
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let sar_refs: Vec<&ImageChip> = chunk.iter().map(|&i| &sars[i]).collect();
                let eo_refs: Vec<&ImageChip> = chunk.iter().map(|&i| &samples[i].eo).collect();
                let batch = Batch {
                    ids: chunk.to_vec(),
                    sar: ImageChip::batch_tensor(&sar_refs)?,
                    eo: ImageChip::batch_tensor(&eo_refs)?,
                };
                train_step(&gen, &disc, &mut ckpt, stage, epoch, &batch, samples, &cfg.loss, observer)?;
            }
            ckpt.stage = stage;
            ckpt.epoch = epoch + 1;
        }
    }
    Ok(ckpt)
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    gen: &CoarseToFineGenerator,
    disc: &MultiScaleDiscriminator,
    ckpt: &mut Checkpoint,
    stage: Stage,
    epoch: usize,
    batch: &Batch,
    samples: &[PairedSample],
    weights: &LossWeights,
    observer: &mut dyn TrainObserver,
) -> Result<()> {
    let (input, label) = match stage {
        Stage::Global => (ops::avg_downsample2(&batch.sar)?, ops::avg_downsample2(&batch.eo)?),
        _ => (batch.sar.clone(), batch.eo.clone()),
    };
    let step = ckpt.history.len();
    let ids: Vec<&str> = batch.ids.iter().map(|&i| samples[i].id.as_str()).collect();
    let pending = StepRecord { stage, generator_loss: f32::NAN, discriminator_loss: f32::NAN };
    observer.before_step(&StepEvent {
        stage,
        epoch,
        step,
        generator_input: &input,
        label: &label,
        batch_ids: ids.clone(),
        generator_params: &ckpt.generator_params,
        discriminator_params: &ckpt.discriminator_params,
        record: pending,
    });

    // Generator forward, kept on its tape for the generator update below.
    let mut gtape = Tape::new();
    let gvars = ckpt.generator_params.bind(&mut gtape, |n| stage.trains(n));
    let sar = gtape.constant(input.clone());
    let fake = match stage {
        Stage::Global => gen.forward_g1(&mut gtape, &gvars, sar)?.0,
        _ => gen.forward_full(&mut gtape, &gvars, sar)?,
    };

    // Discriminator update on a detached copy of the fake.
    let mut dtape = Tape::new();
    let dvars = ckpt.discriminator_params.bind(&mut dtape, |_| true);
    let d_sar = dtape.constant(input.clone());
    let d_real = dtape.constant(label.clone());
    let d_fake = dtape.constant(gtape.value(fake).clone());
    let sars = disc.pyramid(&mut dtape, d_sar)?;
    let (real_logits, _) = unzip_scales(&disc.forward_pyramid(&mut dtape, &dvars, &sars, d_real)?);
    let (fake_logits, _) = unzip_scales(&disc.forward_pyramid(&mut dtape, &dvars, &sars, d_fake)?);
    let d_loss = gan_loss_discriminator(&mut dtape, &real_logits, &fake_logits)?;
    dtape.backward(d_loss)?;
    ckpt.discriminator_opt.step(&mut ckpt.discriminator_params, &dvars.grads(&dtape))?;
    let d_loss = dtape.value(d_loss).data()[0];
    drop(dtape);

    // Generator update against the freshly updated, frozen discriminators.
    let dvars = ckpt.discriminator_params.bind(&mut gtape, |_| false);
    let real = gtape.constant(label.clone());
    let sars = disc.pyramid(&mut gtape, sar)?;
    let (_, real_feats) = unzip_scales(&disc.forward_pyramid(&mut gtape, &dvars, &sars, real)?);
    let (fake_logits, fake_feats) = unzip_scales(&disc.forward_pyramid(&mut gtape, &dvars, &sars, fake)?);
    let g_loss = total_generator_loss(&mut gtape, &fake_logits, &real_feats, &fake_feats, weights)?;
    gtape.backward(g_loss)?;
    ckpt.generator_opt.step(&mut ckpt.generator_params, &gvars.grads(&gtape))?;
    let g_loss = gtape.value(g_loss).data()[0];

    if !ckpt.generator_params.all_finite() || !ckpt.discriminator_params.all_finite() {
        return Err(Error::Numeric(format!("non-finite parameters after step {step} ({stage})")));
    }
    let record = StepRecord { stage, generator_loss: g_loss, discriminator_loss: d_loss };
    ckpt.history.push(record);
    observer.after_step(&StepEvent {
        stage,
        epoch,
        step,
        generator_input: &input,
        label: &label,
        batch_ids: ids,
        generator_params: &ckpt.generator_params,
        discriminator_params: &ckpt.discriminator_params,
        record,
    });
    Ok(())
}

/// Inference-only view of a checkpoint's generator.
pub struct Translator {
    generator: CoarseToFineGenerator,
    params: ParamStore<f32>,
    denoise: Option<DenoiseConfig>,
}

impl Translator {
    pub fn new(ckpt: &Checkpoint) -> Result<Self> {
        let mut params = ParamStore::new();
        let generator = CoarseToFineGenerator::new(ckpt.generator_config.clone(), &mut params, 0)?;
        params.copy_from(&ckpt.generator_params)?;
        Ok(Translator { generator, params, denoise: ckpt.denoise })
    }

    pub fn resolution(&self) -> usize {
        self.generator.config.full_resolution
    }

    pub fn in_channels(&self) -> usize {
        self.generator.config.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.generator.config.out_channels
    }

    /// Denoising the checkpoint was trained with.
    pub fn default_denoise(&self) -> Option<DenoiseConfig> {
        self.denoise
    }

    /// Normalised generator output `[N, out, H, W]` for already-prepared SAR chips.
    pub fn generate(&self, sars: &[&ImageChip]) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, |_| false);
        let x = tape.constant(ImageChip::batch_tensor(sars)?);
        let y = self.generator.forward_full(&mut tape, &vars, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn translate(&self, sar: &ImageChip, denoise: Option<&DenoiseConfig>) -> Result<ImageChip> {
        let res = self.resolution();
        if sar.width() != res || sar.height() != res {
            return Err(dim_err!("chip is {}x{}, checkpoint expects {res}x{res}", sar.width(), sar.height()));
        }
        if sar.channels() != self.generator.config.in_channels {
            return Err(dim_err!("chip has {} channels, generator takes {}", sar.channels(), self.generator.config.in_channels));
        }
        let prepared = prepare_sar(sar, denoise)?;
        let out = self.generate(&[&prepared])?;
        ImageChip::from_normalized(res, res, self.generator.config.out_channels, out.data())
    }
}

/// Median filter (if `denoise` is set), normalise, run the full generator,
/// and convert back to an 8-bit EO chip.
pub fn translate(ckpt: &Checkpoint, sar: &ImageChip, denoise: Option<&DenoiseConfig>) -> Result<ImageChip> {
    Translator::new(ckpt)?.translate(sar, denoise)
}

// ---- serialization ----

fn rec(name: impl Into<String>, values: Vec<f32>) -> TensorRecord {
    let n = values.len();
    TensorRecord { name: name.into(), tensor: Tensor::new([n], values).expect("rank-1") }
}

fn push_adam(out: &mut Vec<TensorRecord>, prefix: &str, opt: &Adam, params: &ParamStore<f32>) {
    let c = opt.config;
    out.push(rec(format!("{prefix}.config"), vec![c.lr, c.beta1, c.beta2, c.eps]));
    for ((_, name, _), slot) in params.iter().zip(&opt.slots) {
        out.push(rec(format!("{prefix}.step.{name}"), vec![slot.step as f32]));
        out.push(rec(format!("{prefix}.m.{name}"), slot.m.clone()));
        out.push(rec(format!("{prefix}.v.{name}"), slot.v.clone()));
    }
}

struct Records(Vec<TensorRecord>);

impl Records {
    fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.0
            .iter()
            .find(|r| r.name == name)
            .map(|r| &r.tensor)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks record {name}")))
    }

    fn values(&self, name: &str, len: usize) -> Result<&[f32]> {
        let t = self.get(name)?;
        if t.numel() != len {
            return Err(Error::Format(format!("record {name} has {} values, expected {len}", t.numel())));
        }
        Ok(t.data())
    }

    fn params(&self, prefix: &str, like: &ParamStore<f32>) -> Result<ParamStore<f32>> {
        let mut out = like.clone();
        for id in like.ids() {
            let name = format!("{prefix}.{}", like.name(id));
            let t = self.get(&name)?;
            if t.shape() != like.get(id).shape() {
                return Err(Error::Format(format!("record {name} has shape {:?}", t.shape())));
            }
            out.get_mut(id).data_mut().copy_from_slice(t.data());
        }
        Ok(out)
    }

    fn adam(&self, prefix: &str, params: &ParamStore<f32>) -> Result<Adam> {
        let c = self.values(&format!("{prefix}.config"), 4)?;
        let config = AdamConfig { lr: c[0], beta1: c[1], beta2: c[2], eps: c[3] };
        let slots = params
            .iter()
            .map(|(_, name, t)| {
                Ok(AdamSlot {
                    step: self.values(&format!("{prefix}.step.{name}"), 1)?[0] as u32,
                    m: self.values(&format!("{prefix}.m.{name}"), t.numel())?.to_vec(),
                    v: self.values(&format!("{prefix}.v.{name}"), t.numel())?.to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Adam { config, slots })
    }
}

impl Checkpoint {
    pub fn to_records(&self) -> Vec<TensorRecord> {
        let g = &self.generator_config;
        let d = &self.discriminator_config;
        let mut out = vec![
            rec(
                "config.gen",
                [g.in_channels, g.out_channels, g.base_width, g.g1_res_blocks, g.g2_res_blocks, g.full_resolution]
                    .map(|v| v as f32)
                    .to_vec(),
            ),
            rec("config.disc", [d.in_channels, d.layers, d.base_width].map(|v| v as f32).to_vec()),
            rec(
                "config.denoise",
                match self.denoise {
                    Some(c) => vec![1.0, c.window_n as f32, c.window_m as f32],
                    None => vec![0.0, 0.0, 0.0],
                },
            ),
            rec("meta.stage", vec![self.stage.tag()]),
            rec("meta.epoch", vec![self.epoch as f32]),
        ];
        let hist: Vec<f32> = self
            .history
            .iter()
            .flat_map(|r| [r.stage.tag(), r.generator_loss, r.discriminator_loss])
            .collect();
        out.push(TensorRecord {
            name: "meta.history".into(),
            tensor: Tensor::new([self.history.len(), 3], hist).expect("3 per step"),
        });
        for (prefix, params) in [("gen", &self.generator_params), ("disc", &self.discriminator_params)] {
            for (_, name, t) in params.iter() {
                out.push(TensorRecord { name: format!("{prefix}.{name}"), tensor: t.clone() });
            }
        }
        push_adam(&mut out, "adam.gen", &self.generator_opt, &self.generator_params);
        push_adam(&mut out, "adam.disc", &self.discriminator_opt, &self.discriminator_params);
        out
    }

    pub fn from_records(records: Vec<TensorRecord>) -> Result<Self> {
        let r = Records(records);
        let usize_of = |v: f32| v as usize;
        let g = r.values("config.gen", 6)?;
        let generator_config = GeneratorConfig {
            in_channels: usize_of(g[0]),
            out_channels: usize_of(g[1]),
            base_width: usize_of(g[2]),
            g1_res_blocks: usize_of(g[3]),
            g2_res_blocks: usize_of(g[4]),
            full_resolution: usize_of(g[5]),
        };
        let d = r.values("config.disc", 3)?;
        let discriminator_config =
            DiscriminatorConfig { in_channels: usize_of(d[0]), layers: usize_of(d[1]), base_width: usize_of(d[2]) };
        let dn = r.values("config.denoise", 3)?;
        let denoise = if dn[0] != 0.0 { Some(DenoiseConfig::new(usize_of(dn[1]), usize_of(dn[2]))?) } else { None };

        let mut gshape = ParamStore::new();
        CoarseToFineGenerator::new(generator_config.clone(), &mut gshape, 0)?;
        let mut dshape = ParamStore::new();
        MultiScaleDiscriminator::new(discriminator_config.clone(), &mut dshape, 0)?;
        let generator_params = r.params("gen", &gshape)?;
        let discriminator_params = r.params("disc", &dshape)?;

        let hist = r.get("meta.history")?;
        if hist.rank() != 2 || hist.shape()[1] != 3 {
            return Err(Error::Format("meta.history must be [steps, 3]".into()));
        }
        let history = hist
            .data()
            .chunks(3)
            .map(|c| Ok(StepRecord { stage: Stage::from_tag(c[0])?, generator_loss: c[1], discriminator_loss: c[2] }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint {
            generator_opt: r.adam("adam.gen", &generator_params)?,
            discriminator_opt: r.adam("adam.disc", &discriminator_params)?,
            generator_config,
            discriminator_config,
            denoise,
            generator_params,
            discriminator_params,
            stage: Stage::from_tag(r.values("meta.stage", 1)?[0])?,
            epoch: usize_of(r.values("meta.epoch", 1)?[0]),
            history,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_records(&mut buf, &self.to_records()).expect("writing to memory");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_records(read_records(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
