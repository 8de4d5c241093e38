//! Multi-scale conditional patch discriminators.
//!
//! Three structurally identical discriminators see the (SAR, image) pair at
//! full, half and quarter resolution. Each returns its per-layer activations
//! for feature matching plus a one-channel patch logit map.

use crate::error::{config_err, dim_err, Result};
use crate::layers::{Conv, Init, NORM_EPS};
use crate::tensor::{Element, ParamStore, ParamVars, Tape, Var};

pub const NUM_SCALES: usize = 3;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    /// SAR channels + image channels of the conditional pair.
    pub in_channels: usize,
    /// Number of feature layers `T`.
    pub layers: usize,
    pub base_width: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig { in_channels: 4, layers: 4, base_width: 16 }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(config_err!("discriminator needs at least 2 feature layers, got {}", self.layers));
        }
        if self.base_width == 0 || self.in_channels == 0 {
            return Err(config_err!("discriminator widths must be positive"));
        }
        Ok(())
    }
}

/// `T` stride-2 4×4 convolutions (leaky ReLU, instance norm after the first)
/// and a stride-1 4×4 one-channel head. Padding 2 keeps every map at least
/// 2×2, so normalisation never sees a single pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchDiscriminator {
    layers: Vec<Conv>,
    head: Conv,
}

/// Activations after every feature layer, and the patch logits.
#[derive(Clone, Debug)]
pub struct ScaleOutput {
    pub features: Vec<Var>,
    pub logits: Var,
}

impl PatchDiscriminator {
    fn new(cfg: &DiscriminatorConfig, prefix: &str, init: &mut Init) -> Self {
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut cin = cfg.in_channels;
        for i in 0..cfg.layers {
            let cout = cfg.base_width << i.min(3);
            layers.push(init.conv(&format!("{prefix}.layer.{i}"), cin, cout, 4, 2, 2));
            cin = cout;
        }
        let head = init.conv(&format!("{prefix}.head"), cin, 1, 4, 1, 2);
        PatchDiscriminator { layers, head }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &ParamVars, input: Var) -> Result<ScaleOutput> {
        let slope = T::from_f64_lossy(LEAKY_SLOPE);
        let mut x = input;
        let mut features = Vec::with_capacity(self.layers.len());
        for (i, conv) in self.layers.iter().enumerate() {
            x = conv.forward(tape, p, x)?;
            if i > 0 {
                x = tape.instance_norm(x, T::from_f64_lossy(NORM_EPS))?;
            }
            x = tape.leaky_relu(x, slope);
            features.push(x);
        }
        let logits = self.head.forward(tape, p, x)?;
        Ok(ScaleOutput { features, logits })
    }
}

/// D = {D1, D2, D3}; parameters are named `d{k}.*`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiScaleDiscriminator {
    pub config: DiscriminatorConfig,
    scales: Vec<PatchDiscriminator>,
}

impl MultiScaleDiscriminator {
    pub fn new(config: DiscriminatorConfig, store: &mut ParamStore<f32>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(store, seed);
        let scales = (1..=NUM_SCALES).map(|k| PatchDiscriminator::new(&config, &format!("d{k}"), &mut init)).collect();
        Ok(MultiScaleDiscriminator { config, scales })
    }

    pub fn scale(&self, k: usize) -> &PatchDiscriminator {
        &self.scales[k - 1]
    }

    /// Discriminator `k` (1-based) on a pair already at scale `k`.
    pub fn forward_scale<T: Element>(
        &self,
        tape: &mut Tape<T>,
        p: &ParamVars,
        k: usize,
        sar: Var,
        image: Var,
    ) -> Result<ScaleOutput> {
        if !(1..=NUM_SCALES).contains(&k) {
            return Err(config_err!("scale {k} outside 1..={NUM_SCALES}"));
        }
        let (sa, ia) = (tape.value(sar).dims4()?, tape.value(image).dims4()?);
        if sa.0 != ia.0 || sa.2 != ia.2 || sa.3 != ia.3 {
            return Err(dim_err!("sar {:?} and image {:?} differ in extent", tape.shape(sar), tape.shape(image)));
        }
        if sa.1 + ia.1 != self.config.in_channels {
            return Err(dim_err!(
                "pair has {} channels, discriminator expects {}",
                sa.1 + ia.1,
                self.config.in_channels
            ));
        }
        let pair = tape.concat_channels(sar, image)?;
        self.scales[k - 1].forward(tape, p, pair)
    }

    /// Returns the downsampled SAR inputs for scales 1..=3 (the first is `sar` itself).
    pub fn pyramid<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Vec<Var>> {
        let (_, _, h, w) = tape.value(x).dims4()?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(dim_err!("multi-scale input {h}x{w} must be divisible by 4"));
        }
        let mut out = vec![x];
        for _ in 1..NUM_SCALES {
            let prev = *out.last().unwrap();
            out.push(tape.avg_downsample2(prev)?);
        }
        Ok(out)
    }

    /// All three scales on a full-resolution pair.
    pub fn forward_all<T: Element>(
        &self,
        tape: &mut Tape<T>,
        p: &ParamVars,
        sar_full: Var,
        image_full: Var,
    ) -> Result<Vec<ScaleOutput>> {
        let sars = self.pyramid(tape, sar_full)?;
        self.forward_pyramid(tape, p, &sars, image_full)
    }

    /// Like [`Self::forward_all`] with a precomputed SAR pyramid.
    pub fn forward_pyramid<T: Element>(
        &self,
        tape: &mut Tape<T>,
        p: &ParamVars,
        sars: &[Var],
        image_full: Var,
    ) -> Result<Vec<ScaleOutput>> {
        let images = self.pyramid(tape, image_full)?;
        (0..NUM_SCALES).map(|i| self.forward_scale(tape, p, i + 1, sars[i], images[i])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn setup() -> (MultiScaleDiscriminator, ParamStore<f32>) {
        let mut store = ParamStore::new();
        let d = MultiScaleDiscriminator::new(DiscriminatorConfig::default(), &mut store, 4).unwrap();
        (d, store)
    }

    #[test]
    fn scales_share_topology() {
        let (_, store) = setup();
        let shapes = |k: usize| -> Vec<(String, Vec<usize>)> {
            store
                .iter()
                .filter(|(_, n, _)| n.starts_with(&format!("d{k}.")))
                .map(|(_, n, t)| (n[3..].to_string(), t.shape().to_vec()))
                .collect()
        };
        assert_eq!(shapes(1), shapes(2));
        assert_eq!(shapes(2), shapes(3));
        assert!(!shapes(1).is_empty());
    }

    #[test]
    fn forward_all_shapes() {
        let (d, store) = setup();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, |_| false);
        let sar = tape.constant(Tensor::from_fn([1, 1, 128, 128], |i| ((i % 97) as f32 / 48.0) - 1.0));
        let img = tape.constant(Tensor::from_fn([1, 3, 128, 128], |i| ((i % 89) as f32 / 44.0) - 1.0));
        let outs = d.forward_all(&mut tape, &p, sar, img).unwrap();
        assert_eq!(outs.len(), 3);
        let sides: Vec<usize> = outs.iter().map(|o| tape.shape(o.logits)[2]).collect();
        // 128: 65,33,17,9 → head 10; 64: 33,17,9,5 → 6; 32: 17,9,5,3 → 4
        assert_eq!(sides, vec![10, 6, 4]);
        for o in &outs {
            assert_eq!(o.features.len(), 4);
            assert_eq!(tape.shape(o.logits)[1], 1);
        }
        let pooled: Vec<f32> = outs.iter().map(|o| tape.value(o.logits).mean()).collect();
        assert!(pooled[0] != pooled[1] && pooled[1] != pooled[2] && pooled[0] != pooled[2]);
    }

    #[test]
    fn purity_and_constant_inputs() {
        let (d, store) = setup();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, |_| false);
        let sar = tape.constant(Tensor::full([1, 1, 32, 32], 0.3f32));
        let img = tape.constant(Tensor::full([1, 3, 32, 32], -0.2f32));
        let sars = d.pyramid(&mut tape, sar).unwrap();
        for &s in &sars {
            assert!(tape.value(s).data().iter().all(|&v| v == 0.3));
        }
        let a = d.forward_scale(&mut tape, &p, 2, sar, img).unwrap();
        let b = d.forward_scale(&mut tape, &p, 2, sar, img).unwrap();
        for (x, y) in a.features.iter().zip(&b.features) {
            assert_eq!(tape.value(*x), tape.value(*y));
        }
    }

    #[test]
    fn errors() {
        let (d, store) = setup();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, |_| false);
        let sar = tape.constant(Tensor::zeros([1, 1, 16, 16]));
        let img = tape.constant(Tensor::zeros([1, 3, 8, 8]));
        assert!(matches!(d.forward_scale(&mut tape, &p, 1, sar, img), Err(crate::Error::Dimension(_))));
        let odd = tape.constant(Tensor::zeros([1, 1, 18, 18]));
        let odd_img = tape.constant(Tensor::zeros([1, 3, 18, 18]));
        assert!(d.forward_all(&mut tape, &p, odd, odd_img).is_err());
        let bad = DiscriminatorConfig { layers: 1, ..Default::default() };
        assert!(MultiScaleDiscriminator::new(bad, &mut ParamStore::new(), 0).is_err());
    }
}
