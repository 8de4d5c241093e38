//! Coarse-to-fine generator: a global network G1 at half resolution and a
//! local enhancer G2 at full resolution, joined by an element-wise sum of
//! G2's front-end features and G1's last back-end feature map.

use crate::error::{config_err, dim_err, Result};
use crate::layers::{Conv, Init, ResBlock};
use crate::tensor::{Element, ParamStore, ParamVars, Tape, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub g1_res_blocks: usize,
    pub g2_res_blocks: usize,
    /// Side of the square full-resolution chip.
    pub full_resolution: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            in_channels: 1,
            out_channels: 3,
            base_width: 16,
            g1_res_blocks: 3,
            g2_res_blocks: 2,
            full_resolution: 128,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.full_resolution == 0 || !self.full_resolution.is_multiple_of(4) {
            return Err(config_err!("resolution {} must be a positive multiple of 4", self.full_resolution));
        }
        if self.base_width < 4 || !self.base_width.is_multiple_of(2) {
            return Err(config_err!("base_width {} must be even and >= 4", self.base_width));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(config_err!("channel counts must be positive"));
        }
        Ok(())
    }

    pub fn half_resolution(&self) -> usize {
        self.full_resolution / 2
    }
}

/// Architecture of G = {G1, G2}; weights live in a separate [`ParamStore`].
///
/// G1: conv7 → 2× stride-2 conv3 → residual blocks → 2× stride-2 transposed
/// conv4 → (tanh head, used only when G1 is trained alone).
/// G2: conv7 → stride-2 conv3 → (+ G1 features) → residual blocks →
/// stride-2 transposed conv4 → tanh head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoarseToFineGenerator {
    pub config: GeneratorConfig,
    g1_front: Vec<Conv>,
    g1_res: Vec<ResBlock>,
    g1_back: Vec<Conv>,
    g1_head: Conv,
    g2_front: Vec<Conv>,
    g2_res: Vec<ResBlock>,
    g2_back: Vec<Conv>,
    g2_head: Conv,
}

/// Parameters of G1 are named `g1.*`, of G2 `g2.*`.
pub fn is_g1_param(name: &str) -> bool {
    name.starts_with("g1.")
}

pub fn is_g2_param(name: &str) -> bool {
    name.starts_with("g2.")
}

impl CoarseToFineGenerator {
    /// Build the architecture and register seeded weights in `store`.
    ///
    /// Fails if G2's front-end output and G1's last feature map would not
    /// have the same shape.
    pub fn new(config: GeneratorConfig, store: &mut ParamStore<f32>, seed: u64) -> Result<Self> {
        config.validate()?;
        let b = config.base_width;
        let mut init = Init::new(store, seed);
        let g1_front = vec![
            init.conv("g1.front.0", config.in_channels, b, 7, 1, 3),
            init.conv("g1.front.1", b, 2 * b, 3, 2, 1),
            init.conv("g1.front.2", 2 * b, 4 * b, 3, 2, 1),
        ];
        let g1_res = (0..config.g1_res_blocks).map(|i| init.res_block(&format!("g1.res.{i}"), 4 * b)).collect();
        let g1_back = vec![
            init.conv_t("g1.back.0", 4 * b, 2 * b, 4, 2, 1),
            init.conv_t("g1.back.1", 2 * b, b, 4, 2, 1),
        ];
        let g1_head = init.conv("g1.head", b, config.out_channels, 7, 1, 3);
        let g2_front = vec![
            init.conv("g2.front.0", config.in_channels, b / 2, 7, 1, 3),
            init.conv("g2.front.1", b / 2, b, 3, 2, 1),
        ];
        let g2_res = (0..config.g2_res_blocks).map(|i| init.res_block(&format!("g2.res.{i}"), b)).collect();
        let g2_back = vec![init.conv_t("g2.back.0", b, b / 2, 4, 2, 1)];
        let g2_head = init.conv("g2.head", b / 2, config.out_channels, 7, 1, 3);
        let g = CoarseToFineGenerator { config, g1_front, g1_res, g1_back, g1_head, g2_front, g2_res, g2_back, g2_head };
        g.check_fusion()?;
        Ok(g)
    }

    /// Shape arithmetic for both fused maps: `(channels, side)`.
    fn fusion_shapes(&self) -> Option<((usize, usize), (usize, usize))> {
        let kernel = |c: &Conv| if c.transpose { 4 } else if c.cin == self.config.in_channels { 7 } else { 3 };
        let walk = |convs: &[Conv], mut side: usize| -> Option<(usize, usize)> {
            let mut ch = 0;
            for c in convs {
                side = c.out_extent(side, kernel(c))?;
                ch = c.cout;
            }
            Some((ch, side))
        };
        let half = self.config.half_resolution();
        let (_, g1_mid) = walk(&self.g1_front, half)?;
        let g1_last = walk(&self.g1_back, g1_mid)?;
        let g2_front = walk(&self.g2_front, self.config.full_resolution)?;
        Some((g1_last, g2_front))
    }

    fn check_fusion(&self) -> Result<()> {
        match self.fusion_shapes() {
            Some((a, b)) if a == b => Ok(()),
            shapes => Err(config_err!(
                "resolution {}: G1 last feature and G2 front-end output disagree ({shapes:?})",
                self.config.full_resolution
            )),
        }
    }

    fn check_input<T: Element>(&self, tape: &Tape<T>, x: Var, side: usize) -> Result<()> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != self.config.in_channels || h != side || w != side {
            return Err(dim_err!(
                "generator expects [N,{},{side},{side}], got {:?}",
                self.config.in_channels,
                tape.shape(x)
            ));
        }
        Ok(())
    }

    /// G1 on a half-resolution input: `(image_half, last_feat)`.
    pub fn forward_g1<T: Element>(&self, tape: &mut Tape<T>, p: &ParamVars, sar_half: Var) -> Result<(Var, Var)> {
        let last = self.g1_features(tape, p, sar_half)?;
        let img = self.g1_head.forward(tape, p, last)?;
        Ok((tape.tanh(img), last))
    }

    fn g1_features<T: Element>(&self, tape: &mut Tape<T>, p: &ParamVars, sar_half: Var) -> Result<Var> {
        self.check_input(tape, sar_half, self.config.half_resolution())?;
        let mut x = sar_half;
        for c in &self.g1_front {
            x = c.norm_relu(tape, p, x)?;
        }
        for r in &self.g1_res {
            x = r.forward(tape, p, x)?;
        }
        for c in &self.g1_back {
            x = c.norm_relu(tape, p, x)?;
        }
        Ok(x)
    }

    /// Full generator; also returns the fused feature map fed to G2's residual blocks.
    pub fn forward_full_traced<T: Element>(
        &self,
        tape: &mut Tape<T>,
        p: &ParamVars,
        sar_full: Var,
    ) -> Result<(Var, Var)> {
        self.check_input(tape, sar_full, self.config.full_resolution)?;
        let half = tape.avg_downsample2(sar_full)?;
        let global = self.g1_features(tape, p, half)?;
        let mut x = sar_full;
        for c in &self.g2_front {
            x = c.norm_relu(tape, p, x)?;
        }
        let fused = tape.add(x, global)?;
        let mut x = fused;
        for r in &self.g2_res {
            x = r.forward(tape, p, x)?;
        }
        for c in &self.g2_back {
            x = c.norm_relu(tape, p, x)?;
        }
        let img = self.g2_head.forward(tape, p, x)?;
        Ok((tape.tanh(img), fused))
    }

    pub fn forward_full<T: Element>(&self, tape: &mut Tape<T>, p: &ParamVars, sar_full: Var) -> Result<Var> {
        self.forward_full_traced(tape, p, sar_full).map(|(img, _)| img)
    }
}
