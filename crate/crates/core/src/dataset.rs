//! Paired SAR/EO chips: directory loading by shared basename, seeded
//! train/validation splits, and a synthetic paired-chip generator.
//!
//! On disk a dataset is `sar/<id>.png` (8-bit gray) next to `eo/<id>.png`
//! (8-bit RGB). A manifest is a text file of `id<TAB>split` lines.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chip::ImageChip;
use crate::denoise::add_speckle;
use crate::error::{config_err, dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairedSample {
    pub id: String,
    pub sar: ImageChip,
    pub eo: ImageChip,
    pub split: Split,
}

impl PairedSample {
    pub fn new(id: impl Into<String>, sar: ImageChip, eo: ImageChip) -> Result<Self> {
        let id = id.into();
        if sar.channels() != 1 || eo.channels() != 3 {
            return Err(dim_err!(
                "sample {id}: SAR must be 1-channel and EO 3-channel (got {} and {})",
                sar.channels(),
                eo.channels()
            ));
        }
        if !sar.same_extent(&eo) {
            return Err(dim_err!("sample {id}: SAR and EO extents differ"));
        }
        Ok(PairedSample { id, sar, eo, split: Split::Train })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub resolution: usize,
    /// Sorted by id.
    pub samples: Vec<PairedSample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl DatasetManifest {
    pub fn counts(&self) -> SplitCounts {
        let mut c = SplitCounts::default();
        for s in &self.samples {
            match s.split {
                Split::Train => c.train += 1,
                Split::Val => c.val += 1,
                Split::Test => c.test += 1,
            }
        }
        c
    }

    pub fn subset(&self, split: Split) -> Vec<PairedSample> {
        self.samples.iter().filter(|s| s.split == split).cloned().collect()
    }

    /// Write `id<TAB>split` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for s in &self.samples {
            text.push_str(&format!("{}\t{}\n", s.id, s.split));
        }
        fs::write(path, text)?;
        Ok(())
    }

    /// Reload a saved manifest: chips come from `root`, splits from the file.
    pub fn load(root: &Path, manifest: &Path, resolution: usize) -> Result<Self> {
        let mut all = load_paired(root, resolution)?;
        let text = fs::read_to_string(manifest)?;
        let mut splits = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (id, split) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("manifest line {}: expected id<TAB>split", lineno + 1)))?;
            if splits.insert(id.to_string(), split.parse::<Split>()?).is_some() {
                return Err(Error::Format(format!("manifest lists {id} twice")));
            }
        }
        let mut missing: Vec<String> = splits.keys().filter(|id| !all.samples.iter().any(|s| &s.id == *id)).cloned().collect();
        missing.extend(all.samples.iter().filter(|s| !splits.contains_key(&s.id)).map(|s| s.id.clone()));
        if !missing.is_empty() {
            missing.sort();
            return Err(Error::Pairing(missing));
        }
        for s in &mut all.samples {
            s.split = splits[&s.id];
        }
        Ok(all)
    }
}

fn png_ids(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("missing directory {}", dir.display())));
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Pair `sar/<id>.png` with `eo/<id>.png` under `root`.
///
/// Every chip must be `resolution × resolution`; orphans on either side are
/// reported together in one pairing error.
pub fn load_paired(root: &Path, resolution: usize) -> Result<DatasetManifest> {
    let sar_ids = png_ids(&root.join("sar"))?;
    let eo_ids = png_ids(&root.join("eo"))?;
    let mut orphans: Vec<String> = sar_ids
        .iter()
        .filter(|id| eo_ids.binary_search(id).is_err())
        .chain(eo_ids.iter().filter(|id| sar_ids.binary_search(id).is_err()))
        .cloned()
        .collect();
    if !orphans.is_empty() {
        orphans.sort();
        return Err(Error::Pairing(orphans));
    }
    let mut samples = Vec::with_capacity(sar_ids.len());
    for id in sar_ids {
        let sar = ImageChip::load_png(&root.join("sar").join(format!("{id}.png")))?;
        let eo = ImageChip::load_png(&root.join("eo").join(format!("{id}.png")))?;
        for (what, chip) in [("sar", &sar), ("eo", &eo)] {
            if chip.width() != resolution || chip.height() != resolution {
                return Err(dim_err!(
                    "{what}/{id}.png is {}x{}, expected {resolution}x{resolution}",
                    chip.width(),
                    chip.height()
                ));
            }
        }
        samples.push(PairedSample::new(id, sar, eo)?);
    }
    Ok(DatasetManifest { root: root.to_path_buf(), resolution, samples })
}

/// Write samples as `sar/<id>.png` and `eo/<id>.png` under `root`.
pub fn write_paired(root: &Path, samples: &[PairedSample]) -> Result<()> {
    fs::create_dir_all(root.join("sar"))?;
    fs::create_dir_all(root.join("eo"))?;
    for s in samples {
        s.sar.save_png(&root.join("sar").join(format!("{}.png", s.id)))?;
        s.eo.save_png(&root.join("eo").join(format!("{}.png", s.id)))?;
    }
    Ok(())
}

/// Seeded validation split. With `merge_val`, everything is labeled train
/// (the final-evaluation protocol that trains on train + val).
pub fn split_manifest(manifest: &DatasetManifest, val_fraction: f64, seed: u64, merge_val: bool) -> Result<DatasetManifest> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(config_err!("val_fraction {val_fraction} must lie in (0, 1)"));
    }
    let mut out = manifest.clone();
    out.samples.sort_by(|a, b| a.id.cmp(&b.id));
    for s in &mut out.samples {
        s.split = Split::Train;
    }
    if merge_val {
        return Ok(out);
    }
    let n_val = (val_fraction * out.samples.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..out.samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for &i in &order[..n_val] {
        out.samples[i].split = Split::Val;
    }
    Ok(out)
}

// Land-cover ramp: water, vegetation, bare soil, built-up. Luminance rises
// monotonically along it, so a colour is recoverable from brightness alone.
const RAMP: [Rgb; 4] = [[20.0, 40.0, 90.0], [40.0, 110.0, 45.0], [170.0, 150.0, 100.0], [225.0, 225.0, 215.0]];

/// Colour at position `t` in [0, 1] on the land-cover ramp.
pub fn ramp_color(t: f64) -> Rgb {
    let s = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (s.floor() as usize).min(RAMP.len() - 2);
    let f = s - i as f64;
    std::array::from_fn(|c| RAMP[i][c] + (RAMP[i + 1][c] - RAMP[i][c]) * f)
}

pub type Rgb = [f64; 3];

fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

/// Seeded EO scene: a smooth gradient along the land-cover ramp with 2–5
/// filled polygons of mutually distinct ramp colours.
pub fn synth_eo(resolution: usize, rng: &mut ChaCha8Rng) -> ImageChip {
    let r = resolution as f64;
    let t0: f64 = rng.gen_range(0.0..1.0);
    let t1 = if t0 < 0.5 { rng.gen_range(t0 + 0.4..=1.0) } else { rng.gen_range(0.0..=t0 - 0.4) };
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let mut pixels: Vec<Rgb> = Vec::with_capacity(resolution * resolution);
    for y in 0..resolution {
        for x in 0..resolution {
            let t = (((x as f64 / r - 0.5) * dx + (y as f64 / r - 0.5) * dy) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
            pixels.push(ramp_color(t0 + (t1 - t0) * t));
        }
    }
    let mut used: Vec<f64> = Vec::new();
    for _ in 0..rng.gen_range(2..=5) {
        let pos = loop {
            let p: f64 = rng.gen_range(0.0..1.0);
            if used.iter().all(|u| (u - p).abs() > 0.12) {
                break p;
            }
        };
        used.push(pos);
        let color = ramp_color(pos);
        let (cx, cy) = (rng.gen_range(0.15..0.85) * r, rng.gen_range(0.15..0.85) * r);
        let radius = rng.gen_range(0.1..0.3) * r;
        let mut angles: Vec<f64> = (0..rng.gen_range(3..=6)).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let poly: Vec<(f64, f64)> = angles
            .iter()
            .map(|a| {
                let rr = radius * rng.gen_range(0.6..1.0);
                (cx + rr * a.cos(), cy + rr * a.sin())
            })
            .collect();
        for y in 0..resolution {
            for x in 0..resolution {
                if inside(&poly, x as f64 + 0.5, y as f64 + 0.5) {
                    pixels[y * resolution + x] = color;
                }
            }
        }
    }
    ImageChip::from_fn(resolution, resolution, 3, |c, y, x| pixels[y * resolution + x][c].round().clamp(0.0, 255.0) as u8)
        .expect("extent checked by caller")
}

/// Luminance, remapped into a compressed radar-like range.
pub fn sar_luminance(eo: &ImageChip) -> ImageChip {
    ImageChip::from_fn(eo.width(), eo.height(), 1, |_, y, x| {
        let l = 0.299 * eo.get(0, y, x) as f64 + 0.587 * eo.get(1, y, x) as f64 + 0.114 * eo.get(2, y, x) as f64;
        (30.0 + 200.0 * (l / 255.0).powf(0.8)).round() as u8
    })
    .expect("same extent as a valid chip")
}

/// 3×3 binomial blur with clamped edges.
pub fn light_blur(chip: &ImageChip) -> ImageChip {
    let (w, h) = (chip.width() as isize, chip.height() as isize);
    const K: [f64; 3] = [1.0, 2.0, 1.0];
    ImageChip::from_fn(chip.width(), chip.height(), chip.channels(), |c, y, x| {
        let mut acc = 0.0;
        for (dy, ky) in K.iter().enumerate() {
            for (dx, kx) in K.iter().enumerate() {
                let yy = (y as isize + dy as isize - 1).clamp(0, h - 1) as usize;
                let xx = (x as isize + dx as isize - 1).clamp(0, w - 1) as usize;
                acc += ky * kx * chip.get(c, yy, xx) as f64;
            }
        }
        (acc / 16.0).round() as u8
    })
    .expect("same extent as a valid chip")
}

/// SAR rendering of an EO chip: luminance, contrast remap, speckle, light blur.
pub fn sar_from_eo(eo: &ImageChip, speckle_strength: f64, seed: u64) -> Result<ImageChip> {
    let lum = sar_luminance(eo);
    let noisy = if speckle_strength > 0.0 { add_speckle(&lum, speckle_strength, seed)? } else { lum };
    Ok(light_blur(&noisy))
}

/// `n` seeded synthetic pairs with ids `s0000`, `s0001`, …
pub fn synth_paired(n: usize, resolution: usize, seed: u64, speckle_strength: f64) -> Result<Vec<PairedSample>> {
    if resolution == 0 || !resolution.is_multiple_of(4) {
        return Err(config_err!("resolution {resolution} must be a positive multiple of 4"));
    }
    if n == 0 {
        return Err(config_err!("need at least one sample"));
    }
    if !(0.0..=1.0).contains(&speckle_strength) {
        return Err(config_err!("speckle strength {speckle_strength} outside [0, 1]"));
    }
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let eo = synth_eo(resolution, &mut rng);
            let sar = sar_from_eo(&eo, speckle_strength, rng.gen())?;
            PairedSample::new(format!("s{i:04}"), sar, eo)
        })
        .collect()
}
