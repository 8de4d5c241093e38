//! Denoising enhancement: windowed median filtering of SAR chips, and the
//! speckle / impulse noise models used to exercise it.
//!
//! Only pixels whose full `n×m` neighbourhood lies inside the image are
//! rewritten; the border band keeps the input values.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chip::ImageChip;
use crate::error::{config_err, contract_err, dim_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BorderPolicy {
    /// Pixels without a full neighbourhood are copied from the input.
    #[default]
    CopyInput,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiseConfig {
    /// Window rows.
    pub window_n: usize,
    /// Window columns.
    pub window_m: usize,
    pub border_policy: BorderPolicy,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        DenoiseConfig { window_n: 3, window_m: 3, border_policy: BorderPolicy::CopyInput }
    }
}

impl DenoiseConfig {
    pub fn new(window_n: usize, window_m: usize) -> Result<Self> {
        let cfg = DenoiseConfig { window_n, window_m, border_policy: BorderPolicy::CopyInput };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_n == 0 || self.window_m == 0 || self.window_n.is_multiple_of(2) || self.window_m.is_multiple_of(2) {
            return Err(config_err!(
                "median window {}x{} must have odd extents >= 1",
                self.window_n,
                self.window_m
            ));
        }
        if self.window_n * self.window_m >= 1 << 16 {
            return Err(config_err!("median window {}x{} is too large", self.window_n, self.window_m));
        }
        Ok(())
    }

    fn check_fits(&self, chip: &ImageChip) -> Result<()> {
        self.validate()?;
        if self.window_n > chip.height() || self.window_m > chip.width() {
            return Err(dim_err!(
                "window {}x{} does not fit a {}x{} image",
                self.window_n,
                self.window_m,
                chip.height(),
                chip.width()
            ));
        }
        Ok(())
    }
}

impl fmt::Display for DenoiseConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.window_n, self.window_m)
    }
}

impl FromStr for DenoiseConfig {
    type Err = Error;

    /// Parses `"NxM"` or a single odd size `"N"`.
    fn from_str(s: &str) -> Result<Self> {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| config_err!("bad window spec {s:?}"));
        match s.split_once(['x', 'X']) {
            Some((n, m)) => DenoiseConfig::new(parse(n)?, parse(m)?),
            None => {
                let n = parse(s)?;
                DenoiseConfig::new(n, n)
            }
        }
    }
}

fn require_gray(image: &ImageChip) -> Result<()> {
    if image.channels() != 1 {
        return Err(contract_err!(
            "median_filter takes a single-channel chip, got {} channels",
            image.channels()
        ));
    }
    Ok(())
}

/// Window heights up to this use the row-sliding path; measured crossover on
/// 512x512 chips is around 25.
pub const ROW_PATH_MAX_HEIGHT: usize = 23;

/// Histogram sliding-window median, exact for 8-bit data.
///
/// Short windows slide a single window histogram along each row; taller
/// ones switch to per-column histograms whose cost per pixel is independent
/// of the window.
pub fn median_filter(image: &ImageChip, cfg: &DenoiseConfig) -> Result<ImageChip> {
    if cfg.window_n <= ROW_PATH_MAX_HEIGHT {
        median_filter_rows(image, cfg)
    } else {
        median_filter_columns(image, cfg)
    }
}

/// Row-sliding histogram median.
///
/// Each step removes the window's leftmost column and adds a new one (`2n`
/// histogram updates). The median value is tracked together with the count
/// of window values below it, so it only moves as far as the window changed.
pub fn median_filter_rows(image: &ImageChip, cfg: &DenoiseConfig) -> Result<ImageChip> {
    require_gray(image)?;
    cfg.check_fits(image)?;
    let (h, w) = (image.height(), image.width());
    let (rn, rm) = (cfg.window_n / 2, cfg.window_m / 2);
    let src = image.data();
    let mut out = image.clone();
    let dst = out.data_mut();
    let target = (cfg.window_n * cfg.window_m / 2) as u32;
    let mut hist = [0u32; 256];
    for y in rn..h - rn {
        hist.fill(0);
        let rows: Vec<&[u8]> = (y - rn..y + rn + 1).map(|yy| &src[yy * w..(yy + 1) * w]).collect();
        for row in &rows {
            for &v in &row[..cfg.window_m] {
                hist[v as usize] += 1;
            }
        }
        let (mut med, mut below) = (0usize, 0u32);
        while below + hist[med] <= target {
            below += hist[med];
            med += 1;
        }
        let line = &mut dst[y * w..(y + 1) * w];
        line[rm] = med as u8;
        for (x, px) in line.iter_mut().enumerate().take(w - rm).skip(rm + 1) {
            let (old, new) = (x - rm - 1, x + rm);
            // counts stay non-negative overall; wrapping only skips the checks
            for row in &rows {
                let (ov, nv) = (row[old] as usize, row[new] as usize);
                hist[ov] = hist[ov].wrapping_sub(1);
                hist[nv] = hist[nv].wrapping_add(1);
                below = below.wrapping_add((nv < med) as u32).wrapping_sub((ov < med) as u32);
            }
            while below > target {
                med -= 1;
                below = below.wrapping_sub(hist[med]);
            }
            loop {
                let b = below.wrapping_add(hist[med]);
                if b > target {
                    break;
                }
                below = b;
                med += 1;
            }
            *px = med as u8;
        }
    }
    Ok(out)
}

/// Column-histogram median.
///
/// Each column keeps a 256-bin histogram of the `n` rows around the current
/// output row, updated by one removal and one insertion per row step. The
/// window's 16-bin coarse histogram slides right by adding one column and
/// subtracting another. Fine 16-bin segments are brought up to date only
/// when the median search lands in them, so the cost per pixel does not
/// grow with the window.
pub fn median_filter_columns(image: &ImageChip, cfg: &DenoiseConfig) -> Result<ImageChip> {
    require_gray(image)?;
    cfg.check_fits(image)?;
    let (h, w) = (image.height(), image.width());
    let (rn, rm) = (cfg.window_n / 2, cfg.window_m / 2);
    let src = image.data();
    let mut out = image.clone();
    if cfg.window_n == 1 && cfg.window_m == 1 {
        return Ok(out);
    }
    // rank of the median inside the sorted window, 0-based
    let target = (cfg.window_n * cfg.window_m / 2) as u16;

    // counts never exceed the window area, which validate() keeps below 2^16
    let mut col_fine = vec![0u16; w * 256];
    let mut col_coarse = vec![0u16; w * 16];
    for y in 0..cfg.window_n {
        for x in 0..w {
            let v = src[y * w + x] as usize;
            col_fine[x * 256 + v] += 1;
            col_coarse[x * 16 + (v >> 4)] += 1;
        }
    }

    let mut fine = [0u16; 256];
    let mut coarse = [0u16; 16];
    // output column each fine segment is valid for
    let mut valid_at = [usize::MAX; 16];
    for y in rn..h - rn {
        if y > rn {
            let (old, new) = (y - rn - 1, y + rn);
            for x in 0..w {
                let ov = src[old * w + x] as usize;
                let nv = src[new * w + x] as usize;
                col_fine[x * 256 + ov] -= 1;
                col_coarse[x * 16 + (ov >> 4)] -= 1;
                col_fine[x * 256 + nv] += 1;
                col_coarse[x * 16 + (nv >> 4)] += 1;
            }
        }
        coarse.fill(0);
        for x in 0..cfg.window_m {
            add16(&mut coarse, &col_coarse[x * 16..(x + 1) * 16]);
        }
        valid_at.fill(usize::MAX);
        let row = &mut out.data_mut()[y * w..(y + 1) * w];
        for x in rm..w - rm {
            if x > rm {
                sub16(&mut coarse, &col_coarse[(x - rm - 1) * 16..(x - rm) * 16]);
                add16(&mut coarse, &col_coarse[(x + rm) * 16..(x + rm + 1) * 16]);
            }
            let mut seen = 0u16;
            let mut k = 0;
            while seen.wrapping_add(coarse[k]) <= target {
                seen = seen.wrapping_add(coarse[k]);
                k += 1;
            }
            let seg = &mut fine[k * 16..(k + 1) * 16];
            let last = valid_at[k];
            if last == usize::MAX || x - last > 2 * rm {
                seg.fill(0);
                for c in x - rm..=x + rm {
                    add16(seg, &col_fine[c * 256 + k * 16..c * 256 + k * 16 + 16]);
                }
            } else {
                for t in last + 1..=x {
                    let (o, n) = ((t - rm - 1) * 256 + k * 16, (t + rm) * 256 + k * 16);
                    sub16(seg, &col_fine[o..o + 16]);
                    add16(seg, &col_fine[n..n + 16]);
                }
            }
            valid_at[k] = x;
            let mut v = 0;
            loop {
                seen = seen.wrapping_add(seg[v]);
                if seen > target {
                    break;
                }
                v += 1;
            }
            row[x] = (k * 16 + v) as u8;
        }
    }
    Ok(out)
}

#[inline]
fn add16(acc: &mut [u16], h: &[u16]) {
    for (a, &b) in acc[..16].iter_mut().zip(&h[..16]) {
        *a = a.wrapping_add(b);
    }
}

#[inline]
fn sub16(acc: &mut [u16], h: &[u16]) {
    for (a, &b) in acc[..16].iter_mut().zip(&h[..16]) {
        *a = a.wrapping_sub(b);
    }
}

/// Reference median filter: sort every window. Same contract as [`median_filter`].
pub fn median_filter_naive(image: &ImageChip, cfg: &DenoiseConfig) -> Result<ImageChip> {
    require_gray(image)?;
    cfg.check_fits(image)?;
    let (h, w) = (image.height(), image.width());
    let (rn, rm) = (cfg.window_n / 2, cfg.window_m / 2);
    let mut out = image.clone();
    let mut window = Vec::with_capacity(cfg.window_n * cfg.window_m);
    for y in rn..h - rn {
        for x in rm..w - rm {
            window.clear();
            for yy in y - rn..=y + rn {
                window.extend_from_slice(&image.data()[yy * w + x - rm..=yy * w + x + rm]);
            }
            window.sort_unstable();
            out.data_mut()[y * w + x] = window[window.len() / 2];
        }
    }
    Ok(out)
}

/// Apply [`median_filter`] to every channel independently.
pub fn median_filter_channels(image: &ImageChip, cfg: &DenoiseConfig) -> Result<ImageChip> {
    let planes = image
        .split_channels()
        .iter()
        .map(|p| median_filter(p, cfg))
        .collect::<Result<Vec<_>>>()?;
    ImageChip::merge_channels(&planes)
}

/// Multiplicative speckle: `p · (1 + strength·u)`, `u ~ U[-1, 1]`, rounded and clamped.
pub fn add_speckle(image: &ImageChip, strength: f64, seed: u64) -> Result<ImageChip> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(config_err!("speckle strength {strength} outside [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for p in out.data_mut() {
        let u: f64 = rng.gen_range(-1.0..=1.0);
        *p = (*p as f64 * (1.0 + strength * u)).round().clamp(0.0, 255.0) as u8;
    }
    Ok(out)
}

/// Set exactly `round(density·H·W)` pixel positions to 0 or 255 (all channels).
pub fn add_salt_pepper(image: &ImageChip, density: f64, seed: u64) -> Result<ImageChip> {
    if !(0.0..=1.0).contains(&density) {
        return Err(config_err!("salt-and-pepper density {density} outside [0, 1]"));
    }
    let (h, w) = (image.height(), image.width());
    let count = (density * (h * w) as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for pos in sample(&mut rng, h * w, count) {
        let v = if rng.gen_bool(0.5) { 255 } else { 0 };
        for c in 0..image.channels() {
            out.set(c, pos / w, pos % w, v);
        }
    }
    Ok(out)
}

/// Fraction of corrupted pixels (`noisy != clean`) that the filter brought
/// back to within ±2 gray levels of `clean`.
pub fn restoration_rate(clean: &ImageChip, noisy: &ImageChip, filtered: &ImageChip) -> Result<f64> {
    let shape = |c: &ImageChip| (c.width(), c.height(), c.channels());
    if shape(clean) != shape(noisy) || shape(clean) != shape(filtered) {
        return Err(dim_err!("restoration_rate: chips differ in shape"));
    }
    let (mut corrupted, mut restored) = (0usize, 0usize);
    for ((&c, &n), &f) in clean.data().iter().zip(noisy.data()).zip(filtered.data()) {
        if c != n {
            corrupted += 1;
            if c.abs_diff(f) <= 2 {
                restored += 1;
            }
        }
    }
    if corrupted == 0 {
        return Err(Error::Data("restoration rate undefined: no corrupted pixels".into()));
    }
    Ok(restored as f64 / corrupted as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn random_chip(w: usize, h: usize, seed: u64) -> ImageChip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageChip::from_fn(w, h, 1, |_, _, _| rng.gen()).unwrap()
    }

    // Independent brute force used by the oracle tests: collect, sort, pick.
    fn brute_median(img: &ImageChip, y: usize, x: usize, n: usize, m: usize) -> u8 {
        let mut v: Vec<u8> = Vec::new();
        for yy in y - n / 2..=y + n / 2 {
            for xx in x - m / 2..=x + m / 2 {
                v.push(img.get(0, yy, xx));
            }
        }
        v.sort();
        v[v.len() / 2]
    }

    #[test]
    fn constant_image_unchanged() {
        let img = ImageChip::filled(9, 7, 1, 42).unwrap();
        for cfg in [DenoiseConfig::new(3, 3).unwrap(), DenoiseConfig::new(5, 3).unwrap()] {
            assert_eq!(median_filter(&img, &cfg).unwrap(), img);
        }
    }

    #[test]
    fn single_spike_removed() {
        let mut img = ImageChip::filled(5, 5, 1, 0).unwrap();
        img.set(0, 2, 2, 255);
        let out = median_filter(&img, &DenoiseConfig::default()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn matches_brute_force_everywhere() {
        for seed in 0..5 {
            let img = random_chip(32, 32, seed);
            for (n, m) in [(3, 3), (5, 5), (3, 5), (1, 3)] {
                let cfg = DenoiseConfig::new(n, m).unwrap();
                let fast = median_filter(&img, &cfg).unwrap();
                for y in 0..32 {
                    for x in 0..32 {
                        let interior = y >= n / 2 && y < 32 - n / 2 && x >= m / 2 && x < 32 - m / 2;
                        let want = if interior { brute_median(&img, y, x, n, m) } else { img.get(0, y, x) };
                        assert_eq!(fast.get(0, y, x), want, "({y},{x}) window {n}x{m}");
                    }
                }
                assert_eq!(fast, median_filter_naive(&img, &cfg).unwrap());
            }
        }
    }

    #[test]
    fn both_histogram_paths_match_naive() {
        for (seed, (w, h)) in [(40, 48), (33, 29), (64, 64)].into_iter().enumerate() {
            let img = random_chip(w, h, 100 + seed as u64);
            for (n, m) in [(1, 1), (3, 3), (5, 5), (7, 3), (9, 9), (15, 15), (13, 21), (25, 25), (27, 5)] {
                let cfg = DenoiseConfig::new(n, m).unwrap();
                let naive = median_filter_naive(&img, &cfg).unwrap();
                assert_eq!(median_filter_rows(&img, &cfg).unwrap(), naive, "rows {n}x{m}");
                assert_eq!(median_filter_columns(&img, &cfg).unwrap(), naive, "columns {n}x{m}");
            }
        }
        // runs of equal values and extreme bins
        let img = ImageChip::from_fn(40, 40, 1, |_, y, x| [0u8, 255, 255, 7][(x / 3 + y / 5) % 4]).unwrap();
        for k in [3, 5, 11, 31] {
            let cfg = DenoiseConfig::new(k, k).unwrap();
            let naive = median_filter_naive(&img, &cfg).unwrap();
            assert_eq!(median_filter_rows(&img, &cfg).unwrap(), naive);
            assert_eq!(median_filter_columns(&img, &cfg).unwrap(), naive);
        }
    }

    #[test]
    fn window_filling_the_image() {
        let img = random_chip(5, 3, 8);
        let cfg = DenoiseConfig::new(3, 5).unwrap();
        let out = median_filter(&img, &cfg).unwrap();
        assert_eq!(out.get(0, 1, 2), brute_median(&img, 1, 2, 3, 5));
        assert_eq!(out, median_filter_naive(&img, &cfg).unwrap());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(DenoiseConfig::new(2, 3), Err(Error::Config(_))));
        assert!(DenoiseConfig::new(0, 3).is_err());
        let rgb = ImageChip::filled(8, 8, 3, 1).unwrap();
        assert!(matches!(median_filter(&rgb, &DenoiseConfig::default()), Err(Error::Contract(_))));
        assert_eq!(median_filter_channels(&rgb, &DenoiseConfig::default()).unwrap(), rgb);
        let tiny = ImageChip::filled(2, 8, 1, 1).unwrap();
        assert!(matches!(median_filter(&tiny, &DenoiseConfig::default()), Err(Error::Dimension(_))));
        assert_eq!("5x3".parse::<DenoiseConfig>().unwrap(), DenoiseConfig::new(5, 3).unwrap());
        assert_eq!("7".parse::<DenoiseConfig>().unwrap(), DenoiseConfig::new(7, 7).unwrap());
        assert!("4x4".parse::<DenoiseConfig>().is_err());
    }

    #[test]
    fn speckle_behaviour() {
        let img = ImageChip::from_fn(32, 32, 1, |_, y, x| (60 + y * 3 + x) as u8).unwrap();
        assert_eq!(add_speckle(&img, 0.0, 1).unwrap(), img);
        assert_eq!(add_speckle(&img, 0.5, 7).unwrap(), add_speckle(&img, 0.5, 7).unwrap());
        assert!(add_speckle(&img, 1.5, 7).is_err());
        let mad = |s: f64| {
            let n = add_speckle(&img, s, 3).unwrap();
            n.data().iter().zip(img.data()).map(|(&a, &b)| a.abs_diff(b) as f64).sum::<f64>() / 1024.0
        };
        let (a, b, c) = (mad(0.1), mad(0.3), mad(0.5));
        assert!(a < b && b < c, "{a} {b} {c}");
    }

    #[test]
    fn salt_pepper_counts() {
        let img = ImageChip::filled(100, 100, 1, 128).unwrap();
        assert_eq!(add_salt_pepper(&img, 0.0, 1).unwrap(), img);
        let all = add_salt_pepper(&img, 1.0, 1).unwrap();
        assert!(all.data().iter().all(|&v| v == 0 || v == 255));
        let some = add_salt_pepper(&img, 0.05, 2).unwrap();
        assert_eq!(some.data().iter().filter(|&&v| v != 128).count(), 500);
        assert_eq!(some, add_salt_pepper(&img, 0.05, 2).unwrap());
        assert!(add_salt_pepper(&img, -0.1, 1).is_err());
    }

    #[test]
    fn restoration_on_smooth_gradient() {
        let clean = ImageChip::from_fn(64, 64, 1, |_, y, x| (40 + y + x) as u8).unwrap();
        let noisy = add_salt_pepper(&clean, 0.05, 4).unwrap();
        let filtered = median_filter(&noisy, &DenoiseConfig::default()).unwrap();
        assert_eq!(restoration_rate(&clean, &noisy, &clean).unwrap(), 1.0);
        assert_eq!(restoration_rate(&clean, &noisy, &noisy).unwrap(), 0.0);
        let rate = restoration_rate(&clean, &noisy, &filtered).unwrap();
        assert!(rate > 0.9, "rate {rate}");
        assert!(matches!(restoration_rate(&clean, &clean, &clean), Err(Error::Data(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn paths_agree_with_oracle(seed in any::<u64>(), w in 3usize..40, h in 3usize..40, hn in 0usize..6, hm in 0usize..6) {
            let img = random_chip(w, h, seed);
            let n = (2 * hn + 1).min(if h % 2 == 1 { h } else { h - 1 });
            let m = (2 * hm + 1).min(if w % 2 == 1 { w } else { w - 1 });
            let cfg = DenoiseConfig::new(n, m).unwrap();
            let naive = median_filter_naive(&img, &cfg).unwrap();
            prop_assert_eq!(&median_filter_rows(&img, &cfg).unwrap(), &naive);
            prop_assert_eq!(&median_filter_columns(&img, &cfg).unwrap(), &naive);
        }

        #[test]
        fn bounded_by_neighbourhood_and_border_preserved(
            seed in any::<u64>(), w in 5usize..24, h in 5usize..24, half in 1usize..3,
        ) {
            let img = random_chip(w, h, seed);
            let n = (2 * half + 1).min(h - (1 - h % 2));
            let cfg = DenoiseConfig::new(n, 3).unwrap();
            let out = median_filter(&img, &cfg).unwrap();
            let (rn, rm) = (n / 2, 1);
            for y in 0..h {
                for x in 0..w {
                    let interior = y >= rn && y + rn < h && x >= rm && x + rm < w;
                    if !interior {
                        prop_assert_eq!(out.get(0, y, x), img.get(0, y, x));
                        continue;
                    }
                    let mut lo = 255u8;
                    let mut hi = 0u8;
                    let mut present = false;
                    for yy in y - rn..=y + rn {
                        for xx in x - rm..=x + rm {
                            let v = img.get(0, yy, xx);
                            lo = lo.min(v);
                            hi = hi.max(v);
                            present |= v == out.get(0, y, x);
                        }
                    }
                    let v = out.get(0, y, x);
                    prop_assert!(lo <= v && v <= hi && present);
                }
            }
        }
    }
}
