//! Evaluation: pixel L2, a Fréchet distance over features from a fixed
//! random conv net, a patch-wise perceptual distance, and their mean.
//!
//! Pixels are scaled to [0, 1] before any distance is taken.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::chip::ImageChip;
use crate::error::{config_err, contract_err, Error, Result};
use crate::tensor::{ops, Tensor};

pub const FEATURE_DIM: usize = 64;
pub const DEFAULT_PATCHES: usize = 4;
pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x5EED_FEA7;

/// Mean over pairs of the per-pixel squared distance summed over channels.
pub fn l2_metric(pred: &[ImageChip], reference: &[ImageChip]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(contract_err!("{} predictions against {} references", pred.len(), reference.len()));
    }
    if pred.is_empty() {
        return Err(contract_err!("l2 over an empty set"));
    }
    let mut total = 0.0;
    for (p, r) in pred.iter().zip(reference) {
        if !p.same_extent(r) || p.channels() != r.channels() {
            return Err(contract_err!(
                "shape mismatch: {}x{}x{} vs {}x{}x{}",
                p.channels(),
                p.height(),
                p.width(),
                r.channels(),
                r.height(),
                r.width()
            ));
        }
        let sq: f64 = p
            .data()
            .iter()
            .zip(r.data())
            .map(|(&a, &b)| {
                let d = (a as f64 - b as f64) / 255.0;
                d * d
            })
            .sum();
        total += sq / (p.width() * p.height()) as f64;
    }
    Ok(total / pred.len() as f64)
}

/// Three conv + ReLU + 2x2 average pool stages, then global average pooling.
/// Weights are drawn once from the seed and never change.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    seed: u64,
    weights: Vec<Tensor<f64>>,
}

impl FeatureExtractor {
    pub const WIDTHS: [usize; 3] = [16, 32, FEATURE_DIM];

    pub fn new(seed: u64) -> Self {
        let mut cin = 3;
        let weights = Self::WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let w = Tensor::from_fn([cout, cin, 3, 3], |_| normal.sample(&mut rng));
                cin = cout;
                w
            })
            .collect();
        FeatureExtractor { seed, weights }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        FEATURE_DIM
    }

    /// Feature vector of one chip. Grayscale is replicated to three channels.
    pub fn features(&self, chip: &ImageChip) -> Result<Vec<f64>> {
        let rgb = chip.to_rgb();
        let x = Tensor::new([1, 3, rgb.height(), rgb.width()], rgb.unit())?;
        self.features_tensor(&x)
    }

    fn features_tensor(&self, x: &Tensor<f64>) -> Result<Vec<f64>> {
        let mut x = x.clone();
        for w in &self.weights {
            x = ops::conv2d(&x, w, None, 1, 1)?.map(|v| v.max(0.0));
            x = pool2(&x);
        }
        let (_, c, h, w) = x.dims4()?;
        let hw = (h * w) as f64;
        Ok(x.data().chunks(h * w).take(c).map(|p| p.iter().sum::<f64>() / hw).collect())
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        FeatureExtractor::new(DEFAULT_EXTRACTOR_SEED)
    }
}

// 2x2 average pool with floored output; an extent of 1 stays 1.
fn pool2(x: &Tensor<f64>) -> Tensor<f64> {
    let (n, c, h, w) = x.dims4().expect("rank 4");
    let (fy, fx) = (if h >= 2 { 2 } else { 1 }, if w >= 2 { 2 } else { 1 });
    let (oh, ow) = (h / fy, w / fx);
    let src = x.data();
    let area = (fy * fx) as f64;
    Tensor::from_fn([n, c, oh, ow], |i| {
        let (plane, rest) = (i / (oh * ow), i % (oh * ow));
        let (oy, ox) = (rest / ow, rest % ow);
        let base = plane * h * w;
        let mut s = 0.0;
        for dy in 0..fy {
            for dx in 0..fx {
                s += src[base + (oy * fy + dy) * w + ox * fx + dx];
            }
        }
        s / area
    })
}

/// Features for every chip, optionally spread over `threads` workers.
/// The result does not depend on the thread count.
pub fn extract_all(chips: &[ImageChip], extractor: &FeatureExtractor, threads: usize) -> Result<Vec<Vec<f64>>> {
    let threads = threads.clamp(1, chips.len().max(1));
    if threads == 1 {
        return chips.iter().map(|c| extractor.features(c)).collect();
    }
    let per = chips.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Vec<f64>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = chips
            .chunks(per)
            .map(|part| s.spawn(move || part.iter().map(|c| extractor.features(c)).collect::<Result<Vec<_>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("feature worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(chips.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Running mean and scatter matrix; partial results merge pairwise.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsAccumulator {
    n: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        StatsAccumulator { n: 0, mean: DVector::zeros(dim), scatter: DMatrix::zeros(dim, dim) }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        let mut one = StatsAccumulator::new(self.mean.len());
        if x.len() != one.mean.len() {
            return Err(contract_err!("feature of length {} pushed into {}-d stats", x.len(), one.mean.len()));
        }
        one.n = 1;
        one.mean.copy_from_slice(x);
        self.merge(&one)
    }

    pub fn merge(&mut self, other: &StatsAccumulator) -> Result<()> {
        if other.mean.len() != self.mean.len() {
            return Err(contract_err!("merging {}-d stats into {}-d", other.mean.len(), self.mean.len()));
        }
        if other.n == 0 {
            return Ok(());
        }
        if self.n == 0 {
            *self = other.clone();
            return Ok(());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.mean += &delta * (nb / n);
        self.scatter += &other.scatter + (&delta * delta.transpose()) * (na * nb / n);
        self.n += other.n;
        Ok(())
    }

    pub fn finish(&self) -> Result<FeatureStats> {
        if self.n < 2 {
            return Err(Error::Data(format!("covariance needs at least 2 samples, got {}", self.n)));
        }
        let mut sigma = &self.scatter / (self.n as f64 - 1.0);
        symmetrize(&mut sigma);
        FeatureStats::new(self.mean.clone(), sigma, self.n)
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
}

impl FeatureStats {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, n: usize) -> Result<Self> {
        if sigma.nrows() != mu.len() || sigma.ncols() != mu.len() {
            return Err(contract_err!("mean is {}-d but covariance is {}x{}", mu.len(), sigma.nrows(), sigma.ncols()));
        }
        if n < 2 {
            return Err(Error::Data(format!("covariance needs at least 2 samples, got {n}")));
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-9 {
            return Err(Error::Numeric(format!("covariance asymmetric by {asym:e}")));
        }
        Ok(FeatureStats { mu, sigma, n })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

pub fn stats_from_features(features: &[Vec<f64>]) -> Result<FeatureStats> {
    let dim = features.first().map_or(0, |f| f.len());
    let mut acc = StatsAccumulator::new(dim);
    for f in features {
        acc.push(f)?;
    }
    acc.finish()
}

/// Sample mean and unbiased covariance of the extractor's features.
pub fn compute_feature_stats(images: &[ImageChip], extractor: &FeatureExtractor) -> Result<FeatureStats> {
    compute_feature_stats_threaded(images, extractor, 1)
}

pub fn compute_feature_stats_threaded(
    images: &[ImageChip],
    extractor: &FeatureExtractor,
    threads: usize,
) -> Result<FeatureStats> {
    if images.len() < 2 {
        return Err(Error::Data(format!("feature statistics need at least 2 images, got {}", images.len())));
    }
    stats_from_features(&extract_all(images, extractor, threads)?)
}

/// Principal square root of a symmetric PSD matrix. Negative eigenvalues
/// (rounding noise) are clamped to zero.
pub fn matrix_sqrt_psd(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (eig, _) = psd_eigen(sigma)?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn psd_eigen(sigma: &DMatrix<f64>) -> Result<(SymmetricEigen<f64, nalgebra::Dyn>, f64)> {
    if !sigma.is_square() {
        return Err(contract_err!("{}x{} matrix is not square", sigma.nrows(), sigma.ncols()));
    }
    let asym = (sigma - sigma.transpose()).amax();
    let scale = sigma.amax().max(1.0);
    if asym > 1e-8 * scale {
        return Err(Error::Numeric(format!("matrix asymmetric by {asym:e}")));
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    let mut s = sigma.clone();
    symmetrize(&mut s);
    Ok((SymmetricEigen::new(s), asym))
}

/// Tr((a b)^{1/2}) for PSD a, b, through the similar matrix √a · b · √a.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let ra = matrix_sqrt_psd(a)?;
    let mut m = &ra * b * &ra;
    symmetrize(&mut m);
    let (eig, _) = psd_eigen(&m)?;
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    // Eigenvalues within rounding of zero carry no signal; their square
    // roots would otherwise dominate the error.
    let floor = top * f64::EPSILON * m.nrows() as f64;
    Ok(eig.eigenvalues.iter().map(|&l| if l > floor { l.sqrt() } else { 0.0 }).sum())
}

/// ‖μr − μf‖² + Tr(Σr + Σf − 2(Σr Σf)^{1/2}), clamped at zero.
pub fn frechet_distance(real: &FeatureStats, fake: &FeatureStats) -> Result<f64> {
    if real.dim() != fake.dim() {
        return Err(contract_err!("comparing {}-d stats with {}-d", real.dim(), fake.dim()));
    }
    let mean_term = (&real.mu - &fake.mu).norm_squared();
    let cross = trace_sqrt_product(&real.sigma, &fake.sigma)?;
    let d = mean_term + real.sigma.trace() + fake.sigma.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

fn tile(chip: &ImageChip, ty: usize, tx: usize, th: usize, tw: usize) -> ImageChip {
    ImageChip::from_fn(tw, th, chip.channels(), |c, y, x| chip.get(c, ty * th + y, tx * tw + x))
        .expect("tile inside chip")
}

/// Mean over a `patches` x `patches` grid of squared feature distances
/// between corresponding tiles.
pub fn perceptual_distance(a: &ImageChip, b: &ImageChip, extractor: &FeatureExtractor, patches: usize) -> Result<f64> {
    if !a.same_extent(b) || a.channels() != b.channels() {
        return Err(contract_err!("perceptual distance between differently shaped chips"));
    }
    if patches == 0 || !a.width().is_multiple_of(patches) || !a.height().is_multiple_of(patches) {
        return Err(config_err!("{}x{} chip does not split into a {patches}x{patches} grid", a.width(), a.height()));
    }
    if a == b {
        return Ok(0.0);
    }
    let (th, tw) = (a.height() / patches, a.width() / patches);
    let mut total = 0.0;
    for ty in 0..patches {
        for tx in 0..patches {
            let fa = extractor.features(&tile(a, ty, tx, th, tw))?;
            let fb = extractor.features(&tile(b, ty, tx, th, tw))?;
            total += fa.iter().zip(&fb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    Ok(total / (patches * patches) as f64)
}

/// Arithmetic mean of the three metrics.
pub fn final_score(l2: f64, perceptual: f64, frechet: f64) -> Result<f64> {
    for (name, v) in [("l2", l2), ("perceptual", perceptual), ("frechet", frechet)] {
        if !v.is_finite() || v < 0.0 {
            return Err(contract_err!("{name} must be finite and non-negative, got {v}"));
        }
    }
    Ok((l2 + perceptual + frechet) / 3.0)
}

/// Round half away from zero at two decimals, the way scores are printed.
pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub l2: f64,
    pub perceptual: f64,
    pub frechet: f64,
    pub final_score: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub patches: usize,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { patches: DEFAULT_PATCHES, threads: 1 }
    }
}

impl MetricsReport {
    pub fn new(l2: f64, perceptual: f64, frechet: f64) -> Result<Self> {
        Ok(MetricsReport { l2, perceptual, frechet, final_score: final_score(l2, perceptual, frechet)? })
    }

    /// Scores `pred` against `reference`, paired by position.
    pub fn evaluate(
        pred: &[ImageChip],
        reference: &[ImageChip],
        extractor: &FeatureExtractor,
        opts: EvalOptions,
    ) -> Result<Self> {
        let l2 = l2_metric(pred, reference)?;
        let mut perceptual = 0.0;
        for (p, r) in pred.iter().zip(reference) {
            perceptual += perceptual_distance(p, r, extractor, opts.patches)?;
        }
        perceptual /= pred.len() as f64;
        let real = compute_feature_stats_threaded(reference, extractor, opts.threads)?;
        let fake = compute_feature_stats_threaded(pred, extractor, opts.threads)?;
        let frechet = frechet_distance(&real, &fake)?;
        Self::new(l2, perceptual, frechet)
    }

    pub fn entries(&self) -> [(&'static str, f64); 4] {
        [("l2", self.l2), ("perceptual", self.perceptual), ("frechet", self.frechet), ("final_score", self.final_score)]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut vals = [None; 4];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad report line: {line}")))?;
            let k = k.trim();
            let v: f64 = v.trim().parse().map_err(|_| Error::Format(format!("bad number in: {line}")))?;
            if let Some(i) = ["l2", "perceptual", "frechet", "final_score"].iter().position(|n| *n == k) {
                vals[i] = Some(v);
            }
        }
        match vals {
            [Some(l2), Some(perceptual), Some(frechet), Some(final_score)] => {
                Ok(MetricsReport { l2, perceptual, frechet, final_score })
            }
            _ => Err(Error::Format("report lacks one of l2, perceptual, frechet, final_score".into())),
        }
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v:?}")?;
        }
        for (k, v) in self.entries() {
            writeln!(f, "{k}_2dp = {:.2}", round2(v))?;
        }
        Ok(())
    }
}
