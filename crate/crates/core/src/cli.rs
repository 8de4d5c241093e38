//! Command-line front end. `run` parses arguments, dispatches, and maps
//! failures to exit codes: 2 for usage errors, 1 for everything else.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::chip::ImageChip;
use crate::config::RunConfig;
use crate::dataset::{load_paired, synth_paired, write_paired, Split};
use crate::denoise::{median_filter, DenoiseConfig};
use crate::error::{config_err, Error, Result};
use crate::gradsuite::{run_suite, TOLERANCE};
use crate::metrics::{EvalOptions, FeatureExtractor, MetricsReport, DEFAULT_EXTRACTOR_SEED, DEFAULT_PATCHES};
use crate::pipeline::{ablation, label_for_run, split_for_run};
use crate::trainer::{train, Checkpoint, Translator};

pub const THREADS_ENV: &str = "SAR2EO_THREADS";

#[derive(Parser, Debug)]
#[command(name = "sar2eo", version, about = "SAR to EO chip translation")]
struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic paired dataset (sar/ and eo/ PNGs).
    SynthData {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        res: usize,
        #[arg(long, default_value_t = 0.3)]
        speckle: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Median filter one grayscale PNG.
    Denoise {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "3x3")]
        window: DenoiseConfig,
    },
    /// Train a generator on a paired dataset.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Also write the id<TAB>split manifest used for this run.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Translate a SAR PNG, or every PNG in a directory.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_denoise: bool,
        /// Override the checkpoint's median window.
        #[arg(long)]
        window: Option<DenoiseConfig>,
    },
    /// Score predicted chips against references with the same file names.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PATCHES)]
        patches: usize,
    },
    /// Finite-difference check of every op and network.
    Gradcheck,
    /// Side-by-side comparison grid: SAR, each output directory, label.
    Grid {
        #[arg(long)]
        sar: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        outputs: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only the first N samples (sorted by name).
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Train with and without denoising; report both on the held-out split.
    Ablation {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PATCHES)]
        patches: usize,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// `section.key=value`, applied after the config file.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self, seed: Option<u64>) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            cfg.set_dotted(kv)?;
        }
        if let Some(s) = seed {
            cfg.train.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(config_err!("{THREADS_ENV} must be a positive integer, got {v:?}")),
        },
    }
}

fn extractor(seed: Option<u64>) -> FeatureExtractor {
    FeatureExtractor::new(seed.unwrap_or(DEFAULT_EXTRACTOR_SEED))
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", dir.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn same_dir(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

// Loads the chips of two directories that share file names.
fn paired_dirs(a: &Path, b: &Path) -> Result<(Vec<ImageChip>, Vec<ImageChip>, Vec<String>)> {
    let fa = png_files(a)?;
    let fb = png_files(b)?;
    let na: Vec<String> = fa.iter().map(|p| file_name(p)).collect();
    let nb: Vec<String> = fb.iter().map(|p| file_name(p)).collect();
    let mut orphans: Vec<String> = na.iter().filter(|n| !nb.contains(n)).chain(nb.iter().filter(|n| !na.contains(n))).cloned().collect();
    if !orphans.is_empty() {
        orphans.sort();
        return Err(Error::Pairing(orphans));
    }
    let load = |files: &[PathBuf]| files.iter().map(|p| ImageChip::load_png(p)).collect::<Result<Vec<_>>>();
    Ok((load(&fa)?, load(&fb)?, na))
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::SynthData { n, res, speckle, out: dir } => {
            let samples = synth_paired(n, res, seed.unwrap_or(7), speckle)?;
            write_paired(&dir, &samples)?;
            writeln!(out, "wrote {} pairs at {res}x{res} to {}", samples.len(), dir.display())?;
        }
        Command::Denoise { input, out: dest, window } => {
            let chip = ImageChip::load_png(&input)?;
            median_filter(&chip, &window)?.save_png(&dest)?;
            writeln!(out, "filtered {} with {window} into {}", input.display(), dest.display())?;
        }
        Command::Train { run, out: dest, manifest } => {
            let cfg = run.resolve(seed)?;
            let data = load_paired(&run.data, cfg.train.resolution())?;
            let labelled = label_for_run(&data, &cfg)?;
            if let Some(path) = manifest {
                labelled.save(&path)?;
            }
            let (train_set, held_out) = (labelled.subset(Split::Train), labelled.subset(Split::Val));
            let ckpt = train(&train_set, &cfg.train)?;
            ckpt.save(&dest)?;
            let last = ckpt.history.last().expect("at least one step");
            writeln!(
                out,
                "trained on {} pairs ({} held out), {} steps, final g_loss {} d_loss {}; saved {}",
                train_set.len(),
                held_out.len(),
                ckpt.history.len(),
                last.generator_loss,
                last.discriminator_loss,
                dest.display()
            )?;
        }
        Command::Translate { ckpt, input, out: dest, no_denoise, window } => {
            let t = Translator::new(&Checkpoint::load(&ckpt)?)?;
            let denoise = if no_denoise { None } else { window.or(t.default_denoise()) };
            if input.is_dir() {
                if same_dir(&input, &dest) {
                    return Err(config_err!("output directory must differ from the input directory"));
                }
                fs::create_dir_all(&dest)?;
                let files = png_files(&input)?;
                for f in &files {
                    let chip = ImageChip::load_png(f)?;
                    t.translate(&chip, denoise.as_ref())?.save_png(&dest.join(file_name(f)))?;
                }
                writeln!(out, "translated {} chips into {}", files.len(), dest.display())?;
            } else {
                let chip = ImageChip::load_png(&input)?;
                t.translate(&chip, denoise.as_ref())?.save_png(&dest)?;
                writeln!(out, "translated {} into {}", input.display(), dest.display())?;
            }
        }
        Command::Evaluate { pred, reference, report, patches } => {
            let (p, r, _) = paired_dirs(&pred, &reference)?;
            let opts = EvalOptions { patches, threads: threads()? };
            let m = MetricsReport::evaluate(&p, &r, &extractor(seed), opts)?;
            m.save(&report)?;
            write!(out, "{m}")?;
        }
        Command::Gradcheck => {
            let entries = run_suite(seed.unwrap_or(0))?;
            let mut failed = Vec::new();
            for e in &entries {
                let verdict = if e.passed() { "ok" } else { "FAIL" };
                writeln!(out, "{verdict}\t{:.3e}\t{}\t{}", e.result.max_rel_err, e.result.checked, e.name)?;
                if !e.passed() {
                    failed.push(e.name.clone());
                }
            }
            if !failed.is_empty() {
                return Err(Error::Numeric(format!(
                    "{} checks above {TOLERANCE:e}: {}",
                    failed.len(),
                    failed.join(", ")
                )));
            }
            writeln!(out, "all {} checks below {TOLERANCE:e}", entries.len())?;
        }
        Command::Grid { sar, outputs, labels, out: dest, limit } => {
            let names: Vec<String> = png_files(&sar)?.iter().map(|p| file_name(p)).collect();
            let names = &names[..limit.unwrap_or(names.len()).min(names.len())];
            let mut dirs = vec![sar];
            dirs.extend(outputs);
            dirs.push(labels);
            let rows = names
                .iter()
                .map(|n| dirs.iter().map(|d| ImageChip::load_png(&d.join(n)).map(|c| c.to_rgb())).collect())
                .collect::<Result<Vec<Vec<ImageChip>>>>()?;
            compose_grid(&rows)?.save_png(&dest)?;
            writeln!(out, "grid of {} rows x {} columns written to {}", rows.len(), dirs.len(), dest.display())?;
        }
        Command::Ablation { run, report, patches } => {
            let cfg = run.resolve(seed)?;
            let data = load_paired(&run.data, cfg.train.resolution())?;
            let (train_set, held_out) = split_for_run(&data, &cfg)?;
            let opts = EvalOptions { patches, threads: threads()? };
            let r = ablation(&train_set, &held_out, &cfg, &extractor(seed), opts)?;
            fs::write(&report, r.to_string())?;
            write!(out, "{r}")?;
        }
    }
    Ok(())
}

const GRID_GAP: usize = 2;

/// Tiles equally sized RGB chips row by row on a white background.
pub fn compose_grid(rows: &[Vec<ImageChip>]) -> Result<ImageChip> {
    let first = rows.first().and_then(|r| r.first()).ok_or_else(|| Error::Data("grid needs at least one chip".into()))?;
    let (w, h, cols) = (first.width(), first.height(), rows[0].len());
    for r in rows {
        if r.len() != cols || r.iter().any(|c| !c.same_extent(first) || c.channels() != 3) {
            return Err(Error::Dimension("grid chips must share extent, channel count and column count".into()));
        }
    }
    let gw = cols * w + (cols + 1) * GRID_GAP;
    let gh = rows.len() * h + (rows.len() + 1) * GRID_GAP;
    let mut grid = ImageChip::filled(gw, gh, 3, 255)?;
    for (ri, r) in rows.iter().enumerate() {
        for (ci, chip) in r.iter().enumerate() {
            let (oy, ox) = (GRID_GAP + ri * (h + GRID_GAP), GRID_GAP + ci * (w + GRID_GAP));
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        grid.set(c, oy + y, ox + x, chip.get(c, y, x));
                    }
                }
            }
        }
    }
    Ok(grid)
}

fn quote(msg: &str) -> String {
    format!("{:?}", msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" "))
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = write!(out, "{}", e.render());
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand { 2 } else { 0 };
            }
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(err, "error kind=usage msg={}", quote(first));
            return 2;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error kind={} msg={}", e.kind(), quote(&e.to_string()));
            1
        }
    }
}

pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock(), &mut std::io::stderr().lock())
}
