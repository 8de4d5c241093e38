//! C ABI over the `sar2eo` crate.
//!
//! Images cross the boundary as planar (channel-major) 8-bit buffers. Every
//! fallible call returns a [`Sar2eoStatus`]; on failure the message is kept
//! per thread and can be read with [`sar2eo_last_error_message`]. Panics are
//! caught and reported as `SAR2EO_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sar2eo::denoise::{median_filter_channels, DenoiseConfig};
use sar2eo::metrics::{final_score, l2_metric, EvalOptions, FeatureExtractor, MetricsReport};
use sar2eo::trainer::{Checkpoint, Translator};
use sar2eo::{Error, ErrorKind, ImageChip};

/// Result of every fallible call. `SAR2EO_STATUS_OK` is zero.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sar2eoStatus {
    Ok = 0,
    NullPointer = 1,
    BufferSize = 2,
    Dimension = 3,
    Config = 4,
    Contract = 5,
    Data = 6,
    Pairing = 7,
    Numeric = 8,
    Format = 9,
    Io = 10,
    Panic = 11,
}

impl From<ErrorKind> for Sar2eoStatus {
    fn from(kind: ErrorKind) -> Self {
        match kind {
            ErrorKind::Dimension => Sar2eoStatus::Dimension,
            ErrorKind::Config => Sar2eoStatus::Config,
            ErrorKind::Contract => Sar2eoStatus::Contract,
            ErrorKind::Data => Sar2eoStatus::Data,
            ErrorKind::Pairing => Sar2eoStatus::Pairing,
            ErrorKind::Numeric => Sar2eoStatus::Numeric,
            ErrorKind::Format => Sar2eoStatus::Format,
            ErrorKind::Io => Sar2eoStatus::Io,
        }
    }
}

/// The four evaluation numbers; `final_score` is the mean of the other three.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sar2eoMetrics {
    pub l2: f64,
    pub perceptual: f64,
    pub frechet: f64,
    pub final_score: f64,
}

/// A trained generator ready for inference. Opaque to C.
pub struct Sar2eoModel {
    translator: Translator,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(Sar2eoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(e.kind().into(), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(Sar2eoStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Sar2eoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            Sar2eoStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            Sar2eoStatus::Panic
        }
    }
}

unsafe fn slice<'a>(data: *const u8, len: usize, what: &str) -> Result<&'a [u8], Failure> {
    if data.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

fn image_len(width: usize, height: usize, channels: usize) -> Result<usize, Failure> {
    width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Failure(Sar2eoStatus::Dimension, format!("{width}x{height}x{channels} overflows")))
}

unsafe fn chip(data: *const u8, width: usize, height: usize, channels: usize, what: &str) -> Result<ImageChip, Failure> {
    let len = image_len(width, height, channels)?;
    Ok(ImageChip::new(width, height, channels, slice(data, len, what)?.to_vec())?)
}

unsafe fn write_out(out: *mut u8, out_len: usize, chip: &ImageChip) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    let src = chip.data();
    if out_len < src.len() {
        return Err(Failure(
            Sar2eoStatus::BufferSize,
            format!("output buffer holds {out_len} bytes, result needs {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

/// Window from `(n, m)`; `(0, 0)` means no filtering.
fn window(n: usize, m: usize) -> Result<Option<DenoiseConfig>, Failure> {
    if n == 0 && m == 0 {
        return Ok(None);
    }
    Ok(Some(DenoiseConfig::new(n, m)?))
}

/// Message for the most recent failure on this thread, or null if the last
/// call succeeded. Valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn sar2eo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, lower-case name of a status code.
#[no_mangle]
pub extern "C" fn sar2eo_status_name(status: Sar2eoStatus) -> *const c_char {
    let s: &'static CStr = match status {
        Sar2eoStatus::Ok => c"ok",
        Sar2eoStatus::NullPointer => c"null_pointer",
        Sar2eoStatus::BufferSize => c"buffer_size",
        Sar2eoStatus::Dimension => c"dimension",
        Sar2eoStatus::Config => c"config",
        Sar2eoStatus::Contract => c"contract",
        Sar2eoStatus::Data => c"data",
        Sar2eoStatus::Pairing => c"pairing",
        Sar2eoStatus::Numeric => c"numeric",
        Sar2eoStatus::Format => c"format",
        Sar2eoStatus::Io => c"io",
        Sar2eoStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sar2eo_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Loads a checkpoint file. On success `*out` owns a model that must be
/// released with [`sar2eo_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sar2eo_model_load(path: *const c_char, out: *mut *mut Sar2eoModel) -> Sar2eoStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(Sar2eoStatus::Io, "path is not valid UTF-8".into()))?;
        let ckpt = Checkpoint::load(Path::new(path))?;
        *out = Box::into_raw(Box::new(Sar2eoModel { translator: Translator::new(&ckpt)? }));
        Ok(())
    })
}

/// Loads a checkpoint from an in-memory copy of the file.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sar2eo_model_from_bytes(bytes: *const u8, len: usize, out: *mut *mut Sar2eoModel) -> Sar2eoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ckpt = Checkpoint::from_bytes(slice(bytes, len, "bytes")?)?;
        *out = Box::into_raw(Box::new(Sar2eoModel { translator: Translator::new(&ckpt)? }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from a load call and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sar2eo_model_free(model: *mut Sar2eoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Side length of the square chips the model translates; 0 for null.
///
/// # Safety
/// `model` must be null or a live model.
#[no_mangle]
pub unsafe extern "C" fn sar2eo_model_resolution(model: *const Sar2eoModel) -> usize {
    model.as_ref().map_or(0, |m| m.translator.resolution())
}

/// Channels of the model's input (`in`) and output (`out`) chips.
///
/// # Safety
/// `model` must be a live model; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn sar2eo_model_channels(
    model: *const Sar2eoModel,
    in_channels: *mut usize,
    out_channels: *mut usize,
) -> Sar2eoStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if let Some(p) = in_channels.as_mut() {
            *p = m.translator.in_channels();
        }
        if let Some(p) = out_channels.as_mut() {
            *p = m.translator.out_channels();
        }
        Ok(())
    })
}

/// Translates one SAR chip using the denoising the model was trained with.
/// `sar` holds `resolution² · in_channels` bytes; `out` receives
/// `resolution² · out_channels` bytes.
///
/// # Safety
/// Buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sar2eo_model_translate(
    model: *const Sar2eoModel,
    sar: *const u8,
    sar_len: usize,
    out: *mut u8,
    out_len: usize,
) -> Sar2eoStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let denoise = m.translator.default_denoise();
        translate_into(m, sar, sar_len, denoise.as_ref(), out, out_len)
    })
}

/// Like [`sar2eo_model_translate`] with an explicit median window;
/// `window_n = window_m = 0` disables filtering.
///
/// # Safety
/// Buffers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sar2eo_model_translate_with_window(
    model: *const Sar2eoModel,
    sar: *const u8,
    sar_len: usize,
    window_n: usize,
    window_m: usize,
    out: *mut u8,
    out_len: usize,
) -> Sar2eoStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        translate_into(m, sar, sar_len, window(window_n, window_m)?.as_ref(), out, out_len)
    })
}

unsafe fn translate_into(
    m: &Sar2eoModel,
    sar: *const u8,
    sar_len: usize,
    denoise: Option<&DenoiseConfig>,
    out: *mut u8,
    out_len: usize,
) -> Result<(), Failure> {
    let t = &m.translator;
    let res = t.resolution();
    let want = image_len(res, res, t.in_channels())?;
    if sar_len != want {
        return Err(Failure(Sar2eoStatus::BufferSize, format!("input holds {sar_len} bytes, model expects {want}")));
    }
    let input = chip(sar, res, res, t.in_channels(), "sar")?;
    write_out(out, out_len, &t.translate(&input, denoise)?)
}

/// Median-filters each channel of a planar image. The border band of half
/// the window is copied through unchanged. `input` and `output` may alias.
///
/// # Safety
/// Both buffers must hold `width · height · channels` bytes.
#[no_mangle]
pub unsafe extern "C" fn sar2eo_median_filter(
    input: *const u8,
    output: *mut u8,
    width: usize,
    height: usize,
    channels: usize,
    window_n: usize,
    window_m: usize,
) -> Sar2eoStatus {
    guard(|| {
        let cfg = DenoiseConfig::new(window_n, window_m)?;
        let img = chip(input, width, height, channels, "input")?;
        let len = img.data().len();
        write_out(output, len, &median_filter_channels(&img, &cfg)?)
    })
}

unsafe fn chips(data: *const u8, count: usize, width: usize, height: usize, channels: usize, what: &str) -> Result<Vec<ImageChip>, Failure> {
    let each = image_len(width, height, channels)?;
    let total = each
        .checked_mul(count)
        .ok_or_else(|| Failure(Sar2eoStatus::Dimension, format!("{count} images overflow")))?;
    let all = slice(data, total, what)?;
    all.chunks_exact(each.max(1))
        .take(count)
        .map(|b| ImageChip::new(width, height, channels, b.to_vec()).map_err(Failure::from))
        .collect()
}

/// Mean over images of the per-image mean squared error in [0, 1] units.
/// `pred` and `reference` each hold `count` consecutive planar images.
///
/// # Safety
/// Buffers must hold `count · width · height · channels` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sar2eo_l2_metric(
    pred: *const u8,
    reference: *const u8,
    count: usize,
    width: usize,
    height: usize,
    channels: usize,
    out: *mut f64,
) -> Sar2eoStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let p = chips(pred, count, width, height, channels, "pred")?;
        let r = chips(reference, count, width, height, channels, "reference")?;
        *out = l2_metric(&p, &r)?;
        Ok(())
    })
}

/// Scores `count` predictions against references with the seeded feature
/// extractor; `patches` is the perceptual grid side (0 selects the default).
///
/// # Safety
/// Buffers must hold `count · width · height · channels` bytes; `out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn sar2eo_evaluate(
    pred: *const u8,
    reference: *const u8,
    count: usize,
    width: usize,
    height: usize,
    channels: usize,
    patches: usize,
    seed: u64,
    out: *mut Sar2eoMetrics,
) -> Sar2eoStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let p = chips(pred, count, width, height, channels, "pred")?;
        let r = chips(reference, count, width, height, channels, "reference")?;
        let mut opts = EvalOptions::default();
        if patches != 0 {
            opts.patches = patches;
        }
        let rep = MetricsReport::evaluate(&p, &r, &FeatureExtractor::new(seed), opts)?;
        *out = Sar2eoMetrics { l2: rep.l2, perceptual: rep.perceptual, frechet: rep.frechet, final_score: rep.final_score };
        Ok(())
    })
}

/// Mean of the three metrics. Negative or NaN inputs are a contract error.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sar2eo_final_score(l2: f64, perceptual: f64, frechet: f64, out: *mut f64) -> Sar2eoStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = final_score(l2, perceptual, frechet)?;
        Ok(())
    })
}

/// Seed of the default feature extractor used by the CLI.
#[no_mangle]
pub extern "C" fn sar2eo_default_extractor_seed() -> u64 {
    FeatureExtractor::default().seed()
}
