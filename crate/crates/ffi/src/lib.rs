//! C ABI over the `gasca` library.
//!
//! Every fallible function returns a [`GascaStatus`]. On failure a message is
//! stored per thread and can be fetched with [`gasca_last_error`]. Models are
//! opaque handles created by [`gasca_model_load`] and released with
//! [`gasca_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gasca::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use gasca::experiment::{evaluate_checkpoint, run_experiment, ExperimentConfig};
use gasca::objectives::{discriminator_loss, generator_adversarial_loss};
use gasca::{Error, GeneratorObjective, Sequential, Tensor};

/// Result codes shared by every function in this library.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GascaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    Config = 6,
    TrainingAborted = 7,
    NonFinite = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Generator and discriminator stacks loaded from a checkpoint.
pub struct GascaModel {
    ckpt: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> GascaStatus {
    match err {
        Error::Shape { .. } => GascaStatus::Shape,
        Error::InvalidArgument(_) => GascaStatus::InvalidArgument,
        Error::NonFinite { .. } => GascaStatus::NonFinite,
        Error::TrainingAborted { .. } => GascaStatus::TrainingAborted,
        Error::Io { .. } => GascaStatus::Io,
        Error::Format { .. } => GascaStatus::Format,
        Error::Config { .. } => GascaStatus::Config,
    }
}

struct Fail(GascaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GascaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GascaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GascaStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(GascaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(GascaStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn model_arg<'a>(m: *const GascaModel) -> Result<&'a GascaModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

fn write_out(src: &Tensor, out: *mut f64, out_len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if out_len < src.len() {
        return Err(Fail(
            GascaStatus::BufferTooSmall,
            format!("output buffer holds {out_len} values, {} needed", src.len()),
        ));
    }
    unsafe { std::slice::from_raw_parts_mut(out, src.len()) }.copy_from_slice(src.data());
    Ok(())
}

impl GascaModel {
    fn input_shape(&self) -> Result<&[usize], Fail> {
        self.ckpt.generator.input_shape().ok_or_else(|| {
            Fail(
                GascaStatus::InvalidArgument,
                "model has no generator stages".into(),
            )
        })
    }

    fn batch_input(&self, input: *const f64, batch: usize) -> Result<Tensor, Fail> {
        let shape = self.input_shape()?.to_vec();
        if batch == 0 {
            return Err(Fail(
                GascaStatus::InvalidArgument,
                "batch must be at least 1".into(),
            ));
        }
        let mut full = vec![batch];
        full.extend(shape);
        let n: usize = full.iter().product();
        let data = unsafe { slice_arg(input, n, "input") }?;
        Ok(Tensor::new(full, data.to_vec())?)
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gasca_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// NUL-terminated) and returns the full message length excluding the NUL.
/// Returns 0 when no error has been recorded.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn gasca_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gasca_model_load(
    path: *const c_char,
    out: *mut *mut GascaModel,
) -> GascaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let ckpt = load_checkpoint(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(GascaModel { ckpt }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`gasca_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gasca_model_free(model: *mut GascaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the model back out as a checkpoint.
///
/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gasca_model_save(
    model: *const GascaModel,
    path: *const c_char,
) -> GascaStatus {
    guard(|| {
        let m = model_arg(model)?;
        save_checkpoint(&path_arg(path, "path")?, &m.ckpt)?;
        Ok(())
    })
}

/// Generator depth and per-item input/code element counts.
///
/// # Safety
/// `model` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn gasca_model_info(
    model: *const GascaModel,
    depth: *mut usize,
    input_len: *mut usize,
    code_len: *mut usize,
) -> GascaStatus {
    guard(|| {
        let m = model_arg(model)?;
        let g = &m.ckpt.generator;
        *out_arg(depth, "depth")? = g.depth();
        *out_arg(input_len, "input_len")? = m.input_shape()?.iter().product();
        *out_arg(code_len, "code_len")? = g.code_shape().unwrap_or(&[]).iter().product();
        Ok(())
    })
}

/// Per-item input shape `(channels, height, width)`.
///
/// # Safety
/// `model` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn gasca_model_input_shape(
    model: *const GascaModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> GascaStatus {
    guard(|| {
        let m = model_arg(model)?;
        let shape = m.input_shape()?;
        let &[c, h, w] = shape else {
            return Err(Fail(
                GascaStatus::Shape,
                format!("input shape {shape:?} is not CHW"),
            ));
        };
        *out_arg(channels, "channels")? = c;
        *out_arg(height, "height")? = h;
        *out_arg(width, "width")? = w;
        Ok(())
    })
}

/// Full reconstruction of `batch` NCHW items. `out` receives
/// `batch * input_len` values.
///
/// # Safety
/// `input` must hold `batch * input_len` values; `out` must hold `out_len`.
#[no_mangle]
pub unsafe extern "C" fn gasca_reconstruct(
    model: *const GascaModel,
    input: *const f64,
    batch: usize,
    out: *mut f64,
    out_len: usize,
) -> GascaStatus {
    guard(|| {
        let m = model_arg(model)?;
        let x = m.batch_input(input, batch)?;
        write_out(&m.ckpt.generator.reconstruct(&x)?, out, out_len)
    })
}

/// Codes of `batch` items through every encoder. `out` receives
/// `batch * code_len` values.
///
/// # Safety
/// As [`gasca_reconstruct`].
#[no_mangle]
pub unsafe extern "C" fn gasca_encode(
    model: *const GascaModel,
    input: *const f64,
    batch: usize,
    out: *mut f64,
    out_len: usize,
) -> GascaStatus {
    guard(|| {
        let m = model_arg(model)?;
        let x = m.batch_input(input, batch)?;
        write_out(&m.ckpt.generator.encode(&x)?, out, out_len)
    })
}

/// Discriminator probabilities, one per item.
///
/// # Safety
/// As [`gasca_reconstruct`], with `out` holding at least `batch` values.
#[no_mangle]
pub unsafe extern "C" fn gasca_discriminate(
    model: *const GascaModel,
    input: *const f64,
    batch: usize,
    out: *mut f64,
    out_len: usize,
) -> GascaStatus {
    guard(|| {
        let m = model_arg(model)?;
        let x = m.batch_input(input, batch)?;
        write_out(&m.ckpt.discriminator.discriminate(&x)?, out, out_len)
    })
}

/// Runs an experiment from a key=value config file, writing its outputs
/// to the configured directory. `GASCA_SEED` overrides the config seed.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gasca_run_experiment(
    config_path: *const c_char,
    final_val_mse: *mut f64,
) -> GascaStatus {
    guard(|| {
        let mut cfg = ExperimentConfig::load_file(&path_arg(config_path, "config_path")?)?;
        cfg.apply_env()?;
        let summary = run_experiment(&cfg)?;
        if let Some(out) = final_val_mse.as_mut() {
            *out = summary.final_val_mse;
        }
        Ok(())
    })
}

/// Validation MSE of a checkpoint and the rotated-input reference MSE.
///
/// # Safety
/// Paths must be NUL-terminated strings; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn gasca_evaluate(
    checkpoint_path: *const c_char,
    manifest_path: *const c_char,
    val_mse: *mut f64,
    input_mse: *mut f64,
) -> GascaStatus {
    guard(|| {
        let (v, i) = evaluate_checkpoint(
            &path_arg(checkpoint_path, "checkpoint_path")?,
            &path_arg(manifest_path, "manifest_path")?,
        )?;
        *out_arg(val_mse, "val_mse")? = v;
        *out_arg(input_mse, "input_mse")? = i;
        Ok(())
    })
}

fn probs(p: *const f64, m: usize, what: &str) -> Result<Tensor, Fail> {
    if m == 0 {
        return Err(Fail(GascaStatus::InvalidArgument, "empty batch".into()));
    }
    let v = unsafe { slice_arg(p, m, what) }?;
    Ok(Tensor::new(vec![m, 1], v.to_vec())?)
}

/// Discriminator loss over `m` real/fake probability pairs.
///
/// # Safety
/// Both arrays must hold `m` values; `loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gasca_discriminator_loss(
    d_real: *const f64,
    d_fake: *const f64,
    m: usize,
    loss: *mut f64,
) -> GascaStatus {
    guard(|| {
        let l = discriminator_loss(&probs(d_real, m, "d_real")?, &probs(d_fake, m, "d_fake")?)?;
        *out_arg(loss, "loss")? = l.value;
        Ok(())
    })
}

/// Adversarial loss of the autoencoder; nonzero `non_saturating` selects
/// `-mean(log D)` instead of `mean(log(1 - D))`.
///
/// # Safety
/// `d_fake` must hold `m` values; `loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gasca_generator_loss(
    d_fake: *const f64,
    m: usize,
    non_saturating: i32,
    loss: *mut f64,
) -> GascaStatus {
    guard(|| {
        let objective = if non_saturating != 0 {
            GeneratorObjective::NonSaturating
        } else {
            GeneratorObjective::Saturating
        };
        let l = generator_adversarial_loss(&probs(d_fake, m, "d_fake")?, objective)?;
        *out_arg(loss, "loss")? = l.value;
        Ok(())
    })
}
