//! C ABI over `csdit-core`.
//!
//! Every entry point returns a [`CsditStatus`]; on failure the message is
//! kept per thread and read back with [`csdit_last_error_message`]. Models
//! and caches are opaque handles owned by the caller until freed. Buffers
//! are row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use csdit_core::attention::{count_flops, AttentionMask, AttentionMode, KVCache, TokenLayout};
use csdit_core::dataprep::{psnr_capped, ssim, Image};
use csdit_core::pipeline::{CausalSparseDiT, DiTConfig, EncodedReferences, GuiderFeatures};
use csdit_core::{Error, Precision, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsditStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Structural = 4,
    Overflow = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsditMode {
    Full = 0,
    Sparse = 1,
    CausalSparse = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsditPrecision {
    F32 = 0,
    F64 = 1,
}

/// Attention score-matrix entries over a run, split by query/key block.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsditFlops {
    pub noise_self: u64,
    pub noise_ref: u64,
    pub ref_self: u64,
    pub total: u64,
}

/// Opaque model handle.
pub struct CsditModel {
    inner: CausalSparseDiT,
}

/// Opaque reference key/value cache, tied to the model that produced it.
pub struct CsditCache {
    inner: KVCache,
    ref_len: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CsditStatus {
    match err {
        Error::ShapeMismatch { .. } | Error::PrecisionMismatch(_) | Error::Dimension(_) => CsditStatus::ShapeMismatch,
        Error::Structural(_) => CsditStatus::Structural,
        Error::Overflow(_) => CsditStatus::Overflow,
        Error::Io(_) | Error::Parse { .. } | Error::Json(_) => CsditStatus::Io,
        Error::Config(_) | Error::Capacity(_) | Error::Range(_) | Error::Index { .. } => CsditStatus::InvalidArgument,
    }
}

struct Fail(CsditStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CsditStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, records any error or panic, and returns the status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CsditStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CsditStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside csdit".into());
            CsditStatus::Panic
        }
    }
}

fn mode(m: CsditMode) -> AttentionMode {
    match m {
        CsditMode::Full => AttentionMode::Full,
        CsditMode::Sparse => AttentionMode::Sparse,
        CsditMode::CausalSparse => AttentionMode::CausalSparse,
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn input<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

/// Copies the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length plus one, or 0 when
/// there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn csdit_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len > 0 {
                let n = bytes.len().min(len);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n - 1) = 0;
            }
            bytes.len()
        }
    })
}

/// Analytic attention cost over `steps` denoising steps.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn csdit_count_flops(
    noise_len: usize,
    ref_len: usize,
    n_refs: usize,
    attention: CsditMode,
    steps: u64,
    out: *mut CsditFlops,
) -> CsditStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = count_flops(&TokenLayout::new(noise_len, ref_len, n_refs)?, mode(attention), steps)?;
        *out = CsditFlops {
            noise_self: r.noise_self,
            noise_ref: r.noise_ref,
            ref_self: r.ref_self,
            total: r.total,
        };
        Ok(())
    })
}

/// Allowed query/key pairs of one attention map, split by query block.
///
/// # Safety
/// `noise_queries` and `reference_queries` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn csdit_mask_pair_counts(
    noise_len: usize,
    ref_len: usize,
    n_refs: usize,
    attention: CsditMode,
    noise_queries: *mut u64,
    reference_queries: *mut u64,
) -> CsditStatus {
    guard(|| {
        if noise_queries.is_null() || reference_queries.is_null() {
            return Err(null("output"));
        }
        let counts = AttentionMask::new(TokenLayout::new(noise_len, ref_len, n_refs)?, mode(attention)).pair_counts();
        let narrow = |v: u128| u64::try_from(v).map_err(|_| Fail(CsditStatus::Overflow, "pair count exceeds u64".into()));
        *noise_queries = narrow(counts.noise_queries)?;
        *reference_queries = narrow(counts.reference_queries)?;
        Ok(())
    })
}

/// Token-level model: inputs are already embedded `dim`-wide tokens, output
/// is three noise channels per token. `*out` receives a handle to free with
/// [`csdit_model_free`].
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn csdit_model_new(
    depth: usize,
    dim: usize,
    heads: usize,
    seed: u64,
    precision: CsditPrecision,
    out: *mut *mut CsditModel,
) -> CsditStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = DiTConfig {
            depth,
            dim,
            heads,
            patch: 1,
            factor: 1,
            guider_depth: 0,
            mlp_ratio: 2,
            lora_rank: Some(4),
        };
        let precision = match precision {
            CsditPrecision::F32 => Precision::F32,
            CsditPrecision::F64 => Precision::F64,
        };
        let inner = CausalSparseDiT::new(config, seed, precision)?;
        *out = Box::into_raw(Box::new(CsditModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`csdit_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn csdit_model_free(model: *mut CsditModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Values per output token.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn csdit_model_output_features(model: *const CsditModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().patch_features())
}

/// Runs the references through every block once at timestep 0.
/// `ref_tokens` holds `n_refs * ref_len * dim` values.
///
/// # Safety
/// `model` must be a live handle, `ref_tokens` valid for the stated length,
/// `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn csdit_reference_pass(
    model: *const CsditModel,
    ref_tokens: *const f64,
    n_refs: usize,
    ref_len: usize,
    noise_len: usize,
    out: *mut *mut CsditCache,
) -> CsditStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = &model.inner;
        let layout = TokenLayout::new(noise_len, ref_len, n_refs)?;
        let dim = m.config().dim;
        let values = input(ref_tokens, layout.ref_tokens() * dim, "ref_tokens")?;
        let refs = EncodedReferences {
            tokens: Tensor::new(vec![layout.ref_tokens(), dim], values.to_vec(), m.precision())?,
            layout,
            quadrants: Vec::new(),
        };
        let inner = m.reference_pass(&refs)?;
        *out = Box::into_raw(Box::new(CsditCache { inner, ref_len }));
        Ok(())
    })
}

/// # Safety
/// `cache` must be null or a handle from [`csdit_reference_pass`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn csdit_cache_free(cache: *mut CsditCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// Noise prediction for `noise_len * dim` noise tokens at `timestep`,
/// attending to the cached references. Writes `noise_len` times
/// [`csdit_model_output_features`] values to `out`.
///
/// # Safety
/// Handles must be live and from the same model; buffers valid for the
/// stated lengths.
#[no_mangle]
pub unsafe extern "C" fn csdit_predict_noise(
    model: *const CsditModel,
    cache: *const CsditCache,
    noise_tokens: *const f64,
    noise_len: usize,
    timestep: usize,
    out: *mut f64,
) -> CsditStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let cache = cache.as_ref().ok_or_else(|| null("cache"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = &model.inner;
        let dim = m.config().dim;
        let expected = cache.inner.layout();
        if expected.noise_len() != noise_len || expected.ref_len() != cache.ref_len {
            return Err(Fail(
                CsditStatus::Structural,
                format!("cache was built for {} noise tokens, got {noise_len}", expected.noise_len()),
            ));
        }
        let values = input(noise_tokens, noise_len * dim, "noise_tokens")?;
        let noise = Tensor::new(vec![noise_len, dim], values.to_vec(), m.precision())?;
        let eps = m.dit_forward(&noise, &GuiderFeatures::new(Vec::new()), &cache.inner, timestep)?;
        let v = eps.to_f64_vec();
        ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
        Ok(())
    })
}

/// # Safety
/// `a` and `b` valid for `height * width * 3` reads.
unsafe fn image_pair(a: *const f32, b: *const f32, height: usize, width: usize) -> Result<(Image, Image), Fail> {
    if a.is_null() || b.is_null() {
        return Err(null("image"));
    }
    let n = height * width * 3;
    Ok((
        Image::new(height, width, slice::from_raw_parts(a, n).to_vec())?,
        Image::new(height, width, slice::from_raw_parts(b, n).to_vec())?,
    ))
}

/// PSNR in dB over interleaved RGB in `[0, 1]`; identical images give the cap.
///
/// # Safety
/// `a`, `b` valid for `height * width * 3` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn csdit_psnr(
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    out: *mut f64,
) -> CsditStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (a, b) = image_pair(a, b, height, width)?;
        *out = psnr_capped(&a, &b)?;
        Ok(())
    })
}

/// Mean SSIM over interleaved RGB in `[0, 1]`.
///
/// # Safety
/// `a`, `b` valid for `height * width * 3` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn csdit_ssim(
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    out: *mut f64,
) -> CsditStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (a, b) = image_pair(a, b, height, width)?;
        *out = ssim(&a, &b)?;
        Ok(())
    })
}
