//! C ABI over the funnybench library.
//!
//! Objects are opaque handles created by `fb_*_new`/`fb_*_load` and released
//! with the matching `fb_*_free`. Every fallible call returns an
//! [`FbStatus`]; the message of the most recent failure on the calling
//! thread is available from [`fb_last_error`]. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use funnybench::dataset::{DatasetManifest, Split};
use funnybench::eval::{evaluate, EvalConfig, EvalSample};
use funnybench::explain::{explain, ExplanationKind, MethodConfig, MethodId};
use funnybench::model::{ModelUnderTest, ReferenceCnn};
use funnybench::render::{render_scene, Image, RenderConfig};
use funnybench::scenegen::{sample_class_space, sample_scene, ClassSpace};
use funnybench::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    External = 5,
    Unsupported = 6,
    Divergence = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Explanation methods, in the order of the library's method list.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FbMethod {
    Ixg = 0,
    Ig = 1,
    IgAbs = 2,
    GradCam = 3,
    Rise = 4,
    Lime = 5,
    Random = 6,
}

impl From<FbMethod> for MethodId {
    fn from(m: FbMethod) -> MethodId {
        match m {
            FbMethod::Ixg => MethodId::Ixg,
            FbMethod::Ig => MethodId::Ig,
            FbMethod::IgAbs => MethodId::IgAbs,
            FbMethod::GradCam => MethodId::GradCam,
            FbMethod::Rise => MethodId::Rise,
            FbMethod::Lime => MethodId::Lime,
            FbMethod::Random => MethodId::Random,
        }
    }
}

/// Protocol scores of one evaluation run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FbScores {
    pub accuracy: f64,
    pub background_independence: f64,
    pub csdc: f64,
    pub pc: f64,
    pub dc: f64,
    pub distractibility: f64,
    pub single_deletion: f64,
    pub target_sensitivity: f64,
    pub completeness: f64,
    pub correctness: f64,
    pub contrastivity: f64,
    pub mean_explainability: f64,
    pub threshold: f64,
}

/// Opaque reference CNN.
pub struct FbModel(ReferenceCnn);

/// Opaque class space.
pub struct FbClassSpace(ClassSpace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> FbStatus {
    match e {
        Error::InvalidArgument(_)
        | Error::DimensionMismatch { .. }
        | Error::MalformedIntervention(_) => FbStatus::InvalidArgument,
        Error::Io { .. } => FbStatus::Io,
        Error::Json { .. } | Error::Format(_) => FbStatus::Format,
        Error::Wire(_) => FbStatus::External,
        Error::UnsupportedCapability(_) => FbStatus::Unsupported,
        Error::Divergence { .. } => FbStatus::Divergence,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (FbStatus, String)>) -> FbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FbStatus::Panic
        }
    }
}

fn lib(e: Error) -> (FbStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (FbStatus, String) {
    (FbStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> (FbStatus, String) {
    (FbStatus::InvalidArgument, msg.into())
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, (FbStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(Path::new(s))
}

unsafe fn image_arg(
    pixels: *const f32,
    height: usize,
    width: usize,
) -> Result<Image, (FbStatus, String)> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    let data = std::slice::from_raw_parts(pixels, height * width * 3).to_vec();
    Image::from_data(width, height, data).map_err(lib)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns its full length in
/// bytes, or 0 when there is none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fb_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads weights written by `funnybench train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fb_model_load(path: *const c_char, out: *mut *mut FbModel) -> FbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let net = ReferenceCnn::load(path).map_err(lib)?;
        *out = Box::into_raw(Box::new(FbModel(net)));
        Ok(())
    })
}

/// A freshly initialised, untrained CNN. `height` and `width` must be
/// positive multiples of 4.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fb_model_new(
    height: usize,
    width: usize,
    num_classes: usize,
    seed: u64,
    out: *mut *mut FbModel,
) -> FbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let net = ReferenceCnn::new(height, width, num_classes, seed).map_err(lib)?;
        *out = Box::into_raw(Box::new(FbModel(net)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fb_model_free(model: *mut FbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input resolution and class count of a model.
///
/// # Safety
/// `model` must be a live handle; the out pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn fb_model_shape(
    model: *const FbModel,
    height: *mut usize,
    width: *mut usize,
    num_classes: *mut usize,
) -> FbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        for (p, v) in [
            (height, m.0.height),
            (width, m.0.width),
            (num_classes, m.0.num_classes),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Class logits for an `height × width × 3` float image in [0, 1], row-major.
///
/// # Safety
/// `pixels` must hold `height*width*3` floats; `logits` must hold `n_logits`.
#[no_mangle]
pub unsafe extern "C" fn fb_model_predict(
    model: *const FbModel,
    pixels: *const f32,
    height: usize,
    width: usize,
    logits: *mut f64,
    n_logits: usize,
) -> FbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if logits.is_null() {
            return Err(null("logits"));
        }
        let image = image_arg(pixels, height, width)?;
        let out = m.0.predict(&image).map_err(lib)?;
        if n_logits < out.len() {
            return Err((
                FbStatus::BufferTooSmall,
                format!("need {} logits", out.len()),
            ));
        }
        ptr::copy_nonoverlapping(out.0.as_ptr(), logits, out.len());
        Ok(())
    })
}

/// Explains `target` with default method settings (`seed` drives the
/// stochastic methods). Writes one value per pixel into `map`; binary
/// methods write 0 or 1.
///
/// # Safety
/// `pixels` must hold `height*width*3` floats; `map` must hold `map_len`.
#[no_mangle]
pub unsafe extern "C" fn fb_explain(
    model: *const FbModel,
    method: FbMethod,
    pixels: *const f32,
    height: usize,
    width: usize,
    target: usize,
    seed: u64,
    map: *mut f64,
    map_len: usize,
) -> FbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if map.is_null() {
            return Err(null("map"));
        }
        if map_len < height * width {
            return Err((
                FbStatus::BufferTooSmall,
                format!("need {} values", height * width),
            ));
        }
        let image = image_arg(pixels, height, width)?;
        let mut cfg = MethodConfig::default();
        cfg.rise.seed = seed;
        cfg.lime.seed = seed;
        cfg.random_seed = seed;
        let e = explain(&m.0, &image, target, method.into(), &cfg).map_err(lib)?;
        let out = std::slice::from_raw_parts_mut(map, height * width);
        match &e.kind {
            ExplanationKind::Attribution(v) => out.copy_from_slice(v),
            ExplanationKind::BinaryMap(b) => {
                for (o, &on) in out.iter_mut().zip(b) {
                    *o = f64::from(u8::from(on));
                }
            }
        }
        Ok(())
    })
}

/// The 50-class space for `seed`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fb_class_space_new(seed: u64, out: *mut *mut FbClassSpace) -> FbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(FbClassSpace(sample_class_space(seed))));
        Ok(())
    })
}

/// # Safety
/// `space` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fb_class_space_free(space: *mut FbClassSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// Number of classes in a space.
///
/// # Safety
/// `space` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fb_class_space_len(space: *const FbClassSpace) -> usize {
    space.as_ref().map_or(0, |s| s.0.len())
}

/// Minimal sufficient part sets of `class` as bit masks (bit i = part slot
/// with label i+1). Writes up to `cap` masks and stores the total count in
/// `count`.
///
/// # Safety
/// `masks` must hold `cap` bytes (may be null when `cap` is 0); `count` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn fb_sufficient_sets(
    space: *const FbClassSpace,
    class_id: usize,
    masks: *mut u8,
    cap: usize,
    count: *mut usize,
) -> FbStatus {
    guard(|| {
        let s = space.as_ref().ok_or_else(|| null("space"))?;
        if count.is_null() {
            return Err(null("count"));
        }
        if class_id >= s.0.len() {
            return Err(invalid(format!("class {class_id} out of range")));
        }
        let sets = &s.0.class(class_id).sufficient_sets;
        *count = sets.len();
        if cap < sets.len() {
            return Err((
                FbStatus::BufferTooSmall,
                format!("need {} masks", sets.len()),
            ));
        }
        for (i, set) in sets.iter().enumerate() {
            *masks.add(i) = set.bits();
        }
        Ok(())
    })
}

/// Samples a scene of `class_id` and renders it at `resolution`. Writes
/// `resolution²·3` floats to `pixels` and, when non-null, `resolution²`
/// part labels to `labels`.
///
/// # Safety
/// Buffers must be large enough for the given resolution.
#[no_mangle]
pub unsafe extern "C" fn fb_render_sample(
    space: *const FbClassSpace,
    class_id: usize,
    seed: u64,
    resolution: usize,
    pixels: *mut f32,
    labels: *mut u16,
) -> FbStatus {
    guard(|| {
        let s = space.as_ref().ok_or_else(|| null("space"))?;
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        if class_id >= s.0.len() {
            return Err(invalid(format!("class {class_id} out of range")));
        }
        let cfg = RenderConfig {
            resolution,
            ..Default::default()
        };
        cfg.validate().map_err(lib)?;
        let scene = sample_scene(&s.0, class_id, seed);
        let (img, map) = render_scene(&s.0, &scene, &cfg);
        ptr::copy_nonoverlapping(img.data.as_ptr(), pixels, img.data.len());
        if !labels.is_null() {
            ptr::copy_nonoverlapping(map.labels.as_ptr(), labels, map.labels.len());
        }
        Ok(())
    })
}

/// Evaluates `method` on the first `limit` test samples of a generated
/// dataset (0 means all) with default settings.
///
/// # Safety
/// `dataset_dir` must be a NUL-terminated path; `scores` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fb_evaluate(
    model: *const FbModel,
    dataset_dir: *const c_char,
    method: FbMethod,
    limit: usize,
    seed: u64,
    scores: *mut FbScores,
) -> FbStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if scores.is_null() {
            return Err(null("scores"));
        }
        let root = path_arg(dataset_dir, "dataset_dir")?;
        let manifest = DatasetManifest::load(root).map_err(lib)?;
        let test = manifest.split(Split::Test);
        let n = if limit == 0 {
            test.len()
        } else {
            limit.min(test.len())
        };
        let samples: Vec<EvalSample> = test[..n].iter().map(EvalSample::from).collect();
        let mut cfg = MethodConfig::default();
        cfg.rise.seed = seed;
        cfg.lime.seed = seed;
        cfg.random_seed = seed;
        let method = funnybench::explain::Method {
            id: method.into(),
            config: cfg,
        };
        let ev = evaluate(
            &m.0,
            &method,
            &manifest.class_space,
            &manifest.render_config,
            &samples,
            &EvalConfig::default(),
        )
        .map_err(lib)?;
        let s = ev.scores;
        *scores = FbScores {
            accuracy: s.A,
            background_independence: s.BI,
            csdc: s.CSDC,
            pc: s.PC,
            dc: s.DC,
            distractibility: s.D,
            single_deletion: s.SD,
            target_sensitivity: s.TS,
            completeness: s.Com,
            correctness: s.Cor,
            contrastivity: s.Con,
            mean_explainability: s.mX,
            threshold: ev.threshold,
        };
        Ok(())
    })
}
