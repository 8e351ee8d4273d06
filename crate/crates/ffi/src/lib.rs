//! C ABI over `turbsplat`.
//!
//! Images, flows and bases are opaque handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns a
//! [`TurbsplatStatus`]; the message for the most recent failure on the
//! calling thread is available from [`turbsplat_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use turbsplat::imgcore::{read_image, write_flow, write_image, FlowField, Image};
use turbsplat::kernelbasis::KernelBasis;
use turbsplat::restore::{restore_sequence, RestoreConfig};
use turbsplat::tiltcorrect::{correct_reference, estimate_flow, FlowConfig, Reference};
use turbsplat::turbsim::{isoplanatic_angle_horizontal, region_pixel_count, RegionMode};
use turbsplat::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TurbsplatStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Numerical = 3,
    DimensionMismatch = 4,
    Unsupported = 5,
    NullPointer = 6,
    Panic = 7,
}

pub struct TurbsplatImage(Image);
pub struct TurbsplatFlow(FlowField);
pub struct TurbsplatBasis(KernelBasis);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TurbsplatStatus {
    match e {
        Error::Io { .. } | Error::PngDecode(_) | Error::PngEncode(_) => TurbsplatStatus::Io,
        Error::Unsupported(_) => TurbsplatStatus::Unsupported,
        Error::DimensionMismatch(_) => TurbsplatStatus::DimensionMismatch,
        Error::DegenerateGaussian { .. } | Error::ZeroVariance | Error::InfiniteAngle | Error::Numerical(_) => {
            TurbsplatStatus::Numerical
        }
        Error::Json(_) | Error::InvalidArgument(_) | Error::SupportTooSmall { .. } => TurbsplatStatus::InvalidArgument,
    }
}

/// Run `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (TurbsplatStatus, String)>) -> TurbsplatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TurbsplatStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(&msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            TurbsplatStatus::Panic
        }
    }
}

trait Lift<T> {
    fn lift(self) -> Result<T, (TurbsplatStatus, String)>;
}

impl<T> Lift<T> for turbsplat::Result<T> {
    fn lift(self) -> Result<T, (TurbsplatStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (TurbsplatStatus, String) {
    (TurbsplatStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, (TurbsplatStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (TurbsplatStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| (TurbsplatStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (TurbsplatStatus, String)> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn frames_arg(frames: *const *const TurbsplatImage, n: usize) -> Result<Vec<Image>, (TurbsplatStatus, String)> {
    if frames.is_null() {
        return Err(null("frames"));
    }
    std::slice::from_raw_parts(frames, n)
        .iter()
        .map(|&f| borrow(f, "frame").map(|i| i.0.clone()))
        .collect()
}

/// Message for the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn turbsplat_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Copy `width * height * channels` planar samples into a new image.
///
/// # Safety
/// `data` must point to that many readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_image_new(
    width: usize,
    height: usize,
    channels: usize,
    data: *const f32,
    out: *mut *mut TurbsplatImage,
) -> TurbsplatStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let n = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or((TurbsplatStatus::InvalidArgument, "image size overflows".to_string()))?;
        let v = std::slice::from_raw_parts(data, n).to_vec();
        put(out, TurbsplatImage(Image::from_planar(width, height, channels, v).lift()?))
    })
}

/// Read a `.png` or `.f32` image.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_image_read(path: *const c_char, out: *mut *mut TurbsplatImage) -> TurbsplatStatus {
    guard(|| put(out, TurbsplatImage(read_image(path_arg(path)?).lift()?)))
}

/// Write an image; the extension picks the format.
///
/// # Safety
/// `img` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_image_write(img: *const TurbsplatImage, path: *const c_char) -> TurbsplatStatus {
    guard(|| write_image(&borrow(img, "image")?.0, path_arg(path)?).lift())
}

/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_image_width(img: *const TurbsplatImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_image_height(img: *const TurbsplatImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_image_channels(img: *const TurbsplatImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.channels())
}

/// Planar samples, valid while the handle lives.
///
/// # Safety
/// `img` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_image_data(img: *const TurbsplatImage) -> *const f32 {
    img.as_ref().map_or(ptr::null(), |i| i.0.data().as_ptr())
}

/// # Safety
/// `img` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_image_free(img: *mut TurbsplatImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

type PairMetric = fn(&Image, &Image) -> turbsplat::Result<f64>;

unsafe fn pair_metric(a: *const TurbsplatImage, b: *const TurbsplatImage, out: *mut f64, f: PairMetric) -> TurbsplatStatus {
    guard(|| {
        let v = f(&borrow(a, "a")?.0, &borrow(b, "b")?.0).lift()?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// PSNR in dB, capped at 99 for identical images.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_psnr(
    a: *const TurbsplatImage,
    b: *const TurbsplatImage,
    out: *mut f64,
) -> TurbsplatStatus {
    pair_metric(a, b, out, turbsplat::metrics::psnr)
}

/// Mean SSIM over 11x11 Gaussian windows.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_ssim(
    a: *const TurbsplatImage,
    b: *const TurbsplatImage,
    out: *mut f64,
) -> TurbsplatStatus {
    pair_metric(a, b, out, turbsplat::metrics::ssim)
}

/// Mean Sobel gradient magnitude of the luma.
///
/// # Safety
/// `img` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_gcl(img: *const TurbsplatImage, out: *mut f64) -> TurbsplatStatus {
    guard(|| {
        let v = turbsplat::metrics::gcl(&borrow(img, "image")?.0).lift()?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Isoplanatic angle (rad) for a horizontal path of constant turbulence.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_isoplanatic_angle(r0: f64, path_length: f64, out: *mut f64) -> TurbsplatStatus {
    guard(|| {
        let v = isoplanatic_angle_horizontal(r0, path_length).lift()?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Region grid for square isoplanatic patches of angle `theta` over a field
/// of view `fov` (rad) imaged on `height x width` pixels. `per_axis` selects
/// `fov / max(height, width)` as the per-pixel angle instead of
/// `fov / (height * width)`.
///
/// # Safety
/// `patch_pixels`, `grid_w` and `grid_h` must be writable.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_region_grid(
    fov: f64,
    height: usize,
    width: usize,
    theta: f64,
    per_axis: bool,
    patch_pixels: *mut f64,
    grid_w: *mut usize,
    grid_h: *mut usize,
) -> TurbsplatStatus {
    guard(|| {
        let rc = region_pixel_count(
            fov,
            height,
            width,
            theta,
            if per_axis { RegionMode::PerAxis } else { RegionMode::Literal },
        ).lift()?;
        *patch_pixels.as_mut().ok_or_else(|| null("patch_pixels"))? = rc.patch_pixels;
        *grid_w.as_mut().ok_or_else(|| null("grid_w"))? = rc.grid.0;
        *grid_h.as_mut().ok_or_else(|| null("grid_h"))? = rc.grid.1;
        Ok(())
    })
}

/// Dense flow with `reference(p + f(p)) ~ target(p)`, default settings.
///
/// # Safety
/// Both images must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_flow_estimate(
    reference: *const TurbsplatImage,
    target: *const TurbsplatImage,
    out: *mut *mut TurbsplatFlow,
) -> TurbsplatStatus {
    guard(|| {
        let est = estimate_flow(&borrow(reference, "reference")?.0, &borrow(target, "target")?.0, &FlowConfig::default())
            .lift()?;
        put(out, TurbsplatFlow(est.flow))
    })
}

/// Root-mean-square displacement, px.
///
/// # Safety
/// `flow` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_flow_rms(flow: *const TurbsplatFlow) -> f64 {
    flow.as_ref().map_or(f64::NAN, |f| f.0.rms(0))
}

/// Write a `.flo32` flow file.
///
/// # Safety
/// `flow` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_flow_write(flow: *const TurbsplatFlow, path: *const c_char) -> TurbsplatStatus {
    guard(|| write_flow(&borrow(flow, "flow")?.0, path_arg(path)?).lift())
}

/// # Safety
/// `flow` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_flow_free(flow: *mut TurbsplatFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

/// Tilt-corrected reference built from `n` frames around frame `ref_index`.
///
/// # Safety
/// `frames` must point to `n` live image handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_correct_reference(
    frames: *const *const TurbsplatImage,
    n: usize,
    ref_index: usize,
    out: *mut *mut TurbsplatImage,
) -> TurbsplatStatus {
    guard(|| {
        let frames = frames_arg(frames, n)?;
        let c = correct_reference(&frames, Reference::Frame(ref_index), &FlowConfig::default()).lift()?;
        put(out, TurbsplatImage(c.image))
    })
}

/// Load a basis written by the `basis` command.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_basis_load(path: *const c_char, out: *mut *mut TurbsplatBasis) -> TurbsplatStatus {
    guard(|| put(out, TurbsplatBasis(KernelBasis::load(path_arg(path)?).lift()?)))
}

/// # Safety
/// `basis` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_basis_n_components(basis: *const TurbsplatBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.0.n_components())
}

/// # Safety
/// `basis` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_basis_free(basis: *mut TurbsplatBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// Full restoration of `n` frames. `config_json` holds the `restore`
/// section of a pipeline config, or null for defaults. `final_loss` may be
/// null.
///
/// # Safety
/// `frames` must point to `n` live image handles, `basis` must be live,
/// `config_json` null or NUL-terminated, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn turbsplat_restore(
    frames: *const *const TurbsplatImage,
    n: usize,
    basis: *const TurbsplatBasis,
    config_json: *const c_char,
    out: *mut *mut TurbsplatImage,
    final_loss: *mut f64,
) -> TurbsplatStatus {
    guard(|| {
        let frames = frames_arg(frames, n)?;
        let basis = &borrow(basis, "basis")?.0;
        let config: RestoreConfig = if config_json.is_null() {
            RestoreConfig::default()
        } else {
            let text = CStr::from_ptr(config_json)
                .to_str()
                .map_err(|_| (TurbsplatStatus::InvalidArgument, "config is not UTF-8".to_string()))?;
            serde_json::from_str(text).map_err(|e| (TurbsplatStatus::InvalidArgument, format!("config: {e}")))?
        };
        let r = restore_sequence(&frames, basis, &config, None).lift()?;
        if let Some(l) = final_loss.as_mut() {
            *l = r.optimized.trace.last().map_or(f64::NAN, |t| t.loss);
        }
        put(out, TurbsplatImage(r.optimized.restored))
    })
}
