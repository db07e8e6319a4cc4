//! C ABI over `vlapath`.
//!
//! Conventions:
//!
//! - Every fallible function returns a [`VpStatus`]; results come back
//!   through out-pointers that are only written on `VP_STATUS_OK`.
//! - Paths and images are opaque handles owned by the caller and released
//!   with [`vp_path_free`] / [`vp_image_free`].
//! - Strings returned by the library are NUL-terminated UTF-8 and must be
//!   released with [`vp_string_free`].
//! - On failure, [`vp_last_error`] returns a message for the calling thread,
//!   valid until that thread's next call into the library.
//! - Panics never cross the boundary; they surface as `VP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{Matrix3, Vector3};
use vlapath::geometry::{self, CameraExtrinsics, CameraIntrinsics, GeometryError};
use vlapath::path::{self, Path2D, PathError, PathPoint};
use vlapath::render::{self, Image, OverlayStyle, RenderError};
use vlapath::vqa::{self, ParseMode, VqaError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    ParseError = 4,
    GeometryError = 5,
    RenderError = 6,
    Utf8Error = 7,
    Panic = 8,
}

/// Opaque normalized 2D path.
pub struct VpPath(Path2D);

/// Opaque 8-bit interleaved image.
pub struct VpImage(Image);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(VpStatus, String);

impl From<PathError> for Fail {
    fn from(e: PathError) -> Self {
        let status = match e {
            PathError::OutOfRange { .. } => VpStatus::OutOfRange,
            _ => VpStatus::InvalidArgument,
        };
        Fail(status, e.to_string())
    }
}

impl From<VqaError> for Fail {
    fn from(e: VqaError) -> Self {
        let status = match e {
            VqaError::OutOfRange { .. } => VpStatus::OutOfRange,
            VqaError::EmptyInstruction | VqaError::BadTemplate(_) => VpStatus::InvalidArgument,
            _ => VpStatus::ParseError,
        };
        Fail(status, e.to_string())
    }
}

impl From<GeometryError> for Fail {
    fn from(e: GeometryError) -> Self {
        Fail(VpStatus::GeometryError, e.to_string())
    }
}

impl From<RenderError> for Fail {
    fn from(e: RenderError) -> Self {
        Fail(VpStatus::RenderError, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            VpStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            VpStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(VpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Fail(VpStatus::Utf8Error, format!("{what}: {e}")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|_| Fail(VpStatus::InvalidArgument, "string contains NUL".into()))?;
    put(out, c.into_raw())
}

/// Message describing the calling thread's last failure, or NULL.
#[no_mangle]
pub extern "C" fn vp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn vp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a path from parallel arrays. `gripper_open[i]` is nonzero for
/// open. Coordinates must lie in `[0, 1]`.
///
/// # Safety
/// Each array must hold `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_path_new(
    xs: *const f64,
    ys: *const f64,
    gripper_open: *const u8,
    n: usize,
    out: *mut *mut VpPath,
) -> VpStatus {
    guard(|| {
        let (xs, ys, open) = (slice(xs, n, "xs")?, slice(ys, n, "ys")?, slice(gripper_open, n, "gripper_open")?);
        let points = (0..n).map(|i| PathPoint::new(xs[i], ys[i], open[i] != 0)).collect();
        let p = Path2D::new(points)?;
        put(out, Box::into_raw(Box::new(VpPath(p))))
    })
}

/// Releases a path. NULL is ignored.
///
/// # Safety
/// `p` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vp_path_free(p: *mut VpPath) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of points, or 0 for NULL.
///
/// # Safety
/// `p` must be NULL or a live path.
#[no_mangle]
pub unsafe extern "C" fn vp_path_len(p: *const VpPath) -> usize {
    p.as_ref().map_or(0, |p| p.0.len())
}

/// Reads point `i`.
///
/// # Safety
/// `p` must be a live path; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_path_point(p: *const VpPath, i: usize, x: *mut f64, y: *mut f64, gripper_open: *mut u8) -> VpStatus {
    guard(|| {
        let p = deref(p, "path")?;
        let pt = p.0.points().get(i).ok_or_else(|| Fail(VpStatus::OutOfRange, format!("index {i} >= {}", p.0.len())))?;
        put(x, pt.x)?;
        put(y, pt.y)?;
        put(gripper_open, pt.gripper_open as u8)
    })
}

/// RDP simplification that keeps both points around every gripper change.
///
/// # Safety
/// `p` must be a live path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_path_rdp(p: *const VpPath, epsilon: f64, out: *mut *mut VpPath) -> VpStatus {
    guard(|| {
        let s = path::rdp_simplify(&deref(p, "path")?.0, epsilon)?;
        put(out, Box::into_raw(Box::new(VpPath(s))))
    })
}

/// Resamples to `n` equal arc-length points plus gripper event points.
///
/// # Safety
/// `p` must be a live path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_path_resample(p: *const VpPath, n: usize, out: *mut *mut VpPath) -> VpStatus {
    guard(|| {
        let s = path::resample_fixed(&deref(p, "path")?.0, n)?;
        put(out, Box::into_raw(Box::new(VpPath(s))))
    })
}

/// Adds seeded `N(0, sigma)` noise to every coordinate, clamped to `[0, 1]`.
///
/// # Safety
/// `p` must be a live path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_path_add_noise(p: *const VpPath, sigma: f64, seed: u64, out: *mut *mut VpPath) -> VpStatus {
    guard(|| {
        let s = path::add_noise(&deref(p, "path")?.0, sigma, seed)?;
        put(out, Box::into_raw(Box::new(VpPath(s))))
    })
}

/// Serializes a path as an `<ans>...</ans>` answer string.
///
/// # Safety
/// `p` must be a live path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_answer_serialize(p: *const VpPath, out: *mut *mut c_char) -> VpStatus {
    guard(|| put_string(out, vqa::serialize_answer(&deref(p, "path")?.0)))
}

/// Parses an answer string. `lenient` nonzero accepts model-style output.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_answer_parse(text: *const c_char, lenient: c_int, out: *mut *mut VpPath) -> VpStatus {
    guard(|| {
        let mode = if lenient != 0 { ParseMode::Lenient } else { ParseMode::Strict };
        let p = vqa::parse_answer(c_str(text, "text")?, mode)?;
        put(out, Box::into_raw(Box::new(VpPath(p))))
    })
}

/// Renders the fixed finetuning prompt around `instruction`.
///
/// # Safety
/// `instruction` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_prompt_render(instruction: *const c_char, out: *mut *mut c_char) -> VpStatus {
    guard(|| put_string(out, vqa::render_prompt(c_str(instruction, "instruction")?)?))
}

/// Wraps `len` bytes of interleaved pixel data (3 or 6 channels).
///
/// # Safety
/// `data` must hold `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_image_new(
    width: u32,
    height: u32,
    channels: u8,
    data: *const u8,
    len: usize,
    out: *mut *mut VpImage,
) -> VpStatus {
    guard(|| {
        let img = Image::new(width, height, channels, slice(data, len, "data")?.to_vec())?;
        put(out, Box::into_raw(Box::new(VpImage(img))))
    })
}

/// Decodes an 8-bit RGB or RGBA PNG held in memory.
///
/// # Safety
/// `bytes` must hold `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_image_decode_png(bytes: *const u8, len: usize, out: *mut *mut VpImage) -> VpStatus {
    guard(|| {
        let img = Image::decode_png(slice(bytes, len, "bytes")?)?;
        put(out, Box::into_raw(Box::new(VpImage(img))))
    })
}

/// Releases an image. NULL is ignored.
///
/// # Safety
/// `img` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vp_image_free(img: *mut VpImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Width, height and channel count.
///
/// # Safety
/// `img` must be a live image; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn vp_image_info(img: *const VpImage, width: *mut u32, height: *mut u32, channels: *mut u8) -> VpStatus {
    guard(|| {
        let img = &deref(img, "image")?.0;
        put(width, img.width())?;
        put(height, img.height())?;
        put(channels, img.channels())
    })
}

/// Borrowed pixel bytes, valid while the image lives. Writes the length to
/// `len`. Returns NULL for a NULL image.
///
/// # Safety
/// `img` must be NULL or a live image; `len` must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn vp_image_data(img: *const VpImage, len: *mut usize) -> *const u8 {
    match img.as_ref() {
        Some(img) => {
            if !len.is_null() {
                len.write(img.0.data().len());
            }
            img.0.data().as_ptr()
        }
        None => ptr::null(),
    }
}

/// Draws `path` with a style given as JSON (NULL for the default overlay
/// style). The style's `mode` picks overlay or 6-channel concat output.
///
/// # Safety
/// `img` and `p` must be live handles; `style_json` NULL or NUL-terminated;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vp_draw(
    img: *const VpImage,
    p: *const VpPath,
    style_json: *const c_char,
    out: *mut *mut VpImage,
) -> VpStatus {
    guard(|| {
        let style = if style_json.is_null() {
            OverlayStyle::default()
        } else {
            serde_json::from_str(c_str(style_json, "style_json")?)
                .map_err(|e| Fail(VpStatus::InvalidArgument, format!("style: {e}")))?
        };
        let drawn = render::draw(&deref(img, "image")?.0, &deref(p, "path")?.0, &style)?;
        put(out, Box::into_raw(Box::new(VpImage(drawn))))
    })
}

/// Draws `path` with the default overlay style.
///
/// # Safety
/// As for [`vp_draw`].
#[no_mangle]
pub unsafe extern "C" fn vp_draw_overlay(img: *const VpImage, p: *const VpPath, out: *mut *mut VpImage) -> VpStatus {
    vp_draw(img, p, ptr::null(), out)
}

/// Projects world point `p` to pixel `uv` through intrinsics
/// `k = {fx, fy, cx, cy}` with image size `width`×`height`, row-major
/// rotation `r[9]` and translation `t[3]`.
///
/// # Safety
/// `k` must hold 4 doubles, `r` 9, `t` 3, `p` 3; `uv` must be writable for 2.
#[no_mangle]
pub unsafe extern "C" fn vp_project_point(
    k: *const f64,
    width: u32,
    height: u32,
    r: *const f64,
    t: *const f64,
    p: *const f64,
    uv: *mut f64,
) -> VpStatus {
    guard(|| {
        let (k, r, t, p) = (slice(k, 4, "k")?, slice(r, 9, "r")?, slice(t, 3, "t")?, slice(p, 3, "p")?);
        if uv.is_null() {
            return Err(null("uv"));
        }
        let intr = CameraIntrinsics::new(k[0], k[1], k[2], k[3], width, height)?;
        let extr = CameraExtrinsics::new(Matrix3::from_row_slice(r), Vector3::new(t[0], t[1], t[2]))?;
        let px = geometry::project_point(&Vector3::new(p[0], p[1], p[2]), &intr, &extr)?;
        uv.write(px.x);
        uv.add(1).write(px.y);
        Ok(())
    })
}
