//! C bindings for the trace-to-image pipeline: opaque handles over the
//! core types, a status code from every fallible call, and a per-thread
//! last-error message. The generated header lives in include/trafdiff.h.
#![allow(non_camel_case_types)]
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use trafdiff::config::ImageConfig;
use trafdiff::diffusion::Generator;
use trafdiff::enhance::{enhance_pipeline, save_png, PixelImage};
use trafdiff::error::Error;
use trafdiff::gasf::{crop_prefix, decode, encode, GasfImage};
use trafdiff::trace::NormalizedTrace;

/// Result of every fallible call. Non-zero codes leave a message
/// retrievable with `trafdiff_last_error`.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum trafdiff_status {
    TRAFDIFF_OK = 0,
    TRAFDIFF_ERR_INVALID_ARGUMENT = 1,
    TRAFDIFF_ERR_DOMAIN = 2,
    TRAFDIFF_ERR_IO = 3,
    TRAFDIFF_ERR_MALFORMED = 4,
    TRAFDIFF_ERR_NUMERICAL = 5,
    TRAFDIFF_ERR_MISSING_STAGE = 6,
    TRAFDIFF_ERR_CONFIG = 7,
    TRAFDIFF_ERR_INTERNAL = 8,
}

use trafdiff_status::*;

/// Normalized trace handle (values in [0,1]).
pub struct trafdiff_trace {
    _opaque: [u8; 0],
}

/// Angular-field image handle (n x n, values in [-1,1]).
pub struct trafdiff_image {
    _opaque: [u8; 0],
}

/// Enhanced pixel image handle (values in [0,1]).
pub struct trafdiff_pixels {
    _opaque: [u8; 0],
}

/// Trained generator handle.
pub struct trafdiff_generator {
    _opaque: [u8; 0],
}

/// Owned batch of sampled pixel images.
pub struct trafdiff_image_set {
    _opaque: [u8; 0],
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized: Vec<u8> = msg.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> trafdiff_status {
    match err {
        Error::InvalidInput(_) | Error::ShapeMismatch(_) | Error::MissingClass(_) => {
            TRAFDIFF_ERR_INVALID_ARGUMENT
        }
        Error::Domain(_) | Error::UnbinnableTrace(_) => TRAFDIFF_ERR_DOMAIN,
        Error::Io(_) | Error::Csv(_) => TRAFDIFF_ERR_IO,
        Error::MalformedArtifact { .. } | Error::Json(_) => TRAFDIFF_ERR_MALFORMED,
        Error::Numerical(_) => TRAFDIFF_ERR_NUMERICAL,
        Error::MissingStage(_) => TRAFDIFF_ERR_MISSING_STAGE,
        Error::Config(_) => TRAFDIFF_ERR_CONFIG,
        Error::Plot(_) => TRAFDIFF_ERR_INTERNAL,
    }
}

fn fail(err: &Error) -> trafdiff_status {
    set_error(&err.to_string());
    status_of(err)
}

fn invalid(msg: &str) -> trafdiff_status {
    set_error(msg);
    TRAFDIFF_ERR_INVALID_ARGUMENT
}

/// Run a body with panic isolation; a panic never crosses the boundary.
fn guarded(body: impl FnOnce() -> trafdiff_status) -> trafdiff_status {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            TRAFDIFF_ERR_INTERNAL
        }
    }
}

fn leak<T, H>(value: T) -> *mut H {
    Box::into_raw(Box::new(value)) as *mut H
}

unsafe fn inner<'a, T, H>(handle: *const H) -> Option<&'a T> {
    (handle as *const T).as_ref()
}

unsafe fn inner_mut<'a, T, H>(handle: *mut H) -> Option<&'a mut T> {
    (handle as *mut T).as_mut()
}

unsafe fn free_handle<T, H>(handle: *mut H) {
    if !handle.is_null() {
        drop(Box::from_raw(handle as *mut T));
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, trafdiff_status> {
    if ptr.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

/// Copy the last error message into `buf` (NUL-terminated, truncated to
/// `cap`). Returns the full message length excluding the terminator.
#[no_mangle]
pub unsafe extern "C" fn trafdiff_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn trafdiff_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// Traces

/// Build a normalized trace from `len` samples in [0,1].
#[no_mangle]
pub unsafe extern "C" fn trafdiff_trace_new(
    samples: *const f64,
    len: usize,
    class_label: u32,
    dataset_id: *const c_char,
    out: *mut *mut trafdiff_trace,
) -> trafdiff_status {
    guarded(|| {
        if samples.is_null() || out.is_null() {
            return invalid("samples and out must be non-null");
        }
        let id = match str_arg(dataset_id, "dataset_id") {
            Ok(s) => s,
            Err(st) => return st,
        };
        let values = std::slice::from_raw_parts(samples, len).to_vec();
        match NormalizedTrace::new(values, class_label, id) {
            Ok(t) => {
                *out = leak(t);
                TRAFDIFF_OK
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn trafdiff_trace_free(trace: *mut trafdiff_trace) {
    free_handle::<NormalizedTrace, _>(trace);
}

/// Number of samples in the trace.
#[no_mangle]
pub unsafe extern "C" fn trafdiff_trace_len(trace: *const trafdiff_trace) -> usize {
    inner::<NormalizedTrace, _>(trace).map_or(0, |t| t.samples.len())
}

// ---------------------------------------------------------------------------
// Angular-field images

/// Encode a trace as its angular-field image.
#[no_mangle]
pub unsafe extern "C" fn trafdiff_trace_encode(
    trace: *const trafdiff_trace,
    out: *mut *mut trafdiff_image,
) -> trafdiff_status {
    guarded(|| {
        let (Some(t), false) = (inner::<NormalizedTrace, _>(trace), out.is_null()) else {
            return invalid("trace and out must be non-null");
        };
        match encode(t) {
            Ok(img) => {
                *out = leak(img);
                TRAFDIFF_OK
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn trafdiff_image_free(image: *mut trafdiff_image) {
    free_handle::<GasfImage, _>(image);
}

/// Side length n of the n x n image.
#[no_mangle]
pub unsafe extern "C" fn trafdiff_image_side(image: *const trafdiff_image) -> usize {
    inner::<GasfImage, _>(image).map_or(0, |i| i.n)
}

/// Copy the row-major n*n entries into `buf` (capacity `cap`).
#[no_mangle]
pub unsafe extern "C" fn trafdiff_image_copy_data(
    image: *const trafdiff_image,
    buf: *mut f64,
    cap: usize,
) -> trafdiff_status {
    guarded(|| {
        let (Some(img), false) = (inner::<GasfImage, _>(image), buf.is_null()) else {
            return invalid("image and buf must be non-null");
        };
        if cap < img.data.len() {
            return invalid("buffer too small for image data");
        }
        std::ptr::copy_nonoverlapping(img.data.as_ptr(), buf, img.data.len());
        TRAFDIFF_OK
    })
}

/// Top-left m x m submatrix, equal to encoding the first m samples.
#[no_mangle]
pub unsafe extern "C" fn trafdiff_image_crop_prefix(
    image: *const trafdiff_image,
    m: usize,
    out: *mut *mut trafdiff_image,
) -> trafdiff_status {
    guarded(|| {
        let (Some(img), false) = (inner::<GasfImage, _>(image), out.is_null()) else {
            return invalid("image and out must be non-null");
        };
        match crop_prefix(img, m) {
            Ok(c) => {
                *out = leak(c);
                TRAFDIFF_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Recover the trace from the image diagonal; writes up to `cap` samples
/// and stores the full length in `written`.
#[no_mangle]
pub unsafe extern "C" fn trafdiff_image_decode(
    image: *const trafdiff_image,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> trafdiff_status {
    guarded(|| {
        let (Some(img), false) = (inner::<GasfImage, _>(image), buf.is_null()) else {
            return invalid("image and buf must be non-null");
        };
        match decode(img) {
            Ok(t) => {
                if cap < t.samples.len() {
                    return invalid("buffer too small for decoded trace");
                }
                std::ptr::copy_nonoverlapping(t.samples.as_ptr(), buf, t.samples.len());
                if !written.is_null() {
                    *written = t.samples.len();
                }
                TRAFDIFF_OK
            }
            Err(e) => fail(&e),
        }
    })
}

/// Enhance an angular image to a `resolution` x `resolution` pixel image
/// (shift to [0,1], power-law stretch, area resize).
#[no_mangle]
pub unsafe extern "C" fn trafdiff_image_enhance(
    image: *const trafdiff_image,
    resolution: usize,
    gamma: f64,
    gain: f64,
    out: *mut *mut trafdiff_pixels,
) -> trafdiff_status {
    guarded(|| {
        let (Some(img), false) = (inner::<GasfImage, _>(image), out.is_null()) else {
            return invalid("image and out must be non-null");
        };
        let cfg = ImageConfig { resolution, gamma, gain };
        match enhance_pipeline(img, &cfg) {
            Ok(p) => {
                *out = leak(p);
                TRAFDIFF_OK
            }
            Err(e) => fail(&e),
        }
    })
}

// ---------------------------------------------------------------------------
// Pixel images

#[no_mangle]
pub unsafe extern "C" fn trafdiff_pixels_free(pixels: *mut trafdiff_pixels) {
    free_handle::<PixelImage, _>(pixels);
}

#[no_mangle]
pub unsafe extern "C" fn trafdiff_pixels_height(pixels: *const trafdiff_pixels) -> usize {
    inner::<PixelImage, _>(pixels).map_or(0, |p| p.h)
}

#[no_mangle]
pub unsafe extern "C" fn trafdiff_pixels_width(pixels: *const trafdiff_pixels) -> usize {
    inner::<PixelImage, _>(pixels).map_or(0, |p| p.w)
}

/// Class label carried by the image metadata.
#[no_mangle]
pub unsafe extern "C" fn trafdiff_pixels_class(pixels: *const trafdiff_pixels) -> u32 {
    inner::<PixelImage, _>(pixels).map_or(0, |p| p.meta.class_label)
}

/// Copy the row-major h*w pixel values into `buf` (capacity `cap`).
#[no_mangle]
pub unsafe extern "C" fn trafdiff_pixels_copy_data(
    pixels: *const trafdiff_pixels,
    buf: *mut f64,
    cap: usize,
) -> trafdiff_status {
    guarded(|| {
        let (Some(p), false) = (inner::<PixelImage, _>(pixels), buf.is_null()) else {
            return invalid("pixels and buf must be non-null");
        };
        if cap < p.data.len() {
            return invalid("buffer too small for pixel data");
        }
        std::ptr::copy_nonoverlapping(p.data.as_ptr(), buf, p.data.len());
        TRAFDIFF_OK
    })
}

/// Write the image as an 8-bit grayscale PNG.
#[no_mangle]
pub unsafe extern "C" fn trafdiff_pixels_save_png(
    pixels: *const trafdiff_pixels,
    path: *const c_char,
) -> trafdiff_status {
    guarded(|| {
        let Some(p) = inner::<PixelImage, _>(pixels) else {
            return invalid("pixels must be non-null");
        };
        let path = match str_arg(path, "path") {
            Ok(s) => s,
            Err(st) => return st,
        };
        match save_png(p, Path::new(path)) {
            Ok(()) => TRAFDIFF_OK,
            Err(e) => fail(&e),
        }
    })
}

// ---------------------------------------------------------------------------
// Generators

/// Load a trained generator from its artifact directory.
#[no_mangle]
pub unsafe extern "C" fn trafdiff_generator_load(
    dir: *const c_char,
    out: *mut *mut trafdiff_generator,
) -> trafdiff_status {
    guarded(|| {
        if out.is_null() {
            return invalid("out must be non-null");
        }
        let dir = match str_arg(dir, "dir") {
            Ok(s) => s,
            Err(st) => return st,
        };
        match Generator::load(Path::new(dir)) {
            Ok(g) => {
                *out = leak(g);
                TRAFDIFF_OK
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn trafdiff_generator_free(generator: *mut trafdiff_generator) {
    free_handle::<Generator, _>(generator);
}

/// Copy the generator's class labels into `buf`; stores the full count in
/// `written`. Call with `cap` 0 to query the count.
#[no_mangle]
pub unsafe extern "C" fn trafdiff_generator_classes(
    generator: *const trafdiff_generator,
    buf: *mut u32,
    cap: usize,
    written: *mut usize,
) -> trafdiff_status {
    guarded(|| {
        let (Some(g), false) = (inner::<Generator, _>(generator), written.is_null()) else {
            return invalid("generator and written must be non-null");
        };
        let classes = g.class_set();
        *written = classes.len();
        if cap > 0 {
            if buf.is_null() {
                return invalid("buf is null with non-zero cap");
            }
            if cap < classes.len() {
                return invalid("buffer too small for class labels");
            }
            std::ptr::copy_nonoverlapping(classes.as_ptr(), buf, classes.len());
        }
        TRAFDIFF_OK
    })
}

/// Draw `count` images of `class_label`; same seed, same images.
#[no_mangle]
pub unsafe extern "C" fn trafdiff_generator_sample(
    generator: *mut trafdiff_generator,
    class_label: u32,
    count: usize,
    seed: u64,
    out: *mut *mut trafdiff_image_set,
) -> trafdiff_status {
    guarded(|| {
        let (Some(g), false) = (inner_mut::<Generator, _>(generator), out.is_null()) else {
            return invalid("generator and out must be non-null");
        };
        match g.sample(class_label, count, seed) {
            Ok(images) => {
                *out = leak(images);
                TRAFDIFF_OK
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn trafdiff_image_set_free(set: *mut trafdiff_image_set) {
    free_handle::<Vec<PixelImage>, _>(set);
}

#[no_mangle]
pub unsafe extern "C" fn trafdiff_image_set_len(set: *const trafdiff_image_set) -> usize {
    inner::<Vec<PixelImage>, _>(set).map_or(0, Vec::len)
}

/// Borrow one image from the set; valid until the set is freed. Returns
/// null when the index is out of range.
#[no_mangle]
pub unsafe extern "C" fn trafdiff_image_set_get(
    set: *const trafdiff_image_set,
    index: usize,
) -> *const trafdiff_pixels {
    inner::<Vec<PixelImage>, _>(set)
        .and_then(|v| v.get(index))
        .map_or(std::ptr::null(), |p| p as *const PixelImage as *const trafdiff_pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use trafdiff::config::{Conditioning, DiffusionConfig};
    use trafdiff::diffusion::train_images;
    use trafdiff::enhance::ImageMeta;

    fn make_trace(samples: &[f64]) -> *mut trafdiff_trace {
        let id = CString::new("ffi-test").unwrap();
        let mut out: *mut trafdiff_trace = std::ptr::null_mut();
        let st = unsafe {
            trafdiff_trace_new(samples.as_ptr(), samples.len(), 3, id.as_ptr(), &mut out)
        };
        assert_eq!(st, TRAFDIFF_OK);
        out
    }

    fn last_error() -> String {
        let mut buf = vec![0u8; 256];
        let n = unsafe { trafdiff_last_error(buf.as_mut_ptr() as *mut c_char, buf.len()) };
        String::from_utf8(buf[..n.min(255)].to_vec()).unwrap()
    }

    #[test]
    fn encode_crop_decode_round_trip() {
        let samples: Vec<f64> = (0..24).map(|i| i as f64 / 23.0).collect();
        let trace = make_trace(&samples);
        assert_eq!(unsafe { trafdiff_trace_len(trace) }, 24);

        let mut img: *mut trafdiff_image = std::ptr::null_mut();
        assert_eq!(unsafe { trafdiff_trace_encode(trace, &mut img) }, TRAFDIFF_OK);
        assert_eq!(unsafe { trafdiff_image_side(img) }, 24);

        let mut cropped: *mut trafdiff_image = std::ptr::null_mut();
        assert_eq!(unsafe { trafdiff_image_crop_prefix(img, 8, &mut cropped) }, TRAFDIFF_OK);
        assert_eq!(unsafe { trafdiff_image_side(cropped) }, 8);

        let mut decoded = vec![0.0f64; 24];
        let mut written = 0usize;
        let st = unsafe { trafdiff_image_decode(img, decoded.as_mut_ptr(), 24, &mut written) };
        assert_eq!(st, TRAFDIFF_OK);
        assert_eq!(written, 24);
        for (a, b) in samples.iter().zip(&decoded) {
            assert!((a - b).abs() < 1e-9);
        }

        unsafe {
            trafdiff_image_free(cropped);
            trafdiff_image_free(img);
            trafdiff_trace_free(trace);
        }
    }

    #[test]
    fn enhance_exposes_pixels() {
        let samples: Vec<f64> = (0..32).map(|i| (i as f64 / 31.0).sqrt()).collect();
        let trace = make_trace(&samples);
        let mut img: *mut trafdiff_image = std::ptr::null_mut();
        unsafe { trafdiff_trace_encode(trace, &mut img) };

        let mut pix: *mut trafdiff_pixels = std::ptr::null_mut();
        let st = unsafe { trafdiff_image_enhance(img, 16, 0.25, 1.0, &mut pix) };
        assert_eq!(st, TRAFDIFF_OK);
        assert_eq!(unsafe { trafdiff_pixels_height(pix) }, 16);
        assert_eq!(unsafe { trafdiff_pixels_width(pix) }, 16);
        assert_eq!(unsafe { trafdiff_pixels_class(pix) }, 3);
        let mut data = vec![0.0f64; 256];
        assert_eq!(
            unsafe { trafdiff_pixels_copy_data(pix, data.as_mut_ptr(), 256) },
            TRAFDIFF_OK
        );
        assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));

        // Undersized buffer is rejected, not overrun.
        let st = unsafe { trafdiff_pixels_copy_data(pix, data.as_mut_ptr(), 10) };
        assert_eq!(st, TRAFDIFF_ERR_INVALID_ARGUMENT);

        unsafe {
            trafdiff_pixels_free(pix);
            trafdiff_image_free(img);
            trafdiff_trace_free(trace);
        }
    }

    #[test]
    fn errors_carry_codes_and_messages() {
        // Out-of-range sample.
        let bad = [0.5f64, 1.5];
        let id = CString::new("ffi-test").unwrap();
        let mut out: *mut trafdiff_trace = std::ptr::null_mut();
        let st = unsafe { trafdiff_trace_new(bad.as_ptr(), 2, 0, id.as_ptr(), &mut out) };
        assert_eq!(st, TRAFDIFF_ERR_DOMAIN);
        assert!(last_error().contains("outside [0,1]"));

        // Null arguments.
        let st = unsafe { trafdiff_trace_encode(std::ptr::null(), &mut std::ptr::null_mut()) };
        assert_eq!(st, TRAFDIFF_ERR_INVALID_ARGUMENT);

        // Loading a generator from a missing directory.
        let dir = CString::new("/no/such/generator").unwrap();
        let mut generator: *mut trafdiff_generator = std::ptr::null_mut();
        let st = unsafe { trafdiff_generator_load(dir.as_ptr(), &mut generator) };
        assert_ne!(st, TRAFDIFF_OK);
        assert!(!last_error().is_empty());
    }

    #[test]
    fn generator_load_and_sample() {
        // Train the tiniest generator, save it, then drive it through the
        // C surface.
        let mut images = Vec::new();
        for class in 0..2u32 {
            for k in 0..3 {
                let v = 0.2 + 0.1 * class as f64 + 0.01 * k as f64;
                images.push(PixelImage {
                    h: 16,
                    w: 16,
                    data: vec![v; 256],
                    meta: ImageMeta { dataset_id: "ffi".into(), class_label: class, orig_n: 24 },
                });
            }
        }
        let cfg = DiffusionConfig {
            timesteps: 10,
            beta_start: 1e-4,
            beta_end: 0.02,
            train_steps: 4,
            batch_size: 2,
            learning_rate: 1e-3,
            ema_decay: 0.9,
            base_channels: 2,
            channel_mults: vec![1, 1, 1, 1, 1],
            conditioning: Conditioning::ClassEmbedding,
        };
        let (mut generator, _) = train_images(&images, &cfg, "ffi", 5).unwrap();
        let tmp = tempfile::TempDir::new().unwrap();
        generator.save(tmp.path()).unwrap();

        let dir = CString::new(tmp.path().to_str().unwrap()).unwrap();
        let mut handle: *mut trafdiff_generator = std::ptr::null_mut();
        assert_eq!(unsafe { trafdiff_generator_load(dir.as_ptr(), &mut handle) }, TRAFDIFF_OK);

        let mut classes = vec![0u32; 4];
        let mut count = 0usize;
        let st = unsafe {
            trafdiff_generator_classes(handle, classes.as_mut_ptr(), classes.len(), &mut count)
        };
        assert_eq!(st, TRAFDIFF_OK);
        assert_eq!(&classes[..count], &[0, 1]);

        let mut set: *mut trafdiff_image_set = std::ptr::null_mut();
        assert_eq!(
            unsafe { trafdiff_generator_sample(handle, 1, 2, 9, &mut set) },
            TRAFDIFF_OK
        );
        assert_eq!(unsafe { trafdiff_image_set_len(set) }, 2);
        let first = unsafe { trafdiff_image_set_get(set, 0) };
        assert!(!first.is_null());
        assert_eq!(unsafe { trafdiff_pixels_height(first) }, 16);
        assert_eq!(unsafe { trafdiff_pixels_class(first) }, 1);
        assert!(unsafe { trafdiff_image_set_get(set, 5) }.is_null());

        unsafe {
            trafdiff_image_set_free(set);
            trafdiff_generator_free(handle);
        }
    }

    #[test]
    fn header_in_sync_with_exports() {
        let header = include_str!("../include/trafdiff.h");
        for symbol in [
            "trafdiff_last_error",
            "trafdiff_version",
            "trafdiff_trace_new",
            "trafdiff_trace_free",
            "trafdiff_trace_len",
            "trafdiff_trace_encode",
            "trafdiff_image_free",
            "trafdiff_image_side",
            "trafdiff_image_copy_data",
            "trafdiff_image_crop_prefix",
            "trafdiff_image_decode",
            "trafdiff_image_enhance",
            "trafdiff_pixels_free",
            "trafdiff_pixels_height",
            "trafdiff_pixels_width",
            "trafdiff_pixels_class",
            "trafdiff_pixels_copy_data",
            "trafdiff_pixels_save_png",
            "trafdiff_generator_load",
            "trafdiff_generator_free",
            "trafdiff_generator_classes",
            "trafdiff_generator_sample",
            "trafdiff_image_set_free",
            "trafdiff_image_set_len",
            "trafdiff_image_set_get",
        ] {
            assert!(header.contains(symbol), "header missing {symbol}");
        }
        assert!(header.contains("TRAFDIFF_ERR_MISSING_STAGE"));
        assert!(header.contains("typedef struct trafdiff_generator trafdiff_generator;"));
    }
}
