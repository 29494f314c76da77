//! C ABI for embedding the reconstruction pipeline in other languages.
//!
//! Handles are opaque pointers owned by this library; every constructor
//! has a matching `_free`. Functions return [`ShredrecStatus`] codes and
//! never unwind across the boundary.

use shredrec::compat::{build_cost_matrix, CompatConfig};
use shredrec::docproc::{
    boundary_crop, load_shreds, permute_instance, sauvola_binarize, virtual_shred, BoundarySide,
    GrayImage, ReconstructionInstance,
};
use shredrec::metrics::accuracy;
use shredrec::projector::{build_projector, ProjectorPair, Side};
use shredrec::solver::{solve_auto, Solution, DEFAULT_EXACT_LIMIT};
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;

/// Result codes for every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShredrecStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    IoError = 3,
    BadModel = 4,
    BadInstance = 5,
    ReconstructionFailed = 6,
    BufferTooSmall = 7,
    InternalPanic = 8,
}

/// Opaque trained model pair.
pub struct ShredrecProjector {
    inner: ProjectorPair,
}

/// Opaque reconstruction instance (shreds in presentation order).
pub struct ShredrecInstance {
    inner: ReconstructionInstance,
}

/// Opaque solved ordering.
pub struct ShredrecSolution {
    solution: Solution,
    inferences: u64,
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn shredrec_version() -> *const c_char {
    static VERSION: OnceLock<CString> = OnceLock::new();
    VERSION
        .get_or_init(|| CString::new(env!("CARGO_PKG_VERSION")).expect("version"))
        .as_ptr()
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn shredrec_status_message(status: ShredrecStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        ShredrecStatus::Ok => b"ok\0",
        ShredrecStatus::NullArgument => b"a required pointer argument was null\0",
        ShredrecStatus::InvalidUtf8 => b"a string argument was not valid UTF-8\0",
        ShredrecStatus::IoError => b"file could not be read or written\0",
        ShredrecStatus::BadModel => b"weight file is missing, corrupt, or mismatched\0",
        ShredrecStatus::BadInstance => b"shred set is missing, corrupt, or too small\0",
        ShredrecStatus::ReconstructionFailed => b"reconstruction failed on this input\0",
        ShredrecStatus::BufferTooSmall => b"the output buffer is too small\0",
        ShredrecStatus::InternalPanic => b"internal error\0",
    };
    msg.as_ptr().cast()
}

fn guard(f: impl FnOnce() -> ShredrecStatus) -> ShredrecStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(ShredrecStatus::InternalPanic)
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, ShredrecStatus> {
    if ptr.is_null() {
        return Err(ShredrecStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| ShredrecStatus::InvalidUtf8)
}

/// Loads trained weights (.shrw) into a new projector handle.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to writable
/// pointer storage; both must stay valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn shredrec_projector_load(
    path: *const c_char,
    out: *mut *mut ShredrecProjector,
) -> ShredrecStatus {
    guard(|| {
        if out.is_null() {
            return ShredrecStatus::NullArgument;
        }
        let path = match cstr(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        if !Path::new(path).exists() {
            return ShredrecStatus::IoError;
        }
        match ProjectorPair::load_weights(Path::new(path)) {
            Ok(pair) => {
                *out = Box::into_raw(Box::new(ShredrecProjector { inner: pair }));
                ShredrecStatus::Ok
            }
            Err(_) => ShredrecStatus::BadModel,
        }
    })
}

/// Builds a freshly initialized projector (square s x s samples).
///
/// # Safety
/// `out` must point to writable pointer storage.
#[no_mangle]
pub unsafe extern "C" fn shredrec_projector_build(
    d: u32,
    s: u32,
    seed: u64,
    out: *mut *mut ShredrecProjector,
) -> ShredrecStatus {
    guard(|| {
        if out.is_null() {
            return ShredrecStatus::NullArgument;
        }
        match build_projector(d as usize, s as usize, s as usize, seed) {
            Ok(pair) => {
                *out = Box::into_raw(Box::new(ShredrecProjector { inner: pair }));
                ShredrecStatus::Ok
            }
            Err(_) => ShredrecStatus::BadModel,
        }
    })
}

/// Embedding dimension of a projector handle.
///
/// # Safety
/// `p` must be a live handle from this library (or null, which yields 0).
#[no_mangle]
pub unsafe extern "C" fn shredrec_projector_dim(p: *const ShredrecProjector) -> u32 {
    if p.is_null() {
        return 0;
    }
    (*p).inner.d as u32
}

/// # Safety
/// `p` must be a handle produced by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn shredrec_projector_free(p: *mut ShredrecProjector) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Loads a shred directory (PNG files plus manifest.json).
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` valid pointer storage.
#[no_mangle]
pub unsafe extern "C" fn shredrec_instance_load_dir(
    dir: *const c_char,
    out: *mut *mut ShredrecInstance,
) -> ShredrecStatus {
    guard(|| {
        if out.is_null() {
            return ShredrecStatus::NullArgument;
        }
        let dir = match cstr(dir) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_shreds(Path::new(dir)) {
            Ok(shreds) if shreds.len() >= 2 => {
                *out = Box::into_raw(Box::new(ShredrecInstance {
                    inner: ReconstructionInstance::new(shreds),
                }));
                ShredrecStatus::Ok
            }
            _ => ShredrecStatus::BadInstance,
        }
    })
}

/// Builds an instance by binarizing a grayscale page (row-major, one
/// byte per pixel, 0 = black) and cutting it into `strips` shreds.
///
/// # Safety
/// `pixels` must point to `width * height` readable bytes; `out` must be
/// valid pointer storage.
#[no_mangle]
pub unsafe extern "C" fn shredrec_instance_from_page(
    pixels: *const u8,
    width: u32,
    height: u32,
    strips: u32,
    out: *mut *mut ShredrecInstance,
) -> ShredrecStatus {
    guard(|| {
        if out.is_null() || pixels.is_null() {
            return ShredrecStatus::NullArgument;
        }
        let (w, h) = (width as usize, height as usize);
        if w == 0 || h == 0 {
            return ShredrecStatus::BadInstance;
        }
        let data = std::slice::from_raw_parts(pixels, w * h).to_vec();
        let gray = GrayImage { width: w, height: h, pixels: data };
        let bin = match sauvola_binarize(
            &gray,
            shredrec::docproc::SAUVOLA_WINDOW,
            shredrec::docproc::SAUVOLA_K,
            shredrec::docproc::SAUVOLA_R,
        ) {
            Ok(b) => b,
            Err(_) => return ShredrecStatus::BadInstance,
        };
        match virtual_shred(&bin, strips as usize, "page") {
            Ok(shreds) => {
                *out = Box::into_raw(Box::new(ShredrecInstance {
                    inner: ReconstructionInstance::new(shreds),
                }));
                ShredrecStatus::Ok
            }
            Err(_) => ShredrecStatus::BadInstance,
        }
    })
}

/// Number of shreds in the instance.
///
/// # Safety
/// `inst` must be a live handle (or null, which yields 0).
#[no_mangle]
pub unsafe extern "C" fn shredrec_instance_len(inst: *const ShredrecInstance) -> usize {
    if inst.is_null() {
        return 0;
    }
    (*inst).inner.len()
}

/// Seeded shuffle of the presentation order.
///
/// # Safety
/// `inst` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn shredrec_instance_permute(
    inst: *mut ShredrecInstance,
    seed: u64,
) -> ShredrecStatus {
    guard(|| {
        if inst.is_null() {
            return ShredrecStatus::NullArgument;
        }
        let permuted = permute_instance(&(*inst).inner, seed);
        (*inst).inner = permuted;
        ShredrecStatus::Ok
    })
}

/// # Safety
/// `inst` must be a handle produced by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn shredrec_instance_free(inst: *mut ShredrecInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Embeds every boundary once, builds the cost matrix and orders the
/// shreds (exact solver up to 20 shreds, heuristic beyond).
///
/// # Safety
/// `p` and `inst` must be live handles; `out` valid pointer storage.
#[no_mangle]
pub unsafe extern "C" fn shredrec_reconstruct(
    p: *const ShredrecProjector,
    inst: *const ShredrecInstance,
    delta_max: u32,
    out: *mut *mut ShredrecSolution,
) -> ShredrecStatus {
    guard(|| {
        if p.is_null() || inst.is_null() || out.is_null() {
            return ShredrecStatus::NullArgument;
        }
        let pair = &(*p).inner;
        let instance = &(*inst).inner;
        let h = instance.common_boundary_height();
        if h < pair.s_y {
            return ShredrecStatus::BadInstance;
        }
        pair.reset_inference_count();
        let mut embeddings = Vec::with_capacity(instance.len());
        for shred in &instance.shreds {
            let crop = |side| boundary_crop(shred, side, pair.s_x, h);
            let (right, left) = match (crop(BoundarySide::Right), crop(BoundarySide::Left)) {
                (Ok(r), Ok(l)) => (r, l),
                _ => return ShredrecStatus::BadInstance,
            };
            let right = match pair.embed_boundary(Side::Right, &right, &shred.key()) {
                Ok(e) => e,
                Err(_) => return ShredrecStatus::ReconstructionFailed,
            };
            let left = match pair.embed_boundary(Side::Left, &left, &shred.key()) {
                Ok(e) => e,
                Err(_) => return ShredrecStatus::ReconstructionFailed,
            };
            embeddings.push(shredrec::compat::ShredEmbeddings { right, left });
        }
        let cfg = CompatConfig { delta_max: delta_max as usize, ..Default::default() };
        let matrix = match build_cost_matrix(&embeddings, &cfg) {
            Ok(m) => m,
            Err(_) => return ShredrecStatus::ReconstructionFailed,
        };
        let solution = match solve_auto(&matrix, DEFAULT_EXACT_LIMIT, 0, 16) {
            Ok(s) => s,
            Err(_) => return ShredrecStatus::ReconstructionFailed,
        };
        *out = Box::into_raw(Box::new(ShredrecSolution {
            solution,
            inferences: pair.count_inferences().total(),
        }));
        ShredrecStatus::Ok
    })
}

/// Number of entries in the solved order.
///
/// # Safety
/// `sol` must be a live handle (or null, which yields 0).
#[no_mangle]
pub unsafe extern "C" fn shredrec_solution_len(sol: *const ShredrecSolution) -> usize {
    if sol.is_null() {
        return 0;
    }
    (*sol).solution.order.len()
}

/// Accumulated pairwise cost of the solved order.
///
/// # Safety
/// `sol` must be a live handle (or null, which yields NaN).
#[no_mangle]
pub unsafe extern "C" fn shredrec_solution_objective(sol: *const ShredrecSolution) -> f64 {
    if sol.is_null() {
        return f64::NAN;
    }
    (*sol).solution.objective
}

/// Boundary inference count of the reconstruction that produced `sol`
/// (2n for an n-shred instance).
///
/// # Safety
/// `sol` must be a live handle (or null, which yields 0).
#[no_mangle]
pub unsafe extern "C" fn shredrec_solution_inferences(sol: *const ShredrecSolution) -> u64 {
    if sol.is_null() {
        return 0;
    }
    (*sol).inferences
}

/// Copies the solved order (presentation indices) into `buf`.
///
/// # Safety
/// `buf` must point to at least `buf_len` writable usize slots.
#[no_mangle]
pub unsafe extern "C" fn shredrec_solution_order(
    sol: *const ShredrecSolution,
    buf: *mut usize,
    buf_len: usize,
) -> ShredrecStatus {
    guard(|| {
        if sol.is_null() || buf.is_null() {
            return ShredrecStatus::NullArgument;
        }
        let order = &(*sol).solution.order;
        if buf_len < order.len() {
            return ShredrecStatus::BufferTooSmall;
        }
        std::ptr::copy_nonoverlapping(order.as_ptr(), buf, order.len());
        ShredrecStatus::Ok
    })
}

/// Fraction of adjacent placements that are ground-truth positives;
/// `relaxed` additionally accepts cross-page last-to-first seams.
///
/// # Safety
/// `sol` and `inst` must be live handles; `out` valid writable storage.
#[no_mangle]
pub unsafe extern "C" fn shredrec_solution_accuracy(
    sol: *const ShredrecSolution,
    inst: *const ShredrecInstance,
    relaxed: bool,
    out: *mut f64,
) -> ShredrecStatus {
    guard(|| {
        if sol.is_null() || inst.is_null() || out.is_null() {
            return ShredrecStatus::NullArgument;
        }
        match accuracy(&(*sol).solution, &(*inst).inner, relaxed) {
            Ok(a) => {
                *out = a;
                ShredrecStatus::Ok
            }
            Err(_) => ShredrecStatus::BadInstance,
        }
    })
}

/// # Safety
/// `sol` must be a handle produced by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn shredrec_solution_free(sol: *mut ShredrecSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}
