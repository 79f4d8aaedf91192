//! C ABI for `statgeo`.
//!
//! Objects cross the boundary as opaque handles created by `*_load` and
//! released by the matching `*_free`. Every fallible function returns a
//! [`StatgeoStatus`]; on failure `statgeo_last_error` describes the problem
//! for the calling thread. Vectors are `(pointer, length)` pairs and
//! matrices are written row-major into caller-owned buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use statgeo::families::KlMode;
use statgeo::geodesic::{exp_map, log_map, minimize_energy, EnergyConfig, Objective};
use statgeo::io::{load_decoder, read_json, GridFile, LandFile};
use statgeo::land::{land_logpdf, LandModel};
use statgeo::metric::{decoded_kl, pullback, MetricField, MetricGrid};
use statgeo::{DecoderMap, Error, RngStream};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatgeoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Numerical = 5,
    Panic = 6,
}

/// A decoder network and its likelihood family.
pub struct StatgeoDecoder {
    inner: DecoderMap,
}

/// A metric interpolated from tensors on a lattice.
pub struct StatgeoGrid {
    inner: MetricGrid,
}

/// A fitted LAND model.
pub struct StatgeoLand {
    inner: LandModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(StatgeoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            _ if e.is_numerical() => StatgeoStatus::Numerical,
            Error::Io(_) => StatgeoStatus::Io,
            Error::Json(_) | Error::Csv(_) => StatgeoStatus::Parse,
            _ => StatgeoStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StatgeoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StatgeoStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            StatgeoStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(StatgeoStatus::NullPointer, format!("{what} is null"))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn c_path(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(StatgeoStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), Failure> {
    if got != want {
        return Err(Failure(
            StatgeoStatus::InvalidArgument,
            format!("{what} has length {got}, expected {want}"),
        ));
    }
    Ok(())
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn statgeo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn statgeo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a decoder JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn statgeo_decoder_load(path: *const c_char, out: *mut *mut StatgeoDecoder) -> StatgeoStatus {
    guard(|| {
        let dec = load_decoder(&c_path(path)?)?;
        store(out, StatgeoDecoder { inner: dec })
    })
}

/// # Safety
/// `dec` must come from `statgeo_decoder_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn statgeo_decoder_free(dec: *mut StatgeoDecoder) {
    if !dec.is_null() {
        drop(Box::from_raw(dec));
    }
}

/// Latent dimension, or 0 for a null handle.
///
/// # Safety
/// `dec` must be null or a live decoder handle.
#[no_mangle]
pub unsafe extern "C" fn statgeo_decoder_latent_dim(dec: *const StatgeoDecoder) -> usize {
    dec.as_ref().map_or(0, |d| d.inner.latent_dim())
}

/// Length of the flattened parameter vector, or 0 for a null handle.
///
/// # Safety
/// `dec` must be null or a live decoder handle.
#[no_mangle]
pub unsafe extern "C" fn statgeo_decoder_output_dim(dec: *const StatgeoDecoder) -> usize {
    dec.as_ref().map_or(0, |d| d.inner.output_dim())
}

/// Decoded, guarded distribution parameters of every feature.
///
/// # Safety
/// `z` holds `d` doubles and `out` has room for `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn statgeo_decoder_forward(
    dec: *const StatgeoDecoder,
    z: *const f64,
    d: usize,
    out: *mut f64,
    out_len: usize,
) -> StatgeoStatus {
    guard(|| {
        let dec = &handle(dec, "decoder")?.inner;
        check_len("z", d, dec.latent_dim())?;
        let params = dec.forward(input(z, d, "z")?)?;
        let flat: Vec<f64> = params.iter().flat_map(|p| p.values().iter().copied()).collect();
        check_len("out", out_len, flat.len())?;
        output(out, out_len, "out")?.copy_from_slice(&flat);
        Ok(())
    })
}

/// Pullback Fisher-Rao metric at `z`, written row-major into `d × d` doubles.
///
/// # Safety
/// `z` holds `d` doubles and `out` has room for `d * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn statgeo_pullback_metric(
    dec: *const StatgeoDecoder,
    z: *const f64,
    d: usize,
    out: *mut f64,
) -> StatgeoStatus {
    guard(|| {
        let dec = &handle(dec, "decoder")?.inner;
        check_len("z", d, dec.latent_dim())?;
        let m = pullback(dec, input(z, d, "z")?)?;
        write_row_major(&m, output(out, d * d, "out")?);
        Ok(())
    })
}

fn write_row_major(m: &nalgebra::DMatrix<f64>, out: &mut [f64]) {
    for (k, v) in m.transpose().iter().enumerate() {
        out[k] = *v;
    }
}

/// Closed-form KL between the decoded distributions at `z1` and `z2`.
///
/// # Safety
/// `z1` and `z2` hold `d` doubles each; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn statgeo_kl(
    dec: *const StatgeoDecoder,
    z1: *const f64,
    z2: *const f64,
    d: usize,
    out: *mut f64,
) -> StatgeoStatus {
    guard(|| {
        let dec = &handle(dec, "decoder")?.inner;
        check_len("z", d, dec.latent_dim())?;
        let kl = decoded_kl(dec, input(z1, d, "z1")?, input(z2, d, "z2")?, &KlMode::ClosedForm)?;
        output(out, 1, "out")?[0] = kl;
        Ok(())
    })
}

/// Minimizes the closed-form KL energy between `z0` and `z1` with default
/// settings and reports the energy and length of the optimized curve.
///
/// # Safety
/// `z0` and `z1` hold `d` doubles each; `energy` and `length` are writable.
#[no_mangle]
pub unsafe extern "C" fn statgeo_geodesic(
    dec: *const StatgeoDecoder,
    z0: *const f64,
    z1: *const f64,
    d: usize,
    seed: u64,
    energy: *mut f64,
    length: *mut f64,
) -> StatgeoStatus {
    guard(|| {
        let dec = &handle(dec, "decoder")?.inner;
        check_len("z", d, dec.latent_dim())?;
        let objective = Objective::Kl {
            decoder: dec,
            mode: KlMode::ClosedForm,
        };
        let g = minimize_energy(
            input(z0, d, "z0")?,
            input(z1, d, "z1")?,
            objective,
            &EnergyConfig::default(),
            &mut RngStream::new(seed),
        )?;
        output(energy, 1, "energy")?[0] = g.energy;
        output(length, 1, "length")?[0] = g.length;
        Ok(())
    })
}

/// Exponential map under the exact pullback metric, RK4 with `steps` steps.
///
/// # Safety
/// `z` and `v` hold `d` doubles each and `out` has room for `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn statgeo_exp_map(
    dec: *const StatgeoDecoder,
    z: *const f64,
    v: *const f64,
    d: usize,
    steps: usize,
    out: *mut f64,
) -> StatgeoStatus {
    guard(|| {
        let dec = &handle(dec, "decoder")?.inner;
        check_len("z", d, dec.latent_dim())?;
        let metric = statgeo::metric::LatentMetric::ExactPullback(dec.clone());
        let path = exp_map(&metric, input(z, d, "z")?, input(v, d, "v")?, steps)?;
        output(out, d, "out")?.copy_from_slice(path.endpoint());
        Ok(())
    })
}

/// Logarithmic map: initial velocity of the optimized closed-form KL
/// geodesic from `z` to `y`, scaled to the geodesic length.
///
/// # Safety
/// `z` and `y` hold `d` doubles each and `out` has room for `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn statgeo_log_map(
    dec: *const StatgeoDecoder,
    z: *const f64,
    y: *const f64,
    d: usize,
    seed: u64,
    out: *mut f64,
) -> StatgeoStatus {
    guard(|| {
        let dec = &handle(dec, "decoder")?.inner;
        check_len("z", d, dec.latent_dim())?;
        let objective = Objective::Kl {
            decoder: dec,
            mode: KlMode::ClosedForm,
        };
        let log = log_map(
            objective,
            input(z, d, "z")?,
            input(y, d, "y")?,
            &EnergyConfig::default(),
            &mut RngStream::new(seed),
        )?;
        output(out, d, "out")?.copy_from_slice(&log.velocity);
        Ok(())
    })
}

/// Loads a metric grid JSON file written by `statgeo metric-grid`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn statgeo_grid_load(path: *const c_char, out: *mut *mut StatgeoGrid) -> StatgeoStatus {
    guard(|| {
        let file: GridFile = read_json(&c_path(path)?)?;
        store(out, StatgeoGrid { inner: file.to_grid()? })
    })
}

/// # Safety
/// `grid` must come from `statgeo_grid_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn statgeo_grid_free(grid: *mut StatgeoGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Interpolated metric at `z`, written row-major into `d × d` doubles.
///
/// # Safety
/// `z` holds `d` doubles and `out` has room for `d * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn statgeo_grid_metric(grid: *const StatgeoGrid, z: *const f64, d: usize, out: *mut f64) -> StatgeoStatus {
    guard(|| {
        let grid = &handle(grid, "grid")?.inner;
        check_len("z", d, grid.dim())?;
        let m = grid.eval(input(z, d, "z")?)?;
        write_row_major(&m, output(out, d * d, "out")?);
        Ok(())
    })
}

/// Loads a LAND model JSON file written by `statgeo land`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn statgeo_land_load(path: *const c_char, out: *mut *mut StatgeoLand) -> StatgeoStatus {
    guard(|| {
        let file: LandFile = read_json(&c_path(path)?)?;
        store(out, StatgeoLand { inner: file.to_model()? })
    })
}

/// # Safety
/// `land` must come from `statgeo_land_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn statgeo_land_free(land: *mut StatgeoLand) {
    if !land.is_null() {
        drop(Box::from_raw(land));
    }
}

/// Log-density of the LAND at `z` with respect to the Riemannian volume of
/// `grid`.
///
/// # Safety
/// `z` holds `d` doubles and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn statgeo_land_logpdf(
    land: *const StatgeoLand,
    grid: *const StatgeoGrid,
    z: *const f64,
    d: usize,
    out: *mut f64,
) -> StatgeoStatus {
    guard(|| {
        let model = &handle(land, "land")?.inner;
        let grid = &handle(grid, "grid")?.inner;
        check_len("z", d, model.dim())?;
        check_len("grid dimension", grid.dim(), model.dim())?;
        let cfg = statgeo::land::LandConfig::default().geodesic;
        output(out, 1, "out")?[0] = land_logpdf(model, grid, input(z, d, "z")?, &cfg)?;
        Ok(())
    })
}
