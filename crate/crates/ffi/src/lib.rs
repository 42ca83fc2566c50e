//! C ABI for homlab.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_compute`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`HomlabStatus`]; the message of the last failure on the calling
//! thread is available through [`homlab_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use homlab::correctors::CorrectorSet;
use homlab::experiment::{run, ExperimentConfig};
use homlab::fem::SolveOptions;
use homlab::fit::{fit_rate, RateModel};
use homlab::random_field::{sample_coefficient, EnsembleSpec};
use homlab::{Error, Grid, Shape};

/// Result codes shared by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HomlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    SolverFailure = 4,
    IoError = 5,
    /// A Rust panic was caught at the boundary.
    Internal = 6,
}

/// Rate models accepted by [`homlab_fit_rate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HomlabRateModel {
    Power = 0,
    PowerLog = 1,
    PowerLogGauge = 2,
}

/// Opaque grid handle.
pub struct HomlabGrid(Grid);

/// Opaque per-cell coefficient field.
pub struct HomlabField(Vec<f64>);

/// Opaque corrector set of one coefficient sample.
pub struct HomlabCorrectors(CorrectorSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HomlabStatus {
    match e.root() {
        Error::Config(_) => HomlabStatus::ConfigError,
        Error::SolverFailure { .. } => HomlabStatus::SolverFailure,
        Error::Io(_) => HomlabStatus::IoError,
        _ => HomlabStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (HomlabStatus, String)>) -> HomlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HomlabStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HomlabStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (HomlabStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (HomlabStatus, String) {
    (HomlabStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, (HomlabStatus, String)> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| (HomlabStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (HomlabStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Byte length of the last error message on this thread, including the
/// terminating NUL; 0 when no error has been recorded.
#[no_mangle]
pub extern "C" fn homlab_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes_with_nul().len()))
}

/// Copies the last error message into `buf` (truncated, always
/// NUL-terminated when `len > 0`). Returns the number of bytes written
/// without the NUL.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn homlab_last_error_message(buf: *mut c_char, len: usize) -> usize {
    if buf.is_null() || len == 0 {
        return 0;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |c| c.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
        *buf.add(n) = 0;
        n
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn homlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Periodic `n x n` torus of side `extent`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn homlab_grid_periodic(n: usize, extent: f64, out: *mut *mut HomlabGrid) -> HomlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let g = Grid::periodic(n, extent).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(HomlabGrid(g)));
        Ok(())
    })
}

/// Masked grid of a named shape (`unit-square`, `l-shape`, `sawtooth(k)`).
///
/// # Safety
/// `shape` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn homlab_grid_masked(
    n: usize,
    extent: f64,
    shape: *const c_char,
    out: *mut *mut HomlabGrid,
) -> HomlabStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let shape: Shape = str_arg(shape, "shape")?.parse().map_err(lib_err)?;
        let g = Grid::masked(n, extent, shape).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(HomlabGrid(g)));
        Ok(())
    })
}

/// Cells per side; 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live grid handle.
#[no_mangle]
pub unsafe extern "C" fn homlab_grid_n(grid: *const HomlabGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.n())
}

/// Number of cells (`n * n`); 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live grid handle.
#[no_mangle]
pub unsafe extern "C" fn homlab_grid_cell_count(grid: *const HomlabGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.cell_count())
}

/// # Safety
/// `grid` must be null or a handle from a grid constructor, freed once.
#[no_mangle]
pub unsafe extern "C" fn homlab_grid_free(grid: *mut HomlabGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Samples sample `index` of the Gaussian-bump coefficient ensemble on `grid`.
///
/// # Safety
/// `grid` must be a live grid handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn homlab_sample_coefficient(
    grid: *const HomlabGrid,
    lambda: f64,
    corr_len: f64,
    master_seed: u64,
    index: u64,
    out: *mut *mut HomlabField,
) -> HomlabStatus {
    guard(|| {
        let grid = grid.as_ref().ok_or_else(|| null("grid"))?;
        let out = out_arg(out, "out")?;
        let spec = EnsembleSpec::new(lambda, corr_len, master_seed, 1);
        let field = sample_coefficient(&grid.0, &spec, index).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(HomlabField(field.values)));
        Ok(())
    })
}

/// Field from `len` caller-owned values (copied).
///
/// # Safety
/// `values` must point to `len` readable doubles and `out` be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn homlab_field_from_values(
    values: *const f64,
    len: usize,
    out: *mut *mut HomlabField,
) -> HomlabStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let out = out_arg(out, "out")?;
        let v = std::slice::from_raw_parts(values, len).to_vec();
        *out = Box::into_raw(Box::new(HomlabField(v)));
        Ok(())
    })
}

/// Number of values in a field; 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live field handle.
#[no_mangle]
pub unsafe extern "C" fn homlab_field_len(field: *const HomlabField) -> usize {
    field.as_ref().map_or(0, |f| f.0.len())
}

/// Copies the field into `buf`, which must hold exactly `homlab_field_len` values.
///
/// # Safety
/// `field` must be a live field handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn homlab_field_copy(field: *const HomlabField, buf: *mut f64, len: usize) -> HomlabStatus {
    guard(|| {
        let field = field.as_ref().ok_or_else(|| null("field"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len != field.0.len() {
            return Err((
                HomlabStatus::InvalidArgument,
                format!("buffer holds {len} values, field has {}", field.0.len()),
            ));
        }
        ptr::copy_nonoverlapping(field.0.as_ptr(), buf, len);
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle from a field constructor, freed once.
#[no_mangle]
pub unsafe extern "C" fn homlab_field_free(field: *mut HomlabField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Correctors, flux correctors and effective tensor of `field` on a periodic grid.
///
/// # Safety
/// `grid` and `field` must be live handles and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn homlab_correctors_compute(
    grid: *const HomlabGrid,
    field: *const HomlabField,
    tol: f64,
    out: *mut *mut HomlabCorrectors,
) -> HomlabStatus {
    guard(|| {
        let grid = grid.as_ref().ok_or_else(|| null("grid"))?;
        let field = field.as_ref().ok_or_else(|| null("field"))?;
        let out = out_arg(out, "out")?;
        let mut opts = SolveOptions::default();
        if tol > 0.0 {
            opts.tol = tol;
        }
        let set = CorrectorSet::compute(&grid.0, &field.0, None, opts).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(HomlabCorrectors(set)));
        Ok(())
    })
}

/// Writes the effective tensor row-major into `out[4]`.
///
/// # Safety
/// `set` must be a live corrector handle and `out` point to 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn homlab_correctors_tensor(set: *const HomlabCorrectors, out: *mut f64) -> HomlabStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let m = set.0.a_eff;
        ptr::copy_nonoverlapping([m[0][0], m[0][1], m[1][0], m[1][1]].as_ptr(), out, 4);
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle from [`homlab_correctors_compute`], freed once.
#[no_mangle]
pub unsafe extern "C" fn homlab_correctors_free(set: *mut HomlabCorrectors) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Log-log rate fit; `r0` is ignored by the power model.
///
/// # Safety
/// `xs` and `ys` must point to `len` readable doubles; the outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn homlab_fit_rate(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    model: HomlabRateModel,
    r0: f64,
    slope: *mut f64,
    intercept: *mut f64,
    r_squared: *mut f64,
) -> HomlabStatus {
    guard(|| {
        if xs.is_null() || ys.is_null() {
            return Err(null("xs/ys"));
        }
        let model = match model {
            HomlabRateModel::Power => RateModel::Power,
            HomlabRateModel::PowerLog => RateModel::PowerLog { r0 },
            HomlabRateModel::PowerLogGauge => RateModel::PowerLogGauge { r0 },
        };
        let fit = fit_rate(
            std::slice::from_raw_parts(xs, len),
            std::slice::from_raw_parts(ys, len),
            model,
        )
        .map_err(lib_err)?;
        *out_arg(slope, "slope")? = fit.slope;
        *out_arg(intercept, "intercept")? = fit.intercept;
        *out_arg(r_squared, "r_squared")? = fit.r_squared;
        Ok(())
    })
}

/// Runs an experiment from a JSON configuration; `out_dir` (nullable)
/// overrides the configured output directory. Results land in
/// `<out_dir>/result.json` next to the CSV tables.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out_dir` null or one.
#[no_mangle]
pub unsafe extern "C" fn homlab_run_experiment(config_json: *const c_char, out_dir: *const c_char) -> HomlabStatus {
    guard(|| {
        let mut cfg = ExperimentConfig::from_json(str_arg(config_json, "config_json")?).map_err(lib_err)?;
        if !out_dir.is_null() {
            cfg.outputs = PathBuf::from(str_arg(out_dir, "out_dir")?);
        }
        run(&cfg).map_err(lib_err)?;
        Ok(())
    })
}
