//! C ABI for the mementomap library.
//!
//! Every fallible function returns an [`MmStatus`]. On failure a message is
//! kept per thread and can be copied out with [`mm_last_error_message`].
//! Strings passed in must be NUL-terminated UTF-8. Strings passed out are
//! written into caller buffers; when a buffer is too small the call returns
//! `MM_STATUS_BUFFER_TOO_SMALL` and reports the required length.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mementomap::analytics::{map_depth_stats, redq};
use mementomap::compactor::{compact, CompactionParams, CutoffTable, MeanChildModel};
use mementomap::lookup::{Disposition, MapFile};
use mementomap::surt::{hxpx_key, surtify};
use mementomap::ukvs::{open_input, Count, Modifier};
use mementomap::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmStatus {
    Ok = 0,
    InvalidArgument = 1,
    BufferTooSmall = 2,
    MalformedUri = 3,
    MalformedData = 4,
    UnsortedInput = 5,
    NotSeekable = 6,
    Domain = 7,
    InsufficientStats = 8,
    Io = 9,
    Internal = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmDisposition {
    Present = 0,
    AbsentExplicit = 1,
    AbsentNoMatch = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmModifier {
    Exact = 0,
    AtLeast = 1,
    AtMost = 2,
    Approx = 3,
}

/// Outcome of one lookup. Count fields are zero when nothing matched.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MmLookupResult {
    pub disposition: MmDisposition,
    pub urim: u64,
    pub urim_modifier: MmModifier,
    pub has_urir: bool,
    pub urir: u64,
    pub urir_modifier: MmModifier,
    pub probes: u64,
    /// Length of the matched key in bytes, excluding the NUL.
    pub key_len: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MmCompactReport {
    pub lines_in: u64,
    pub lines_out: u64,
    pub rollups: u64,
    pub bytes_out: u64,
    pub peak_trail: usize,
    pub wall_seconds: f64,
}

/// An open map file. Not safe to share between threads without locking.
pub struct MmMap {
    inner: MapFile<File>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> MmStatus {
    match e {
        Error::MalformedUri { .. } => MmStatus::MalformedUri,
        Error::MalformedFrequency(_) | Error::MalformedLine { .. } | Error::MalformedCdxj(_) | Error::InvalidDocument(_) => {
            MmStatus::MalformedData
        }
        Error::UnsortedInput { .. } => MmStatus::UnsortedInput,
        Error::SinkNotSeekable | Error::GzipNotSeekable(_) => MmStatus::NotSeekable,
        Error::DomainError(_) | Error::DegenerateFit(_) | Error::EmptyInput | Error::EmptyLog => MmStatus::Domain,
        Error::InsufficientStats { .. } => MmStatus::InsufficientStats,
        Error::Io(_) => MmStatus::Io,
        Error::Config(_) => MmStatus::InvalidArgument,
        _ => MmStatus::Internal,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<MmStatus, (MmStatus, String)>) -> MmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(s)) => s,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic");
            MmStatus::Internal
        }
    }
}

fn lib_err(e: Error) -> (MmStatus, String) {
    (status_of(&e), e.to_string())
}

fn invalid(msg: &str) -> (MmStatus, String) {
    (MmStatus::InvalidArgument, msg.to_owned())
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (MmStatus, String)> {
    if p.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not valid UTF-8")))
}

/// Copies `s` plus a NUL into `buf`, storing the length without NUL in `needed`.
unsafe fn write_str(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<MmStatus, (MmStatus, String)> {
    if !needed.is_null() {
        *needed = s.len();
    }
    if buf.is_null() || len < s.len() + 1 {
        return Err((MmStatus::BufferTooSmall, format!("buffer needs {} bytes", s.len() + 1)));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(MmStatus::Ok)
}

fn modifier(m: Modifier) -> MmModifier {
    match m {
        Modifier::Exact => MmModifier::Exact,
        Modifier::AtLeast => MmModifier::AtLeast,
        Modifier::AtMost => MmModifier::AtMost,
        Modifier::Approx => MmModifier::Approx,
    }
}

/// Copies the calling thread's last error message into `buf` and returns
/// its length excluding the NUL. Pass a null buffer to query the length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens an uncompressed map for lookups.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mm_map_open(path: *const c_char, out: *mut *mut MmMap) -> MmStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let path = str_arg(path, "path")?;
        let inner = MapFile::open(path).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(MmMap { inner }));
        Ok(MmStatus::Ok)
    })
}

/// Releases a map. Null is ignored.
///
/// # Safety
/// `map` must come from [`mm_map_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mm_map_close(map: *mut MmMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Size of the map file in bytes.
///
/// # Safety
/// `map` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mm_map_len(map: *const MmMap) -> u64 {
    map.as_ref().map_or(0, |m| m.inner.len())
}

/// Looks `uri` up. A miss is still `MM_STATUS_OK`; check `out->disposition`.
/// The matched key is copied into `key_buf` when one matched.
///
/// # Safety
/// `map` must be a live handle, `uri` a C string, `out` valid, and `key_buf`
/// null or valid for `key_buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mm_map_lookup(
    map: *mut MmMap,
    uri: *const c_char,
    out: *mut MmLookupResult,
    key_buf: *mut c_char,
    key_buf_len: usize,
) -> MmStatus {
    guard(|| {
        let map = map.as_mut().ok_or_else(|| invalid("map is null"))?;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        let uri = str_arg(uri, "uri")?;
        let before = map.inner.probes();
        let found = map.inner.lookup(uri).map_err(lib_err)?;
        let zero = Count::exact(0);
        let (disp, urim, urir, key) = match &found {
            Some(r) => {
                let d = match r.disposition() {
                    Disposition::Present => MmDisposition::Present,
                    _ => MmDisposition::AbsentExplicit,
                };
                (d, r.frequency.urim, r.frequency.urir, r.matched_key.as_str())
            }
            None => (MmDisposition::AbsentNoMatch, zero, None, ""),
        };
        *out = MmLookupResult {
            disposition: disp,
            urim: urim.value,
            urim_modifier: modifier(urim.modifier),
            has_urir: urir.is_some(),
            urir: urir.map_or(0, |c| c.value),
            urir_modifier: modifier(urir.unwrap_or(zero).modifier),
            probes: map.inner.probes() - before,
            key_len: key.len(),
        };
        if found.is_some() && !key_buf.is_null() {
            write_str(key, key_buf, key_buf_len, ptr::null_mut())?;
        }
        Ok(MmStatus::Ok)
    })
}

/// Writes the SURT form of `uri`.
///
/// # Safety
/// `uri` must be a C string; `buf` null or valid for `len` bytes; `needed`
/// null or valid.
#[no_mangle]
pub unsafe extern "C" fn mm_surtify(uri: *const c_char, buf: *mut c_char, len: usize, needed: *mut usize) -> MmStatus {
    guard(|| {
        let key = surtify(str_arg(uri, "uri")?).map_err(lib_err)?;
        write_str(key.as_str(), buf, len, needed)
    })
}

/// Writes the HxPx lookup key of `uri`.
///
/// # Safety
/// Same contract as [`mm_surtify`].
#[no_mangle]
pub unsafe extern "C" fn mm_hxpx_key(uri: *const c_char, buf: *mut c_char, len: usize, needed: *mut usize) -> MmStatus {
    guard(|| {
        let key = hxpx_key(str_arg(uri, "uri")?).map_err(lib_err)?;
        write_str(key.key.as_str(), buf, len, needed)
    })
}

/// Reduction coefficient of a depth row.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mm_redq(count: u64, sum: u64, total: u64, out: *mut f64) -> MmStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = redq(count, sum, total).map_err(lib_err)?;
        Ok(MmStatus::Ok)
    })
}

/// Compacts the map at `input` into `output`. With a non-null
/// `cutoffs_json` that table is used; otherwise cutoffs are fitted on the
/// input's depth statistics and scaled by `wh` and `wp`.
///
/// # Safety
/// `input` and `output` must be C strings; `cutoffs_json` null or a C
/// string; `report` null or valid.
#[no_mangle]
pub unsafe extern "C" fn mm_compact_file(
    input: *const c_char,
    output: *const c_char,
    wh: f64,
    wp: f64,
    cutoffs_json: *const c_char,
    report: *mut MmCompactReport,
) -> MmStatus {
    guard(|| {
        let input = str_arg(input, "input")?;
        let output = str_arg(output, "output")?;
        let params = if cutoffs_json.is_null() {
            if !(wh >= 0.0 && wp >= 0.0) {
                return Err(invalid("weights must be non-negative"));
            }
            let rows = map_depth_stats(open_input(input).map_err(|e| lib_err(e.into()))?).map_err(lib_err)?;
            MeanChildModel::fit(&rows).map_err(lib_err)?.params(wh, wp)
        } else {
            let table = CutoffTable::from_json(str_arg(cutoffs_json, "cutoffs_json")?).map_err(lib_err)?;
            CompactionParams::from_table(&table)
        };
        let sink = File::options()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(output)
            .map_err(|e| lib_err(e.into()))?;
        let file = File::open(input).map_err(|e| lib_err(e.into()))?;
        let r = compact(BufReader::new(file), BufWriter::new(sink), &params).map_err(lib_err)?;
        if let Some(out) = report.as_mut() {
            *out = MmCompactReport {
                lines_in: r.lines_in,
                lines_out: r.lines_out,
                rollups: r.rollups,
                bytes_out: r.bytes_out,
                peak_trail: r.peak_trail,
                wall_seconds: r.wall_seconds,
            };
        }
        Ok(MmStatus::Ok)
    })
}
