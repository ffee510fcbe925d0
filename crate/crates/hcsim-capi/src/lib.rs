//! C ABI for the hcsim analysis core.
//!
//! Conventions:
//!
//! - Handles (`HcsimQuery`, `HcsimSharePlan`) are opaque; create them
//!   with the `_parse`/`_solve` constructors and release them with the
//!   matching `_free`. Passing a handle to the wrong `_free`, freeing
//!   twice, or using it after free is undefined behavior, as in any C
//!   library.
//! - Every fallible function returns an [`HcsimStatus`]; outputs are
//!   written through out-pointers only on `Ok`. The message behind the
//!   most recent failure on the current thread is available via
//!   [`hcsim_last_error`].
//! - Strings returned through `char **` out-pointers are NUL-terminated,
//!   UTF-8, owned by the caller, and must be released with
//!   [`hcsim_string_free`].
//! - No function panics across the boundary; internal panics are caught
//!   and reported as `HCSIM_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hcsim::harness::{run_experiment, Algorithm, ExperimentConfig, RelationSource};
use hcsim::query::Query;
use hcsim::ratio::rat_to_f64;
use hcsim::shares::{closed_form_load, solve_share_lp, space_exponent, ShareAssignment};
use hcsim::Error;

/// Status code of every fallible call. `HCSIM_STATUS_OK` is zero; any
/// other value leaves out-parameters untouched and stores a message
/// retrievable with `hcsim_last_error`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HcsimStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidQuery = 4,
    InvalidWeighting = 5,
    ArityMismatch = 6,
    UnknownRelation = 7,
    DomainViolation = 8,
    EnumerationTooLarge = 9,
    LpInfeasible = 10,
    LpUnbounded = 11,
    InvalidArgument = 12,
    CannotReachDistinct = 13,
    OracleGuardExceeded = 14,
    ProcessedSetOverflow = 15,
    AlgorithmShape = 16,
    ReplicationNotApplicable = 17,
    Io = 18,
    Json = 19,
    /// An internal invariant failed; the library caught a panic.
    Internal = 20,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn store_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn fail(status: HcsimStatus, message: &str) -> HcsimStatus {
    store_error(message);
    status
}

fn fail_with(err: &Error) -> HcsimStatus {
    let status = match err {
        Error::Parse { .. } => HcsimStatus::Parse,
        Error::InvalidQuery(_) => HcsimStatus::InvalidQuery,
        Error::InvalidWeighting(_) => HcsimStatus::InvalidWeighting,
        Error::ArityMismatch { .. } => HcsimStatus::ArityMismatch,
        Error::UnknownRelation(_) => HcsimStatus::UnknownRelation,
        Error::DomainViolation { .. } => HcsimStatus::DomainViolation,
        Error::EnumerationTooLarge { .. } => HcsimStatus::EnumerationTooLarge,
        Error::LpInfeasible => HcsimStatus::LpInfeasible,
        Error::LpUnbounded => HcsimStatus::LpUnbounded,
        Error::InvalidArgument(_) => HcsimStatus::InvalidArgument,
        Error::CannotReachDistinct { .. } => HcsimStatus::CannotReachDistinct,
        Error::OracleGuardExceeded { .. } => HcsimStatus::OracleGuardExceeded,
        Error::ProcessedSetOverflow { .. } => HcsimStatus::ProcessedSetOverflow,
        Error::AlgorithmShape { .. } => HcsimStatus::AlgorithmShape,
        Error::ReplicationNotApplicable { .. } => HcsimStatus::ReplicationNotApplicable,
        Error::Io { .. } => HcsimStatus::Io,
        Error::Json(_) => HcsimStatus::Json,
    };
    fail(status, &err.to_string())
}

/// Runs `body` with panics converted to `HCSIM_STATUS_INTERNAL`.
fn guarded(body: impl FnOnce() -> HcsimStatus) -> HcsimStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(HcsimStatus::Internal, &format!("internal panic: {msg}"))
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, HcsimStatus> {
    if ptr.is_null() {
        return Err(fail(HcsimStatus::NullPointer, "string argument is NULL"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(HcsimStatus::InvalidUtf8, "string argument is not UTF-8"))
}

unsafe fn read_f64_slice<'a>(ptr: *const f64, len: usize) -> Result<&'a [f64], HcsimStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(HcsimStatus::NullPointer, "array argument is NULL"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn write_string(out: *mut *mut c_char, value: String) -> HcsimStatus {
    match CString::new(value) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            HcsimStatus::Ok
        }
        Err(_) => fail(
            HcsimStatus::Internal,
            "produced string contains an interior NUL",
        ),
    }
}

/// A parsed conjunctive query. Opaque.
pub struct HcsimQuery {
    inner: Query,
}

/// A solved share plan for one (query, sizes, p) triple. Opaque.
pub struct HcsimSharePlan {
    query: Query,
    plan: ShareAssignment,
}

/// ABI revision of this header. Bump on any breaking change.
#[no_mangle]
pub extern "C" fn hcsim_abi_version() -> u32 {
    1
}

/// Message of the most recent failure on this thread. The pointer stays
/// valid until the next failing hcsim call on the same thread. Never
/// NULL; empty if nothing failed yet.
#[no_mangle]
pub extern "C" fn hcsim_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned by any hcsim function. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn hcsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses `Q(x, y) :- S1(x), S2(x, y)` syntax into a query handle.
#[no_mangle]
pub unsafe extern "C" fn hcsim_query_parse(
    text: *const c_char,
    out: *mut *mut HcsimQuery,
) -> HcsimStatus {
    guarded(|| {
        if out.is_null() {
            return fail(HcsimStatus::NullPointer, "out pointer is NULL");
        }
        let text = match read_str(text) {
            Ok(t) => t,
            Err(status) => return status,
        };
        match hcsim::query::parse(text) {
            Ok(q) => {
                *out = Box::into_raw(Box::new(HcsimQuery { inner: q }));
                HcsimStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases a query handle. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn hcsim_query_free(q: *mut HcsimQuery) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Number of variables of the query; 0 if the handle is NULL.
#[no_mangle]
pub unsafe extern "C" fn hcsim_query_num_vars(q: *const HcsimQuery) -> usize {
    if q.is_null() {
        return 0;
    }
    (*q).inner.num_vars()
}

/// Number of atoms of the query; 0 if the handle is NULL.
#[no_mangle]
pub unsafe extern "C" fn hcsim_query_num_atoms(q: *const HcsimQuery) -> usize {
    if q.is_null() {
        return 0;
    }
    (*q).inner.num_atoms()
}

/// Canonical text of the query. Free the result with hcsim_string_free.
#[no_mangle]
pub unsafe extern "C" fn hcsim_query_render(
    q: *const HcsimQuery,
    out: *mut *mut c_char,
) -> HcsimStatus {
    guarded(|| {
        if q.is_null() || out.is_null() {
            return fail(HcsimStatus::NullPointer, "query or out pointer is NULL");
        }
        write_string(out, (*q).inner.to_string())
    })
}

/// Solves the share LP for relation sizes `sizes[0..len]` (one
/// per atom, in body order, any fixed unit) and `p` servers.
#[no_mangle]
pub unsafe extern "C" fn hcsim_share_plan_solve(
    q: *const HcsimQuery,
    sizes: *const f64,
    len: usize,
    p: u64,
    out: *mut *mut HcsimSharePlan,
) -> HcsimStatus {
    guarded(|| {
        if q.is_null() || out.is_null() {
            return fail(HcsimStatus::NullPointer, "query or out pointer is NULL");
        }
        let sizes = match read_f64_slice(sizes, len) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let query = &(*q).inner;
        match solve_share_lp(query, sizes, p) {
            Ok(plan) => {
                *out = Box::into_raw(Box::new(HcsimSharePlan {
                    query: query.clone(),
                    plan,
                }));
                HcsimStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases a share plan. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn hcsim_share_plan_free(plan: *mut HcsimSharePlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Guaranteed load p^lambda, in the unit the sizes were given in.
/// NaN if the handle is NULL.
#[no_mangle]
pub unsafe extern "C" fn hcsim_share_plan_load(plan: *const HcsimSharePlan) -> f64 {
    if plan.is_null() {
        return f64::NAN;
    }
    (*plan).plan.load_bits()
}

/// The LP optimum lambda = log_p of the load. NaN if NULL.
#[no_mangle]
pub unsafe extern "C" fn hcsim_share_plan_lambda(plan: *const HcsimSharePlan) -> f64 {
    if plan.is_null() {
        return f64::NAN;
    }
    rat_to_f64(&(*plan).plan.lambda)
}

/// Integer share of variable `var` (head order). 0 if out of range.
#[no_mangle]
pub unsafe extern "C" fn hcsim_share_plan_share(
    plan: *const HcsimSharePlan,
    var: usize,
) -> u64 {
    if plan.is_null() {
        return 0;
    }
    (&(*plan).plan.shares).get(var).copied().unwrap_or(0)
}

/// 1 if atom `atom` (body order) is marked for broadcast routing,
/// 0 otherwise or if out of range.
#[no_mangle]
pub unsafe extern "C" fn hcsim_share_plan_is_broadcast(
    plan: *const HcsimSharePlan,
    atom: usize,
) -> i32 {
    if plan.is_null() {
        return 0;
    }
    (&(*plan).plan.broadcast).get(atom).copied().unwrap_or(false) as i32
}

/// Share plan as JSON {variable: {exponent, share}}. Free with
/// hcsim_string_free.
#[no_mangle]
pub unsafe extern "C" fn hcsim_share_plan_to_json(
    plan: *const HcsimSharePlan,
    out: *mut *mut c_char,
) -> HcsimStatus {
    guarded(|| {
        if plan.is_null() || out.is_null() {
            return fail(HcsimStatus::NullPointer, "plan or out pointer is NULL");
        }
        let p = &*plan;
        let json = p.plan.to_json(&p.query);
        write_string(out, json.to_string())
    })
}

/// Closed-form optimal load from the packing polytope; agrees with
/// p^lambda of hcsim_share_plan_solve on the same inputs.
#[no_mangle]
pub unsafe extern "C" fn hcsim_closed_form_load(
    q: *const HcsimQuery,
    sizes: *const f64,
    len: usize,
    p: u64,
    out: *mut f64,
) -> HcsimStatus {
    guarded(|| {
        if q.is_null() || out.is_null() {
            return fail(HcsimStatus::NullPointer, "query or out pointer is NULL");
        }
        let sizes = match read_f64_slice(sizes, len) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match closed_form_load(&(*q).inner, sizes, p) {
            Ok((load, _witness)) => {
                *out = load;
                HcsimStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Space exponent for the given sizes and p; the optimal load is
/// max_j(sizes) / p^(1 - result).
#[no_mangle]
pub unsafe extern "C" fn hcsim_space_exponent(
    q: *const HcsimQuery,
    sizes: *const f64,
    len: usize,
    p: u64,
    out: *mut f64,
) -> HcsimStatus {
    guarded(|| {
        if q.is_null() || out.is_null() {
            return fail(HcsimStatus::NullPointer, "query or out pointer is NULL");
        }
        let sizes = match read_f64_slice(sizes, len) {
            Ok(s) => s,
            Err(status) => return status,
        };
        match space_exponent(&(*q).inner, sizes, p) {
            Ok((eps, _mask)) => {
                *out = eps;
                HcsimStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Maximum fractional edge-packing value tau* of the query.
#[no_mangle]
pub unsafe extern "C" fn hcsim_max_packing_value(
    q: *const HcsimQuery,
    out: *mut f64,
) -> HcsimStatus {
    guarded(|| {
        if q.is_null() || out.is_null() {
            return fail(HcsimStatus::NullPointer, "query or out pointer is NULL");
        }
        match hcsim::packing::max_packing_value(&(*q).inner) {
            Ok(tau) => {
                *out = rat_to_f64(&tau);
                HcsimStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Non-dominated packing-polytope vertices as a JSON array of arrays of
/// exact fraction strings. Free with hcsim_string_free.
#[no_mangle]
pub unsafe extern "C" fn hcsim_packing_vertices_json(
    q: *const HcsimQuery,
    out: *mut *mut c_char,
) -> HcsimStatus {
    guarded(|| {
        if q.is_null() || out.is_null() {
            return fail(HcsimStatus::NullPointer, "query or out pointer is NULL");
        }
        match hcsim::packing::enumerate_packing_vertices(&(*q).inner) {
            Ok(vs) => {
                let arr: Vec<serde_json::Value> = vs
                    .iter()
                    .map(|u| hcsim::packing::weighting_to_json(u))
                    .collect();
                write_string(out, serde_json::Value::Array(arr).to_string())
            }
            Err(e) => fail_with(&e),
        }
    })
}

fn config_from_json(text: &str) -> hcsim::Result<ExperimentConfig> {
    let v: serde_json::Value = serde_json::from_str(text)?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::InvalidArgument("experiment config must be a JSON object".into()))?;
    for key in obj.keys() {
        if !matches!(
            key.as_str(),
            "query" | "relations" | "n" | "p" | "seeds" | "algorithm" | "loads_only"
        ) {
            return Err(Error::InvalidArgument(format!(
                "unknown config key {key:?}"
            )));
        }
    }
    let query = obj
        .get("query")
        .and_then(|x| x.as_str())
        .ok_or_else(|| Error::InvalidArgument("config needs a string \"query\"".into()))?
        .to_string();
    let relations_obj = obj
        .get("relations")
        .and_then(|x| x.as_object())
        .ok_or_else(|| {
            Error::InvalidArgument("config needs \"relations\": {name: source} object".into())
        })?;
    let mut relations = Vec::with_capacity(relations_obj.len());
    for (name, spec) in relations_obj {
        let spec = spec.as_str().ok_or_else(|| {
            Error::InvalidArgument(format!("relation {name:?} source must be a string"))
        })?;
        relations.push((name.clone(), RelationSource::parse(spec)?));
    }
    let n = match obj.get("n") {
        None | Some(serde_json::Value::Null) => None,
        Some(x) => Some(x.as_u64().ok_or_else(|| {
            Error::InvalidArgument("\"n\" must be an unsigned integer".into())
        })?),
    };
    let p = obj
        .get("p")
        .and_then(|x| x.as_u64())
        .ok_or_else(|| Error::InvalidArgument("config needs an unsigned \"p\"".into()))?;
    let seeds = obj
        .get("seeds")
        .and_then(|x| x.as_array())
        .ok_or_else(|| Error::InvalidArgument("config needs a \"seeds\" array".into()))?
        .iter()
        .map(|x| {
            x.as_u64()
                .ok_or_else(|| Error::InvalidArgument("seeds must be unsigned integers".into()))
        })
        .collect::<hcsim::Result<Vec<u64>>>()?;
    let algorithm = match obj.get("algorithm") {
        None | Some(serde_json::Value::Null) => Algorithm::HcOptimal,
        Some(x) => Algorithm::parse(x.as_str().ok_or_else(|| {
            Error::InvalidArgument("\"algorithm\" must be a string".into())
        })?)?,
    };
    let loads_only = match obj.get("loads_only") {
        None | Some(serde_json::Value::Null) => false,
        Some(x) => x.as_bool().ok_or_else(|| {
            Error::InvalidArgument("\"loads_only\" must be a boolean".into())
        })?,
    };
    Ok(ExperimentConfig {
        query,
        relations,
        n,
        p,
        seeds,
        algorithm,
        loads_only,
    })
}

/// Runs a full seeded experiment described by a JSON config:
///
/// ```json
/// {
///   "query": "Q(x,y,z) :- S1(x,z), S2(y,z)",
///   "relations": {"S1": "gen:uniform,m=2000", "S2": "data/s2.tsv"},
///   "n": 10000,
///   "p": 16,
///   "seeds": [1, 2, 3],
///   "algorithm": "hc-optimal",
///   "loads_only": false
/// }
/// ```
///
/// `relations` maps every atom's relation name to a TSV path or a
/// `gen:uniform,m=..` / `gen:matching,m=..` / `gen:zipf,m=..,s=..`
/// generator spec; `n` is required when any source is a generator;
/// `algorithm` is one of hc-optimal, hc-equal, hash-join, skew-join,
/// bin-combination (default hc-optimal). The report JSON is written to
/// `out`; free it with hcsim_string_free.
#[no_mangle]
pub unsafe extern "C" fn hcsim_run_experiment_json(
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> HcsimStatus {
    guarded(|| {
        if out.is_null() {
            return fail(HcsimStatus::NullPointer, "out pointer is NULL");
        }
        let text = match read_str(config_json) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let cfg = match config_from_json(text) {
            Ok(c) => c,
            Err(e) => return fail_with(&e),
        };
        match run_experiment(&cfg) {
            Ok(report) => write_string(out, report.to_string()),
            Err(e) => fail_with(&e),
        }
    })
}
