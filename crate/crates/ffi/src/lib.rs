//! C interface to the recount library.
//!
//! Every fallible call returns an [`RcStatus`] and writes its result through an
//! out-pointer. On failure the message is kept per thread and can be read with
//! [`rc_last_error_message`]. Stores are opaque handles released with
//! [`rc_store_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use recount::decay::{fit_exponential, DecayModel};
use recount::scheduler::{self, ServiceParams};
use recount::similarity::{compute_pair, pearson_definitional, PairVectors};
use recount::store::{GraphStore, RatingEvent, SimilarityEdge, UserId, UserPair};
use recount::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    NotFound = 4,
    Parse = 5,
    Io = 6,
    InsufficientData = 7,
    Infeasible = 8,
    UndefinedInput = 9,
    Inconsistent = 10,
    Panic = 11,
}

impl From<&Error> for RcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => RcStatus::Domain,
            Error::NotFound(_) => RcStatus::NotFound,
            Error::Parse { .. } => RcStatus::Parse,
            Error::Io { .. } => RcStatus::Io,
            Error::InsufficientData(_) => RcStatus::InsufficientData,
            Error::Infeasible(_) => RcStatus::Infeasible,
            Error::UndefinedInput(_) => RcStatus::UndefinedInput,
            Error::Inconsistent(_) => RcStatus::Inconsistent,
            Error::InvalidArgument(_) => RcStatus::InvalidArgument,
        }
    }
}

/// Opaque rating and similarity store.
pub struct RcStore {
    inner: GraphStore,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RcDecayFit {
    pub n0: f64,
    pub lambda: f64,
    /// RMS residual on the count scale.
    pub residual_std: f64,
    /// RMS residual of `ln N`.
    pub log_residual_std: f64,
    pub points: usize,
    pub excluded: usize,
}

/// Quantities derived from a decay rate, evaluated at one time `t`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RcDecayQuantities {
    pub mean_lifetime: f64,
    pub half_life: f64,
    pub p_change: f64,
    pub q_stable: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RcServiceParams {
    pub t_fr: f64,
    pub t_ir: f64,
    pub p_b: f64,
    pub n_cr: f64,
    pub tau_visit: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RcSchedule {
    pub t_cr: f64,
    pub mean_service_time: f64,
    pub load_coefficient: f64,
}

/// Scheduling fields of a similarity edge. `has_recount_period` selects
/// between the personal period and `average_rp`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RcEdgeTiming {
    pub has_recount_period: bool,
    pub recount_period: f64,
    pub average_rp: f64,
    pub last_recount_time: i64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Fail(RcStatus);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_error(e.to_string());
        Fail(RcStatus::from(&e))
    }
}

fn fail<T>(status: RcStatus, msg: impl Into<String>) -> Result<T, Fail> {
    set_error(msg.into());
    Err(Fail(status))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RcStatus::Ok,
        Ok(Err(Fail(s))) => s,
        Err(_) => {
            set_error("internal panic".into());
            RcStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    match p.as_mut() {
        Some(r) => Ok(r),
        None => fail(RcStatus::NullPointer, "null output pointer"),
    }
}

unsafe fn store_ref<'a>(p: *const RcStore) -> Result<&'a GraphStore, Fail> {
    match p.as_ref() {
        Some(s) => Ok(&s.inner),
        None => fail(RcStatus::NullPointer, "null store handle"),
    }
}

unsafe fn store_mut<'a>(p: *mut RcStore) -> Result<&'a mut GraphStore, Fail> {
    match p.as_mut() {
        Some(s) => Ok(&mut s.inner),
        None => fail(RcStatus::NullPointer, "null store handle"),
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(RcStatus::NullPointer, "null array");
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(RcStatus::NullPointer, "null path");
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(s),
        Err(_) => fail(RcStatus::InvalidArgument, "path is not valid UTF-8"),
    }
}

fn pair(a: u64, b: u64) -> Result<UserPair, Fail> {
    Ok(UserPair::new(UserId(a), UserId(b))?)
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL, or 0
/// when the last call succeeded.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// A new empty store. Never null.
#[no_mangle]
pub extern "C" fn rc_store_new() -> *mut RcStore {
    Box::into_raw(Box::new(RcStore {
        inner: GraphStore::new(),
    }))
}

/// # Safety
/// `store` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rc_store_free(store: *mut RcStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// # Safety
/// `file` must be a NUL-terminated string; `out_store` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_store_load(file: *const c_char, out_store: *mut *mut RcStore) -> RcStatus {
    guard(|| {
        let slot = out(out_store)?;
        let inner = GraphStore::load(path(file)?)?;
        *slot = Box::into_raw(Box::new(RcStore { inner }));
        Ok(())
    })
}

/// # Safety
/// `store` must be a live handle; `file` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rc_store_save(store: *const RcStore, file: *const c_char) -> RcStatus {
    guard(|| Ok(store_ref(store)?.save(path(file)?)?))
}

/// Inserts a rating, replacing the user's earlier rating of the same item.
///
/// # Safety
/// `store` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rc_store_upsert_rating(
    store: *mut RcStore,
    user: u64,
    item: u64,
    rating: f64,
    timestamp: i64,
) -> RcStatus {
    guard(|| {
        let store = store_mut(store)?;
        store.upsert_rating(RatingEvent::new(user, item, rating, timestamp)?);
        Ok(())
    })
}

/// # Safety
/// `store` must be a live handle; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_store_counts(
    store: *const RcStore,
    out_users: *mut usize,
    out_ratings: *mut usize,
    out_edges: *mut usize,
) -> RcStatus {
    guard(|| {
        let s = store_ref(store)?;
        *out(out_users)? = s.num_users();
        *out(out_ratings)? = s.num_ratings();
        *out(out_edges)? = s.num_edges();
        Ok(())
    })
}

/// Pearson coefficient of two users over their latest co-ratings as of `asof`.
/// `out_defined` is false when fewer than `min_overlap` items are shared or a
/// user's co-ratings have no variance.
///
/// # Safety
/// `store` must be a live handle; the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_store_similarity(
    store: *const RcStore,
    user_a: u64,
    user_b: u64,
    asof: i64,
    min_overlap: usize,
    out_k: *mut f64,
    out_defined: *mut bool,
) -> RcStatus {
    guard(|| {
        let s = store_ref(store)?;
        let (k, defined) = (out(out_k)?, out(out_defined)?);
        let value = compute_pair(s, pair(user_a, user_b)?, asof, min_overlap)?;
        *defined = value.is_some();
        *k = value.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Stores or replaces the edge between two users. A NaN `recount_period`
/// means no personal period.
///
/// # Safety
/// `store` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rc_store_put_edge(
    store: *mut RcStore,
    user_a: u64,
    user_b: u64,
    coefficient: f64,
    recount_period: f64,
    average_rp: f64,
    last_recount_time: i64,
) -> RcStatus {
    guard(|| {
        let s = store_mut(store)?;
        let period = (!recount_period.is_nan()).then_some(recount_period);
        let edge = SimilarityEdge::new(pair(user_a, user_b)?, coefficient, period, average_rp, last_recount_time)?;
        s.put_edge(edge);
        Ok(())
    })
}

/// Whether the stored edge between two users is due for recomputation at `now`.
///
/// # Safety
/// `store` must be a live handle; `out_due` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_store_edge_due(
    store: *const RcStore,
    user_a: u64,
    user_b: u64,
    now: i64,
    out_due: *mut bool,
) -> RcStatus {
    guard(|| {
        let s = store_ref(store)?;
        let due = out(out_due)?;
        let p = pair(user_a, user_b)?;
        match s.get_edge(p) {
            Some(edge) => {
                *due = scheduler::needs_recompute(edge, now);
                Ok(())
            }
            None => fail(RcStatus::NotFound, format!("no edge for {p}")),
        }
    })
}

/// Pearson coefficient of two equally long rating vectors.
///
/// # Safety
/// `r1` and `r2` must each point to `len` readable doubles; the out-pointers
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_pearson(
    r1: *const f64,
    r2: *const f64,
    len: usize,
    min_overlap: usize,
    out_k: *mut f64,
    out_defined: *mut bool,
) -> RcStatus {
    guard(|| {
        let (k, defined) = (out(out_k)?, out(out_defined)?);
        let pv = PairVectors::from_values(slice(r1, len)?, slice(r2, len)?)?;
        let value = pearson_definitional(&pv, min_overlap);
        *defined = value.is_some();
        *k = value.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Least-squares fit of `N(t) = N0·exp(−λt)` on `ln N`. Points with `N <= 0`
/// are skipped.
///
/// # Safety
/// `t` and `n` must each point to `len` readable doubles; `out_fit` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rc_fit_exponential(
    t: *const f64,
    n: *const f64,
    len: usize,
    out_fit: *mut RcDecayFit,
) -> RcStatus {
    guard(|| {
        let fit_out = out(out_fit)?;
        let points: Vec<(f64, f64)> = slice(t, len)?.iter().copied().zip(slice(n, len)?.iter().copied()).collect();
        let m = fit_exponential(&points)?;
        *fit_out = RcDecayFit {
            n0: m.n0,
            lambda: m.lambda,
            residual_std: m.residual_std,
            log_residual_std: m.log_residual_std,
            points: m.points,
            excluded: m.excluded,
        };
        Ok(())
    })
}

/// # Safety
/// `out_q` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_decay_quantities(lambda: f64, t: f64, out_q: *mut RcDecayQuantities) -> RcStatus {
    guard(|| {
        let q = out(out_q)?;
        let m = DecayModel::with_lambda(lambda)?;
        *q = RcDecayQuantities {
            mean_lifetime: m.mean_lifetime(),
            half_life: m.half_life(),
            p_change: m.p_change(t),
            q_stable: m.q_stable(t),
        };
        Ok(())
    })
}

/// Time during which a coefficient stays unchanged with probability `p_st`.
///
/// # Safety
/// `out_t` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_stable_horizon(lambda: f64, p_st: f64, out_t: *mut f64) -> RcStatus {
    guard(|| {
        let t = out(out_t)?;
        *t = DecayModel::with_lambda(lambda)?.stable_horizon(p_st)?;
        Ok(())
    })
}

/// # Safety
/// `out_t` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_change_horizon(lambda: f64, q_st: f64, out_t: *mut f64) -> RcStatus {
    guard(|| {
        let t = out(out_t)?;
        *t = DecayModel::with_lambda(lambda)?.change_horizon(q_st)?;
        Ok(())
    })
}

/// Largest time at which the recommendation error stays within `n_cr`.
///
/// # Safety
/// `out_t_cr` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rc_critical_time(lambda: f64, p_b: f64, n_cr: f64, out_t_cr: *mut f64) -> RcStatus {
    guard(|| {
        let t = out(out_t_cr)?;
        *t = scheduler::critical_time(lambda, p_b, n_cr)?;
        Ok(())
    })
}

/// # Safety
/// `params` must be readable and `out_schedule` writable.
#[no_mangle]
pub unsafe extern "C" fn rc_optimize(
    params: *const RcServiceParams,
    lambda: f64,
    out_schedule: *mut RcSchedule,
) -> RcStatus {
    guard(|| {
        let Some(p) = params.as_ref() else {
            return fail(RcStatus::NullPointer, "null service parameters");
        };
        let sched = out(out_schedule)?;
        let params = ServiceParams::new(p.t_fr, p.t_ir, p.p_b, p.n_cr, p.tau_visit)?;
        let sol = scheduler::optimize(&params, lambda)?;
        *sched = RcSchedule {
            t_cr: sol.t_cr,
            mean_service_time: sol.mean_service_time,
            load_coefficient: sol.load_coefficient,
        };
        Ok(())
    })
}

/// # Safety
/// `edge` must be readable and `out_due` writable.
#[no_mangle]
pub unsafe extern "C" fn rc_needs_recompute(edge: *const RcEdgeTiming, now: i64, out_due: *mut bool) -> RcStatus {
    guard(|| {
        let Some(e) = edge.as_ref() else {
            return fail(RcStatus::NullPointer, "null edge");
        };
        let due = out(out_due)?;
        let period = if e.has_recount_period { e.recount_period } else { e.average_rp };
        if period.is_nan() || period < 0.0 {
            return fail(RcStatus::Domain, format!("period {period} must be non-negative"));
        }
        *due = scheduler::is_stale(e.last_recount_time, period, now);
        Ok(())
    })
}
