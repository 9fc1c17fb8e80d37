//! C ABI over the `ugrec` library.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `_free` function. Every fallible call returns a
//! [`UgrecStatus`]; on failure a message is available from
//! [`ugrec_last_error_message`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::collections::HashSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ugrec::checkpoint::Checkpoint;
use ugrec::dataset;
use ugrec::eval::{evaluate, rank_items, SparsityGroups};
use ugrec::graph::Namespace;
use ugrec::model::triplet_distance;
use ugrec::{DataSplit, EntityId, EntityKind, Error, RelationId};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UgrecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// Checkpoint and dataset were built from different catalogs or vocabularies.
    Mismatch = 5,
    /// Non-finite value or degenerate hyperplane normal.
    Numerical = 6,
    NotFound = 7,
    Checkpoint = 8,
    Data = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UgrecEntityKind {
    User = 0,
    Item = 1,
}

pub struct UgrecModel {
    checkpoint: Checkpoint,
}

pub struct UgrecDataset {
    split: DataSplit,
    names: Vec<CString>,
    catalog_hash: [u8; 32],
    vocab_hash: [u8; 32],
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> UgrecStatus {
    match e {
        Error::File { source, .. } => status_of(source),
        Error::Io(_) => UgrecStatus::Io,
        Error::Parse { .. } | Error::UnknownRelation { .. } | Error::UnknownEntity { .. } | Error::SelfLoop { .. } => {
            UgrecStatus::Parse
        }
        Error::Mismatch(_) => UgrecStatus::Mismatch,
        Error::NonFinite(_) | Error::DegenerateNormal { .. } => UgrecStatus::Numerical,
        Error::Checkpoint(_) => UgrecStatus::Checkpoint,
        Error::Contract(_) | Error::Config(_) => UgrecStatus::InvalidArgument,
        _ => UgrecStatus::Data,
    }
}

struct Fail(UgrecStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> UgrecStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UgrecStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            UgrecStatus::Panic
        }
    }
}

fn null() -> Fail {
    Fail(UgrecStatus::NullPointer, "null pointer argument".into())
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(UgrecStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn obj<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

fn bound(model: &UgrecModel, data: &UgrecDataset) -> Result<(), Fail> {
    Ok(model.checkpoint.check_binding(&data.catalog_hash, &data.vocab_hash)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ugrec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failing call on this thread, or NULL if none.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ugrec_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugrec_model_load(path: *const c_char, out: *mut *mut UgrecModel) -> UgrecStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let checkpoint = Checkpoint::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(UgrecModel { checkpoint }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ugrec_model_load`] and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ugrec_model_free(model: *mut UgrecModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Embedding dimension, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ugrec_model_dim(model: *const UgrecModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.params.k())
}

/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ugrec_model_entity_count(model: *const UgrecModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.params.n_entities)
}

/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ugrec_model_relation_count(model: *const UgrecModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.params.n_relations())
}

/// Distance of `(head, tail, relation)` under the model's configured scorer.
/// Directed relations use translation; undirected ones the hyperplane (or the
/// scorer chosen at training time).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugrec_model_distance(
    model: *const UgrecModel,
    head: u32,
    tail: u32,
    relation: u32,
    out: *mut f64,
) -> UgrecStatus {
    guard(|| {
        let m = obj(model)?;
        if out.is_null() {
            return Err(null());
        }
        *out = triplet_distance(&m.checkpoint.params, EntityId(head), EntityId(tail), RelationId(relation))?;
        Ok(())
    })
}

/// Opens a prepared dataset directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugrec_dataset_open(dir: *const c_char, out: *mut *mut UgrecDataset) -> UgrecStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let split = dataset::load_split(path_arg(dir)?)?;
        let g = &split.train;
        let names = g
            .vocab()
            .iter()
            .map(|(_, e)| CString::new(e.name.as_str()).expect("names have no NUL"))
            .collect();
        let catalog_hash = g.catalog().hash();
        let vocab_hash = g.vocab().hash(g.catalog());
        *out = Box::into_raw(Box::new(UgrecDataset {
            split,
            names,
            catalog_hash,
            vocab_hash,
        }));
        Ok(())
    })
}

/// # Safety
/// `data` must come from [`ugrec_dataset_open`] and not be used afterwards. NULL is a no-op.
#[no_mangle]
pub unsafe extern "C" fn ugrec_dataset_free(data: *mut UgrecDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ugrec_dataset_entity_count(data: *const UgrecDataset) -> usize {
    data.as_ref().map_or(0, |d| d.names.len())
}

/// Index of a user or item by name.
///
/// # Safety
/// `data` must be a live handle, `name` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ugrec_dataset_lookup(
    data: *const UgrecDataset,
    kind: UgrecEntityKind,
    name: *const c_char,
    out: *mut u32,
) -> UgrecStatus {
    guard(|| {
        let d = obj(data)?;
        if name.is_null() || out.is_null() {
            return Err(null());
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| Fail(UgrecStatus::InvalidArgument, "name is not UTF-8".into()))?;
        let g = &d.split.train;
        let kind = match kind {
            UgrecEntityKind::User => EntityKind::User,
            UgrecEntityKind::Item => EntityKind::Item,
        };
        let id = g
            .vocab()
            .lookup(name, Namespace::for_side(kind, g.catalog().interaction()))
            .ok_or_else(|| Fail(UgrecStatus::NotFound, format!("no {kind} named `{name}`")))?;
        *out = id.0;
        Ok(())
    })
}

/// Name of an entity, owned by the dataset handle; NULL when out of range.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ugrec_dataset_entity_name(data: *const UgrecDataset, id: u32) -> *const c_char {
    data.as_ref()
        .and_then(|d| d.names.get(id as usize))
        .map_or(std::ptr::null(), |s| s.as_ptr())
}

/// Writes up to `capacity` recommendations for `user`, closest first,
/// skipping the user's training items. `*written` receives the count.
///
/// # Safety
/// Handles must be live; `items` and `distances` must hold `capacity`
/// elements (either may be NULL when `capacity` is 0); `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugrec_recommend(
    model: *const UgrecModel,
    data: *const UgrecDataset,
    user: u32,
    capacity: usize,
    items: *mut u32,
    distances: *mut f64,
    written: *mut usize,
) -> UgrecStatus {
    guard(|| {
        let (m, d) = (obj(model)?, obj(data)?);
        if written.is_null() || (capacity > 0 && (items.is_null() || distances.is_null())) {
            return Err(null());
        }
        bound(m, d)?;
        let g = &d.split.train;
        let user = EntityId(user);
        if user.index() >= g.num_entities() || g.vocab().kind(user) != EntityKind::User {
            return Err(Fail(UgrecStatus::NotFound, format!("entity {} is not a user", user.0)));
        }
        let exclude: HashSet<_> = d.split.train_items(user).collect();
        let ranked = rank_items(&m.checkpoint.params, g, user, &exclude)?;
        let n = ranked.len().min(capacity);
        for (i, r) in ranked.iter().take(n).enumerate() {
            *items.add(i) = r.item.0;
            *distances.add(i) = r.distance;
        }
        *written = n;
        Ok(())
    })
}

/// Test-split HR@k and NDCG@k.
///
/// # Safety
/// Handles must be live; `hr` and `ndcg` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ugrec_evaluate(
    model: *const UgrecModel,
    data: *const UgrecDataset,
    k: usize,
    hr: *mut f64,
    ndcg: *mut f64,
) -> UgrecStatus {
    guard(|| {
        let (m, d) = (obj(model)?, obj(data)?);
        if hr.is_null() || ndcg.is_null() {
            return Err(null());
        }
        if k == 0 {
            return Err(Fail(UgrecStatus::InvalidArgument, "k must be >= 1".into()));
        }
        bound(m, d)?;
        let report = evaluate(&d.split, &m.checkpoint.params, k, &SparsityGroups::default())?;
        *hr = report.hr;
        *ndcg = report.ndcg;
        Ok(())
    })
}
