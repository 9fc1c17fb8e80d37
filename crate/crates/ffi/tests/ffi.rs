use std::collections::HashSet;
use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ugrec::checkpoint::Checkpoint;
use ugrec::dataset;
use ugrec::eval::{evaluate, rank_items, SparsityGroups};
use ugrec::model::{init_params, triplet_distance};
use ugrec::synth::{generate_synthetic_graph, SynthConfig, SYNTH_CATALOG};
use ugrec::{ModelConfig, RelationId};
use ugrec_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    ckpt: PathBuf,
}

fn fixture(seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let g = generate_synthetic_graph(&SynthConfig {
        n_users: 30,
        n_items: 20,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
    .graph;
    let raw = dir.path().join("raw.tsv");
    let mut buf = Vec::new();
    g.write_triplets(&mut buf).unwrap();
    std::fs::write(&raw, buf).unwrap();
    std::fs::write(dir.path().join("catalog.tsv"), SYNTH_CATALOG).unwrap();
    let p = dataset::prepare(&raw, dir.path().join("catalog.tsv"), 4).unwrap();
    let data = dir.path().join("prepared");
    dataset::write_split(&p.split, &p.stats, &data).unwrap();
    let split = dataset::load_split(&data).unwrap();
    let t = &split.train;
    let cfg = ModelConfig { k: 6, ..ModelConfig::default() };
    let ck = Checkpoint {
        params: init_params(t.num_entities(), t.catalog(), &cfg, 11).unwrap(),
        catalog_hash: t.catalog().hash(),
        vocab_hash: t.vocab().hash(t.catalog()),
    };
    let ckpt = dir.path().join("model.ckpt");
    ck.save(&ckpt).unwrap();
    Fixture { _dir: dir, data, ckpt }
}

fn c(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = ugrec_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn open(f: &Fixture) -> (*mut UgrecModel, *mut UgrecDataset) {
    let mut m = ptr::null_mut();
    let mut d = ptr::null_mut();
    assert_eq!(ugrec_model_load(c(&f.ckpt).as_ptr(), &mut m), UgrecStatus::Ok);
    assert_eq!(ugrec_dataset_open(c(&f.data).as_ptr(), &mut d), UgrecStatus::Ok);
    (m, d)
}

#[test]
fn handles_report_shapes_and_scores_match_library() {
    let f = fixture(1);
    let split = dataset::load_split(&f.data).unwrap();
    let ck = Checkpoint::load(&f.ckpt).unwrap();
    unsafe {
        let (m, d) = open(&f);
        assert_eq!(ugrec_model_dim(m), 6);
        assert_eq!(ugrec_model_entity_count(m), split.train.num_entities());
        assert_eq!(ugrec_dataset_entity_count(d), split.train.num_entities());
        assert_eq!(ugrec_model_relation_count(m), 4);

        for t in split.train.all_triplets().take(50) {
            let mut out = f64::NAN;
            let s = ugrec_model_distance(m, t.head.0, t.tail.0, t.relation.0, &mut out);
            assert_eq!(s, UgrecStatus::Ok);
            let want = triplet_distance(&ck.params, t.head, t.tail, t.relation).unwrap();
            assert_eq!(out.to_bits(), want.to_bits());
        }

        let user = split.train.users()[0];
        let name = CString::new(split.train.vocab().name(user)).unwrap();
        let mut id = u32::MAX;
        assert_eq!(ugrec_dataset_lookup(d, UgrecEntityKind::User, name.as_ptr(), &mut id), UgrecStatus::Ok);
        assert_eq!(id, user.0);
        let back = CStr::from_ptr(ugrec_dataset_entity_name(d, id));
        assert_eq!(back.to_bytes(), name.as_bytes());
        assert!(ugrec_dataset_entity_name(d, u32::MAX).is_null());

        let mut items = [0u32; 5];
        let mut dist = [0f64; 5];
        let mut n = 0usize;
        let s = ugrec_recommend(m, d, id, 5, items.as_mut_ptr(), dist.as_mut_ptr(), &mut n);
        assert_eq!(s, UgrecStatus::Ok);
        let exclude: HashSet<_> = split.train_items(user).collect();
        let want = rank_items(&ck.params, &split.train, user, &exclude).unwrap();
        assert_eq!(n, 5.min(want.len()));
        for i in 0..n {
            assert_eq!(items[i], want[i].item.0);
            assert_eq!(dist[i], want[i].distance);
        }
        assert!(dist[..n].windows(2).all(|w| w[0] <= w[1]));

        let (mut hr, mut ndcg) = (0.0, 0.0);
        assert_eq!(ugrec_evaluate(m, d, 10, &mut hr, &mut ndcg), UgrecStatus::Ok);
        let r = evaluate(&split, &ck.params, 10, &SparsityGroups::default()).unwrap();
        assert_eq!((hr, ndcg), (r.hr, r.ndcg));

        ugrec_model_free(m);
        ugrec_dataset_free(d);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let f = fixture(2);
    unsafe {
        let (m, d) = open(&f);
        let mut out = 0.0;
        assert_eq!(ugrec_model_distance(ptr::null(), 0, 1, 0, &mut out), UgrecStatus::NullPointer);
        assert_eq!(ugrec_model_distance(m, 0, 1, 0, ptr::null_mut()), UgrecStatus::NullPointer);
        assert_eq!(ugrec_model_distance(m, u32::MAX, 1, 0, &mut out), UgrecStatus::InvalidArgument);

        let mut h = ptr::null_mut();
        let missing = c(&f.data.join("nope.ckpt"));
        assert_eq!(ugrec_model_load(missing.as_ptr(), &mut h), UgrecStatus::Io);
        assert!(last_error().contains("nope.ckpt"));
        assert!(h.is_null());
        assert_eq!(ugrec_model_load(c(&f.data.join("train.tsv")).as_ptr(), &mut h), UgrecStatus::Checkpoint);

        let ghost = CString::new("ghost").unwrap();
        let mut id = 0;
        assert_eq!(ugrec_dataset_lookup(d, UgrecEntityKind::User, ghost.as_ptr(), &mut id), UgrecStatus::NotFound);
        let mut n = 0;
        assert_eq!(ugrec_recommend(m, d, u32::MAX, 0, ptr::null_mut(), ptr::null_mut(), &mut n), UgrecStatus::NotFound);
        let (mut hr, mut nd) = (0.0, 0.0);
        assert_eq!(ugrec_evaluate(m, d, 0, &mut hr, &mut nd), UgrecStatus::InvalidArgument);

        let other = fixture(3);
        let mut d2 = ptr::null_mut();
        assert_eq!(ugrec_dataset_open(c(&other.data).as_ptr(), &mut d2), UgrecStatus::Ok);
        assert_eq!(ugrec_evaluate(m, d2, 10, &mut hr, &mut nd), UgrecStatus::Mismatch);
        assert!(last_error().contains("hash"));

        ugrec_dataset_free(d2);
        ugrec_model_free(m);
        ugrec_dataset_free(d);
        ugrec_model_free(ptr::null_mut());
        ugrec_dataset_free(ptr::null_mut());
        assert_eq!(ugrec_model_dim(ptr::null()), 0);
    }
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(ugrec_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn undirected_distance_is_symmetric_through_the_abi() {
    let f = fixture(4);
    let split = dataset::load_split(&f.data).unwrap();
    let co = split.train.catalog().by_name("co_view").unwrap().id;
    assert_eq!(co, RelationId(3));
    unsafe {
        let (m, d) = open(&f);
        for t in split.train.triplets(co) {
            let (mut a, mut b) = (0.0, 0.0);
            ugrec_model_distance(m, t.head.0, t.tail.0, co.0, &mut a);
            ugrec_model_distance(m, t.tail.0, t.head.0, co.0, &mut b);
            assert_eq!(a.to_bits(), b.to_bits());
        }
        ugrec_model_free(m);
        ugrec_dataset_free(d);
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ugrec.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for sym in [
        "ugrec_version",
        "ugrec_last_error_message",
        "ugrec_model_load",
        "ugrec_model_free",
        "ugrec_model_dim",
        "ugrec_model_entity_count",
        "ugrec_model_relation_count",
        "ugrec_model_distance",
        "ugrec_dataset_open",
        "ugrec_dataset_free",
        "ugrec_dataset_entity_count",
        "ugrec_dataset_lookup",
        "ugrec_dataset_entity_name",
        "ugrec_recommend",
        "ugrec_evaluate",
        "typedef struct UgrecModel UgrecModel;",
        "UGREC_STATUS_MISMATCH = 5",
    ] {
        assert!(h.contains(sym), "missing {sym}");
    }
}

/// Compiles and runs a small C client against the static library.
#[test]
fn c_client_links_and_runs() {
    let target = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target.join("libugrec_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let f = fixture(5);
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "ugrec.h"
int main(int argc, char **argv) {
    UgrecModel *m = NULL;
    UgrecDataset *d = NULL;
    if (ugrec_model_load(argv[1], &m) != UGREC_STATUS_OK) return 10;
    if (ugrec_dataset_open(argv[2], &d) != UGREC_STATUS_OK) return 11;
    uint32_t user = 0;
    if (ugrec_dataset_lookup(d, UGREC_ENTITY_KIND_USER, "u0", &user) != UGREC_STATUS_OK) return 12;
    uint32_t items[3];
    double dist[3];
    size_t n = 0;
    if (ugrec_recommend(m, d, user, 3, items, dist, &n) != UGREC_STATUS_OK) return 13;
    for (size_t i = 0; i < n; i++) printf("%s %.6f\n", ugrec_dataset_entity_name(d, items[i]), dist[i]);
    UgrecModel *bad = NULL;
    if (ugrec_model_load("/nonexistent", &bad) != UGREC_STATUS_IO) return 14;
    if (ugrec_last_error_message() == NULL) return 15;
    ugrec_dataset_free(d);
    ugrec_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("client");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C client failed to compile");
    let out = Command::new(&exe).arg(&f.ckpt).arg(&f.data).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3, "{text}");
}
