use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ppap_ffi::*;

fn two_clusters() -> (Vec<f64>, Vec<u32>) {
    let rows: [[f64; 2]; 6] = [[1.0, 0.0], [0.99, 0.1], [0.98, -0.15], [0.0, 1.0], [0.1, 0.99], [-0.12, 0.98]];
    (rows.concat(), vec![0, 0, 0, 1, 1, 1])
}

unsafe fn normalized_batch() -> *mut PpapBatch {
    let (data, labels) = two_clusters();
    let mut raw = ptr::null_mut();
    assert_eq!(ppap_batch_from_rows(data.as_ptr(), 6, 2, labels.as_ptr(), &mut raw), PpapStatus::Ok);
    let mut batch = ptr::null_mut();
    assert_eq!(ppap_batch_normalize(raw, &mut batch), PpapStatus::Ok);
    ppap_batch_free(raw);
    batch
}

fn last_error() -> String {
    let p = ppap_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn mine_and_inspect() {
    unsafe {
        let batch = normalized_batch();
        assert_eq!((ppap_batch_rows(batch), ppap_batch_dim(batch)), (6, 2));
        let config = ppap_config_default();
        let mut result = ptr::null_mut();
        assert_eq!(ppap_mine(batch, &config, &mut result), PpapStatus::Ok);
        assert!(ppap_last_error().is_null());
        assert_eq!(ppap_result_anchor_count(result), 6);
        assert_eq!(ppap_result_candidates(result), 6);

        let (mut data, mut len) = (ptr::null(), 0usize);
        assert_eq!(ppap_result_positives(result, 4, &mut data, &mut len), PpapStatus::Ok);
        assert_eq!(std::slice::from_raw_parts(data, len), &[3, 4, 5]);
        let mut anchor = 0u32;
        assert_eq!(ppap_result_anchor(result, 4, &mut anchor), PpapStatus::Ok);
        assert_eq!(anchor, 4);
        let (mut phi, mut psi) = (0.0, 0.0);
        assert_eq!(ppap_result_criteria(result, 0, &mut phi, &mut psi), PpapStatus::Ok);
        assert!(psi < phi && phi <= config.phi0);

        let mut trust = PpapTrust::default();
        assert_eq!(ppap_trust_report(result, batch, &mut trust), PpapStatus::Ok);
        assert_eq!(trust.anchors, 6);
        assert_eq!((trust.tp_in_p_ratio, trust.fp_in_n_ratio), (1.0, 0.0));

        assert_eq!(ppap_result_positives(result, 6, &mut data, &mut len), PpapStatus::OutOfRange);
        assert!(last_error().contains("outside"));

        ppap_result_free(result);
        ppap_batch_free(batch);
    }
}

#[test]
fn baselines_and_loss() {
    unsafe {
        let batch = normalized_batch();
        let mut knn = ptr::null_mut();
        assert_eq!(ppap_knn_mine(batch, 2, &mut knn), PpapStatus::Ok);
        let mut km = ptr::null_mut();
        assert_eq!(ppap_kmeans_mine(batch, 2, 7, &mut km), PpapStatus::Ok);
        let (mut phi, mut psi) = (0.0, 0.0);
        assert_eq!(ppap_result_criteria(knn, 0, &mut phi, &mut psi), PpapStatus::OutOfRange);

        let mut bad = ptr::null_mut();
        assert_eq!(ppap_knn_mine(batch, 0, &mut bad), PpapStatus::InvalidArgument);
        assert!(bad.is_null());

        let (data, _) = two_clusters();
        let mut z = data.clone();
        for row in z.chunks_exact_mut(2) {
            let n = (row[0] * row[0] + row[1] * row[1]).sqrt();
            row.iter_mut().for_each(|x| *x /= n);
        }
        let mut loss = f64::NAN;
        let mut grad = vec![0.0; 12];
        assert_eq!(
            ppap_contrastive_loss(z.as_ptr(), 6, 2, km, 0.5, &mut loss, grad.as_mut_ptr()),
            PpapStatus::Ok
        );
        assert!(loss.is_finite() && loss > 0.0);
        assert!(grad.iter().any(|&g| g != 0.0));
        assert_eq!(
            ppap_contrastive_loss(z.as_ptr(), 6, 2, km, 0.5, &mut loss, ptr::null_mut()),
            PpapStatus::Ok
        );
        assert_eq!(
            ppap_contrastive_loss(z.as_ptr(), 5, 2, km, 0.5, &mut loss, ptr::null_mut()),
            PpapStatus::DimensionMismatch
        );

        ppap_result_free(knn);
        ppap_result_free(km);
        ppap_batch_free(batch);
    }
}

#[test]
fn null_and_invalid_arguments() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(ppap_batch_load(ptr::null(), &mut out), PpapStatus::NullPointer);
        assert_eq!(ppap_mine(ptr::null(), ptr::null(), &mut out.cast()), PpapStatus::NullPointer);
        assert!(last_error().contains("NULL"));
        ppap_batch_free(ptr::null_mut());
        ppap_result_free(ptr::null_mut());
        assert_eq!(ppap_batch_rows(ptr::null()), 0);

        let missing = CString::new("/nonexistent/features.bin").unwrap();
        assert_eq!(ppap_batch_load(missing.as_ptr(), &mut out), PpapStatus::Io);

        let mut config = ppap_config_default();
        let name = CString::new("cityscapes-vit-b8").unwrap();
        assert_eq!(ppap_config_preset(name.as_ptr(), &mut config), PpapStatus::Ok);
        assert_eq!((config.phi0, config.sigma_amb, config.steps), (0.6, 2.0, 3));
        let name = CString::new("imagenet").unwrap();
        assert_eq!(ppap_config_preset(name.as_ptr(), &mut config), PpapStatus::InvalidArgument);

        let batch = normalized_batch();
        config.psi0 = 0.9;
        let mut result = ptr::null_mut();
        assert_eq!(ppap_mine(batch, &config, &mut result), PpapStatus::InvalidArgument);
        ppap_batch_free(batch);

        let zero = [0.0, 0.0, 1.0, 0.0];
        let mut raw = ptr::null_mut();
        assert_eq!(ppap_batch_from_rows(zero.as_ptr(), 2, 2, ptr::null(), &mut raw), PpapStatus::Ok);
        let mut normed = ptr::null_mut();
        assert_eq!(ppap_batch_normalize(raw, &mut normed), PpapStatus::Numerical);
        ppap_batch_free(raw);
    }
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let batch = normalized_batch();
        let fpath = CString::new(dir.path().join("f.bin").to_str().unwrap()).unwrap();
        assert_eq!(ppap_batch_save(batch, fpath.as_ptr()), PpapStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(ppap_batch_load(fpath.as_ptr(), &mut loaded), PpapStatus::Ok);
        assert_eq!(ppap_batch_rows(loaded), 6);

        let config = ppap_config_default();
        let mut result = ptr::null_mut();
        assert_eq!(ppap_mine(loaded, &config, &mut result), PpapStatus::Ok);
        for name in ["r.json", "r.bin"] {
            let rpath = CString::new(dir.path().join(name).to_str().unwrap()).unwrap();
            assert_eq!(ppap_result_save(result, rpath.as_ptr()), PpapStatus::Ok);
            let mut back = ptr::null_mut();
            assert_eq!(ppap_result_load(rpath.as_ptr(), &mut back), PpapStatus::Ok);
            assert_eq!(ppap_result_anchor_count(back), 6);
            ppap_result_free(back);
        }
        let garbage = dir.path().join("junk.bin");
        std::fs::write(&garbage, b"not a container").unwrap();
        let gpath = CString::new(garbage.to_str().unwrap()).unwrap();
        let mut junk = ptr::null_mut();
        assert_eq!(ppap_batch_load(gpath.as_ptr(), &mut junk), PpapStatus::Format);

        ppap_result_free(result);
        ppap_batch_free(loaded);
        ppap_batch_free(batch);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ppap_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // tests run from <target>/<profile>/deps/<name>
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

const C_PROGRAM: &str = r#"
#include "ppap.h"
#include <stdio.h>

int main(void) {
    const double rows[] = {1.0, 0.0, 0.98, 0.2, 0.0, 1.0, 0.1, 0.99};
    const uint32_t labels[] = {0, 0, 1, 1};
    PpapBatch *raw = NULL, *batch = NULL;
    PpapResult *result = NULL;
    if (ppap_batch_from_rows(rows, 4, 2, labels, &raw) != PPAP_STATUS_OK) return 1;
    if (ppap_batch_normalize(raw, &batch) != PPAP_STATUS_OK) return 2;
    PpapMiningConfig config = ppap_config_default();
    if (ppap_mine(batch, &config, &result) != PPAP_STATUS_OK) return 3;
    const uint32_t *pos = NULL;
    size_t len = 0;
    if (ppap_result_positives(result, 0, &pos, &len) != PPAP_STATUS_OK) return 4;
    PpapTrust trust;
    if (ppap_trust_report(result, batch, &trust) != PPAP_STATUS_OK) return 5;
    if (ppap_knn_mine(batch, 0, &result) != PPAP_STATUS_INVALID_ARGUMENT) return 6;
    if (ppap_last_error() == NULL) return 7;
    printf("%zu %zu %.3f\n", ppap_result_anchor_count(result), len, trust.tp_in_p_ratio);
    ppap_result_free(result);
    ppap_batch_free(batch);
    ppap_batch_free(raw);
    return 0;
}
"#;

#[test]
fn header_compiles_and_links_from_c() {
    let staticlib = target_dir().join("libppap_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !staticlib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", staticlib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("smoke");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&staticlib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success(), "C smoke program failed to build");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C smoke program exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "4 2 1.000");
}
