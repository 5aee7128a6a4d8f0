use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use sve_core::experiments::save_checkpoint;
use sve_core::metrics::{ood_metrics, MetricsReport, OodScores};
use sve_core::models::{predict, ModelSpec};
use sve_core::svd::svd;
use sve_core::training::{build_sve, Method, TrainConfig};
use sve_core::{Rng, Tensor};
use sve_ffi::*;

fn last_error() -> String {
    let p = sve_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn checkpoint(dir: &Path) -> (PathBuf, sve_core::models::EnsembleModel) {
    let tc = TrainConfig {
        n_members: 3,
        sigma_init: 0.05,
        ..TrainConfig::new(Method::Sve, 1, 0.01)
    };
    let model = build_sve(&ModelSpec::mlp(vec![4, 6], 3), None, &tc).unwrap();
    let path = dir.join("m.sve");
    save_checkpoint(&model, Some(&tc), &path).unwrap();
    (path, model)
}

#[test]
fn svd_handle_matches_core() {
    let data: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sve_svd_new(data.as_ptr(), 4, 3, &mut h) }, SveStatus::Ok);
    assert!(sve_last_error_message().is_null());
    let want = svd(&Tensor::matrix(4, 3, data).unwrap()).unwrap();
    let r = unsafe { sve_svd_rank(h) };
    assert_eq!(r, 3);
    let (mut s, mut u, mut vt) = (vec![0.0; r], vec![0.0; 12], vec![0.0; 9]);
    unsafe {
        assert_eq!(sve_svd_sigma(h, s.as_mut_ptr(), s.len()), SveStatus::Ok);
        assert_eq!(sve_svd_u(h, u.as_mut_ptr(), u.len()), SveStatus::Ok);
        assert_eq!(sve_svd_vt(h, vt.as_mut_ptr(), vt.len()), SveStatus::Ok);
        sve_svd_free(h);
    }
    assert_eq!(s, want.sigma);
    assert_eq!(u, want.u.data());
    assert_eq!(vt, want.vt.data());
}

#[test]
fn errors_set_status_and_message() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sve_svd_new(ptr::null(), 2, 2, &mut h) }, SveStatus::NullPointer);
    assert!(last_error().contains("data"));
    assert!(h.is_null());
    let data = [1.0, f64::NAN, 0.0, 1.0];
    assert_eq!(unsafe { sve_svd_new(data.as_ptr(), 2, 2, &mut h) }, SveStatus::Numeric);
    assert_eq!(unsafe { sve_svd_new(data.as_ptr(), 0, 2, &mut h) }, SveStatus::InvalidInput);
    assert_eq!(unsafe { sve_svd_new(data.as_ptr(), 2, 2, ptr::null_mut()) }, SveStatus::NullPointer);
    assert_eq!(unsafe { sve_svd_rank(ptr::null()) }, 0);
    unsafe { sve_svd_free(ptr::null_mut()) };

    let missing = CString::new("/nonexistent/m.sve").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sve_model_load(missing.as_ptr(), &mut m) }, SveStatus::Io);
    assert!(last_error().contains("/nonexistent/m.sve"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.sve");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sve_model_load(bad.as_ptr(), &mut m) }, SveStatus::Format);
    assert!(m.is_null());
}

#[test]
fn model_predicts_like_core() {
    let dir = tempfile::tempdir().unwrap();
    let (path, model) = checkpoint(dir.path());
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sve_model_load(c.as_ptr(), &mut h) }, SveStatus::Ok);
    unsafe {
        assert_eq!(sve_model_input_dim(h), 4);
        assert_eq!(sve_model_n_classes(h), 3);
        assert_eq!(sve_model_n_members(h), 3);
    }
    let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut out = vec![0.0; 15];
    assert_eq!(unsafe { sve_model_predict(h, x.as_ptr(), 5, 4, 9, out.as_mut_ptr(), out.len()) }, SveStatus::Ok);
    let want = predict(
        &model,
        &Tensor::matrix(5, 4, x.clone()).unwrap(),
        sve_core::models::Mode::Eval,
        &Rng::seed_from_u64(9).split("predict"),
    )
    .unwrap();
    assert_eq!(out, want.mean_probs.data());

    assert_eq!(
        unsafe { sve_model_predict(h, x.as_ptr(), 5, 4, 9, out.as_mut_ptr(), 14) },
        SveStatus::BufferTooSmall
    );
    assert_eq!(
        unsafe { sve_model_predict(h, x.as_ptr(), 4, 5, 9, out.as_mut_ptr(), 15) },
        SveStatus::InvalidInput
    );
    assert!(last_error().contains("dimension"));
    unsafe { sve_model_free(h) };
}

#[test]
fn metrics_match_core() {
    let probs = [0.7, 0.2, 0.1, 0.1, 0.3, 0.6, 0.5, 0.4, 0.1, 0.2, 0.2, 0.6];
    let labels = [0usize, 2, 1, 2];
    let mut m = SveMetrics::default();
    assert_eq!(unsafe { sve_metrics_compute(probs.as_ptr(), 4, 3, labels.as_ptr(), &mut m) }, SveStatus::Ok);
    let want = MetricsReport::compute(&Tensor::matrix(4, 3, probs.to_vec()).unwrap(), &labels).unwrap();
    assert_eq!((m.accuracy, m.ece, m.nll, m.brier), (want.accuracy, want.ece, want.nll, want.brier));
    let bad = [3usize, 0, 0, 0];
    assert_eq!(
        unsafe { sve_metrics_compute(probs.as_ptr(), 4, 3, bad.as_ptr(), &mut m) },
        SveStatus::InvalidInput
    );

    let (a, b) = ([0.9, 0.8, 0.7, 0.4], [0.5, 0.3, 0.75]);
    let mut o = SveOodMetrics::default();
    assert_eq!(unsafe { sve_ood_metrics(a.as_ptr(), 4, b.as_ptr(), 3, &mut o) }, SveStatus::Ok);
    let want = ood_metrics(&OodScores {
        in_dist: a.to_vec(),
        ood: b.to_vec(),
    })
    .unwrap();
    assert_eq!((o.auroc, o.auprc, o.fpr_at_95_tpr), (want.auroc, want.auprc, want.fpr_at_95_tpr));
    assert_eq!(unsafe { sve_ood_metrics(a.as_ptr(), 4, b.as_ptr(), 0, &mut o) }, SveStatus::InvalidInput);
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(sve_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sve.h")).unwrap();
    for f in [
        "sve_last_error_message",
        "sve_version",
        "sve_svd_new",
        "sve_svd_rank",
        "sve_svd_sigma",
        "sve_svd_u",
        "sve_svd_vt",
        "sve_svd_free",
        "sve_model_load",
        "sve_model_input_dim",
        "sve_model_n_classes",
        "sve_model_n_members",
        "sve_model_predict",
        "sve_model_free",
        "sve_metrics_compute",
        "sve_ood_metrics",
    ] {
        assert!(
            header.contains(&format!(" {f}(")) || header.contains(&format!("*{f}(")),
            "{f} missing from header"
        );
    }
    assert!(header.contains("typedef struct SveModel SveModel;"));
    assert!(header.contains("SVE_STATUS_OK = 0"));
}

/// Compiles the C smoke program against the header and static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    // The test binary lives in target/<profile>/deps; the staticlib one level up.
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let lib = lib_dir.join("libsve_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let (ck, _) = checkpoint(dir.path());
    let out = Command::new(&bin).arg(&ck).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
        .ok_or(())
}
