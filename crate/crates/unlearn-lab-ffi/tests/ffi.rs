//! Exercises the C ABI from Rust and, end to end, from a compiled C program.

use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::PathBuf;
use std::ptr;

use unlearn_lab_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let ptr = ul_last_error();
    assert!(!ptr.is_null(), "an error message should be set");
    unsafe { CStr::from_ptr(ptr) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn corpus_handle_lifecycle_and_counts() {
    unsafe {
        let mut corpus: *mut CorpusHandle = ptr::null_mut();
        let status = ul_corpus_synth(4, 3, 2, 4, 10, 7, &mut corpus);
        assert_eq!(status, UlStatus::Ok);
        assert!(!corpus.is_null());
        assert_eq!(ul_corpus_forget_len(corpus), 12);
        assert_eq!(ul_corpus_retain_len(corpus), 4 * (2 + 4) + 10);
        assert_eq!(ul_corpus_entity_count(corpus), 4);
        assert!(ul_corpus_test_len(corpus) > 0);

        let mut similarity = 0.0f64;
        assert_eq!(
            ul_corpus_similarity_mean(corpus, &mut similarity),
            UlStatus::Ok
        );
        assert!((0.0..=1.0).contains(&similarity));
        assert!(similarity >= 0.3);

        // Round trip through a file.
        let dir = tempfile::tempdir().unwrap();
        let path = cstr(dir.path().join("c.jsonl").to_str().unwrap());
        assert_eq!(ul_corpus_save(corpus, path.as_ptr()), UlStatus::Ok);
        let mut reloaded: *mut CorpusHandle = ptr::null_mut();
        assert_eq!(ul_corpus_load(path.as_ptr(), &mut reloaded), UlStatus::Ok);
        assert_eq!(ul_corpus_forget_len(reloaded), 12);

        ul_corpus_free(corpus);
        ul_corpus_free(reloaded);
        ul_corpus_free(ptr::null_mut()); // null is tolerated
    }
}

#[test]
fn error_paths_set_codes_and_messages() {
    unsafe {
        let mut corpus: *mut CorpusHandle = ptr::null_mut();
        let missing = cstr("/definitely/not/here.jsonl");
        let status = ul_corpus_load(missing.as_ptr(), &mut corpus);
        assert_eq!(status, UlStatus::IoError);
        assert!(corpus.is_null());
        assert!(!last_error().is_empty());

        // Zero counts are invalid arguments.
        let status = ul_corpus_synth(0, 1, 1, 1, 1, 0, &mut corpus);
        assert_eq!(status, UlStatus::InvalidArgument);
        assert!(last_error().contains("n_entities"));

        // Null pointers are reported, not dereferenced.
        assert_eq!(
            ul_corpus_load(ptr::null(), &mut corpus),
            UlStatus::NullPointer
        );
        assert_eq!(
            ul_corpus_load(missing.as_ptr(), ptr::null_mut()),
            UlStatus::NullPointer
        );

        let mut out = 0u64;
        assert_eq!(
            ul_levenshtein(ptr::null(), missing.as_ptr(), &mut out),
            UlStatus::NullPointer
        );
    }
}

#[test]
fn levenshtein_and_version() {
    unsafe {
        let a = cstr("kitten");
        let b = cstr("sitting");
        let mut out = 0u64;
        assert_eq!(
            ul_levenshtein(a.as_ptr(), b.as_ptr(), &mut out),
            UlStatus::Ok
        );
        assert_eq!(out, 3);

        let version = CStr::from_ptr(ul_version()).to_str().unwrap();
        assert_eq!(version, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn default_config_and_experiment_run_through_the_abi() {
    unsafe {
        let dir = tempfile::tempdir().unwrap();
        let corpus_path = dir.path().join("corpus.jsonl");
        let out_dir = dir.path().join("out");

        let mut corpus: *mut CorpusHandle = ptr::null_mut();
        assert_eq!(ul_corpus_synth(3, 2, 2, 2, 6, 5, &mut corpus), UlStatus::Ok);
        let path = cstr(corpus_path.to_str().unwrap());
        assert_eq!(ul_corpus_save(corpus, path.as_ptr()), UlStatus::Ok);

        // Start from the default config, shrink it for test speed.
        let mut json: *mut c_char = ptr::null_mut();
        let out = cstr(out_dir.to_str().unwrap());
        assert_eq!(
            ul_default_config(path.as_ptr(), out.as_ptr(), &mut json),
            UlStatus::Ok
        );
        let mut cfg: serde_json::Value =
            serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        ul_string_free(json);
        cfg["model"] = serde_json::json!({
            "d_model": 16, "n_layers": 1, "n_heads": 2, "max_seq_len": 32
        });
        cfg["finetune"]["epochs"] = 6.into();
        cfg["unlearn"]["epochs"] = 1.into();
        cfg["eval"]["max_new_tokens"] = 8.into();
        cfg["seeds"] = serde_json::json!([2]);

        // Fine-tune through the ABI.
        let cfg_text = cstr(&cfg.to_string());
        let mut model: *mut ModelHandle = ptr::null_mut();
        assert_eq!(
            ul_finetune(corpus, cfg_text.as_ptr(), 2, &mut model),
            UlStatus::Ok
        );
        assert!(ul_model_param_count(model) > 0);

        // Evaluate it.
        let mut report_json: *mut c_char = ptr::null_mut();
        assert_eq!(
            ul_model_evaluate(model, corpus, 8, &mut report_json),
            UlStatus::Ok
        );
        let report: serde_json::Value =
            serde_json::from_str(CStr::from_ptr(report_json).to_str().unwrap()).unwrap();
        ul_string_free(report_json);
        assert!(report["forget_efficacy"].is_f64() || report["forget_efficacy"].is_i64());

        // Save and reload the checkpoint.
        let ckpt = cstr(dir.path().join("m.json").to_str().unwrap());
        assert_eq!(ul_model_save(model, ckpt.as_ptr()), UlStatus::Ok);
        let mut reloaded: *mut ModelHandle = ptr::null_mut();
        assert_eq!(ul_model_load(ckpt.as_ptr(), &mut reloaded), UlStatus::Ok);
        assert_eq!(ul_model_param_count(reloaded), ul_model_param_count(model));

        // Full pipeline from the JSON config.
        let mut results_json: *mut c_char = ptr::null_mut();
        assert_eq!(
            ul_run_experiment(cfg_text.as_ptr(), &mut results_json),
            UlStatus::Ok
        );
        let results: serde_json::Value =
            serde_json::from_str(CStr::from_ptr(results_json).to_str().unwrap()).unwrap();
        ul_string_free(results_json);
        assert_eq!(results.as_array().unwrap().len(), 1);
        assert!(out_dir.join("summary.csv").exists());

        ul_model_free(model);
        ul_model_free(reloaded);
        ul_corpus_free(corpus);
    }
}

/// Compile and run a small C program against the generated header and the
/// cdylib, proving the ABI holds outside Rust.
#[test]
fn c_program_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include_dir = manifest.join("include");
    assert!(
        include_dir.join("unlearn_lab.h").exists(),
        "header is generated by the build script"
    );
    let lib_dir = manifest.join("../../target/debug");
    assert!(
        lib_dir.join("libunlearn_lab_ffi.so").exists()
            || lib_dir.join("libunlearn_lab_ffi.dylib").exists(),
        "cdylib not found under {}",
        lib_dir.display()
    );

    let dir = tempfile::tempdir().unwrap();
    let c_source = dir.path().join("probe.c");
    std::fs::write(
        &c_source,
        r#"
#include <stdio.h>
#include <string.h>
#include "unlearn_lab.h"

int main(void) {
    CorpusHandle *corpus = NULL;
    if (ul_corpus_synth(3, 2, 2, 2, 6, 11, &corpus) != UL_STATUS_OK) {
        fprintf(stderr, "synth failed: %s\n", ul_last_error());
        return 1;
    }
    if (ul_corpus_forget_len(corpus) != 6) return 2;

    uint64_t distance = 0;
    if (ul_levenshtein("kitten", "sitting", &distance) != UL_STATUS_OK) return 3;
    if (distance != 3) return 4;

    CorpusHandle *bad = NULL;
    if (ul_corpus_load("/no/such/file", &bad) == UL_STATUS_OK) return 5;
    if (ul_last_error() == NULL) return 6;

    ul_corpus_free(corpus);
    printf("ok %s\n", ul_version());
    return 0;
}
"#,
    )
    .unwrap();

    let exe = dir.path().join("probe");
    let compile = std::process::Command::new("cc")
        .arg(&c_source)
        .arg("-I")
        .arg(&include_dir)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lunlearn_lab_ffi")
        .arg("-o")
        .arg(&exe)
        .output()
        .expect("invoke cc");
    assert!(
        compile.status.success(),
        "cc failed: {}",
        String::from_utf8_lossy(&compile.stderr)
    );

    let run = std::process::Command::new(&exe)
        .env("LD_LIBRARY_PATH", &lib_dir)
        .output()
        .expect("run probe");
    assert!(
        run.status.success(),
        "probe exited with {:?}: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(stdout.starts_with("ok "), "{stdout}");
}
