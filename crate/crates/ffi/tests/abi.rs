use std::ffi::{CStr, CString};
use std::ptr;

use paegan::paegan::io::{save_pae, ModelSidecar, Stage};
use paegan::paegan::{ArchConfig, PaeModel};
use paegan_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(paegan_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn dataset_handle_round_trip() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(paegan_dataset_generate(ptr::null(), 3, 4, 9, &mut ds), PaeganStatus::Ok);
        let (mut e, mut s, mut side) = (0, 0, 0);
        assert_eq!(paegan_dataset_shape(ds, &mut e, &mut s, &mut side), PaeganStatus::Ok);
        assert_eq!((e, s, side), (3, 4, 28));
        let mut frame = vec![0.0f32; 784];
        assert_eq!(paegan_dataset_frame(ds, 2, 3, frame.as_mut_ptr(), 784), PaeganStatus::Ok);
        assert!(frame.iter().any(|&v| v > 0.1));
        assert_eq!(paegan_dataset_frame(ds, 3, 0, frame.as_mut_ptr(), 784), PaeganStatus::InvalidArgument);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("d.bin").to_str().unwrap()).unwrap();
        assert_eq!(paegan_dataset_save(ds, path.as_ptr()), PaeganStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(paegan_dataset_load(path.as_ptr(), &mut back), PaeganStatus::Ok);
        let mut again = vec![0.0f32; 784];
        paegan_dataset_frame(back, 2, 3, again.as_mut_ptr(), 784);
        assert_eq!(frame, again);
        paegan_dataset_free(back);
        paegan_dataset_free(ds);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        assert_eq!(paegan_dataset_generate(ptr::null(), 1, 4, 1, ptr::null_mut()), PaeganStatus::NullPointer);
        let mut ds = ptr::null_mut();
        assert_eq!(paegan_dataset_generate(ptr::null(), 0, 4, 1, &mut ds), PaeganStatus::Config);
        assert!(ds.is_null());
        assert!(!last_error().is_empty());
        let bad = CString::new(r#"{"num_balls": 0}"#).unwrap();
        assert_eq!(paegan_dataset_generate(bad.as_ptr(), 1, 1, 1, &mut ds), PaeganStatus::Config);
        let missing = CString::new("/nonexistent/pae.ckpt").unwrap();
        let mut pae = ptr::null_mut();
        assert_eq!(paegan_pae_load(missing.as_ptr(), &mut pae), PaeganStatus::MissingStage);
        let mut dsx = ptr::null_mut();
        assert_eq!(paegan_dataset_load(missing.as_ptr(), &mut dsx), PaeganStatus::Io);
        assert_eq!(paegan_dataset_generate(ptr::null(), 1, 1, 1, &mut dsx), PaeganStatus::Ok);
        assert!(last_error().is_empty());
        paegan_dataset_free(dsx);
        let name = CStr::from_ptr(paegan_status_name(PaeganStatus::Length));
        assert_eq!(name.to_str().unwrap(), "length mismatch");
        paegan_dataset_free(ptr::null_mut());
    }
}

#[test]
fn belief_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("pae.ckpt");
    let model = PaeModel::<f32>::new(ArchConfig::default(), 4).unwrap();
    save_pae(&ckpt, &model, ModelSidecar::new(Stage::Pae, ArchConfig::default(), 0, 4, serde_json::Value::Null)).unwrap();
    let frame: Vec<f32> = (0..784).map(|i| (i % 7) as f32 / 7.0).collect();
    let want = {
        let h = model.propagate_batch(&model.zero_beliefs(1), &[Some(&frame)]).unwrap();
        let h = model.propagate_batch(&h, &[None]).unwrap();
        model.decode_batch(&h).unwrap().into_data()
    };
    unsafe {
        let path = CString::new(ckpt.to_str().unwrap()).unwrap();
        let mut pae = ptr::null_mut();
        assert_eq!(paegan_pae_load(path.as_ptr(), &mut pae), PaeganStatus::Ok);
        assert_eq!(paegan_pae_pixels(pae), 784);
        let mut b = ptr::null_mut();
        assert_eq!(paegan_belief_new(pae, &mut b), PaeganStatus::Ok);
        assert_eq!(paegan_belief_propagate(pae, b, frame.as_ptr(), 784), PaeganStatus::Ok);
        assert_eq!(paegan_belief_propagate(pae, b, ptr::null(), 0), PaeganStatus::Ok);
        assert_eq!(paegan_belief_propagate(pae, b, frame.as_ptr(), 10), PaeganStatus::Length);
        let mut out = vec![0.0f32; 784];
        assert_eq!(paegan_belief_decode(pae, b, out.as_mut_ptr(), 784), PaeganStatus::Ok);
        assert_eq!(out, want);
        let mut sampler = ptr::null_mut();
        assert_eq!(paegan_sampler_load(path.as_ptr(), &mut sampler), PaeganStatus::MissingStage);
        paegan_belief_free(b);
        paegan_pae_free(pae);
    }
}

#[test]
fn filter_tracks_a_static_measurement() {
    unsafe {
        let world = CString::new(r#"{"speed": 0.0, "process_noise_sigma": 0.0}"#).unwrap();
        let mut pf = ptr::null_mut();
        assert_eq!(paegan_filter_new(world.as_ptr(), 500, 1, &mut pf), PaeganStatus::Ok);
        let z = [10.0, 12.0];
        for _ in 0..5 {
            let mut div = -1;
            assert_eq!(paegan_filter_update(pf, z.as_ptr(), 2, &mut div), PaeganStatus::Ok);
            assert_eq!(div, 0);
            paegan_filter_predict(pf);
        }
        let mut m = [0.0; 2];
        assert_eq!(paegan_filter_mean_positions(pf, m.as_mut_ptr(), 2), PaeganStatus::Ok);
        assert!((m[0] - 10.0).abs() < 1.0 && (m[1] - 12.0).abs() < 1.0, "{m:?}");
        assert!(paegan_filter_ess(pf) > 0.0);
        let mut img = vec![0.0f32; 784];
        assert_eq!(paegan_filter_expected_observation(pf, img.as_mut_ptr(), 784), PaeganStatus::Ok);
        assert!(img.iter().any(|&v| v > 0.1));
        paegan_filter_free(pf);
    }
}

#[test]
fn filter_from_measurement_starts_near_it() {
    unsafe {
        let mut pf = ptr::null_mut();
        let z = [10.0, 12.0];
        assert_eq!(
            paegan_filter_new_from_measurement(ptr::null(), 400, 2, z.as_ptr(), 1, &mut pf),
            PaeganStatus::Length
        );
        assert_eq!(
            paegan_filter_new_from_measurement(ptr::null(), 400, 2, z.as_ptr(), 2, &mut pf),
            PaeganStatus::Ok
        );
        let mut m = [0.0; 2];
        assert_eq!(paegan_filter_mean_positions(pf, m.as_mut_ptr(), 2), PaeganStatus::Ok);
        assert!((m[0] - 10.0).abs() < 0.2 && (m[1] - 12.0).abs() < 0.2, "{m:?}");
        assert!((paegan_filter_ess(pf) - 400.0).abs() < 1e-6);
        paegan_filter_free(pf);
    }
}

/// Compiles a C program against the generated header and the static
/// library, then runs it.
#[test]
fn c_program_links_against_the_static_library() {
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    // `cargo test` does not emit the staticlib, so build it in a side target
    // dir (the main one is locked by the running test).
    let exe = std::env::current_exe().unwrap();
    let target = exe.ancestors().nth(3).unwrap().join("abi-staticlib");
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let built = std::process::Command::new(cargo)
        .args(["build", "--offline", "--lib", "-p", "paegan-ffi", "--target-dir"])
        .arg(&target)
        .current_dir(manifest)
        .status()
        .expect("cargo available");
    assert!(built.success());
    let lib = target.join("debug/libpaegan_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new("cc")
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok 2 5 28"));
}
