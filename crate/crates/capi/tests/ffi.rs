use std::ffi::{CStr, CString};
use std::ptr;

use wavepolyp_capi::*;

fn last_error() -> String {
    let p = wp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn haar_round_trip_and_hand_case() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let (mut ll, mut hl, mut lh, mut hh) = ([0.0], [0.0], [0.0], [0.0]);
    let s = unsafe { wp_haar_dwt2(x.as_ptr(), 2, 2, ll.as_mut_ptr(), hl.as_mut_ptr(), lh.as_mut_ptr(), hh.as_mut_ptr()) };
    assert_eq!(s, WpStatus::Ok);
    assert_eq!((ll[0], hl[0], lh[0], hh[0]), (5.0, -1.0, -2.0, 0.0));
    let mut back = [0.0; 4];
    let s = unsafe { wp_haar_idwt2(ll.as_ptr(), hl.as_ptr(), lh.as_ptr(), hh.as_ptr(), 1, 1, back.as_mut_ptr()) };
    assert_eq!(s, WpStatus::Ok);
    assert_eq!(back, x);
}

#[test]
fn errors_carry_codes_and_messages() {
    let x = [0.0; 6];
    let mut o = [0.0; 2];
    let s = unsafe { wp_haar_dwt2(x.as_ptr(), 3, 2, o.as_mut_ptr(), o.as_mut_ptr(), o.as_mut_ptr(), o.as_mut_ptr()) };
    assert_eq!(s, WpStatus::Dimension);
    assert!(!last_error().is_empty());

    let s = unsafe { wp_haar_dwt2(ptr::null(), 2, 2, o.as_mut_ptr(), o.as_mut_ptr(), o.as_mut_ptr(), o.as_mut_ptr()) };
    assert_eq!(s, WpStatus::NullPointer);
    assert!(last_error().contains("input"));

    let mut m = ptr::null_mut();
    let mode = CString::new("sideways").unwrap();
    assert_eq!(unsafe { wp_model_new(mode.as_ptr(), 1, &mut m) }, WpStatus::InvalidArgument);
    assert!(m.is_null());
    assert!(last_error().contains("ablation mode"));

    let path = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_ne!(unsafe { wp_model_load(path.as_ptr(), &mut m) }, WpStatus::Ok);
}

#[test]
fn metrics_and_contrast() {
    let gt = [1u8, 1, 0, 0];
    let half = [1u8, 0, 0, 0];
    let (mut d, mut j) = (0.0, 0.0);
    unsafe {
        assert_eq!(wp_dice(half.as_ptr(), gt.as_ptr(), 2, 2, &mut d), WpStatus::Ok);
        assert_eq!(wp_iou(half.as_ptr(), gt.as_ptr(), 2, 2, &mut j), WpStatus::Ok);
    }
    assert_eq!((d, j), (2.0 / 3.0, 0.5));

    // Polyp mean 2, background mean 1.
    let c = [2.0, -2.0, 1.0, -1.0];
    let mut ci = 0.0;
    assert_eq!(unsafe { wp_contrast_index(c.as_ptr(), gt.as_ptr(), 2, 2, 0.0 + 1e-8, &mut ci) }, WpStatus::Ok);
    assert!((ci - 1.0 / (3.0 + 1e-8)).abs() < 1e-15);
    let bad = [2u8, 0, 0, 0];
    assert_ne!(unsafe { wp_contrast_index(c.as_ptr(), bad.as_ptr(), 2, 2, 1e-8, &mut ci) }, WpStatus::Ok);
}

#[test]
fn report_lookup_and_csv() {
    let n = 16;
    let rgb: Vec<f64> = (0..n * n * 3).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
    let mask: Vec<u8> = (0..n * n).map(|i| ((i / n) < 6 && (i % n) < 7) as u8).collect();
    let mut r = ptr::null_mut();
    assert_eq!(unsafe { wp_analyze_pair(rgb.as_ptr(), mask.as_ptr(), n, n, 2, 1e-8, &mut r) }, WpStatus::Ok);
    let mut v = -1.0;
    unsafe {
        assert_eq!(wp_report_ci(r, 1, WpBand::Hl as u32, WpModality::Gray as u32, &mut v), WpStatus::Ok);
        assert!((0.0..1.0).contains(&v));
        assert_eq!(wp_report_ci(r, 1, WpBand::Ll as u32, WpModality::Gray as u32, &mut v), WpStatus::InvalidArgument);
        assert_eq!(wp_report_ci(r, 1, 9, 0, &mut v), WpStatus::InvalidArgument);
        let mut csv = ptr::null_mut();
        assert_eq!(wp_report_csv(r, &mut csv), WpStatus::Ok);
        let text = CStr::from_ptr(csv).to_str().unwrap().to_owned();
        assert!(text.starts_with("level,band,modality,ci,n_samples,n_skipped\n"));
        wp_string_free(csv);
        wp_report_free(r);
    }
}

#[test]
fn model_predict_save_load() {
    let mode = CString::new("rgb_only").unwrap();
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(wp_model_new(mode.as_ptr(), 3, &mut m), WpStatus::Ok);
        assert!(wp_model_param_count(m) > 0);
        assert_eq!(wp_model_size_divisor(m), 32);
        let n = 32;
        let rgb = vec![0.5; n * n * 3];
        let mut p = vec![0.0; n * n];
        assert_eq!(wp_model_predict(m, rgb.as_ptr(), n, n, p.as_mut_ptr()), WpStatus::Ok);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(wp_model_predict(m, rgb.as_ptr(), 30, 30, p.as_mut_ptr()), WpStatus::Dimension);

        let dir = std::env::temp_dir().join(format!("wp_capi_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = CString::new(dir.join("m.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(wp_model_save(m, path.as_ptr()), WpStatus::Ok);
        let mut m2 = ptr::null_mut();
        assert_eq!(wp_model_load(path.as_ptr(), &mut m2), WpStatus::Ok);
        let mut q = vec![0.0; n * n];
        assert_eq!(wp_model_predict(m2, rgb.as_ptr(), n, n, q.as_mut_ptr()), WpStatus::Ok);
        assert_eq!(p, q);
        wp_model_free(m);
        wp_model_free(m2);
        wp_model_free(ptr::null_mut());
        std::fs::remove_dir_all(dir).unwrap();
    }
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(wp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/wavepolyp.h")).unwrap();
    for sym in ["wp_model_predict", "WP_STATUS_TOPOLOGY", "WP_BAND_HH", "typedef struct WpModel WpModel"] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}
