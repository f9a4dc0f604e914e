//! Exercises the C ABI through its Rust declarations.

use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;
use std::process::Command;
use std::ptr;

use aspectcue_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

/// Copies and frees a string returned by the library.
unsafe fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    ac_string_free(s);
    out
}

fn last_error() -> String {
    let p = ac_last_error_message();
    if p.is_null() {
        String::new()
    } else {
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }
}

fn load_template(name: &str) -> *mut AcTemplate {
    let mut t = ptr::null_mut();
    let path = c(&fixture(name));
    assert_eq!(unsafe { ac_template_load(path.as_ptr(), &mut t) }, AcStatus::Ok, "{}", last_error());
    t
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ac_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn extract_through_a_kb_handle() {
    let mut kb = ptr::null_mut();
    let path = c(&fixture("telecom_kb.json"));
    unsafe {
        assert_eq!(ac_kb_load(path.as_ptr(), &mut kb), AcStatus::Ok);
        let text = c("Mascom announces new price increases in 2024");
        let mut out = ptr::null_mut();
        assert_eq!(ac_extract(kb, text.as_ptr(), &mut out), AcStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["TSP"][0]["value"], "Mascom");
        assert_eq!(v["Competitor"].as_array().unwrap().len(), 0);
        ac_kb_free(kb);
    }
}

#[test]
fn inline_kb_and_parse_errors() {
    let mut kb = ptr::null_mut();
    unsafe {
        let good = c(r#"{"slots": {"Product": ["5G", "5G Core"]}}"#);
        assert_eq!(ac_kb_parse(good.as_ptr(), &mut kb), AcStatus::Ok);
        let mut out = ptr::null_mut();
        let text = c("the 5G Core rollout");
        assert_eq!(ac_extract(kb, text.as_ptr(), &mut out), AcStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["Product"][0]["value"], "5G Core");
        ac_kb_free(kb);

        let mut bad_kb = ptr::null_mut();
        let bad = c("{not json");
        assert_eq!(ac_kb_parse(bad.as_ptr(), &mut bad_kb), AcStatus::Parse);
        assert!(bad_kb.is_null());
        assert!(!last_error().is_empty());

        let missing = c("/nonexistent/kb.json");
        assert_eq!(ac_kb_load(missing.as_ptr(), &mut bad_kb), AcStatus::Io);
    }
}

#[test]
fn render_matches_golden_files() {
    let t = load_template("headline_template.json");
    let item = c("Mascom announces new price increases in 2024");
    let bindings = c(r#"{"Competitor": [], "TSP": [{"value": "Mascom"}], "Product": []}"#);
    for (mode, name) in [
        (AcPromptMode::Mac, "mac"),
        (AcPromptMode::Cot, "cot"),
        (AcPromptMode::Vanilla, "vanilla"),
    ] {
        let mut out = ptr::null_mut();
        let status = unsafe { ac_render(t, item.as_ptr(), bindings.as_ptr(), mode, AC_ALL_DEMOS, &mut out) };
        assert_eq!(status, AcStatus::Ok, "{}", last_error());
        let golden = std::fs::read_to_string(fixture(&format!("golden/headline_{name}.txt"))).unwrap();
        assert_eq!(unsafe { take(out) }, golden, "{name}");
    }
    unsafe { ac_template_free(t) };
}

#[test]
fn render_respects_k_and_rejects_too_many() {
    let t = load_template("fewshot_template.json");
    assert_eq!(unsafe { ac_template_demo_count(t) }, 2);
    let item = c("Orange lowers roaming fees");
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(ac_render(t, item.as_ptr(), ptr::null(), AcPromptMode::Vanilla, 0, &mut out), AcStatus::Ok);
        let zero = take(out);
        assert!(!zero.contains("OUTPUT:"));
        assert_eq!(ac_render(t, item.as_ptr(), ptr::null(), AcPromptMode::Vanilla, 1, &mut out), AcStatus::Ok);
        assert_eq!(take(out).matches("OUTPUT:").count(), 1);
        assert_eq!(
            ac_render(t, item.as_ptr(), ptr::null(), AcPromptMode::Vanilla, 3, &mut out),
            AcStatus::InvalidArgument
        );
        assert!(last_error().contains("k = 3"));
        let unknown = c(r#"{"Nope": [{"value": "x"}]}"#);
        assert_eq!(
            ac_render(t, item.as_ptr(), unknown.as_ptr(), AcPromptMode::Mac, 0, &mut out),
            AcStatus::InvalidArgument
        );
        ac_template_free(t);
    }
}

#[test]
fn parse_output_takes_the_scored_fragment() {
    let t = load_template("headline_template.json");
    unsafe {
        let mut out = ptr::null_mut();
        let completion = c("Reasoning first. {\"score\": 3}");
        assert_eq!(ac_parse_output(t, completion.as_ptr(), &mut out), AcStatus::Ok);
        assert_eq!(take(out), "3");
        let none = c("no answer here");
        assert_eq!(ac_parse_output(t, none.as_ptr(), &mut out), AcStatus::Parse);
        ac_template_free(t);
    }
}

#[test]
fn exact_shapley_on_the_two_player_game() {
    // f(∅)=0, f(A)=1, f(B)=2, f(AB)=4
    let values = [0.0, 1.0, 2.0, 4.0];
    let mut phi = [0.0; 2];
    let status = unsafe { ac_shapley_exact(values.as_ptr(), 4, 2, phi.as_mut_ptr()) };
    assert_eq!(status, AcStatus::Ok);
    assert_eq!(phi, [1.5, 2.5]);
    assert_eq!(
        unsafe { ac_shapley_exact(values.as_ptr(), 3, 2, phi.as_mut_ptr()) },
        AcStatus::InvalidArgument
    );
}

#[test]
fn sampled_shapley_is_seeded() {
    let values = [0.0, 1.0, 2.0, 4.0];
    let (mut a, mut sa, mut b, mut sb) = ([0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]);
    unsafe {
        assert_eq!(
            ac_shapley_sampled(values.as_ptr(), 4, 2, 2000, 7, a.as_mut_ptr(), sa.as_mut_ptr()),
            AcStatus::Ok
        );
        assert_eq!(
            ac_shapley_sampled(values.as_ptr(), 4, 2, 2000, 7, b.as_mut_ptr(), sb.as_mut_ptr()),
            AcStatus::Ok
        );
    }
    assert_eq!(a, b);
    assert_eq!(sa, sb);
    for (i, exact) in [1.5, 2.5].into_iter().enumerate() {
        assert!((a[i] - exact).abs() <= 3.0 * sa[i], "{a:?} ± {sa:?}");
    }
    let status = unsafe { ac_shapley_sampled(values.as_ptr(), 4, 2, 0, 7, a.as_mut_ptr(), sa.as_mut_ptr()) };
    assert_eq!(status, AcStatus::InvalidArgument);
}

#[test]
fn exact_shapley_refuses_large_games() {
    let n = 21u32;
    let values = vec![0.0; 1 << n];
    let mut phi = vec![0.0; n as usize];
    let status = unsafe { ac_shapley_exact(values.as_ptr(), values.len(), n, phi.as_mut_ptr()) };
    assert_eq!(status, AcStatus::Capacity);
}

#[test]
fn frequency_band_edges() {
    use AcFrequencyBand::*;
    for (count, band) in [
        (0, Rare),
        (9, Rare),
        (10, LessFrequent),
        (999, LessFrequent),
        (1000, Frequent),
        (9999, Frequent),
        (10000, HighlyFrequent),
    ] {
        assert_eq!(ac_categorize_frequency(count), band, "{count}");
    }
}

#[test]
fn kappa_values_and_degenerate_status() {
    let mut k = 0.0;
    unsafe {
        let perfect = [2u32, 0, 0, 2];
        assert_eq!(ac_fleiss_kappa(perfect.as_ptr(), 2, 2, &mut k), AcStatus::Ok);
        assert_eq!(k, 1.0);
        let mixed = [2u32, 0, 1, 1];
        assert_eq!(ac_fleiss_kappa(mixed.as_ptr(), 2, 2, &mut k), AcStatus::Ok);
        assert!((k + 1.0 / 3.0).abs() <= 1e-12);
        let flat = [2u32, 0, 2, 0];
        assert_eq!(ac_fleiss_kappa(flat.as_ptr(), 2, 2, &mut k), AcStatus::Degenerate);
        let uneven = [2u32, 0, 3, 0];
        assert_eq!(ac_fleiss_kappa(uneven.as_ptr(), 2, 2, &mut k), AcStatus::InvalidArgument);
    }
}

#[test]
fn classification_scores_with_invalid_predictions() {
    let mut s = AcScores::default();
    unsafe {
        let preds = [1i64, 1, 2];
        let golds = [1i64, 2, 2];
        assert_eq!(
            ac_classification_scores(preds.as_ptr(), ptr::null(), golds.as_ptr(), 3, &mut s),
            AcStatus::Ok
        );
        assert_eq!(s.accuracy, 2.0 / 3.0);
        assert_eq!(s.macro_f1, 2.0 / 3.0);
        // The last prediction is unparsed, so only the first is right.
        let valid = [1u8, 1, 0];
        assert_eq!(
            ac_classification_scores(preds.as_ptr(), valid.as_ptr(), golds.as_ptr(), 3, &mut s),
            AcStatus::Ok
        );
        assert_eq!(s.accuracy, 1.0 / 3.0);
        assert_eq!(
            ac_classification_scores(preds.as_ptr(), ptr::null(), golds.as_ptr(), 0, &mut s),
            AcStatus::InvalidArgument
        );
    }
}

#[test]
fn null_pointers_are_reported() {
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(ac_extract(ptr::null(), c("x").as_ptr(), &mut out), AcStatus::NullPointer);
        assert!(last_error().contains("kb"));
        assert_eq!(ac_kb_parse(ptr::null(), &mut ptr::null_mut()), AcStatus::NullPointer);
        let json = c("{}");
        assert_eq!(ac_kb_parse(json.as_ptr(), ptr::null_mut()), AcStatus::NullPointer);
        assert_eq!(ac_shapley_exact(ptr::null(), 4, 2, [0.0; 2].as_mut_ptr()), AcStatus::NullPointer);
        // Freeing null is a no-op.
        ac_kb_free(ptr::null_mut());
        ac_template_free(ptr::null_mut());
        ac_string_free(ptr::null_mut());
        assert_eq!(ac_template_demo_count(ptr::null()), 0);
    }
}

#[test]
fn invalid_utf8_is_rejected() {
    let bytes = [0xffu8, 0xfe, 0];
    let mut kb = ptr::null_mut();
    let status = unsafe { ac_kb_parse(bytes.as_ptr().cast(), &mut kb) };
    assert_eq!(status, AcStatus::InvalidUtf8);
}

#[test]
fn success_clears_the_last_error() {
    let mut kb = ptr::null_mut();
    unsafe {
        assert_eq!(ac_kb_parse(c("oops").as_ptr(), &mut kb), AcStatus::Parse);
        assert!(!last_error().is_empty());
        assert_eq!(ac_kb_parse(c("{}").as_ptr(), &mut kb), AcStatus::Ok);
        assert!(last_error().is_empty());
        ac_kb_free(kb);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/aspectcue.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in ["ac_render", "ac_shapley_exact", "AC_STATUS_OK", "AcKnowledgeBase", "AC_ALL_DEMOS"] {
        assert!(text.contains(symbol), "{symbol} missing from header");
    }
    let dir = tempfile_dir();
    let src = dir.join("check.c");
    std::fs::write(
        &src,
        "#include \"aspectcue.h\"\nint main(void) { AcTemplate *t = 0; return ac_template_demo_count(t) == 0 ? AC_STATUS_OK : 1; }\n",
    )
    .unwrap();
    let include = header.parent().unwrap();
    match Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(include)
        .arg(&src)
        .output()
    {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(_) => eprintln!("cc not found; skipping C compile check"),
    }
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("aspectcue-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
