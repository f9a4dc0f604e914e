//! C ABI for aspectcue.
//!
//! Conventions:
//! * Every fallible function returns an [`AcStatus`]; on failure a message
//!   is available from [`ac_last_error_message`] on the same thread.
//! * Objects are opaque handles created by `*_load`/`*_parse` and released
//!   with the matching `*_free`.
//! * Strings returned through `char **` out-parameters are owned by the
//!   caller and must be released with [`ac_string_free`].
//! * Panics never cross the boundary; they surface as [`AcStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use aspectcue::attribution::{exact_shapley, sampled_shapley, CoalitionGame, GameError, MAX_EXACT_PLAYERS};
use aspectcue::eval::{classification_scores, fleiss_kappa, KappaError};
use aspectcue::extract::{load_knowledge_base, KnowledgeBase};
use aspectcue::memorization::{categorize_frequency, FrequencyBand};
use aspectcue::prompt::{
    load_template, parse_template, render_prompt, Demonstration, PromptMode, PromptTemplate,
};
use aspectcue::AspectBindings;

/// Passed as `k` to [`ac_render`] to include every demonstration.
pub const AC_ALL_DEMOS: i64 = -1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Io = 5,
    Degenerate = 6,
    Capacity = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcPromptMode {
    Vanilla = 0,
    Cot = 1,
    Mac = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcFrequencyBand {
    Rare = 0,
    LessFrequent = 1,
    Frequent = 2,
    HighlyFrequent = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AcScores {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
}

/// Opaque knowledge base handle.
pub struct AcKnowledgeBase {
    kb: KnowledgeBase,
}

/// Opaque prompt template handle, including its demonstrations.
pub struct AcTemplate {
    template: PromptTemplate,
    demos: Vec<Demonstration>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(AcStatus, String);

impl Failure {
    fn new(status: AcStatus, msg: impl std::fmt::Display) -> Self {
        Failure(status, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(AcStatus::NullPointer, format!("`{name}` is null")));
    }
    // SAFETY: caller passes a NUL-terminated string that outlives the call.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Failure::new(AcStatus::InvalidUtf8, format!("`{name}`: {e}")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(AcStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(AcStatus::NullPointer, format!("`{name}` is null")));
    }
    // SAFETY: caller guarantees `p` points to `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(AcStatus::InvalidArgument, "output contains a NUL byte"))
}

fn game_failure(e: GameError) -> Failure {
    match e {
        GameError::TooManyPlayers { .. } | GameError::Capacity { .. } => Failure::new(AcStatus::Capacity, e),
        other => Failure::new(AcStatus::InvalidArgument, other),
    }
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn ac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ac_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: `s` was produced by `CString::into_raw` in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Loads a knowledge base file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_kb_load(path: *const c_char, out: *mut *mut AcKnowledgeBase) -> AcStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = unsafe { str_arg(path, "path") }?;
        let kb = load_knowledge_base(Path::new(path)).map_err(|e| match e {
            aspectcue::extract::KbError::Io { .. } => Failure::new(AcStatus::Io, e),
            other => Failure::new(AcStatus::Parse, other),
        })?;
        unsafe { *out = Box::into_raw(Box::new(AcKnowledgeBase { kb })) };
        Ok(())
    })
}

/// Parses a knowledge base from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_kb_parse(json: *const c_char, out: *mut *mut AcKnowledgeBase) -> AcStatus {
    guard(|| {
        out_arg(out, "out")?;
        let json = unsafe { str_arg(json, "json") }?;
        let kb = KnowledgeBase::parse(json, "<memory>").map_err(|e| Failure::new(AcStatus::Parse, e))?;
        unsafe { *out = Box::into_raw(Box::new(AcKnowledgeBase { kb })) };
        Ok(())
    })
}

/// # Safety
/// `kb` must be null or a handle from `ac_kb_load`/`ac_kb_parse` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_kb_free(kb: *mut AcKnowledgeBase) {
    if !kb.is_null() {
        // SAFETY: handle was created by `Box::into_raw` above.
        drop(unsafe { Box::from_raw(kb) });
    }
}

/// Extracts aspects from `text` and writes the bindings as JSON.
///
/// # Safety
/// `kb` must be a live handle, `text` a NUL-terminated string, `out_json`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ac_extract(
    kb: *const AcKnowledgeBase,
    text: *const c_char,
    out_json: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        let kb = unsafe { kb.as_ref() }.ok_or_else(|| Failure::new(AcStatus::NullPointer, "`kb` is null"))?;
        let text = unsafe { str_arg(text, "text") }?;
        let json = serde_json::to_string(&kb.kb.extract(text)).map_err(|e| Failure::new(AcStatus::Parse, e))?;
        unsafe { *out_json = into_c_string(json)? };
        Ok(())
    })
}

/// Loads a prompt template file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_template_load(path: *const c_char, out: *mut *mut AcTemplate) -> AcStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = unsafe { str_arg(path, "path") }?;
        let (template, demos) = load_template(Path::new(path)).map_err(|e| match e {
            aspectcue::prompt::PromptError::Io { .. } => Failure::new(AcStatus::Io, e),
            other => Failure::new(AcStatus::Parse, other),
        })?;
        unsafe { *out = Box::into_raw(Box::new(AcTemplate { template, demos })) };
        Ok(())
    })
}

/// Parses a prompt template from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_template_parse(json: *const c_char, out: *mut *mut AcTemplate) -> AcStatus {
    guard(|| {
        out_arg(out, "out")?;
        let json = unsafe { str_arg(json, "json") }?;
        let (template, demos) =
            parse_template(json, "<memory>").map_err(|e| Failure::new(AcStatus::Parse, e))?;
        unsafe { *out = Box::into_raw(Box::new(AcTemplate { template, demos })) };
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a template handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_template_free(t: *mut AcTemplate) {
    if !t.is_null() {
        // SAFETY: handle was created by `Box::into_raw` above.
        drop(unsafe { Box::from_raw(t) });
    }
}

/// Number of demonstrations bundled with the template; 0 for null.
///
/// # Safety
/// `t` must be null or a live template handle.
#[no_mangle]
pub unsafe extern "C" fn ac_template_demo_count(t: *const AcTemplate) -> usize {
    unsafe { t.as_ref() }.map_or(0, |t| t.demos.len())
}

/// Renders the prompt for `item_text` with the first `k` demonstrations
/// (`AC_ALL_DEMOS` for all). `bindings_json` may be null for empty
/// bindings.
///
/// # Safety
/// Pointers must be valid as documented; `out_prompt` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_render(
    t: *const AcTemplate,
    item_text: *const c_char,
    bindings_json: *const c_char,
    mode: AcPromptMode,
    k: i64,
    out_prompt: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        out_arg(out_prompt, "out_prompt")?;
        let t = unsafe { t.as_ref() }.ok_or_else(|| Failure::new(AcStatus::NullPointer, "`t` is null"))?;
        let text = unsafe { str_arg(item_text, "item_text") }?;
        let bindings = if bindings_json.is_null() {
            t.template.schema.empty_bindings()
        } else {
            let json = unsafe { str_arg(bindings_json, "bindings_json") }?;
            let b: AspectBindings =
                serde_json::from_str(json).map_err(|e| Failure::new(AcStatus::Parse, e))?;
            t.template
                .schema
                .conform(&b)
                .map_err(|e| Failure::new(AcStatus::InvalidArgument, e))?
        };
        let demos = if k == AC_ALL_DEMOS {
            &t.demos[..]
        } else if k >= 0 && (k as u64) <= t.demos.len() as u64 {
            &t.demos[..k as usize]
        } else {
            return Err(Failure::new(
                AcStatus::InvalidArgument,
                format!("k = {k} exceeds the {} available demonstrations", t.demos.len()),
            ));
        };
        let mode = match mode {
            AcPromptMode::Vanilla => PromptMode::Vanilla,
            AcPromptMode::Cot => PromptMode::Cot,
            AcPromptMode::Mac => PromptMode::Mac,
        };
        let prompt = render_prompt(&t.template, demos, text, &bindings, mode)
            .map_err(|e| Failure::new(AcStatus::InvalidArgument, e))?;
        unsafe { *out_prompt = into_c_string(prompt.full_text)? };
        Ok(())
    })
}

/// Parses the answer out of a completion with the template's output
/// contract and writes the label as JSON (`3` or `"positive"`).
///
/// # Safety
/// Pointers must be valid as documented; `out_label_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_parse_output(
    t: *const AcTemplate,
    completion: *const c_char,
    out_label_json: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        out_arg(out_label_json, "out_label_json")?;
        let t = unsafe { t.as_ref() }.ok_or_else(|| Failure::new(AcStatus::NullPointer, "`t` is null"))?;
        let completion = unsafe { str_arg(completion, "completion") }?;
        let label = t
            .template
            .output_contract
            .parse(completion)
            .map_err(|e| Failure::new(AcStatus::Parse, e))?;
        let json = serde_json::to_string(&label).map_err(|e| Failure::new(AcStatus::Parse, e))?;
        unsafe { *out_label_json = into_c_string(json)? };
        Ok(())
    })
}

/// Exact Shapley values of the game whose value for coalition bitmask `s`
/// is `values[s]`. `n_values` must be `2^n_players`; `out_phi` receives
/// `n_players` doubles.
///
/// # Safety
/// `values` must hold `n_values` doubles and `out_phi` room for `n_players`.
#[no_mangle]
pub unsafe extern "C" fn ac_shapley_exact(
    values: *const f64,
    n_values: usize,
    n_players: u32,
    out_phi: *mut f64,
) -> AcStatus {
    guard(|| {
        out_arg(out_phi, "out_phi")?;
        let table = unsafe { slice_arg(values, n_values, "values") }?;
        let game = table_game(table, n_players)?;
        if n_players as usize > MAX_EXACT_PLAYERS {
            return Err(Failure::new(
                AcStatus::Capacity,
                format!("exact enumeration supports at most {MAX_EXACT_PLAYERS} players"),
            ));
        }
        let r = exact_shapley(&game).map_err(game_failure)?;
        for (i, a) in r.aspects.iter().enumerate() {
            unsafe { *out_phi.add(i) = a.estimate };
        }
        Ok(())
    })
}

/// Permutation-sampled Shapley values over a value table, with standard
/// errors. Deterministic for a fixed `seed`.
///
/// # Safety
/// `values` must hold `n_values` doubles; `out_phi` and `out_stderr` room
/// for `n_players` doubles each.
#[no_mangle]
pub unsafe extern "C" fn ac_shapley_sampled(
    values: *const f64,
    n_values: usize,
    n_players: u32,
    permutations: usize,
    seed: u64,
    out_phi: *mut f64,
    out_stderr: *mut f64,
) -> AcStatus {
    guard(|| {
        out_arg(out_phi, "out_phi")?;
        out_arg(out_stderr, "out_stderr")?;
        let table = unsafe { slice_arg(values, n_values, "values") }?;
        let game = table_game(table, n_players)?;
        let r = sampled_shapley(&game, permutations, seed).map_err(game_failure)?;
        for (i, a) in r.aspects.iter().enumerate() {
            unsafe {
                *out_phi.add(i) = a.estimate;
                *out_stderr.add(i) = a.stderr;
            }
        }
        Ok(())
    })
}

fn table_game(table: &[f64], n_players: u32) -> Result<CoalitionGame<'static>, Failure> {
    let expected = 1usize
        .checked_shl(n_players)
        .filter(|_| (1..usize::BITS).contains(&n_players))
        .ok_or_else(|| Failure::new(AcStatus::InvalidArgument, format!("unsupported player count {n_players}")))?;
    if table.len() != expected {
        return Err(Failure::new(
            AcStatus::InvalidArgument,
            format!("{} values given, 2^{n_players} = {expected} expected", table.len()),
        ));
    }
    CoalitionGame::from_table(table.to_vec()).map_err(game_failure)
}

/// Frequency band for an entity's corpus occurrence count.
#[no_mangle]
pub extern "C" fn ac_categorize_frequency(count: u64) -> AcFrequencyBand {
    match categorize_frequency(count) {
        FrequencyBand::Rare => AcFrequencyBand::Rare,
        FrequencyBand::LessFrequent => AcFrequencyBand::LessFrequent,
        FrequencyBand::Frequent => AcFrequencyBand::Frequent,
        FrequencyBand::HighlyFrequent => AcFrequencyBand::HighlyFrequent,
    }
}

/// Fleiss' kappa for a row-major `n_items x n_categories` count matrix.
///
/// # Safety
/// `counts` must hold `n_items * n_categories` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_fleiss_kappa(
    counts: *const u32,
    n_items: usize,
    n_categories: usize,
    out: *mut f64,
) -> AcStatus {
    guard(|| {
        out_arg(out, "out")?;
        let len = n_items
            .checked_mul(n_categories)
            .ok_or_else(|| Failure::new(AcStatus::InvalidArgument, "matrix size overflows"))?;
        let flat = unsafe { slice_arg(counts, len, "counts") }?;
        let rows: Vec<Vec<u32>> = if n_categories == 0 {
            vec![Vec::new(); n_items]
        } else {
            flat.chunks(n_categories).map(<[u32]>::to_vec).collect()
        };
        let k = fleiss_kappa(&rows).map_err(|e| match e {
            KappaError::Degenerate => Failure::new(AcStatus::Degenerate, e),
            other => Failure::new(AcStatus::InvalidArgument, other),
        })?;
        unsafe { *out = k };
        Ok(())
    })
}

/// Classification scores over integer labels (see [`AcScores`]). `pred_valid`
/// may be null; otherwise a zero entry marks an unparseable prediction,
/// which counts as wrong.
///
/// # Safety
/// `preds`, `golds` (and `pred_valid` when non-null) must hold `n`
/// elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_classification_scores(
    preds: *const i64,
    pred_valid: *const u8,
    golds: *const i64,
    n: usize,
    out: *mut AcScores,
) -> AcStatus {
    guard(|| {
        out_arg(out, "out")?;
        let preds = unsafe { slice_arg(preds, n, "preds") }?;
        let golds = unsafe { slice_arg(golds, n, "golds") }?;
        let valid = if pred_valid.is_null() {
            None
        } else {
            Some(unsafe { slice_arg(pred_valid, n, "pred_valid") }?)
        };
        let wrapped: Vec<Option<i64>> = preds
            .iter()
            .enumerate()
            .map(|(i, &p)| valid.is_none_or(|v| v[i] != 0).then_some(p))
            .collect();
        let s = classification_scores(&wrapped, golds).map_err(|e| Failure::new(AcStatus::InvalidArgument, e))?;
        unsafe {
            *out = AcScores {
                accuracy: s.accuracy,
                macro_f1: s.macro_f1,
                weighted_f1: s.weighted_f1,
            }
        };
        Ok(())
    })
}
