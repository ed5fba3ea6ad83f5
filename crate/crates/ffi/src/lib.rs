//! C ABI over `ufo-core`.
//!
//! Every fallible function returns a [`UfoStatus`] and writes results through
//! out-pointers. On a non-`Ok` status the out-pointers are untouched and
//! [`ufo_last_error_message`] describes the failure for the calling thread.
//! Strings returned by the library are released with [`ufo_string_free`];
//! handles with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use thiserror::Error;

use ufo_core::generation::FactCandidate;
use ufo_core::inference::{self, InferenceError};
use ufo_core::prompt::{self, PromptError, PromptTemplate};
use ufo_core::selection::{self, DualEncoder, HashingEncoder, SelectionError, Vector};
use ufo_core::zero_shot::{self, ParseRule};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UfoStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    DimensionMismatch = 4,
    InvalidTemplate = 5,
    Panic = 6,
}

/// Which extraction rule produced a zero-shot answer.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UfoParseRule {
    LeadingLetter = 0,
    LetterWithDot = 1,
    ChoiceTextMatch = 2,
    Unparseable = 3,
}

impl From<ParseRule> for UfoParseRule {
    fn from(rule: ParseRule) -> Self {
        match rule {
            ParseRule::LeadingLetter => UfoParseRule::LeadingLetter,
            ParseRule::LetterWithDot => UfoParseRule::LetterWithDot,
            ParseRule::ChoiceTextMatch => UfoParseRule::ChoiceTextMatch,
            ParseRule::Unparseable => UfoParseRule::Unparseable,
        }
    }
}

/// Opaque few-shot prompt template.
pub struct UfoTemplate(PromptTemplate);

/// Opaque dual encoder.
pub struct UfoEncoder(Box<dyn DualEncoder>);

#[derive(Debug, Error)]
enum FfiError {
    #[error("argument `{0}` is null")]
    Null(&'static str),
    #[error("argument `{0}` is not valid UTF-8")]
    Utf8(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

impl FfiError {
    fn status(&self) -> UfoStatus {
        match self {
            FfiError::Null(_) => UfoStatus::NullArgument,
            FfiError::Utf8(_) => UfoStatus::InvalidUtf8,
            FfiError::Prompt(PromptError::InvalidTemplate { .. }) => UfoStatus::InvalidTemplate,
            FfiError::Selection(SelectionError::DimensionMismatch(..)) => UfoStatus::DimensionMismatch,
            _ => UfoStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), FfiError>) -> UfoStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            UfoStatus::Ok
        }
        Ok(Err(e)) => {
            set_last_error(e.to_string());
            e.status()
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {what}"));
            UfoStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, FfiError> {
    if p.is_null() {
        return Err(FfiError::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| FfiError::Utf8(name))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &'static str) -> Result<&'a [T], FfiError> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(FfiError::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn texts<'a>(p: *const *const c_char, len: usize, name: &'static str) -> Result<Vec<&'a str>, FfiError> {
    slice(p, len, name)?.iter().map(|&s| text(s, name)).collect()
}

fn out<T>(p: *mut T, name: &'static str) -> Result<*mut T, FfiError> {
    if p.is_null() {
        Err(FfiError::Null(name))
    } else {
        Ok(p)
    }
}

fn owned_string(s: String) -> Result<*mut c_char, FfiError> {
    CString::new(s).map(CString::into_raw).map_err(|_| FfiError::Invalid("result contains a NUL byte".into()))
}

/// Message for the most recent failure on this thread, or null after a
/// success. Valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn ufo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ufo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// The bundled template.
///
/// # Safety
/// `out_template` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ufo_template_default(out_template: *mut *mut UfoTemplate) -> UfoStatus {
    guard(|| {
        let dst = out(out_template, "out_template")?;
        *dst = Box::into_raw(Box::new(UfoTemplate(prompt::default_template())));
        Ok(())
    })
}

/// Loads `head.txt`, `demos.jsonl` and `tail.txt` from `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out_template` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ufo_template_load(dir: *const c_char, out_template: *mut *mut UfoTemplate) -> UfoStatus {
    guard(|| {
        let dir = text(dir, "dir")?;
        let dst = out(out_template, "out_template")?;
        *dst = Box::into_raw(Box::new(UfoTemplate(PromptTemplate::load_dir(Path::new(dir))?)));
        Ok(())
    })
}

/// # Safety
/// `template` must come from a `ufo_template_*` constructor, or be null.
#[no_mangle]
pub unsafe extern "C" fn ufo_template_free(template: *mut UfoTemplate) {
    if !template.is_null() {
        drop(Box::from_raw(template));
    }
}

/// Renders the fact-generation prompt for one question.
///
/// # Safety
/// Pointers must be valid; `question` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ufo_build_fact_prompt(
    template: *const UfoTemplate,
    question: *const c_char,
    out_prompt: *mut *mut c_char,
) -> UfoStatus {
    guard(|| {
        let template = template.as_ref().ok_or(FfiError::Null("template"))?;
        let question = text(question, "question")?;
        let dst = out(out_prompt, "out_prompt")?;
        *dst = owned_string(prompt::build_fact_prompt(question, &template.0)?.text)?;
        Ok(())
    })
}

/// Deterministic character-trigram hashing encoder.
///
/// # Safety
/// `out_encoder` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ufo_encoder_hashing_new(
    dimension: usize,
    seed: u64,
    out_encoder: *mut *mut UfoEncoder,
) -> UfoStatus {
    guard(|| {
        let dst = out(out_encoder, "out_encoder")?;
        if dimension == 0 {
            return Err(FfiError::Invalid("encoder dimension must be positive".into()));
        }
        *dst = Box::into_raw(Box::new(UfoEncoder(Box::new(HashingEncoder::new(dimension, seed)))));
        Ok(())
    })
}

/// # Safety
/// `encoder` must come from a `ufo_encoder_*` constructor, or be null.
#[no_mangle]
pub unsafe extern "C" fn ufo_encoder_free(encoder: *mut UfoEncoder) {
    if !encoder.is_null() {
        drop(Box::from_raw(encoder));
    }
}

/// Index of the fact with the largest question/fact dot product. Ties go to
/// the lowest index.
///
/// # Safety
/// `facts` must point to `n_facts` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ufo_select_best(
    encoder: *const UfoEncoder,
    question: *const c_char,
    facts: *const *const c_char,
    n_facts: usize,
    out_index: *mut usize,
    out_score: *mut f64,
) -> UfoStatus {
    guard(|| {
        let encoder = encoder.as_ref().ok_or(FfiError::Null("encoder"))?;
        let question = text(question, "question")?;
        let facts = texts(facts, n_facts, "facts")?;
        let (idx_dst, score_dst) = (out(out_index, "out_index")?, out(out_score, "out_score")?);
        let candidates: Vec<FactCandidate> = facts
            .iter()
            .enumerate()
            .map(|(i, f)| FactCandidate {
                question_id: String::new(),
                sample_index: i,
                text: f.to_string(),
                model_id: String::new(),
                sampling_fingerprint: String::new(),
                over_length: false,
            })
            .collect();
        let chosen = selection::select_best(question, &candidates, encoder.0.as_ref())?.best;
        *idx_dst = chosen.candidate.sample_index;
        *score_dst = chosen.score;
        Ok(())
    })
}

/// # Safety
/// `a` and `b` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ufo_dot(a: *const f64, b: *const f64, len: usize, out_value: *mut f64) -> UfoStatus {
    guard(|| {
        let a = Vector::new(slice(a, len, "a")?.to_vec())?;
        let b = Vector::new(slice(b, len, "b")?.to_vec())?;
        let dst = out(out_value, "out_value")?;
        *dst = selection::dot(&a, &b)?;
        Ok(())
    })
}

/// Writes `len` probabilities to `out_probs`.
///
/// # Safety
/// `values` and `out_probs` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ufo_softmax(values: *const f64, len: usize, out_probs: *mut f64) -> UfoStatus {
    guard(|| {
        let probs = inference::softmax(slice(values, len, "values")?)?;
        let dst = out(out_probs, "out_probs")?;
        ptr::copy_nonoverlapping(probs.as_ptr(), dst, probs.len());
        Ok(())
    })
}

/// First index of the maximum.
///
/// # Safety
/// `values` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ufo_argmax(values: *const f64, len: usize, out_index: *mut usize) -> UfoStatus {
    guard(|| {
        let values = slice(values, len, "values")?;
        let dst = out(out_index, "out_index")?;
        *dst = inference::argmax(values).ok_or_else(|| FfiError::Invalid("argmax of an empty vector".into()))?;
        Ok(())
    })
}

/// Extracts a choice from a free-text completion. `out_index` receives -1
/// when nothing parses.
///
/// # Safety
/// `choices` must point to `n_choices` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ufo_parse_zero_shot(
    completion: *const c_char,
    choices: *const *const c_char,
    n_choices: usize,
    out_index: *mut i64,
    out_rule: *mut UfoParseRule,
) -> UfoStatus {
    guard(|| {
        let completion = text(completion, "completion")?;
        let choices: Vec<String> = texts(choices, n_choices, "choices")?.into_iter().map(String::from).collect();
        let (idx_dst, rule_dst) = (out(out_index, "out_index")?, out(out_rule, "out_rule")?);
        let parsed = zero_shot::parse_answer(completion, &choices);
        *idx_dst = parsed.choice_index.map_or(-1, |i| i as i64);
        *rule_dst = parsed.parse_rule_fired.into();
        Ok(())
    })
}

/// Flat scorer input for a fact and a binary question.
///
/// # Safety
/// String arguments must be NUL-terminated; `out_text` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ufo_assemble_binary(
    fact: *const c_char,
    question: *const c_char,
    out_text: *mut *mut c_char,
) -> UfoStatus {
    guard(|| {
        let input = inference::assemble_binary(text(fact, "fact")?, text(question, "question")?)?;
        let dst = out(out_text, "out_text")?;
        *dst = owned_string(input.flat_text())?;
        Ok(())
    })
}

/// Flat scorer input for a fact, question and one candidate answer.
///
/// # Safety
/// String arguments must be NUL-terminated; `out_text` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ufo_assemble_choice(
    fact: *const c_char,
    question: *const c_char,
    choice: *const c_char,
    out_text: *mut *mut c_char,
) -> UfoStatus {
    guard(|| {
        let input = inference::assemble_choice(text(fact, "fact")?, text(question, "question")?, text(choice, "choice")?)?;
        let dst = out(out_text, "out_text")?;
        *dst = owned_string(input.flat_text())?;
        Ok(())
    })
}

/// Development minus test accuracy, both in percentage points.
///
/// # Safety
/// `out_gap` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ufo_dev_test_gap(dev_percent: f64, test_percent: f64, out_gap: *mut f64) -> UfoStatus {
    guard(|| {
        let dst = out(out_gap, "out_gap")?;
        let valid = |v: f64| (0.0..=100.0).contains(&v);
        if !valid(dev_percent) || !valid(test_percent) {
            return Err(FfiError::Invalid("accuracies must lie in [0, 100]".into()));
        }
        *dst = ufo_core::eval::dev_test_gap(dev_percent, test_percent);
        Ok(())
    })
}
