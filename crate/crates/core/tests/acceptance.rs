//! Exit criteria. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ufo_core::backends::mock::{OverlapScorer, TableScorer};
use ufo_core::config::{
    CompletionSection, DatasetSection, EmbeddingSection, RetrySection, RunConfig, SamplingSection, ScorerSection,
    SelectionMode,
};
use ufo_core::dataset::{dataset_to_jsonl, Label, QuestionRecord, QuestionStyle};
use ufo_core::eval::{compare_with_reported, dev_test_gap, quality_stats, round1, QualityLabel, ReportedCell};
use ufo_core::generation::FactCandidate;
use ufo_core::inference::{argmax, assemble_binary, assemble_choice, predict, softmax};
use ufo_core::pipeline::{self, PredictionLine, RunContext, SelectionRow};
use ufo_core::prompt::{build_fact_prompt, default_template};
use ufo_core::selection::{select_best, DualEncoder, EncoderRole, SelectionError, Vector};
use ufo_core::zero_shot::{parse_answer, ParseRule};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome { passed, detail: detail.into() }
    }
}

fn run(name: &str, budget: Duration, check: fn() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Outcome::new(false, format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let in_time = elapsed < budget;
    let passed = outcome.passed && in_time;
    let timing = format!("{:.3}s of {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64());
    let line = format!(
        "{} {name}: {}{} [{timing}]\n",
        if passed { "PASS" } else { "FAIL" },
        outcome.detail,
        if in_time { "" } else { "; over time budget" },
    );
    let mut out = std::io::stdout();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    passed
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let results = [
        run("prompt golden file", secs(1), prompt_golden),
        run("selection oracle", secs(5), selection_oracle),
        run("softmax suite", secs(5), softmax_suite),
        run("assembly contract", secs(1), assembly_contract),
        run("reported arithmetic", secs(1), reported_arithmetic),
        run("end-to-end determinism", secs(10), end_to_end_determinism),
        run("selection ablation", secs(10), selection_ablation),
        run("zero-shot parsing", secs(1), zero_shot_parsing),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// prompt

const DEMOS: [(&str, &str, &str); 5] = [
    (
        "CSQA2",
        "Some Arizona cities have over a million people.",
        "Arizona is the 14th most populous state in the US, with over 7.3 million people. Of those, the cities of Phoenix, Tucson, Mesa, and Chandler each have populations of over a million people.",
    ),
    (
        "SIQA",
        "Jordan was in charge of taking the food on the camping trip and left all the food at home. How would Jordan feel afterwards?",
        "Forgetting to take the food for the camping trip is a failure of responsibility. A person may feel embarrassed and regretful after they have failed to fulfill their duty.",
    ),
    (
        "OBQA",
        "Small reptiles in Texas can be brown or green on command, we call this what?",
        "Texas horned lizards are small reptiles native to Texas and other parts of the southern US. They have the ability to change their colour on command in order to camouflage with their environment.",
    ),
    (
        "CSQA2",
        "There is at least one example of human blood type in the following list: AC, AH, C, OH, BB.",
        "There are 4 different blood types \u{2013}A, B, AB and O. These names indicate whether the blood\u{2019}s red cells carry the A antigen, the B antigen, both A and B antigens, or neither antigen.",
    ),
    (
        "QASC",
        "The interior chambers have tiny what that trap the particles.",
        "In air purifiers, the interior chambers contain filters made of fibres, such as activated carbon, that are designed to trap particles such as dust, pollen, and other allergens.",
    ),
];

fn prompt_golden() -> Outcome {
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/fact_prompt_chickens.txt");
    let golden = fs::read(&golden_path).expect("golden file");
    let template = default_template();
    let rendered = build_fact_prompt(
        "If none of the chickens were males, the chickens would still lay eggs. Is it true?",
        &template,
    )
    .expect("prompt builds");
    let bytes_match = rendered.text.as_bytes() == golden.as_slice();
    let demos_match = template.demonstrations.len() == DEMOS.len()
        && template
            .demonstrations
            .iter()
            .zip(DEMOS)
            .all(|(d, (src, input, fact))| d.source_dataset == src && d.input_text == input && d.fact_text == fact);
    let tail_ok = template.tail_instruction.contains("30 words or less");
    Outcome::new(
        bytes_match && demos_match && tail_ok,
        format!(
            "golden {} ({} bytes), demonstrations {}, tail word limit {}",
            if bytes_match { "identical" } else { "differs" },
            rendered.text.len(),
            if demos_match { "match" } else { "differ" },
            if tail_ok { "present" } else { "missing" }
        ),
    )
}

// ---------------------------------------------------------------------------
// selection

/// Looks up fixed vectors by text; one table for both roles.
struct TableEncoder {
    dimension: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl DualEncoder for TableEncoder {
    fn encoder_id(&self) -> &str {
        "table"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, _role: EncoderRole, text: &str) -> Result<Vector, SelectionError> {
        Vector::new(self.vectors.get(text).cloned().unwrap_or_else(|| panic!("no vector for {text:?}")))
    }
}

fn candidate(question_id: &str, sample_index: usize, text: &str) -> FactCandidate {
    FactCandidate {
        question_id: question_id.into(),
        sample_index,
        text: text.into(),
        model_id: "m".into(),
        sampling_fingerprint: "fp".into(),
        over_length: false,
    }
}

fn selection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1ec7);
    let dim = 8;
    let mut agree = 0;
    let mut ties = 0;
    let instances = 1000;
    for inst in 0..instances {
        let n = rng.gen_range(2..=8);
        let mut vectors = HashMap::new();
        let int_vec = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.gen_range(-3i32..=3) as f64).collect::<Vec<_>>();
        let question = format!("question {inst}");
        let q = int_vec(&mut rng);
        vectors.insert(question.clone(), q.clone());
        let mut texts: Vec<String> = (0..n).map(|i| format!("fact {inst}/{i}")).collect();
        let mut fact_vecs: Vec<Vec<f64>> = (0..n).map(|_| int_vec(&mut rng)).collect();
        // every third instance duplicates one vector so two candidates tie;
        // every sixth makes that pair the strict maximum
        if inst % 3 == 0 {
            let a = rng.gen_range(0..n);
            let b = (a + rng.gen_range(1..n)) % n;
            fact_vecs[b] = fact_vecs[a].clone();
            if inst % 6 == 0 {
                let top: Vec<f64> = q.iter().map(|x| 4.0 * x).collect();
                fact_vecs[a] = top.clone();
                fact_vecs[b] = top;
            }
        }
        for (t, v) in texts.iter().zip(&fact_vecs) {
            vectors.insert(t.clone(), v.clone());
        }
        let mut candidates: Vec<FactCandidate> =
            texts.iter().enumerate().map(|(i, t)| candidate(&question, i, t)).collect();
        candidates.shuffle(&mut rng);
        texts.clear();

        // exhaustive oracle
        let scores: Vec<(usize, f64)> = candidates
            .iter()
            .map(|c| {
                let v = &vectors[&c.text];
                (c.sample_index, q.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
            })
            .collect();
        let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let at_max: Vec<usize> = scores.iter().filter(|s| s.1 == max).map(|s| s.0).collect();
        if at_max.len() > 1 {
            ties += 1;
        }
        let expected = *at_max.iter().min().unwrap();

        let encoder = TableEncoder { dimension: dim, vectors };
        let got = select_best(&question, &candidates, &encoder).expect("selection");
        if got.best.candidate.sample_index == expected && got.best.score == max {
            agree += 1;
        }
    }
    Outcome::new(
        agree == instances && ties > 0,
        format!("{agree}/{instances} instances agree with exhaustive argmax, {ties} with tied maxima"),
    )
}

// ---------------------------------------------------------------------------
// softmax

const FIXED_BITS: u32 = 256;

/// Exact value of a finite f64 scaled by 2^FIXED_BITS, truncated.
fn to_fixed(x: f64) -> BigInt {
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let exponent = ((bits >> 52) & 0x7ff) as i64;
    let fraction = bits & ((1u64 << 52) - 1);
    let (mantissa, exp2) = if exponent == 0 { (fraction, -1074) } else { (fraction | (1u64 << 52), exponent - 1075) };
    let shift = exp2 + FIXED_BITS as i64;
    let m = BigInt::from(mantissa);
    let v = if shift >= 0 { m << shift as usize } else { m >> (-shift) as usize };
    if negative {
        -v
    } else {
        v
    }
}

fn fixed_mul(a: &BigInt, b: &BigInt) -> BigInt {
    (a * b) >> FIXED_BITS as usize
}

/// exp(d) for d <= 0 in fixed point: scale down by 2^10, Taylor series,
/// square back up.
fn fixed_exp(d: &BigInt) -> BigInt {
    let one = BigInt::one() << FIXED_BITS as usize;
    let r: BigInt = d / BigInt::from(1024);
    let mut term = one.clone();
    let mut sum = one.clone();
    for k in 1..200u32 {
        term = fixed_mul(&term, &r) / BigInt::from(k);
        if term.is_zero() {
            break;
        }
        sum += &term;
    }
    for _ in 0..10 {
        sum = fixed_mul(&sum, &sum);
    }
    sum
}

fn oracle_softmax(values: &[f64]) -> Vec<f64> {
    let fixed: Vec<BigInt> = values.iter().map(|v| to_fixed(*v)).collect();
    let max = fixed.iter().max().unwrap().clone();
    let cutoff = BigInt::from(-400) << FIXED_BITS as usize;
    let exps: Vec<BigInt> = fixed
        .iter()
        .map(|v| {
            let d = v - &max;
            if d < cutoff {
                BigInt::zero()
            } else {
                fixed_exp(&d)
            }
        })
        .collect();
    let total: BigInt = exps.iter().sum();
    let scale = 2f64.powi(FIXED_BITS as i32);
    exps.iter()
        .map(|e| {
            let q: BigInt = (e << FIXED_BITS as usize) / &total;
            debug_assert!(!q.is_negative());
            q.to_f64().unwrap() / scale
        })
        .collect()
}

fn random_vector(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(2..=8);
    let magnitude = 10f64.powf(rng.gen_range(-2.0..=4.0));
    (0..n).map(|_| rng.gen_range(-magnitude..=magnitude)).collect()
}

fn softmax_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x50f7);
    let vectors: Vec<Vec<f64>> = (0..10_000).map(|_| random_vector(&mut rng)).collect();
    let mut worst_sum: f64 = 0.0;
    let mut range_ok = 0;
    let mut argmax_ok = 0;
    for v in &vectors {
        let p = softmax(v).expect("finite input");
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        if p.iter().all(|x| *x > 0.0 && *x < 1.0) {
            range_ok += 1;
        }
        if argmax(&p) == argmax(v) {
            argmax_ok += 1;
        }
    }
    // spot samples: 50 from the main pool, 50 with small magnitudes where no
    // class saturates
    let mut spots: Vec<Vec<f64>> = vectors.iter().step_by(200).cloned().collect();
    spots.extend((0..50).map(|_| {
        let n = rng.gen_range(2..=8);
        (0..n).map(|_| rng.gen_range(-12.0..=12.0)).collect::<Vec<f64>>()
    }));
    let mut worst_oracle: f64 = 0.0;
    for v in &spots {
        let got = softmax(v).unwrap();
        for (a, b) in got.iter().zip(oracle_softmax(v)) {
            worst_oracle = worst_oracle.max((a - b).abs());
        }
    }
    let n = vectors.len();
    let passed = worst_sum <= 1e-9 && range_ok == n && argmax_ok == n && worst_oracle <= 1e-12 && spots.len() == 100;
    Outcome::new(
        passed,
        format!(
            "{n} vectors: max |sum-1| {worst_sum:.2e}, {range_ok} strictly in (0,1), {argmax_ok} argmax preserved; \
             {} oracle spots max error {worst_oracle:.2e}",
            spots.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// assembly

fn assembly_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa55e);
    let binary = assemble_binary("Hens lay eggs without roosters.", "Chickens lay eggs without males.").unwrap();
    let choice = assemble_choice("Plants use light.", "Plants need", "sunlight").unwrap();
    let seps_ok = binary.sep_count() == 2 && choice.sep_count() == 3;

    let words = ["sunlight", "water", "soil", "air", "rocks", "sand", "noise", "darkness", "salt", "wind"];
    let mut cases = 0;
    let mut equivariant = 0;
    for k in [3, 4, 5, 8] {
        for _ in 0..25 {
            let mut picked: Vec<&str> = words.to_vec();
            picked.shuffle(&mut rng);
            picked.truncate(k);
            let table: Vec<(&str, f64)> = picked.iter().map(|w| (*w, rng.gen_range(-5.0..5.0))).collect();
            let scorer = TableScorer::new(table.iter().copied());
            let record = |choices: Vec<&str>| QuestionRecord {
                id: "q".into(),
                style: QuestionStyle::RegularQuestion,
                question_text: "What do plants need?".into(),
                context: None,
                choices: choices.iter().map(|c| c.to_string()).collect(),
                gold: None,
            };
            let fact = candidate("q", 0, "Plants use light and water.");
            let base = predict(&record(picked.clone()), &fact, &scorer).unwrap();
            let mut perm: Vec<usize> = (0..k).collect();
            perm.shuffle(&mut rng);
            let permuted_choices: Vec<&str> = perm.iter().map(|&i| picked[i]).collect();
            let moved = predict(&record(permuted_choices.clone()), &fact, &scorer).unwrap();

            let probs_ok = perm
                .iter()
                .enumerate()
                .all(|(j, &i)| (moved.probabilities[j] - base.probabilities[i]).abs() <= 1e-15);
            let (Label::Choice(b), Label::Choice(m)) = (base.predicted, moved.predicted) else { unreachable!() };
            cases += 1;
            if probs_ok && permuted_choices[m] == picked[b] && perm[m] == b {
                equivariant += 1;
            }
        }
    }
    Outcome::new(
        seps_ok && equivariant == cases,
        format!(
            "binary {} SEP, choice {} SEP; {equivariant}/{cases} permutations map probabilities and prediction",
            binary.sep_count(),
            choice.sep_count()
        ),
    )
}

// ---------------------------------------------------------------------------
// reported arithmetic

fn reported_arithmetic() -> Outcome {
    // (label, dev, test, quoted gap)
    let gaps = [
        ("CSQA2 baseline", 69.5, 64.3, 5.2),
        ("CSQA2 with facts", 73.9, 70.8, 3.1),
        ("QASC baseline", 75.4, 72.3, 3.1),
        ("QASC with facts", 84.5, 82.7, 1.8),
        ("SIQA baseline", 81.9, 80.6, 1.3),
        ("SIQA with facts", 83.1, 82.0, 1.0),
    ];
    let mut mismatched = Vec::new();
    for (label, dev, test, quoted) in gaps {
        let got = round1(dev_test_gap(dev, test));
        if got != quoted {
            mismatched.push(format!("{label} gap {got:.1} vs quoted {quoted:.1}"));
        }
    }

    let counts = [("CSQA2", [15, 4, 6]), ("OBQA", [19, 5, 1]), ("QASC", [17, 7, 1]), ("SIQA", [13, 7, 5])];
    let mut labels = Vec::new();
    for (name, c) in counts {
        for (label, n) in QualityLabel::ALL.into_iter().zip(c) {
            labels.extend(std::iter::repeat_n((name.to_string(), label), n));
        }
    }
    let table = quality_stats(&labels).unwrap();
    let dh: Vec<u32> = counts.iter().map(|(n, _)| table.dataset(n).unwrap().rounded_percent(QualityLabel::DH)).collect();
    let dh_ok = dh == [60, 76, 68, 52];

    let cell = |dataset: Option<&str>, label, count: Option<usize>, percent| ReportedCell {
        dataset: dataset.map(str::to_string),
        label,
        count,
        percent,
    };
    use QualityLabel::{DH, PH, UH};
    let reported = [
        cell(Some("CSQA2"), DH, Some(15), 60),
        cell(Some("OBQA"), DH, Some(19), 76),
        cell(Some("QASC"), DH, Some(17), 68),
        cell(Some("SIQA"), DH, Some(13), 52),
        cell(None, DH, None, 64),
        cell(Some("CSQA2"), PH, Some(4), 16),
        cell(Some("OBQA"), PH, Some(5), 20),
        cell(Some("QASC"), PH, Some(7), 28),
        cell(Some("SIQA"), PH, Some(7), 28),
        cell(None, PH, None, 23),
        cell(Some("CSQA2"), UH, Some(6), 24),
        cell(Some("OBQA"), UH, Some(1), 4),
        cell(Some("QASC"), UH, Some(1), 4),
        cell(Some("SIQA"), UH, Some(5), 12),
        cell(None, UH, None, 13),
    ];
    let flagged = compare_with_reported(&table, &reported);
    let flagged_ok = flagged.len() == 1
        && flagged[0].cell.dataset.as_deref() == Some("SIQA")
        && flagged[0].cell.label == UH
        && flagged[0].computed_percent == 20.0;
    let flagged_text: Vec<String> = flagged.iter().map(|d| d.to_string()).collect();

    let passed = mismatched.is_empty() && dh_ok && flagged_ok;
    let gap_text =
        if mismatched.is_empty() { "all 6 gaps reproduced".to_string() } else { mismatched.join("; ") };
    Outcome::new(
        passed,
        format!("{gap_text}; DH percentages {dh:?}; flagged cells: {}", flagged_text.join(", ")),
    )
}

// ---------------------------------------------------------------------------
// end to end

fn synthetic_records(n: usize) -> Vec<QuestionRecord> {
    let subjects = ["iron nail", "glass cup", "oak table", "wool scarf", "copper wire"];
    (0..n)
        .map(|i| QuestionRecord {
            id: format!("r{i:02}"),
            style: QuestionStyle::RegularQuestion,
            question_text: format!("Which property best describes a {} in case {i}?", subjects[i % subjects.len()]),
            context: None,
            choices: vec!["hard metal".into(), "soft fabric".into(), "clear glass".into(), "dense wood".into()],
            gold: Some(Label::Choice(i % 4)),
        })
        .collect()
}

fn config_for(root: &Path, data: &Path, max_in_flight: usize, completion: CompletionSection, mode: SelectionMode) -> RunConfig {
    RunConfig {
        dataset: DatasetSection {
            name: "Synthetic".into(),
            style: Some(QuestionStyle::RegularQuestion),
            path: data.to_path_buf(),
            expected_choice_count: None,
        },
        template_dir: None,
        sampling: SamplingSection::default(),
        completion,
        embedding: EmbeddingSection::Hashing { dimension: 128, seed: 3 },
        scorer: ScorerSection::Overlap,
        selection_mode: mode,
        output_dir: root.to_path_buf(),
        max_in_flight,
        retry: RetrySection { max_attempts: 3, base_delay_ms: 0 },
    }
}

const ARTIFACTS: [&str; 8] = [
    pipeline::FACTS,
    pipeline::GENERATE_FAILURES,
    pipeline::SELECTION,
    pipeline::SELECT_FAILURES,
    pipeline::PREDICTIONS,
    pipeline::PREDICT_FAILURES,
    pipeline::REPORT_TXT,
    pipeline::REPORT_JSON,
];

fn full_run(config: RunConfig) -> Result<Vec<Vec<u8>>, String> {
    let ctx = RunContext::prepare(config).map_err(|e| e.to_string())?;
    let completion = pipeline::build_completion(&ctx.config).map_err(|e| e.to_string())?;
    let encoder = pipeline::build_encoder(&ctx.config).map_err(|e| e.to_string())?;
    let scorer = pipeline::build_scorer(&ctx.config, &ctx.records);
    let codes = [
        pipeline::cmd_generate(&ctx, completion.as_ref()).map_err(|e| e.to_string())?.exit_code(),
        pipeline::cmd_select(&ctx, Some(encoder.as_ref()), None).map_err(|e| e.to_string())?.exit_code(),
        pipeline::cmd_predict(&ctx, scorer.as_ref(), None).map_err(|e| e.to_string())?.exit_code(),
    ];
    if codes != [0, 0, 0] {
        return Err(format!("stage exit codes {codes:?}"));
    }
    pipeline::cmd_eval(&ctx, None, None).map_err(|e| e.to_string())?;
    ARTIFACTS.iter().map(|a| fs::read(ctx.path(a)).map_err(|e| format!("{a}: {e}"))).collect()
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("synthetic.jsonl");
    fs::write(&data, dataset_to_jsonl(&synthetic_records(20))).unwrap();
    let synthetic = || CompletionSection::Synthetic { seed: 11 };
    let runs = [("first", 1), ("second", 1), ("parallel", 4)].map(|(name, mif)| {
        let root = tmp.path().join(name);
        (name, full_run(config_for(&root, &data, mif, synthetic(), SelectionMode::Dpr)))
    });
    // rerun into an existing output directory: every record comes from cache
    let cached = full_run(config_for(&tmp.path().join("parallel"), &data, 4, synthetic(), SelectionMode::Dpr));

    let mut problems = Vec::new();
    let reference = match &runs[0].1 {
        Ok(r) => r.clone(),
        Err(e) => return Outcome::new(false, format!("first run failed: {e}")),
    };
    for (name, result) in runs.iter().skip(1).map(|(n, r)| (*n, r)).chain([("cached", &cached)]) {
        match result {
            Ok(files) => {
                for (artifact, (a, b)) in ARTIFACTS.iter().zip(reference.iter().zip(files)) {
                    if a != b {
                        problems.push(format!("{name}: {artifact} differs"));
                    }
                }
            }
            Err(e) => problems.push(format!("{name}: {e}")),
        }
    }
    let predictions = String::from_utf8_lossy(&reference[4]).lines().count();
    Outcome::new(
        problems.is_empty() && predictions == 20,
        if problems.is_empty() {
            format!("{} artifacts byte-identical over 2 serial, 1 parallel and 1 cached run; {predictions} predictions", ARTIFACTS.len())
        } else {
            problems.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------
// ablation

fn selection_ablation() -> Outcome {
    let question = "Where is the device to measure wind placed?";
    let facts = [
        "Wind is measured in the basement of weather labs.",
        "An anemometer spins when the wind blows.",
        "Anemometers sit at the top of a weather station.",
    ];
    let record = QuestionRecord {
        id: "wind".into(),
        style: QuestionStyle::RegularQuestion,
        question_text: question.into(),
        context: None,
        choices: vec!["at the top of a station".into(), "in the basement".into(), "under the ground".into(), "inside a drawer".into()],
        gold: Some(Label::Choice(0)),
    };
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("wind.jsonl");
    fs::write(&data, dataset_to_jsonl(std::slice::from_ref(&record))).unwrap();
    let script = tmp.path().join("script.json");
    fs::write(&script, serde_json::json!({ question: facts }).to_string()).unwrap();

    let encoder = TableEncoder {
        dimension: 3,
        vectors: [
            (question, vec![1.0, 0.0, 0.0]),
            (facts[0], vec![0.1, 1.0, 0.0]),
            (facts[1], vec![0.5, 0.0, 1.0]),
            (facts[2], vec![0.9, 0.0, 0.0]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect(),
    };

    let mut outcomes = Vec::new();
    for mode in [SelectionMode::Dpr, SelectionMode::Passthrough] {
        let completion = CompletionSection::Scripted { path: script.clone(), model_id: "scripted".into() };
        let mut config = config_for(tmp.path(), &data, 1, completion, mode);
        config.dataset.name = "OBQA".into();
        config.dataset.style = None;
        let ctx = RunContext::prepare(config).unwrap();
        let backend = pipeline::build_completion(&ctx.config).unwrap();
        pipeline::cmd_generate(&ctx, backend.as_ref()).unwrap();
        let enc: Option<&dyn DualEncoder> = (mode == SelectionMode::Dpr).then_some(&encoder as &dyn DualEncoder);
        pipeline::cmd_select(&ctx, enc, None).unwrap();
        pipeline::cmd_predict(&ctx, &OverlapScorer, None).unwrap();
        let selection: Vec<SelectionRow> = pipeline::read_jsonl(&ctx.path(pipeline::SELECTION)).unwrap();
        let predictions: Vec<PredictionLine> = pipeline::read_jsonl(&ctx.path(pipeline::PREDICTIONS)).unwrap();
        let report = pipeline::cmd_eval(&ctx, None, None).unwrap();
        outcomes.push((selection[0].chosen_index, predictions[0].predicted, report.n_correct));
    }
    let (dpr, pass) = (outcomes[0], outcomes[1]);
    let passed = dpr == (2, Label::Choice(0), 1) && pass.0 == 0 && pass.1 != Label::Choice(0) && pass.2 == 0;
    Outcome::new(
        passed,
        format!(
            "dpr chose sample {} and predicted {} (correct: {}); passthrough chose sample {} and predicted {} (correct: {})",
            dpr.0,
            dpr.1,
            dpr.2 == 1,
            pass.0,
            pass.1,
            pass.2 == 1
        ),
    )
}

// ---------------------------------------------------------------------------
// zero-shot parsing

fn zero_shot_parsing() -> Outcome {
    use ParseRule::{ChoiceTextMatch as Text, LeadingLetter as Lead, LetterWithDot as Dot, Unparseable as None_};
    let four = ["water", "sunlight", "soil", "air"];
    let three = ["yes", "no", "maybe"];
    let stars = ["star", "closest star", "moon"];
    let apples = ["red", "red apple", "green"];
    let eight = ["wind", "rain", "snow", "hail", "fog", "dew", "frost", "sleet"];
    let corpus: [(&str, &[&str], Option<usize>, ParseRule); 30] = [
        ("A", &four, Some(0), Lead),
        ("B", &four, Some(1), Lead),
        ("C.", &four, Some(2), Lead),
        ("D. air", &four, Some(3), Lead),
        ("  B sunlight", &four, Some(1), Lead),
        ("A\nBecause plants need water", &four, Some(0), Lead),
        ("A. water\nB. sunlight", &four, Some(0), Lead),
        ("C", &three, Some(2), Lead),
        ("H.", &eight, Some(7), Lead),
        ("The answer is B. sunlight", &four, Some(1), Dot),
        ("I think C. soil is right", &four, Some(2), Dot),
        ("Answer: D.", &four, Some(3), Dot),
        ("Option A. water", &four, Some(0), Dot),
        ("My pick: B.", &three, Some(1), Dot),
        ("sunlight", &four, Some(1), Text),
        ("Plants grow toward sunlight.", &four, Some(1), Text),
        ("They need soil and water", &four, Some(2), Text),
        ("WATER", &four, Some(0), Text),
        ("The correct choice is\nC. soil", &four, Some(2), Text),
        ("XB. sunlight", &four, Some(1), Text),
        ("(C) soil", &four, Some(2), Text),
        ("the closest star", &stars, Some(1), Text),
        ("a red apple", &apples, Some(1), Text),
        ("E", &four, None, None_),
        ("xyz", &four, None, None_),
        ("", &four, None, None_),
        ("I don't know", &four, None, None_),
        ("AB", &four, None, None_),
        ("D", &three, None, None_),
        ("b", &four, None, None_),
    ];
    let mut disagreements = Vec::new();
    for (completion, choices, index, rule) in corpus {
        let choices: Vec<String> = choices.iter().map(|c| c.to_string()).collect();
        let parsed = parse_answer(completion, &choices);
        if parsed.choice_index != index || parsed.parse_rule_fired != rule || parsed.raw_completion != completion {
            disagreements.push(format!("{completion:?} -> {:?} via {:?}", parsed.choice_index, parsed.parse_rule_fired));
        }
    }
    Outcome::new(
        disagreements.is_empty(),
        if disagreements.is_empty() {
            format!("{}/{} cases agree with hand labels", corpus.len(), corpus.len())
        } else {
            format!("{} disagreements: {}", disagreements.len(), disagreements.join("; "))
        },
    )
}
