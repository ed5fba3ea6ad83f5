use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, QualityLabel};

/// One (question, chosen fact) pair to judge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotationItem {
    pub question_id: String,
    pub dataset: String,
    pub question: String,
    pub fact: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub question_id: String,
    pub dataset: String,
    pub label: QualityLabel,
    pub annotator: String,
    pub timestamp: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SessionSummary {
    pub already_labeled: usize,
    pub labeled_now: usize,
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>, EvalError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::MalformedLabel { line_no: i + 1, reason: e.to_string() })
        })
        .collect()
}

fn parse_key(input: &str) -> Option<Result<QualityLabel, ()>> {
    match input.trim().to_ascii_lowercase().as_str() {
        "d" | "dh" | "1" => Some(Ok(QualityLabel::DH)),
        "p" | "ph" | "2" => Some(Ok(QualityLabel::PH)),
        "u" | "uh" | "3" => Some(Ok(QualityLabel::UH)),
        "q" | "quit" => Some(Err(())),
        _ => None,
    }
}

/// Terminal review loop.
///
/// Items whose id already appears in `labels_path` are skipped. Every accepted
/// keystroke is appended and flushed immediately, so quitting (`q`) or EOF
/// loses nothing; both end the session with `InterruptedSession`.
pub fn annotate_facts<R: BufRead, W: Write>(
    items: &[AnnotationItem],
    labels_path: &Path,
    annotator: &str,
    mut input: R,
    mut output: W,
) -> Result<SessionSummary, EvalError> {
    let done: HashSet<String> = read_labels(labels_path)?.into_iter().map(|r| r.question_id).collect();
    let pending: Vec<&AnnotationItem> = items.iter().filter(|i| !done.contains(&i.question_id)).collect();
    let already_labeled = items.len() - pending.len();
    let mut file = OpenOptions::new().create(true).append(true).open(labels_path)?;

    let mut labeled_now = 0;
    for item in pending {
        writeln!(
            output,
            "\n[{}/{}] {} ({})\nQuestion: {}\nFact:     {}",
            already_labeled + labeled_now + 1,
            items.len(),
            item.question_id,
            item.dataset,
            item.question,
            item.fact
        )?;
        let label = loop {
            write!(output, "[d]irectly helpful, [p]otentially helpful, [u]nhelpful, [q]uit > ")?;
            output.flush()?;
            let mut line = String::new();
            if input.read_line(&mut line)? == 0 {
                return Err(EvalError::InterruptedSession { labeled: labeled_now });
            }
            match parse_key(&line) {
                Some(Ok(label)) => break label,
                Some(Err(())) => return Err(EvalError::InterruptedSession { labeled: labeled_now }),
                None => writeln!(output, "unrecognized key {:?}", line.trim())?,
            }
        };
        let row = LabelRow {
            question_id: item.question_id.clone(),
            dataset: item.dataset.clone(),
            label,
            annotator: annotator.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        };
        let mut bytes = serde_json::to_vec(&row).map_err(io::Error::from)?;
        bytes.push(b'\n');
        file.write_all(&bytes)?;
        file.flush()?;
        labeled_now += 1;
    }
    Ok(SessionSummary { already_labeled, labeled_now })
}
