use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Manual judgement of a generated fact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QualityLabel {
    /// Directly helpful.
    DH,
    /// Potentially helpful.
    PH,
    /// Unhelpful: irrelevant or wrong.
    UH,
}

impl QualityLabel {
    pub const ALL: [QualityLabel; 3] = [QualityLabel::DH, QualityLabel::PH, QualityLabel::UH];

    fn slot(self) -> usize {
        match self {
            QualityLabel::DH => 0,
            QualityLabel::PH => 1,
            QualityLabel::UH => 2,
        }
    }
}

impl fmt::Display for QualityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QualityLabel::DH => "DH",
            QualityLabel::PH => "PH",
            QualityLabel::UH => "UH",
        })
    }
}

impl FromStr for QualityLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "DH" => Ok(QualityLabel::DH),
            "PH" => Ok(QualityLabel::PH),
            "UH" => Ok(QualityLabel::UH),
            other => Err(format!("unknown quality label {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetQuality {
    pub dataset: String,
    /// Indexed DH, PH, UH.
    pub counts: [usize; 3],
}

impl DatasetQuality {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count(&self, label: QualityLabel) -> usize {
        self.counts[label.slot()]
    }

    /// Exact share in percent.
    pub fn percent(&self, label: QualityLabel) -> f64 {
        100.0 * self.count(label) as f64 / self.total() as f64
    }

    pub fn rounded_percent(&self, label: QualityLabel) -> u32 {
        self.percent(label).round() as u32
    }
}

/// Per-dataset tallies (in first-seen order) plus the pooled row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct QualityTable {
    pub datasets: Vec<DatasetQuality>,
    pub overall: DatasetQuality,
}

impl QualityTable {
    pub fn dataset(&self, name: &str) -> Option<&DatasetQuality> {
        self.datasets.iter().find(|d| d.dataset == name)
    }

    /// Counts with per-dataset percentages in parentheses, integer precision.
    pub fn render(&self) -> String {
        let mut out = String::from("Cat.");
        for d in &self.datasets {
            let _ = write!(out, "\t{}", d.dataset);
        }
        out.push_str("\tOverall\n");
        for label in QualityLabel::ALL {
            let _ = write!(out, "{label}");
            for d in &self.datasets {
                let _ = write!(out, "\t{} ({}%)", d.count(label), d.rounded_percent(label));
            }
            let _ = writeln!(out, "\t{}%", self.overall.rounded_percent(label));
        }
        out
    }
}

pub fn quality_stats<S: AsRef<str>>(labels: &[(S, QualityLabel)]) -> Result<QualityTable, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut datasets: Vec<DatasetQuality> = Vec::new();
    let mut overall = DatasetQuality { dataset: "Overall".into(), counts: [0; 3] };
    for (name, label) in labels {
        let name = name.as_ref();
        let idx = match datasets.iter().position(|d| d.dataset == name) {
            Some(i) => i,
            None => {
                datasets.push(DatasetQuality { dataset: name.to_string(), counts: [0; 3] });
                datasets.len() - 1
            }
        };
        datasets[idx].counts[label.slot()] += 1;
        overall.counts[label.slot()] += 1;
    }
    Ok(QualityTable { datasets, overall })
}

/// A published cell to check against recomputed statistics. `dataset: None`
/// refers to the pooled row.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportedCell {
    pub dataset: Option<String>,
    pub label: QualityLabel,
    pub count: Option<usize>,
    pub percent: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discrepancy {
    pub cell: ReportedCell,
    pub computed_count: usize,
    pub computed_percent: f64,
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: reported {}% but counts give {:.1}% ({} items)",
            self.cell.dataset.as_deref().unwrap_or("Overall"),
            self.cell.label,
            self.cell.percent,
            self.computed_percent,
            self.computed_count
        )
    }
}

/// Cells whose count or rounded percentage disagrees with the recomputation.
pub fn compare_with_reported(table: &QualityTable, reported: &[ReportedCell]) -> Vec<Discrepancy> {
    reported
        .iter()
        .filter_map(|cell| {
            let row = match &cell.dataset {
                None => Some(&table.overall),
                Some(name) => table.dataset(name),
            };
            let (count, percent) = match row {
                Some(r) => (r.count(cell.label), r.percent(cell.label)),
                None => (0, f64::NAN),
            };
            let count_ok = cell.count.is_none_or(|c| c == count);
            let percent_ok = percent.round() as u32 == cell.percent && percent.is_finite();
            (!(count_ok && percent_ok)).then(|| Discrepancy {
                cell: cell.clone(),
                computed_count: count,
                computed_percent: percent,
            })
        })
        .collect()
}
