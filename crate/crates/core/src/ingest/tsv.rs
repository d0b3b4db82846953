use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{HydraError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Class(usize),
    Value(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub text: String,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledData {
    pub examples: Vec<LabeledExample>,
    /// Class names by index; empty for regression.
    pub label_names: Vec<String>,
}

pub const HEADER: &str = "text\tlabel";

pub fn load_labeled_tsv(input: impl BufRead, kind: TaskKind) -> Result<LabeledData> {
    load_labeled_tsv_with_labels(input, kind, &[])
}

/// Like [`load_labeled_tsv`], but class indices continue from `known` so a dev
/// file maps labels the same way as its training file.
pub fn load_labeled_tsv_with_labels(input: impl BufRead, kind: TaskKind, known: &[String]) -> Result<LabeledData> {
    let mut label_names: Vec<String> = known.to_vec();
    let mut examples = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| HydraError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches('\r');
        if line_no == 1 {
            if line != HEADER {
                return Err(HydraError::Parse {
                    line: 1,
                    message: format!("expected header {HEADER:?}, found {line:?}"),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(HydraError::Parse {
                line: line_no,
                message: format!("expected 2 tab-separated columns, found {}", cols.len()),
            });
        }
        let label = match kind {
            TaskKind::Classification => {
                let name = cols[1].trim();
                let idx = match label_names.iter().position(|n| n == name) {
                    Some(i) => i,
                    None => {
                        label_names.push(name.to_string());
                        label_names.len() - 1
                    }
                };
                Label::Class(idx)
            }
            TaskKind::Regression => {
                let v: f64 = cols[1].trim().parse().map_err(|_| HydraError::Parse {
                    line: line_no,
                    message: format!("non-numeric label {:?}", cols[1]),
                })?;
                if !v.is_finite() {
                    return Err(HydraError::Parse {
                        line: line_no,
                        message: "label must be finite".into(),
                    });
                }
                Label::Value(v)
            }
        };
        examples.push(LabeledExample {
            text: cols[0].to_string(),
            label,
        });
    }
    Ok(LabeledData { examples, label_names })
}

pub fn write_labeled_tsv(data: &LabeledData) -> String {
    let mut out = format!("{HEADER}\n");
    for ex in &data.examples {
        let label = match ex.label {
            Label::Class(i) => data.label_names[i].clone(),
            Label::Value(v) => v.to_string(),
        };
        out.push_str(&format!("{}\t{label}\n", ex.text));
    }
    out
}
