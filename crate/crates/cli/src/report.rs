//! Text summary and JSON result file.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use tsci_core::multisplit::Aggregation;
use tsci_core::TsciResult;

use crate::{CliError, CliResult};

pub const SCHEMA: &str = "tsci-result/1";

/// Structured result file: the full `TsciResult` under a schema tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema: String,
    pub result: TsciResult,
}

pub fn to_json(result: &TsciResult) -> CliResult<String> {
    let doc = ResultDocument {
        schema: SCHEMA.to_string(),
        result: result.clone(),
    };
    serde_json::to_string_pretty(&doc)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Estimation(format!("cannot serialize result: {e}")))
}

pub fn from_json(text: &str) -> CliResult<TsciResult> {
    let doc: ResultDocument = serde_json::from_str(text)
        .map_err(|e| CliError::Validation(format!("result file: {e}")))?;
    if doc.schema != SCHEMA {
        return Err(CliError::Validation(format!(
            "unsupported result schema `{}`",
            doc.schema
        )));
    }
    Ok(doc.result)
}

fn num(v: f64) -> String {
    format!("{v:.5}")
}

fn opt(v: Option<f64>, missing: &str) -> String {
    v.map(num).unwrap_or_else(|| missing.to_string())
}

fn percent(p: f64) -> String {
    let s = format!("{:.4}", p * 100.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("{s} %")
}

/// Right-aligned table with left-aligned row labels.
fn table(out: &mut String, header: &[String], rows: &[(String, Vec<String>)]) {
    let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let widths: Vec<usize> = header
        .iter()
        .enumerate()
        .map(|(j, h)| {
            rows.iter()
                .map(|r| r.1[j].len())
                .chain([h.len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let _ = write!(out, "{:label_w$}", "");
    for (h, w) in header.iter().zip(&widths) {
        let _ = write!(out, " {h:>w$}");
    }
    out.push('\n');
    for (label, cells) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(out, " {c:>w$}");
        }
        out.push('\n');
    }
}

fn estimate_header(alpha: f64) -> Vec<String> {
    vec![
        "Estimate".into(),
        "Std_Error".into(),
        percent(alpha / 2.0),
        percent(1.0 - alpha / 2.0),
        "Pr(>|t|)".into(),
    ]
}

pub fn render_text(r: &TsciResult, extended: bool) -> String {
    let mut out = String::new();
    let o = &mut out;

    o.push_str("Statistics about the data splitting procedure:\n");
    match r.n_a2 {
        Some(a2) => {
            let _ = writeln!(o, "Sample size A1: {}", r.n_a1);
            let _ = writeln!(o, "Sample size A2: {a2}");
            let _ = writeln!(o, "Number of data splits: {}", r.nsplits);
            let _ = writeln!(o, "Aggregation method: {}", r.aggregation);
            if r.failed_splits > 0 {
                let _ = writeln!(o, "Failed data splits (excluded): {}", r.failed_splits);
            }
        }
        None => {
            let _ = writeln!(o, "Sample size: {}", r.n);
            o.push_str("No sample splitting was performed.\n");
        }
    }

    o.push_str("\nStatistics about the validity of the instrument(s):\n");
    let v = &r.validity;
    let _ = writeln!(
        o,
        "{:>12} {:>12} {:>12}",
        "valid", "invalid", "non_testable"
    );
    let _ = writeln!(
        o,
        "{:>12} {:>12} {:>12}",
        v.valid, v.invalid, v.non_testable
    );

    o.push_str("\nTreatment effect estimate of selected violation space candidate(s):\n");
    let se_missing = if r.aggregation == Aggregation::Fwer {
        "."
    } else {
        "NA"
    };
    table(
        o,
        &estimate_header(r.alpha),
        &[(
            "TSCI-Estimate".into(),
            vec![
                num(r.beta),
                opt(r.se, se_missing),
                num(r.ci.0),
                num(r.ci.1),
                num(r.p),
            ],
        )],
    );
    let _ = writeln!(o, "Selection method: {}", r.sel_method);
    if r.interpret_carefully > 0 {
        let _ = writeln!(
            o,
            "Note: the selected candidate equals Qmax in {} of {} split(s); interpret the estimate carefully.",
            r.interpret_carefully, r.nsplits
        );
    }

    if extended {
        o.push_str("\nTreatment effect estimates of all violation space candidates:\n");
        let rows: Vec<(String, Vec<String>)> = r
            .candidates
            .iter()
            .map(|c| {
                let ci = c.ci.map_or((None, None), |(a, b)| (Some(a), Some(b)));
                (
                    format!("TSCI-q{}", c.q),
                    vec![
                        opt(c.beta, "NA"),
                        opt(c.se, if c.beta.is_some() { se_missing } else { "NA" }),
                        opt(ci.0, "NA"),
                        opt(ci.1, "NA"),
                        opt(c.p, "NA"),
                    ],
                )
            })
            .collect();
        table(o, &estimate_header(r.alpha), &rows);
    }

    o.push_str("\nStatistics about the treatment model:\n");
    let _ = writeln!(o, "Estimation method: {}", r.learner);

    o.push_str("\nStatistics about the violation space selection:\n");
    let rows: Vec<(String, Vec<String>)> = r
        .tallies
        .iter()
        .map(|t| {
            (
                format!("q{}", t.q),
                vec![
                    t.q_comp.to_string(),
                    t.q_cons.to_string(),
                    t.q_max.to_string(),
                ],
            )
        })
        .collect();
    table(o, &["q_comp".into(), "q_cons".into(), "Qmax".into()], &rows);

    if extended {
        o.push_str("\nStatistics about the IV strength:\n");
        let rows: Vec<(String, Vec<String>)> = r
            .candidates
            .iter()
            .map(|c| {
                let s = if c.strength.is_infinite() {
                    "Inf".to_string()
                } else {
                    format!("{:.2}", c.strength)
                };
                (format!("q{}", c.q), vec![s, format!("{:.2}", c.threshold)])
            })
            .collect();
        table(o, &["IV_Strength".into(), "IV_Threshold".into()], &rows);
    }
    out
}
