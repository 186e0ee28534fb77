//! Evaluation protocols over JSONL records and the metric table they produce.

use std::fmt::{self, Write as _};
use std::io::BufRead;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bleu::{BleuStats, MAX_ORDER};
use super::cider::CiderD;
use super::rouge::rouge_l_tokens;
use super::tokenize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question: String,
    pub ground_truth_answer: String,
    pub predicted_answer: String,
    pub references: Vec<String>,
    pub hypothesis: String,
    /// Set when the prompt was conditioned on the ground-truth answer.
    #[serde(default)]
    pub gt_conditioned: bool,
}

impl EvalRecord {
    pub fn validate(&self) -> Result<()> {
        if self.references.is_empty() {
            return Err(Error::invalid(format!(
                "record {:?} has no references",
                self.question
            )));
        }
        Ok(())
    }

    pub fn answer_correct(&self) -> bool {
        normalize_answer(&self.predicted_answer) == normalize_answer(&self.ground_truth_answer)
    }
}

/// Case-fold, drop leading articles, collapse whitespace.
pub fn normalize_answer(a: &str) -> String {
    let lower = a.to_lowercase();
    let mut words: &[&str] = &lower.split_whitespace().collect::<Vec<_>>();
    while let Some((first, rest)) = words.split_first() {
        if matches!(*first, "a" | "an" | "the") {
            words = rest;
        } else {
            break;
        }
    }
    words.join(" ")
}

/// Reads one record per non-blank line.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvalRecord = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)))?;
        rec.validate()
            .map_err(|e| Error::invalid(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    All,
    GtConditioned,
    AnswerCorrect,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [
        EvalMode::All,
        EvalMode::GtConditioned,
        EvalMode::AnswerCorrect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::All => "all",
            EvalMode::GtConditioned => "gt_conditioned",
            EvalMode::AnswerCorrect => "answer_correct",
        }
    }
}

impl FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown mode {s:?} (expected all, gt_conditioned or answer_correct)"
                ))
            })
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Raw corpus-level scores: BLEU and ROUGE-L in [0, 1], CIDEr-D on its
/// native ×10 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub count: usize,
    pub bleu: [f64; MAX_ORDER],
    pub rouge_l: f64,
    pub cider_d: f64,
    pub cider_degenerate: bool,
}

impl MetricScores {
    /// Available metrics in table units (×100), in column order.
    pub fn table_values(&self) -> [f64; 6] {
        [
            self.bleu[0] * 100.0,
            self.bleu[1] * 100.0,
            self.bleu[2] * 100.0,
            self.bleu[3] * 100.0,
            self.rouge_l * 100.0,
            self.cider_d * 100.0,
        ]
    }

    /// Mean over the available metrics in table units.
    pub fn mean_of_metrics(&self) -> f64 {
        let v = self.table_values();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Scores a set of records at corpus level. Returns `None` for an empty set.
pub fn score_records(records: &[&EvalRecord]) -> Result<Option<MetricScores>> {
    if records.is_empty() {
        return Ok(None);
    }
    let tokenized: Vec<(Vec<String>, Vec<Vec<String>>)> = records
        .par_iter()
        .map(|r| {
            (
                tokenize(&r.hypothesis),
                r.references.iter().map(|s| tokenize(s)).collect(),
            )
        })
        .collect();
    let per_item: Vec<(BleuStats, f64)> = tokenized
        .par_iter()
        .map(|(h, refs)| (BleuStats::of(h, refs), rouge_l_tokens(h, refs)))
        .collect();
    let mut stats = BleuStats::default();
    let mut rouge = 0.0;
    for (s, r) in &per_item {
        stats.merge(s);
        rouge += r;
    }
    let (hyps, refs): (Vec<_>, Vec<_>) = tokenized.into_iter().unzip();
    let cider = CiderD::default().score(&hyps, &refs)?;
    let mut bleu = [0.0; MAX_ORDER];
    for (n, b) in bleu.iter_mut().enumerate() {
        *b = stats.score(n + 1)?;
    }
    Ok(Some(MetricScores {
        count: records.len(),
        bleu,
        rouge_l: rouge / records.len() as f64,
        cider_d: cider.mean,
        cider_degenerate: cider.degenerate,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub scores: Option<MetricScores>,
    /// Extra named columns, rendered before the metrics.
    #[serde(default)]
    pub extra: Vec<(String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub key: String,
    pub rows: Vec<MetricRow>,
}

const METRIC_HEADERS: [&str; 9] = [
    "B1", "B2", "B3", "B4", "METEOR", "ROUGE-L", "CIDEr-D", "SPICE", "mean",
];
const ABSENT: &str = "absent";
const UNAVAILABLE: &str = "n/a";

impl MetricTable {
    pub fn new(key: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            rows: Vec::new(),
        }
    }

    fn extra_headers(&self) -> Vec<String> {
        let mut h: Vec<String> = Vec::new();
        for row in &self.rows {
            for (k, _) in &row.extra {
                if !h.contains(k) {
                    h.push(k.clone());
                }
            }
        }
        h
    }

    fn cells(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let extras = self.extra_headers();
        let mut header = vec![self.key.clone()];
        header.extend(extras.iter().cloned());
        header.push("n".into());
        header.extend(METRIC_HEADERS.iter().map(|s| s.to_string()));
        let body = self
            .rows
            .iter()
            .map(|row| {
                let mut cells = vec![row.label.clone()];
                for k in &extras {
                    let v = row
                        .extra
                        .iter()
                        .find(|(name, _)| name == k)
                        .map(|(_, v)| v.clone());
                    cells.push(v.unwrap_or_default());
                }
                match &row.scores {
                    None => {
                        cells.push("0".into());
                        cells.extend(METRIC_HEADERS.iter().map(|_| ABSENT.to_string()));
                    }
                    Some(s) => {
                        let v = s.table_values();
                        cells.push(s.count.to_string());
                        cells.extend(v[..4].iter().map(|x| format!("{x:.4}")));
                        cells.push(UNAVAILABLE.into());
                        cells.push(format!("{:.4}", v[4]));
                        let c = format!("{:.4}", v[5]);
                        cells.push(if s.cider_degenerate {
                            format!("{c}*")
                        } else {
                            c
                        });
                        cells.push(UNAVAILABLE.into());
                        cells.push(format!("{:.4}", s.mean_of_metrics()));
                    }
                }
                cells
            })
            .collect();
        (header, body)
    }

    pub fn to_tsv(&self) -> String {
        let (header, body) = self.cells();
        let mut out = header.join("\t");
        out.push('\n');
        for row in body {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn to_pretty(&self) -> String {
        let (header, body) = self.cells();
        let mut widths: Vec<usize> = header.iter().map(String::len).collect();
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule);
        for row in &body {
            line(&mut out, row);
        }
        if self
            .rows
            .iter()
            .any(|r| r.scores.as_ref().is_some_and(|s| s.cider_degenerate))
        {
            out.push_str("* CIDEr-D over fewer than two items; idf is degenerate\n");
        }
        out.push_str(
            "Scores x100. METEOR and SPICE need external resources and are not computed.\n",
        );
        out
    }
}

/// Evaluates `records` under one protocol.
pub fn evaluate(records: &[EvalRecord], mode: EvalMode) -> Result<MetricTable> {
    for r in records {
        r.validate()?;
    }
    let selected: Vec<&EvalRecord> = match mode {
        EvalMode::All => records.iter().collect(),
        EvalMode::GtConditioned => {
            let unflagged = records.iter().filter(|r| !r.gt_conditioned).count();
            if unflagged > 0 {
                log::warn!("{unflagged} record(s) were not generated with the ground-truth answer in the prompt");
            }
            records.iter().collect()
        }
        EvalMode::AnswerCorrect => records.iter().filter(|r| r.answer_correct()).collect(),
    };
    let mut table = MetricTable::new("mode");
    table.rows.push(MetricRow {
        label: mode.name().into(),
        scores: score_records(&selected)?,
        extra: Vec::new(),
    });
    Ok(table)
}
