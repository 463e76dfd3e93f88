//! Exact match, token F1, Jaccard and word error rate with SQuAD-style
//! answer normalisation, plus per-language aggregation and table output.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::text::{is_cjk, is_punctuation};
use crate::error::{Error, Result};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, drop punctuation, drop `a`/`an`/`the`, split on whitespace,
/// then split CJK characters into their own tokens.
pub fn normalize_answer(s: &str) -> Vec<String> {
    let cleaned: String = s.to_lowercase().chars().filter(|&c| !is_punctuation(c)).collect();
    let mut out = Vec::new();
    for word in cleaned.split_whitespace().filter(|w| !ARTICLES.contains(w)) {
        let mut run = String::new();
        for c in word.chars() {
            if is_cjk(c) {
                if !run.is_empty() {
                    out.push(std::mem::take(&mut run));
                }
                out.push(c.to_string());
            } else {
                run.push(c);
            }
        }
        if !run.is_empty() {
            out.push(run);
        }
    }
    out
}

fn max_over(golds: &[&str], f: impl Fn(&[String]) -> f64) -> f64 {
    golds
        .iter()
        .map(|g| f(&normalize_answer(g)))
        .fold(0.0, f64::max)
}

pub fn exact_match(pred: &str, golds: &[&str]) -> f64 {
    let p = normalize_answer(pred);
    max_over(golds, |g| if g == p.as_slice() { 1.0 } else { 0.0 })
}

fn f1_tokens(p: &[String], g: &[String]) -> f64 {
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in g {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Multiset token overlap F1, maximised over golds.
pub fn token_f1(pred: &str, golds: &[&str]) -> f64 {
    let p = normalize_answer(pred);
    max_over(golds, |g| f1_tokens(&p, g))
}

fn jaccard_tokens(p: &[String], g: &[String]) -> f64 {
    let a: BTreeSet<&String> = p.iter().collect();
    let b: BTreeSet<&String> = g.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Set intersection over union, maximised over golds.
pub fn jaccard(pred: &str, golds: &[&str]) -> f64 {
    let p = normalize_answer(pred);
    max_over(golds, |g| jaccard_tokens(&p, g))
}

/// Word-level Levenshtein distance.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance over reference length, minimised over golds whose
/// normalised form is non-empty. With only empty golds the result is 0 for
/// an empty prediction and 1 otherwise.
pub fn wer(pred: &str, golds: &[&str]) -> f64 {
    let p = normalize_answer(pred);
    let refs: Vec<Vec<String>> = golds.iter().map(|g| normalize_answer(g)).filter(|g| !g.is_empty()).collect();
    if refs.is_empty() {
        log::debug!("all gold answers normalise to empty; WER falls back to 0/1");
        return if p.is_empty() { 0.0 } else { 1.0 };
    }
    refs.iter()
        .map(|g| edit_distance(&p, g) as f64 / g.len() as f64)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    pub id: String,
    pub prediction: String,
    pub em: f64,
    pub f1: f64,
    pub jaccard: f64,
    pub wer: f64,
}

pub fn score_example(id: &str, pred: &str, golds: &[&str]) -> Result<ExampleScores> {
    if golds.is_empty() {
        return Err(Error::contract(format!("example `{id}` has no gold answers")));
    }
    Ok(ExampleScores {
        id: id.to_string(),
        prediction: pred.to_string(),
        em: exact_match(pred, golds),
        f1: token_f1(pred, golds),
        jaccard: jaccard(pred, golds),
        wer: wer(pred, golds),
    })
}

/// Aggregate scores in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub language: String,
    pub n_examples: usize,
    pub f1: f64,
    pub em: f64,
    pub jaccard: f64,
    pub wer: f64,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
    pub per_example: Vec<ExampleScores>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn aggregate(per_example: Vec<ExampleScores>, language: &str) -> Result<EvalReport> {
    if per_example.is_empty() {
        return Err(Error::contract(format!("no examples to aggregate for `{language}`")));
    }
    let n = per_example.len() as f64;
    let mean = |f: fn(&ExampleScores) -> f64| 100.0 * per_example.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        language: language.to_string(),
        n_examples: per_example.len(),
        f1: mean(|e| e.f1),
        em: mean(|e| e.em),
        jaccard: mean(|e| e.jaccard),
        wer: mean(|e| e.wer),
        provenance: BTreeMap::new(),
        per_example,
    })
}

/// Two decimals with trailing zeros trimmed, keeping at least one.
pub fn format_value(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.strip_suffix('0').unwrap_or(&s);
    s.to_string()
}

pub fn format_cell(a: f64, b: f64) -> String {
    format!("{} / {}", format_value(a), format_value(b))
}

/// Rows by setup, columns by language; absent runs render blank.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<String>>)>,
}

impl ReportTable {
    pub fn render(&self) -> String {
        let mut widths = vec![self.rows.iter().map(|r| r.0.chars().count()).max().unwrap_or(0).max(5)];
        for (c, name) in self.columns.iter().enumerate() {
            let w = self
                .rows
                .iter()
                .filter_map(|r| r.1[c].as_ref().map(|s| s.chars().count()))
                .max()
                .unwrap_or(0)
                .max(name.chars().count());
            widths.push(w);
        }
        let line = |cells: Vec<&str>| -> String {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect();
            format!("| {} |", padded.join(" | "))
        };
        let mut out = format!("{}\n", self.title);
        let mut header = vec!["Setup"];
        header.extend(self.columns.iter().map(String::as_str));
        out.push_str(&line(header));
        out.push('\n');
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        out.push_str(&line(rule.iter().map(String::as_str).collect()));
        out.push('\n');
        for (label, cells) in &self.rows {
            let mut row = vec![label.as_str()];
            row.extend(cells.iter().map(|c| c.as_deref().unwrap_or("")));
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

/// `F1 / EM` and `Jaccard / WER` tables. Rows and columns keep first-seen
/// order; a later report for the same cell replaces an earlier one.
pub fn build_tables(entries: &[(String, EvalReport)]) -> (ReportTable, ReportTable) {
    let mut rows: Vec<String> = Vec::new();
    let mut cols: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), &EvalReport> = BTreeMap::new();
    for (setup, report) in entries {
        let r = rows.iter().position(|x| x == setup).unwrap_or_else(|| {
            rows.push(setup.clone());
            rows.len() - 1
        });
        let c = cols.iter().position(|x| x == &report.language).unwrap_or_else(|| {
            cols.push(report.language.clone());
            cols.len() - 1
        });
        cells.insert((r, c), report);
    }
    let table = |title: &str, f: &dyn Fn(&EvalReport) -> String| ReportTable {
        title: title.to_string(),
        columns: cols.clone(),
        rows: rows
            .iter()
            .enumerate()
            .map(|(r, label)| (label.clone(), (0..cols.len()).map(|c| cells.get(&(r, c)).map(|e| f(e))).collect()))
            .collect(),
    };
    (
        table("F1 / EM", &|e| format_cell(e.f1, e.em)),
        table("Jaccard / WER", &|e| format_cell(e.jaccard, e.wer)),
    )
}
