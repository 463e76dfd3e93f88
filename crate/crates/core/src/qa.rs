//! Extractive span head, loss and decoding.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::text::char_slice;
use crate::data::TokenizedFeature;
use crate::encoder::{EncoderModel, ForwardCtx};
use crate::error::{Error, Result};
use crate::numcore::{Graph, Tensor, Var};

pub const DEFAULT_MAX_ANSWER_LEN: usize = 30;
pub const HEAD_WEIGHT: &str = "qa.weight";
pub const HEAD_BIAS: &str = "qa.bias";

/// Per-position `(start, end)` logits from hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct QAHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl QAHead {
    pub fn from_model(model: &EncoderModel) -> Result<Self> {
        Ok(QAHead {
            weight: model.params.require(HEAD_WEIGHT)?.clone(),
            bias: model.params.require(HEAD_BIAS)?.clone(),
        })
    }

    /// `[seq×H] -> [seq×2]`
    pub fn forward(&self, hidden: &Tensor) -> Result<Tensor> {
        let mut g = Graph::standalone();
        let h = g.constant(hidden.clone());
        let w = g.constant(self.weight.clone());
        let b = g.constant(self.bias.clone());
        let out = g.affine(h, w, b)?;
        Ok(g.value(out).clone())
    }
}

pub fn head_logits_graph(g: &mut Graph<'_>, hidden: Var) -> Result<Var> {
    let w = g.param(HEAD_WEIGHT)?;
    let b = g.param(HEAD_BIAS)?;
    g.affine(hidden, w, b)
}

/// Mean of start and end cross-entropies, each normalised over context
/// positions only.
pub fn span_loss_graph(
    g: &mut Graph<'_>,
    logits: Var,
    gold_start: usize,
    gold_end: usize,
    context_mask: &[bool],
) -> Result<Var> {
    let seq = g.value(logits).rows();
    if context_mask.len() != seq {
        return Err(Error::contract(format!(
            "context mask has {} entries for {seq} positions",
            context_mask.len()
        )));
    }
    for (what, idx) in [("start", gold_start), ("end", gold_end)] {
        if idx >= seq || !context_mask[idx] {
            return Err(Error::contract(format!("gold {what} {idx} lies outside the context")));
        }
    }
    let mut parts = Vec::with_capacity(2);
    for (col, target) in [(0, gold_start), (1, gold_end)] {
        let c = g.slice_cols(logits, col, 1)?;
        let row = g.transpose(c)?;
        parts.push(g.cross_entropy(row, &[target], Some(context_mask))?);
    }
    let total = g.add(parts[0], parts[1])?;
    Ok(g.scale(total, 0.5))
}

pub fn span_loss(logits: &Tensor, gold_start: usize, gold_end: usize, context_mask: &[bool]) -> Result<f64> {
    let mut g = Graph::standalone();
    let l = g.constant(logits.clone());
    let loss = span_loss_graph(&mut g, l, gold_start, gold_end, context_mask)?;
    Ok(g.value(loss).data()[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start_idx: usize,
    pub end_idx: usize,
    pub score: f64,
    pub answer_text: String,
}

fn check_logits(logits: &Tensor, context_mask: &[bool]) -> Result<usize> {
    let (seq, two) = logits.dims2()?;
    if two != 2 || context_mask.len() != seq {
        return Err(Error::contract(format!(
            "span logits {:?} do not match a context mask of {}",
            logits.shape(),
            context_mask.len()
        )));
    }
    if !context_mask.iter().any(|&m| m) {
        return Err(Error::contract("no context position to decode"));
    }
    Ok(seq)
}

/// Best `start_logit[i] + end_logit[j]` over context pairs with
/// `i <= j < i + max_answer_len`; ties go to the smallest `i`, then `j`.
/// `answer_text` is left empty.
pub fn decode_span(logits: &Tensor, context_mask: &[bool], max_answer_len: usize) -> Result<SpanPrediction> {
    let seq = check_logits(logits, context_mask)?;
    let max_len = max_answer_len.max(1);
    let mut best: Option<(usize, usize, f64)> = None;
    for i in (0..seq).filter(|&i| context_mask[i]) {
        let s = logits.at(i, 0);
        for j in (i..seq.min(i + max_len)).filter(|&j| context_mask[j]) {
            let score = s + logits.at(j, 1);
            if best.is_none_or(|(_, _, b)| score > b) {
                best = Some((i, j, score));
            }
        }
    }
    let (start_idx, end_idx, score) = best.ok_or_else(|| Error::contract("no decodable span"))?;
    Ok(SpanPrediction {
        start_idx,
        end_idx,
        score,
        answer_text: String::new(),
    })
}

/// Context substring from the first character of the start token to the
/// last character of the end token.
pub fn extract_answer_text(pred: &SpanPrediction, feature: &TokenizedFeature) -> Result<String> {
    let offset = |i: usize| -> Result<(usize, usize)> {
        feature
            .char_offsets
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::contract(format!("token {i} of `{}` has no character offsets", feature.example_id)))
    };
    if pred.start_idx > pred.end_idx {
        return Err(Error::contract("span start after end"));
    }
    let (a, _) = offset(pred.start_idx)?;
    let (_, b) = offset(pred.end_idx)?;
    Ok(char_slice(&feature.context, (a, b)).to_string())
}

/// Eval-mode forward, decode and extraction for one feature.
pub fn predict(model: &EncoderModel, feature: &TokenizedFeature, max_answer_len: usize) -> Result<SpanPrediction> {
    let mut g = Graph::inference(&model.params);
    let h = model.encode_graph(&mut g, &feature.token_ids, None, &mut ForwardCtx::eval())?;
    let logits = head_logits_graph(&mut g, h)?;
    let mut pred = decode_span(g.value(logits), &feature.context_mask, max_answer_len)?;
    pred.answer_text = extract_answer_text(&pred, feature)?;
    Ok(pred)
}

/// Example id to answer string.
pub type Predictions = BTreeMap<String, String>;

pub fn write_predictions(path: &Path, preds: &Predictions) -> Result<()> {
    let text = serde_json::to_string_pretty(preds)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::text::split_spans;
    use crate::numcore::{finite_diff_check, ParamStore, Rng};
    use proptest::prelude::*;

    fn logits(start: &[f64], end: &[f64]) -> Tensor {
        let rows: Vec<Vec<f64>> = start.iter().zip(end).map(|(&s, &e)| vec![s, e]).collect();
        Tensor::from_rows(&rows).unwrap()
    }

    fn brute(l: &Tensor, mask: &[bool], max_len: usize) -> (usize, usize) {
        let n = mask.len();
        let mut best = (0, 0, f64::NEG_INFINITY);
        for i in 0..n {
            for j in 0..n {
                let valid = mask[i] && mask[j] && i <= j && j - i < max_len;
                let s = l.at(i, 0) + l.at(j, 1);
                if valid && s > best.2 {
                    best = (i, j, s);
                }
            }
        }
        (best.0, best.1)
    }

    #[test]
    fn decode_examples() {
        let all = [true; 3];
        let p = decode_span(&logits(&[0.1, 5.0, 0.2], &[0.1, 0.3, 4.0]), &all, 8).unwrap();
        assert_eq!((p.start_idx, p.end_idx), (1, 2));
        let p = decode_span(&logits(&[5.0, 0.0, 0.0], &[4.0, 0.0, 0.0]), &all, 8).unwrap();
        assert_eq!((p.start_idx, p.end_idx), (0, 0));
        let p = decode_span(&logits(&[9.0, 1.0, 9.0], &[9.0, 1.0, 9.0]), &[false, true, false], 8).unwrap();
        assert_eq!((p.start_idx, p.end_idx), (1, 1));
        assert!(decode_span(&logits(&[1.0], &[1.0]), &[false], 8).is_err());
    }

    #[test]
    fn decode_ties_are_lexicographic() {
        let p = decode_span(&logits(&[1.0; 4], &[1.0; 4]), &[true; 4], 30).unwrap();
        assert_eq!((p.start_idx, p.end_idx), (0, 0));
    }

    #[test]
    fn loss_closed_forms() {
        let mask = [false, true, true, true, true];
        let l = logits(&[3.0, 0.0, 0.0, 0.0, 0.0], &[-2.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((span_loss(&l, 1, 3, &mask).unwrap() - 4f64.ln()).abs() < 1e-12);
        let big = logits(&[0.0, 0.0, 1e4, 0.0, 0.0], &[0.0, 0.0, 0.0, 1e4, 0.0]);
        assert!(span_loss(&big, 2, 3, &mask).unwrap() < 1e-12);
        let one = [false, false, true, false, false];
        let l = logits(&[5.0, -1.0, 0.3, 2.0, 1.0], &[1.0, 7.0, -4.0, 0.0, 0.0]);
        assert!(span_loss(&l, 2, 2, &one).unwrap().abs() < 1e-12);
        assert!(span_loss(&l, 1, 2, &one).is_err());
    }

    #[test]
    fn loss_gradient_matches_differences() {
        let mut rng = Rng::new(4);
        let mut store = ParamStore::new();
        let data = (0..14).map(|_| rng.normal(0.0, 1.0)).collect();
        store.insert("l", Tensor::new(vec![7, 2], data).unwrap()).unwrap();
        store.set_trainable_where(|_| true);
        let mask = [false, false, true, true, true, true, false];
        let err = finite_diff_check(
            |g| {
                let l = g.param("l")?;
                span_loss_graph(g, l, 3, 5, &mask)
            },
            &store,
            1e-5,
            &["l"],
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    fn feature(context: &str) -> TokenizedFeature {
        let spans = split_spans(context);
        let n = spans.len();
        TokenizedFeature {
            example_id: "f".into(),
            token_ids: vec![4; n + 1],
            char_offsets: std::iter::once(None).chain(spans.into_iter().map(Some)).collect(),
            context_mask: std::iter::once(false).chain(std::iter::repeat_n(true, n)).collect(),
            gold_span: None,
            context: context.to_string(),
        }
    }

    #[test]
    fn extraction() {
        let f = feature("abc def");
        let p = |s, e| SpanPrediction {
            start_idx: s,
            end_idx: e,
            score: 0.0,
            answer_text: String::new(),
        };
        assert_eq!(extract_answer_text(&p(2, 2), &f).unwrap(), "def");
        let f = feature("capital is New  Delhi");
        assert_eq!(extract_answer_text(&p(3, 4), &f).unwrap(), "New  Delhi");
        assert!(extract_answer_text(&p(0, 1), &f).is_err());
        let f = feature("x y");
        assert_eq!(extract_answer_text(&p(2, 2), &f).unwrap(), "y");
    }

    proptest! {
        #[test]
        fn decode_equals_brute_force(
            cells in prop::collection::vec((-3i32..4, -3i32..4, any::<bool>()), 1..33),
            max_len in 1usize..12,
        ) {
            let mut mask: Vec<bool> = cells.iter().map(|c| c.2).collect();
            if !mask.iter().any(|&m| m) {
                mask[0] = true;
            }
            let l = logits(
                &cells.iter().map(|c| c.0 as f64 * 0.5).collect::<Vec<_>>(),
                &cells.iter().map(|c| c.1 as f64 * 0.5).collect::<Vec<_>>(),
            );
            let p = decode_span(&l, &mask, max_len).unwrap();
            prop_assert_eq!((p.start_idx, p.end_idx), brute(&l, &mask, max_len));
        }

        #[test]
        fn forced_gold_extracts_gold(words in prop::collection::vec("[a-z]{1,5}", 1..10), a in 0usize..10, len in 1usize..4) {
            let context = words.join(" ");
            let f = feature(&context);
            let n = words.len();
            let (s, e) = (1 + a % n, (1 + a % n + len - 1).min(n));
            let mut start = vec![0.0; n + 1];
            let mut end = vec![0.0; n + 1];
            start[s] = 50.0;
            end[e] = 50.0;
            let p = decode_span(&logits(&start, &end), &f.context_mask, DEFAULT_MAX_ANSWER_LEN).unwrap();
            let text = extract_answer_text(&p, &f).unwrap();
            prop_assert_eq!(text, words[s - 1..e].join(" "));
        }
    }
}
