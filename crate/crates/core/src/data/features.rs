use super::squad::QAExample;
use super::text::{char_slice, tokenize, CharSpan, Vocab, SEP};
use crate::error::{Error, Result};

/// A question-context pair packed as `[question] [SEP] [context]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedFeature {
    pub example_id: String,
    pub token_ids: Vec<usize>,
    /// Character span in the context for context tokens, `None` elsewhere.
    pub char_offsets: Vec<Option<CharSpan>>,
    pub context_mask: Vec<bool>,
    /// Token positions of the first gold answer, when it aligns and fits.
    pub gold_span: Option<(usize, usize)>,
    pub context: String,
}

impl TokenizedFeature {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn context_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.context_mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    Span(usize, usize),
    Unalignable,
}

/// Smallest token interval covering the answer's character range, or
/// `Unalignable` when token boundaries fall inside the (whitespace-trimmed)
/// answer so that extraction would change the string.
pub fn align_answer_span(offsets: &[CharSpan], context: &str, start: usize, text: &str) -> Alignment {
    let chars: Vec<char> = text.chars().collect();
    let lead = chars.iter().take_while(|c| c.is_whitespace()).count();
    let trail = chars.iter().rev().take_while(|c| c.is_whitespace()).count();
    if lead == chars.len() {
        return Alignment::Unalignable;
    }
    let (a, b) = (start + lead, start + chars.len() - trail);
    let first = offsets.iter().position(|&(_, e)| e > a);
    let last = offsets.iter().rposition(|&(s, _)| s < b);
    match (first, last) {
        (Some(i), Some(j)) if i <= j && offsets[i].0 == a && offsets[j].1 == b => {
            debug_assert_eq!(char_slice(context, (a, b)), char_slice(context, (offsets[i].0, offsets[j].1)));
            Alignment::Span(i, j)
        }
        _ => Alignment::Unalignable,
    }
}

/// Packs and aligns one example; the context is truncated to fit
/// `max_seq_len`.
pub fn featurize(example: &QAExample, vocab: &Vocab, max_seq_len: usize) -> Result<TokenizedFeature> {
    if max_seq_len < 3 {
        return Err(Error::Config("max_seq_len must allow question, separator and context".into()));
    }
    let (q_ids, _) = tokenize(&example.question, vocab);
    let (c_ids, c_offs) = tokenize(&example.context, vocab);
    if c_ids.is_empty() {
        return Err(Error::Validation {
            id: example.id.clone(),
            message: "context has no tokens".into(),
        });
    }
    let q_keep = q_ids.len().min(max_seq_len - 2);
    let c_keep = c_ids.len().min(max_seq_len - 1 - q_keep);
    let ctx_start = q_keep + 1;

    let mut token_ids = Vec::with_capacity(ctx_start + c_keep);
    token_ids.extend_from_slice(&q_ids[..q_keep]);
    token_ids.push(SEP);
    token_ids.extend_from_slice(&c_ids[..c_keep]);
    let mut char_offsets = vec![None; ctx_start];
    char_offsets.extend(c_offs[..c_keep].iter().map(|&o| Some(o)));
    let mut context_mask = vec![false; ctx_start];
    context_mask.extend(std::iter::repeat_n(true, c_keep));

    let gold_span = example.answers.first().and_then(|a| {
        match align_answer_span(&c_offs, &example.context, a.answer_start, &a.text) {
            Alignment::Span(s, e) if e < c_keep => Some((s + ctx_start, e + ctx_start)),
            _ => None,
        }
    });

    Ok(TokenizedFeature {
        example_id: example.id.clone(),
        token_ids,
        char_offsets,
        context_mask,
        gold_span,
        context: example.context.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::squad::Answer;
    use crate::data::text::split_spans;

    #[test]
    fn align_examples() {
        let ctx = "abc def";
        let offs = split_spans(ctx);
        assert_eq!(align_answer_span(&offs, ctx, 4, "def"), Alignment::Span(1, 1));
        assert_eq!(align_answer_span(&offs, ctx, 1, "b"), Alignment::Unalignable);
        let ctx = "w0 w1 alpha beta gamma w5";
        let offs = split_spans(ctx);
        assert_eq!(align_answer_span(&offs, ctx, 6, "alpha beta gamma"), Alignment::Span(2, 4));
        assert_eq!(align_answer_span(&offs, ctx, 5, " alpha"), Alignment::Span(2, 2));
    }

    fn example(context: &str, question: &str, answer: &str) -> QAExample {
        let start = context.find(answer).unwrap();
        QAExample {
            id: "e".into(),
            language: "x".into(),
            question: question.into(),
            context: context.into(),
            answers: vec![Answer {
                text: answer.into(),
                answer_start: context[..start].chars().count(),
            }],
        }
    }

    #[test]
    fn packing_layout() {
        let ex = example("the city is new delhi .", "which city ?", "new delhi");
        let vocab = Vocab::build([ex.context.as_str(), ex.question.as_str()], 50).unwrap();
        let f = featurize(&ex, &vocab, 64).unwrap();
        assert_eq!(f.token_ids[3], SEP);
        assert_eq!(f.context_mask.iter().filter(|&&m| m).count(), 6);
        assert_eq!(f.gold_span, Some((4 + 3, 4 + 4)));
        assert_eq!(f.char_offsets[7], Some((12, 15)));
    }

    #[test]
    fn truncation_drops_unreachable_gold() {
        let ex = example("a b c d e f g h", "q", "h");
        let vocab = Vocab::build([ex.context.as_str()], 50).unwrap();
        let f = featurize(&ex, &vocab, 6).unwrap();
        assert_eq!(f.len(), 6);
        assert_eq!(f.gold_span, None);
        let f = featurize(&ex, &vocab, 32).unwrap();
        assert_eq!(f.gold_span, Some((9, 9)));
    }
}
