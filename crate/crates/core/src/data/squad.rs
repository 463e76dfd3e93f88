//! SQuAD v1.1 JSON reading and writing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::char_slice;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    /// Character offset into the context.
    pub answer_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub language: String,
    pub question: String,
    pub context: String,
    pub answers: Vec<Answer>,
}

impl QAExample {
    /// Checks that every answer is the exact substring at its offset.
    pub fn validate(&self) -> Result<()> {
        let n = self.context.chars().count();
        for a in &self.answers {
            let len = a.text.chars().count();
            let end = a.answer_start + len;
            if end > n || char_slice(&self.context, (a.answer_start, end)) != a.text {
                return Err(Error::Validation {
                    id: self.id.clone(),
                    message: format!(
                        "answer {:?} not found at character offset {}",
                        a.text, a.answer_start
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn gold_texts(&self) -> Vec<&str> {
        self.answers.iter().map(|a| a.text.as_str()).collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SquadFile {
    #[serde(default)]
    version: Option<String>,
    data: Vec<Article>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Article {
    #[serde(default)]
    title: String,
    paragraphs: Vec<Paragraph>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Paragraph {
    context: String,
    qas: Vec<Qa>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Qa {
    id: String,
    question: String,
    answers: Vec<Answer>,
}

/// One example per `qas` entry, with every answer offset validated.
pub fn parse_squad_json(bytes: &[u8], language: &str) -> Result<Vec<QAExample>> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let file: SquadFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let mut out = Vec::new();
    for article in file.data {
        for para in article.paragraphs {
            for qa in para.qas {
                let ex = QAExample {
                    id: qa.id,
                    language: language.to_string(),
                    question: qa.question,
                    context: para.context.clone(),
                    answers: qa.answers,
                };
                ex.validate()?;
                out.push(ex);
            }
        }
    }
    Ok(out)
}

pub fn read_squad_file(path: &Path, language: &str) -> Result<Vec<QAExample>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_squad_json(&bytes, language)
}

/// Writes examples as SQuAD v1.1. Consecutive examples sharing a context
/// share a paragraph.
pub fn serialize_squad(examples: &[QAExample], title: &str) -> Result<String> {
    let mut paragraphs: Vec<Paragraph> = Vec::new();
    for ex in examples {
        let qa = Qa {
            id: ex.id.clone(),
            question: ex.question.clone(),
            answers: ex.answers.clone(),
        };
        match paragraphs.last_mut() {
            Some(p) if p.context == ex.context => p.qas.push(qa),
            _ => paragraphs.push(Paragraph {
                context: ex.context.clone(),
                qas: vec![qa],
            }),
        }
    }
    let file = SquadFile {
        version: Some("1.1".into()),
        data: vec![Article {
            title: title.to_string(),
            paragraphs,
        }],
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = r#"{"version":"1.1","data":[{"title":"t","paragraphs":[
        {"context":"The capital is New Delhi.","qas":[
            {"id":"q1","question":"What is the capital?","answers":[{"text":"New Delhi","answer_start":15}]}
        ]}]}]}"#;

    #[test]
    fn minimal_file() {
        let ex = parse_squad_json(MINIMAL.as_bytes(), "hi").unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].answers[0].answer_start, 15);
        assert_eq!(ex[0].language, "hi");
    }

    #[test]
    fn off_by_one_offset_names_id() {
        let bad = MINIMAL.replace("\"answer_start\":15", "\"answer_start\":16");
        match parse_squad_json(bad.as_bytes(), "hi") {
            Err(Error::Validation { id, .. }) => assert_eq!(id, "q1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_error_reports_path() {
        let bad = MINIMAL.replace("\"id\":\"q1\",", "");
        match parse_squad_json(bad.as_bytes(), "hi") {
            Err(Error::Parse { path, .. }) => assert!(path.starts_with("data[0].paragraphs[0].qas[0]"), "{path}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_squad_json(b"{not json", "hi"), Err(Error::Parse { .. })));
    }

    #[test]
    fn three_paragraphs_two_questions() {
        let para = |i: usize| {
            format!(
                r#"{{"context":"c{i} ab","qas":[
                    {{"id":"p{i}a","question":"q","answers":[{{"text":"ab","answer_start":3}}]}},
                    {{"id":"p{i}b","question":"q","answers":[{{"text":"c{i}","answer_start":0}}]}}]}}"#
            )
        };
        let json = format!(
            r#"{{"data":[{{"title":"x","paragraphs":[{},{},{}]}}]}}"#,
            para(1),
            para(2),
            para(3)
        );
        assert_eq!(parse_squad_json(json.as_bytes(), "de").unwrap().len(), 6);
    }

    #[test]
    fn non_ascii_offsets_are_characters() {
        let json = r#"{"data":[{"title":"x","paragraphs":[{"context":"नई दिल्ली भारत","qas":[
            {"id":"a","question":"?","answers":[{"text":"भारत","answer_start":10}]}]}]}]}"#;
        assert!(parse_squad_json(json.as_bytes(), "hi").is_ok());
    }

    fn arb_example() -> impl Strategy<Value = QAExample> {
        ("[a-z]{1,8}", "[a-zé ]{0,10}", "[a-zé]{1,6}", "[a-z ]{0,8}", "[a-z ]{0,8}").prop_map(
            |(id, question, answer, pre, post)| {
                let context = format!("{pre}{answer}{post}");
                QAExample {
                    id,
                    language: "x".into(),
                    question,
                    answers: vec![Answer {
                        text: answer,
                        answer_start: pre.chars().count(),
                    }],
                    context,
                }
            },
        )
    }

    proptest! {
        #[test]
        fn serialize_parse_roundtrip(examples in prop::collection::vec(arb_example(), 0..5)) {
            let json = serialize_squad(&examples, "t").unwrap();
            let back = parse_squad_json(json.as_bytes(), "x").unwrap();
            prop_assert_eq!(back, examples);
        }
    }
}
