//! Synthetic parallel QA corpora.
//!
//! A single base corpus is generated over a 20-letter Latin alphabet and then
//! rendered into each requested language by a letter-for-letter bijection
//! onto a different script. Punctuation and whitespace are left alone, so
//! character offsets, token boundaries and answer positions carry over
//! unchanged while the surface vocabularies are disjoint.
//!
//! Contexts are short lists of `entity relation value .` facts; questions
//! read `wh relation of entity ?` and are answered by the value of the
//! matching fact. Every context holds a 2x2 grid of entities and relations,
//! so neither the entity nor the relation alone identifies the answer.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::squad::{serialize_squad, Answer, QAExample};
use crate::error::{Error, Result};
use crate::numcore::Rng;

pub const ALPHABET_LEN: u32 = 20;
const MIN_LEXICON: usize = 16;

fn default_unlabeled() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Language tags; the first is rendered in Latin letters.
    pub languages: Vec<String>,
    /// Number of distinct base words.
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(default = "default_unlabeled")]
    pub n_unlabeled: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(languages: &[&str], vocab_size: usize, n_train: usize, n_test: usize, seed: u64) -> Self {
        SynthSpec {
            languages: languages.iter().map(|s| s.to_string()).collect(),
            vocab_size,
            n_train,
            n_test,
            n_unlabeled: default_unlabeled(),
            seed,
        }
    }
}

/// First code point of the script used for the language at `index`.
pub fn script_base(index: usize) -> u32 {
    const BASES: [u32; 7] = [
        'a' as u32, // Latin
        0x0915,     // Devanagari consonants
        0x0430,     // Cyrillic
        0x03B1,     // Greek
        0x0561,     // Armenian
        0x10D0,     // Georgian
        0x05D0,     // Hebrew
    ];
    match BASES.get(index) {
        Some(&b) => b,
        None => 0xAC00 + ALPHABET_LEN * (index - BASES.len()) as u32,
    }
}

/// Letter-for-letter mapping between two scripts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bijection {
    from: u32,
    to: u32,
}

impl Bijection {
    pub fn between(from_index: usize, to_index: usize) -> Self {
        Bijection {
            from: script_base(from_index),
            to: script_base(to_index),
        }
    }

    pub fn inverse(self) -> Self {
        Bijection {
            from: self.to,
            to: self.from,
        }
    }

    pub fn map_char(&self, c: char) -> char {
        let u = c as u32;
        if u >= self.from && u < self.from + ALPHABET_LEN {
            char::from_u32(self.to + (u - self.from)).unwrap_or(c)
        } else {
            c
        }
    }

    pub fn apply(&self, text: &str) -> String {
        text.chars().map(|c| self.map_char(c)).collect()
    }

    pub fn apply_example(&self, ex: &QAExample, language: &str) -> QAExample {
        QAExample {
            id: ex.id.clone(),
            language: language.to_string(),
            question: self.apply(&ex.question),
            context: self.apply(&ex.context),
            answers: ex
                .answers
                .iter()
                .map(|a| Answer {
                    text: self.apply(&a.text),
                    answer_start: a.answer_start,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
struct Lexicon {
    wh: Vec<String>,
    of: String,
    relations: Vec<String>,
    entities: Vec<String>,
    values: Vec<String>,
}

impl Lexicon {
    fn generate(size: usize, rng: &mut Rng) -> Self {
        let size = size.max(MIN_LEXICON);
        let mut seen = BTreeSet::new();
        let mut words = Vec::with_capacity(size);
        while words.len() < size {
            let len = 2 + rng.below(4);
            let w: String = (0..len)
                .map(|_| char::from_u32('a' as u32 + rng.below(ALPHABET_LEN as usize) as u32).unwrap_or('a'))
                .collect();
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let n_rel = (size / 12).max(2);
        let n_ent = (size * 2 / 5).max(2);
        let mut it = words.into_iter();
        let wh: Vec<String> = it.by_ref().take(3).collect();
        let of = it.next().unwrap_or_default();
        let relations = it.by_ref().take(n_rel).collect();
        let entities = it.by_ref().take(n_ent).collect();
        let values = it.collect();
        Lexicon {
            wh,
            of,
            relations,
            entities,
            values,
        }
    }

    fn value_phrase(&self, rng: &mut Rng, used: &mut BTreeSet<String>) -> String {
        loop {
            let n = if rng.bernoulli(0.3) { 2 } else { 1 };
            let phrase = (0..n).map(|_| rng.choose(&self.values).as_str()).collect::<Vec<_>>().join(" ");
            if used.insert(phrase.clone()) {
                return phrase;
            }
        }
    }

    fn pick_two<'a>(items: &'a [String], rng: &mut Rng) -> (&'a str, &'a str) {
        let a = rng.below(items.len());
        let mut b = rng.below(items.len() - 1);
        if b >= a {
            b += 1;
        }
        (&items[a], &items[b])
    }

    fn example(&self, id: String, rng: &mut Rng) -> QAExample {
        let (e1, e2) = Self::pick_two(&self.entities, rng);
        let (r1, r2) = Self::pick_two(&self.relations, rng);
        let mut used = BTreeSet::new();
        let mut facts: Vec<(&str, &str, String)> = [(e1, r1), (e1, r2), (e2, r1), (e2, r2)]
            .into_iter()
            .map(|(e, r)| (e, r, self.value_phrase(rng, &mut used)))
            .collect();
        rng.shuffle(&mut facts);
        let target = rng.below(facts.len());

        let mut context = String::new();
        let mut answer = None;
        for (i, (e, r, v)) in facts.iter().enumerate() {
            if i > 0 {
                context.push(' ');
            }
            context.push_str(e);
            context.push(' ');
            context.push_str(r);
            context.push(' ');
            if i == target {
                answer = Some(Answer {
                    text: v.clone(),
                    answer_start: context.chars().count(),
                });
            }
            context.push_str(v);
            context.push_str(" .");
        }
        let (e, r, _) = &facts[target];
        let question = format!("{} {} {} {} ?", rng.choose(&self.wh), r, self.of, e);
        QAExample {
            id,
            language: String::new(),
            question,
            context,
            answers: answer.into_iter().collect(),
        }
    }

    fn document(&self, rng: &mut Rng) -> String {
        let n = 3 + rng.below(4);
        let mut used = BTreeSet::new();
        (0..n)
            .map(|_| {
                format!(
                    "{} {} {} .",
                    rng.choose(&self.entities),
                    rng.choose(&self.relations),
                    self.value_phrase(rng, &mut used)
                )
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthLanguage {
    pub tag: String,
    /// Value of `QAExample::language`, `synthetic-<tag>`.
    pub language: String,
    pub index: usize,
    pub train: Vec<QAExample>,
    pub test: Vec<QAExample>,
    pub unlabeled: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub spec: SynthSpec,
    pub languages: Vec<SynthLanguage>,
}

pub fn language_name(tag: &str) -> String {
    format!("synthetic-{tag}")
}

/// Generates the base corpus and renders it into every language of `spec`.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    if spec.languages.is_empty() {
        return Err(Error::Config("synthetic corpus needs at least one language".into()));
    }
    let unique: BTreeSet<&String> = spec.languages.iter().collect();
    if unique.len() != spec.languages.len() {
        return Err(Error::Config("synthetic language tags must be distinct".into()));
    }
    let mut rng = Rng::new(spec.seed);
    let lexicon = Lexicon::generate(spec.vocab_size, &mut rng.fork(1));
    let mut ex_rng = rng.fork(2);
    let train: Vec<QAExample> = (0..spec.n_train)
        .map(|i| lexicon.example(format!("train-{i:05}"), &mut ex_rng))
        .collect();
    let test: Vec<QAExample> = (0..spec.n_test)
        .map(|i| lexicon.example(format!("test-{i:05}"), &mut ex_rng))
        .collect();
    let mut doc_rng = rng.fork(3);
    let unlabeled: Vec<String> = (0..spec.n_unlabeled).map(|_| lexicon.document(&mut doc_rng)).collect();

    let languages = spec
        .languages
        .iter()
        .enumerate()
        .map(|(index, tag)| {
            let pi = Bijection::between(0, index);
            let language = language_name(tag);
            SynthLanguage {
                tag: tag.clone(),
                index,
                train: train.iter().map(|e| pi.apply_example(e, &language)).collect(),
                test: test.iter().map(|e| pi.apply_example(e, &language)).collect(),
                unlabeled: unlabeled.iter().map(|d| pi.apply(d)).collect(),
                language,
            }
        })
        .collect();
    Ok(SynthCorpus {
        spec: spec.clone(),
        languages,
    })
}

impl SynthCorpus {
    pub fn language(&self, tag: &str) -> Option<&SynthLanguage> {
        self.languages.iter().find(|l| l.tag == tag)
    }

    /// Writes `<dir>/<tag>/{train.json,test.json,unlabeled.txt}`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        for lang in &self.languages {
            let sub = dir.join(&lang.tag);
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for (name, set) in [("train.json", &lang.train), ("test.json", &lang.test)] {
                let path = sub.join(name);
                let json = serialize_squad(set, &lang.language)?;
                std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
            }
            let path = sub.join("unlabeled.txt");
            let mut text = lang.unlabeled.join("\n");
            text.push('\n');
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Reads one document per non-empty line.
pub fn read_unlabeled(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(String::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::squad::read_squad_file;
    use crate::data::text::{is_cjk, is_punctuation, split_words};

    fn spec() -> SynthSpec {
        SynthSpec::new(&["en", "hi", "de", "es", "ar", "zh", "vi", "x8"], 60, 30, 10, 5)
    }

    #[test]
    fn answers_validate_and_lowercase_is_stable() {
        let c = synth_corpus(&spec()).unwrap();
        for l in &c.languages {
            for ex in l.train.iter().chain(&l.test) {
                ex.validate().unwrap();
                assert_eq!(ex.context.to_lowercase(), ex.context);
                assert!(ex.context.chars().all(|ch| !is_cjk(ch)));
            }
        }
    }

    #[test]
    fn scripts_are_plain_letters() {
        for i in 0..10 {
            let b = script_base(i);
            for u in b..b + ALPHABET_LEN {
                let ch = char::from_u32(u).unwrap();
                assert!(ch.is_alphabetic() && !is_punctuation(ch) && !is_cjk(ch), "{u:#x}");
            }
        }
    }

    #[test]
    fn bijection_relates_languages() {
        let c = synth_corpus(&spec()).unwrap();
        let (a, b) = (&c.languages[1], &c.languages[3]);
        let pi = Bijection::between(a.index, b.index);
        let mapped: Vec<QAExample> = a.train.iter().map(|e| pi.apply_example(e, &b.language)).collect();
        assert_eq!(mapped, b.train);
        let mapped: Vec<String> = a.unlabeled.iter().map(|d| pi.apply(d)).collect();
        assert_eq!(mapped, b.unlabeled);
        assert_eq!(pi.inverse().apply(&pi.apply(&a.test[0].context)), a.test[0].context);
    }

    #[test]
    fn surface_vocabularies_are_disjoint() {
        let c = synth_corpus(&spec()).unwrap();
        let words = |l: &SynthLanguage| -> BTreeSet<String> {
            l.train
                .iter()
                .flat_map(|e| split_words(&e.context))
                .filter(|w| !w.chars().all(is_punctuation))
                .collect()
        };
        let sets: Vec<_> = c.languages.iter().map(words).collect();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                assert!(sets[i].is_disjoint(&sets[j]));
            }
        }
    }

    #[test]
    fn files_are_deterministic_and_parse() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        synth_corpus(&spec()).unwrap().write_to_dir(d1.path()).unwrap();
        synth_corpus(&spec()).unwrap().write_to_dir(d2.path()).unwrap();
        for tag in ["en", "zh"] {
            for f in ["train.json", "test.json", "unlabeled.txt"] {
                let a = std::fs::read(d1.path().join(tag).join(f)).unwrap();
                let b = std::fs::read(d2.path().join(tag).join(f)).unwrap();
                assert_eq!(a, b);
            }
        }
        let back = read_squad_file(&d1.path().join("hi/train.json"), "synthetic-hi").unwrap();
        assert_eq!(back, synth_corpus(&spec()).unwrap().languages[1].train);
        assert_eq!(read_unlabeled(&d1.path().join("hi/unlabeled.txt")).unwrap().len(), 200);
    }

    #[test]
    fn question_is_answerable_only_by_both_keys() {
        let c = synth_corpus(&spec()).unwrap();
        for ex in &c.languages[0].train {
            let q = split_words(&ex.question);
            let (rel, ent) = (&q[1], &q[3]);
            let facts: Vec<Vec<String>> = ex
                .context
                .split(" .")
                .filter(|f| !f.trim().is_empty())
                .map(split_words)
                .collect();
            let hits: Vec<_> = facts.iter().filter(|f| &f[0] == ent && &f[1] == rel).collect();
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0][2..].join(" "), ex.answers[0].text);
        }
    }
}
