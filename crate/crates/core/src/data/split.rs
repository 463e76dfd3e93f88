use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::squad::QAExample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCount {
    pub source: String,
    pub role: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub language: String,
    pub train: Vec<QAExample>,
    pub test: Vec<QAExample>,
    pub provenance: Vec<SourceCount>,
}

/// Train/test sizes per language from the published split (XQuAD test +
/// MLQA test for training, MLQA dev for testing).
pub const REFERENCE_COUNTS: [(&str, usize, usize); 7] = [
    ("hi", 6854, 507),
    ("de", 5707, 512),
    ("es", 6443, 500),
    ("ar", 6525, 517),
    ("zh", 6327, 504),
    ("vi", 6685, 511),
    ("en", 12780, 1148),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountCheck {
    pub language: String,
    pub expected_train: usize,
    pub expected_test: usize,
    pub actual_train: usize,
    pub actual_test: usize,
}

impl CountCheck {
    pub fn matches(&self) -> bool {
        self.expected_train == self.actual_train && self.expected_test == self.actual_test
    }
}

fn ensure_language<'a>(sets: impl IntoIterator<Item = &'a [QAExample]>) -> Result<String> {
    let mut lang: Option<&str> = None;
    for ex in sets.into_iter().flatten() {
        match lang {
            None => lang = Some(&ex.language),
            Some(l) if l != ex.language => {
                return Err(Error::Config(format!(
                    "split mixes languages `{l}` and `{}` (example `{}`)",
                    ex.language, ex.id
                )))
            }
            _ => {}
        }
    }
    Ok(lang.unwrap_or_default().to_string())
}

/// `train = xquad_test ++ mlqa_test`, `test = mlqa_dev`; ids must not repeat.
pub fn build_split(xquad_test: Vec<QAExample>, mlqa_test: Vec<QAExample>, mlqa_dev: Vec<QAExample>) -> Result<DatasetSplit> {
    build_split_named(("xquad_test", xquad_test), ("mlqa_test", mlqa_test), ("mlqa_dev", mlqa_dev))
}

/// As [`build_split`] with caller-supplied source labels for provenance.
pub fn build_split_named(
    first: (&str, Vec<QAExample>),
    second: (&str, Vec<QAExample>),
    dev: (&str, Vec<QAExample>),
) -> Result<DatasetSplit> {
    let language = ensure_language([first.1.as_slice(), second.1.as_slice(), dev.1.as_slice()])?;
    let provenance = vec![
        SourceCount {
            source: first.0.to_string(),
            role: "train".into(),
            count: first.1.len(),
        },
        SourceCount {
            source: second.0.to_string(),
            role: "train".into(),
            count: second.1.len(),
        },
        SourceCount {
            source: dev.0.to_string(),
            role: "test".into(),
            count: dev.1.len(),
        },
    ];
    let mut train = first.1;
    train.extend(second.1);
    let test = dev.1;

    let mut seen = BTreeSet::new();
    let mut dup_train = BTreeSet::new();
    for ex in &train {
        if !seen.insert(ex.id.as_str()) {
            dup_train.insert(ex.id.clone());
        }
    }
    if !dup_train.is_empty() {
        return Err(Error::DuplicateIds(dup_train.into_iter().collect()));
    }
    let mut test_ids = BTreeSet::new();
    let mut collisions = BTreeSet::new();
    for ex in &test {
        if seen.contains(ex.id.as_str()) || !test_ids.insert(ex.id.as_str()) {
            collisions.insert(ex.id.clone());
        }
    }
    if !collisions.is_empty() {
        return Err(Error::DuplicateIds(collisions.into_iter().collect()));
    }
    Ok(DatasetSplit {
        language,
        train,
        test,
        provenance,
    })
}

/// Compares split sizes to the published reference for `split.language`.
/// Returns `None` for languages without a reference.
pub fn check_reference_counts(split: &DatasetSplit) -> Option<CountCheck> {
    let (_, tr, te) = REFERENCE_COUNTS.iter().find(|(l, _, _)| *l == split.language)?;
    let check = CountCheck {
        language: split.language.clone(),
        expected_train: *tr,
        expected_test: *te,
        actual_train: split.train.len(),
        actual_test: split.test.len(),
    };
    if !check.matches() {
        log::warn!(
            "{}: split has {}/{} train/test examples, reference is {}/{}",
            check.language,
            check.actual_train,
            check.actual_test,
            check.expected_train,
            check.expected_test
        );
    }
    Some(check)
}
