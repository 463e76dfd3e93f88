//! Datasets: SQuAD-format I/O, tokenization, splits, MLM corruption and the
//! synthetic parallel corpus.

pub mod features;
pub mod mlm;
pub mod split;
pub mod squad;
pub mod synth;
pub mod text;

pub use features::{align_answer_span, featurize, Alignment, TokenizedFeature};
pub use mlm::{mlm_mask, MaskedSequence};
pub use split::{build_split, check_reference_counts, CountCheck, DatasetSplit, REFERENCE_COUNTS};
pub use squad::{parse_squad_json, read_squad_file, serialize_squad, Answer, QAExample};
pub use synth::{synth_corpus, Bijection, SynthCorpus, SynthLanguage, SynthSpec};
pub use text::{tokenize, CharSpan, Vocab};
