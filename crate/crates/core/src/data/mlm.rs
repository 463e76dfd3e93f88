use super::text::{MASK, NUM_RESERVED};
use crate::error::{Error, Result};
use crate::numcore::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSequence {
    pub ids: Vec<usize>,
    /// `(position, original id)` for every selected position, in order.
    pub labels: Vec<(usize, usize)>,
}

/// BERT-style corruption: each non-reserved position is selected with
/// probability `mask_rate`; selected positions become `[MASK]` (80%), a
/// random non-reserved id (10%) or stay unchanged (10%).
pub fn mlm_mask(ids: &[usize], rng: &mut Rng, mask_rate: f64, vocab_size: usize) -> Result<MaskedSequence> {
    if !(0.0..=1.0).contains(&mask_rate) {
        return Err(Error::Config(format!("mask rate {mask_rate} outside [0, 1]")));
    }
    if vocab_size <= NUM_RESERVED {
        return Err(Error::Config(format!("vocab size {vocab_size} has no maskable ids")));
    }
    let mut out = ids.to_vec();
    let mut labels = Vec::new();
    for (i, &id) in ids.iter().enumerate() {
        if id < NUM_RESERVED || !rng.bernoulli(mask_rate) {
            continue;
        }
        labels.push((i, id));
        let r = rng.next_f64();
        if r < 0.8 {
            out[i] = MASK;
        } else if r < 0.9 {
            out[i] = NUM_RESERVED + rng.below(vocab_size - NUM_RESERVED);
        }
    }
    Ok(MaskedSequence { ids: out, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::text::{SEP, UNK};
    use crate::numcore::Rng;
    use proptest::prelude::*;

    #[test]
    fn zero_rate_is_identity() {
        let ids = vec![5, 6, SEP, 7];
        let m = mlm_mask(&ids, &mut Rng::new(1), 0.0, 10).unwrap();
        assert_eq!(m.ids, ids);
        assert!(m.labels.is_empty());
    }

    #[test]
    fn full_rate_matches_replayed_draws() {
        let ids: Vec<usize> = (0..2000).map(|i| 4 + i % 50).collect();
        let m = mlm_mask(&ids, &mut Rng::new(9), 1.0, 60).unwrap();
        assert_eq!(m.labels.len(), ids.len());

        // replay the same stream by hand
        let mut rng = Rng::new(9);
        let (mut masked, mut random, mut kept) = (0, 0, 0);
        for (i, &id) in ids.iter().enumerate() {
            assert!(rng.bernoulli(1.0));
            let r = rng.next_f64();
            if r < 0.8 {
                masked += 1;
                assert_eq!(m.ids[i], MASK);
            } else if r < 0.9 {
                random += 1;
                assert_eq!(m.ids[i], 4 + rng.below(56));
            } else {
                kept += 1;
                assert_eq!(m.ids[i], id);
            }
        }
        assert_eq!(masked + random + kept, 2000);
        assert!((masked as f64 / 2000.0 - 0.8).abs() < 0.03);
        assert!((random as f64 / 2000.0 - 0.1).abs() < 0.03);
    }

    #[test]
    fn rejects_bad_rate() {
        assert!(mlm_mask(&[5], &mut Rng::new(0), 1.5, 10).is_err());
        assert!(mlm_mask(&[5], &mut Rng::new(0), 0.5, 4).is_err());
    }

    proptest! {
        #[test]
        fn reserved_never_selected(ids in prop::collection::vec(0usize..12, 0..40), seed in any::<u64>(), rate in 0.0f64..=1.0) {
            let m = mlm_mask(&ids, &mut Rng::new(seed), rate, 12).unwrap();
            for &(p, orig) in &m.labels {
                prop_assert!(orig >= NUM_RESERVED);
                prop_assert_eq!(ids[p], orig);
            }
            for (i, &id) in ids.iter().enumerate() {
                if id < NUM_RESERVED {
                    prop_assert_eq!(m.ids[i], id);
                }
                prop_assert!(m.ids[i] != UNK || id == UNK);
            }
        }
    }
}
