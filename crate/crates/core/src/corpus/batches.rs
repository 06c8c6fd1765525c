use rand::seq::SliceRandom;

use super::{Corpus, Split, Triple};
use crate::{seed, Error, Result};

/// Seeded epoch order for `split` as batches of corpus indices.
///
/// The final short batch is dropped so every batch holds exactly
/// `batch_size` distinct triples.
pub fn batch_indices(corpus: &Corpus, split: Split, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::BatchTooSmall(batch_size));
    }
    let mut idx = corpus.split_indices(split);
    if idx.is_empty() {
        return Err(Error::EmptySplit(split.as_str().into()));
    }
    idx.shuffle(&mut seed::rng(seed, "batches", &[]));
    Ok(idx
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

pub fn split_batches(corpus: &Corpus, split: Split, batch_size: usize, seed: u64) -> Result<Vec<Vec<&Triple>>> {
    Ok(batch_indices(corpus, split, batch_size, seed)?
        .into_iter()
        .map(|b| b.into_iter().map(|i| &corpus.triples[i]).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(n_train: usize, n_val: usize) -> Corpus {
        let triples = (0..n_train + n_val)
            .map(|i| Triple {
                id: format!("t{i}"),
                image_ref: "i.png".into(),
                audio_e_ref: "e.wav".into(),
                audio_h_ref: "h.wav".into(),
                split: if i < n_train { Split::Train } else { Split::Val },
                concepts: None,
                segments_e: None,
                segments_h: None,
            })
            .collect();
        Corpus::new(".", triples).unwrap()
    }

    #[test]
    fn ten_items_batch_four() {
        let c = corpus(10, 3);
        let b = split_batches(&c, Split::Train, 4, 1).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|x| x.len() == 4));
    }

    #[test]
    fn same_seed_same_order() {
        let c = corpus(50, 0);
        assert_eq!(
            batch_indices(&c, Split::Train, 8, 3).unwrap(),
            batch_indices(&c, Split::Train, 8, 3).unwrap()
        );
        assert_ne!(
            batch_indices(&c, Split::Train, 8, 3).unwrap(),
            batch_indices(&c, Split::Train, 8, 4).unwrap()
        );
    }

    #[test]
    fn errors() {
        let c = corpus(5, 0);
        assert!(matches!(batch_indices(&c, Split::Train, 1, 0), Err(Error::BatchTooSmall(1))));
        assert!(matches!(batch_indices(&c, Split::Val, 2, 0), Err(Error::EmptySplit(_))));
    }

    proptest! {
        #[test]
        fn batches_are_full_distinct_and_in_split(n_train in 2usize..60, n_val in 0usize..10, b in 2usize..9, seed: u64) {
            let c = corpus(n_train, n_val);
            let batches = batch_indices(&c, Split::Train, b, seed).unwrap();
            prop_assert_eq!(batches.len(), n_train / b);
            let mut all = std::collections::HashSet::new();
            for batch in &batches {
                prop_assert_eq!(batch.len(), b);
                for &i in batch {
                    prop_assert_eq!(c.triples[i].split, Split::Train);
                    prop_assert!(all.insert(i));
                }
            }
        }
    }
}
