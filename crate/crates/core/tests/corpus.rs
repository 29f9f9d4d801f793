//! Corpus ingestion round-trips through both on-disk formats.

mod common;

use std::io::Cursor;

use proptest::prelude::*;
use ssdd::corpus::{
    load_corpus_file, parse_bag_of_words, read_cache, split_queries, write_cache, write_docword,
    Corpus, RawDocument,
};
use ssdd::Error;

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    (1usize..30, 1usize..40).prop_flat_map(|(d, w)| {
        prop::collection::vec(
            prop::collection::btree_map(0..w as u32, 1u32..100, 0..w.min(12)),
            d,
        )
        .prop_map(move |docs| {
            let documents = docs
                .into_iter()
                .enumerate()
                .map(|(doc_id, m)| RawDocument {
                    doc_id,
                    counts: m.into_iter().collect(),
                })
                .collect();
            Corpus::from_documents(w, documents).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn docword_round_trip(corpus in corpus_strategy()) {
        let mut buf = Vec::new();
        write_docword(&corpus, &mut buf).unwrap();
        let back = parse_bag_of_words(Cursor::new(buf)).unwrap();
        prop_assert_eq!(&back, &corpus);
        let stats = back.stats();
        let expected_tokens: u64 = corpus.documents().unwrap().iter().map(|d| d.total_tokens()).sum();
        prop_assert_eq!(stats.total_tokens, Some(expected_tokens));
        for v in back.vectors() {
            prop_assert!(v.is_degenerate() || (v.squared_norm().sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn cache_round_trip_keeps_vectors(corpus in corpus_strategy()) {
        let mut buf = Vec::new();
        write_cache(&corpus, &mut buf).unwrap();
        let back = read_cache(Cursor::new(buf)).unwrap();
        prop_assert_eq!(back.vectors(), corpus.vectors());
        prop_assert_eq!(back.vocabulary_size(), corpus.vocabulary_size());
        prop_assert!(back.documents().is_none());
    }

    #[test]
    fn splits_partition_ids(d in 1usize..200, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let k = 1 + ((d - 1) as f64 * k_frac) as usize;
        let s = split_queries(d, k, seed, false).unwrap();
        prop_assert_eq!(s.queries.len(), k);
        let mut all: Vec<usize> = s.queries.iter().chain(&s.targets).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..d).collect::<Vec<_>>());
        prop_assert_eq!(&s, &split_queries(d, k, seed, false).unwrap());
        let o = split_queries(d, k, seed, true).unwrap();
        prop_assert_eq!(&o.queries, &s.queries);
        prop_assert_eq!(o.targets, (0..d).collect::<Vec<_>>());
    }
}

#[test]
fn files_are_detected_by_magic() {
    let corpus = common::mini_corpus(20, 30, 2);
    let dir = tempfile::tempdir().unwrap();
    let text = dir.path().join("docword.txt");
    let bin = dir.path().join("corpus.bin");
    write_docword(&corpus, std::fs::File::create(&text).unwrap()).unwrap();
    write_cache(&corpus, std::fs::File::create(&bin).unwrap()).unwrap();
    assert_eq!(load_corpus_file(&text).unwrap(), corpus);
    assert_eq!(load_corpus_file(&bin).unwrap().vectors(), corpus.vectors());
    assert!(matches!(
        load_corpus_file(&dir.path().join("missing")),
        Err(Error::Io(_))
    ));
}

#[test]
fn truncated_cache_is_rejected() {
    let mut buf = Vec::new();
    write_cache(&common::mini_corpus(5, 10, 1), &mut buf).unwrap();
    for cut in [4, 8, 12, 20, buf.len() - 1] {
        assert!(
            read_cache(Cursor::new(buf[..cut].to_vec())).is_err(),
            "cut {cut}"
        );
    }
}
