//! End-to-end sessions checked against the plaintext oracle.

mod common;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssdd::bench::prepare_parties;
use ssdd::protocol::{
    evaluate_filter, run_local, LocalRunOptions, MatrixCache, PairContext, QueryDoc, SessionConfig,
};
use ssdd::select::select_rp;
use ssdd::vector::{dot, project, squared_distance, FeatureIndexSet};
use ssdd::{compare_results, oracle_detect, DocumentVector, ExecMode, SelectionMethod};

const TOLERANCES: [f64; 6] = [0.0, 0.3, 0.5, 0.75, 0.9, 1.0];

fn opts(seed: u64, cache: &MatrixCache) -> LocalRunOptions {
    LocalRunOptions {
        mask_seed: seed,
        exec: ExecMode::Parallel,
        cache: Some(cache.clone()),
    }
}

#[test]
fn filter_examples() {
    let e = evaluate_filter(0.5, 1.0, 0.5, 0.8);
    assert!((e.delta - 0.5).abs() < 1e-15 && (e.upsilon - 0.75).abs() < 1e-15 && !e.passed);
    let e = evaluate_filter(1.0, 1.0, 1.0, 1.0);
    assert!(e.delta == 0.0 && e.upsilon == 1.0 && e.passed);
    let e = evaluate_filter(0.0, 1.0, 1.0, 0.8);
    assert!(e.delta == 2.0 && e.upsilon == 0.0 && !e.passed);
    // Rounding below zero is clamped.
    let e = evaluate_filter(0.5 + 1e-17, 0.5, 0.5, 1.0);
    assert!(e.delta == 0.0 && e.passed);
}

/// Every pair of a 100×100 mini-corpus: the 2-step decision equals the
/// 1-step decision, and filtered pairs really are dissimilar.
#[test]
fn two_step_pairs_match_base_pairs() {
    let corpus = common::mini_corpus(200, 60, 21);
    let (alice, bob) = corpus.vectors().split_at(100);
    for (k, &eps) in [0.3, 0.6, 0.9].iter().enumerate() {
        let f = [4, 12, 30][k];
        let config = SessionConfig::new(60, f, SelectionMethod::Rp, eps).with_seed(k as u64);
        let set = select_rp(config.rp_seed, 60, f).unwrap();
        let mut ctx = PairContext::new(config, 99).unwrap();
        for u in alice {
            for v in bob {
                let base = ctx.run_base_pair(u, v).unwrap();
                let fs = ctx.run_fs_pair(u, v, &set).unwrap();
                let cos = dot(u, v).unwrap();
                assert_eq!(base.decision.similar, fs.decision.similar);
                assert_eq!(base.decision.similar, cos >= eps);
                assert!((base.decision.cosine.unwrap() - cos).abs() < 1e-9);
                if fs.decision.filtered {
                    assert!(cos < eps);
                    assert!(fs.decision.cosine.is_none());
                }
                let filter = fs.filter.unwrap();
                assert!(filter.upsilon >= cos - 1e-9);
                let d2 = squared_distance(&project(u, &set).unwrap(), &project(v, &set).unwrap())
                    .unwrap();
                assert!((filter.delta - d2).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn pair_traffic_ordering() {
    let n = 40;
    let config = SessionConfig::new(n, 8, SelectionMethod::Rp, 0.9);
    let set = select_rp(config.rp_seed, n, 8).unwrap();
    let mut ctx = PairContext::new(config, 5).unwrap();
    // u lives off the selected dims, v only on them: Δ = 1, υ = 0.5.
    let off: Vec<(u32, u32)> = (0..n)
        .filter(|i| !set.indexes().contains(i))
        .take(10)
        .map(|i| (i as u32, 1 + i as u32 % 3))
        .collect();
    let on: Vec<(u32, u32)> = set.indexes().iter().map(|&i| (i as u32, 2)).collect();
    let u = DocumentVector::from_counts(n, &off).unwrap();
    let v = DocumentVector::from_counts(n, &on).unwrap();

    let same = ctx.run_fs_pair(&u, &u, &set).unwrap();
    assert!(!same.decision.filtered && same.decision.similar);
    let far = ctx.run_fs_pair(&u, &v, &set).unwrap();
    assert!(far.decision.filtered && !far.decision.similar);
    assert!((far.filter.unwrap().upsilon - 0.5).abs() < 1e-9);
    let total = |o: &ssdd::protocol::PairOutcome| o.bytes_alice + o.bytes_bob;
    assert!(total(&far) < total(&same));

    // Filter traffic has a fixed size, so the rest of `same` is step 2.
    let step2 = total(&same) - total(&far);
    let base = ctx.run_base_pair(&u, &u).unwrap();
    assert!(total(&base) >= step2);
}

#[test]
fn every_method_matches_oracle() {
    let corpus = common::mini_corpus(120, 80, 8);
    let (queries, targets) = prepare_parties(&corpus, 12, 4, false).unwrap();
    let alice: Vec<DocumentVector> = queries.iter().map(|q| q.vector.clone()).collect();
    let cache = MatrixCache::new();
    for &eps in &TOLERANCES {
        let oracle = oracle_detect(&alice, &targets, eps, ExecMode::Sequential).unwrap();
        for method in SelectionMethod::ALL {
            for f in [1, 8, 80] {
                let config = SessionConfig::new(80, f, method, eps).with_seed(f as u64);
                let report =
                    run_local(&config, &queries, Arc::clone(&targets), &opts(1, &cache)).unwrap();
                assert!(!report.aborted, "{:?}", report.error);
                let diff = compare_results(&report, &oracle);
                assert!(diff.is_empty(), "{method} f={f} ε={eps}: {diff:?}");
                let m = &report.metrics;
                assert_eq!(m.pairs_total, (queries.len() * targets.len()) as u64);
                assert_eq!(m.pairs_filtered + m.full_products, m.pairs_total);
                if method == SelectionMethod::Base {
                    assert_eq!(m.pairs_filtered, 0);
                    assert_eq!(report.f, 80);
                }
                // Each decision's cosine, when present, is the plaintext one.
                for d in &report.decisions {
                    if let Some(c) = d.cosine {
                        let key = (d.query, d.target);
                        if let Some(&o) = oracle.cosines.get(&key) {
                            assert!((c - o).abs() < 1e-9);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn small_accounting_example() {
    let n = 6;
    let docs = |terms: &[&[u32]]| -> Vec<DocumentVector> {
        terms
            .iter()
            .map(|t| {
                DocumentVector::from_counts(n, &t.iter().map(|&i| (i, 1)).collect::<Vec<_>>())
                    .unwrap()
            })
            .collect()
    };
    let queries: Vec<QueryDoc> = docs(&[&[0, 1], &[2, 3]])
        .into_iter()
        .map(QueryDoc::from_vector)
        .collect();
    let targets = Arc::new(docs(&[&[0, 1], &[4], &[3, 5]]));
    for method in SelectionMethod::ALL {
        let config = SessionConfig::new(n, 2, method, 0.4);
        let report = run_local(
            &config,
            &queries,
            Arc::clone(&targets),
            &LocalRunOptions::default(),
        )
        .unwrap();
        let m = &report.metrics;
        assert_eq!(m.queries, 2);
        assert_eq!(m.pairs_total, 6);
        assert_eq!(m.pairs_filtered + m.full_products, 6);
        assert_eq!(report.decisions.len(), 6);
        let similar: Vec<(u32, u32)> = report.similar_pairs().into_iter().collect();
        assert_eq!(similar, vec![(0, 0), (1, 2)], "{method}");
        assert!(m.scalar_mult_count > 0);
    }
}

#[test]
fn transports_agree() {
    let corpus = common::mini_corpus(50, 70, 17);
    let (queries, targets) = prepare_parties(&corpus, 5, 1, false).unwrap();
    let cache = MatrixCache::new();
    for method in SelectionMethod::ALL {
        let config = SessionConfig::new(70, 7, method, 0.5).with_seed(3);
        let local = run_local(&config, &queries, Arc::clone(&targets), &opts(9, &cache)).unwrap();
        let chan = common::run_channel(&config, &queries, Arc::clone(&targets), 9);
        let tcp = common::run_tcp(&config, &queries, Arc::clone(&targets), 9);
        for other in [&chan, &tcp] {
            assert_eq!(local.decisions, other.decisions, "{method}");
            assert_eq!(
                local.metrics.counters(),
                other.metrics.counters(),
                "{method}"
            );
        }
    }
}

#[test]
fn runs_are_deterministic_and_exec_mode_free() {
    let corpus = common::mini_corpus(60, 50, 5);
    let (queries, targets) = prepare_parties(&corpus, 6, 2, true).unwrap();
    let config = SessionConfig::new(50, 5, SelectionMethod::Hf, 0.6).with_seed(8);
    let run = |exec| {
        let o = LocalRunOptions {
            mask_seed: 4,
            exec,
            cache: None,
        };
        run_local(&config, &queries, Arc::clone(&targets), &o).unwrap()
    };
    let (a, b, c) = (
        run(ExecMode::Parallel),
        run(ExecMode::Parallel),
        run(ExecMode::Sequential),
    );
    assert_eq!(a.decisions, b.decisions);
    assert_eq!(a.metrics.counters(), b.metrics.counters());
    assert_eq!(a.decisions, c.decisions);
    assert_eq!(a.metrics.counters(), c.metrics.counters());
    // With overlap each query meets itself.
    assert!(a.decisions.iter().filter(|d| d.similar).count() >= queries.len());
}

#[test]
fn degenerate_documents_are_never_similar() {
    let n = 5;
    let good = DocumentVector::from_counts(n, &[(0, 1), (1, 2)]).unwrap();
    let queries = vec![
        QueryDoc::from_vector(good.clone()),
        QueryDoc::from_vector(DocumentVector::zero(n)),
    ];
    let targets = Arc::new(vec![good.clone(), DocumentVector::zero(n)]);
    for method in SelectionMethod::ALL {
        let config = SessionConfig::new(n, 2, method, 0.0);
        let r = run_local(
            &config,
            &queries,
            Arc::clone(&targets),
            &LocalRunOptions::default(),
        )
        .unwrap();
        let similar: Vec<(u32, u32)> = r.similar_pairs().into_iter().collect();
        assert_eq!(similar, vec![(0, 0)], "{method}");
        let oracle = oracle_detect(
            &[good.clone(), DocumentVector::zero(n)],
            &targets,
            0.0,
            ExecMode::Sequential,
        )
        .unwrap();
        assert!(compare_results(&r, &oracle).is_empty());
        assert_eq!(r.metrics.pairs_filtered + r.metrics.full_products, 4);
    }
}

#[test]
fn fully_filtered_workload_costs_scale_with_f() {
    // Queries and targets on disjoint halves of the vocabulary, selected
    // dims all on the query side: υ = 0.5 for every pair, so ε = 0.6 filters all.
    let n = 400;
    let f = 40;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let queries: Vec<QueryDoc> = (0..4)
        .map(|_| QueryDoc::from_vector(common::random_doc(&mut rng, n / 2, 20)))
        .map(|q| {
            let e: Vec<(u32, f64)> = q.vector.entries().to_vec();
            QueryDoc::from_vector(DocumentVector::from_unit_entries(n, e).unwrap())
        })
        .collect();
    let targets: Vec<DocumentVector> = (0..10)
        .map(|_| {
            let d = common::random_doc(&mut rng, n / 2, 30);
            let e = d
                .entries()
                .iter()
                .map(|&(i, w)| (i + (n / 2) as u32, w))
                .collect();
            DocumentVector::from_unit_entries(n, e).unwrap()
        })
        .collect();
    let targets = Arc::new(targets);
    let base = run_local(
        &SessionConfig::new(n, f, SelectionMethod::Base, 0.6),
        &queries,
        Arc::clone(&targets),
        &LocalRunOptions::default(),
    )
    .unwrap();
    let lf = run_local(
        &SessionConfig::new(n, f, SelectionMethod::Lf, 0.6),
        &queries,
        Arc::clone(&targets),
        &LocalRunOptions::default(),
    )
    .unwrap();
    assert_eq!(lf.metrics.pairs_filtered, lf.metrics.pairs_total);
    assert_eq!(lf.metrics.full_products, 0);
    let ratio = lf.metrics.scalar_mult_count as f64 / base.metrics.scalar_mult_count as f64;
    assert!(ratio <= 1.1 * f as f64 / n as f64, "ratio {ratio}");
    assert!(lf.metrics.bytes_sent_alice < base.metrics.bytes_sent_alice);
    assert!(lf.metrics.bytes_sent_bob < base.metrics.bytes_sent_bob);
}

#[test]
fn index_sets_must_fit_the_session() {
    let config = SessionConfig::new(10, 3, SelectionMethod::Rp, 0.5);
    let mut ctx = PairContext::new(config, 0).unwrap();
    let u = DocumentVector::from_counts(10, &[(0, 1)]).unwrap();
    let wrong = FeatureIndexSet::new(vec![0, 1], 10).unwrap();
    assert!(ctx.run_fs_pair(&u, &u, &wrong).is_err());
    assert!(SessionConfig::new(10, 11, SelectionMethod::Hf, 0.5)
        .validate()
        .is_err());
    assert!(SessionConfig::new(10, 0, SelectionMethod::Rp, 0.5)
        .validate()
        .is_err());
    assert!(SessionConfig::new(10, 0, SelectionMethod::Base, 0.5)
        .validate()
        .is_ok());
    assert!(SessionConfig::new(10, 2, SelectionMethod::Rp, 1.5)
        .validate()
        .is_err());
}
