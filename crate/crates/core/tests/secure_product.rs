//! The masked product recovers the plaintext dot product exactly, and Bob's
//! reply matches a dense transpose computed independently.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssdd::secure_product::{
    mask, mask_width, recover, respond, OpCounter, SecretMask, SharedRandomMatrix,
};
use ssdd::vector::{FeatureVector, SparseEntries};
use ssdd::ExecMode;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn recovers_plaintext_dot(seed in any::<u64>(), n in 1usize..150, a in 1usize..150, b in 1usize..150) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = common::random_doc(&mut rng, n, a);
        let v = common::random_doc(&mut rng, n, b);
        let m = SharedRandomMatrix::generate(seed ^ 7, n).unwrap();
        let r = SecretMask::draw(m.cols(), &mut rng);
        let z = mask(&u, &m, &r, ExecMode::Sequential).unwrap();
        let reply = respond(&z, &v, &m, true, &OpCounter::new()).unwrap();
        let expect = common::dense_dot(&u, &v);
        prop_assert!((recover(&reply, &r).unwrap() - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        prop_assert!((reply.norm_v2.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn real_valued_feature_vectors(seed in any::<u64>(), f in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = FeatureVector::new((0..f).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let y = FeatureVector::new((0..f).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(-2.0..2.0) }).collect());
        let m = SharedRandomMatrix::generate(seed, f).unwrap();
        let r = SecretMask::draw(m.cols(), &mut rng);
        let z = mask(&x, &m, &r, ExecMode::Parallel).unwrap();
        let reply = respond(&z, &y, &m, true, &OpCounter::new()).unwrap();
        let expect: f64 = x.values().iter().zip(y.values()).map(|(a, b)| a * b).sum();
        let norm: f64 = y.values().iter().map(|b| b * b).sum();
        prop_assert!((recover(&reply, &r).unwrap() - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        prop_assert!((reply.norm_v2.unwrap() - norm).abs() <= 1e-12 * (1.0 + norm));
    }
}

#[test]
fn reply_matches_dense_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in [1, 2, 3, 17, 64] {
        let m = SharedRandomMatrix::generate(99, n).unwrap();
        let lazy = SharedRandomMatrix::generate_lazy(99, n).unwrap();
        assert_eq!(m.cols(), n.div_ceil(2));
        assert_eq!(mask_width(n), m.cols());
        // Dense A built element-wise from the addressable generator.
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..m.cols())
                    .map(|j| SharedRandomMatrix::generated_entry(99, i, j))
                    .collect()
            })
            .collect();
        for (i, row) in a.iter().enumerate() {
            assert_eq!(m.row(i).as_ref(), &row[..]);
            assert_eq!(lazy.row(i).as_ref(), &row[..]);
        }

        let u = common::random_doc(&mut rng, n, n);
        let v = common::random_doc(&mut rng, n, n / 2 + 1);
        let r = SecretMask::draw(m.cols(), &mut rng);
        let z = mask(&u, &m, &r, ExecMode::Sequential).unwrap();
        let (ud, vd) = (u.to_dense().0, v.to_dense().0);
        for i in 0..n {
            let ar: f64 = (0..m.cols()).map(|j| a[i][j] * r.values()[j]).sum();
            assert!((z.z[i] - (ud[i] + ar)).abs() < 1e-12);
        }
        let ops = OpCounter::new();
        let reply = respond(&z, &v, &m, false, &ops).unwrap();
        for (j, &tj) in reply.t.iter().enumerate() {
            let atv: f64 = (0..n).map(|i| a[i][j] * vd[i]).sum();
            assert!((tj - atv).abs() < 1e-12);
        }
        let zv: f64 = (0..n).map(|i| z.z[i] * vd[i]).sum();
        assert!((reply.s - zv).abs() < 1e-12);
        assert_eq!(
            ops.get(),
            v.nonzeros().count() as u64 * (1 + m.cols() as u64)
        );
        assert!(reply.norm_v2.is_none());
    }
}

#[test]
fn sequential_and_parallel_masks_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = SharedRandomMatrix::generate(3, 500).unwrap();
    let u = common::random_doc(&mut rng, 500, 80);
    let r = SecretMask::draw(m.cols(), &mut rng);
    assert_eq!(
        mask(&u, &m, &r, ExecMode::Sequential).unwrap(),
        mask(&u, &m, &r, ExecMode::Parallel).unwrap()
    );
}
