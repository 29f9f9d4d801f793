#![allow(dead_code)]

use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use rand::Rng;
use ssdd::corpus::Corpus;
use ssdd::protocol::{
    channel_pair, AliceSession, BobSession, DetectionReport, QueryDoc, SessionConfig, TcpTransport,
};
use ssdd::synthetic::{generate, SyntheticSpec};
use ssdd::DocumentVector;

/// Random count vector with `nnz` distinct non-zero terms.
pub fn random_doc<R: Rng>(rng: &mut R, n: usize, nnz: usize) -> DocumentVector {
    let nnz = nnz.clamp(1, n);
    let mut idx: Vec<u32> = rand::seq::index::sample(rng, n, nnz)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    idx.sort_unstable();
    let counts: Vec<(u32, u32)> = idx.into_iter().map(|i| (i, rng.gen_range(1..20))).collect();
    DocumentVector::from_counts(n, &counts).unwrap()
}

/// Dense plaintext dot product, independent of the sparse code path.
pub fn dense_dot(u: &DocumentVector, v: &DocumentVector) -> f64 {
    let a = u.to_dense();
    let b = v.to_dense();
    a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum()
}

pub fn mini_corpus(docs: usize, vocab: usize, seed: u64) -> Corpus {
    generate(&SyntheticSpec::small(docs, vocab, seed)).unwrap()
}

/// Alice over a real socket, Bob on a background thread. Bob's scalar
/// multiplications are folded into the report like `run_local` does.
pub fn run_tcp(
    config: &SessionConfig,
    queries: &[QueryDoc],
    targets: Arc<Vec<DocumentVector>>,
    mask_seed: u64,
) -> DetectionReport {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let n = config.n;
    let bob = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut t = TcpTransport::from_stream(stream).unwrap();
        BobSession::from_shared(n, targets)
            .unwrap()
            .serve(&mut t)
            .unwrap()
    });
    let mut t = TcpTransport::connect(addr).unwrap();
    let mut report = AliceSession::new(config.clone(), queries, mask_seed)
        .unwrap()
        .run_detection(&mut t);
    report.metrics.scalar_mult_count = bob.join().unwrap().scalar_mult_count;
    report
}

/// Same, over in-process frame queues.
pub fn run_channel(
    config: &SessionConfig,
    queries: &[QueryDoc],
    targets: Arc<Vec<DocumentVector>>,
    mask_seed: u64,
) -> DetectionReport {
    let (mut a, mut b) = channel_pair();
    let n = config.n;
    let bob = thread::spawn(move || {
        BobSession::from_shared(n, targets)
            .unwrap()
            .serve(&mut b)
            .unwrap()
    });
    let mut report = AliceSession::new(config.clone(), queries, mask_seed)
        .unwrap()
        .run_detection(&mut a);
    report.metrics.scalar_mult_count = bob.join().unwrap().scalar_mult_count;
    report
}

use ssdd::protocol::{FilterEntry, FullEntry, Hello, ProtocolMessage};
use ssdd::SelectionMethod;

fn reals<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1e6..1e6)).collect()
}

fn ids<R: Rng>(rng: &mut R, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.gen()).collect()
}

/// A random instance of a random message type. `kind` picks the type.
pub fn random_message<R: Rng>(rng: &mut R, kind: usize) -> ProtocolMessage {
    match kind % 8 {
        0 => ProtocolMessage::Hello(Hello {
            version: rng.gen(),
            n: rng.gen(),
            f: rng.gen(),
            method: SelectionMethod::ALL[rng.gen_range(0..5)],
            epsilon: rng.gen(),
            matrix_seed: rng.gen(),
            fs_matrix_seed: rng.gen(),
            rp_seed: rng.gen(),
        }),
        1 => ProtocolMessage::HelloAck {
            bob_doc_count: rng.gen(),
        },
        2 => {
            let len = rng.gen_range(0..50);
            ProtocolMessage::DfVector {
                counts: ids(rng, len),
            }
        }
        3 => {
            let (k, f) = (rng.gen_range(0..20), rng.gen_range(0..40));
            ProtocolMessage::FilterQuery {
                query_id: rng.gen(),
                indexes: ids(rng, k),
                z: reals(rng, f),
            }
        }
        4 => {
            let (m, w) = (rng.gen_range(0..8), rng.gen_range(0..20));
            ProtocolMessage::FilterReply {
                query_id: rng.gen(),
                entries: (0..m)
                    .map(|_| FilterEntry {
                        s: rng.gen_range(-1e3..1e3),
                        norm_v2: rng.gen(),
                        t: reals(rng, w),
                    })
                    .collect(),
            }
        }
        5 => {
            let (k, n) = (rng.gen_range(0..20), rng.gen_range(0..60));
            ProtocolMessage::FullQuery {
                query_id: rng.gen(),
                survivor_ids: ids(rng, k),
                z: reals(rng, n),
            }
        }
        6 => {
            let (k, w) = (rng.gen_range(0..8), rng.gen_range(0..30));
            ProtocolMessage::FullReply {
                query_id: rng.gen(),
                entries: (0..k)
                    .map(|_| FullEntry {
                        doc_id: rng.gen(),
                        s: rng.gen_range(-1e3..1e3),
                        t: reals(rng, w),
                    })
                    .collect(),
            }
        }
        _ => ProtocolMessage::Bye,
    }
}
