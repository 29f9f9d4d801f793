//! Alice and Bob session state machines.
//!
//! Alice drives the session: `Hello`, optionally the document-frequency
//! exchange, then per query one batched filtering round (skipped for BASE)
//! and one batched refinement round for the surviving documents, then `Bye`.
//! Bob answers each request; he never learns ε-based decisions.

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::transport::{LoopbackTransport, Transport};
use super::wire::{encode_frame, FilterEntry, FullEntry, Hello, ProtocolMessage, PROTOCOL_VERSION};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::par::{map_slice, ExecMode};
use crate::secure_product::{
    mask, recover, respond, MaskedVector, OpCounter, ProductReply, SecretMask, SharedRandomMatrix,
};
use crate::select::{
    aggregate_whole_vector, document_frequency, select_gf, select_hf, select_lf, select_rp,
    SelectionMethod, WholeVector,
};
use crate::vector::{project, DenseVector, DocumentVector, FeatureIndexSet, FeatureVector};

/// Parameters both parties agree on in `Hello`.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub n: usize,
    pub f: usize,
    pub method: SelectionMethod,
    pub epsilon: f64,
    pub matrix_seed: u64,
    pub fs_matrix_seed: u64,
    pub rp_seed: u64,
    pub protocol_version: u16,
}

impl SessionConfig {
    pub fn new(n: usize, f: usize, method: SelectionMethod, epsilon: f64) -> Self {
        Self {
            n,
            f,
            method,
            epsilon,
            matrix_seed: 0x5eed_0001,
            fs_matrix_seed: 0x5eed_0002,
            rp_seed: 0x5eed_0003,
            protocol_version: PROTOCOL_VERSION,
        }
    }

    /// Derives the three shared seeds from one number.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.matrix_seed = seed.wrapping_mul(3).wrapping_add(1);
        self.fs_matrix_seed = seed.wrapping_mul(3).wrapping_add(2);
        self.rp_seed = seed.wrapping_mul(3).wrapping_add(3);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > u32::MAX as usize {
            return Err(Error::range(format!("n = {} out of range", self.n)));
        }
        if self.method.filters() && (self.f == 0 || self.f > self.n) {
            return Err(Error::range(format!(
                "f = {} outside 1..={}",
                self.f, self.n
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::range(format!(
                "tolerance {} outside [0, 1]",
                self.epsilon
            )));
        }
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!(
                "unsupported protocol version {}",
                self.protocol_version
            )));
        }
        Ok(())
    }

    pub fn hello(&self) -> Hello {
        Hello {
            version: self.protocol_version,
            n: self.n as u32,
            f: self.f as u32,
            method: self.method,
            epsilon: self.epsilon,
            matrix_seed: self.matrix_seed,
            fs_matrix_seed: self.fs_matrix_seed,
            rp_seed: self.rp_seed,
        }
    }

    pub fn from_hello(h: &Hello) -> Self {
        Self {
            n: h.n as usize,
            f: h.f as usize,
            method: h.method,
            epsilon: h.epsilon,
            matrix_seed: h.matrix_seed,
            fs_matrix_seed: h.fs_matrix_seed,
            rp_seed: h.rp_seed,
            protocol_version: h.version,
        }
    }
}

type MatrixMap = HashMap<(u64, usize), Arc<SharedRandomMatrix>>;

/// Process-wide store of generated matrices, keyed by `(seed, n)`.
///
/// Lets both parties of an in-process run share one copy.
#[derive(Debug, Clone, Default)]
pub struct MatrixCache(Arc<Mutex<MatrixMap>>);

impl MatrixCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, seed: u64, n: usize) -> Result<Arc<SharedRandomMatrix>> {
        let mut map = self.0.lock().expect("matrix cache poisoned");
        if let Some(m) = map.get(&(seed, n)) {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(SharedRandomMatrix::generate(seed, n)?);
        map.insert((seed, n), Arc::clone(&m));
        Ok(m)
    }
}

/// The `n`-dimensional matrix and, for filtering methods, the `f`-dimensional one.
#[derive(Debug, Clone)]
pub struct SessionKeys {
    pub matrix: Arc<SharedRandomMatrix>,
    pub fs_matrix: Option<Arc<SharedRandomMatrix>>,
}

impl SessionKeys {
    pub fn derive(config: &SessionConfig, cache: Option<&MatrixCache>) -> Result<Self> {
        let get = |seed, n| match cache {
            Some(c) => c.get(seed, n),
            None => SharedRandomMatrix::generate(seed, n).map(Arc::new),
        };
        Ok(Self {
            matrix: get(config.matrix_seed, config.n)?,
            fs_matrix: if config.method.filters() {
                Some(get(config.fs_matrix_seed, config.f)?)
            } else {
                None
            },
        })
    }

    fn fs(&self) -> Result<&SharedRandomMatrix> {
        self.fs_matrix
            .as_deref()
            .ok_or_else(|| Error::Protocol("no filtering matrix in a BASE session".into()))
    }
}

/// Outcome of the filtering test for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterEvaluation {
    /// Squared distance of the feature vectors, clamped at 0.
    pub delta: f64,
    /// `1 − Δ/2`, an upper bound on the cosine.
    pub upsilon: f64,
    pub passed: bool,
}

/// `Δ = ‖U^FS‖² − 2δ + ‖V^FS‖²`, `υ = 1 − Δ/2`, pass iff `υ ≥ ε`.
pub fn evaluate_filter(
    delta_fs: f64,
    norm_u2: f64,
    norm_v2: f64,
    epsilon: f64,
) -> FilterEvaluation {
    let delta = (norm_u2 - 2.0 * delta_fs + norm_v2).max(0.0);
    let upsilon = 1.0 - delta / 2.0;
    FilterEvaluation {
        delta,
        upsilon,
        passed: upsilon >= epsilon,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityDecision {
    pub query: u32,
    pub target: u32,
    pub similar: bool,
    /// Absent when the pair was filtered.
    pub cosine: Option<f64>,
    pub filtered: bool,
}

impl SimilarityDecision {
    fn filtered(query: u32, target: u32) -> Self {
        Self {
            query,
            target,
            similar: false,
            cosine: None,
            filtered: true,
        }
    }
}

/// Counters for one detection run. All counters add commutatively.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionMetrics {
    pub queries: u64,
    pub pairs_total: u64,
    pub pairs_filtered: u64,
    pub full_products: u64,
    pub bytes_sent_alice: u64,
    pub bytes_sent_bob: u64,
    pub wall_time: Duration,
    pub scalar_mult_count: u64,
}

impl SessionMetrics {
    pub fn filter_ratio(&self) -> f64 {
        if self.pairs_total == 0 {
            0.0
        } else {
            self.pairs_filtered as f64 / self.pairs_total as f64
        }
    }

    pub fn merge(&mut self, other: &SessionMetrics) {
        self.queries += other.queries;
        self.pairs_total += other.pairs_total;
        self.pairs_filtered += other.pairs_filtered;
        self.full_products += other.full_products;
        self.bytes_sent_alice += other.bytes_sent_alice;
        self.bytes_sent_bob += other.bytes_sent_bob;
        self.wall_time += other.wall_time;
        self.scalar_mult_count += other.scalar_mult_count;
    }

    /// Everything except the wall clock, for determinism checks.
    pub fn counters(&self) -> [u64; 7] {
        [
            self.queries,
            self.pairs_total,
            self.pairs_filtered,
            self.full_products,
            self.bytes_sent_alice,
            self.bytes_sent_bob,
            self.scalar_mult_count,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub method: SelectionMethod,
    pub f: usize,
    pub epsilon: f64,
    pub decisions: Vec<SimilarityDecision>,
    pub metrics: SessionMetrics,
    pub query_times: Vec<Duration>,
    pub aborted: bool,
    pub error: Option<String>,
}

impl DetectionReport {
    fn new(config: &SessionConfig) -> Self {
        Self {
            method: config.method,
            f: if config.method.filters() {
                config.f
            } else {
                config.n
            },
            epsilon: config.epsilon,
            decisions: Vec::new(),
            metrics: SessionMetrics::default(),
            query_times: Vec::new(),
            aborted: false,
            error: None,
        }
    }

    /// `(query, target)` pairs decided similar.
    pub fn similar_pairs(&self) -> BTreeSet<(u32, u32)> {
        self.decisions
            .iter()
            .filter(|d| d.similar)
            .map(|d| (d.query, d.target))
            .collect()
    }

    pub fn mean_query_time(&self) -> Duration {
        if self.query_times.is_empty() {
            Duration::ZERO
        } else {
            self.query_times.iter().sum::<Duration>() / self.query_times.len() as u32
        }
    }
}

/// One of Alice's query documents.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryDoc {
    pub vector: DocumentVector,
    /// Ranked by LF and HF: raw counts, or any positive rescaling of them.
    pub current: DenseVector,
}

impl QueryDoc {
    pub fn from_vector(vector: DocumentVector) -> Self {
        let current = vector.to_dense();
        Self { vector, current }
    }

    pub fn from_corpus(corpus: &Corpus, i: usize) -> Self {
        Self {
            vector: corpus.vectors()[i].clone(),
            current: corpus.current_vector(i),
        }
    }

    pub fn all_from_corpus(corpus: &Corpus) -> Vec<Self> {
        (0..corpus.len())
            .map(|i| Self::from_corpus(corpus, i))
            .collect()
    }
}

/// Index set used for the filtering step of one query.
fn query_index_set(
    config: &SessionConfig,
    session_set: Option<&FeatureIndexSet>,
    whole: Option<&WholeVector>,
    q: &QueryDoc,
) -> Result<FeatureIndexSet> {
    match config.method {
        SelectionMethod::Lf => select_lf(q.current.as_slice(), config.f),
        SelectionMethod::Hf => {
            let whole = whole
                .ok_or_else(|| Error::Protocol("HF needs the aggregated whole vector".into()))?;
            select_hf(q.current.as_slice(), whole, config.f)
        }
        SelectionMethod::Rp | SelectionMethod::Gf => session_set
            .cloned()
            .ok_or_else(|| Error::Protocol("session index set missing".into())),
        SelectionMethod::Base => Err(Error::Protocol("BASE has no filtering step".into())),
    }
}

fn session_index_set(
    config: &SessionConfig,
    whole: Option<&WholeVector>,
) -> Result<Option<FeatureIndexSet>> {
    match config.method {
        SelectionMethod::Rp => select_rp(config.rp_seed, config.n, config.f).map(Some),
        SelectionMethod::Gf => {
            let whole = whole
                .ok_or_else(|| Error::Protocol("GF needs the aggregated whole vector".into()))?;
            select_gf(whole, config.f).map(Some)
        }
        _ => Ok(None),
    }
}

fn indexes_u32(set: &FeatureIndexSet) -> Vec<u32> {
    set.indexes().iter().map(|&i| i as u32).collect()
}

fn full_decision(
    query: u32,
    target: u32,
    cosine: f64,
    degenerate: bool,
    epsilon: f64,
) -> SimilarityDecision {
    SimilarityDecision {
        query,
        target,
        similar: !degenerate && cosine >= epsilon,
        cosine: Some(cosine),
        filtered: false,
    }
}

/// Summary of what Bob did in one session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BobSummary {
    pub documents: u64,
    pub filter_queries: u64,
    pub full_queries: u64,
    pub scalar_mult_count: u64,
}

#[derive(Debug)]
enum BobState {
    AwaitHello,
    AwaitDf(BobContext),
    Ready(BobContext),
    Closed,
}

#[derive(Debug)]
struct BobContext {
    config: SessionConfig,
    keys: SessionKeys,
    whole: Option<WholeVector>,
    /// Projections of every document onto the session-wide index set.
    fixed_projection: Option<Vec<FeatureVector>>,
}

/// Bob's side: owns the target documents and answers Alice's requests.
#[derive(Debug)]
pub struct BobSession {
    n: usize,
    docs: Arc<Vec<DocumentVector>>,
    local_df: WholeVector,
    exec: ExecMode,
    cache: Option<MatrixCache>,
    state: BobState,
    ops: OpCounter,
    summary: BobSummary,
}

impl BobSession {
    pub fn new(n: usize, docs: Vec<DocumentVector>) -> Result<Self> {
        Self::from_shared(n, Arc::new(docs))
    }

    pub fn from_shared(n: usize, docs: Arc<Vec<DocumentVector>>) -> Result<Self> {
        if let Some(v) = docs.iter().find(|v| v.dims() != n) {
            return Err(Error::dims(n, v.dims()));
        }
        if docs.len() > u32::MAX as usize {
            return Err(Error::range("too many documents"));
        }
        let local_df = document_frequency(n, &docs);
        Ok(Self {
            n,
            summary: BobSummary {
                documents: docs.len() as u64,
                ..BobSummary::default()
            },
            docs,
            local_df,
            exec: ExecMode::default(),
            cache: None,
            state: BobState::AwaitHello,
            ops: OpCounter::new(),
        })
    }

    pub fn with_exec(mut self, exec: ExecMode) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_matrix_cache(mut self, cache: MatrixCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.state, BobState::Closed)
    }

    pub fn summary(&self) -> BobSummary {
        BobSummary {
            scalar_mult_count: self.ops.get(),
            ..self.summary
        }
    }

    /// Answers requests until Alice says `Bye`.
    pub fn serve<T: Transport>(&mut self, transport: &mut T) -> Result<BobSummary> {
        while !self.is_closed() {
            let msg = transport.recv()?;
            if let Some(reply) = self.handle(msg)? {
                transport.send(&reply)?;
            }
        }
        Ok(self.summary())
    }

    /// Processes one request, returning the reply if the message expects one.
    pub fn handle(&mut self, msg: ProtocolMessage) -> Result<Option<ProtocolMessage>> {
        let state = std::mem::replace(&mut self.state, BobState::Closed);
        let (next, reply) = match (state, msg) {
            (BobState::AwaitHello, ProtocolMessage::Hello(h)) => self.on_hello(&h)?,
            (BobState::AwaitDf(ctx), ProtocolMessage::DfVector { counts }) => {
                self.on_df(ctx, counts)?
            }
            (
                BobState::Ready(ctx),
                ProtocolMessage::FilterQuery {
                    query_id,
                    indexes,
                    z,
                },
            ) => {
                let reply = self.on_filter(&ctx, query_id, indexes, z)?;
                (BobState::Ready(ctx), Some(reply))
            }
            (
                BobState::Ready(ctx),
                ProtocolMessage::FullQuery {
                    query_id,
                    survivor_ids,
                    z,
                },
            ) => {
                let reply = self.on_full(&ctx, query_id, survivor_ids, z)?;
                (BobState::Ready(ctx), Some(reply))
            }
            (
                BobState::AwaitHello | BobState::AwaitDf(_) | BobState::Ready(_),
                ProtocolMessage::Bye,
            ) => (BobState::Closed, None),
            (state, msg) => {
                return Err(Error::Protocol(format!(
                    "unexpected {} in state {}",
                    msg.name(),
                    match state {
                        BobState::AwaitHello => "AwaitHello",
                        BobState::AwaitDf(_) => "AwaitDf",
                        BobState::Ready(_) => "Ready",
                        BobState::Closed => "Closed",
                    }
                )))
            }
        };
        self.state = next;
        Ok(reply)
    }

    fn on_hello(&mut self, h: &Hello) -> Result<(BobState, Option<ProtocolMessage>)> {
        let config = SessionConfig::from_hello(h);
        config
            .validate()
            .map_err(|e| Error::Protocol(format!("bad Hello: {e}")))?;
        if config.n != self.n {
            return Err(Error::Protocol(format!(
                "Alice works in {} dimensions, Bob in {}",
                config.n, self.n
            )));
        }
        let keys = SessionKeys::derive(&config, self.cache.as_ref())?;
        let mut ctx = BobContext {
            config,
            keys,
            whole: None,
            fixed_projection: None,
        };
        let ack = ProtocolMessage::HelloAck {
            bob_doc_count: self.docs.len() as u32,
        };
        if ctx.config.method.needs_whole_vector() {
            Ok((BobState::AwaitDf(ctx), Some(ack)))
        } else {
            self.fix_projection(&mut ctx)?;
            Ok((BobState::Ready(ctx), Some(ack)))
        }
    }

    fn on_df(
        &mut self,
        mut ctx: BobContext,
        counts: Vec<u32>,
    ) -> Result<(BobState, Option<ProtocolMessage>)> {
        if counts.len() != self.n {
            return Err(Error::Protocol(format!(
                "whole vector of length {} in a {}-dimensional session",
                counts.len(),
                self.n
            )));
        }
        let whole = aggregate_whole_vector(&WholeVector { counts }, &self.local_df)?;
        ctx.whole = Some(whole);
        self.fix_projection(&mut ctx)?;
        let reply = ProtocolMessage::DfVector {
            counts: self.local_df.counts.clone(),
        };
        Ok((BobState::Ready(ctx), Some(reply)))
    }

    fn fix_projection(&self, ctx: &mut BobContext) -> Result<()> {
        if let Some(set) = session_index_set(&ctx.config, ctx.whole.as_ref())? {
            let projected = map_slice(self.exec, &self.docs, |v| project(v, &set));
            ctx.fixed_projection = Some(projected.into_iter().collect::<Result<_>>()?);
        }
        Ok(())
    }

    fn on_filter(
        &mut self,
        ctx: &BobContext,
        query_id: u32,
        indexes: Vec<u32>,
        z: Vec<f64>,
    ) -> Result<ProtocolMessage> {
        let config = &ctx.config;
        if !config.method.filters() {
            return Err(Error::Protocol("FilterQuery in a BASE session".into()));
        }
        let fs_matrix = ctx.keys.fs()?;
        if z.len() != config.f {
            return Err(Error::Protocol(format!(
                "filter vector has {} entries, expected f = {}",
                z.len(),
                config.f
            )));
        }
        let z = MaskedVector { z };
        let answer = |v: &FeatureVector| -> Result<FilterEntry> {
            let reply = respond(&z, v, fs_matrix, true, &self.ops)?;
            Ok(FilterEntry {
                s: reply.s,
                norm_v2: reply.norm_v2.unwrap_or(0.0),
                t: reply.t,
            })
        };
        let entries: Result<Vec<FilterEntry>> = if config.method.per_query() {
            let set = FeatureIndexSet::new(indexes.iter().map(|&i| i as usize).collect(), self.n)
                .map_err(|e| Error::Protocol(format!("bad index set: {e}")))?;
            if set.f() != config.f {
                return Err(Error::Protocol(format!(
                    "index set has {} dimensions, expected f = {}",
                    set.f(),
                    config.f
                )));
            }
            map_slice(self.exec, &self.docs, |v| answer(&project(v, &set)?))
                .into_iter()
                .collect()
        } else {
            if !indexes.is_empty() {
                return Err(Error::Protocol(format!(
                    "{} sessions use a fixed index set; query carried {} indexes",
                    config.method,
                    indexes.len()
                )));
            }
            let projected = ctx
                .fixed_projection
                .as_ref()
                .ok_or_else(|| Error::Protocol("session index set missing".into()))?;
            map_slice(self.exec, projected, answer)
                .into_iter()
                .collect()
        };
        self.summary.filter_queries += 1;
        Ok(ProtocolMessage::FilterReply {
            query_id,
            entries: entries?,
        })
    }

    fn on_full(
        &mut self,
        ctx: &BobContext,
        query_id: u32,
        survivor_ids: Vec<u32>,
        z: Vec<f64>,
    ) -> Result<ProtocolMessage> {
        if z.len() != self.n {
            return Err(Error::Protocol(format!(
                "full vector has {} entries, expected n = {}",
                z.len(),
                self.n
            )));
        }
        if let Some(&bad) = survivor_ids
            .iter()
            .find(|&&id| id as usize >= self.docs.len())
        {
            return Err(Error::Protocol(format!("unknown document id {bad}")));
        }
        let z = MaskedVector { z };
        let matrix = &ctx.keys.matrix;
        // Empty documents are left out of the reply; Alice scores them 0.
        let live: Vec<u32> = survivor_ids
            .into_iter()
            .filter(|&id| !self.docs[id as usize].is_degenerate())
            .collect();
        let entries = map_slice(self.exec, &live, |&id| -> Result<FullEntry> {
            let reply = respond(&z, &self.docs[id as usize], matrix, false, &self.ops)?;
            Ok(FullEntry {
                doc_id: id,
                s: reply.s,
                t: reply.t,
            })
        });
        self.summary.full_queries += 1;
        Ok(ProtocolMessage::FullReply {
            query_id,
            entries: entries.into_iter().collect::<Result<_>>()?,
        })
    }
}

/// Alice's side of the document-frequency exchange.
pub fn secure_df_exchange<T: Transport>(
    transport: &mut T,
    local: &WholeVector,
) -> Result<WholeVector> {
    transport.send(&ProtocolMessage::DfVector {
        counts: local.counts.clone(),
    })?;
    match transport.recv()? {
        ProtocolMessage::DfVector { counts } => {
            if counts.len() != local.len() {
                return Err(Error::Protocol(format!(
                    "Bob's whole vector has length {}, Alice's {}",
                    counts.len(),
                    local.len()
                )));
            }
            aggregate_whole_vector(local, &WholeVector { counts })
        }
        other => Err(Error::Protocol(format!(
            "expected DfVector, got {}",
            other.name()
        ))),
    }
}

/// Alice's side: owns the query documents and makes every decision.
pub struct AliceSession<'a> {
    config: SessionConfig,
    queries: &'a [QueryDoc],
    local_df: WholeVector,
    mask_seed: u64,
    exec: ExecMode,
    cache: Option<MatrixCache>,
}

impl<'a> AliceSession<'a> {
    /// Alice's own document set for the whole-vector exchange is her queries.
    pub fn new(config: SessionConfig, queries: &'a [QueryDoc], mask_seed: u64) -> Result<Self> {
        config.validate()?;
        if let Some(q) = queries.iter().find(|q| q.vector.dims() != config.n) {
            return Err(Error::dims(config.n, q.vector.dims()));
        }
        if queries.len() > u32::MAX as usize {
            return Err(Error::range("too many queries"));
        }
        let vectors: Vec<DocumentVector> = queries.iter().map(|q| q.vector.clone()).collect();
        Ok(Self {
            local_df: document_frequency(config.n, &vectors),
            config,
            queries,
            mask_seed,
            exec: ExecMode::default(),
            cache: None,
        })
    }

    pub fn with_exec(mut self, exec: ExecMode) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_matrix_cache(mut self, cache: MatrixCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    /// Runs every query against Bob's whole collection.
    ///
    /// A transport or protocol failure yields the partial report with
    /// `aborted` set.
    pub fn run_detection<T: Transport>(&self, transport: &mut T) -> DetectionReport {
        let mut report = DetectionReport::new(&self.config);
        let start_traffic = transport.traffic();
        let started = Instant::now();
        if let Err(e) = self.run_inner(transport, &mut report) {
            report.aborted = true;
            report.error = Some(e.to_string());
        }
        let traffic = transport.traffic();
        report.metrics.wall_time = started.elapsed();
        report.metrics.bytes_sent_alice = traffic.bytes_sent - start_traffic.bytes_sent;
        report.metrics.bytes_sent_bob = traffic.bytes_received - start_traffic.bytes_received;
        report
    }

    fn run_inner<T: Transport>(
        &self,
        transport: &mut T,
        report: &mut DetectionReport,
    ) -> Result<()> {
        let config = &self.config;
        let keys = SessionKeys::derive(config, self.cache.as_ref())?;
        transport.send(&ProtocolMessage::Hello(config.hello()))?;
        let bob_docs = match transport.recv()? {
            ProtocolMessage::HelloAck { bob_doc_count } => bob_doc_count,
            other => {
                return Err(Error::Protocol(format!(
                    "expected HelloAck, got {}",
                    other.name()
                )))
            }
        };
        let whole = if config.method.needs_whole_vector() {
            Some(secure_df_exchange(transport, &self.local_df)?)
        } else {
            None
        };
        let session_set = session_index_set(config, whole.as_ref())?;
        let mut rng = ChaCha20Rng::seed_from_u64(self.mask_seed);

        for (qi, q) in self.queries.iter().enumerate() {
            let started = Instant::now();
            let query_id = qi as u32;
            let mut decisions: Vec<Option<SimilarityDecision>> = vec![None; bob_docs as usize];

            let survivors: Vec<u32> = if config.method.filters() {
                let set = query_index_set(config, session_set.as_ref(), whole.as_ref(), q)?;
                let fs_matrix = keys.fs()?;
                let u_fs = project(&q.vector, &set)?;
                let r = SecretMask::draw(fs_matrix.cols(), &mut rng);
                let z = mask(&u_fs, fs_matrix, &r, self.exec)?;
                transport.send(&ProtocolMessage::FilterQuery {
                    query_id,
                    indexes: if config.method.per_query() {
                        indexes_u32(&set)
                    } else {
                        Vec::new()
                    },
                    z: z.z,
                })?;
                let entries = match transport.recv()? {
                    ProtocolMessage::FilterReply {
                        query_id: id,
                        entries,
                    } if id == query_id => entries,
                    other => {
                        return Err(Error::Protocol(format!(
                            "expected FilterReply for query {query_id}, got {}",
                            other.name()
                        )))
                    }
                };
                if entries.len() != bob_docs as usize {
                    return Err(Error::Protocol(format!(
                        "FilterReply covers {} documents, Bob announced {bob_docs}",
                        entries.len()
                    )));
                }
                let mut survivors = Vec::new();
                for (j, e) in entries.into_iter().enumerate() {
                    let reply = ProductReply {
                        s: e.s,
                        t: e.t,
                        norm_v2: Some(e.norm_v2),
                    };
                    let delta = recover(&reply, &r)?;
                    let eval =
                        evaluate_filter(delta, u_fs.squared_norm(), e.norm_v2, config.epsilon);
                    if eval.passed {
                        survivors.push(j as u32);
                    } else {
                        decisions[j] = Some(SimilarityDecision::filtered(query_id, j as u32));
                    }
                }
                survivors
            } else {
                (0..bob_docs).collect()
            };

            if !survivors.is_empty() {
                let r = SecretMask::draw(keys.matrix.cols(), &mut rng);
                let z = mask(&q.vector, &keys.matrix, &r, self.exec)?;
                transport.send(&ProtocolMessage::FullQuery {
                    query_id,
                    survivor_ids: survivors.clone(),
                    z: z.z,
                })?;
                let entries = match transport.recv()? {
                    ProtocolMessage::FullReply {
                        query_id: id,
                        entries,
                    } if id == query_id => entries,
                    other => {
                        return Err(Error::Protocol(format!(
                            "expected FullReply for query {query_id}, got {}",
                            other.name()
                        )))
                    }
                };
                let mut answered: HashMap<u32, FullEntry> =
                    entries.into_iter().map(|e| (e.doc_id, e)).collect();
                for &j in &survivors {
                    // Bob omits degenerate documents.
                    let (cosine, omitted) = match answered.remove(&j) {
                        Some(e) => (
                            recover(
                                &ProductReply {
                                    s: e.s,
                                    t: e.t,
                                    norm_v2: None,
                                },
                                &r,
                            )?,
                            false,
                        ),
                        None => (0.0, true),
                    };
                    let degenerate = omitted || q.vector.is_degenerate();
                    decisions[j as usize] = Some(full_decision(
                        query_id,
                        j,
                        cosine,
                        degenerate,
                        config.epsilon,
                    ));
                }
                if let Some(&extra) = answered.keys().next() {
                    return Err(Error::Protocol(format!(
                        "FullReply for unrequested document {extra}"
                    )));
                }
            }

            let decisions: Vec<SimilarityDecision> = decisions
                .into_iter()
                .map(|d| d.expect("every target decided"))
                .collect();
            let m = &mut report.metrics;
            m.queries += 1;
            m.pairs_total += decisions.len() as u64;
            m.pairs_filtered += decisions.iter().filter(|d| d.filtered).count() as u64;
            m.full_products += survivors.len() as u64;
            report.decisions.extend(decisions);
            report.query_times.push(started.elapsed());
        }
        transport.send(&ProtocolMessage::Bye)?;
        Ok(())
    }
}

/// Options for in-process runs.
#[derive(Debug, Clone, Default)]
pub struct LocalRunOptions {
    pub mask_seed: u64,
    pub exec: ExecMode,
    pub cache: Option<MatrixCache>,
}

/// Runs a whole session in-process with Bob answering synchronously.
///
/// Bob's multiplication count is folded into the report.
pub fn run_local(
    config: &SessionConfig,
    queries: &[QueryDoc],
    targets: Arc<Vec<DocumentVector>>,
    opts: &LocalRunOptions,
) -> Result<DetectionReport> {
    let cache = opts.cache.clone().unwrap_or_default();
    let bob = BobSession::from_shared(config.n, targets)?
        .with_exec(opts.exec)
        .with_matrix_cache(cache.clone());
    let mut transport = LoopbackTransport::new(bob);
    let alice = AliceSession::new(config.clone(), queries, opts.mask_seed)?
        .with_exec(opts.exec)
        .with_matrix_cache(cache);
    let mut report = alice.run_detection(&mut transport);
    report.metrics.scalar_mult_count = transport.bob().summary().scalar_mult_count;
    Ok(report)
}

/// Result of a single-pair protocol run.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub decision: SimilarityDecision,
    pub filter: Option<FilterEvaluation>,
    pub bytes_alice: u64,
    pub bytes_bob: u64,
    pub scalar_mults: u64,
}

/// Pairwise protocol runs with both parties in one place, messages still
/// passing through the wire encoding.
pub struct PairContext {
    config: SessionConfig,
    keys: SessionKeys,
    rng: ChaCha20Rng,
}

impl PairContext {
    pub fn new(config: SessionConfig, mask_seed: u64) -> Result<Self> {
        config.validate()?;
        let keys = SessionKeys::derive(&config, None)?;
        Ok(Self {
            config,
            keys,
            rng: ChaCha20Rng::seed_from_u64(mask_seed),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    fn frame_len(msg: &ProtocolMessage) -> Result<u64> {
        Ok(encode_frame(msg)?.len() as u64)
    }

    /// One secure product over all `n` dimensions.
    pub fn run_base_pair(
        &mut self,
        alice: &DocumentVector,
        bob: &DocumentVector,
    ) -> Result<PairOutcome> {
        let mut out = PairOutcome {
            decision: SimilarityDecision::filtered(0, 0),
            filter: None,
            bytes_alice: 0,
            bytes_bob: 0,
            scalar_mults: 0,
        };
        self.refine(alice, bob, &mut out)?;
        Ok(out)
    }

    fn refine(
        &mut self,
        alice: &DocumentVector,
        bob: &DocumentVector,
        out: &mut PairOutcome,
    ) -> Result<()> {
        let matrix = Arc::clone(&self.keys.matrix);
        let r = SecretMask::draw(matrix.cols(), &mut self.rng);
        let z = mask(alice, &matrix, &r, ExecMode::Sequential)?;
        let query = ProtocolMessage::FullQuery {
            query_id: 0,
            survivor_ids: vec![0],
            z: z.z,
        };
        out.bytes_alice += Self::frame_len(&query)?;
        let ProtocolMessage::FullQuery { z, .. } = query else {
            unreachable!()
        };
        let z = MaskedVector { z };

        let ops = OpCounter::new();
        let entries = if bob.is_degenerate() {
            vec![]
        } else {
            let reply = respond(&z, bob, &matrix, false, &ops)?;
            vec![FullEntry {
                doc_id: 0,
                s: reply.s,
                t: reply.t,
            }]
        };
        out.scalar_mults += ops.get();
        let reply = ProtocolMessage::FullReply {
            query_id: 0,
            entries,
        };
        out.bytes_bob += Self::frame_len(&reply)?;
        let ProtocolMessage::FullReply { entries, .. } = reply else {
            unreachable!()
        };

        let (cosine, omitted) = match entries.into_iter().next() {
            Some(e) => (
                recover(
                    &ProductReply {
                        s: e.s,
                        t: e.t,
                        norm_v2: None,
                    },
                    &r,
                )?,
                false,
            ),
            None => (0.0, true),
        };
        let degenerate = omitted || alice.is_degenerate();
        out.decision = full_decision(0, 0, cosine, degenerate, self.config.epsilon);
        Ok(())
    }

    /// Filtering step over `index_set`, then the full product only if the
    /// upper bound reaches ε.
    pub fn run_fs_pair(
        &mut self,
        alice: &DocumentVector,
        bob: &DocumentVector,
        index_set: &FeatureIndexSet,
    ) -> Result<PairOutcome> {
        let fs_matrix = Arc::clone(
            self.keys
                .fs_matrix
                .as_ref()
                .ok_or_else(|| Error::Protocol("no filtering matrix in a BASE session".into()))?,
        );
        if index_set.f() != fs_matrix.rows() {
            return Err(Error::dims(fs_matrix.rows(), index_set.f()));
        }
        let u_fs = project(alice, index_set)?;
        let r = SecretMask::draw(fs_matrix.cols(), &mut self.rng);
        let z = mask(&u_fs, &fs_matrix, &r, ExecMode::Sequential)?;
        let query = ProtocolMessage::FilterQuery {
            query_id: 0,
            indexes: if self.config.method.per_query() {
                indexes_u32(index_set)
            } else {
                Vec::new()
            },
            z: z.z,
        };
        let mut out = PairOutcome {
            decision: SimilarityDecision::filtered(0, 0),
            filter: None,
            bytes_alice: Self::frame_len(&query)?,
            bytes_bob: 0,
            scalar_mults: 0,
        };
        let ProtocolMessage::FilterQuery { z, .. } = query else {
            unreachable!()
        };

        let ops = OpCounter::new();
        let v_fs = project(bob, index_set)?;
        let reply = respond(&MaskedVector { z }, &v_fs, &fs_matrix, true, &ops)?;
        out.scalar_mults += ops.get();
        let msg = ProtocolMessage::FilterReply {
            query_id: 0,
            entries: vec![FilterEntry {
                s: reply.s,
                norm_v2: reply.norm_v2.unwrap_or(0.0),
                t: reply.t,
            }],
        };
        out.bytes_bob += Self::frame_len(&msg)?;
        let ProtocolMessage::FilterReply { mut entries, .. } = msg else {
            unreachable!()
        };
        let e = entries.pop().expect("one entry");

        let delta = recover(
            &ProductReply {
                s: e.s,
                t: e.t,
                norm_v2: Some(e.norm_v2),
            },
            &r,
        )?;
        let eval = evaluate_filter(delta, u_fs.squared_norm(), e.norm_v2, self.config.epsilon);
        out.filter = Some(eval);
        if eval.passed {
            self.refine(alice, bob, &mut out)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_examples() {
        let e = evaluate_filter(0.5, 1.0, 0.5, 0.8);
        assert!((e.delta - 0.5).abs() < 1e-15);
        assert!((e.upsilon - 0.75).abs() < 1e-15);
        assert!(!e.passed);

        let same = evaluate_filter(1.0, 1.0, 1.0, 1.0);
        assert_eq!((same.delta, same.upsilon, same.passed), (0.0, 1.0, true));

        let orth = evaluate_filter(0.0, 1.0, 1.0, 0.8);
        assert_eq!((orth.delta, orth.upsilon, orth.passed), (2.0, 0.0, false));

        let clamped = evaluate_filter(0.5 + 1e-17, 0.5, 0.5, 1.0);
        assert_eq!(clamped.delta, 0.0);
        assert!(clamped.upsilon <= 1.0);
    }

    #[test]
    fn config_validation() {
        let ok = SessionConfig::new(10, 3, SelectionMethod::Rp, 0.8);
        assert!(ok.validate().is_ok());
        assert!(SessionConfig::new(10, 0, SelectionMethod::Rp, 0.8)
            .validate()
            .is_err());
        assert!(SessionConfig::new(10, 11, SelectionMethod::Gf, 0.8)
            .validate()
            .is_err());
        assert!(SessionConfig::new(10, 0, SelectionMethod::Base, 0.8)
            .validate()
            .is_ok());
        assert!(SessionConfig::new(10, 3, SelectionMethod::Rp, 1.5)
            .validate()
            .is_err());
        assert!(SessionConfig::new(10, 3, SelectionMethod::Rp, f64::NAN)
            .validate()
            .is_err());
        assert!(SessionConfig::new(0, 0, SelectionMethod::Base, 0.5)
            .validate()
            .is_err());
        let back = SessionConfig::from_hello(&ok.hello());
        assert_eq!(back, ok);
    }

    fn doc(n: usize, counts: &[(u32, u32)]) -> DocumentVector {
        DocumentVector::from_counts(n, counts).unwrap()
    }

    #[test]
    fn pair_examples() {
        let n = 6;
        let config = SessionConfig::new(n, 2, SelectionMethod::Lf, 0.95);
        let mut ctx = PairContext::new(config, 1).unwrap();
        let a = doc(n, &[(0, 2), (3, 1)]);
        let same = ctx.run_base_pair(&a, &a).unwrap();
        assert!(same.decision.similar);
        assert!((same.decision.cosine.unwrap() - 1.0).abs() < 1e-9);

        let b = doc(n, &[(1, 1), (5, 4)]);
        let orth = ctx.run_base_pair(&a, &b).unwrap();
        assert!(!orth.decision.similar);
        assert!(orth.decision.cosine.unwrap().abs() < 1e-9);

        let set = select_lf(a.to_dense().as_slice(), 2).unwrap();
        let fs = ctx.run_fs_pair(&a, &a, &set).unwrap();
        assert!(fs.filter.unwrap().delta.abs() < 1e-9);
        assert!(fs.decision.similar);

        let filtered = ctx.run_fs_pair(&a, &b, &set).unwrap();
        assert!(filtered.decision.filtered);
        assert!(!filtered.decision.similar);
        assert!(filtered.decision.cosine.is_none());
        assert!(filtered.bytes_alice + filtered.bytes_bob < fs.bytes_alice + fs.bytes_bob);
    }

    #[test]
    fn degenerate_documents_never_match() {
        let n = 4;
        let config = SessionConfig::new(n, 2, SelectionMethod::Rp, 0.0);
        let mut ctx = PairContext::new(config, 1).unwrap();
        let a = doc(n, &[(0, 1)]);
        let z = DocumentVector::zero(n);
        for (x, y) in [(&a, &z), (&z, &a), (&z, &z)] {
            let out = ctx.run_base_pair(x, y).unwrap();
            assert!(!out.decision.similar);
            assert_eq!(out.decision.cosine, Some(0.0));
        }
    }

    #[test]
    fn bob_rejects_out_of_order_messages() {
        let mut bob = BobSession::new(4, vec![doc(4, &[(0, 1)])]).unwrap();
        let err = bob
            .handle(ProtocolMessage::FullQuery {
                query_id: 0,
                survivor_ids: vec![0],
                z: vec![0.0; 4],
            })
            .unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));

        let mut bob = BobSession::new(4, vec![doc(4, &[(0, 1)])]).unwrap();
        let hello = SessionConfig::new(5, 2, SelectionMethod::Rp, 0.5).hello();
        assert!(bob.handle(ProtocolMessage::Hello(hello)).is_err());

        let mut bob = BobSession::new(4, vec![doc(4, &[(0, 1)])]).unwrap();
        let hello = SessionConfig::new(4, 2, SelectionMethod::Rp, 0.5).hello();
        assert!(bob.handle(ProtocolMessage::Hello(hello)).unwrap().is_some());
        let wrong_len = ProtocolMessage::FilterQuery {
            query_id: 0,
            indexes: vec![],
            z: vec![0.0; 3],
        };
        assert!(bob.handle(wrong_len).is_err());
    }

    #[test]
    fn bob_checks_per_query_indexes() {
        let mut bob = BobSession::new(4, vec![doc(4, &[(0, 1)])]).unwrap();
        let hello = SessionConfig::new(4, 2, SelectionMethod::Lf, 0.5).hello();
        bob.handle(ProtocolMessage::Hello(hello)).unwrap();
        for indexes in [vec![], vec![1], vec![2, 1], vec![1, 9]] {
            let q = ProtocolMessage::FilterQuery {
                query_id: 0,
                indexes,
                z: vec![0.0; 2],
            };
            let mut fresh = BobSession::new(4, vec![doc(4, &[(0, 1)])]).unwrap();
            fresh
                .handle(ProtocolMessage::Hello(
                    SessionConfig::new(4, 2, SelectionMethod::Lf, 0.5).hello(),
                ))
                .unwrap();
            assert!(fresh.handle(q).is_err());
        }
        let ok = ProtocolMessage::FilterQuery {
            query_id: 0,
            indexes: vec![0, 3],
            z: vec![0.0; 2],
        };
        assert!(matches!(
            bob.handle(ok).unwrap(),
            Some(ProtocolMessage::FilterReply { .. })
        ));
    }
}
