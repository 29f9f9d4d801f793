//! UCI bag-of-words ingestion and the binary corpus cache.
//!
//! A `docword` file starts with three header lines (D, W, NNZ) followed by
//! NNZ lines `docID wordID count`, ids 1-based. Internally everything is
//! 0-based.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::vector::{DenseVector, DocumentVector};

pub const CACHE_MAGIC: &[u8; 8] = b"SSDDCORP";
pub const CACHE_VERSION: u32 = 1;

/// Term strings and their 0-based dimension indexes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, dim: usize) -> Option<&str> {
        self.terms.get(dim).map(String::as_str)
    }

    pub fn dimension(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

/// Raw term counts of one document, sorted by dimension index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    pub doc_id: usize,
    pub counts: Vec<(u32, u32)>,
}

impl RawDocument {
    pub fn total_tokens(&self) -> u64 {
        self.counts.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn to_dense(&self, dims: usize) -> DenseVector {
        let mut v = vec![0.0; dims];
        for &(i, c) in &self.counts {
            v[i as usize] = c as f64;
        }
        DenseVector(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusStats {
    pub documents: usize,
    pub terms: usize,
    /// Number of (document, term) entries.
    pub entries: u64,
    /// Sum of all counts; unknown for corpora loaded from the weight cache.
    pub total_tokens: Option<u64>,
}

/// A document collection with its unit-normalized vectors.
///
/// Raw counts are kept when the corpus was parsed from text; the binary
/// cache stores weights only.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocabulary_size: usize,
    documents: Option<Vec<RawDocument>>,
    vectors: Vec<DocumentVector>,
}

impl Corpus {
    pub fn from_documents(vocabulary_size: usize, documents: Vec<RawDocument>) -> Result<Self> {
        let vectors = documents
            .iter()
            .map(|d| build_document_vector(d, vocabulary_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            vocabulary_size,
            documents: Some(documents),
            vectors,
        })
    }

    pub fn from_vectors(vocabulary_size: usize, vectors: Vec<DocumentVector>) -> Result<Self> {
        if let Some(v) = vectors.iter().find(|v| v.dims() != vocabulary_size) {
            return Err(Error::dims(vocabulary_size, v.dims()));
        }
        Ok(Self {
            vocabulary_size,
            documents: None,
            vectors,
        })
    }

    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary_size
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn documents(&self) -> Option<&[RawDocument]> {
        self.documents.as_deref()
    }

    pub fn vectors(&self) -> &[DocumentVector] {
        &self.vectors
    }

    /// The vector LF and HF rank for document `i`: raw counts when known,
    /// otherwise the normalized weights (a positive rescaling of the counts).
    pub fn current_vector(&self, i: usize) -> DenseVector {
        match &self.documents {
            Some(docs) => docs[i].to_dense(self.vocabulary_size),
            None => self.vectors[i].to_dense(),
        }
    }

    /// The first `n` documents, keeping the vocabulary size.
    pub fn truncated(&self, n: usize) -> Corpus {
        let n = n.min(self.len());
        Corpus {
            vocabulary_size: self.vocabulary_size,
            documents: self.documents.as_ref().map(|d| d[..n].to_vec()),
            vectors: self.vectors[..n].to_vec(),
        }
    }

    /// Documents at `ids`, renumbered 0.. in the given order.
    pub fn select(&self, ids: &[usize]) -> Corpus {
        Corpus {
            vocabulary_size: self.vocabulary_size,
            documents: self.documents.as_ref().map(|docs| {
                ids.iter()
                    .enumerate()
                    .map(|(k, &i)| RawDocument {
                        doc_id: k,
                        counts: docs[i].counts.clone(),
                    })
                    .collect()
            }),
            vectors: ids.iter().map(|&i| self.vectors[i].clone()).collect(),
        }
    }

    pub fn stats(&self) -> CorpusStats {
        CorpusStats {
            documents: self.len(),
            terms: self.vocabulary_size,
            entries: self.vectors.iter().map(|v| v.nnz() as u64).sum(),
            total_tokens: self
                .documents
                .as_ref()
                .map(|d| d.iter().map(RawDocument::total_tokens).sum()),
        }
    }
}

fn parse_header(line: Option<(usize, std::io::Result<String>)>, what: &str) -> Result<usize> {
    let (no, text) = line.ok_or_else(|| Error::Parse {
        line: 0,
        msg: format!("missing header line {what}"),
    })?;
    let text = text?;
    text.trim().parse::<usize>().map_err(|_| Error::Parse {
        line: no + 1,
        msg: format!("bad {what} header {:?}", text.trim()),
    })
}

/// Parses a UCI `docword` stream.
pub fn parse_bag_of_words<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut lines = reader.lines().enumerate();
    let d = parse_header(lines.next(), "D")?;
    let w = parse_header(lines.next(), "W")?;
    let nnz = parse_header(lines.next(), "NNZ")?;
    if w > u32::MAX as usize {
        return Err(Error::range("vocabulary too large"));
    }

    let mut per_doc: Vec<Vec<(u32, u32)>> = vec![Vec::new(); d];
    let mut seen = 0usize;
    for (no, text) in lines {
        let line = no + 1;
        let text = text?;
        let trimmed = text.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split_ascii_whitespace();
        let (Some(a), Some(b), Some(c), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::Parse {
                line,
                msg: format!("expected `docID wordID count`, got {trimmed:?}"),
            });
        };
        let parse_id = |s: &str| {
            s.parse::<u64>().map_err(|_| Error::Parse {
                line,
                msg: format!("bad id {s:?}"),
            })
        };
        let doc = parse_id(a)?;
        let word = parse_id(b)?;
        let count = c.parse::<i64>().map_err(|_| Error::Parse {
            line,
            msg: format!("bad count {c:?}"),
        })?;
        if doc == 0 || doc > d as u64 {
            return Err(Error::Range(format!(
                "line {line}: docID {doc} outside 1..={d}"
            )));
        }
        if word == 0 || word > w as u64 {
            return Err(Error::Range(format!(
                "line {line}: wordID {word} outside 1..={w}"
            )));
        }
        if count <= 0 {
            return Err(Error::Value {
                line,
                msg: format!("count {count} must be positive"),
            });
        }
        let count = u32::try_from(count).map_err(|_| Error::Value {
            line,
            msg: format!("count {count} too large"),
        })?;
        seen += 1;
        if seen > nnz {
            return Err(Error::Parse {
                line,
                msg: format!("more than NNZ = {nnz} entries"),
            });
        }
        per_doc[doc as usize - 1].push((word as u32 - 1, count));
    }
    if seen != nnz {
        return Err(Error::Parse {
            line: 0,
            msg: format!("header announces {nnz} entries, found {seen}"),
        });
    }

    let mut documents = Vec::with_capacity(d);
    for (doc_id, mut counts) in per_doc.into_iter().enumerate() {
        counts.sort_unstable_by_key(|&(i, _)| i);
        if let Some(dup) = counts.windows(2).find(|p| p[0].0 == p[1].0) {
            return Err(Error::DuplicateEntry {
                doc: doc_id,
                word: dup[0].0 as usize,
            });
        }
        documents.push(RawDocument { doc_id, counts });
    }
    Corpus::from_documents(w, documents)
}

/// Writes a corpus back out in `docword` format. Requires raw counts.
pub fn write_docword<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    let docs = corpus
        .documents()
        .ok_or_else(|| Error::range("corpus has no raw counts to serialize"))?;
    let nnz: usize = docs.iter().map(|d| d.counts.len()).sum();
    writeln!(out, "{}\n{}\n{}", docs.len(), corpus.vocabulary_size(), nnz)?;
    for d in docs {
        for &(i, c) in &d.counts {
            writeln!(out, "{} {} {}", d.doc_id + 1, i + 1, c)?;
        }
    }
    Ok(())
}

/// Parses a UCI `vocab` stream: line `k` (0-based) names dimension `k`.
pub fn load_vocabulary<R: BufRead>(reader: R) -> Result<Vocabulary> {
    let mut vocab = Vocabulary::default();
    for (no, text) in reader.lines().enumerate() {
        let text = text?;
        let term = text.trim();
        if term.is_empty() {
            return Err(Error::Parse {
                line: no + 1,
                msg: "empty vocabulary line".into(),
            });
        }
        if vocab.index.contains_key(term) {
            return Err(Error::DuplicateTerm(term.to_string()));
        }
        vocab.index.insert(term.to_string(), vocab.terms.len());
        vocab.terms.push(term.to_string());
    }
    Ok(vocab)
}

/// Raw TF counts divided by their L2 norm.
pub fn build_document_vector(doc: &RawDocument, dims: usize) -> Result<DocumentVector> {
    DocumentVector::from_counts(dims, &doc.counts)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySplit {
    pub queries: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Seeded choice of `k` query documents; the rest become targets.
///
/// With `overlap` the targets are the whole collection.
pub fn split_queries(doc_count: usize, k: usize, seed: u64, overlap: bool) -> Result<QuerySplit> {
    if k == 0 || k > doc_count {
        return Err(Error::range(format!(
            "query count {k} outside 1..={doc_count}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut queries = rand::seq::index::sample(&mut rng, doc_count, k).into_vec();
    queries.sort_unstable();
    let targets = if overlap {
        (0..doc_count).collect()
    } else {
        let mut is_query = vec![false; doc_count];
        for &q in &queries {
            is_query[q] = true;
        }
        (0..doc_count).filter(|&i| !is_query[i]).collect()
    };
    Ok(QuerySplit { queries, targets })
}

/// Writes the little-endian weight cache.
pub fn write_cache<W: Write>(corpus: &Corpus, mut out: W) -> Result<()> {
    let to_u32 = |x: usize, what: &str| {
        u32::try_from(x).map_err(|_| Error::range(format!("{what} {x} exceeds u32")))
    };
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&CACHE_VERSION.to_le_bytes())?;
    out.write_all(&to_u32(corpus.len(), "document count")?.to_le_bytes())?;
    out.write_all(&to_u32(corpus.vocabulary_size(), "vocabulary size")?.to_le_bytes())?;
    for v in corpus.vectors() {
        out.write_all(&(v.nnz() as u32).to_le_bytes())?;
        for &(i, w) in v.entries() {
            out.write_all(&i.to_le_bytes())?;
            out.write_all(&w.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads a corpus written by [`write_cache`].
pub fn read_cache<R: Read>(mut input: R) -> Result<Corpus> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Parse {
            line: 0,
            msg: "not a corpus cache (bad magic)".into(),
        });
    }
    let version = read_u32(&mut input)?;
    if version != CACHE_VERSION {
        return Err(Error::Parse {
            line: 0,
            msg: format!("unsupported cache version {version}"),
        });
    }
    let d = read_u32(&mut input)? as usize;
    let w = read_u32(&mut input)? as usize;
    let mut vectors = Vec::with_capacity(d.min(1 << 20));
    for _ in 0..d {
        let nnz = read_u32(&mut input)? as usize;
        let mut entries = Vec::with_capacity(nnz.min(w));
        let mut buf = [0u8; 12];
        for _ in 0..nnz {
            input.read_exact(&mut buf)?;
            let i = u32::from_le_bytes(buf[..4].try_into().unwrap());
            let x = f64::from_le_bytes(buf[4..].try_into().unwrap());
            entries.push((i, x));
        }
        vectors.push(DocumentVector::from_unit_entries(w, entries)?);
    }
    Corpus::from_vectors(w, vectors)
}

/// Loads either a cache file (detected by its magic) or a text docword file.
pub fn load_corpus_file(path: &std::path::Path) -> Result<Corpus> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let head = file.fill_buf()?;
    if head.starts_with(CACHE_MAGIC) {
        read_cache(file)
    } else {
        parse_bag_of_words(file)
    }
}
