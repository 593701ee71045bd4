//! Text attribution: finds verbatim or near-verbatim reuse of indexed corpus
//! text inside a query.
//!
//! Both corpus and query are normalized the same way: lowercased, split on
//! non-alphanumeric characters. The corpus index maps hashed `k`-word
//! shingles to `(doc, word offset)` postings. A query is chunked at query
//! time into overlapping windows; each window's shingles select candidate
//! documents (stage 1), and a token-level local alignment against the
//! candidate region measures the actual overlap (stage 2).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_64;

use crate::detector::{Detector, DetectorError};
use crate::model::{Finding, Span};
use crate::text::{tokens, Token};

pub const INDEX_FORMAT: &str = "shieldgate-shingle-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("DUPLICATE_DOC_ID: `{0}`")]
    DuplicateDocId(String),
    #[error("EMPTY_CORPUS: no documents to index")]
    EmptyCorpus,
    #[error("shingle width must be at least 2, got {0}")]
    BadShingleWidth(usize),
    #[error("invalid attribution parameters: {0}")]
    BadParameters(String),
    #[error("index file: {0}")]
    Format(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub chunk_len: usize,
    pub overlap: usize,
    /// Candidate documents kept per chunk after stage 1.
    pub candidates: usize,
    pub min_similarity: f64,
    /// Shortest aligned query run (in words) that is reported.
    pub min_match_tokens: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            chunk_len: 12,
            overlap: 6,
            candidates: 20,
            min_similarity: 0.8,
            min_match_tokens: 8,
        }
    }
}

pub const DEFAULT_SHINGLE_WIDTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MatchKind {
    Verbatim,
    SemiVerbatim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMatch {
    pub query_span: Span,
    pub doc_id: String,
    pub doc_span: Span,
    pub similarity: f64,
    pub match_kind: MatchKind,
}

#[derive(Debug, Clone)]
struct IndexedDoc {
    doc_id: String,
    text: String,
    tokens: Vec<Token>,
}

/// Immutable shingle index over a corpus.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    k: usize,
    docs: Vec<IndexedDoc>,
    postings: HashMap<u64, Vec<(u32, u32)>>,
}

fn shingle_hash(words: &[Token]) -> u64 {
    let mut buf = String::new();
    for (i, w) in words.iter().enumerate() {
        if i > 0 {
            buf.push('\u{1f}');
        }
        buf.push_str(&w.text);
    }
    xxh3_64(buf.as_bytes())
}

/// Builds the shingle index. Documents shorter than `k` words are kept (and
/// retrievable by id) but contribute no shingles.
pub fn index_corpus<I, S, T>(docs: I, k: usize) -> Result<CorpusIndex, AttributionError>
where
    I: IntoIterator<Item = (S, T)>,
    S: Into<String>,
    T: Into<String>,
{
    if k < 2 {
        return Err(AttributionError::BadShingleWidth(k));
    }
    let mut seen = HashSet::new();
    let mut indexed = Vec::new();
    for (id, text) in docs {
        let doc_id = id.into();
        if !seen.insert(doc_id.clone()) {
            return Err(AttributionError::DuplicateDocId(doc_id));
        }
        let text = text.into();
        indexed.push(IndexedDoc {
            tokens: tokens(&text),
            doc_id,
            text,
        });
    }
    if indexed.is_empty() {
        return Err(AttributionError::EmptyCorpus);
    }
    let mut postings: HashMap<u64, Vec<(u32, u32)>> = HashMap::new();
    for (d, doc) in indexed.iter().enumerate() {
        if doc.tokens.len() < k {
            continue;
        }
        for off in 0..=doc.tokens.len() - k {
            postings
                .entry(shingle_hash(&doc.tokens[off..off + k]))
                .or_default()
                .push((d as u32, off as u32));
        }
    }
    Ok(CorpusIndex {
        k,
        docs: indexed,
        postings,
    })
}

/// Reads a corpus directory (one plain-text file per document, doc id =
/// file stem) or a JSON-lines file of `{"doc_id", "text"}` records.
pub fn load_corpus(path: &Path) -> Result<Vec<(String, String)>, AttributionError> {
    let io = |source| AttributionError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut docs = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)
            .map_err(io)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            let text = std::fs::read_to_string(&p).map_err(|source| AttributionError::Io {
                path: p.display().to_string(),
                source,
            })?;
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            docs.push((id, text));
        }
    } else {
        #[derive(Deserialize)]
        struct Record {
            doc_id: String,
            text: String,
        }
        let raw = std::fs::read_to_string(path).map_err(io)?;
        for (n, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line)
                .map_err(|e| AttributionError::Format(format!("line {}: {e}", n + 1)))?;
            docs.push((rec.doc_id, rec.text));
        }
    }
    Ok(docs)
}

#[derive(Serialize, Deserialize)]
struct StoredDoc {
    doc_id: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct StoredIndex {
    format: String,
    version: u32,
    k: usize,
    docs: Vec<StoredDoc>,
    /// `(shingle hash, [(doc ordinal, word offset)])`, sorted by hash.
    postings: Vec<(u64, Vec<(u32, u32)>)>,
}

/// Local alignment of a query token range against a doc token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Alignment {
    q_start: usize,
    q_end: usize,
    d_start: usize,
    d_end: usize,
    matched: usize,
}

const MATCH: i32 = 2;
const MISMATCH: i32 = -1;
const GAP: i32 = -1;

/// Smith-Waterman over word tokens. Returns absolute token offsets.
fn align(query: &[Token], q_off: usize, doc: &[Token], d_off: usize) -> Option<Alignment> {
    let (n, m) = (query.len(), doc.len());
    if n == 0 || m == 0 {
        return None;
    }
    let width = m + 1;
    let mut score = vec![0i32; (n + 1) * width];
    let mut best = (0i32, 0usize, 0usize);
    for i in 1..=n {
        for j in 1..=m {
            let diag = score[(i - 1) * width + j - 1]
                + if query[i - 1].text == doc[j - 1].text {
                    MATCH
                } else {
                    MISMATCH
                };
            let up = score[(i - 1) * width + j] + GAP;
            let left = score[i * width + j - 1] + GAP;
            let s = diag.max(up).max(left).max(0);
            score[i * width + j] = s;
            if s > best.0 {
                best = (s, i, j);
            }
        }
    }
    if best.0 == 0 {
        return None;
    }
    let (_, mut i, mut j) = best;
    let (q_end, d_end) = (i, j);
    let mut matched = 0;
    while i > 0 && j > 0 && score[i * width + j] > 0 {
        let here = score[i * width + j];
        let same = query[i - 1].text == doc[j - 1].text;
        let diag = score[(i - 1) * width + j - 1] + if same { MATCH } else { MISMATCH };
        if here == diag {
            if same {
                matched += 1;
            }
            i -= 1;
            j -= 1;
        } else if here == score[(i - 1) * width + j] + GAP {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    Some(Alignment {
        q_start: q_off + i,
        q_end: q_off + q_end,
        d_start: d_off + j,
        d_end: d_off + d_end,
        matched,
    })
}

/// Diagnostics from one [`CorpusIndex::attribute_traced`] call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributionTrace {
    /// Doc ids that survived stage 1 for at least one chunk.
    pub candidates: BTreeSet<String>,
    /// Chunk windows as query token ranges.
    pub chunks: Vec<(usize, usize)>,
}

impl CorpusIndex {
    pub fn shingle_width(&self) -> usize {
        self.k
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    /// Total postings, i.e. the number of shingles indexed across all docs.
    pub fn shingle_count(&self) -> usize {
        self.postings.values().map(Vec::len).sum()
    }

    pub fn doc_text(&self, doc_id: &str) -> Option<&str> {
        self.docs
            .iter()
            .find(|d| d.doc_id == doc_id)
            .map(|d| d.text.as_str())
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.doc_id.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut postings: Vec<(u64, Vec<(u32, u32)>)> =
            self.postings.iter().map(|(h, p)| (*h, p.clone())).collect();
        postings.sort_by_key(|(h, _)| *h);
        let stored = StoredIndex {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            k: self.k,
            docs: self
                .docs
                .iter()
                .map(|d| StoredDoc {
                    doc_id: d.doc_id.clone(),
                    text: d.text.clone(),
                })
                .collect(),
            postings,
        };
        serde_json::to_vec(&stored).expect("index serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AttributionError> {
        let stored: StoredIndex =
            serde_json::from_slice(bytes).map_err(|e| AttributionError::Format(e.to_string()))?;
        if stored.format != INDEX_FORMAT || stored.version != INDEX_VERSION {
            return Err(AttributionError::Format(format!(
                "unsupported index {} v{}",
                stored.format, stored.version
            )));
        }
        let docs: Vec<IndexedDoc> = stored
            .docs
            .into_iter()
            .map(|d| IndexedDoc {
                tokens: tokens(&d.text),
                doc_id: d.doc_id,
                text: d.text,
            })
            .collect();
        let n_docs = docs.len() as u32;
        for (_, plist) in &stored.postings {
            for (d, off) in plist {
                let ok = *d < n_docs && (*off as usize) + stored.k <= docs[*d as usize].tokens.len();
                if !ok {
                    return Err(AttributionError::Format("posting out of range".into()));
                }
            }
        }
        Ok(CorpusIndex {
            k: stored.k,
            docs,
            postings: stored.postings.into_iter().collect(),
        })
    }

    fn chunk_windows(&self, n_tokens: usize, cfg: &AttributionConfig) -> Vec<(usize, usize)> {
        if n_tokens <= cfg.chunk_len {
            return vec![(0, n_tokens)];
        }
        let step = cfg.chunk_len - cfg.overlap;
        let mut out = Vec::new();
        let mut start = 0;
        while start + cfg.chunk_len < n_tokens {
            out.push((start, start + cfg.chunk_len));
            start += step;
        }
        out.push((n_tokens - cfg.chunk_len, n_tokens));
        out
    }

    pub fn attribute(
        &self,
        query: &str,
        cfg: &AttributionConfig,
    ) -> Result<Vec<AttributionMatch>, AttributionError> {
        self.attribute_traced(query, cfg).map(|(m, _)| m)
    }

    pub fn attribute_traced(
        &self,
        query: &str,
        cfg: &AttributionConfig,
    ) -> Result<(Vec<AttributionMatch>, AttributionTrace), AttributionError> {
        if cfg.chunk_len < self.k {
            return Err(AttributionError::BadParameters(format!(
                "chunk_len {} is shorter than shingle width {}",
                cfg.chunk_len, self.k
            )));
        }
        if cfg.overlap >= cfg.chunk_len {
            return Err(AttributionError::BadParameters(format!(
                "overlap {} must be below chunk_len {}",
                cfg.overlap, cfg.chunk_len
            )));
        }
        let mut trace = AttributionTrace::default();
        let q = tokens(query);
        if q.len() < self.k {
            return Ok((Vec::new(), trace));
        }
        trace.chunks = self.chunk_windows(q.len(), cfg);

        // Stage 1 + per-chunk alignment.
        let mut per_doc: HashMap<u32, Vec<Alignment>> = HashMap::new();
        for &(c_start, c_end) in &trace.chunks {
            let chunk = &q[c_start..c_end];
            if chunk.len() < self.k {
                continue;
            }
            // doc -> (hits, min offset, max offset)
            let mut hits: HashMap<u32, (usize, u32, u32)> = HashMap::new();
            for i in 0..=chunk.len() - self.k {
                if let Some(plist) = self.postings.get(&shingle_hash(&chunk[i..i + self.k])) {
                    for &(d, off) in plist {
                        let e = hits.entry(d).or_insert((0, off, off));
                        e.0 += 1;
                        e.1 = e.1.min(off);
                        e.2 = e.2.max(off);
                    }
                }
            }
            let mut ranked: Vec<(u32, (usize, u32, u32))> = hits.into_iter().collect();
            ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.0.cmp(&b.0)));
            ranked.truncate(cfg.candidates);
            for (d, (_, lo, hi)) in ranked {
                let doc = &self.docs[d as usize];
                trace.candidates.insert(doc.doc_id.clone());
                let r_start = (lo as usize).saturating_sub(cfg.chunk_len);
                let r_end = (hi as usize + self.k + cfg.chunk_len).min(doc.tokens.len());
                if let Some(a) = align(chunk, c_start, &doc.tokens[r_start..r_end], r_start) {
                    if a.matched >= self.k {
                        per_doc.entry(d).or_default().push(a);
                    }
                }
            }
        }

        // Merge adjacent chunk alignments per doc, then realign each group.
        let mut matches = Vec::new();
        let mut docs: Vec<u32> = per_doc.keys().copied().collect();
        docs.sort_unstable();
        for d in docs {
            let doc = &self.docs[d as usize];
            let mut aligns = per_doc.remove(&d).unwrap_or_default();
            aligns.sort_by_key(|a| (a.q_start, a.d_start));
            let mut groups: Vec<Alignment> = Vec::new();
            for a in aligns {
                if let Some(last) = groups.last_mut() {
                    let diag_last = last.d_start as i64 - last.q_start as i64;
                    let diag_a = a.d_start as i64 - a.q_start as i64;
                    if a.q_start <= last.q_end
                        && (diag_last - diag_a).unsigned_abs() as usize <= cfg.chunk_len
                    {
                        last.q_end = last.q_end.max(a.q_end);
                        last.d_start = last.d_start.min(a.d_start);
                        last.d_end = last.d_end.max(a.d_end);
                        continue;
                    }
                }
                groups.push(a);
            }
            let mut seen = HashSet::new();
            for g in groups {
                let r_start = g.d_start.saturating_sub(cfg.chunk_len);
                let r_end = (g.d_end + cfg.chunk_len).min(doc.tokens.len());
                let Some(a) = align(
                    &q[g.q_start..g.q_end],
                    g.q_start,
                    &doc.tokens[r_start..r_end],
                    r_start,
                ) else {
                    continue;
                };
                let denom = a.q_end - a.q_start;
                let similarity = a.matched as f64 / denom as f64;
                if denom < cfg.min_match_tokens.max(self.k)
                    || similarity < cfg.min_similarity
                    || !seen.insert((a.q_start, a.q_end))
                {
                    continue;
                }
                let match_kind = if a.matched == denom && a.q_end - a.q_start == a.d_end - a.d_start
                {
                    MatchKind::Verbatim
                } else {
                    MatchKind::SemiVerbatim
                };
                matches.push(AttributionMatch {
                    query_span: Span::new(q[a.q_start].span.start, q[a.q_end - 1].span.end),
                    doc_id: doc.doc_id.clone(),
                    doc_span: Span::new(
                        doc.tokens[a.d_start].span.start,
                        doc.tokens[a.d_end - 1].span.end,
                    ),
                    similarity: if match_kind == MatchKind::Verbatim {
                        1.0
                    } else {
                        similarity.min(1.0 - f64::EPSILON)
                    },
                    match_kind,
                });
            }
        }
        matches.sort_by(|a, b| {
            (a.query_span.start, a.query_span.end, &a.doc_id)
                .cmp(&(b.query_span.start, b.query_span.end, &b.doc_id))
        });
        Ok((matches, trace))
    }
}

/// Comparison detector over a shared corpus index.
pub struct AttributionDetector {
    detector_id: String,
    index: Arc<CorpusIndex>,
    config: AttributionConfig,
}

impl AttributionDetector {
    pub fn new(detector_id: impl Into<String>, index: Arc<CorpusIndex>, config: AttributionConfig) -> Self {
        AttributionDetector {
            detector_id: detector_id.into(),
            index,
            config,
        }
    }
}

impl Detector for AttributionDetector {
    fn detect(&self, text: &str, _request_id: &str) -> Result<Vec<Finding>, DetectorError> {
        let matches = self
            .index
            .attribute(text, &self.config)
            .map_err(|e| DetectorError::Failed(e.to_string()))?;
        Ok(matches
            .into_iter()
            .map(|m| {
                let label = match m.match_kind {
                    MatchKind::Verbatim => "verbatim",
                    MatchKind::SemiVerbatim => "semi_verbatim",
                };
                Finding::new(&self.detector_id, "attribution", label, m.similarity)
                    .with_span(m.query_span)
                    .with_evidence(m.doc_id)
            })
            .collect())
    }
}
