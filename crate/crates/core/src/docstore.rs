//! Chunked vector document store with provenance metadata.
//!
//! Reports are split into overlapping token windows; each chunk carries the
//! report id, company, year, page, and a per-report chunk id, so every piece
//! of retrieved text can be traced back to its source.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine_similarity, EmbedError, Embedder, EmbeddingVector};

/// Default chunk window, in whitespace-delimited tokens.
pub const DEFAULT_CHUNK_SIZE: usize = 250;
/// Default overlap between consecutive windows.
pub const DEFAULT_CHUNK_OVERLAP: usize = 50;
/// Default number of chunks returned by retrieval.
pub const DEFAULT_TOP_M: usize = 8;

#[derive(Debug, Error)]
pub enum DocStoreError {
    #[error("invalid window: size {size} must exceed overlap {overlap}")]
    InvalidWindow { size: usize, overlap: usize },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("snapshot line {line}: {message}")]
    Snapshot { line: usize, message: String },
}

/// A chunk before embedding: window text plus its position in the report's
/// token stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkDraft {
    pub chunk_id: u32,
    pub text: String,
    /// Page of the chunk's first token.
    pub page_number: u32,
    pub token_start: usize,
    pub token_len: usize,
}

/// An embedded passage with full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub embedding: EmbeddingVector,
    pub report_id: String,
    pub company: String,
    pub year: i32,
    pub chunk_id: u32,
    pub page_number: u32,
    pub text: String,
}

/// Splits `(text, page)` spans into overlapping windows over the concatenated
/// token stream. Tokens are whitespace-delimited words; the stride is
/// `size - overlap`. A final partial window is emitted only when it is not
/// fully contained in the previous window.
pub fn chunk_document(
    spans: &[(String, u32)],
    size: usize,
    overlap: usize,
) -> Result<Vec<ChunkDraft>, DocStoreError> {
    if size <= overlap {
        return Err(DocStoreError::InvalidWindow { size, overlap });
    }
    let mut tokens: Vec<(&str, u32)> = Vec::new();
    for (text, page) in spans {
        for word in text.split_whitespace() {
            tokens.push((word, *page));
        }
    }
    let n = tokens.len();
    let stride = size - overlap;
    let mut drafts = Vec::new();
    let mut start = 0usize;
    while start < n {
        let end = (start + size).min(n);
        let partial = end - start < size;
        if partial && start > 0 {
            // Contained in the previous window iff it ends where that window
            // still covers.
            let prev_end = start - stride + size;
            if end <= prev_end {
                break;
            }
        }
        drafts.push(ChunkDraft {
            chunk_id: drafts.len() as u32,
            text: tokens[start..end]
                .iter()
                .map(|(w, _)| *w)
                .collect::<Vec<_>>()
                .join(" "),
            page_number: tokens[start].1,
            token_start: start,
            token_len: end - start,
        });
        if partial {
            break;
        }
        start += stride;
    }
    Ok(drafts)
}

/// Report-level metadata attached to every chunk at indexing time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub report_id: String,
    pub company: String,
    pub year: i32,
}

/// The vectorized document store. Single writer while indexing; immutable
/// shared reads afterwards.
#[derive(Debug, Default, Clone)]
pub struct DocStore {
    chunks: Vec<Chunk>,
    keys: HashSet<(String, u32)>,
}

impl DocStore {
    pub fn new() -> DocStore {
        DocStore::default()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.iter()
    }

    /// Embeds and stores drafts for one report. Re-indexing identical input
    /// is idempotent: a chunk whose `(report_id, chunk_id)` already exists is
    /// skipped. Returns the number of input drafts present afterwards.
    pub fn index_chunks(
        &mut self,
        report: &ReportMeta,
        drafts: &[ChunkDraft],
        embedder: &dyn Embedder,
    ) -> Result<usize, DocStoreError> {
        let mut present = 0usize;
        for draft in drafts {
            let key = (report.report_id.clone(), draft.chunk_id);
            if self.keys.contains(&key) {
                present += 1;
                continue;
            }
            let embedding = embedder.embed(&draft.text)?;
            self.chunks.push(Chunk {
                embedding,
                report_id: report.report_id.clone(),
                company: report.company.clone(),
                year: report.year,
                chunk_id: draft.chunk_id,
                page_number: draft.page_number,
                text: draft.text.clone(),
            });
            self.keys.insert(key);
            present += 1;
        }
        Ok(present)
    }

    /// Company-filtered top-m retrieval: only chunks whose company matches
    /// exactly are considered, ranked by cosine similarity to the claim
    /// embedding, ties broken by `(report_id, chunk_id)`.
    pub fn retrieve_chunks(
        &self,
        claim_text: &str,
        company: &str,
        top_m: usize,
        embedder: &dyn Embedder,
    ) -> Result<Vec<(Chunk, f64)>, DocStoreError> {
        let query = embedder.embed(claim_text)?;
        let mut scored: Vec<(usize, f64)> = Vec::new();
        for (i, chunk) in self.chunks.iter().enumerate() {
            if chunk.company != company {
                continue;
            }
            scored.push((i, cosine_similarity(&query, &chunk.embedding)?));
        }
        scored.sort_by(|(ia, sa), (ib, sb)| {
            sb.partial_cmp(sa).unwrap_or(std::cmp::Ordering::Equal).then_with(|| {
                let a = &self.chunks[*ia];
                let b = &self.chunks[*ib];
                (&a.report_id, a.chunk_id).cmp(&(&b.report_id, b.chunk_id))
            })
        });
        scored.truncate(top_m);
        Ok(scored
            .into_iter()
            .map(|(i, s)| (self.chunks[i].clone(), s))
            .collect())
    }

    /// Writes one JSON record per chunk, embeddings inline.
    pub fn save_snapshot<W: Write>(&self, mut w: W) -> Result<(), DocStoreError> {
        let mut ordered: Vec<&Chunk> = self.chunks.iter().collect();
        ordered.sort_by(|a, b| (&a.report_id, a.chunk_id).cmp(&(&b.report_id, b.chunk_id)));
        for chunk in ordered {
            let line = serde_json::to_string(chunk).map_err(|e| DocStoreError::Snapshot {
                line: 0,
                message: e.to_string(),
            })?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn load_snapshot<R: BufRead>(reader: R) -> Result<DocStore, DocStoreError> {
        let mut store = DocStore::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let chunk: Chunk =
                serde_json::from_str(&line).map_err(|e| DocStoreError::Snapshot {
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            store.keys.insert((chunk.report_id.clone(), chunk.chunk_id));
            store.chunks.push(chunk);
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::DeterministicEmbedder;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn single_window_document() {
        let drafts = chunk_document(&[(words(250), 1)], 250, 50).unwrap();
        assert_eq!(drafts.len(), 1);
        assert_eq!(drafts[0].token_len, 250);
    }

    #[test]
    fn two_window_document() {
        let drafts = chunk_document(&[(words(450), 1)], 250, 50).unwrap();
        assert_eq!(drafts.len(), 2);
        assert_eq!((drafts[0].token_start, drafts[0].token_len), (0, 250));
        assert_eq!((drafts[1].token_start, drafts[1].token_len), (200, 250));
    }

    #[test]
    fn empty_document() {
        assert!(chunk_document(&[], 250, 50).unwrap().is_empty());
        assert!(chunk_document(&[(String::new(), 1)], 250, 50)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn invalid_window() {
        assert!(matches!(
            chunk_document(&[(words(10), 1)], 50, 50),
            Err(DocStoreError::InvalidWindow { .. })
        ));
    }

    #[test]
    fn page_number_tracks_first_token() {
        let spans = vec![(words(250), 1), (words(100), 2)];
        let drafts = chunk_document(&spans, 250, 50).unwrap();
        assert_eq!(drafts[0].page_number, 1);
        // Second window starts at token 200, still on page 1.
        assert_eq!(drafts[1].page_number, 1);
        let spans = vec![(words(200), 3), (words(150), 7)];
        let drafts = chunk_document(&spans, 250, 50).unwrap();
        assert_eq!(drafts[1].page_number, 7);
    }

    fn meta(report: &str, company: &str) -> ReportMeta {
        ReportMeta {
            report_id: report.into(),
            company: company.into(),
            year: 2024,
        }
    }

    #[test]
    fn index_is_idempotent() {
        let embedder = DeterministicEmbedder::default();
        let mut store = DocStore::new();
        let drafts = chunk_document(&[(words(450), 1)], 250, 50).unwrap();
        assert_eq!(
            store.index_chunks(&meta("r1", "ACME"), &drafts, &embedder).unwrap(),
            2
        );
        assert_eq!(
            store.index_chunks(&meta("r1", "ACME"), &drafts, &embedder).unwrap(),
            2
        );
        assert_eq!(store.len(), 2);
        assert_eq!(
            store.index_chunks(&meta("r1", "ACME"), &[], &embedder).unwrap(),
            0
        );
    }

    #[test]
    fn per_report_chunk_ids_start_at_zero() {
        let embedder = DeterministicEmbedder::default();
        let mut store = DocStore::new();
        let d1 = chunk_document(&[(words(300), 1)], 250, 50).unwrap();
        let d2 = chunk_document(&[(words(100), 1)], 250, 50).unwrap();
        store.index_chunks(&meta("r1", "ACME"), &d1, &embedder).unwrap();
        store.index_chunks(&meta("r2", "ACME"), &d2, &embedder).unwrap();
        let mut firsts: Vec<(String, u32)> = store
            .chunks()
            .filter(|c| c.chunk_id == 0)
            .map(|c| (c.report_id.clone(), c.chunk_id))
            .collect();
        firsts.sort();
        assert_eq!(firsts, vec![("r1".into(), 0), ("r2".into(), 0)]);
    }

    #[test]
    fn retrieval_filters_by_company() {
        let embedder = DeterministicEmbedder::default();
        let mut store = DocStore::new();
        let a = chunk_document(&[("emissions fell sharply".into(), 1)], 250, 50).unwrap();
        let b = chunk_document(&[("emissions fell sharply".into(), 1)], 250, 50).unwrap();
        store.index_chunks(&meta("ra", "A"), &a, &embedder).unwrap();
        store.index_chunks(&meta("rb", "B"), &b, &embedder).unwrap();
        let hits = store
            .retrieve_chunks("emissions fell", "A", 8, &embedder)
            .unwrap();
        assert!(!hits.is_empty());
        assert!(hits.iter().all(|(c, _)| c.company == "A"));
    }

    #[test]
    fn retrieval_returns_available_when_fewer_than_top_m() {
        let embedder = DeterministicEmbedder::default();
        let mut store = DocStore::new();
        let spans: Vec<(String, u32)> = vec![(words(650), 1)];
        let drafts = chunk_document(&spans, 250, 50).unwrap();
        assert_eq!(drafts.len(), 3);
        store.index_chunks(&meta("r", "A"), &drafts, &embedder).unwrap();
        let hits = store.retrieve_chunks("w0 w1", "A", 8, &embedder).unwrap();
        assert_eq!(hits.len(), 3);
    }

    #[test]
    fn exact_text_ranks_first_with_similarity_one() {
        let embedder = DeterministicEmbedder::default();
        let mut store = DocStore::new();
        for (i, text) in ["solar capacity doubled", "water usage dropped", "fleet electrified"]
            .iter()
            .enumerate()
        {
            let drafts = chunk_document(&[(text.to_string(), 1)], 250, 50).unwrap();
            store
                .index_chunks(&meta(&format!("r{i}"), "A"), &drafts, &embedder)
                .unwrap();
        }
        let hits = store
            .retrieve_chunks("water usage dropped", "A", 8, &embedder)
            .unwrap();
        assert_eq!(hits[0].0.text, "water usage dropped");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_round_trip() {
        let embedder = DeterministicEmbedder::default();
        let mut store = DocStore::new();
        let drafts = chunk_document(&[(words(300), 2)], 250, 50).unwrap();
        store.index_chunks(&meta("r1", "ACME"), &drafts, &embedder).unwrap();
        let mut buf = Vec::new();
        store.save_snapshot(&mut buf).unwrap();
        let back = DocStore::load_snapshot(&buf[..]).unwrap();
        assert_eq!(back.len(), store.len());
        let mut buf2 = Vec::new();
        back.save_snapshot(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    mod properties_suite {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(128))]
            #[test]
            fn windows_cover_stream_with_exact_overlap(n in 0usize..1200) {
                let drafts = chunk_document(&[(words(n), 1)], 250, 50).unwrap();
                if n == 0 {
                    prop_assert!(drafts.is_empty());
                    return Ok(());
                }
                // Full coverage of [0, n).
                prop_assert_eq!(drafts[0].token_start, 0);
                prop_assert_eq!(
                    drafts.last().unwrap().token_start + drafts.last().unwrap().token_len,
                    n
                );
                for pair in drafts.windows(2) {
                    prop_assert_eq!(pair[1].token_start, pair[0].token_start + 200);
                    // Overlap with the previous window is exactly 50 except
                    // possibly at the final (shorter) window.
                    let prev_end = pair[0].token_start + pair[0].token_len;
                    let overlap = prev_end.saturating_sub(pair[1].token_start);
                    if pair[1].token_len == 250 {
                        prop_assert_eq!(overlap, 50);
                    } else {
                        prop_assert!(overlap >= 50);
                    }
                }
                for d in &drafts {
                    prop_assert!(d.token_len <= 250);
                    prop_assert!(d.token_len > 0);
                }
            }

            #[test]
            fn retrieval_matches_brute_force(
                texts in proptest::collection::vec("[a-z]{2,6}( [a-z]{2,6}){0,9}", 1..40),
                companies in proptest::collection::vec(0u8..3, 40),
                top_m in 1usize..12,
                query in "[a-z]{2,6}( [a-z]{2,6}){0,5}",
            ) {
                let embedder = DeterministicEmbedder::default();
                let mut store = DocStore::new();
                for (i, text) in texts.iter().enumerate() {
                    let drafts = chunk_document(&[(text.clone(), 1)], 250, 50).unwrap();
                    let meta = ReportMeta {
                        report_id: format!("r{i}"),
                        company: format!("C{}", companies[i]),
                        year: 2024,
                    };
                    store.index_chunks(&meta, &drafts, &embedder).unwrap();
                }
                let got = store.retrieve_chunks(&query, "C1", top_m, &embedder).unwrap();
                // Brute force: filter, sort, truncate.
                let q = embedder.embed(&query).unwrap();
                let mut expected: Vec<(String, u32, f64)> = store
                    .chunks()
                    .filter(|c| c.company == "C1")
                    .map(|c| {
                        (
                            c.report_id.clone(),
                            c.chunk_id,
                            cosine_similarity(&q, &c.embedding).unwrap(),
                        )
                    })
                    .collect();
                expected.sort_by(|a, b| {
                    b.2.partial_cmp(&a.2)
                        .unwrap()
                        .then_with(|| (&a.0, a.1).cmp(&(&b.0, b.1)))
                });
                expected.truncate(top_m);
                let got_keys: Vec<(String, u32)> =
                    got.iter().map(|(c, _)| (c.report_id.clone(), c.chunk_id)).collect();
                let expected_keys: Vec<(String, u32)> =
                    expected.iter().map(|(r, c, _)| (r.clone(), *c)).collect();
                prop_assert_eq!(got_keys, expected_keys);
                // Provenance present on every hit.
                for (c, _) in &got {
                    prop_assert!(!c.report_id.is_empty());
                    prop_assert!(c.year != 0);
                }
            }
        }
    }
}
