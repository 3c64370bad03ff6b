//! Few-shot retrieval: TF-IDF cosine over prompt exemplars.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{read_jsonl, write_jsonl, IoError};
use crate::types::{Domain, SubTask};

pub const TS_K: usize = 3;
pub const WM_K: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrievalError {
    #[error("EmptyStore: no exemplars to retrieve from")]
    EmptyStore,
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolExemplar {
    pub prompt_text: String,
    pub agent: Domain,
    pub tools_used: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowExemplar {
    pub prompt_text: String,
    pub agents_involved: Vec<Domain>,
    pub schedule_sketch: Vec<SubTask>,
}

/// Lowercased alphanumeric terms.
pub fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Alternative similarity source; the stores use TF-IDF unless one is given.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Vec<f64>;
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(0.0, 1.0)
    }
}

/// TF-IDF document vectors, rebuilt on every insertion.
#[derive(Debug, Clone, Default)]
pub struct SimilarityIndex {
    docs: Vec<BTreeMap<String, u32>>,
    idf: BTreeMap<String, f64>,
    vectors: Vec<BTreeMap<String, f64>>,
}

impl SimilarityIndex {
    pub fn new() -> Self {
        SimilarityIndex::default()
    }

    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut ix = SimilarityIndex::new();
        for t in texts {
            ix.docs.push(term_counts(t));
        }
        ix.reindex();
        ix
    }

    pub fn insert(&mut self, text: &str) {
        self.docs.push(term_counts(text));
        self.reindex();
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &String> {
        self.idf.keys()
    }

    fn reindex(&mut self) {
        let n = self.docs.len() as f64;
        let mut df: BTreeMap<&str, u32> = BTreeMap::new();
        for d in &self.docs {
            for t in d.keys() {
                *df.entry(t).or_default() += 1;
            }
        }
        self.idf = df.into_iter().map(|(t, c)| (t.to_string(), ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0)).collect();
        self.vectors = self.docs.iter().map(|d| weigh(d, &self.idf)).collect();
    }

    fn query_vector(&self, text: &str) -> BTreeMap<String, f64> {
        weigh(&term_counts(text), &self.idf)
    }

    /// Cosine score of `text` against every document, in insertion order.
    pub fn scores(&self, text: &str) -> Vec<f64> {
        let q = self.query_vector(text);
        self.vectors
            .iter()
            .map(|v| q.iter().map(|(t, w)| w * v.get(t).copied().unwrap_or(0.0)).sum::<f64>().clamp(0.0, 1.0))
            .collect()
    }

    /// Indices and scores of the top `k` documents; stable on ties.
    pub fn top_k(&self, text: &str, k: usize) -> Result<Vec<(usize, f64)>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if self.is_empty() {
            return Err(RetrievalError::EmptyStore);
        }
        Ok(rank(self.scores(text), k))
    }
}

fn rank(scores: Vec<f64>, k: usize) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(k);
    ranked
}

fn term_counts(text: &str) -> BTreeMap<String, u32> {
    let mut m = BTreeMap::new();
    for t in terms(text) {
        *m.entry(t).or_default() += 1;
    }
    m
}

fn weigh(counts: &BTreeMap<String, u32>, idf: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let mut v: BTreeMap<String, f64> = counts
        .iter()
        .filter_map(|(t, c)| idf.get(t).map(|w| (t.clone(), (1.0 + (*c as f64).ln()) * w)))
        .collect();
    let norm = v.values().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.values_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Per-agent tool-selection exemplars.
#[derive(Debug, Clone, Default)]
pub struct TsStore {
    exemplars: BTreeMap<Domain, (Vec<ToolExemplar>, SimilarityIndex)>,
}

impl TsStore {
    pub fn new() -> Self {
        TsStore::default()
    }

    pub fn from_exemplars(items: impl IntoIterator<Item = ToolExemplar>) -> Self {
        let mut grouped: BTreeMap<Domain, Vec<ToolExemplar>> = BTreeMap::new();
        for e in items {
            grouped.entry(e.agent).or_default().push(e);
        }
        let exemplars = grouped
            .into_iter()
            .map(|(a, v)| {
                let ix = SimilarityIndex::build(v.iter().map(|e| e.prompt_text.as_str()));
                (a, (v, ix))
            })
            .collect();
        TsStore { exemplars }
    }

    pub fn insert(&mut self, e: ToolExemplar) {
        let (v, ix) = self.exemplars.entry(e.agent).or_default();
        ix.insert(&e.prompt_text);
        v.push(e);
    }

    pub fn len(&self) -> usize {
        self.exemplars.values().map(|(v, _)| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn for_agent(&self, agent: Domain) -> &[ToolExemplar] {
        self.exemplars.get(&agent).map(|(v, _)| v.as_slice()).unwrap_or(&[])
    }

    pub fn all(&self) -> Vec<ToolExemplar> {
        self.exemplars.values().flat_map(|(v, _)| v.iter().cloned()).collect()
    }

    pub fn retrieve(&self, agent: Domain, query: &str, k: usize) -> Result<Vec<(&ToolExemplar, f64)>, RetrievalError> {
        let (v, ix) = self.exemplars.get(&agent).ok_or(RetrievalError::EmptyStore)?;
        Ok(ix.top_k(query, k)?.into_iter().map(|(i, s)| (&v[i], s)).collect())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Ok(TsStore::from_exemplars(read_jsonl::<ToolExemplar>(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_jsonl(path, &self.all())?;
        Ok(())
    }
}

/// Whole-workflow exemplars shared by the orchestrator.
#[derive(Debug, Clone, Default)]
pub struct WmStore {
    exemplars: Vec<WorkflowExemplar>,
    index: SimilarityIndex,
    embedder: Option<std::sync::Arc<dyn Embedder>>,
}

impl std::fmt::Debug for dyn Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Embedder")
    }
}

impl WmStore {
    pub fn new() -> Self {
        WmStore::default()
    }

    pub fn from_exemplars(items: impl IntoIterator<Item = WorkflowExemplar>) -> Self {
        let exemplars: Vec<WorkflowExemplar> = items.into_iter().collect();
        let index = SimilarityIndex::build(exemplars.iter().map(|e| e.prompt_text.as_str()));
        WmStore { exemplars, index, embedder: None }
    }

    /// Scores with `embedder` instead of TF-IDF.
    pub fn with_embedder(mut self, embedder: std::sync::Arc<dyn Embedder>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    pub fn insert(&mut self, e: WorkflowExemplar) {
        self.index.insert(&e.prompt_text);
        self.exemplars.push(e);
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }

    pub fn all(&self) -> &[WorkflowExemplar] {
        &self.exemplars
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Result<Vec<(&WorkflowExemplar, f64)>, RetrievalError> {
        let ranked = match &self.embedder {
            None => self.index.top_k(query, k)?,
            Some(emb) => {
                if k == 0 {
                    return Err(RetrievalError::ZeroK);
                }
                if self.exemplars.is_empty() {
                    return Err(RetrievalError::EmptyStore);
                }
                let q = emb.embed(query);
                rank(self.exemplars.iter().map(|e| cosine(&q, &emb.embed(&e.prompt_text))).collect(), k)
            }
        };
        Ok(ranked.into_iter().map(|(i, s)| (&self.exemplars[i], s)).collect())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Ok(WmStore::from_exemplars(read_jsonl::<WorkflowExemplar>(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_jsonl(path, &self.exemplars)?;
        Ok(())
    }
}

/// Renders retrieved exemplars as a few-shot block; no hits give "".
pub fn format_guidance(ts: &[(&ToolExemplar, f64)], wm: &[(&WorkflowExemplar, f64)]) -> String {
    let mut out: Vec<String> = Vec::new();
    for (e, _) in ts {
        out.push(format!("Similar prompt: {}", e.prompt_text));
        out.push(format!("Tools used: {}", e.tools_used.join(", ")));
    }
    for (e, _) in wm {
        out.push(format!("Similar workflow: {}", e.prompt_text));
        let agents: Vec<&str> = e.agents_involved.iter().map(|a| a.agent_name()).collect();
        out.push(format!("Agents involved: {}", agents.join(", ")));
    }
    out.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(prompt: &str, agent: Domain, tools: &[&str]) -> ToolExemplar {
        ToolExemplar { prompt_text: prompt.into(), agent, tools_used: tools.iter().map(|s| s.to_string()).collect() }
    }

    fn wm(prompt: &str, agents: &[Domain]) -> WorkflowExemplar {
        WorkflowExemplar { prompt_text: prompt.into(), agents_involved: agents.to_vec(), schedule_sketch: vec![] }
    }

    fn agri_store() -> TsStore {
        TsStore::from_exemplars([
            ts("Find low NDVI clusters in Gympie for March 2024", Domain::Agriculture, &["low_ndvi_clusters"]),
            ts("crop areas for Sydney", Domain::Agriculture, &["low_ndvi_clusters"]),
            ts("Highlight bright reflectance fields near Bundaberg", Domain::Agriculture, &["high_reflectance_zones"]),
        ])
    }

    #[test]
    fn tf_idf_oracle() {
        // Two docs: "a b" and "a c". idf(a) = ln(3/3)+1 = 1, idf(b) = idf(c) = ln(3/2)+1.
        let ix = SimilarityIndex::build(["a b", "a c"]);
        let w = (1.5f64).ln() + 1.0;
        let expected = 1.0 / (1.0 + w * w);
        let s = ix.scores("a b");
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!((s[1] - expected).abs() < 1e-12, "{} vs {expected}", s[1]);
    }

    #[test]
    fn self_query_ranks_first_with_score_one() {
        let st = agri_store();
        for e in st.for_agent(Domain::Agriculture) {
            let hits = st.retrieve(Domain::Agriculture, &e.prompt_text, TS_K).unwrap();
            assert_eq!(hits[0].0, e);
            assert!((hits[0].1 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn crop_areas_query() {
        let st = agri_store();
        let hits = st.retrieve(Domain::Agriculture, "crop areas for Sydney", 1).unwrap();
        assert_eq!(hits[0].0.prompt_text, "crop areas for Sydney");
    }

    #[test]
    fn disjoint_vocabulary_scores_zero_in_insertion_order() {
        let st = agri_store();
        let hits = st.retrieve(Domain::Agriculture, "zzz qqq", 3).unwrap();
        assert!(hits.iter().all(|(_, s)| *s == 0.0));
        let order: Vec<&str> = hits.iter().map(|(e, _)| e.prompt_text.as_str()).collect();
        let inserted: Vec<&str> = st.for_agent(Domain::Agriculture).iter().map(|e| e.prompt_text.as_str()).collect();
        assert_eq!(order, inserted);
    }

    #[test]
    fn empty_and_zero_k() {
        assert_eq!(TsStore::new().retrieve(Domain::Urban, "x", 3).unwrap_err(), RetrievalError::EmptyStore);
        assert_eq!(WmStore::new().retrieve("x", 2).unwrap_err(), RetrievalError::EmptyStore);
        assert_eq!(agri_store().retrieve(Domain::Agriculture, "x", 0).unwrap_err(), RetrievalError::ZeroK);
    }

    #[test]
    fn wm_melbourne_example() {
        let st = WmStore::from_exemplars([
            wm(
                "Plot the average NDVI of 2024 for Melbourne",
                &[Domain::Database, Domain::DataOps, Domain::Agriculture, Domain::Map],
            ),
            wm("Count airplanes in scene sydney-2", &[Domain::Vision, Domain::Map]),
        ]);
        let hits = st.retrieve("NDVI anomalies for Melbourne", 2).unwrap();
        assert_eq!(hits[0].0.agents_involved, vec![Domain::Database, Domain::DataOps, Domain::Agriculture, Domain::Map]);
        // k past the store size returns everything.
        assert_eq!(st.retrieve("x", 10).unwrap().len(), 2);
    }

    #[test]
    fn guidance_layout() {
        let st = agri_store();
        assert_eq!(format_guidance(&[], &[]), "");
        let hits = st.retrieve(Domain::Agriculture, "crop areas for Sydney", 1).unwrap();
        let g = format_guidance(&hits, &[]);
        assert_eq!(g, "Similar prompt: crop areas for Sydney\nTools used: low_ndvi_clusters");
        let w = wm("p", &[Domain::Database, Domain::Map]);
        let g = format_guidance(&[], &[(&w, 1.0)]);
        assert!(g.contains("Agents involved: Database, Map"));
        assert!(g.contains("Similar workflow: p"));
    }

    struct Bag;
    impl Embedder for Bag {
        fn embed(&self, text: &str) -> Vec<f64> {
            let t = text.to_lowercase();
            vec![t.matches("ndvi").count() as f64, t.matches("airplane").count() as f64]
        }
    }

    #[test]
    fn embedder_hook() {
        let st = WmStore::from_exemplars([wm("airplane count", &[Domain::Vision]), wm("ndvi mean", &[Domain::Agriculture])])
            .with_embedder(std::sync::Arc::new(Bag));
        assert_eq!(st.retrieve("show ndvi", 1).unwrap()[0].0.agents_involved, vec![Domain::Agriculture]);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ts.jsonl");
        let st = agri_store();
        st.save(&p).unwrap();
        assert_eq!(TsStore::load(&p).unwrap().all(), st.all());
        let p = dir.path().join("wm.jsonl");
        let w = WmStore::from_exemplars([wm("a", &[Domain::Map])]);
        w.save(&p).unwrap();
        assert_eq!(WmStore::load(&p).unwrap().all(), w.all());
    }

    proptest! {
        #[test]
        fn incremental_matches_rebuild(docs in prop::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,4}", 1..12), q in "[a-e]{1,3}( [a-e]{1,3}){0,3}") {
            let mut inc = SimilarityIndex::new();
            for d in &docs { inc.insert(d); }
            let full = SimilarityIndex::build(docs.iter().map(String::as_str));
            let a = inc.scores(&q);
            let b = full.scores(&q);
            for (x, y) in a.iter().zip(&b) { prop_assert!((x - y).abs() < 1e-12); }
            for (i, d) in docs.iter().enumerate() {
                let s = full.scores(d);
                prop_assert!((s[i] - 1.0).abs() < 1e-9);
                prop_assert!(s.iter().all(|x| (0.0..=1.0).contains(x)));
                // Self is top-1 (ties with identical documents allowed).
                prop_assert!(s.iter().all(|x| *x <= s[i] + 1e-12));
            }
        }

        #[test]
        fn adding_a_document_with_no_shared_terms_keeps_other_vectors(docs in prop::collection::vec("[a-e]{1,3}( [a-e]{1,3}){0,4}", 1..8), q in "[a-e]{1,3}") {
            // A new document over fresh terms leaves every df count unchanged;
            // only N moves, so scores change solely through the idf rebuild.
            let before = SimilarityIndex::build(docs.iter().map(String::as_str));
            let mut after = before.clone();
            after.insert("xyz");
            let mut manual = docs.clone();
            manual.push("xyz".into());
            let rebuilt = SimilarityIndex::build(manual.iter().map(String::as_str));
            let a = after.scores(&q);
            let r = rebuilt.scores(&q);
            for (x, y) in a.iter().zip(&r) { prop_assert!((x - y).abs() < 1e-12); }
            prop_assert_eq!(a.len(), before.len() + 1);
            prop_assert_eq!(a[docs.len()], 0.0);
        }
    }
}
