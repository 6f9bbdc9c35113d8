//! Knowledge-graph triple store and entity-embedding index.
//!
//! Retrieval is an exact scan over unit-normalized vectors (cosine similarity
//! as a dot product) with ties broken by entity name, so results are fully
//! reproducible.
//!
//! File formats (UTF-8, tab separated):
//!
//! - triples: `head<TAB>relation<TAB>tail[<TAB>source]`
//! - embeddings: `entity<TAB>v1,v2,...,vd`

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of neighbouring entities retrieved per target entity.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KgTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl KgTriple {
    pub fn new(head: impl Into<String>, relation: impl Into<String>, tail: impl Into<String>) -> Self {
        Self {
            head: head.into(),
            relation: relation.into(),
            tail: tail.into(),
            source: None,
        }
    }

    fn key(&self) -> (&str, &str, &str) {
        (&self.head, &self.relation, &self.tail)
    }

    pub fn touches(&self, entity: &str) -> bool {
        self.head == entity || self.tail == entity
    }
}

/// Deduplicated triples in first-seen order.
#[derive(Debug, Clone, Default)]
pub struct KgStore {
    triples: Vec<KgTriple>,
    by_entity: HashMap<String, Vec<usize>>,
}

impl KgStore {
    pub fn new(triples: impl IntoIterator<Item = KgTriple>) -> Result<Self> {
        let mut store = Self::default();
        let mut seen: HashSet<(String, String, String)> = HashSet::new();
        for triple in triples {
            if triple.head.is_empty() || triple.tail.is_empty() {
                return Err(Error::invalid("triple with empty head or tail"));
            }
            let (h, r, t) = triple.key();
            if !seen.insert((h.to_string(), r.to_string(), t.to_string())) {
                continue;
            }
            let idx = store.triples.len();
            store.by_entity.entry(triple.head.clone()).or_default().push(idx);
            if triple.tail != triple.head {
                store.by_entity.entry(triple.tail.clone()).or_default().push(idx);
            }
            store.triples.push(triple);
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn triples(&self) -> &[KgTriple] {
        &self.triples
    }

    /// Triples incident to `entity`, in store order.
    pub fn incident(&self, entity: &str) -> impl Iterator<Item = &KgTriple> {
        self.by_entity
            .get(entity)
            .into_iter()
            .flatten()
            .map(move |&i| &self.triples[i])
    }

    pub fn contains_entity(&self, entity: &str) -> bool {
        self.by_entity.contains_key(entity)
    }
}

/// Entity vectors, stored unit-normalized.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    dimension: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingIndex {
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(Self {
            dimension,
            entries: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, entity: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let entity = entity.into();
        if vector.len() != self.dimension {
            return Err(Error::LengthMismatch {
                expected: self.dimension,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{entity}: non-finite component")));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::invalid(format!("{entity}: zero vector cannot be normalized")));
        }
        if self.entries.contains_key(&entity) {
            return Err(Error::invalid(format!("duplicate embedding for `{entity}`")));
        }
        self.entries.insert(entity, vector.into_iter().map(|v| v / norm).collect());
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Normalized vector for an exact entity name.
    pub fn vector(&self, entity: &str) -> Option<&[f64]> {
        self.entries.get(entity).map(Vec::as_slice)
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Resolves a surface form to an indexed entity name: exact match first,
    /// then the lexicographically first case-insensitive match.
    pub fn resolve(&self, entity: &str) -> Option<&str> {
        if let Some((name, _)) = self.entries.get_key_value(entity) {
            return Some(name);
        }
        let lower = entity.to_lowercase();
        self.entries.keys().find(|k| k.to_lowercase() == lower).map(String::as_str)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, PartialEq)]
struct Candidate<'a> {
    similarity: f64,
    entity: &'a str,
}

impl Eq for Candidate<'_> {}

impl Ord for Candidate<'_> {
    // "Better" candidates compare as smaller so the max-heap root is the
    // worst retained candidate.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then_with(|| self.entity.cmp(other.entity))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `k` entities most similar to `entity`, excluding itself.
///
/// Ordered by descending similarity, then entity name. An entity missing
/// from the index yields an empty list.
pub fn top_k_neighbors(entity: &str, k: usize, index: &EmbeddingIndex) -> Vec<(String, f64)> {
    if k == 0 {
        return Vec::new();
    }
    let Some(query_name) = index.resolve(entity) else {
        log::warn!("entity `{entity}` not in embedding index; no neighbours");
        return Vec::new();
    };
    let query = &index.entries[query_name];
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    for (name, vector) in &index.entries {
        if name == query_name {
            continue;
        }
        heap.push(Candidate {
            similarity: dot(query, vector),
            entity: name,
        });
        if heap.len() > k {
            heap.pop();
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|c| (c.entity.to_string(), c.similarity))
        .collect()
}

/// Store triples linking each query entity to one of its top-`k` neighbours.
///
/// Entity 1's facts come first, then entity 2's; within an entity, facts
/// follow neighbour similarity order, then store order. Duplicates are
/// removed.
pub fn facts_for(
    pair: (&str, &str),
    k: usize,
    store: &KgStore,
    index: &EmbeddingIndex,
) -> Vec<KgTriple> {
    let mut out: Vec<KgTriple> = Vec::new();
    let mut seen: HashSet<KgTriple> = HashSet::new();
    for surface in [pair.0, pair.1] {
        let Some(entity) = index.resolve(surface) else {
            continue;
        };
        for (neighbor, _) in top_k_neighbors(entity, k, index) {
            for triple in store.incident(entity) {
                let other = if triple.head == entity { &triple.tail } else { &triple.head };
                if *other == neighbor && seen.insert(triple.clone()) {
                    out.push(triple.clone());
                }
            }
        }
    }
    out
}

/// One `head — relation — tail` line per fact.
pub fn render_facts(facts: &[KgTriple]) -> String {
    facts
        .iter()
        .map(|t| format!("{} — {} — {}", t.head, t.relation, t.tail))
        .collect::<Vec<_>>()
        .join("\n")
}

fn tsv_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        out.push((idx + 1, line.to_string()));
    }
    Ok(out)
}

pub fn load_triples(path: &Path) -> Result<KgStore> {
    let mut triples = Vec::new();
    for (line, text) in tsv_lines(path)? {
        let cols: Vec<&str> = text.split('\t').collect();
        if !(3..=4).contains(&cols.len()) {
            return Err(Error::parse(path, line, format!("expected 3 or 4 columns, found {}", cols.len())));
        }
        if cols[0].is_empty() || cols[2].is_empty() {
            return Err(Error::parse(path, line, "empty head or tail"));
        }
        triples.push(KgTriple {
            head: cols[0].to_string(),
            relation: cols[1].to_string(),
            tail: cols[2].to_string(),
            source: cols.get(3).filter(|s| !s.is_empty()).map(|s| s.to_string()),
        });
    }
    KgStore::new(triples)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingIndex> {
    let mut index: Option<EmbeddingIndex> = None;
    for (line, text) in tsv_lines(path)? {
        let Some((entity, values)) = text.split_once('\t') else {
            return Err(Error::parse(path, line, "expected `entity<TAB>v1,...,vd`"));
        };
        let vector = values
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, line, format!("bad vector component: {e}")))?;
        let index = match &mut index {
            Some(index) => index,
            None => index.insert(EmbeddingIndex::new(vector.len()).map_err(|e| Error::parse(path, line, e.to_string()))?),
        };
        index
            .insert(entity, vector)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
    }
    Ok(match index {
        Some(index) => index,
        None => EmbeddingIndex::new(1)?,
    })
}

/// A loaded knowledge graph: triples plus the embedding index.
#[derive(Debug, Clone)]
pub struct Kg {
    pub store: KgStore,
    pub index: EmbeddingIndex,
}

impl Kg {
    pub fn facts_for(&self, pair: (&str, &str), k: usize) -> Vec<KgTriple> {
        facts_for(pair, k, &self.store, &self.index)
    }

    /// Every entity name known to the index.
    pub fn entity_names(&self) -> Vec<String> {
        self.index.entities().map(str::to_string).collect()
    }
}

pub fn load_kg(triples_path: &Path, embeddings_path: &Path) -> Result<Kg> {
    let store = load_triples(triples_path)?;
    let index = load_embeddings(embeddings_path)?;
    let orphans = index.entities().filter(|e| !store.contains_entity(e)).count();
    if orphans > 0 {
        log::info!("{orphans} indexed entities do not appear in any triple");
    }
    Ok(Kg { store, index })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn index(rows: &[(&str, &[f64])]) -> EmbeddingIndex {
        let mut idx = EmbeddingIndex::new(rows[0].1.len()).unwrap();
        for (name, v) in rows {
            idx.insert(*name, v.to_vec()).unwrap();
        }
        idx
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::File::create(&path).unwrap().write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn duplicate_triples_collapse() {
        let dir = tempfile::tempdir().unwrap();
        let t = write(&dir, "t.tsv", "a\tbinds\tb\na\tbinds\tb\tpubmed:1\nb\tinhibits\tc\n");
        let store = load_triples(&t).unwrap();
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn empty_triples_file_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let t = write(&dir, "t.tsv", "");
        assert!(load_triples(&t).unwrap().is_empty());
    }

    #[test]
    fn wrong_embedding_width_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(&dir, "e.tsv", "a\t1,0,0\nb\t0,1\n");
        let err = load_embeddings(&e).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn vectors_are_unit_normalized() {
        let idx = index(&[("a", &[3.0, 4.0])]);
        let v = idx.vector("a").unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn top_five_of_six_excludes_query() {
        let idx = index(&[
            ("q", &[1.0, 0.0]),
            ("a", &[1.0, 0.1]),
            ("b", &[1.0, 0.2]),
            ("c", &[1.0, 0.3]),
            ("d", &[0.0, 1.0]),
            ("e", &[-1.0, 0.0]),
        ]);
        let got = top_k_neighbors("q", DEFAULT_K, &idx);
        let names: Vec<&str> = got.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["a", "b", "c", "d", "e"]);
        assert!(got.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn ties_break_by_name_and_k_zero_is_empty() {
        let idx = index(&[("q", &[1.0, 0.0]), ("z", &[0.0, 1.0]), ("m", &[0.0, 2.0]), ("b", &[0.0, 1.0])]);
        let names: Vec<String> = top_k_neighbors("q", 2, &idx).into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["b", "m"]);
        assert!(top_k_neighbors("q", 0, &idx).is_empty());
        assert!(top_k_neighbors("missing", 3, &idx).is_empty());
    }

    #[test]
    fn resolve_falls_back_to_case_insensitive() {
        let idx = index(&[("Warfarin", &[1.0]), ("aspirin", &[1.0])]);
        assert_eq!(idx.resolve("warfarin"), Some("Warfarin"));
        assert_eq!(idx.resolve("Aspirin"), Some("aspirin"));
        assert_eq!(idx.resolve("heparin"), None);
    }

    fn micro_kg() -> Kg {
        let index = index(&[
            ("E", &[1.0, 0.0, 0.0]),
            ("N1", &[0.9, 0.1, 0.0]),
            ("N2", &[0.8, 0.2, 0.0]),
            ("X", &[0.0, 0.0, 1.0]),
            ("F", &[0.85, 0.1, 0.0]),
        ]);
        let store = KgStore::new([
            KgTriple::new("E", "inhibits", "N1"),
            KgTriple::new("E", "binds", "N2"),
            KgTriple::new("E", "binds", "X"),
            KgTriple::new("F", "binds", "N1"),
            KgTriple::new("N1", "activates", "F"),
        ])
        .unwrap();
        Kg { store, index }
    }

    #[test]
    fn facts_are_neighbor_constrained() {
        let kg = micro_kg();
        // E's three nearest neighbours are N1, F and N2
        let facts = kg.facts_for(("E", "nothing"), 3);
        assert_eq!(
            facts,
            [KgTriple::new("E", "inhibits", "N1"), KgTriple::new("E", "binds", "N2")]
        );
        assert!(!facts.contains(&KgTriple::new("E", "binds", "X")));
    }

    #[test]
    fn overlapping_neighbourhoods_are_deduplicated() {
        let kg = micro_kg();
        let facts = kg.facts_for(("F", "N1"), 2);
        let unique: HashSet<_> = facts.iter().collect();
        assert_eq!(unique.len(), facts.len());
        assert!(facts.iter().all(|t| t.touches("F") || t.touches("N1")));
        assert!(kg.facts_for(("nope", "nada"), 5).is_empty());
    }

    #[test]
    fn render_one_line_per_fact() {
        assert_eq!(render_facts(&[]), "");
        let one = render_facts(&[KgTriple::new("a", "binds", "b")]);
        assert_eq!(one, "a — binds — b");
        let facts: Vec<KgTriple> = (0..5).map(|i| KgTriple::new("a", "r", format!("t{i}"))).collect();
        let text = render_facts(&facts);
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().last(), Some("a — r — t4"));
    }
}
