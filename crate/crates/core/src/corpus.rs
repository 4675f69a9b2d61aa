//! Entity, image and pair corpus.
//!
//! A [`Corpus`] is loaded from three line-delimited JSON files and is
//! immutable afterwards. The module also holds the corpus-level queries that
//! feed the grounding pipeline: long-tail selection by popularity, concept
//! selection strategies, the per-concept entity counts used to weight
//! evidence, the caption-linking labeling rule and the seeded dataset split.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CorpusError;

/// Popularity cut-off below which an entity counts as long-tailed.
pub const LONG_TAIL_VIEWTIMES: u64 = 100_000;

/// Popularity above which an entity counts as common.
pub const COMMON_VIEWTIMES: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub viewtimes: u64,
    #[serde(default)]
    pub concepts: Vec<String>,
}

impl EntityRecord {
    pub fn new(id: impl Into<String>, name: impl Into<String>, viewtimes: u64, concepts: Vec<String>) -> Self {
        let mut entity = Self {
            id: id.into(),
            name: name.into(),
            viewtimes,
            concepts,
        };
        entity.dedup_concepts();
        entity
    }

    /// Drops repeated concepts, keeping the first occurrence.
    fn dedup_concepts(&mut self) {
        let mut seen = HashSet::new();
        self.concepts.retain(|c| seen.insert(c.clone()));
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub locator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_entity_id: Option<String>,
}

impl ImageRef {
    pub fn new(id: impl Into<String>, locator: impl Into<String>, source_entity_id: Option<String>) -> Self {
        Self {
            id: id.into(),
            locator: locator.into(),
            source_entity_id,
        }
    }
}

/// A labeled `(entity, has image, image)` triple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairRecord {
    pub entity_id: String,
    pub image_id: String,
    pub label: bool,
}

impl PairRecord {
    pub fn new(entity_id: impl Into<String>, image_id: impl Into<String>, label: bool) -> Self {
        Self {
            entity_id: entity_id.into(),
            image_id: image_id.into(),
            label,
        }
    }
}

/// Output of an external short-text entity linker run over an image caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkingRecord {
    pub image_id: String,
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub linked_entities: Vec<String>,
}

/// Validated, immutable corpus.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    entities: Vec<EntityRecord>,
    images: Vec<ImageRef>,
    pairs: Vec<PairRecord>,
    entity_index: HashMap<String, usize>,
    image_index: HashMap<String, usize>,
    pair_labels: HashMap<(String, String), bool>,
}

impl Corpus {
    fn index_pairs(&mut self) {
        self.pair_labels = self
            .pairs
            .iter()
            .map(|p| ((p.entity_id.clone(), p.image_id.clone()), p.label))
            .collect();
    }

    /// Builds a corpus from in-memory records, applying the same validation
    /// as [`load_corpus`].
    pub fn from_parts(
        entities: Vec<EntityRecord>,
        images: Vec<ImageRef>,
        pairs: Vec<PairRecord>,
    ) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for (i, mut entity) in entities.into_iter().enumerate() {
            validate_entity(&entity).map_err(CorpusError::Invalid)?;
            entity.dedup_concepts();
            if corpus.entity_index.insert(entity.id.clone(), i).is_some() {
                return Err(CorpusError::Invalid(format!("duplicate entity id {:?}", entity.id)));
            }
            corpus.entities.push(entity);
        }
        for (i, image) in images.into_iter().enumerate() {
            validate_image(&image).map_err(CorpusError::Invalid)?;
            if corpus.image_index.insert(image.id.clone(), i).is_some() {
                return Err(CorpusError::Invalid(format!("duplicate image id {:?}", image.id)));
            }
            corpus.images.push(image);
        }
        for pair in &pairs {
            if !corpus.entity_index.contains_key(&pair.entity_id) {
                return Err(CorpusError::Invalid(format!("pair references unknown entity {:?}", pair.entity_id)));
            }
            if !corpus.image_index.contains_key(&pair.image_id) {
                return Err(CorpusError::Invalid(format!("pair references unknown image {:?}", pair.image_id)));
            }
        }
        corpus.pairs = pairs;
        corpus.index_pairs();
        Ok(corpus)
    }

    pub fn entities(&self) -> &[EntityRecord] {
        &self.entities
    }

    pub fn images(&self) -> &[ImageRef] {
        &self.images
    }

    pub fn pairs(&self) -> &[PairRecord] {
        &self.pairs
    }

    pub fn positive_pairs(&self) -> Vec<PairRecord> {
        self.pairs.iter().filter(|p| p.label).cloned().collect()
    }

    pub fn entity(&self, id: &str) -> Option<&EntityRecord> {
        self.entity_index.get(id).map(|&i| &self.entities[i])
    }

    pub fn image(&self, id: &str) -> Option<&ImageRef> {
        self.image_index.get(id).map(|&i| &self.images[i])
    }

    /// Ground truth for an `(entity, image)` pair: an explicit pair label
    /// when one exists, otherwise the image's provenance.
    pub fn actual_label(&self, entity_id: &str, image_id: &str) -> Option<bool> {
        if let Some(&label) = self.pair_labels.get(&(entity_id.to_string(), image_id.to_string())) {
            return Some(label);
        }
        self.image(image_id)?
            .source_entity_id
            .as_deref()
            .map(|source| source == entity_id)
    }

    pub fn summary(&self) -> CorpusSummary {
        CorpusSummary::of(&self.entities, self.images.len(), self.pairs.len())
    }
}

fn validate_entity(entity: &EntityRecord) -> Result<(), String> {
    if entity.id.is_empty() {
        return Err("entity id must be non-empty".into());
    }
    if entity.name.trim().is_empty() {
        return Err(format!("entity {:?} has an empty name", entity.id));
    }
    Ok(())
}

fn validate_image(image: &ImageRef) -> Result<(), String> {
    if image.id.is_empty() {
        return Err("image id must be non-empty".into());
    }
    if image.locator.is_empty() {
        return Err(format!("image {:?} has an empty locator", image.id));
    }
    Ok(())
}

/// Reads a line-delimited JSON file, skipping blank lines. Each record is
/// returned with its 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        records.push((line_no, record));
    }
    Ok(records)
}

/// Loads and validates a corpus from `entities.jsonl`, `images.jsonl` and an
/// optional `pairs.jsonl`.
pub fn load_corpus(
    entities_path: &Path,
    images_path: &Path,
    pairs_path: Option<&Path>,
) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    let mut entity_lines = HashMap::new();

    let entity_rows: Vec<(usize, EntityRecord)> = read_jsonl(entities_path)?;
    if entity_rows.is_empty() {
        return Err(CorpusError::Empty {
            path: entities_path.to_path_buf(),
        });
    }
    for (line, mut entity) in entity_rows {
        validate_entity(&entity).map_err(|message| CorpusError::Parse {
            path: entities_path.to_path_buf(),
            line,
            message,
        })?;
        if let Some(&first_line) = entity_lines.get(&entity.id) {
            return Err(CorpusError::DuplicateId {
                path: entities_path.to_path_buf(),
                kind: "entity",
                id: entity.id,
                line,
                first_line,
            });
        }
        entity_lines.insert(entity.id.clone(), line);
        entity.dedup_concepts();
        corpus.entity_index.insert(entity.id.clone(), corpus.entities.len());
        corpus.entities.push(entity);
    }

    let mut image_lines = HashMap::new();
    for (line, image) in read_jsonl::<ImageRef>(images_path)? {
        validate_image(&image).map_err(|message| CorpusError::Parse {
            path: images_path.to_path_buf(),
            line,
            message,
        })?;
        if let Some(&first_line) = image_lines.get(&image.id) {
            return Err(CorpusError::DuplicateId {
                path: images_path.to_path_buf(),
                kind: "image",
                id: image.id,
                line,
                first_line,
            });
        }
        image_lines.insert(image.id.clone(), line);
        corpus.image_index.insert(image.id.clone(), corpus.images.len());
        corpus.images.push(image);
    }

    if let Some(pairs_path) = pairs_path {
        for (line, pair) in read_jsonl::<PairRecord>(pairs_path)? {
            let dangling = |kind, id: &str| CorpusError::DanglingReference {
                path: pairs_path.to_path_buf(),
                line,
                kind,
                id: id.to_string(),
            };
            if !corpus.entity_index.contains_key(&pair.entity_id) {
                return Err(dangling("entity", &pair.entity_id));
            }
            if !corpus.image_index.contains_key(&pair.image_id) {
                return Err(dangling("image", &pair.image_id));
            }
            corpus.pairs.push(pair);
        }
    }
    corpus.index_pairs();
    Ok(corpus)
}

/// Entities whose popularity is strictly below `threshold`, in corpus order.
pub fn select_long_tailed(corpus: &Corpus, threshold: u64) -> Vec<EntityRecord> {
    corpus
        .entities()
        .iter()
        .filter(|e| e.viewtimes < threshold)
        .cloned()
        .collect()
}

/// Entities whose popularity is strictly above `threshold`, in corpus order.
pub fn select_common(corpus: &Corpus, threshold: u64) -> Vec<EntityRecord> {
    corpus
        .entities()
        .iter()
        .filter(|e| e.viewtimes > threshold)
        .cloned()
        .collect()
}

/// Which of an entity's concepts are fed to the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptStrategy {
    /// Entity name only.
    None,
    /// Basic-level concepts: single-word concepts only.
    Blc,
    All,
}

impl FromStr for ConceptStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "blc" => Ok(Self::Blc),
            "all" => Ok(Self::All),
            other => Err(format!("unknown concept strategy {other:?} (expected none, blc or all)")),
        }
    }
}

impl fmt::Display for ConceptStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Blc => "blc",
            Self::All => "all",
        })
    }
}

/// True when the concept is a single whitespace-free word.
pub fn is_blc(concept: &str) -> bool {
    concept.split_whitespace().count() == 1
}

pub fn select_concepts(entity: &EntityRecord, strategy: ConceptStrategy) -> Vec<String> {
    match strategy {
        ConceptStrategy::None => Vec::new(),
        ConceptStrategy::Blc => entity.concepts.iter().filter(|c| is_blc(c)).cloned().collect(),
        ConceptStrategy::All => entity.concepts.clone(),
    }
}

/// Per-concept entity counts over an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptStats {
    ents: u64,
    counts: HashMap<String, u64>,
}

impl ConceptStats {
    pub fn ents(&self) -> u64 {
        self.ents
    }

    pub fn count(&self, concept: &str) -> Option<u64> {
        self.counts.get(concept).copied()
    }

    pub fn counts(&self) -> &HashMap<String, u64> {
        &self.counts
    }

    pub fn distinct_concepts(&self) -> usize {
        self.counts.len()
    }
}

pub fn compute_concept_stats<'a, I>(entities: I) -> Result<ConceptStats, CorpusError>
where
    I: IntoIterator<Item = &'a EntityRecord>,
{
    let mut ents = 0u64;
    let mut counts: HashMap<String, u64> = HashMap::new();
    for entity in entities {
        ents += 1;
        let unique: HashSet<&String> = entity.concepts.iter().collect();
        for concept in unique {
            *counts.entry(concept.clone()).or_default() += 1;
        }
    }
    if ents == 0 {
        return Err(CorpusError::EmptyStats);
    }
    Ok(ConceptStats { ents, counts })
}

/// How linker output is compared against an entity name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NameMatch {
    #[default]
    Exact,
    CaseInsensitive,
}

/// An image is a match when the entity name appears among the entities the
/// linker found in its caption.
pub fn label_by_linking(linker_entities: &[String], entity_name: &str) -> bool {
    label_by_linking_with(linker_entities, entity_name, NameMatch::Exact)
}

pub fn label_by_linking_with(linker_entities: &[String], entity_name: &str, mode: NameMatch) -> bool {
    let name = entity_name.trim();
    linker_entities.iter().map(|e| e.trim()).any(|linked| match mode {
        NameMatch::Exact => linked == name,
        NameMatch::CaseInsensitive => linked.to_lowercase() == name.to_lowercase(),
    })
}

/// Labels every linking record whose image has a known source entity.
pub fn pairs_from_linking(corpus: &Corpus, links: &[LinkingRecord], mode: NameMatch) -> Result<Vec<PairRecord>, CorpusError> {
    let mut pairs = Vec::with_capacity(links.len());
    for link in links {
        let image = corpus
            .image(&link.image_id)
            .ok_or_else(|| CorpusError::Invalid(format!("linking record references unknown image {:?}", link.image_id)))?;
        let Some(entity_id) = image.source_entity_id.as_deref() else {
            continue;
        };
        let entity = corpus
            .entity(entity_id)
            .ok_or_else(|| CorpusError::Invalid(format!("image {:?} references unknown entity {entity_id:?}", image.id)))?;
        pairs.push(PairRecord::new(
            entity_id,
            &image.id,
            label_by_linking_with(&link.linked_entities, &entity.name, mode),
        ));
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded 8:1:1 split. Validation and test get `N/10` items each, rounded
/// to nearest, and the remainder goes to train.
pub fn split_dataset<T: Clone>(items: &[T], seed: u64) -> Split<T> {
    let mut shuffled = items.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tenth = (items.len() + 5) / 10;
    let train = shuffled.split_off(2 * tenth);
    let test = shuffled.split_off(tenth);
    Split {
        train,
        validation: shuffled,
        test,
    }
}

/// Dataset statistics in the shape of a corpus statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub total_entities: usize,
    pub total_concepts: usize,
    pub blc_concepts: usize,
    pub avg_concepts_per_entity: f64,
    pub avg_blc_concepts_per_entity: f64,
    pub long_tailed_entities: usize,
    pub images: usize,
    pub pairs: usize,
}

impl CorpusSummary {
    pub fn of(entities: &[EntityRecord], images: usize, pairs: usize) -> Self {
        let distinct: HashSet<&str> = entities.iter().flat_map(|e| e.concepts.iter().map(String::as_str)).collect();
        let blc = distinct.iter().filter(|c| is_blc(c)).count();
        let n = entities.len().max(1) as f64;
        let total: usize = entities.iter().map(|e| e.concepts.len()).sum();
        let total_blc: usize = entities
            .iter()
            .map(|e| e.concepts.iter().filter(|c| is_blc(c)).count())
            .sum();
        Self {
            total_entities: entities.len(),
            total_concepts: distinct.len(),
            blc_concepts: blc,
            avg_concepts_per_entity: total as f64 / n,
            avg_blc_concepts_per_entity: total_blc as f64 / n,
            long_tailed_entities: entities.iter().filter(|e| e.viewtimes < LONG_TAIL_VIEWTIMES).count(),
            images,
            pairs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn entity(id: &str, viewtimes: u64, concepts: &[&str]) -> EntityRecord {
        EntityRecord::new(id, format!("Name {id}"), viewtimes, concepts.iter().map(|c| c.to_string()).collect())
    }

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn tempdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("cog-corpus-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn loads_three_entities() {
        let dir = tempdir("load");
        let e = write(
            &dir,
            "e.jsonl",
            r#"{"id":"e1","name":"A","viewtimes":1,"concepts":["x","x","y"],"extra":true}
{"id":"e2","name":"B","viewtimes":2,"concepts":[]}

{"id":"e3","name":"C","viewtimes":3,"concepts":["z"]}
"#,
        );
        let i = write(&dir, "i.jsonl", r#"{"id":"i1","locator":"a.jpg","source_entity_id":"e1"}"#);
        let p = write(&dir, "p.jsonl", r#"{"entity_id":"e1","image_id":"i1","label":true}"#);
        let corpus = load_corpus(&e, &i, Some(&p)).unwrap();
        assert_eq!(corpus.entities().len(), 3);
        assert_eq!(corpus.entity("e1").unwrap().concepts, vec!["x", "y"]);
        assert_eq!(corpus.pairs().len(), 1);
    }

    #[test]
    fn duplicate_entity_id_reports_lines() {
        let dir = tempdir("dup");
        let e = write(
            &dir,
            "e.jsonl",
            "{\"id\":\"e1\",\"name\":\"A\"}\n{\"id\":\"e1\",\"name\":\"B\"}\n",
        );
        let i = write(&dir, "i.jsonl", "");
        match load_corpus(&e, &i, None) {
            Err(CorpusError::DuplicateId { line, first_line, id, .. }) => {
                assert_eq!((line, first_line, id.as_str()), (2, 1, "e1"));
            }
            other => panic!("expected duplicate id, got {other:?}"),
        }
    }

    #[test]
    fn dangling_pair_is_rejected() {
        let dir = tempdir("dangling");
        let e = write(&dir, "e.jsonl", r#"{"id":"e1","name":"A"}"#);
        let i = write(&dir, "i.jsonl", r#"{"id":"i1","locator":"a.jpg"}"#);
        let p = write(&dir, "p.jsonl", r#"{"entity_id":"e1","image_id":"nope","label":true}"#);
        assert!(matches!(
            load_corpus(&e, &i, Some(&p)),
            Err(CorpusError::DanglingReference { kind: "image", line: 1, .. })
        ));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tempdir("parse");
        let e = write(&dir, "e.jsonl", "{\"id\":\"e1\",\"name\":\"A\"}\n{not json\n");
        let i = write(&dir, "i.jsonl", "");
        assert!(matches!(load_corpus(&e, &i, None), Err(CorpusError::Parse { line: 2, .. })));
    }

    #[test]
    fn empty_entities_file_is_an_error() {
        let dir = tempdir("empty");
        let e = write(&dir, "e.jsonl", "\n");
        let i = write(&dir, "i.jsonl", "");
        assert!(matches!(load_corpus(&e, &i, None), Err(CorpusError::Empty { .. })));
    }

    #[test]
    fn long_tail_boundary_is_strict() {
        let corpus = Corpus::from_parts(
            vec![entity("a", 99_999, &[]), entity("b", 100_000, &[]), entity("c", 5, &[])],
            vec![],
            vec![],
        )
        .unwrap();
        let ids: Vec<_> = select_long_tailed(&corpus, LONG_TAIL_VIEWTIMES).into_iter().map(|e| e.id).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!(select_long_tailed(&corpus, 0).is_empty());
    }

    #[test]
    fn common_filter_is_strict() {
        let corpus = Corpus::from_parts(
            vec![entity("a", 1_000_000, &[]), entity("b", 1_000_001, &[]), entity("c", 5, &[])],
            vec![],
            vec![],
        )
        .unwrap();
        let ids: Vec<_> = select_common(&corpus, COMMON_VIEWTIMES).into_iter().map(|e| e.id).collect();
        assert_eq!(ids, ["b"]);
    }

    #[test]
    fn concept_strategies() {
        let e = entity("a", 0, &["singer", "film director"]);
        assert_eq!(select_concepts(&e, ConceptStrategy::Blc), ["singer"]);
        assert_eq!(select_concepts(&e, ConceptStrategy::All), ["singer", "film director"]);
        assert!(select_concepts(&e, ConceptStrategy::None).is_empty());
        assert!(is_blc("歌手"));
        assert!(!is_blc("film\u{3000}director"));
    }

    #[test]
    fn concept_stats_counts() {
        let entities = vec![entity("a", 0, &["person", "singer"]), entity("b", 0, &["person"])];
        let stats = compute_concept_stats(&entities).unwrap();
        assert_eq!(stats.ents(), 2);
        assert_eq!(stats.count("person"), Some(2));
        assert_eq!(stats.count("singer"), Some(1));
        assert!(matches!(compute_concept_stats(&Vec::new()), Err(CorpusError::EmptyStats)));
    }

    #[test]
    fn linking_rule() {
        let linked = vec!["Aristoxenus".to_string(), "Greece".to_string()];
        assert!(label_by_linking(&linked, "Aristoxenus"));
        assert!(!label_by_linking(&[], "X"));
        let lower = vec!["aristoxenus".to_string()];
        assert!(!label_by_linking(&lower, "Aristoxenus"));
        assert!(label_by_linking_with(&lower, "Aristoxenus", NameMatch::CaseInsensitive));
        assert!(label_by_linking(&[" Aristoxenus ".to_string()], "Aristoxenus"));
    }

    #[test]
    fn split_sizes() {
        let items: Vec<u32> = (0..10).collect();
        let s = split_dataset(&items, 1);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        let items: Vec<u32> = (0..25_166).collect();
        let s = split_dataset(&items, 7);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (20_132, 2_517, 2_517));
        assert_eq!(s, split_dataset(&items, 7));
    }
}
