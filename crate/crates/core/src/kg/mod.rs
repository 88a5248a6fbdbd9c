//! Knowledge-graph storage: vocabularies, split-tagged triples and
//! `(subject, relation) -> sorted objects` indexes.

mod snapshot;

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

/// Suffix appended to a relation name to form its reciprocal's name.
pub const RECIPROCAL_SUFFIX: &str = "^-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(subject: EntityId, relation: RelationId, object: EntityId) -> Self {
        Self { subject, relation, object }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// Which triples an index lookup or traversal may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    TrainOnly,
    AllSplits,
}

/// String <-> dense id bijection, ids assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if ids.insert(n.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary entry `{n}`")));
            }
        }
        Ok(Self { names, ids })
    }

    pub fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Compressed adjacency: for key `s * num_relations + r`, objects are
/// `targets[offsets[key]..offsets[key + 1]]`, sorted ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdjacencyIndex {
    num_relations: usize,
    offsets: Vec<u32>,
    targets: Vec<EntityId>,
}

impl AdjacencyIndex {
    fn build<'a>(
        num_entities: usize,
        num_relations: usize,
        triples: impl Iterator<Item = &'a Triple> + Clone,
    ) -> Self {
        let keys = num_entities * num_relations;
        let mut counts = vec![0u32; keys + 1];
        for t in triples.clone() {
            counts[t.subject as usize * num_relations + t.relation as usize + 1] += 1;
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let offsets = counts;
        let mut cursor = offsets.clone();
        let mut targets = vec![0; offsets[keys] as usize];
        for t in triples {
            let k = t.subject as usize * num_relations + t.relation as usize;
            targets[cursor[k] as usize] = t.object;
            cursor[k] += 1;
        }
        for k in 0..keys {
            let (a, b) = (offsets[k] as usize, offsets[k + 1] as usize);
            targets[a..b].sort_unstable();
        }
        // A triple may appear in several splits; the index is a set.
        let mut index = Self { num_relations, offsets, targets };
        index.dedup();
        index
    }

    fn dedup(&mut self) {
        let keys = self.offsets.len() - 1;
        let mut out = Vec::with_capacity(self.targets.len());
        let mut offsets = Vec::with_capacity(self.offsets.len());
        offsets.push(0u32);
        for k in 0..keys {
            let slice = &self.targets[self.offsets[k] as usize..self.offsets[k + 1] as usize];
            let mut prev = None;
            for &o in slice {
                if prev != Some(o) {
                    out.push(o);
                    prev = Some(o);
                }
            }
            offsets.push(out.len() as u32);
        }
        self.offsets = offsets;
        self.targets = out;
    }

    pub fn objects(&self, subject: EntityId, relation: RelationId) -> &[EntityId] {
        let k = subject as usize * self.num_relations + relation as usize;
        &self.targets[self.offsets[k] as usize..self.offsets[k + 1] as usize]
    }

    pub fn contains(&self, subject: EntityId, relation: RelationId, object: EntityId) -> bool {
        self.objects(subject, relation).binary_search(&object).is_ok()
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    /// Relations present before reciprocals were generated.
    num_base_relations: usize,
    has_reciprocals: bool,
    splits: [Vec<Triple>; 3],
    train_index: AdjacencyIndex,
    all_index: AdjacencyIndex,
}

impl KnowledgeGraph {
    /// Builds a graph from already-resolved triples. Duplicates within a split
    /// are dropped.
    pub fn from_parts(entities: Vocab, relations: Vocab, splits: [Vec<Triple>; 3]) -> Result<Self> {
        let num_base_relations = relations.len();
        let mut kg = Self {
            entities,
            relations,
            num_base_relations,
            has_reciprocals: false,
            splits,
            train_index: AdjacencyIndex::default(),
            all_index: AdjacencyIndex::default(),
        };
        for split in &mut kg.splits {
            let mut seen = std::collections::HashSet::with_capacity(split.len());
            split.retain(|t| seen.insert(*t));
        }
        kg.check_bounds()?;
        kg.rebuild_indexes();
        Ok(kg)
    }

    fn check_bounds(&self) -> Result<()> {
        let (ne, nr) = (self.entities.len() as u32, self.relations.len() as u32);
        for t in self.splits.iter().flatten() {
            if t.subject >= ne || t.object >= ne || t.relation >= nr {
                return Err(Error::Format(format!("triple {t:?} out of vocabulary bounds")));
            }
        }
        Ok(())
    }

    fn rebuild_indexes(&mut self) {
        let (ne, nr) = (self.entities.len(), self.relations.len());
        self.train_index = AdjacencyIndex::build(ne, nr, self.splits[0].iter());
        self.all_index = AdjacencyIndex::build(ne, nr, self.splits.iter().flatten());
    }

    /// Adds `(o, p^-1, s)` for every triple `(s, p, o)` of every split. The
    /// reciprocal of relation `p` gets id `p + num_base_relations`.
    pub fn add_reciprocals(mut self) -> Result<Self> {
        if self.has_reciprocals {
            return Err(Error::ReciprocalsPresent);
        }
        let nr = self.num_base_relations as u32;
        for r in 0..nr {
            let name = format!("{}{RECIPROCAL_SUFFIX}", self.relations.name(r));
            if self.relations.id(&name).is_some() {
                return Err(Error::Config(format!("relation `{name}` collides with a generated reciprocal")));
            }
            self.relations.get_or_insert(&name);
        }
        for split in &mut self.splits {
            let mirrored: Vec<Triple> =
                split.iter().map(|t| Triple::new(t.object, t.relation + nr, t.subject)).collect();
            split.extend(mirrored);
        }
        self.has_reciprocals = true;
        self.rebuild_indexes();
        Ok(self)
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.num_base_relations
    }

    pub fn has_reciprocals(&self) -> bool {
        self.has_reciprocals
    }

    /// Reciprocal id of `relation`, if reciprocals have been generated.
    pub fn reciprocal(&self, relation: RelationId) -> Option<RelationId> {
        if !self.has_reciprocals {
            return None;
        }
        let nb = self.num_base_relations as u32;
        Some(if relation < nb { relation + nb } else { relation - nb })
    }

    /// True for triples generated by [`KnowledgeGraph::add_reciprocals`].
    pub fn is_derived(&self, t: &Triple) -> bool {
        self.has_reciprocals && t.relation as usize >= self.num_base_relations
    }

    pub fn triples(&self, split: Split) -> &[Triple] {
        &self.splits[split.index()]
    }

    pub fn index(&self, scope: Scope) -> &AdjacencyIndex {
        match scope {
            Scope::TrainOnly => &self.train_index,
            Scope::AllSplits => &self.all_index,
        }
    }

    /// Objects `o` with `(subject, relation, o)` in the selected scope, sorted.
    pub fn filtered_answers(&self, subject: EntityId, relation: RelationId, scope: Scope) -> &[EntityId] {
        self.index(scope).objects(subject, relation)
    }

    pub fn contains(&self, t: &Triple, scope: Scope) -> bool {
        self.index(scope).contains(t.subject, t.relation, t.object)
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        snapshot::write(self, path)
    }

    pub fn read_snapshot(path: &Path) -> Result<Self> {
        snapshot::read(path)
    }
}

/// Reads tab-separated `subject<TAB>relation<TAB>object` files. Vocabularies
/// span all files and ids follow first-seen order in the given file order.
pub fn ingest_triples(paths: &[(PathBuf, Split)]) -> Result<KnowledgeGraph> {
    if paths.is_empty() {
        return Err(Error::Config("no triple files given".into()));
    }
    let mut entities = Vocab::default();
    let mut relations = Vocab::default();
    let mut splits: [Vec<Triple>; 3] = Default::default();
    let mut seen: [std::collections::HashSet<Triple>; 3] = Default::default();
    for (path, split) in paths {
        let text = fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: lineno + 1,
                    msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let t = Triple::new(
                entities.get_or_insert(fields[0]),
                relations.get_or_insert(fields[1]),
                entities.get_or_insert(fields[2]),
            );
            if seen[split.index()].insert(t) {
                splits[split.index()].push(t);
            } else {
                tracing::warn!("{}:{}: duplicate triple dropped", path.display(), lineno + 1);
            }
        }
    }
    KnowledgeGraph::from_parts(entities, relations, splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tsv(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        p
    }

    fn toy() -> KnowledgeGraph {
        let dir = tempfile::tempdir().unwrap();
        let train = write_tsv(dir.path(), "train.tsv", &["s\tr\to1", "s\tq\to2"]);
        let test = write_tsv(dir.path(), "test.tsv", &["s\tr\to2"]);
        ingest_triples(&[(train, Split::Train), (test, Split::Test)]).unwrap()
    }

    #[test]
    fn three_line_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tsv(dir.path(), "t.tsv", &["a\tr\tb", "b\tr\tc", "c\tr\ta"]);
        let kg = ingest_triples(&[(p, Split::Train)]).unwrap();
        assert_eq!(kg.num_entities(), 3);
        assert_eq!(kg.triples(Split::Train).len(), 3);
        assert_eq!(kg.entities().names(), ["a", "b", "c"]);
    }

    #[test]
    fn duplicates_dropped_and_malformed_lines_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tsv(dir.path(), "t.tsv", &["a\tr\tb", "a\tr\tb"]);
        let kg = ingest_triples(&[(p, Split::Train)]).unwrap();
        assert_eq!(kg.triples(Split::Train).len(), 1);

        let bad = write_tsv(dir.path(), "bad.tsv", &["a\tr\tb", "a\tr"]);
        match ingest_triples(&[(bad, Split::Train)]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(ingest_triples(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn reciprocals_double_relations() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tsv(dir.path(), "t.tsv", &["a\tr\tb", "b\tr\tc"]);
        let kg = ingest_triples(&[(p, Split::Train)]).unwrap().add_reciprocals().unwrap();
        assert_eq!(kg.num_relations(), 2);
        assert_eq!(kg.triples(Split::Train).len(), 4);
        let (a, b) = (kg.entities().id("a").unwrap(), kg.entities().id("b").unwrap());
        let inv = kg.relations().id("r^-1").unwrap();
        assert_eq!(kg.reciprocal(0), Some(inv));
        assert!(kg.contains(&Triple::new(b, inv, a), Scope::TrainOnly));
        assert!(matches!(kg.add_reciprocals(), Err(Error::ReciprocalsPresent)));
    }

    #[test]
    fn scopes_separate_train_from_test() {
        let kg = toy();
        let id = |n| kg.entities().id(n).unwrap();
        let r = kg.relations().id("r").unwrap();
        assert_eq!(kg.filtered_answers(id("s"), r, Scope::TrainOnly), [id("o1")]);
        assert_eq!(kg.filtered_answers(id("s"), r, Scope::AllSplits), [id("o1"), id("o2")]);
        assert!(kg.filtered_answers(id("o1"), r, Scope::AllSplits).is_empty());
    }

    #[test]
    fn snapshot_round_trip() {
        let kg = toy().add_reciprocals().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kg.bin");
        kg.write_snapshot(&p).unwrap();
        let back = KnowledgeGraph::read_snapshot(&p).unwrap();
        assert_eq!(kg, back);
        let p2 = dir.path().join("kg2.bin");
        back.write_snapshot(&p2).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
    }
}
