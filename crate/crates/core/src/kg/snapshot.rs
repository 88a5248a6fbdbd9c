use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdjacencyIndex, KnowledgeGraph, Triple, Vocab};
use crate::container::{self, Cursor};
use crate::error::{Error, Result};

const MAGIC: &str = "KGCAL-KG";

#[derive(Serialize, Deserialize)]
struct Manifest {
    num_entities: usize,
    num_relations: usize,
    num_base_relations: usize,
    has_reciprocals: bool,
    /// Triple counts for train, valid, test.
    split_sizes: [usize; 3],
    /// Edge counts of the train-only and all-splits indexes.
    index_sizes: [usize; 2],
    entities: Vec<String>,
    relations: Vec<String>,
}

pub(super) fn write(kg: &KnowledgeGraph, path: &Path) -> Result<()> {
    let manifest = Manifest {
        num_entities: kg.entities.len(),
        num_relations: kg.relations.len(),
        num_base_relations: kg.num_base_relations,
        has_reciprocals: kg.has_reciprocals,
        split_sizes: [kg.splits[0].len(), kg.splits[1].len(), kg.splits[2].len()],
        index_sizes: [kg.train_index.num_edges(), kg.all_index.num_edges()],
        entities: kg.entities.names().to_vec(),
        relations: kg.relations.names().to_vec(),
    };
    let mut payload = Vec::new();
    for split in &kg.splits {
        for t in split {
            container::push_u32s(&mut payload, &[t.subject, t.relation, t.object]);
        }
    }
    for index in [&kg.train_index, &kg.all_index] {
        container::push_u32s(&mut payload, &index.offsets);
        container::push_u32s(&mut payload, &index.targets);
    }
    container::write(path, MAGIC, &manifest, &payload)
}

pub(super) fn read(path: &Path) -> Result<KnowledgeGraph> {
    let (m, payload): (Manifest, _) = container::read(path, MAGIC)?;
    if m.entities.len() != m.num_entities || m.relations.len() != m.num_relations {
        return Err(Error::Shape("vocabulary size disagrees with manifest counts".into()));
    }
    let mut cur = Cursor::new(&payload);
    let mut splits: [Vec<Triple>; 3] = Default::default();
    for (split, &n) in splits.iter_mut().zip(&m.split_sizes) {
        *split = cur.u32s(3 * n)?.chunks_exact(3).map(|c| Triple::new(c[0], c[1], c[2])).collect();
    }
    let keys = m.num_entities * m.num_relations;
    let mut read_index = |edges: usize| -> Result<AdjacencyIndex> {
        let offsets = cur.u32s(keys + 1)?;
        let targets = cur.u32s(edges)?;
        if offsets.last().copied() != Some(edges as u32) {
            return Err(Error::Shape("index offsets disagree with edge count".into()));
        }
        Ok(AdjacencyIndex { num_relations: m.num_relations, offsets, targets })
    };
    let train_index = read_index(m.index_sizes[0])?;
    let all_index = read_index(m.index_sizes[1])?;
    cur.finish()?;
    let kg = KnowledgeGraph {
        entities: Vocab::from_names(m.entities)?,
        relations: Vocab::from_names(m.relations)?,
        num_base_relations: m.num_base_relations,
        has_reciprocals: m.has_reciprocals,
        splits,
        train_index,
        all_index,
    };
    kg.check_bounds()?;
    Ok(kg)
}
