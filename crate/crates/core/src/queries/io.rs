//! Query files: one JSON object per line,
//! `{"type": "2in", "query": "?T : ...", "easy": [...], "hard": [...]}`,
//! with answers given as entity names.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_query, serialize_query, LabeledQuery, QueryType};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(rename = "type")]
    pub query_type: QueryType,
    pub query: String,
    pub easy: Vec<String>,
    pub hard: Vec<String>,
}

impl QueryRecord {
    pub fn from_labeled(q: &LabeledQuery, kg: &KnowledgeGraph) -> Self {
        let names = |ids: &[EntityId]| ids.iter().map(|&e| kg.entities().name(e).to_owned()).collect();
        Self {
            query_type: q.query_type,
            query: serialize_query(&q.graph, kg.entities(), kg.relations()),
            easy: names(&q.easy),
            hard: names(&q.hard),
        }
    }

    pub fn resolve(&self, kg: &KnowledgeGraph) -> Result<LabeledQuery> {
        let graph = parse_query(&self.query, kg.entities(), kg.relations())?;
        let ids = |names: &[String]| -> Result<Vec<EntityId>> {
            let mut v = names
                .iter()
                .map(|n| kg.entities().id(n).ok_or_else(|| Error::UnknownEntity(n.clone())))
                .collect::<Result<Vec<_>>>()?;
            v.sort_unstable();
            v.dedup();
            Ok(v)
        };
        Ok(LabeledQuery { query_type: self.query_type, graph, easy: ids(&self.easy)?, hard: ids(&self.hard)? })
    }
}

pub fn write_query_file(path: &Path, queries: &[LabeledQuery], kg: &KnowledgeGraph) -> Result<()> {
    let mut out = Vec::new();
    for q in queries {
        serde_json::to_writer(&mut out, &QueryRecord::from_labeled(q, kg))?;
        out.write_all(b"\n")?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_query_file(path: &Path, kg: &KnowledgeGraph) -> Result<Vec<LabeledQuery>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { path: path.to_owned(), line: i + 1, msg };
        let rec: QueryRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        out.push(rec.resolve(kg).map_err(|e| parse_err(e.to_string()))?);
    }
    Ok(out)
}
