use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingTable, Normalization};
use crate::container::{self, Cursor};
use crate::error::{Error, Result};

const MAGIC: &str = "KGCAL-LP";

#[derive(Serialize, Deserialize)]
struct Manifest {
    model: String,
    dtype: String,
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    seed: u64,
    normalization: Normalization,
}

/// Writes a manifest followed by little-endian f32 rows: entities, then
/// relations.
pub fn save_checkpoint(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let manifest = Manifest {
        model: "complex-n3".into(),
        dtype: "f32-le".into(),
        dim: table.dim(),
        num_entities: table.num_entities(),
        num_relations: table.num_relations(),
        seed: table.seed,
        normalization: table.normalization,
    };
    let mut payload = Vec::with_capacity(table.num_params() * 4);
    container::push_f32s(&mut payload, table.entity_block().iter().chain(table.relation_block()).copied());
    container::write(path, MAGIC, &manifest, &payload)
}

pub fn load_checkpoint(path: &Path) -> Result<EmbeddingTable> {
    let (m, payload): (Manifest, _) = container::read(path, MAGIC)?;
    if m.dtype != "f32-le" {
        return Err(Error::Format(format!("unsupported dtype `{}`", m.dtype)));
    }
    let (ne, nr) = (m.num_entities * 2 * m.dim, m.num_relations * 2 * m.dim);
    if payload.len() != (ne + nr) * 4 {
        return Err(Error::Shape(format!(
            "manifest describes {} values, payload holds {} bytes",
            ne + nr,
            payload.len()
        )));
    }
    let mut cur = Cursor::new(&payload);
    let entities = cur.f32s(ne)?;
    let relations = cur.f32s(nr)?;
    cur.finish()?;
    EmbeddingTable::from_parts(m.dim, entities, relations, m.seed, m.normalization)
}
