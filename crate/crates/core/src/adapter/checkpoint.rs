use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdapterConfig, AdapterParams, Conditioning};
use crate::container::{self, Cursor};
use crate::error::{Error, Result};

const MAGIC: &str = "KGCAL-ADAPTER";

#[derive(Serialize, Deserialize)]
struct Manifest {
    model: String,
    dtype: String,
    conditioning: Conditioning,
    psi_layers: usize,
    hidden: usize,
    monotone: bool,
    lp_dim: usize,
    num_params: usize,
    seed: u64,
}

pub fn save_adapter(a: &AdapterParams, path: &Path) -> Result<()> {
    let manifest = Manifest {
        model: "affine-psi".into(),
        dtype: "f64-le".into(),
        conditioning: a.conditioning,
        psi_layers: a.layers,
        hidden: a.hidden,
        monotone: a.monotone,
        lp_dim: a.lp_dim,
        num_params: a.num_params(),
        seed: a.seed,
    };
    let mut payload = Vec::with_capacity(a.weights.len() * 8);
    for w in &a.weights {
        payload.extend_from_slice(&w.to_le_bytes());
    }
    container::write(path, MAGIC, &manifest, &payload)
}

pub fn load_adapter(path: &Path) -> Result<AdapterParams> {
    let (m, payload): (Manifest, _) = container::read(path, MAGIC)?;
    if m.dtype != "f64-le" {
        return Err(Error::Format(format!("unsupported dtype `{}`", m.dtype)));
    }
    let config = AdapterConfig {
        conditioning: m.conditioning,
        layers: m.psi_layers,
        hidden: (m.psi_layers == 2).then_some(m.hidden),
        monotone: m.monotone,
        seed: m.seed,
    };
    if payload.len() != m.num_params * 8 {
        return Err(Error::Shape(format!("manifest lists {} weights, payload holds {} bytes", m.num_params, payload.len())));
    }
    let mut cur = Cursor::new(&payload);
    let weights = cur.f64s(m.num_params)?;
    cur.finish()?;
    AdapterParams::from_parts(config, m.lp_dim, weights)
}
