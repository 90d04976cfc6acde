//! Checkpoint files: a versioned JSON dump of every parameter array with
//! shape headers plus the architecture dimensions. The loader rebuilds
//! the model skeleton and validates every shape against it.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::baselines::{LinearBackmap, MlpBackmap};
use crate::error::{Error, Result};
use crate::model::{CgvaeModel, ModelDims};
use crate::nn::Params;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    dims: Option<ModelDims>,
    num_atoms: usize,
    num_beads: usize,
    params: BTreeMap<String, ParamEntry>,
}

/// Any trained backmapping model the CLI can save, load, and evaluate.
#[derive(Clone)]
pub enum TrainedModel {
    Cgvae(CgvaeModel),
    Linear(LinearBackmap),
    Mlp(MlpBackmap),
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainedModel::Cgvae(_) => "cgvae",
            TrainedModel::Linear(_) => "linear",
            TrainedModel::Mlp(_) => "mlp",
        }
    }

    /// Deterministic models report zero generation diversity by definition.
    pub fn deterministic(&self) -> bool {
        !matches!(self, TrainedModel::Cgvae(_))
    }
}

fn dump<P: Params>(p: &P) -> BTreeMap<String, ParamEntry> {
    let mut map = BTreeMap::new();
    p.for_each("", &mut |name, t| {
        map.insert(
            name.to_string(),
            ParamEntry {
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            },
        );
    });
    map
}

fn fill<P: Params>(p: &mut P, entries: &BTreeMap<String, ParamEntry>) -> Result<()> {
    let mut missing = Vec::new();
    let mut used = 0usize;
    let mut shape_err: Option<String> = None;
    p.for_each_mut("", &mut |name, t| {
        match entries.get(name) {
            Some(e) => {
                used += 1;
                if e.shape != t.shape() {
                    shape_err.get_or_insert(format!(
                        "parameter '{}' has shape {:?} in the file but the model expects {:?}",
                        name,
                        e.shape,
                        t.shape()
                    ));
                } else if let Ok(nt) = Tensor::new(e.data.clone(), &e.shape) {
                    *t = nt;
                }
            }
            None => missing.push(name.to_string()),
        }
    });
    if let Some(msg) = shape_err {
        return Err(Error::Config(msg));
    }
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "checkpoint is missing parameters: {}",
            missing.join(", ")
        )));
    }
    if used != entries.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} extra parameter entries",
            entries.len() - used
        )));
    }
    Ok(())
}

pub fn save(model: &TrainedModel, num_atoms: usize, num_beads: usize, path: &Path) -> Result<()> {
    let file = match model {
        TrainedModel::Cgvae(m) => CheckpointFile {
            format_version: FORMAT_VERSION,
            kind: "cgvae".to_string(),
            dims: Some(m.dims),
            num_atoms,
            num_beads,
            params: dump(m),
        },
        TrainedModel::Linear(m) => CheckpointFile {
            format_version: FORMAT_VERSION,
            kind: "linear".to_string(),
            dims: None,
            num_atoms,
            num_beads,
            params: dump(m),
        },
        TrainedModel::Mlp(m) => CheckpointFile {
            format_version: FORMAT_VERSION,
            kind: "mlp".to_string(),
            dims: None,
            num_atoms,
            num_beads,
            params: dump(m),
        },
    };
    let json = serde_json::to_string(&file)?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Load any model kind; returns the model plus the (atoms, beads) sizes
/// it was trained for.
pub fn load(path: &Path) -> Result<(TrainedModel, usize, usize)> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint format version {}",
            file.format_version
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = match file.kind.as_str() {
        "cgvae" => {
            let dims = file
                .dims
                .ok_or_else(|| Error::Config("cgvae checkpoint lacks dims".to_string()))?;
            let mut m = CgvaeModel::init(dims, &mut rng);
            fill(&mut m, &file.params)?;
            TrainedModel::Cgvae(m)
        }
        "linear" => {
            let mut m = LinearBackmap::zeros(file.num_atoms, file.num_beads);
            fill(&mut m, &file.params)?;
            TrainedModel::Linear(m)
        }
        "mlp" => {
            let mut m = MlpBackmap::init(&mut rng, file.num_atoms, file.num_beads);
            fill(&mut m, &file.params)?;
            TrainedModel::Mlp(m)
        }
        other => {
            return Err(Error::Config(format!("unknown model kind '{}'", other)));
        }
    };
    Ok((model, file.num_atoms, file.num_beads))
}
