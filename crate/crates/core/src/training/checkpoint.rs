//! Checkpoints: a directory holding `manifest.json` (network and training
//! configuration, epoch, loss history, tensor layout) and `params.stcl`
//! (parameters followed by the ADAM moments, stored as 64-bit floats so a
//! reload is bit-exact).

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use super::{AdamConfig, OptimizerState, TrainConfig};
use crate::error::{Error, Result};
use crate::format::{self, Payload};
use crate::network::{NetworkConfig, NetworkParams};

pub const MANIFEST: &str = "manifest.json";
pub const PARAMS: &str = "params.stcl";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub train: Option<TrainConfig>,
    pub epoch: usize,
    pub history: Vec<f64>,
    pub params: NetworkParams,
    pub optimizer: OptimizerState,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    network: NetworkConfig,
    train: Option<TrainConfig>,
    epoch: usize,
    history: Vec<f64>,
    adam: AdamConfig,
    step: u64,
    tensor_lengths: Vec<usize>,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let lengths: Vec<usize> = self.params.tensors().iter().map(|t| t.len()).collect();
        let manifest = Manifest {
            network: self.network.clone(),
            train: self.train.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            adam: self.optimizer.hyper,
            step: self.optimizer.step,
            tensor_lengths: lengths,
        };
        let json = format::to_sorted_json(&manifest)?;
        let mpath = dir.join(MANIFEST);
        std::fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))?;

        let mut flat = Vec::with_capacity(3 * self.params.num_params());
        for p in [&self.params, &self.optimizer.m, &self.optimizer.v] {
            for t in p.tensors() {
                flat.extend_from_slice(t);
            }
        }
        let mut meta = Map::new();
        meta.insert("kind".into(), "checkpoint".into());
        meta.insert("sections".into(), serde_json::json!(["params", "adam_m", "adam_v"]));
        let n = flat.len();
        format::write_file(&dir.join(PARAMS), &meta, &[n], &Payload::F64(flat))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(0, format!("{}: {e}", mpath.display())))?;
        manifest.network.validate()?;
        let container = format::read_file(&dir.join(PARAMS))?;
        let Payload::F64(flat) = container.payload else {
            return Err(Error::format(0, "checkpoint payload must be f64"));
        };

        let template = NetworkParams::init(&manifest.network, &mut ChaCha8Rng::seed_from_u64(0))?;
        let lengths: Vec<usize> = template.tensors().iter().map(|t| t.len()).collect();
        if lengths != manifest.tensor_lengths {
            return Err(Error::Config(
                "checkpoint tensor layout does not match its network configuration".into(),
            ));
        }
        let per = template.num_params();
        if flat.len() != 3 * per {
            return Err(Error::format(
                0,
                format!("checkpoint holds {} values, expected {}", flat.len(), 3 * per),
            ));
        }
        let mut sections = flat.chunks_exact(per).map(|chunk| {
            let mut p = template.clone();
            let mut off = 0;
            for t in p.tensors_mut() {
                t.copy_from_slice(&chunk[off..off + t.len()]);
                off += t.len();
            }
            p
        });
        let params = sections.next().expect("params");
        let m = sections.next().expect("m");
        let v = sections.next().expect("v");
        Ok(Self {
            network: manifest.network,
            train: manifest.train,
            epoch: manifest.epoch,
            history: manifest.history,
            params,
            optimizer: OptimizerState {
                hyper: manifest.adam,
                step: manifest.step,
                m,
                v,
            },
        })
    }
}
