use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::engine::Checkpoint;
use crate::aggregate::{AggWeights, Granularity, KpMatrix};
use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// Sidecar describing a checkpointed parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub round: usize,
    pub strategy: String,
    pub val_score: f64,
    /// `[K, P]`, or absent without aggregation weights.
    pub alpha_shape: Option<[usize; 2]>,
    /// Column-major.
    pub alpha: Option<Vec<f64>>,
}

pub fn checkpoint_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{name}.fapv")),
        dir.join(format!("{name}.manifest.toml")),
    )
}

/// Writes `<name>.fapv` (parameter vector bytes) and `<name>.manifest.toml`.
pub fn save_checkpoint(dir: &Path, name: &str, strategy: &str, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (params_path, manifest_path) = checkpoint_paths(dir, name);
    fs::write(&params_path, ckpt.params.to_bytes()).map_err(|e| Error::io(&params_path, e))?;
    let manifest = Manifest {
        round: ckpt.round,
        strategy: strategy.to_string(),
        val_score: ckpt.val_score,
        alpha_shape: ckpt.alpha.as_ref().map(|a| [a.clients(), a.groups()]),
        alpha: ckpt.alpha.as_ref().map(|a| a.values().as_slice().to_vec()),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::config(e.to_string()))?;
    fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
}

pub fn load_checkpoint(dir: &Path, name: &str) -> Result<(Manifest, Checkpoint)> {
    let (params_path, manifest_path) = checkpoint_paths(dir, name);
    let bytes = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    let params = ParamVector::from_bytes(&bytes).map_err(|e| Error::Format {
        path: params_path.clone(),
        reason: e.to_string(),
    })?;
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Format {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    let alpha = match (&manifest.alpha_shape, &manifest.alpha) {
        (Some([k, p]), Some(v)) => {
            let g = if *p == 1 {
                Granularity::Network
            } else {
                Granularity::Layer
            };
            Some(AggWeights::new(
                KpMatrix::from_col_major(*k, *p, v.clone())?,
                g,
            )?)
        }
        _ => None,
    };
    let ckpt = Checkpoint {
        round: manifest.round,
        params,
        val_score: manifest.val_score,
        alpha,
    };
    Ok((manifest, ckpt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layout;

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let params =
            ParamVector::new(vec![1.5, -2.0, 0.25], Layout::from_lengths([("dense0", 3)])).unwrap();
        let ckpt = Checkpoint {
            round: 7,
            params,
            val_score: 0.8125,
            alpha: Some(
                AggWeights::new(
                    KpMatrix::from_columns(&[vec![0.5, 0.25, 0.25]]).unwrap(),
                    Granularity::Network,
                )
                .unwrap(),
            ),
        };
        save_checkpoint(dir.path(), "global", "fedavg_sized", &ckpt).unwrap();
        let (manifest, back) = load_checkpoint(dir.path(), "global").unwrap();
        assert_eq!(manifest.strategy, "fedavg_sized");
        assert_eq!(back, ckpt);
    }
}
