//! Checkpoint directory format and optimizer-state sidecar.
//!
//! Layout mirrors the dataset format: `manifest.json` describing the run and
//! each parameter (name, shape, scalar offset), plus `params.bin` holding all
//! parameters concatenated in declaration order as float64 little-endian
//! row-major. `load(save(p))` is bit-identical to `p`.
//!
//! Training may also drop `optimizer.json` + `optimizer.bin` next to a
//! checkpoint so an interrupted run can resume mid-schedule; together with
//! counter-derived RNG streams this makes a resumed epoch reproduce the
//! uninterrupted run exactly.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::params::{declare_parameters, ModelParameters};

pub const CHECKPOINT_FORMAT: &str = "trajgraph-checkpoint";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamDesc {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into `params.bin`, counted in float64 scalars.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    /// Tool identity; deliberately no wall-clock timestamp so paired
    /// deterministic runs produce identical directories.
    pub created_by: String,
    /// One of `static`, `dynamic-single`, `dynamic-double`, `supervised`.
    pub stage: String,
    pub config: ExperimentConfig,
    pub context_dim: Option<usize>,
    pub num_scalars: usize,
    pub params: Vec<ParamDesc>,
}

pub fn save_checkpoint(
    dir: &Path,
    params: &ModelParameters,
    config: &ExperimentConfig,
    context_dim: Option<usize>,
    stage: &str,
) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    let mut descs = Vec::with_capacity(params.len());
    let mut offset = 0;
    for (name, value) in params.iter() {
        let (r, c) = value.dim();
        descs.push(ParamDesc { name: name.to_string(), shape: vec![r, c], offset });
        offset += r * c;
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        dtype: crate::dataset::DTYPE.into(),
        created_by: format!("trajgraph {}", env!("CARGO_PKG_VERSION")),
        stage: stage.into(),
        config: config.clone(),
        context_dim,
        num_scalars: offset,
        params: descs,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), text.as_bytes())?;

    let file = std::fs::File::create(dir.join("params.bin"))?;
    let mut w = BufWriter::new(file);
    for (_, value) in params.iter() {
        for v in value.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest, Error> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("cannot parse {}: {e}", path.display())))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Data(format!(
            "{}: format is {:?}, expected {:?}",
            path.display(),
            manifest.format,
            CHECKPOINT_FORMAT
        )));
    }
    let errors = manifest.config.validate();
    if !errors.is_empty() {
        return Err(Error::Data(format!(
            "{}: embedded config invalid: {}",
            path.display(),
            errors.join("; ")
        )));
    }
    Ok(manifest)
}

/// Loads a checkpoint, checking the manifest's parameter table against the
/// declaration the embedded config implies, entry by entry.
pub fn load_checkpoint(dir: &Path) -> Result<(ModelParameters, CheckpointManifest), Error> {
    let manifest = load_checkpoint_manifest(dir)?;
    let declared = declare_parameters(&manifest.config, manifest.context_dim);
    if declared.len() != manifest.params.len() {
        return Err(Error::Data(format!(
            "checkpoint lists {} parameters, config implies {}",
            manifest.params.len(),
            declared.len()
        )));
    }
    let mut expect_offset = 0;
    for (spec, desc) in declared.iter().zip(&manifest.params) {
        if spec.name != desc.name {
            return Err(Error::Data(format!(
                "checkpoint parameter {:?} where config implies {:?}",
                desc.name, spec.name
            )));
        }
        if desc.shape != [spec.shape.0, spec.shape.1] {
            return Err(Error::Data(format!(
                "parameter {:?} has shape {:?}, config implies [{}, {}]",
                desc.name, desc.shape, spec.shape.0, spec.shape.1
            )));
        }
        if desc.offset != expect_offset {
            return Err(Error::Data(format!(
                "parameter {:?} at offset {}, expected {}",
                desc.name, desc.offset, expect_offset
            )));
        }
        expect_offset += spec.shape.0 * spec.shape.1;
    }
    if manifest.num_scalars != expect_offset {
        return Err(Error::Data(format!(
            "manifest num_scalars {} does not match parameter table total {}",
            manifest.num_scalars, expect_offset
        )));
    }

    let values = read_f64(&dir.join("params.bin"), expect_offset)?;
    let mut params = ModelParameters::new();
    for desc in &manifest.params {
        let len = desc.shape[0] * desc.shape[1];
        let slice = values[desc.offset..desc.offset + len].to_vec();
        let value = Array2::from_shape_vec((desc.shape[0], desc.shape[1]), slice)
            .expect("length checked against shape");
        params.insert(&desc.name, value);
    }
    Ok((params, manifest))
}

pub fn validate_checkpoint_dir(dir: &Path) -> Result<String, Error> {
    let (params, manifest) = load_checkpoint(dir)?;
    Ok(format!(
        "ok: stage {:?}, {} parameters, {} scalars",
        manifest.stage,
        params.len(),
        params.num_scalars()
    ))
}

fn read_f64(path: &Path, expect_len: usize) -> Result<Vec<f64>, Error> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    if bytes.len() != expect_len * 8 {
        return Err(Error::Data(format!(
            "{}: expected {} float64 values ({} bytes), found {} bytes",
            path.display(),
            expect_len,
            expect_len * 8,
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Adam moments plus schedule counters, enough to restart training at the
/// next epoch boundary. RNG streams are derived from (seed, epoch, batch)
/// counters, so no raw generator state needs to be carried.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    /// Next epoch index to run (epochs completed so far).
    pub epoch: usize,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimizerMeta {
    format: String,
    version: u32,
    step: u64,
    epoch: usize,
    best_val_loss: f64,
    best_epoch: usize,
    epochs_since_improvement: usize,
    num_scalars: usize,
}

pub fn save_optimizer_state(dir: &Path, state: &OptimizerState) -> Result<(), Error> {
    let num_scalars: usize = state.m.iter().map(|a| a.len()).sum();
    let meta = OptimizerMeta {
        format: "trajgraph-optimizer".into(),
        version: 1,
        step: state.step,
        epoch: state.epoch,
        best_val_loss: state.best_val_loss,
        best_epoch: state.best_epoch,
        epochs_since_improvement: state.epochs_since_improvement,
        num_scalars,
    };
    std::fs::write(
        dir.join("optimizer.json"),
        serde_json::to_string_pretty(&meta).expect("meta serializes").as_bytes(),
    )?;
    let file = std::fs::File::create(dir.join("optimizer.bin"))?;
    let mut w = BufWriter::new(file);
    for group in [&state.m, &state.v] {
        for arr in group {
            for v in arr.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads optimizer state shaped like `params`; `Ok(None)` when no sidecar
/// exists in the directory.
pub fn load_optimizer_state(
    dir: &Path,
    params: &ModelParameters,
) -> Result<Option<OptimizerState>, Error> {
    let meta_path = dir.join("optimizer.json");
    if !meta_path.exists() {
        return Ok(None);
    }
    let meta: OptimizerMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
        .map_err(|e| Error::Data(format!("cannot parse {}: {e}", meta_path.display())))?;
    if meta.num_scalars != params.num_scalars() {
        return Err(Error::Data(format!(
            "optimizer state covers {} scalars, checkpoint has {}",
            meta.num_scalars,
            params.num_scalars()
        )));
    }
    let values = read_f64(&dir.join("optimizer.bin"), 2 * meta.num_scalars)?;
    let take = |cursor: &mut usize| {
        let mut out = Vec::with_capacity(params.len());
        for (_, value) in params.iter() {
            let len = value.len();
            let arr = Array2::from_shape_vec(value.dim(), values[*cursor..*cursor + len].to_vec())
                .expect("length checked");
            *cursor += len;
            out.push(arr);
        }
        out
    };
    let mut cursor = 0;
    let m = take(&mut cursor);
    let v = take(&mut cursor);
    Ok(Some(OptimizerState {
        step: meta.step,
        epoch: meta.epoch,
        best_val_loss: meta.best_val_loss,
        best_epoch: meta.best_epoch,
        epochs_since_improvement: meta.epochs_since_improvement,
        m,
        v,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_parameters;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig { hidden_dim: 4, ..ExperimentConfig::desk() }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let cfg = tiny_config();
        let params = init_parameters(&cfg, None, 7);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        save_checkpoint(&a, &params, &cfg, None, "static").unwrap();
        let (loaded, manifest) = load_checkpoint(&a).unwrap();
        assert_eq!(manifest.stage, "static");
        for (name, value) in params.iter() {
            let got = loaded.value(loaded.id(name));
            assert_eq!(value.dim(), got.dim());
            for (x, y) in value.iter().zip(got.iter()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{name} not bit-identical");
            }
        }
        save_checkpoint(&b, &loaded, &cfg, None, "static").unwrap();
        for file in ["manifest.json", "params.bin"] {
            assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
        }
    }

    #[test]
    fn tampered_shape_rejected() {
        let cfg = tiny_config();
        let params = init_parameters(&cfg, None, 7);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &params, &cfg, None, "static").unwrap();
        let path = dir.path().join("manifest.json");
        let mut manifest: CheckpointManifest =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        manifest.params[0].shape = vec![3, 3];
        std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
        let msg = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("config implies"), "{msg}");
    }

    #[test]
    fn truncated_params_rejected() {
        let cfg = tiny_config();
        let params = init_parameters(&cfg, None, 7);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &params, &cfg, None, "static").unwrap();
        let path = dir.path().join("params.bin");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        let msg = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("params.bin"), "{msg}");
    }

    #[test]
    fn optimizer_state_round_trips_exactly() {
        let cfg = tiny_config();
        let params = init_parameters(&cfg, None, 7);
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &params, &cfg, None, "static").unwrap();
        assert!(load_optimizer_state(dir.path(), &params).unwrap().is_none());

        let m: Vec<_> = params.iter().map(|(_, v)| v * 0.25 + 1.0).collect();
        let v: Vec<_> = params.iter().map(|(_, v)| v * v).collect();
        let state = OptimizerState {
            step: 4242,
            epoch: 17,
            best_val_loss: -3.25,
            best_epoch: 12,
            epochs_since_improvement: 5,
            m,
            v,
        };
        save_optimizer_state(dir.path(), &state).unwrap();
        let got = load_optimizer_state(dir.path(), &params).unwrap().unwrap();
        assert_eq!(got.step, 4242);
        assert_eq!(got.epoch, 17);
        assert_eq!(got.best_epoch, 12);
        assert_eq!(got.epochs_since_improvement, 5);
        assert_eq!(got.best_val_loss.to_bits(), (-3.25f64).to_bits());
        for (a, b) in state.m.iter().zip(&got.m) {
            assert_eq!(a, b);
        }
        for (a, b) in state.v.iter().zip(&got.v) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn foreign_directory_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("manifest.json"), b"{\"format\":\"something-else\"}").unwrap();
        let msg = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("format") || msg.contains("parse"), "{msg}");
    }
}
