//! Dataset container and on-disk format.
//!
//! A dataset directory holds a JSON manifest plus one flat binary file per
//! array, all float64 little-endian row-major, so any language with a float
//! reader can consume it. Regenerating with the same config and seed
//! reproduces every byte.

use ndarray::{Array2, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::Error;
use crate::sim::{simulate_sample, Phase, WorldConfig};

pub const DATASET_FORMAT: &str = "trajgraph-dataset";
pub const DTYPE: &str = "float64 little-endian row-major";
/// Stored in `change_steps` for samples whose structure never switches
/// inside the window.
pub const CHANGE_SENTINEL: i64 = -1;

/// Edge label values: 1 = "with link" (rigid phase), 0 = "without link".
pub const LABEL_WITH_LINK: u8 = 1;
pub const LABEL_WITHOUT_LINK: u8 = 0;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `[B, T, N, 2]` with `T = history_len + future_len`.
    pub positions: Array4<f64>,
    /// `[B, N]` agent category indices.
    pub categories: Array2<usize>,
    /// `[B, T, N, N]` directed labels; diagonal unused (zero).
    pub edge_labels: Array4<u8>,
    /// `[B]`; first step of the free phase, or [`CHANGE_SENTINEL`].
    pub change_steps: Vec<i64>,
    pub history_len: usize,
    pub future_len: usize,
    pub generator: WorldConfig,
    pub seed: u64,
}

impl Dataset {
    pub fn num_samples(&self) -> usize {
        self.positions.dim().0
    }

    pub fn total_steps(&self) -> usize {
        self.positions.dim().1
    }

    pub fn num_agents(&self) -> usize {
        self.positions.dim().2
    }

    /// True when the structure switches inside the prediction window
    /// `[history_len, T)`. Samples that never switch, or that switched
    /// already during the observed history, count as "no change".
    pub fn is_change_sample(&self, idx: usize) -> bool {
        let s = self.change_steps[idx];
        s >= self.history_len as i64 && (s as usize) < self.total_steps()
    }

    /// 65/10/25 train/validation/test split by sample index.
    pub fn split(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>, std::ops::Range<usize>) {
        let b = self.num_samples();
        let train_end = b * 65 / 100;
        let val_end = b * 75 / 100;
        (0..train_end, train_end..val_end, val_end..b)
    }
}

/// Simulates `num_samples` independent worlds and slices the first
/// `history_len + future_len` steps of each.
pub fn generate_dataset(
    config: &WorldConfig,
    num_samples: usize,
    history_len: usize,
    future_len: usize,
) -> Result<Dataset, Error> {
    let violations = config.validate();
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let t = history_len + future_len;
    if config.total_steps < t {
        return Err(Error::Config(vec![format!(
            "total_steps {} shorter than history + future = {}",
            config.total_steps, t
        )]));
    }
    let n = config.n_particles;

    // Each sample draws from its own RNG stream, so chunked parallel
    // generation is byte-identical to a serial loop.
    let trajectories: Vec<_> =
        (0..num_samples).into_par_iter().map(|idx| simulate_sample(config, idx, t)).collect();

    let mut positions = Array4::zeros((num_samples, t, n, 2));
    let mut edge_labels = Array4::zeros((num_samples, t, n, n));
    let mut change_steps = Vec::with_capacity(num_samples);
    for (b, traj) in trajectories.iter().enumerate() {
        positions.slice_mut(ndarray::s![b, .., .., ..]).assign(&traj.positions);
        for (step, &phase) in traj.phases.iter().enumerate() {
            if phase == Phase::Rigid {
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            edge_labels[[b, step, i, j]] = LABEL_WITH_LINK;
                        }
                    }
                }
            }
        }
        change_steps.push(traj.change_step.map_or(CHANGE_SENTINEL, |s| s as i64));
    }

    Ok(Dataset {
        positions,
        categories: Array2::zeros((num_samples, n)),
        edge_labels,
        change_steps,
        history_len,
        future_len,
        generator: config.clone(),
        seed: config.seed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldDesc {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub num_samples: usize,
    pub num_agents: usize,
    pub total_steps: usize,
    pub history_len: usize,
    pub future_len: usize,
    pub change_sentinel: i64,
    pub fields: Vec<FieldDesc>,
    pub generator: WorldConfig,
    pub seed: u64,
}

fn write_f64_file(path: &Path, values: impl Iterator<Item = f64>) -> Result<(), Error> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_f64_file(path: &Path, expect_len: usize) -> Result<Vec<f64>, Error> {
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

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    let (b, t, n, _) = dataset.positions.dim();
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: 1,
        dtype: DTYPE.into(),
        num_samples: b,
        num_agents: n,
        total_steps: t,
        history_len: dataset.history_len,
        future_len: dataset.future_len,
        change_sentinel: CHANGE_SENTINEL,
        fields: vec![
            FieldDesc { name: "positions".into(), shape: vec![b, t, n, 2], file: "positions.bin".into() },
            FieldDesc { name: "categories".into(), shape: vec![b, n], file: "categories.bin".into() },
            FieldDesc { name: "edge_labels".into(), shape: vec![b, t, n, n], file: "edge_labels.bin".into() },
            FieldDesc { name: "change_steps".into(), shape: vec![b], file: "change_steps.bin".into() },
        ],
        generator: dataset.generator.clone(),
        seed: dataset.seed,
    };
    let manifest_text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), manifest_text.as_bytes())?;
    write_f64_file(&dir.join("positions.bin"), dataset.positions.iter().copied())?;
    write_f64_file(&dir.join("categories.bin"), dataset.categories.iter().map(|&c| c as f64))?;
    write_f64_file(&dir.join("edge_labels.bin"), dataset.edge_labels.iter().map(|&l| l as f64))?;
    write_f64_file(&dir.join("change_steps.bin"), dataset.change_steps.iter().map(|&s| s as f64))?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, Error> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("cannot parse {}: {e}", path.display())))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::Data(format!(
            "{}: format is {:?}, expected {:?}",
            path.display(),
            manifest.format,
            DATASET_FORMAT
        )));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::Data(format!(
            "{}: dtype is {:?}, expected {:?}",
            path.display(),
            manifest.dtype,
            DTYPE
        )));
    }
    Ok(manifest)
}

fn field<'m>(manifest: &'m DatasetManifest, name: &str) -> Result<&'m FieldDesc, Error> {
    manifest
        .fields
        .iter()
        .find(|f| f.name == name)
        .ok_or_else(|| Error::Data(format!("manifest is missing field {name:?}")))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, Error> {
    let manifest = load_manifest(dir)?;
    let (b, t, n) = (manifest.num_samples, manifest.total_steps, manifest.num_agents);
    if manifest.history_len + manifest.future_len != t {
        return Err(Error::Data(format!(
            "manifest history_len {} + future_len {} != total_steps {}",
            manifest.history_len, manifest.future_len, t
        )));
    }

    let check_shape = |f: &FieldDesc, expect: &[usize]| -> Result<(), Error> {
        if f.shape != expect {
            return Err(Error::Data(format!(
                "field {:?} has shape {:?}, expected {:?}",
                f.name, f.shape, expect
            )));
        }
        Ok(())
    };

    let pos_f = field(&manifest, "positions")?;
    check_shape(pos_f, &[b, t, n, 2])?;
    let cat_f = field(&manifest, "categories")?;
    check_shape(cat_f, &[b, n])?;
    let lab_f = field(&manifest, "edge_labels")?;
    check_shape(lab_f, &[b, t, n, n])?;
    let chg_f = field(&manifest, "change_steps")?;
    check_shape(chg_f, &[b])?;

    let pos = read_f64_file(&dir.join(&pos_f.file), b * t * n * 2)?;
    let positions = Array4::from_shape_vec((b, t, n, 2), pos).expect("size checked");

    let cat = read_f64_file(&dir.join(&cat_f.file), b * n)?;
    let mut categories = Array2::zeros((b, n));
    for (i, &v) in cat.iter().enumerate() {
        if v < 0.0 || v.fract() != 0.0 {
            return Err(Error::Data(format!(
                "categories.bin entry {i} is {v}, expected a non-negative integer"
            )));
        }
        categories[[i / n, i % n]] = v as usize;
    }

    let lab = read_f64_file(&dir.join(&lab_f.file), b * t * n * n)?;
    let mut edge_labels = Array4::zeros((b, t, n, n));
    for (i, &v) in lab.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::Data(format!("edge_labels.bin entry {i} is {v}, expected 0 or 1")));
        }
        let rest = i;
        let jj = rest % n;
        let ii = (rest / n) % n;
        let tt = (rest / (n * n)) % t;
        let bb = rest / (n * n * t);
        edge_labels[[bb, tt, ii, jj]] = v as u8;
    }

    let chg = read_f64_file(&dir.join(&chg_f.file), b)?;
    let mut change_steps = Vec::with_capacity(b);
    for (i, &v) in chg.iter().enumerate() {
        if v.fract() != 0.0 {
            return Err(Error::Data(format!("change_steps.bin entry {i} is {v}, expected an integer")));
        }
        let s = v as i64;
        if s != CHANGE_SENTINEL && (s < 0 || s >= t as i64) {
            return Err(Error::Data(format!(
                "change_steps.bin entry {i} is {s}, expected {CHANGE_SENTINEL} or a step in [0, {t})"
            )));
        }
        change_steps.push(s);
    }

    Ok(Dataset {
        positions,
        categories,
        edge_labels,
        change_steps,
        history_len: manifest.history_len,
        future_len: manifest.future_len,
        generator: manifest.generator.clone(),
        seed: manifest.seed,
    })
}

/// Validates a dataset directory without materializing the arrays beyond the
/// checks `load_dataset` performs. Returns a short human-readable summary.
pub fn validate_dataset_dir(dir: &Path) -> Result<String, Error> {
    let ds = load_dataset(dir)?;
    let changes = (0..ds.num_samples()).filter(|&i| ds.is_change_sample(i)).count();
    Ok(format!(
        "ok: {} samples, {} agents, {} steps ({} history + {} future), {} change / {} no-change",
        ds.num_samples(),
        ds.num_agents(),
        ds.total_steps(),
        ds.history_len,
        ds.future_len,
        changes,
        ds.num_samples() - changes
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(seed: u64) -> WorldConfig {
        WorldConfig { n_particles: 3, total_steps: 12, ..WorldConfig::desk(seed) }
    }

    #[test]
    fn generation_records_single_flip_labels() {
        let ds = generate_dataset(&tiny_config(3), 40, 4, 8).unwrap();
        assert_eq!(ds.positions.dim(), (40, 12, 3, 2));
        for b in 0..40 {
            let s = ds.change_steps[b];
            for t in 0..12 {
                let expect = if s != CHANGE_SENTINEL && t as i64 >= s { 0 } else { 1 };
                for i in 0..3 {
                    for j in 0..3 {
                        let want = if i == j { 0 } else { expect };
                        assert_eq!(ds.edge_labels[[b, t, i, j]], want, "b={b} t={t}");
                    }
                }
            }
        }
    }

    #[test]
    fn change_split_uses_prediction_window_only() {
        let ds = generate_dataset(&WorldConfig::desk(17), 300, 20, 50).unwrap();
        let mut in_history = 0;
        let mut in_prediction = 0;
        let mut never = 0;
        for b in 0..300 {
            match ds.change_steps[b] {
                CHANGE_SENTINEL => {
                    never += 1;
                    assert!(!ds.is_change_sample(b));
                }
                s if (s as usize) < 20 => {
                    in_history += 1;
                    assert!(!ds.is_change_sample(b), "switch during history is not a change sample");
                }
                _ => {
                    in_prediction += 1;
                    assert!(ds.is_change_sample(b));
                }
            }
        }
        // The default ranges must exercise all three regimes.
        assert!(in_history > 15, "switch-in-history count {in_history}");
        assert!(in_prediction > 30, "switch-in-prediction count {in_prediction}");
        assert!(never > 15, "no-switch count {never}");
    }

    #[test]
    fn too_short_world_rejected() {
        let err = generate_dataset(&tiny_config(1), 4, 10, 10).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn save_load_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a_dir = dir.path().join("a");
        let b_dir = dir.path().join("b");
        let ds = generate_dataset(&tiny_config(9), 25, 4, 8).unwrap();
        save_dataset(&ds, &a_dir).unwrap();
        let loaded = load_dataset(&a_dir).unwrap();
        save_dataset(&loaded, &b_dir).unwrap();
        for file in ["manifest.json", "positions.bin", "categories.bin", "edge_labels.bin", "change_steps.bin"] {
            let a = std::fs::read(a_dir.join(file)).unwrap();
            let b = std::fs::read(b_dir.join(file)).unwrap();
            assert_eq!(a, b, "{file} differs after round trip");
        }
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a_dir = dir.path().join("a");
        let b_dir = dir.path().join("b");
        save_dataset(&generate_dataset(&tiny_config(2), 30, 4, 8).unwrap(), &a_dir).unwrap();
        save_dataset(&generate_dataset(&tiny_config(2), 30, 4, 8).unwrap(), &b_dir).unwrap();
        for file in ["manifest.json", "positions.bin"] {
            assert_eq!(
                std::fs::read(a_dir.join(file)).unwrap(),
                std::fs::read(b_dir.join(file)).unwrap()
            );
        }
    }

    #[test]
    fn corrupted_labels_rejected_with_precise_message() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&tiny_config(4), 6, 4, 8).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        // Overwrite one label with a non-binary value.
        let path = dir.path().join("edge_labels.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..16].copy_from_slice(&2.5f64.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("edge_labels.bin entry 1"), "{msg}");
        assert!(msg.contains("expected 0 or 1"), "{msg}");
    }

    #[test]
    fn truncated_file_rejected_with_size_message() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&tiny_config(4), 6, 4, 8).unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("positions.bin");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        let msg = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("positions.bin"), "{msg}");
        assert!(msg.contains("expected"), "{msg}");
    }

    #[test]
    fn split_is_65_10_25() {
        let ds = generate_dataset(&tiny_config(8), 100, 4, 8).unwrap();
        let (train, val, test) = ds.split();
        assert_eq!(train, 0..65);
        assert_eq!(val, 65..75);
        assert_eq!(test, 75..100);
    }
}
