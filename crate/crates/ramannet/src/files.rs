use std::path::Path;

use ramannet_core::data::LabeledDataset;
use ramannet_core::model::Checkpoint;
use ramannet_core::preprocess::GridSpec;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::io::{read_matrix, write_atomically, MatrixFile};

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = checkpoint.encode();
    write_atomically(path, |out| out.write_all(&bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::decode(&bytes).map_err(|e| CliError::core_in(path.display(), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomically(path, |out| out.write_all(&text))
}

/// One JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let mut text = Vec::new();
    for v in values {
        serde_json::to_writer(&mut text, v)?;
        text.push(b'\n');
    }
    write_atomically(path, |out| out.write_all(&text))
}

/// Axis metadata for a matrix file whose header is an increasing grid.
fn axis_of(shifts: &[f64]) -> Option<GridSpec> {
    let (&lo, &hi) = (shifts.first()?, shifts.last()?);
    GridSpec::new(lo, hi, shifts.len()).ok()
}

/// Load an aligned matrix-form dataset. With `class_names`, labels are mapped
/// through that table (as stored in a checkpoint) and classes may be absent.
pub fn load_dataset(path: &Path, class_names: Option<&[String]>) -> Result<(LabeledDataset, MatrixFile)> {
    let file = read_matrix(path)?;
    let axis = axis_of(&file.shifts);
    let ds = match class_names {
        Some(table) => LabeledDataset::with_class_table(file.features.clone(), &file.labels, table, axis),
        None => LabeledDataset::from_named(file.features.clone(), &file.labels, axis),
    }
    .map_err(|e| CliError::core_in(path.display(), e))?;
    Ok((ds, file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ramannet_core::model::{ModelConfig, RamanNet};
    use ramannet_core::rng::rng_from_seed;

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut cfg = ModelConfig::new(120, 3);
        cfg.summary_units = 16;
        cfg.embed_units = 8;
        let model = RamanNet::new(cfg, &mut rng_from_seed(3)).unwrap();
        let ck = Checkpoint {
            model,
            class_names: vec!["a".into(), "b".into(), "c".into()],
        };
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.encode(), ck.encode());
    }

    #[test]
    fn corrupt_checkpoint_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPT").unwrap();
        assert_eq!(load_checkpoint(&path).unwrap_err().kind(), "checkpoint");
    }
}
