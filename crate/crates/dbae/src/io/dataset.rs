//! Dataset loading and saving.
//!
//! A dataset is a `n x d` matrix stored either in the binary tensor
//! container or as numeric CSV; the loader sniffs the magic bytes and
//! picks the decoder. Labels, when present, live in a sibling file
//! whose name inserts `.labels` before the extension
//! (`moons.dbt` pairs with `moons.labels.dbt`).

use super::csvio::read_matrix_csv;
use super::tensor_file::{self, MAGIC};
use crate::nn::Tensor;
use crate::{Error, Result};
use std::path::{Path, PathBuf};

/// Path of the label file paired with a data file.
pub fn labels_path(data_path: &Path) -> PathBuf {
    match (data_path.file_stem(), data_path.extension()) {
        (Some(stem), Some(ext)) => data_path.with_file_name(format!(
            "{}.labels.{}",
            stem.to_string_lossy(),
            ext.to_string_lossy()
        )),
        _ => {
            let mut name = data_path.as_os_str().to_os_string();
            name.push(".labels");
            PathBuf::from(name)
        }
    }
}

/// Loads a data matrix and, when the sibling file exists, its labels.
pub fn load_dataset(path: &Path) -> Result<(Tensor<f64>, Option<Tensor<f64>>)> {
    let data = load_matrix_any(path)?;
    let lp = labels_path(path);
    let labels = if lp.exists() {
        let l = load_matrix_any(&lp)?;
        if l.rows != data.rows {
            return Err(Error::Data(format!(
                "label file {} has {} rows, data has {}",
                lp.display(),
                l.rows,
                data.rows
            )));
        }
        Some(l)
    } else {
        None
    };
    Ok((data, labels))
}

/// Saves a dataset in the binary container, labels in the sibling file.
pub fn save_dataset(path: &Path, data: &Tensor<f64>, labels: Option<&Tensor<f64>>) -> Result<()> {
    tensor_file::save_matrix_f64(path, data)?;
    if let Some(l) = labels {
        if l.rows != data.rows {
            return Err(Error::Shape(format!(
                "labels have {} rows, data has {}",
                l.rows, data.rows
            )));
        }
        tensor_file::save_matrix_f64(&labels_path(path), l)?;
    }
    Ok(())
}

fn load_matrix_any(path: &Path) -> Result<Tensor<f64>> {
    let mut head = [0u8; 4];
    {
        use std::io::Read;
        let mut f = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("dataset {}: {e}", path.display())))?;
        let n = f.read(&mut head)?;
        if n < 4 {
            return Err(Error::Data(format!(
                "dataset {} is too short to identify",
                path.display()
            )));
        }
    }
    if head == MAGIC {
        tensor_file::load_matrix(path)
    } else {
        read_matrix_csv(path)
    }
}
