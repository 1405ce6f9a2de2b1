//! File formats: JSON trajectories, funnels and Monte Carlo reports, the
//! TOML run configuration, and plot-facing CSV series.
//!
//! Every JSON file carries a `schema_version` string; loaders reject any
//! other version. Floats are written with 17 significant digits, so a
//! save/load/save cycle is byte-identical.

mod config;
mod csv;
mod json;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{systems, ExternalSystem, MatrixSpec, RunConfig, SystemBuilder, Weights};
pub use csv::{write_rho_series, write_samples, write_vdot_slice, VdotSlice};
pub use json::{
    load_funnel, load_mc_report, load_trajectory, save_funnel, save_mc_report, save_trajectory, to_canonical_json,
    FUNNEL_SCHEMA, MC_SCHEMA, TRAJECTORY_SCHEMA,
};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: line {line}, column {column}, at `{field}`: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("{}: `{field}`: {message}", path.display())]
    Schema {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("{}: unsupported schema version '{found}' (expected '{expected}')", path.display())]
    Version {
        path: PathBuf,
        found: String,
        expected: &'static str,
    },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn schema(path: &Path, field: impl Into<String>, message: impl Into<String>) -> Self {
        IoError::Schema {
            path: path.to_path_buf(),
            field: field.into(),
            message: message.into(),
        }
    }
}

fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

/// Writes via a sibling temporary file so readers never see a partial file.
fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| IoError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| IoError::io(path, e))
}
