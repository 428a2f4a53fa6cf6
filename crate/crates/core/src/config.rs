//! Run parameters read from a `key = value` file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

/// Every key is optional; command-line flags take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub dataset_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub bucket_len: Option<i64>,
    pub d: Option<f64>,
    pub smoothing_window: Option<usize>,
    pub min_overlap: Option<usize>,
    pub t_fr: Option<f64>,
    pub t_ir: Option<f64>,
    pub p_b: Option<f64>,
    pub n_cr: Option<f64>,
    pub tau_visit: Option<f64>,
    pub p_st: Option<f64>,
    pub lambda: Option<f64>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
