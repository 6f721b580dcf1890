//! Run manifest: a JSON file of defaults that flags can override.
//!
//! Relative paths inside a manifest resolve against the manifest's own
//! directory, so a manifest can travel with its data.

use std::path::{Path, PathBuf};

use gotcha_core::session::ScoreMode;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub catalog: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub context: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<ScoreMode>,
    #[serde(rename = "threshold_T")]
    pub threshold: Option<f64>,
    pub cascade_len: Option<usize>,
    pub timeout_s: Option<f64>,
    pub max_retries: Option<u32>,
    pub n_genuine: Option<usize>,
    pub n_per_pipeline: Option<usize>,
    pub fp_rate: Option<f64>,
    pub beta: Option<f64>,
    pub eta: Option<f64>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid manifest {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        rebase(&mut m.catalog);
        rebase(&mut m.profiles);
        rebase(&mut m.out);
        if let Some(ctx) = &m.context {
            if looks_like_path(ctx) && Path::new(ctx).is_relative() {
                m.context = Some(base.join(ctx).to_string_lossy().into_owned());
            }
        }
        Ok(m)
    }
}

/// Context values naming a file rather than a preset.
pub fn looks_like_path(s: &str) -> bool {
    s.contains('/') || s.contains(std::path::MAIN_SEPARATOR) || s.ends_with(".json")
}
