//! Resolves flags, manifest and defaults into request inputs. All file checks
//! happen here, before any work is sent to the server.

use std::path::{Path, PathBuf};

use gotcha_core::api::{ContextSpec, Inputs, ProtocolSpec};
use gotcha_core::session::{ScoreMode, SessionConfig};
use gotcha_core::simulation::ProfileKind;
use serde_json::Value;

use crate::args::Global;
use crate::manifest::{looks_like_path, RunManifest};
use crate::CliError;

pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_OUT: &str = "gotcha-out";

#[derive(Debug)]
pub struct Settings {
    pub manifest: RunManifest,
    pub inputs: Inputs,
    pub seed: u64,
    pub out: PathBuf,
    pub session: SessionConfig,
}

impl Settings {
    pub fn resolve(global: &Global) -> Result<Self, CliError> {
        let manifest = match &global.manifest {
            Some(p) => RunManifest::load(p)?,
            None => RunManifest::default(),
        };
        let catalog = global.catalog.as_ref().or(manifest.catalog.as_ref());
        let profiles = global.profiles.as_ref().or(manifest.profiles.as_ref());
        let context = global.context.as_ref().or(manifest.context.as_ref());

        let inputs = Inputs {
            catalog: catalog.map(|p| read_json(p, "catalog")).transpose()?,
            profiles: profiles.map(|d| read_profiles(d)).transpose()?,
            context: context.map(|c| context_spec(c)).transpose()?,
            harness: None,
        };

        let mode = global.mode.or(manifest.mode).unwrap_or_default();
        let mut session = SessionConfig::for_mode(mode);
        if let Some(t) = manifest.threshold {
            session.threshold = t;
        }
        if let Some(n) = manifest.cascade_len {
            session.cascade_len = n;
        }
        if let Some(t) = manifest.timeout_s {
            session.timeout_s = t;
        }
        if let Some(r) = manifest.max_retries {
            session.max_retries = r;
        }

        Ok(Settings {
            seed: global.seed.or(manifest.seed).unwrap_or(DEFAULT_SEED),
            out: global
                .out
                .clone()
                .or_else(|| manifest.out.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            manifest,
            inputs,
            session,
        })
    }

    pub fn mode(&self) -> ScoreMode {
        self.session.score_mode
    }

    pub fn protocol(&self) -> ProtocolSpec {
        ProtocolSpec {
            inputs: self.inputs.clone(),
            seed: self.seed,
            session: self.session.clone(),
            models: None,
        }
    }

    /// Writes `name` under the output directory, creating it if needed.
    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.out)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", self.out.display())))?;
        let path = self.out.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn read_json(path: &Path, what: &str) -> Result<Value, CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("{what} file not found: {}", path.display())));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {what} file {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid JSON in {what} file {}: {e}", path.display())))
}

fn read_profiles(dir: &Path) -> Result<Vec<Value>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("profiles directory not found: {}", dir.display())));
    }
    ProfileKind::ALL
        .iter()
        .map(|k| read_json(&dir.join(format!("{}.json", k.as_str().to_lowercase())), "profile"))
        .collect()
}

fn context_spec(value: &str) -> Result<ContextSpec, CliError> {
    let path = Path::new(value);
    if path.is_file() || looks_like_path(value) {
        let doc = read_json(path, "context")?;
        let ctx = serde_json::from_value(doc)
            .map_err(|e| CliError::Config(format!("invalid context file {}: {e}", path.display())))?;
        Ok(ContextSpec::Inline(ctx))
    } else {
        Ok(ContextSpec::Preset(value.to_string()))
    }
}
