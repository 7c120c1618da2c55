//! Optional JSON run configuration. Command-line flags override file values,
//! which override built-in defaults; paths are resolved relative to the
//! config file's directory.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scenario: Option<String>,
    pub variant: Option<String>,
    pub weak: Option<bool>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub latent_dim: Option<usize>,
    pub image_size: Option<usize>,
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for slot in [&mut cfg.data, &mut cfg.out, &mut cfg.metrics] {
            if let Some(p) = slot.as_mut() {
                if p.is_relative() {
                    *p = base.join(&p);
                }
            }
        }
        Ok(cfg)
    }
}

/// flag > config > default
pub fn pick<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flag_config_default() {
        assert_eq!(pick(Some(1), Some(2), 3), 1);
        assert_eq!(pick(None, Some(2), 3), 2);
        assert_eq!(pick::<u32>(None, None, 3), 3);
    }

    #[test]
    fn relative_paths_resolve_against_the_config_directory() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"data": "ds", "seed": 7}"#).unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.data.unwrap(), dir.path().join("ds"));
        assert_eq!(cfg.seed, Some(7));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"epochz": 4}"#).unwrap();
        assert!(FileConfig::load(&path).is_err());
    }
}
