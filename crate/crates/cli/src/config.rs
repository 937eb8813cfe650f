use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sas_core::harness::{gen_shape, perturb, Perturbation, ShapeKind};
use sas_core::pointcloud::{load_cloud, normalize_unit_sphere, CloudFormat, PointCloud};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Reads a TOML or JSON config; a missing path yields the defaults.
///
/// `.toml` files are parsed as TOML, `.json` as JSON, anything else is tried
/// as JSON first.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let parsed = match ext {
        "toml" => toml::from_str(&text).map_err(anyhow::Error::from),
        "json" => serde_json::from_str(&text).map_err(anyhow::Error::from),
        _ => serde_json::from_str(&text).or_else(|_| toml::from_str(&text).map_err(anyhow::Error::from)),
    };
    parsed.with_context(|| format!("parsing config {}", path.display()))
}

/// Writes `config.json` into `out`, the exact document a rerun should load.
pub fn write_snapshot<T: Serialize>(out: &Path, cfg: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(cfg)?;
    text.push('\n');
    fs::write(out.join("config.json"), text)?;
    Ok(())
}

pub fn canonical(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))
}

/// Where an input cloud comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CloudSource {
    File {
        path: PathBuf,
        /// Guessed from the extension when absent.
        #[serde(default)]
        format: Option<CloudFormat>,
        /// Center and scale into the unit ball after loading.
        #[serde(default)]
        normalize: bool,
    },
    Shape {
        kind: ShapeKind,
        #[serde(default = "default_points")]
        n_points: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "identity")]
        perturbation: Perturbation,
    },
}

fn default_points() -> usize {
    1024
}

fn identity() -> Perturbation {
    Perturbation::Identity
}

impl Default for CloudSource {
    fn default() -> Self {
        CloudSource::Shape {
            kind: ShapeKind::Sphere,
            n_points: default_points(),
            seed: 0,
            perturbation: Perturbation::Identity,
        }
    }
}

impl CloudSource {
    pub fn shape(kind: ShapeKind, seed: u64) -> Self {
        CloudSource::Shape { kind, n_points: default_points(), seed, perturbation: Perturbation::Identity }
    }

    /// File paths made absolute so the snapshot reruns from any directory.
    pub fn canonicalize(&mut self) -> Result<()> {
        if let CloudSource::File { path, .. } = self {
            *path = canonical(path)?;
        }
        Ok(())
    }

    pub fn set_seed(&mut self, s: u64) {
        if let CloudSource::Shape { seed, .. } = self {
            *seed = s;
        }
    }

    pub fn id(&self) -> String {
        match self {
            CloudSource::File { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            CloudSource::Shape { kind, seed, perturbation, .. } => match perturbation {
                Perturbation::Identity => format!("{kind}_{seed}"),
                p => format!("{kind}_{seed}_{}", p.label()),
            },
        }
    }

    /// `patch_size` bounds how far an occlusion may thin the cloud.
    pub fn load(&self, patch_size: usize) -> Result<PointCloud> {
        match self {
            CloudSource::File { path, format, normalize } => {
                let fmt = format.unwrap_or_else(|| CloudFormat::from_path(path));
                let cloud = load_cloud(path, fmt)?;
                Ok(if *normalize { normalize_unit_sphere(&cloud)? } else { cloud })
            }
            CloudSource::Shape { kind, n_points, seed, perturbation } => {
                perturbation.validate()?;
                let cloud = gen_shape(*kind, *n_points, *seed)?;
                Ok(perturb(&cloud, perturbation, patch_size)?)
            }
        }
    }
}

pub fn check_unique_ids(sources: &[CloudSource]) -> Result<()> {
    let mut ids: Vec<String> = sources.iter().map(CloudSource::id).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        bail!("two inputs share the id {:?}", w[0]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Demo {
        cloud: CloudSource,
        x: f64,
    }

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("a.toml");
        fs::write(&t, "x = 0.1\n[cloud]\nsource = \"shape\"\nkind = \"torus\"\nseed = 3\n").unwrap();
        let a: Demo = load(Some(&t)).unwrap();
        write_snapshot(dir.path(), &a).unwrap();
        let b: Demo = load(Some(&dir.path().join("config.json"))).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cloud.id(), "torus_3");
    }

    #[test]
    fn missing_config_is_default() {
        let d: Demo = load(None).unwrap();
        assert_eq!(d, Demo::default());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let s = CloudSource::shape(ShapeKind::Sphere, 0);
        assert!(check_unique_ids(&[s.clone(), s]).is_err());
    }
}
