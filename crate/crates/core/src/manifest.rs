//! JSON manifests exchanged between harness stages.
//!
//! Relative paths inside a manifest resolve against the manifest's own
//! directory, so a manifest and its files can be moved together.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageMeta, Laterality, Photometric};

/// One entry of an image manifest (a JSON array of these).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub source_id: String,
    pub path: PathBuf,
    #[serde(default)]
    pub photometric: Photometric,
    #[serde(default)]
    pub laterality: Laterality,
    /// Background already removed upstream; segmentation is skipped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pre_segmented: bool,
}

impl ImageEntry {
    pub fn meta(&self) -> ImageMeta {
        ImageMeta {
            photometric: self.photometric,
            laterality: self.laterality,
            source_id: self.source_id.clone(),
        }
    }
}

/// An image manifest with its entries' paths resolved to absolute locations.
#[derive(Debug, Clone)]
pub struct ImageManifest {
    pub entries: Vec<ImageEntry>,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    crate::io::write_file(path, text.as_bytes())
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn check_unique<'a>(path: &Path, ids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for id in ids {
        if id.is_empty() {
            return Err(Error::malformed(path, "empty source_id"));
        }
        if !seen.insert(id) {
            return Err(Error::malformed(path, format!("duplicate source_id {id:?}")));
        }
    }
    Ok(())
}

impl ImageManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut entries: Vec<ImageEntry> = read_json(path)?;
        check_unique(path, entries.iter().map(|e| e.source_id.as_str()))?;
        let base = base_dir(path);
        for e in &mut entries {
            e.path = resolve(&base, &e.path);
        }
        Ok(ImageManifest { entries })
    }

    /// Writes the manifest with paths relative to `path`'s directory where possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = base_dir(path);
        let entries: Vec<ImageEntry> = self
            .entries
            .iter()
            .map(|e| ImageEntry { path: relativize(&base, &e.path), ..e.clone() })
            .collect();
        write_json(path, &entries)
    }
}

pub(crate) fn relativize(base: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StackKind {
    #[serde(rename = "MC_DROPOUT")]
    McDropout,
    #[serde(rename = "ENSEMBLE")]
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackEntry {
    pub source_id: String,
    pub source_path: PathBuf,
    pub sample_paths: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_ids: Option<Vec<String>>,
}

/// `{"kind": "MC_DROPOUT"|"ENSEMBLE", "stacks": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub kind: StackKind,
    pub stacks: Vec<StackEntry>,
}

impl StackManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: StackManifest = read_json(path)?;
        check_unique(path, m.stacks.iter().map(|s| s.source_id.as_str()))?;
        let base = base_dir(path);
        for s in &mut m.stacks {
            s.source_path = resolve(&base, &s.source_path);
            for p in &mut s.sample_paths {
                *p = resolve(&base, p);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let base = base_dir(path);
        let stacks = self
            .stacks
            .iter()
            .map(|s| StackEntry {
                source_path: relativize(&base, &s.source_path),
                sample_paths: s.sample_paths.iter().map(|p| relativize(&base, p)).collect(),
                ..s.clone()
            })
            .collect();
        write_json(path, &StackManifest { kind: self.kind, stacks })
    }
}
