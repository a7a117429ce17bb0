//! Datasets on disk: a JSON manifest indexing one MMTS file per sample and modality.

pub mod corrupt;
pub mod mmts;
pub mod msax;
pub mod split;
pub mod synth;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{MaestroError, Result};
use crate::model::{ModalityShape, ModelShape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityEntry {
    pub name: String,
    pub hz: f64,
    pub variates: usize,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub id: String,
    pub label: usize,
    /// Modality name to a path relative to the manifest, `null` when missing.
    pub paths: BTreeMap<String, Option<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub modalities: Vec<ModalityEntry>,
    pub classes: usize,
    pub samples: Vec<SampleEntry>,
}

/// `data[j]` is `None` for a missing modality, else `D_j` rows of `T_j` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSample {
    pub id: String,
    pub label: usize,
    pub data: Vec<Option<Vec<Vec<f64>>>>,
}

impl MultimodalSample {
    pub fn mask(&self) -> Vec<f64> {
        self.data.iter().map(|d| if d.is_some() { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub modalities: Vec<ModalityEntry>,
    pub classes: usize,
    pub samples: Vec<MultimodalSample>,
}

impl Dataset {
    pub fn shape(&self) -> ModelShape {
        ModelShape {
            modalities: self
                .modalities
                .iter()
                .map(|m| ModalityShape {
                    name: m.name.clone(),
                    variates: m.variates,
                    length: m.length,
                })
                .collect(),
            classes: self.classes,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Same schema, a subset of samples.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            modalities: self.modalities.clone(),
            classes: self.classes,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        if self.classes < 1 {
            return Err(MaestroError::data("class count must be >= 1"));
        }
        for m in &self.modalities {
            if !names.insert(m.name.as_str()) {
                return Err(MaestroError::data(format!("duplicate modality name {}", m.name)));
            }
            if m.variates == 0 || m.length == 0 {
                return Err(MaestroError::data(format!("modality {} needs variates and length >= 1", m.name)));
            }
        }
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(MaestroError::data(format!("duplicate sample id {}", s.id)));
            }
            if s.label == 0 || s.label > self.classes {
                return Err(MaestroError::data(format!("sample {}: label {} outside 1..={}", s.id, s.label, self.classes)));
            }
            if s.data.len() != self.modalities.len() {
                return Err(MaestroError::data(format!("sample {}: wrong modality count", s.id)));
            }
            for (m, d) in self.modalities.iter().zip(&s.data) {
                if let Some(rows) = d {
                    if rows.len() != m.variates || rows.iter().any(|r| r.len() != m.length) {
                        return Err(MaestroError::data(format!(
                            "sample {}: modality {} is not {}x{}",
                            s.id, m.name, m.variates, m.length
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reads a manifest and every file it references.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| MaestroError::io(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| MaestroError::data(format!("{}: {e}", manifest_path.display())))?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        let mut data = Vec::with_capacity(manifest.modalities.len());
        for m in &manifest.modalities {
            let entry = s
                .paths
                .get(&m.name)
                .ok_or_else(|| MaestroError::data(format!("sample {}: no entry for modality {}", s.id, m.name)))?;
            data.push(match entry {
                None => None,
                Some(rel) => {
                    let p = root.join(rel);
                    if !p.exists() {
                        return Err(MaestroError::data(format!("sample {}: missing file {}", s.id, p.display())));
                    }
                    Some(mmts::read(&p).map_err(|e| MaestroError::data(format!("sample {}: {e}", s.id)))?)
                }
            });
        }
        if s.paths.len() != manifest.modalities.len() {
            return Err(MaestroError::data(format!("sample {}: unknown modality in paths", s.id)));
        }
        samples.push(MultimodalSample {
            id: s.id.clone(),
            label: s.label,
            data,
        });
    }
    let ds = Dataset {
        modalities: manifest.modalities,
        classes: manifest.classes,
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes `manifest.json` plus `data/<id>.<modality>.mmts` files under `dir`.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<PathBuf> {
    ds.validate()?;
    let data_dir = dir.join("data");
    std::fs::create_dir_all(&data_dir).map_err(|e| MaestroError::io(&data_dir, e))?;
    let mut entries = Vec::with_capacity(ds.samples.len());
    for s in &ds.samples {
        let mut paths = BTreeMap::new();
        for (m, d) in ds.modalities.iter().zip(&s.data) {
            let rel = match d {
                None => None,
                Some(rows) => {
                    let rel = format!("data/{}.{}.mmts", s.id, m.name);
                    mmts::write(&dir.join(&rel), rows)?;
                    Some(rel)
                }
            };
            paths.insert(m.name.clone(), rel);
        }
        entries.push(SampleEntry {
            id: s.id.clone(),
            label: s.label,
            paths,
        });
    }
    let manifest = Manifest {
        modalities: ds.modalities.clone(),
        classes: ds.classes,
        samples: entries,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| MaestroError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset {
            modalities: vec![
                ModalityEntry { name: "acc".into(), hz: 32.0, variates: 2, length: 3 },
                ModalityEntry { name: "eda".into(), hz: 4.0, variates: 1, length: 2 },
            ],
            classes: 2,
            samples: vec![
                MultimodalSample {
                    id: "s0".into(),
                    label: 1,
                    data: vec![Some(vec![vec![0.5, 1.0, -1.0], vec![2.0, 0.0, 0.25]]), None],
                },
                MultimodalSample {
                    id: "s1".into(),
                    label: 2,
                    data: vec![None, Some(vec![vec![1.5, -0.5]])],
                },
            ],
        }
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        let path = save_dataset(dir.path(), &ds).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
        assert_eq!(ds.samples[0].mask(), vec![1.0, 0.0]);
    }

    #[test]
    fn empty_sample_list_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = tiny();
        ds.samples.clear();
        let path = save_dataset(dir.path(), &ds).unwrap();
        assert!(load_dataset(&path).unwrap().is_empty());
    }

    #[test]
    fn ten_modality_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset {
            modalities: (0..10)
                .map(|j| ModalityEntry { name: format!("m{j}"), hz: 4.0, variates: 1, length: 4 })
                .collect(),
            classes: 3,
            samples: vec![MultimodalSample {
                id: "a".into(),
                label: 3,
                data: (0..10).map(|j| (j % 2 == 0).then(|| vec![vec![j as f64; 4]])).collect(),
            }],
        };
        let path = save_dataset(dir.path(), &ds).unwrap();
        assert_eq!(load_dataset(&path).unwrap().shape().modalities.len(), 10);
    }

    #[test]
    fn invalid_manifests_rejected() {
        let mut ds = tiny();
        ds.samples[1].id = "s0".into();
        assert!(ds.validate().is_err());
        let mut ds = tiny();
        ds.samples[0].label = 3;
        assert!(ds.validate().is_err());
        let mut ds = tiny();
        ds.modalities[1].name = "acc".into();
        assert!(ds.validate().is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = save_dataset(dir.path(), &tiny()).unwrap();
        std::fs::remove_file(dir.path().join("data/s0.acc.mmts")).unwrap();
        let err = load_dataset(&path).unwrap_err().to_string();
        assert!(err.contains("s0"), "{err}");
        std::fs::write(&path, "{\"modalities\": []}").unwrap();
        assert!(load_dataset(&path).is_err());
    }
}
