//! Multi-view datasets: manifest loading, standardization and a synthetic
//! union-of-subspaces generator.
//!
//! On disk every view is a headerless CSV with one row per sample. In
//! memory a view is `F x N` (features by samples); the transposition
//! happens at the file boundary.

mod standardize;
mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use standardize::{standardize, Standardizer};
pub use synth::{generate_synthetic, SynthSpec};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    pub name: String,
    /// One `F^v x N` matrix per view.
    pub views: Vec<Matrix>,
    /// Contiguous class indices `0..num_classes`.
    pub labels: Vec<usize>,
    /// Labels as they appeared in the file.
    pub raw_labels: Vec<i64>,
    pub num_classes: usize,
}

impl MultiViewDataset {
    /// Builds a dataset from raw labels, re-indexing them to `0..C` in
    /// ascending order of the raw values.
    pub fn new(name: impl Into<String>, views: Vec<Matrix>, raw_labels: Vec<i64>, num_classes: usize) -> Result<Self> {
        let labels = contiguous_labels(&raw_labels);
        let out = Self {
            name: name.into(),
            views,
            labels,
            raw_labels,
            num_classes,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn feature_dims(&self) -> Vec<usize> {
        self.views.iter().map(Matrix::rows).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::invalid("dataset has no views"));
        }
        if self.num_classes == 0 {
            return Err(Error::invalid("num_classes must be >= 1"));
        }
        let n = self.labels.len();
        if n == 0 {
            return Err(Error::invalid("dataset has no samples"));
        }
        if self.raw_labels.len() != n {
            return Err(Error::Invariant("raw and contiguous labels differ in length".into()));
        }
        for (v, x) in self.views.iter().enumerate() {
            if x.cols() != n {
                return Err(Error::invalid(format!(
                    "view {v} has {} samples but there are {n} labels",
                    x.cols()
                )));
            }
            if x.rows() == 0 {
                return Err(Error::invalid(format!("view {v} has no features")));
            }
        }
        let distinct = self.labels.iter().max().map_or(0, |m| m + 1);
        if distinct > self.num_classes {
            return Err(Error::invalid(format!(
                "labels contain {distinct} distinct classes but num_classes is {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Standardizes every view in place.
    pub fn standardize(&mut self) {
        for x in &mut self.views {
            *x = standardize(x).0;
        }
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn select_samples(&self, indices: &[usize]) -> Result<Self> {
        let n = self.num_samples();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::invalid(format!("sample index {bad} out of range for {n} samples")));
        }
        let views = self
            .views
            .iter()
            .map(|x| Matrix::from_fn(x.rows(), indices.len(), |i, j| x.get(i, indices[j])))
            .collect();
        let raw = indices.iter().map(|&i| self.raw_labels[i]).collect();
        Self::new(self.name.clone(), views, raw, self.num_classes)
    }

    /// Stratified random subsample of about `target` samples: each class
    /// keeps its share (rounded down, at least one), original order kept.
    pub fn stratified_subsample(&self, target: usize, seed: u64) -> Result<Self> {
        let n = self.num_samples();
        if target == 0 || target > n {
            return Err(Error::invalid(format!("subsample size {target} must be in 1..={n}")));
        }
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &c) in self.labels.iter().enumerate() {
            by_class.entry(c).or_default().push(i);
        }
        let mut rng = SeededRng::new(seed);
        let mut keep = Vec::with_capacity(target);
        for members in by_class.values_mut() {
            let take = ((members.len() * target) / n).max(1).min(members.len());
            rng.shuffle(members);
            keep.extend_from_slice(&members[..take]);
        }
        keep.sort_unstable();
        self.select_samples(&keep)
    }
}

/// Maps raw labels to `0..C` by ascending raw value.
pub fn contiguous_labels(raw: &[i64]) -> Vec<usize> {
    let mut distinct: Vec<i64> = raw.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    raw.iter()
        .map(|l| distinct.binary_search(l).expect("label present"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub path: String,
    pub features: usize,
}

/// Dataset manifest. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub views: Vec<ViewEntry>,
    pub labels_path: String,
    pub num_classes: usize,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if m.views.is_empty() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: "manifest lists no views".into(),
            });
        }
        if m.num_classes == 0 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: "num_classes must be >= 1".into(),
            });
        }
        Ok(m)
    }
}

/// Reads one decimal integer per line. Blank lines are skipped.
pub fn read_labels<R: BufRead>(input: R, path: &Path) -> Result<Vec<i64>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v = t.parse::<i64>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("not an integer label: {t:?}"),
        })?;
        out.push(v);
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<Vec<i64>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(BufReader::new(file), path)
}

pub fn save_labels<L: std::fmt::Display>(path: &Path, labels: &[L]) -> Result<()> {
    let mut buf = String::new();
    for l in labels {
        buf.push_str(&l.to_string());
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads a dataset from its manifest. Errors name the offending file and,
/// where applicable, its line.
pub fn load_dataset(manifest_path: &Path) -> Result<MultiViewDataset> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let labels_path = resolve(base, &manifest.labels_path);
    let raw = load_labels(&labels_path)?;

    let mut views = Vec::with_capacity(manifest.views.len());
    for entry in &manifest.views {
        let path = resolve(base, &entry.path);
        let rows = Matrix::load_csv(&path)?;
        if rows.rows() != raw.len() {
            return Err(Error::Format {
                path: path.clone(),
                msg: format!(
                    "{} samples, but labels file {} has {}",
                    rows.rows(),
                    labels_path.display(),
                    raw.len()
                ),
            });
        }
        if rows.cols() != entry.features {
            return Err(Error::Format {
                path: path.clone(),
                msg: format!(
                    "{} features per row, manifest {} says {}",
                    rows.cols(),
                    manifest_path.display(),
                    entry.features
                ),
            });
        }
        views.push(rows.transpose());
    }
    MultiViewDataset::new(manifest.name, views, raw, manifest.num_classes).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Format {
            path: manifest_path.to_path_buf(),
            msg,
        },
        other => other,
    })
}

/// Writes `manifest.json`, `view_<v>.csv` and `labels.txt` into `dir` and
/// returns the manifest path.
pub fn save_dataset(dataset: &MultiViewDataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.num_views());
    for (v, x) in dataset.views.iter().enumerate() {
        let file = format!("view_{v}.csv");
        x.transpose().save_csv(&dir.join(&file))?;
        entries.push(ViewEntry {
            path: file,
            features: x.rows(),
        });
    }
    save_labels(&dir.join("labels.txt"), &dataset.raw_labels)?;
    let manifest = Manifest {
        name: dataset.name.clone(),
        views: entries,
        labels_path: "labels.txt".into(),
        num_classes: dataset.num_classes,
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
