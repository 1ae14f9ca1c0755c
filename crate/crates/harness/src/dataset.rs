//! Synthetic datasets on disk: one XYZ file per cloud plus a manifest.
//!
//! The manifest is plain text. The first line is `# schema_version 1`, then
//! one `path label split` line per sample, with paths relative to the
//! manifest's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pointattack::cloud::{generate_shape, read_xyz, write_xyz};
use pointattack::{PointCloud64, ShapeClass};

use crate::{HarnessError, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

impl ManifestEntry {
    /// File stem, used as the sample id in reports.
    pub fn sample_id(&self) -> String {
        self.path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub per_class: usize,
    pub n_points: usize,
    /// Fraction of each class assigned to the test split (rounded).
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            per_class: 360,
            n_points: 256,
            test_fraction: 1.0 / 6.0,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn test_count(&self) -> usize {
        (self.per_class as f64 * self.test_fraction).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.per_class == 0 {
            return Err(HarnessError::usage("per-class count must be positive"));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(HarnessError::usage(format!(
                "test fraction must lie in [0, 1], got {}",
                self.test_fraction
            )));
        }
        Ok(())
    }

    /// Seed of sample `index` of `class`. Distinct across classes and indices.
    pub fn sample_seed(&self, class: ShapeClass, index: usize) -> u64 {
        self.seed
            .wrapping_mul(0x0000_0100_0000_01b3)
            .wrapping_add((class.index() as u64) << 32 | index as u64)
    }
}

/// One generated sample, still in memory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub entry: ManifestEntry,
    pub cloud: PointCloud64,
}

/// Generates the dataset in memory, class-major. The first
/// `per_class - test_count` samples of each class go to the train split.
pub fn generate(spec: &DatasetSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let train_count = spec.per_class - spec.test_count();
    let mut out = Vec::with_capacity(spec.per_class * ShapeClass::ALL.len());
    for class in ShapeClass::ALL {
        for i in 0..spec.per_class {
            let cloud = generate_shape(class, spec.n_points, spec.sample_seed(class, i))?;
            out.push(Sample {
                entry: ManifestEntry {
                    path: PathBuf::from(format!("{}_{i:04}.xyz", class.name())),
                    label: class.index(),
                    split: if i < train_count { Split::Train } else { Split::Test },
                },
                cloud,
            });
        }
    }
    Ok(out)
}

/// Writes `generate(spec)` to `dir` and returns the manifest entries.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec) -> Result<Vec<ManifestEntry>> {
    let samples = generate(spec)?;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for s in &samples {
        write_xyz(&s.cloud, dir.join(&s.entry.path))?;
    }
    let entries: Vec<ManifestEntry> = samples.into_iter().map(|s| s.entry).collect();
    write_manifest(dir, &entries)?;
    Ok(entries)
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = format!("# schema_version {MANIFEST_SCHEMA_VERSION}\n");
    for e in entries {
        text.push_str(&format!("{} {} {}\n", e.path.display(), e.label, e.split));
    }
    let path = dir.join(MANIFEST_NAME);
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let bad = |line: usize, message: String| HarnessError::Manifest {
        path: path.clone(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == format!("# schema_version {MANIFEST_SCHEMA_VERSION}") => {}
        Some((_, header)) => return Err(bad(1, format!("unsupported header `{header}`"))),
        None => return Err(bad(1, "empty manifest".into())),
    }
    let mut entries = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [p, label, split] = fields[..] else {
            return Err(bad(i + 1, format!("expected `path label split`, got `{line}`")));
        };
        entries.push(ManifestEntry {
            path: PathBuf::from(p),
            label: label.parse().map_err(|_| bad(i + 1, format!("bad label `{label}`")))?,
            split: split.parse().map_err(|m| bad(i + 1, m))?,
        });
    }
    Ok(entries)
}

/// Reads every cloud of `split`, labeled from the manifest, in manifest order.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<Sample>> {
    read_manifest(dir)?
        .into_iter()
        .filter(|e| e.split == split)
        .map(|entry| {
            let cloud: PointCloud64 = read_xyz(dir.join(&entry.path))?;
            let cloud = cloud.with_label(Some(entry.label));
            Ok(Sample { entry, cloud })
        })
        .collect()
}
