use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

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
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Dataset(format!("unknown split label {other:?}"))),
        }
    }
}

/// `floor(0.7·n)`, in integer arithmetic.
pub fn train_count(n: usize) -> usize {
    n * 7 / 10
}

/// Seeded shuffle of the lexicographically sorted pairs; the first
/// `floor(0.7·N)` go to train. Both halves come back sorted.
pub fn split_dataset<P: Clone + Ord>(pairs: &[P], seed: u64) -> Result<(Vec<P>, Vec<P>)> {
    if pairs.len() < 2 {
        return Err(Error::Dataset(format!(
            "need at least 2 pairs to split, got {}",
            pairs.len()
        )));
    }
    let mut order = pairs.to_vec();
    order.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let cut = train_count(order.len());
    let mut test = order.split_off(cut);
    order.sort();
    test.sort();
    Ok((order, test))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

/// Ordered `(image, mask, split)` list; serialized as tab-separated lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn build(pairs: &[(PathBuf, PathBuf)], seed: u64) -> Result<Self> {
        let (train, _) = split_dataset(pairs, seed)?;
        let mut sorted = pairs.to_vec();
        sorted.sort();
        let entries = sorted
            .into_iter()
            .map(|(image, mask)| {
                let split = if train.binary_search(&(image.clone(), mask.clone())).is_ok() {
                    Split::Train
                } else {
                    Split::Test
                };
                ManifestEntry { image, mask, split }
            })
            .collect();
        Ok(DatasetManifest { entries, seed })
    }

    pub fn of_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.of_split(split).count()
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.image.display(), e.mask.display(), e.split))
            .collect()
    }

    pub fn parse(text: &str, seed: u64) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [image, mask, split] = fields[..] else {
                return Err(Error::Dataset(format!(
                    "manifest line {}: expected 3 tab-separated fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            };
            entries.push(ManifestEntry {
                image: image.into(),
                mask: mask.into(),
                split: split.parse()?,
            });
        }
        if entries.is_empty() {
            return Err(Error::Dataset("manifest has no entries".into()));
        }
        Ok(DatasetManifest { entries, seed })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, 0)
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Finds `*.ppm` images and `*.pgm` masks anywhere under `dir` and matches them by
/// file stem. Unmatched or duplicated stems are reported together as one error.
pub fn discover_pairs(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    let mut images: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let mut masks: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for path in files {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => images.entry(stem).or_default().push(path),
            Some("pgm") => masks.entry(stem).or_default().push(path),
            _ => {}
        }
    }
    let mut problems = Vec::new();
    let mut pairs = Vec::new();
    for (stem, imgs) in &images {
        match (imgs.as_slice(), masks.get(stem).map(Vec::as_slice)) {
            ([img], Some([mask])) => pairs.push((img.clone(), mask.clone())),
            (_, None) => problems.push(format!("image without mask: {}", imgs[0].display())),
            _ => problems.push(format!("stem {stem:?} is not unique")),
        }
    }
    for (stem, m) in &masks {
        if !images.contains_key(stem) {
            problems.push(format!("mask without image: {}", m[0].display()));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Dataset(format!(
            "unmatched files:\n  {}",
            problems.join("\n  ")
        )));
    }
    if pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "no image/mask pairs under {}",
            dir.display()
        )));
    }
    pairs.sort();
    Ok(pairs)
}
