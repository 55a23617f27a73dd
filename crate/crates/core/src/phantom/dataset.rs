//! A directory of phantom cases: `case_<seed>_<i>_image.vol` plus
//! `case_<seed>_<i>_label.vol`.

use std::fs;
use std::path::{Path, PathBuf};

use super::io::{read_labels, read_volume, write_labels, write_volume};
use super::{generate_phantom, Extents, LabelVolume, MultiModalVolume};
use crate::error::{Error, Result};

const IMAGE_SUFFIX: &str = "_image.vol";
const LABEL_SUFFIX: &str = "_label.vol";

#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub name: String,
    pub image: MultiModalVolume,
    pub labels: LabelVolume,
}

pub fn case_name(seed: u64, index: usize) -> String {
    format!("case_{seed}_{index}")
}

/// Generator seed of case `index` in a set seeded with `seed`.
pub fn case_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

pub fn image_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}{IMAGE_SUFFIX}"))
}

pub fn label_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}{LABEL_SUFFIX}"))
}

pub fn generate_cases(seed: u64, extents: Extents, count: usize) -> Result<Vec<Case>> {
    (0..count)
        .map(|i| {
            let (image, labels) = generate_phantom(case_seed(seed, i), extents)?;
            Ok(Case {
                name: case_name(seed, i),
                image,
                labels,
            })
        })
        .collect()
}

/// Writes each case as an image/label file pair; returns the written paths.
pub fn write_cases(dir: &Path, cases: &[Case]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::with_capacity(cases.len() * 2);
    for case in cases {
        let (ip, lp) = (image_path(dir, &case.name), label_path(dir, &case.name));
        write_volume(&ip, &case.image)?;
        write_labels(&lp, &case.labels)?;
        written.push(ip);
        written.push(lp);
    }
    Ok(written)
}

/// Loads every image/label pair in `dir`, sorted by case name.
pub fn load_cases(dir: &Path) -> Result<Vec<Case>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok())
        .filter_map(|entry| {
            entry
                .file_name()
                .to_str()
                .and_then(|n| n.strip_suffix(IMAGE_SUFFIX))
                .map(str::to_owned)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Data(format!("no *{IMAGE_SUFFIX} files in {}", dir.display())));
    }
    names
        .into_iter()
        .map(|name| {
            let image = read_volume(image_path(dir, &name))?;
            let labels = read_labels(label_path(dir, &name))?;
            if image.extents() != labels.extents() {
                return Err(Error::Data(format!("{name}: image and label extents differ")));
            }
            Ok(Case { name, image, labels })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let cases = generate_cases(4, [16, 16, 16], 2).unwrap();
        let written = write_cases(dir.path(), &cases).unwrap();
        assert_eq!(written.len(), 4);
        assert_eq!(load_cases(dir.path()).unwrap(), cases);
    }

    #[test]
    fn empty_dir_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_cases(dir.path()), Err(Error::Data(_))));
    }
}
