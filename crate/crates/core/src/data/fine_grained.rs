//! Index-file loaders for CUB-200-2011 and Stanford Dogs.
//!
//! Only the index files are read up front; images are decoded lazily when a
//! sample is loaded.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetHandle, Keypoint, Sample, SampleSource};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Cub,
    StanfordDogs,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cub" => Ok(Layout::Cub),
            "stanford_dogs" | "stanford-dogs" | "dogs" => Ok(Layout::StanfordDogs),
            other => Err(Error::Configuration(format!("unknown dataset layout '{other}'"))),
        }
    }
}

pub fn load_fine_grained(root: &Path, layout: Layout) -> Result<DatasetHandle> {
    match layout {
        Layout::Cub => load_cub(root),
        Layout::StanfordDogs => load_dogs(root),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn parse_err(path: &Path, line: &str) -> Error {
    Error::Data(format!("malformed line in {}: '{line}'", path.display()))
}

/// Two-column `"<id> <value>"` index file.
fn read_pairs(path: &Path) -> Result<Vec<(u64, String)>> {
    read_lines(path)?
        .into_iter()
        .map(|line| {
            let (id, rest) = line.split_once(' ').ok_or_else(|| parse_err(path, &line))?;
            let id = id.parse().map_err(|_| parse_err(path, &line))?;
            Ok((id, rest.trim().to_owned()))
        })
        .collect()
}

/// Class directory prefix of a relative image path, e.g. `001.Black_footed_Albatross`.
fn class_dir(rel: &str) -> Option<&str> {
    rel.split('/').next().filter(|d| !d.is_empty() && rel.contains('/'))
}

fn load_cub(root: &Path) -> Result<DatasetHandle> {
    let images_txt = root.join("images.txt");
    let split_txt = root.join("train_test_split.txt");
    let images = read_pairs(&images_txt)?;
    let split: HashMap<u64, bool> = read_pairs(&split_txt)?
        .into_iter()
        .map(|(id, flag)| (id, flag == "1"))
        .collect();

    let labels_txt = root.join("image_class_labels.txt");
    let explicit_labels: Option<HashMap<u64, usize>> = if labels_txt.exists() {
        let mut m = HashMap::new();
        for (id, label) in read_pairs(&labels_txt)? {
            let label: usize = label.parse().map_err(|_| parse_err(&labels_txt, &label))?;
            if label == 0 {
                return Err(Error::Data(format!("{} uses 1-based labels", labels_txt.display())));
            }
            m.insert(id, label - 1);
        }
        Some(m)
    } else {
        None
    };

    // class names from the directory prefixes, ordered as in CUB's numbering
    let mut dirs: BTreeMap<String, ()> = BTreeMap::new();
    for (_, rel) in &images {
        let dir = class_dir(rel).ok_or_else(|| parse_err(&images_txt, rel))?;
        dirs.insert(dir.to_owned(), ());
    }
    let class_names: Vec<String> = dirs
        .keys()
        .map(|d| d.split_once('.').map_or(d.as_str(), |(_, n)| n).to_owned())
        .collect();
    let dir_index: HashMap<&str, usize> = dirs.keys().enumerate().map(|(k, d)| (d.as_str(), k)).collect();

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut id_to_sample = HashMap::new();
    for (id, rel) in &images {
        let label = match &explicit_labels {
            Some(m) => *m
                .get(id)
                .ok_or_else(|| Error::Data(format!("image {id} has no entry in {}", labels_txt.display())))?,
            None => dir_index[class_dir(rel).expect("checked above")],
        };
        let is_train = *split
            .get(id)
            .ok_or_else(|| Error::Data(format!("image {id} has no entry in {}", split_txt.display())))?;
        let sample = Sample {
            id: rel.clone(),
            source: SampleSource::File(root.join("images").join(rel)),
            label,
        };
        id_to_sample.insert(*id, rel.clone());
        if is_train {
            train.push(sample);
        } else {
            val.push(sample);
        }
    }

    let mut parts: HashMap<String, Vec<Keypoint>> = HashMap::new();
    let parts_txt = root.join("parts").join("part_locs.txt");
    if parts_txt.exists() {
        for line in read_lines(&parts_txt)? {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(parse_err(&parts_txt, &line));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| parse_err(&parts_txt, &line));
            let img: u64 = f[0].parse().map_err(|_| parse_err(&parts_txt, &line))?;
            let Some(sample_id) = id_to_sample.get(&img) else {
                continue;
            };
            parts.entry(sample_id.clone()).or_default().push(Keypoint {
                part_id: num(f[1])? as usize,
                x: num(f[2])?,
                y: num(f[3])?,
                visible: f[4] == "1",
            });
        }
    }

    Ok(DatasetHandle::new(
        "cub-200-2011".into(),
        class_names,
        train,
        val,
        parts,
        Vec::new(),
    ))
}

fn load_dogs(root: &Path) -> Result<DatasetHandle> {
    let train_list = read_lines(&root.join("train_list.txt"))?;
    let test_list = read_lines(&root.join("test_list.txt"))?;
    let mut dirs: BTreeMap<String, ()> = BTreeMap::new();
    for rel in train_list.iter().chain(&test_list) {
        let dir = class_dir(rel).ok_or_else(|| parse_err(&root.join("train_list.txt"), rel))?;
        dirs.insert(dir.to_owned(), ());
    }
    let dir_index: HashMap<&str, usize> = dirs.keys().enumerate().map(|(k, d)| (d.as_str(), k)).collect();
    let class_names = dirs
        .keys()
        .map(|d| d.split_once('-').map_or(d.as_str(), |(_, n)| n).to_owned())
        .collect();
    let to_samples = |list: &[String]| -> Vec<Sample> {
        list.iter()
            .map(|rel| Sample {
                id: rel.clone(),
                source: SampleSource::File(root.join("Images").join(rel)),
                label: dir_index[class_dir(rel).expect("checked above")],
            })
            .collect()
    };
    Ok(DatasetHandle::new(
        "stanford-dogs".into(),
        class_names,
        to_samples(&train_list),
        to_samples(&test_list),
        HashMap::new(),
        Vec::new(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    #[test]
    fn empty_root_names_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        match load_fine_grained(dir.path(), Layout::Cub) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with("images.txt")),
            other => panic!("expected io error, got {other:?}"),
        }
        match load_fine_grained(dir.path(), Layout::StanfordDogs) {
            Err(Error::Io { path, .. }) => assert!(path.ends_with("train_list.txt")),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn small_cub_layout_with_parts() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("parts")).unwrap();
        let mut images = String::new();
        let mut split = String::new();
        for id in 1..=6 {
            let class = if id <= 3 { "001.Albatross" } else { "002.Auklet" };
            writeln!(images, "{id} {class}/img_{id}.jpg").unwrap();
            writeln!(split, "{id} {}", (id % 2) as u8).unwrap();
        }
        std::fs::write(root.join("images.txt"), images).unwrap();
        std::fs::write(root.join("train_test_split.txt"), split).unwrap();
        std::fs::write(
            root.join("parts/part_locs.txt"),
            "1 1 10.0 12.5 1\n1 2 0.0 0.0 0\n4 1 3.0 4.0 1\n",
        )
        .unwrap();
        let h = load_fine_grained(root, Layout::Cub).unwrap();
        assert_eq!((h.train.len(), h.val.len()), (3, 3));
        assert_eq!(h.class_names, vec!["Albatross", "Auklet"]);
        let kps = h.keypoints("001.Albatross/img_1.jpg").unwrap();
        assert_eq!(kps.len(), 2);
        assert!(!kps[1].visible);
        assert_eq!(h.find("002.Auklet/img_4.jpg").unwrap().label, 1);
    }
}
