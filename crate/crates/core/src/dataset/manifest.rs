use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{decode_clip, encode_clip, Clip, DatasetError, GenSpec, Result, Stage};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SPEC_FILE: &str = "generation.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub class_id: u16,
    pub participant_id: u32,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Echo of the generation parameters, when known.
    pub spec: Option<GenSpec>,
}

/// Maps each distinct participant to a fold in `0..k`: participants are
/// sorted, shuffled with `seed` and dealt round-robin, so fold sizes differ
/// by at most one.
pub fn assign_folds(participants: &[u32], k: usize, seed: u64) -> Result<HashMap<u32, usize>> {
    let mut ids: Vec<u32> = participants.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if k == 0 || ids.len() < k {
        return Err(DatasetError::Input(format!(
            "cannot split {} participants into {k} folds",
            ids.len()
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(ids.into_iter().enumerate().map(|(i, p)| (p, i % k)).collect())
}

impl Manifest {
    /// Returns a copy with every entry labelled by its participant's fold.
    pub fn kfold(&self, k: usize, seed: u64) -> Result<Manifest> {
        let ids: Vec<u32> = self.entries.iter().map(|e| e.participant_id).collect();
        let folds = assign_folds(&ids, k, seed)?;
        let entries = self
            .entries
            .iter()
            .map(|e| ManifestEntry {
                fold: Some(folds[&e.participant_id]),
                ..e.clone()
            })
            .collect();
        Ok(Manifest {
            entries,
            spec: self.spec.clone(),
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            s.push_str(&serde_json::to_string(e).expect("entry serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str) -> Result<Vec<ManifestEntry>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| DatasetError::Input(format!("manifest line {}: {e}", i + 1)))
            })
            .collect()
    }

    /// Reads `manifest.jsonl` (or the given file) and the sibling
    /// `generation.json` if present.
    pub fn load(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(fs::File::open(&file)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str(&line)
                    .map_err(|e| DatasetError::Input(format!("{}:{}: {e}", file.display(), i + 1)))?,
            );
        }
        let spec_path = file.with_file_name(SPEC_FILE);
        let spec = if spec_path.exists() {
            Some(
                serde_json::from_slice(&fs::read(&spec_path)?)
                    .map_err(|e| DatasetError::Input(format!("{}: {e}", spec_path.display())))?,
            )
        } else {
            None
        };
        Ok(Manifest { entries, spec })
    }

    /// Loads every clip named in the manifest, relative to `root`.
    pub fn load_clips(&self, root: impl AsRef<Path>) -> Result<Vec<Clip>> {
        let root = root.as_ref();
        self.entries
            .iter()
            .map(|e| {
                let clip = decode_clip(&fs::read(root.join(&e.path))?)?;
                if clip.class_id != e.class_id || clip.participant_id != e.participant_id || clip.stage != e.stage
                {
                    return Err(DatasetError::Input(format!(
                        "{}: header disagrees with manifest entry",
                        e.path
                    )));
                }
                Ok(clip)
            })
            .collect()
    }
}

/// Writes clips under `dir/clips/`, then `manifest.jsonl` and
/// `generation.json`.
pub fn write_dataset(dir: impl AsRef<Path>, clips: &[Clip], manifest: &Manifest) -> Result<()> {
    let dir = dir.as_ref();
    if clips.len() != manifest.entries.len() {
        return Err(DatasetError::Input(format!(
            "{} clips but {} manifest entries",
            clips.len(),
            manifest.entries.len()
        )));
    }
    for (clip, entry) in clips.iter().zip(&manifest.entries) {
        let path = dir.join(&entry.path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, encode_clip(clip)?)?;
    }
    let mut f = fs::File::create(dir.join(MANIFEST_FILE))?;
    f.write_all(manifest.to_jsonl().as_bytes())?;
    if let Some(spec) = &manifest.spec {
        fs::write(dir.join(SPEC_FILE), serde_json::to_vec_pretty(spec).expect("spec serializes"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate;

    fn manifest(participants: u32) -> Manifest {
        Manifest {
            entries: (0..participants)
                .flat_map(|p| {
                    (0..3).map(move |c| ManifestEntry {
                        path: format!("{p}-{c}"),
                        class_id: c,
                        participant_id: p,
                        stage: Stage::Demonstrated,
                        fold: None,
                    })
                })
                .collect(),
            spec: None,
        }
    }

    fn fold_sizes(m: &Manifest, k: usize) -> Vec<usize> {
        let mut sizes = vec![0; k];
        let mut seen = BTreeSet::new();
        for e in &m.entries {
            if seen.insert(e.participant_id) {
                sizes[e.fold.unwrap()] += 1;
            }
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }

    #[test]
    fn balanced_participant_disjoint_folds() {
        let m = manifest(10).kfold(5, 3).unwrap();
        assert_eq!(fold_sizes(&m, 5), vec![2; 5]);
        let m = manifest(11).kfold(5, 3).unwrap();
        assert_eq!(fold_sizes(&m, 5), vec![3, 2, 2, 2, 2]);
        let mut by_participant = HashMap::new();
        for e in &m.entries {
            assert_eq!(*by_participant.entry(e.participant_id).or_insert(e.fold), e.fold);
        }
        assert_eq!(manifest(10).kfold(5, 3).unwrap(), manifest(10).kfold(5, 3).unwrap());
    }

    #[test]
    fn too_few_participants() {
        assert!(matches!(manifest(4).kfold(5, 0), Err(DatasetError::Input(_))));
        assert!(manifest(4).kfold(0, 0).is_err());
    }

    #[test]
    fn disk_round_trip() {
        let spec = GenSpec {
            participants: 2,
            clips_per_class_per_participant: 1,
            classes: vec![3, 25],
            frames: 2,
            height: 6,
            width: 6,
            ..GenSpec::default()
        };
        let (clips, m) = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &clips, &m).unwrap();
        let back = Manifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.load_clips(dir.path()).unwrap(), clips);
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(Manifest::from_jsonl(&text).unwrap(), m.entries);
    }
}
