//! `meta.txt` corpus indexes and on-disk synthetic corpora.
//!
//! Each non-empty line of `meta.txt` is `relative/path<TAB>label`, with an
//! optional third column naming the split (`train`, `eval` or `foldN`).
//! Lines without one belong to the training split.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use scenecam_core::corpus::{LabeledAudio, Split, SynthCorpus};

use crate::atomic::write_atomic_str;
use crate::error::{Error, Result};
use crate::wav::{read_wav, write_wav};

pub const META_FILE: &str = "meta.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub audio_path: String,
    pub scene_label: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub entries: Vec<IndexEntry>,
    pub label_set: Vec<String>,
}

impl DatasetIndex {
    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_set.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &IndexEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Listed files that do not exist under the root.
    pub fn missing(&self) -> Vec<PathBuf> {
        self.entries
            .iter()
            .map(|e| self.root.join(&e.audio_path))
            .filter(|p| !p.is_file())
            .collect()
    }

    /// Reads every recording of `split`, in index order.
    pub fn load_split(&self, split: Split) -> Result<Vec<LabeledAudio>> {
        let entries: Vec<&IndexEntry> = self.entries_in(split).collect();
        entries
            .par_iter()
            .map(|e| {
                let label = self.label_id(&e.scene_label).expect("label_set covers all entries");
                Ok(LabeledAudio {
                    waveform: read_wav(&self.root.join(&e.audio_path))?,
                    label,
                })
            })
            .collect()
    }
}

/// Parses the text of a meta file; `path` is only used in messages.
pub fn parse_index(text: &str, root: &Path, path: &Path) -> Result<DatasetIndex> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let parse = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if !(2..=3).contains(&cols.len()) || cols[0].is_empty() || cols[1].is_empty() {
            return Err(parse(format!("expected 'path<TAB>label[<TAB>split]', got '{line}'")));
        }
        let split = match cols.get(2) {
            Some(s) => s.parse().map_err(|_| parse(format!("unknown split '{s}'")))?,
            None => Split::Train,
        };
        if !seen.insert(cols[0]) {
            return Err(Error::Duplicate {
                path: path.to_path_buf(),
                entry: cols[0].to_string(),
            });
        }
        entries.push(IndexEntry {
            audio_path: cols[0].to_string(),
            scene_label: cols[1].to_string(),
            split,
        });
    }
    if entries.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "no entries".into(),
        });
    }
    let mut label_set: Vec<String> = entries.iter().map(|e| e.scene_label.clone()).collect();
    label_set.sort();
    label_set.dedup();
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        entries,
        label_set,
    })
}

/// Reads `root/meta.txt`. Missing audio is not an error here; see
/// [`DatasetIndex::missing`].
pub fn load_dcase_index(root: &Path) -> Result<DatasetIndex> {
    let path = root.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_index(&text, root, &path)
}

pub fn index_text(index: &DatasetIndex) -> String {
    index
        .entries
        .iter()
        .map(|e| format!("{}\t{}\t{}\n", e.audio_path, e.scene_label, e.split))
        .collect()
}

/// Writes every recording as a WAV under `root/audio/` plus the meta file.
pub fn write_synth(root: &Path, corpus: &SynthCorpus) -> Result<DatasetIndex> {
    corpus
        .items
        .par_iter()
        .map(|item| write_wav(&root.join("audio").join(&item.name), &item.waveform))
        .collect::<Result<Vec<()>>>()?;
    let mut label_set = corpus.labels.clone();
    label_set.sort();
    let index = DatasetIndex {
        root: root.to_path_buf(),
        entries: corpus
            .items
            .iter()
            .map(|item| IndexEntry {
                audio_path: format!("audio/{}", item.name),
                scene_label: corpus.labels[item.label].clone(),
                split: item.split,
            })
            .collect(),
        label_set,
    };
    write_atomic_str(&root.join(META_FILE), &index_text(&index))?;
    Ok(index)
}
