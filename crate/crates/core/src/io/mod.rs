//! File formats, datasets on disk and the synthetic motion generator.
//!
//! Byte layouts are documented in `docs/formats.md`.

mod config;
pub(crate) mod container;
mod csv;
mod skeleton;
mod streams;
mod synth;

pub use config::KeyValueConfig;
pub use csv::{read_metric_log, read_scores, write_metric_log, write_scores};
pub use skeleton::{load_sequence, parse_skeleton, save_sequence, write_skeleton, SkeletonFile};
pub use streams::{load_streams, parse_streams, save_streams, write_streams, StreamsFile};
pub use synth::{synth_generate, Band, SynthClass, SynthSpec};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::kinematics::{build_stream_set, MotionSequence, StreamKind};
use crate::train::{Sample, StreamDataset};

pub const SKELETON_EXT: &str = "skel";
pub const STREAMS_EXT: &str = "streams";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub id: String,
    pub sequence: MotionSequence,
}

/// Sequences sharing one skeleton and class table.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub topology: SkeletonTopology,
    pub class_names: Vec<String>,
    pub items: Vec<LabeledSequence>,
}

impl SequenceDataset {
    pub fn new(
        topology: SkeletonTopology,
        class_names: Vec<String>,
        items: Vec<LabeledSequence>,
    ) -> Result<Self> {
        for it in &items {
            if it.sequence.joints() != topology.num_joints() {
                return Err(Error::shape(format!(
                    "sequence {} has {} joints, skeleton has {}",
                    it.id,
                    it.sequence.joints(),
                    topology.num_joints()
                )));
            }
            match it.sequence.label() {
                Some(l) if l < class_names.len() => {}
                Some(l) => {
                    return Err(Error::invalid(format!(
                        "sequence {} has label {l} outside {} classes",
                        it.id,
                        class_names.len()
                    )))
                }
                None => return Err(Error::invalid(format!("sequence {} has no label", it.id))),
            }
        }
        Ok(Self {
            topology,
            class_names,
            items,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// One stream of every sequence, ready for training.
    pub fn stream_dataset(&self, stream: StreamKind) -> Result<StreamDataset> {
        let samples = self
            .items
            .iter()
            .map(|it| {
                let set = build_stream_set(&it.sequence, &self.topology)?;
                let series = set.get(stream);
                Ok(Sample {
                    id: it.id.clone(),
                    label: it.sequence.label().unwrap_or(0),
                    frames: series.frames(),
                    data: series.to_channels_first(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        StreamDataset::new(
            stream,
            self.topology.num_joints(),
            self.num_classes(),
            samples,
        )
    }
}

/// Files in `dir` with the given extension, sorted by name.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

fn file_id(path: &Path) -> String {
    path.file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Writes one `<id>.skel` file per sequence.
pub fn save_sequence_dir(data: &SequenceDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for it in &data.items {
        let file = SkeletonFile {
            topology: data.topology.clone(),
            sequence: it.sequence.clone(),
            class_names: data.class_names.clone(),
        };
        save_sequence(&file, dir.join(format!("{}.{SKELETON_EXT}", it.id)))?;
    }
    Ok(())
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location,
            message: format!("{}: {message}", path.display()),
        },
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Reads every `.skel` file of `dir`; all must share skeleton and classes.
pub fn load_sequence_dir(dir: &Path) -> Result<SequenceDataset> {
    let files = list_files(dir, SKELETON_EXT)?;
    let mut shared: Option<(SkeletonTopology, Vec<String>)> = None;
    let mut items = Vec::with_capacity(files.len());
    for path in &files {
        let f = with_path(path, load_sequence(path))?;
        match &shared {
            None => shared = Some((f.topology.clone(), f.class_names.clone())),
            Some((t, c)) if *t == f.topology && *c == f.class_names => {}
            Some(_) => {
                return Err(Error::invalid(format!(
                    "{} uses a different skeleton or class table",
                    path.display()
                )))
            }
        }
        items.push(LabeledSequence {
            id: file_id(path),
            sequence: f.sequence,
        });
    }
    let (topology, class_names) = shared
        .ok_or_else(|| Error::invalid(format!("no .{SKELETON_EXT} files in {}", dir.display())))?;
    SequenceDataset::new(topology, class_names, items)
}

/// Reads a skeleton file and writes its six streams.
pub fn extract_file(input: &Path, output: &Path) -> Result<()> {
    let f = with_path(input, load_sequence(input))?;
    let streams = build_stream_set(&f.sequence, &f.topology)?;
    let out = StreamsFile {
        topology: f.topology,
        label: f.sequence.label(),
        class_names: f.class_names,
        streams,
    };
    save_streams(&out, output)
}

/// Extracts every `.skel` file of `input` into `output/<id>.streams`, one
/// file per task in parallel. Returns the number of files written.
pub fn extract_dir(input: &Path, output: &Path) -> Result<usize> {
    use rayon::prelude::*;
    let files = list_files(input, SKELETON_EXT)?;
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no .{SKELETON_EXT} files in {}",
            input.display()
        )));
    }
    std::fs::create_dir_all(output)?;
    files
        .par_iter()
        .map(|p| extract_file(p, &output.join(format!("{}.{STREAMS_EXT}", file_id(p)))))
        .collect::<Result<Vec<()>>>()?;
    Ok(files.len())
}

/// Extracted streams of a directory of `.streams` files.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamsDir {
    pub topology: SkeletonTopology,
    pub num_classes: usize,
    pub files: Vec<(String, StreamsFile)>,
}

impl StreamsDir {
    pub fn stream_dataset(&self, stream: StreamKind) -> Result<StreamDataset> {
        let samples = self
            .files
            .iter()
            .map(|(id, f)| {
                let label = f
                    .label
                    .ok_or_else(|| Error::invalid(format!("streams file {id} has no label")))?;
                let series = f.streams.get(stream);
                Ok(Sample {
                    id: id.clone(),
                    label,
                    frames: series.frames(),
                    data: series.to_channels_first(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        StreamDataset::new(
            stream,
            self.topology.num_joints(),
            self.num_classes,
            samples,
        )
    }
}

/// Reads every `.streams` file of `dir`. The class count is the length of
/// the class table when present, otherwise one more than the largest label.
pub fn load_streams_dir(dir: &Path) -> Result<StreamsDir> {
    let paths = list_files(dir, STREAMS_EXT)?;
    let mut files = Vec::with_capacity(paths.len());
    for path in &paths {
        files.push((file_id(path), with_path(path, load_streams(path))?));
    }
    let first = files
        .first()
        .map(|(_, f)| f)
        .ok_or_else(|| Error::invalid(format!("no .{STREAMS_EXT} files in {}", dir.display())))?;
    let topology = first.topology.clone();
    let mut num_classes = first.class_names.len();
    for (id, f) in &files {
        if f.topology != topology {
            return Err(Error::invalid(format!(
                "streams file {id} uses a different skeleton"
            )));
        }
        num_classes = num_classes.max(f.label.map_or(0, |l| l + 1));
    }
    Ok(StreamsDir {
        topology,
        num_classes,
        files,
    })
}
