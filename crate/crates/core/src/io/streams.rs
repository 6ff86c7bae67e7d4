//! Extracted streams: text header, then the six tensors as little-endian
//! `f32`, each stored frame-major (`frame, joint, xyz`).
//!
//! ```text
//! SGCNSTREAMS 1
//! joints <n>
//! frames <m>
//! parents <p0> ...
//! label <k>                (optional)
//! classes <name0> ...      (optional)
//! stream <name>            (six lines, canonical order)
//! end
//! <payload>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::kinematics::{StreamKind, StreamSet, VectorSeries};

use super::container::{self, exact_fields, format_parents, parse_field, parse_parents};

const MAGIC: &str = "SGCNSTREAMS";
const VERSION: u32 = 1;

/// Values are stored at 32-bit precision; a load returns the stored values
/// widened back to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamsFile {
    pub topology: SkeletonTopology,
    pub label: Option<usize>,
    pub class_names: Vec<String>,
    pub streams: StreamSet,
}

pub fn write_streams(file: &StreamsFile) -> Vec<u8> {
    let s = &file.streams;
    let mut h = String::new();
    let _ = writeln!(h, "{MAGIC} {VERSION}");
    let _ = writeln!(h, "joints {}", s.joints());
    let _ = writeln!(h, "frames {}", s.frames());
    let _ = writeln!(h, "parents {}", format_parents(file.topology.parents()));
    if let Some(l) = file.label {
        let _ = writeln!(h, "label {l}");
    }
    if !file.class_names.is_empty() {
        let _ = writeln!(h, "classes {}", file.class_names.join(" "));
    }
    for kind in StreamKind::ALL {
        let _ = writeln!(h, "stream {kind}");
    }
    h.push_str("end\n");
    let mut out = h.into_bytes();
    for (_, series) in s.iter() {
        container::write_f32s(
            &mut out,
            series
                .as_slice()
                .iter()
                .flat_map(|v| v.iter().map(|&c| c as f32)),
        );
    }
    out
}

pub fn parse_streams(bytes: &[u8]) -> Result<StreamsFile> {
    let c = container::split(bytes, MAGIC, VERSION)?;
    let mut h = c.header;
    let (no, f) = h.expect("joints")?;
    let joints: usize = parse_field(no, "joint count", exact_fields(no, "joints", &f, 1)?[0])?;
    let (no, f) = h.expect("frames")?;
    let frames: usize = parse_field(no, "frame count", exact_fields(no, "frames", &f, 1)?[0])?;
    let (no, f) = h.expect("parents")?;
    let parents = parse_parents(no, &f)?;
    if parents.len() != joints {
        return Err(Error::parse_line(
            no,
            format!("{} parents for {joints} joints", parents.len()),
        ));
    }
    let topology = SkeletonTopology::from_parents(parents)?;
    let label = match h.optional("label")? {
        Some((no, f)) => Some(parse_field(
            no,
            "label",
            exact_fields(no, "label", &f, 1)?[0],
        )?),
        None => None,
    };
    let class_names = match h.optional("classes")? {
        Some((_, f)) => f.iter().map(|s| s.to_string()).collect(),
        None => Vec::new(),
    };
    for kind in StreamKind::ALL {
        let (no, f) = h.expect("stream")?;
        let name = exact_fields(no, "stream", &f, 1)?[0];
        if name != kind.name() {
            return Err(Error::parse_line(
                no,
                format!("expected stream `{kind}`, found `{name}`"),
            ));
        }
    }
    h.finish()?;
    if frames < 2 || joints == 0 {
        return Err(Error::Format(format!(
            "{frames} frames x {joints} joints is not a valid sequence"
        )));
    }
    let mut cursor = 0;
    let mut series = Vec::with_capacity(6);
    for kind in StreamKind::ALL {
        let raw = container::read_f32s(&c.payload, &mut cursor, frames * joints * 3)?;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("stream {kind}")));
        }
        let data = raw
            .chunks_exact(3)
            .map(|v| nalgebra::Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64))
            .collect();
        series.push(VectorSeries::from_vec(frames, joints, data)?);
    }
    container::finish_payload(&c.payload, cursor)?;
    let streams: [VectorSeries; 6] = series.try_into().expect("six streams");
    Ok(StreamsFile {
        topology,
        label,
        class_names,
        streams: StreamSet::new(streams)?,
    })
}

pub fn save_streams(file: &StreamsFile, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_streams(file))?;
    Ok(())
}

pub fn load_streams(path: impl AsRef<Path>) -> Result<StreamsFile> {
    parse_streams(&std::fs::read(path)?)
}
