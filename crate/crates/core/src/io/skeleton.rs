//! Plain-text skeleton sequences:
//!
//! ```text
//! SKEL 1
//! joints <n>
//! frames <m>
//! parents <p0> ... <p(n-1)>      (`-` marks the root)
//! label <k>                       (optional)
//! classes <name0> <name1> ...     (optional)
//! data
//! <x y z for joint 0> <x y z for joint 1> ...   (one line per frame)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::kinematics::{MotionSequence, VectorSeries};

use super::container::{format_parents, parse_field, parse_parents};

const MAGIC: &str = "SKEL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFile {
    pub topology: SkeletonTopology,
    pub sequence: MotionSequence,
    pub class_names: Vec<String>,
}

pub fn write_skeleton(file: &SkeletonFile) -> String {
    let seq = &file.sequence;
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "joints {}", seq.joints());
    let _ = writeln!(s, "frames {}", seq.frames());
    let _ = writeln!(s, "parents {}", format_parents(file.topology.parents()));
    if let Some(l) = seq.label() {
        let _ = writeln!(s, "label {l}");
    }
    if !file.class_names.is_empty() {
        let _ = writeln!(s, "classes {}", file.class_names.join(" "));
    }
    s.push_str("data\n");
    for p in 0..seq.frames() {
        let mut first = true;
        for i in 0..seq.joints() {
            let v = seq.coords().get(p, i);
            for c in v.iter() {
                if !first {
                    s.push(' ');
                }
                first = false;
                let _ = write!(s, "{c}");
            }
        }
        s.push('\n');
    }
    s
}

fn single<'a>(no: usize, key: &str, fields: &[&'a str]) -> Result<&'a str> {
    match fields {
        [v] => Ok(v),
        _ => Err(Error::parse_line(no, format!("`{key}` takes one value"))),
    }
}

pub fn parse_skeleton(text: &str) -> Result<SkeletonFile> {
    let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l.trim()));
    let mut next = |what: &str| {
        lines.by_ref().find(|(_, l)| !l.is_empty()).ok_or_else(|| {
            Error::parse_line(
                text.lines().count() + 1,
                format!("file ended, expected {what}"),
            )
        })
    };
    let (no, head) = next("header")?;
    let mut it = head.split_whitespace();
    if it.next() != Some(MAGIC) {
        return Err(Error::Format(format!(
            "missing `{MAGIC}` magic on line {no}"
        )));
    }
    match it.next().map(str::parse::<u32>) {
        Some(Ok(VERSION)) => {}
        Some(Ok(v)) => {
            return Err(Error::Format(format!(
                "skeleton format version {v} is not supported"
            )))
        }
        _ => return Err(Error::parse_line(no, "missing format version")),
    }

    let (mut joints, mut frames, mut parents, mut label) = (None, None, None, None);
    let mut class_names = Vec::new();
    loop {
        let (no, line) = next("`data`")?;
        let mut f = line.split_whitespace();
        let key = f.next().unwrap_or("");
        let fields: Vec<&str> = f.collect();
        match key {
            "joints" => {
                joints = Some(parse_field::<usize>(
                    no,
                    "joint count",
                    single(no, key, &fields)?,
                )?)
            }
            "frames" => {
                frames = Some(parse_field::<usize>(
                    no,
                    "frame count",
                    single(no, key, &fields)?,
                )?)
            }
            "parents" => parents = Some((no, parse_parents(no, &fields)?)),
            "label" => {
                label = Some(parse_field::<usize>(
                    no,
                    "label",
                    single(no, key, &fields)?,
                )?)
            }
            "classes" => class_names = fields.iter().map(|s| s.to_string()).collect(),
            "data" => break,
            other => {
                return Err(Error::parse_line(
                    no,
                    format!("unknown header key `{other}`"),
                ))
            }
        }
    }
    let joints = joints.ok_or_else(|| Error::Format("header lacks `joints`".into()))?;
    let frames = frames.ok_or_else(|| Error::Format("header lacks `frames`".into()))?;
    let (pno, parents) = parents.ok_or_else(|| Error::Format("header lacks `parents`".into()))?;
    if parents.len() != joints {
        return Err(Error::parse_line(
            pno,
            format!("{} parents listed for {joints} joints", parents.len()),
        ));
    }
    let topology = SkeletonTopology::from_parents(parents)?;
    if let Some(l) = label {
        if !class_names.is_empty() && l >= class_names.len() {
            return Err(Error::invalid(format!(
                "label {l} outside {} classes",
                class_names.len()
            )));
        }
    }

    let mut coords = VectorSeries::zeros(frames, joints);
    for p in 0..frames {
        let (no, line) = next(&format!("frame {p}"))?;
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|s| parse_field(no, "coordinate", s))
            .collect::<Result<_>>()?;
        if values.len() != joints * 3 {
            return Err(Error::parse_line(
                no,
                format!(
                    "frame {p} has {} values, expected {}",
                    values.len(),
                    joints * 3
                ),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse_line(
                no,
                format!("frame {p} holds a non-finite coordinate"),
            ));
        }
        for i in 0..joints {
            coords.set(
                p,
                i,
                nalgebra::Vector3::new(values[3 * i], values[3 * i + 1], values[3 * i + 2]),
            );
        }
    }
    if let Some((no, _)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(Error::parse_line(
            no,
            format!("more than {frames} frames of data"),
        ));
    }
    Ok(SkeletonFile {
        topology,
        sequence: MotionSequence::new(coords, label)?,
        class_names,
    })
}

pub fn save_sequence(file: &SkeletonFile, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_skeleton(file))?;
    Ok(())
}

pub fn load_sequence(path: impl AsRef<Path>) -> Result<SkeletonFile> {
    let bytes = std::fs::read(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::parse_offset(e.valid_up_to(), "file is not valid UTF-8"))?;
    parse_skeleton(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "SKEL 1\njoints 1\nframes 2\nparents -\ndata\n0 0 0\n1 2 3.5\n";

    #[test]
    fn minimal_file_round_trips() {
        let f = parse_skeleton(MINIMAL).unwrap();
        assert_eq!(f.sequence.frames(), 2);
        assert_eq!(
            f.sequence.coords().get(1, 0),
            nalgebra::Vector3::new(1.0, 2.0, 3.5)
        );
        assert_eq!(write_skeleton(&f), MINIMAL);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = MINIMAL.replace("1 2 3.5", "1 2 x");
        match parse_skeleton(&bad) {
            Err(Error::Parse { location, .. }) => {
                assert_eq!(location, crate::error::Location::Line(7))
            }
            other => panic!("unexpected {other:?}"),
        }
        let short = MINIMAL.replace("1 2 3.5", "1 2");
        assert!(matches!(parse_skeleton(&short), Err(Error::Parse { .. })));
        let truncated = &MINIMAL[..MINIMAL.len() - 8];
        assert!(parse_skeleton(truncated).is_err());
        assert!(matches!(parse_skeleton("SKEL 2\n"), Err(Error::Format(_))));
        assert!(matches!(parse_skeleton("hello\n"), Err(Error::Format(_))));
        let nan = MINIMAL.replace("1 2 3.5", "1 2 NaN");
        assert!(parse_skeleton(&nan).is_err());
        let extra = format!("{MINIMAL}4 5 6\n");
        assert!(parse_skeleton(&extra).is_err());
    }
}
