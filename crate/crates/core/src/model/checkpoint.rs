//! Checkpoint layout:
//!
//! ```text
//! SGCNCKPT 1
//! stream <name>
//! parents <p0> <p1> ...        (`-` marks the root)
//! in_channels <c>
//! classes <k>
//! blocks <width>:<stride> ...
//! attention <kernel> <activation> <on|off>
//! dilations <d1> <d2> <d3> <d4>
//! input_mean <m0> ...
//! input_std <s0> ...
//! param <name> <d0>x<d1>...    (one per tensor, declaration order)
//! end
//! <f32 little-endian payload, tensors concatenated in header order>
//! ```

use std::path::Path;

use crate::autodiff::{Activation, Tensor};
use crate::error::{Error, Result};
use crate::graph::SkeletonTopology;
use crate::io::container::{self, exact_fields, parse_field};

use super::{InputNorm, Model, NetworkConfig, ParamSet, StreamGcn};

const MAGIC: &str = "SGCNCKPT";
const VERSION: u32 = 1;

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let cfg = model.network.config();
    let mut h = String::new();
    h.push_str(&format!("{MAGIC} {VERSION}\n"));
    h.push_str(&format!("stream {}\n", model.stream));
    h.push_str(&format!(
        "parents {}\n",
        container::format_parents(model.topology.parents())
    ));
    h.push_str(&format!("in_channels {}\n", cfg.in_channels));
    h.push_str(&format!("classes {}\n", cfg.num_classes));
    let blocks: Vec<String> = cfg
        .blocks
        .iter()
        .map(|b| format!("{}:{}", b.channels, b.stride))
        .collect();
    h.push_str(&format!("blocks {}\n", blocks.join(" ")));
    h.push_str(&format!(
        "attention {} {} {}\n",
        cfg.attention.kernel_size,
        cfg.attention.activation,
        if cfg.attention.enabled { "on" } else { "off" }
    ));
    h.push_str(&format!("dilations {}\n", join(&cfg.dilations)));
    h.push_str(&format!("input_mean {}\n", join(&model.norm.mean)));
    h.push_str(&format!("input_std {}\n", join(&model.norm.std)));
    for (name, t) in model.params.names().iter().zip(model.params.tensors()) {
        h.push_str(&format!(
            "param {name} {}\n",
            join(t.shape()).replace(' ', "x")
        ));
    }
    h.push_str("end\n");
    let mut out = h.into_bytes();
    for t in model.params.tensors() {
        container::write_f32s(&mut out, t.data().iter().copied());
    }
    out
}

fn floats(line: usize, what: &str, fields: &[&str]) -> Result<Vec<f64>> {
    fields.iter().map(|f| parse_field(line, what, f)).collect()
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Model> {
    let c = container::split(bytes, MAGIC, VERSION)?;
    let mut h = c.header;
    let (no, f) = h.expect("stream")?;
    let stream = parse_field(no, "stream name", exact_fields(no, "stream", &f, 1)?[0])?;
    let (no, f) = h.expect("parents")?;
    let topology = SkeletonTopology::from_parents(container::parse_parents(no, &f)?)?;
    let (no, f) = h.expect("in_channels")?;
    let in_channels: usize = parse_field(
        no,
        "channel count",
        exact_fields(no, "in_channels", &f, 1)?[0],
    )?;
    let (no, f) = h.expect("classes")?;
    let classes: usize = parse_field(no, "class count", exact_fields(no, "classes", &f, 1)?[0])?;
    let (no, f) = h.expect("blocks")?;
    let blocks = f
        .iter()
        .map(|b| {
            let (w, s) = b
                .split_once(':')
                .ok_or_else(|| Error::parse_line(no, format!("block `{b}` is not width:stride")))?;
            Ok((
                parse_field(no, "block width", w)?,
                parse_field(no, "block stride", s)?,
            ))
        })
        .collect::<Result<Vec<(usize, usize)>>>()?;
    let mut cfg = NetworkConfig::with_blocks(topology.num_joints(), classes, &blocks);
    cfg.in_channels = in_channels;
    let (no, f) = h.expect("attention")?;
    let f = exact_fields(no, "attention", &f, 3)?;
    cfg.attention.kernel_size = parse_field(no, "attention kernel", f[0])?;
    cfg.attention.activation = parse_field::<Activation>(no, "activation", f[1])?;
    cfg.attention.enabled = match f[2] {
        "on" => true,
        "off" => false,
        other => {
            return Err(Error::parse_line(
                no,
                format!("attention flag `{other}` is not on/off"),
            ))
        }
    };
    let (no, f) = h.expect("dilations")?;
    let f = exact_fields(no, "dilations", &f, 4)?;
    for (d, s) in cfg.dilations.iter_mut().zip(f) {
        *d = parse_field(no, "dilation", s)?;
    }
    let (no, f) = h.expect("input_mean")?;
    let mean = floats(no, "mean", &f)?;
    let (no, f) = h.expect("input_std")?;
    let std = floats(no, "std", &f)?;
    let network = StreamGcn::new(cfg)?;

    let mut names = Vec::new();
    let mut shapes = Vec::new();
    while let Some((no, f)) = h.optional("param")? {
        let f = exact_fields(no, "param", &f, 2)?;
        let shape = f[1]
            .split('x')
            .map(|d| parse_field(no, "dimension", d))
            .collect::<Result<Vec<usize>>>()?;
        names.push(f[0].to_string());
        shapes.push((no, shape));
    }
    h.finish()?;
    if names.len() != network.specs().len() {
        return Err(Error::Format(format!(
            "checkpoint lists {} tensors, configuration needs {}",
            names.len(),
            network.specs().len()
        )));
    }
    let mut cursor = 0;
    let mut tensors = Vec::with_capacity(names.len());
    for (spec, (no, shape)) in network.specs().iter().zip(shapes) {
        if spec.shape != shape {
            return Err(Error::parse_line(
                no,
                format!(
                    "tensor {} has shape {shape:?}, expected {:?}",
                    spec.name, spec.shape
                ),
            ));
        }
        let n = shape.iter().product();
        let data = container::read_f32s(&c.payload, &mut cursor, n)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("checkpoint tensor {}", spec.name)));
        }
        tensors.push(Tensor::new(shape, data)?);
    }
    container::finish_payload(&c.payload, cursor)?;
    let params = ParamSet::new(names, tensors)?;
    Model::new(network, params, topology, stream, InputNorm { mean, std })
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    read_checkpoint(&std::fs::read(path)?)
}
