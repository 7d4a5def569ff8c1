//! Binary checkpoint format (`.glnc`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "GLNC"
//! version  u32      currently 1
//! builder  u32 len + utf8   builder name
//! d        u32
//! depth    u32
//! seed     u64
//! out_size u32
//! order    u8       0 = upsampling stream on channel 0
//! layers   u32      layer count
//!   per layer:
//!     name   u32 len + utf8
//!     kind   u8
//!     params u8     0 or 2
//!     per param (weights, then biases):
//!       rank u8, dims u32 x rank, values f32-LE x product(dims)
//! optstate u8       1 if momentum buffers follow (same shapes/order)
//! ```
//!
//! Values are always stored as f32 regardless of the runtime precision.
//! Writing is deterministic, so save -> load -> save is byte-identical.

use std::fs;
use std::path::Path;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{BuilderDescriptor, NetworkGraph};
use crate::models;
use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 4] = b"GLNC";
const VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn string(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn tensor<T: Element>(&mut self, t: &Tensor<T>) {
        let dims = t.shape().dims();
        self.u8(dims.len() as u8);
        for &d in dims {
            self.u32(d as u32);
        }
        for v in t.values() {
            self.buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 4096 {
            return Err(Error::Checkpoint(format!("implausible string length {len}")));
        }
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("non-utf8 string".into()))
    }

    fn tensor<T: Element>(&mut self) -> Result<Tensor<T>> {
        let rank = self.u8()? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Checkpoint(format!("bad tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        let shape = Shape::new(dims).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = shape.numel();
        let raw = self.take(4 * n)?;
        let values: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_c(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        Tensor::from_values(shape, values).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    fn done(&self) -> bool {
        self.pos == self.data.len()
    }
}

/// Serialize a graph to checkpoint bytes.
pub fn encode<T: Element>(graph: &NetworkGraph<T>, with_optimizer: bool) -> Vec<u8> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    let d = &graph.descriptor;
    w.string(&d.builder);
    w.u32(d.d);
    w.u32(d.depth);
    w.u64(d.seed);
    w.u32(d.out_size);
    w.u8(d.channel_order);
    w.u32(graph.layers.len() as u32);
    for layer in &graph.layers {
        w.string(&layer.name);
        w.u8(layer.spec.kind.tag());
        match layer.state.params.as_ref() {
            None => w.u8(0),
            Some(p) => {
                w.u8(2);
                w.tensor(&p.weights);
                w.tensor(&p.biases);
            }
        }
    }
    w.u8(with_optimizer as u8);
    if with_optimizer {
        for layer in &graph.layers {
            if let Some(p) = layer.state.params.as_ref() {
                w.tensor(&p.vel_w);
                w.tensor(&p.vel_b);
            }
        }
    }
    w.buf
}

/// Rebuild the graph named by a descriptor, at its stored size and seed.
fn rebuild<T: Element>(desc: &BuilderDescriptor, ln_in_channels: usize) -> Result<NetworkGraph<T>> {
    let d = desc.d as usize;
    let depth = desc.depth as usize;
    let out = desc.out_size as usize;
    match desc.builder.as_str() {
        "gln" => models::build_gln_sized(d, depth, out, desc.seed),
        "gn" => models::build_gn_sized(d, out, desc.seed),
        "gn-only" => models::build_gn_only_sized(d, out, desc.seed),
        "ln-only" => models::build_ln_only_sized(d, depth, out, desc.seed),
        "ln" => models::build_ln(depth, ln_in_channels, desc.seed),
        "discriminator" => models::build_discriminator_sized(out, desc.seed),
        other => Err(Error::Checkpoint(format!("unknown builder '{other}'"))),
    }
}

/// Decode checkpoint bytes into a graph of element type `T`.
pub fn decode<T: Element>(data: &[u8]) -> Result<NetworkGraph<T>> {
    let mut r = Reader::new(data);
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic (not a .glnc file)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let desc = BuilderDescriptor {
        builder: r.string()?,
        d: r.u32()?,
        depth: r.u32()?,
        seed: r.u64()?,
        out_size: r.u32()?,
        channel_order: r.u8()?,
    };
    let layer_count = r.u32()? as usize;

    struct Record<T> {
        name: String,
        kind_tag: u8,
        params: Option<(Tensor<T>, Tensor<T>)>,
    }
    let mut records: Vec<Record<T>> = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let name = r.string()?;
        let kind_tag = r.u8()?;
        let n_params = r.u8()?;
        let params = match n_params {
            0 => None,
            2 => Some((r.tensor()?, r.tensor()?)),
            other => return Err(Error::Checkpoint(format!("bad param count {other}"))),
        };
        records.push(Record { name, kind_tag, params });
    }

    // The refinement-only builder needs its input channel count, which is
    // the second weight dimension of the first conv record.
    let ln_in_channels = records
        .first()
        .and_then(|rec| rec.params.as_ref())
        .map(|(w, _)| w.shape().dims().get(1).copied().unwrap_or(1))
        .unwrap_or(1);
    let mut graph = rebuild::<T>(&desc, ln_in_channels)?;
    if graph.layers.len() != records.len() {
        return Err(Error::Checkpoint(format!(
            "layer count {} does not match builder '{}' ({} layers)",
            records.len(),
            desc.builder,
            graph.layers.len()
        )));
    }
    for (layer, rec) in graph.layers.iter_mut().zip(&records) {
        if layer.name != rec.name || layer.spec.kind.tag() != rec.kind_tag {
            return Err(Error::Checkpoint(format!(
                "layer mismatch: checkpoint has {} (kind {}), builder expects {} (kind {})",
                rec.name,
                rec.kind_tag,
                layer.name,
                layer.spec.kind.tag()
            )));
        }
        match (layer.state.params.as_mut(), rec.params.as_ref()) {
            (None, None) => {}
            (Some(p), Some((weights, biases))) => {
                if p.weights.shape() != weights.shape() || p.biases.shape() != biases.shape() {
                    return Err(Error::Checkpoint(format!(
                        "shape mismatch in layer {}: {} / {} vs {} / {}",
                        rec.name,
                        weights.shape(),
                        biases.shape(),
                        p.weights.shape(),
                        p.biases.shape()
                    )));
                }
                p.weights = weights.clone();
                p.biases = biases.clone();
            }
            _ => {
                return Err(Error::Checkpoint(format!(
                    "parameter presence mismatch in layer {}",
                    rec.name
                )))
            }
        }
    }
    let has_optimizer = r.u8()? != 0;
    if has_optimizer {
        for layer in graph.layers.iter_mut() {
            if let Some(p) = layer.state.params.as_mut() {
                let vw: Tensor<T> = r.tensor()?;
                let vb: Tensor<T> = r.tensor()?;
                if vw.shape() != p.weights.shape() || vb.shape() != p.biases.shape() {
                    return Err(Error::Checkpoint("optimizer state shape mismatch".into()));
                }
                p.vel_w = vw;
                p.vel_b = vb;
            }
        }
    }
    if !r.done() {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    graph.descriptor = desc;
    Ok(graph)
}

pub fn save_checkpoint<T: Element>(
    graph: &NetworkGraph<T>,
    path: &Path,
    with_optimizer: bool,
) -> Result<()> {
    fs::write(path, encode(graph, with_optimizer))?;
    Ok(())
}

pub fn load_checkpoint<T: Element>(path: &Path) -> Result<NetworkGraph<T>> {
    let data = fs::read(path)?;
    decode(&data)
}
