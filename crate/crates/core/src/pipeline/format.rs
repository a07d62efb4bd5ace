//! Tensor and weights files.
//!
//! Tensor file, little-endian: 8-byte magic, u16 version, u8 dtype
//! (0 = f32, 1 = i32), u8 ndim, `ndim` u32 dims, raw data.
//!
//! Weights file: 8-byte magic, u16 version, u32 manifest length, a UTF-8
//! `key=value` manifest (one pair per line), u32 entry count, then per entry
//! u16 name length, name, u64 offset, u64 length. Offsets are relative to the
//! blob area that follows the index; each blob is a tensor file.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{HyperLayer, ModelDims, ModelWeights};
use crate::context::ContextModel;
use crate::entropy::{EntropyParametersNet, FactorizedPmf};
use crate::tensor::{Activation, ConvLayer, MaskedConvLayer, Tensor};
use crate::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 8] = b"MSCTENS1";
pub const TENSOR_FORMAT_VERSION: u16 = 1;
pub const WEIGHTS_MAGIC: &[u8; 8] = b"MSCWGT01";
pub const WEIGHTS_FORMAT_VERSION: u16 = 1;

/// Largest magnitude an i32 tensor element may have so it survives f32 storage exactly.
const MAX_EXACT_INT: i64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    I32,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I32 => 1,
        }
    }
}

struct Array {
    dims: Vec<usize>,
    data: Vec<f32>,
}

fn array_to_bytes(dims: &[usize], dtype: DType, data: &[f32]) -> Result<Vec<u8>> {
    let ndim = u8::try_from(dims.len()).map_err(|_| Error::Argument("too many tensor dims".into()))?;
    let count: usize = dims.iter().product();
    if count != data.len() {
        return Err(Error::Internal(format!("{} values for dims {dims:?}", data.len())));
    }
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + 4 * data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_FORMAT_VERSION.to_le_bytes());
    out.push(dtype.tag());
    out.push(ndim);
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Argument(format!("tensor dim {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        DType::F32 => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::I32 => {
            for &v in data {
                if v.fract() != 0.0 || (v as i64).abs() > MAX_EXACT_INT {
                    return Err(Error::Argument(format!("value {v} is not an exactly representable integer")));
                }
                out.extend_from_slice(&(v as i32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

fn parse_err(what: &str, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{what}: {msg}"))
}

/// Parses one tensor file occupying all of `bytes`.
fn array_from_bytes(bytes: &[u8], what: &str) -> Result<Array> {
    let need = |n: usize, field: &str| {
        if bytes.len() < n {
            Err(parse_err(what, format!("truncated reading {field} ({} of {n} bytes)", bytes.len())))
        } else {
            Ok(())
        }
    };
    need(8, "magic")?;
    if &bytes[..8] != TENSOR_MAGIC {
        return Err(parse_err(what, "bad magic: expected \"MSCTENS1\""));
    }
    need(12, "header")?;
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != TENSOR_FORMAT_VERSION {
        return Err(parse_err(
            what,
            format!("unsupported version {version}, expected {TENSOR_FORMAT_VERSION}"),
        ));
    }
    let dtype = match bytes[10] {
        0 => DType::F32,
        1 => DType::I32,
        t => return Err(parse_err(what, format!("unknown dtype tag {t}"))),
    };
    let ndim = bytes[11] as usize;
    let header = 12 + 4 * ndim;
    need(header, "dims")?;
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_le_bytes(bytes[12 + 4 * i..16 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| parse_err(what, format!("dims {dims:?} overflow")))?;
    if bytes.len() - header != count {
        return Err(parse_err(
            what,
            format!("dims {dims:?} need {count} data bytes, found {}", bytes.len() - header),
        ));
    }
    let words = bytes[header..].chunks_exact(4).map(|w| <[u8; 4]>::try_from(w).unwrap());
    let data: Vec<f32> = match dtype {
        DType::F32 => {
            let d: Vec<f32> = words.map(f32::from_le_bytes).collect();
            if d.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(what, "non-finite value"));
            }
            d
        }
        DType::I32 => {
            let mut d = Vec::with_capacity(count / 4);
            for w in words {
                let v = i32::from_le_bytes(w);
                if (v as i64).abs() > MAX_EXACT_INT {
                    return Err(parse_err(what, format!("integer {v} exceeds exact f32 range")));
                }
                d.push(v as f32);
            }
            d
        }
    };
    Ok(Array { dims, data })
}

/// Serializes an `(h, w, c)` tensor.
pub fn tensor_to_bytes(t: &Tensor, dtype: DType) -> Result<Vec<u8>> {
    let (h, w, c) = t.dims();
    array_to_bytes(&[h, w, c], dtype, t.data())
}

pub fn tensor_from_bytes(bytes: &[u8]) -> Result<Tensor> {
    let a = array_from_bytes(bytes, "tensor")?;
    match a.dims[..] {
        [h, w, c] => Tensor::from_vec(h, w, c, a.data).map_err(|e| parse_err("tensor", e)),
        _ => Err(parse_err("tensor", format!("expected 3 dims (h, w, c), got {:?}", a.dims))),
    }
}

pub fn save_tensor(t: &Tensor, path: &Path, dtype: DType) -> Result<()> {
    fs::write(path, tensor_to_bytes(t, dtype)?)?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    tensor_from_bytes(&fs::read(path)?)
}

fn activation_str(a: Activation) -> String {
    match a {
        Activation::None => "none".into(),
        Activation::LeakyRelu(s) => format!("leaky_relu:{s}"),
    }
}

fn parse_activation(key: &str, v: &str) -> Result<Activation> {
    if v == "none" {
        return Ok(Activation::None);
    }
    v.strip_prefix("leaky_relu:")
        .and_then(|s| s.parse::<f32>().ok())
        .filter(|s| s.is_finite())
        .map(Activation::LeakyRelu)
        .ok_or_else(|| parse_err("weights manifest", format!("{key}: bad activation {v:?}")))
}

struct Blobs {
    manifest: Vec<(String, String)>,
    entries: Vec<(String, Vec<u8>)>,
}

fn layer_blobs(prefix: &str, l: &ConvLayer, entries: &mut Vec<(String, Vec<u8>)>) -> Result<()> {
    entries.push((
        format!("{prefix}.weight"),
        array_to_bytes(&[l.kernel_h, l.kernel_w, l.in_channels, l.out_channels], DType::F32, &l.weights)?,
    ));
    entries.push((format!("{prefix}.bias"), array_to_bytes(&[l.out_channels], DType::F32, &l.bias)?));
    Ok(())
}

fn collect(w: &ModelWeights) -> Result<Blobs> {
    let mut m: Vec<(String, String)> = Vec::new();
    let mut kv = |k: String, v: String| m.push((k, v));
    let mut entries = Vec::new();
    kv("c_y".into(), w.dims.c_y.to_string());
    kv("c_z".into(), w.dims.c_z.to_string());
    for (layer, k) in w.context.layers().into_iter().zip([3, 5, 7]) {
        kv(format!("context.k{k}.activation"), activation_str(layer.base().activation));
        layer_blobs(&format!("context.k{k}"), layer.base(), &mut entries)?;
    }
    kv("entropy.layers".into(), w.entropy_net.layers().len().to_string());
    for (i, l) in w.entropy_net.layers().iter().enumerate() {
        kv(format!("entropy.{i}.activation"), activation_str(l.activation));
        layer_blobs(&format!("entropy.{i}"), l, &mut entries)?;
    }
    kv("hyper.layers".into(), w.hyper_decoder.len().to_string());
    for (i, h) in w.hyper_decoder.iter().enumerate() {
        let kind = match h {
            HyperLayer::Conv(_) => "conv",
            HyperLayer::Transposed(_) => "tconv",
        };
        kv(format!("hyper.{i}.kind"), kind.into());
        kv(format!("hyper.{i}.stride"), h.layer().stride.to_string());
        kv(format!("hyper.{i}.activation"), activation_str(h.layer().activation));
        layer_blobs(&format!("hyper.{i}"), h.layer(), &mut entries)?;
    }
    kv("zpmf.min".into(), w.z_pmf.z_min().to_string());
    kv("zpmf.max".into(), w.z_pmf.z_max().to_string());
    let counts = w.z_pmf.counts();
    let flat: Vec<f32> = counts.iter().flatten().copied().collect();
    entries.push((
        "zpmf.counts".into(),
        array_to_bytes(&[counts.len(), counts[0].len()], DType::F32, &flat)?,
    ));
    Ok(Blobs { manifest: m, entries })
}

/// Canonical serialization: fixed manifest order, blobs packed in index order.
pub fn weights_to_bytes(w: &ModelWeights) -> Result<Vec<u8>> {
    let blobs = collect(w)?;
    let manifest: String = blobs.manifest.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    out.extend_from_slice(&(blobs.entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, data) in &blobs.entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        offset += data.len() as u64;
    }
    for (_, data) in &blobs.entries {
        out.extend_from_slice(data);
    }
    Ok(out)
}

pub fn save_weights(w: &ModelWeights, path: &Path) -> Result<()> {
    fs::write(path, weights_to_bytes(w)?)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    weights_from_bytes(&fs::read(path)?)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(parse_err(
                "weights",
                format!("truncated reading {field} at offset {}", self.pos),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, field: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, field)?.try_into().unwrap()))
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}

struct Parsed<'a> {
    manifest: HashMap<String, String>,
    blobs: HashMap<String, &'a [u8]>,
}

impl Parsed<'_> {
    fn get(&self, key: &str) -> Result<&str> {
        self.manifest
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| parse_err("weights manifest", format!("missing key {key:?}")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| parse_err("weights manifest", format!("{key}: bad number {v:?}")))
    }

    fn array(&self, name: &str) -> Result<Array> {
        let b = self
            .blobs
            .get(name)
            .ok_or_else(|| parse_err("weights index", format!("missing blob {name:?}")))?;
        array_from_bytes(b, name)
    }

    fn layer(&self, prefix: &str, stride: usize, activation: Activation) -> Result<ConvLayer> {
        let w = self.array(&format!("{prefix}.weight"))?;
        let b = self.array(&format!("{prefix}.bias"))?;
        let [kh, kw, ci, co] = w.dims[..] else {
            return Err(parse_err(
                &format!("{prefix}.weight"),
                format!("expected 4 dims, got {:?}", w.dims),
            ));
        };
        if b.dims != [co] {
            return Err(parse_err(
                &format!("{prefix}.bias"),
                format!("dims {:?} do not match {co} output channels", b.dims),
            ));
        }
        ConvLayer::new(kh, kw, ci, co, stride, w.data, b.data, activation).map_err(|e| parse_err(prefix, e))
    }
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<ModelWeights> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8, "magic")? != WEIGHTS_MAGIC {
        return Err(parse_err("weights", "bad magic: expected \"MSCWGT01\""));
    }
    let version = c.u16("version")?;
    if version != WEIGHTS_FORMAT_VERSION {
        return Err(parse_err(
            "weights",
            format!("unsupported version {version}, expected {WEIGHTS_FORMAT_VERSION}"),
        ));
    }
    let mlen = c.u32("manifest length")? as usize;
    let text = std::str::from_utf8(c.take(mlen, "manifest")?)
        .map_err(|_| parse_err("weights manifest", "not valid UTF-8"))?;
    let mut manifest = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err("weights manifest", format!("line {line:?} has no '='")))?;
        if manifest.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(parse_err("weights manifest", format!("duplicate key {k:?}")));
        }
    }
    let count = c.u32("entry count")? as usize;
    let mut index = Vec::new();
    for i in 0..count {
        let n = c.u16("entry name length")? as usize;
        let name = std::str::from_utf8(c.take(n, "entry name")?)
            .map_err(|_| parse_err("weights index", format!("entry {i} name not UTF-8")))?
            .to_string();
        let off = c.u64("entry offset")?;
        let len = c.u64("entry length")?;
        index.push((name, off, len));
    }
    let area = &bytes[c.pos..];
    let mut blobs = HashMap::new();
    for (name, off, len) in index {
        let end = off
            .checked_add(len)
            .filter(|&e| e <= area.len() as u64)
            .ok_or_else(|| parse_err("weights index", format!("blob {name:?} runs past end of file")))?;
        let slice = &area[off as usize..end as usize];
        if blobs.insert(name.clone(), slice).is_some() {
            return Err(parse_err("weights index", format!("duplicate blob {name:?}")));
        }
    }
    let p = Parsed { manifest, blobs };

    let dims = ModelDims {
        c_y: p.num("c_y")?,
        c_z: p.num("c_z")?,
    };
    let mut branches = Vec::new();
    for k in [3, 5, 7] {
        let key = format!("context.k{k}.activation");
        let act = parse_activation(&key, p.get(&key)?)?;
        let prefix = format!("context.k{k}");
        let layer = MaskedConvLayer::new(p.layer(&prefix, 1, act)?).map_err(|e| parse_err(&prefix, e))?;
        branches.push(layer);
    }
    let l7 = branches.pop().unwrap();
    let l5 = branches.pop().unwrap();
    let l3 = branches.pop().unwrap();
    let context = ContextModel::new(l3, l5, l7)?;

    let n_entropy: usize = p.num("entropy.layers")?;
    let mut entropy = Vec::with_capacity(n_entropy);
    for i in 0..n_entropy {
        let key = format!("entropy.{i}.activation");
        let act = parse_activation(&key, p.get(&key)?)?;
        entropy.push(p.layer(&format!("entropy.{i}"), 1, act)?);
    }
    let entropy_net = EntropyParametersNet::new(entropy)?;

    let n_hyper: usize = p.num("hyper.layers")?;
    let mut hyper = Vec::with_capacity(n_hyper);
    for i in 0..n_hyper {
        let key = format!("hyper.{i}.activation");
        let act = parse_activation(&key, p.get(&key)?)?;
        let stride: usize = p.num(&format!("hyper.{i}.stride"))?;
        let layer = p.layer(&format!("hyper.{i}"), stride, act)?;
        hyper.push(match p.get(&format!("hyper.{i}.kind"))? {
            "conv" => HyperLayer::Conv(layer),
            "tconv" => HyperLayer::Transposed(layer),
            other => {
                return Err(parse_err(
                    "weights manifest",
                    format!("hyper.{i}.kind: unknown layer kind {other:?}"),
                ))
            }
        });
    }

    let z_min: i32 = p.num("zpmf.min")?;
    let z_max: i32 = p.num("zpmf.max")?;
    let table = p.array("zpmf.counts")?;
    let [rows, cols] = table.dims[..] else {
        return Err(parse_err("zpmf.counts", format!("expected 2 dims, got {:?}", table.dims)));
    };
    if rows == 0 || cols == 0 {
        return Err(parse_err("zpmf.counts", "empty table"));
    }
    let counts: Vec<Vec<f32>> = table.data.chunks_exact(cols).map(<[f32]>::to_vec).collect();
    let z_pmf = FactorizedPmf::new(z_min, z_max, counts).map_err(|e| parse_err("zpmf.counts", e))?;

    ModelWeights::new(dims, context, entropy_net, hyper, z_pmf)
}
