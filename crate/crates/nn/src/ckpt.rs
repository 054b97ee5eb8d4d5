//! `CKPT1` checkpoint format.
//!
//! Layout: 5 magic bytes `CKPT1`, little-endian `u32` header length, a
//! UTF-8 header, then all payloads as little-endian IEEE-754 32-bit
//! values. Header lines:
//!
//! ```text
//! meta <key> <value>          arbitrary metadata (model config, etc.)
//! param <name> <d0> <d1> ...  one per parameter, payload order
//! adam <step>                 flag: m then v payloads follow the params
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, TensorData};

const MAGIC: &[u8] = b"CKPT1";

pub struct Checkpoint<T> {
    pub params: ParamStore<T>,
    pub adam: Option<AdamState>,
    pub meta: BTreeMap<String, String>,
}

fn push_f32s<T: Scalar>(out: &mut Vec<u8>, values: impl Iterator<Item = T>) {
    for v in values {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
}

pub fn checkpoint_bytes<T: Scalar>(
    params: &ParamStore<T>,
    adam: Option<&AdamState>,
    meta: &BTreeMap<String, String>,
) -> Vec<u8> {
    let mut header = String::new();
    for (k, v) in meta {
        header.push_str(&format!("meta {k} {v}\n"));
    }
    for (name, t) in params.iter() {
        header.push_str(&format!("param {name}"));
        for d in &t.shape {
            header.push_str(&format!(" {d}"));
        }
        header.push('\n');
    }
    if let Some(state) = adam {
        header.push_str(&format!("adam {}\n", state.step));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (_, t) in params.iter() {
        push_f32s(&mut out, t.data.iter().cloned());
    }
    if let Some(state) = adam {
        for buf in [&state.m, &state.v] {
            for (name, _) in params.iter() {
                let zeros;
                let values = match buf.get(name) {
                    Some(v) => v,
                    None => {
                        zeros = vec![0.0; params.get(name).unwrap().data.len()];
                        &zeros
                    }
                };
                push_f32s(&mut out, values.iter().map(|v| *v as f32));
            }
        }
    }
    out
}

pub fn write_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    params: &ParamStore<T>,
    adam: Option<&AdamState>,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint_bytes(params, adam, meta)).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let fail = |reason: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(fail("missing CKPT1 magic"));
    }
    let hstart = MAGIC.len() + 4;
    let hlen =
        u32::from_le_bytes(bytes[MAGIC.len()..hstart].try_into().unwrap()) as usize;
    if bytes.len() < hstart + hlen {
        return Err(fail("truncated header"));
    }
    let header = std::str::from_utf8(&bytes[hstart..hstart + hlen])
        .map_err(|_| fail("header is not UTF-8"))?;

    let mut meta = BTreeMap::new();
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    let mut adam_step: Option<u64> = None;
    for line in header.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("meta") => {
                let k = parts.next().ok_or_else(|| fail("meta line without key"))?;
                let v: Vec<&str> = parts.collect();
                meta.insert(k.to_string(), v.join(" "));
            }
            Some("param") => {
                let name = parts.next().ok_or_else(|| fail("param line without name"))?;
                let dims: Vec<usize> = parts
                    .map(|p| p.parse().map_err(|_| fail("bad param dimension")))
                    .collect::<Result<_>>()?;
                shapes.push((name.to_string(), dims));
            }
            Some("adam") => {
                let t = parts
                    .next()
                    .ok_or_else(|| fail("adam line without step"))?
                    .parse()
                    .map_err(|_| fail("bad adam step"))?;
                adam_step = Some(t);
            }
            Some(other) => return Err(fail(&format!("unknown header line kind {other:?}"))),
            None => {}
        }
    }

    let total: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let sections = if adam_step.is_some() { 3 } else { 1 };
    let payload = &bytes[hstart + hlen..];
    if payload.len() != total * 4 * sections {
        return Err(fail(&format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            total * 4 * sections
        )));
    }
    let floats: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut params = ParamStore::new();
    let mut offset = 0usize;
    for (name, shape) in &shapes {
        let n: usize = shape.iter().product();
        let data: Vec<T> = floats[offset..offset + n]
            .iter()
            .map(|v| T::from_f64(*v as f64))
            .collect();
        params.insert(name.clone(), TensorData::new(shape.clone(), data)?)?;
        offset += n;
    }
    let adam = if let Some(step) = adam_step {
        let mut state = AdamState {
            step,
            ..AdamState::default()
        };
        for buf in [&mut state.m, &mut state.v] {
            for (name, shape) in &shapes {
                let n: usize = shape.iter().product();
                buf.insert(
                    name.clone(),
                    floats[offset..offset + n].iter().map(|v| *v as f64).collect(),
                );
                offset += n;
            }
        }
        Some(state)
    } else {
        None
    };
    Ok(Checkpoint { params, adam, meta })
}
