//! Parameter checkpoints: magic line, little-endian `u64` header length, a
//! JSON header, then every parameter as little-endian `f64` in slot order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 9] = b"DIPGPCK1\n";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    seed: u64,
    iteration: u64,
    shapes: Vec<Option<Vec<usize>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub iteration: u64,
}

pub fn write_checkpoint(w: &mut impl Write, params: &ParamSet, iteration: u64) -> Result<()> {
    let header = Header {
        seed: params.seed,
        iteration,
        shapes: params
            .slots()
            .iter()
            .map(|s| s.as_ref().map(|t| t.shape().to_vec()))
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in params.tensors() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let mut magic = [0u8; 9];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a parameter checkpoint".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 26 {
        return Err(Error::Format(format!("implausible header length {len}")));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut buf = [0u8; 8];
    let mut slots = Vec::with_capacity(header.shapes.len());
    for shape in header.shapes {
        slots.push(match shape {
            None => None,
            Some(shape) => {
                let n: usize = shape.iter().product();
                let mut data = Vec::with_capacity(n);
                for _ in 0..n {
                    r.read_exact(&mut buf).map_err(|e| match e.kind() {
                        std::io::ErrorKind::UnexpectedEof => {
                            Error::Format("truncated checkpoint payload".into())
                        }
                        _ => e.into(),
                    })?;
                    data.push(f64::from_le_bytes(buf));
                }
                Some(Tensor::new(shape, data)?)
            }
        });
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    Ok(Checkpoint {
        params: ParamSet::from_slots(slots, header.seed),
        iteration: header.iteration,
    })
}
