//! `NBQC` training checkpoints.
//!
//! ```text
//! "NBQC" | version u16 | seed u64 | epoch u64 | optimizer step u64
//! | meta length u32 | meta JSON | tensor count u32 | tensors
//! tensor = rank u8 | extents u32… | values f64…
//! ```
//!
//! All integers and floats are little-endian. The meta JSON holds the network
//! skeleton with every tensor emptied; the tensor section refills them in
//! layer order (conv weight, bias, then γ, β, running mean, running var),
//! followed by the optimizer's first and second moment slots.

use std::io::{Read, Write};

use byteorder::{LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::network::{Layer, Network};
use super::optim::OptimState;
use super::train::EpochMetrics;
use crate::error::{NbqError, Result};
use crate::quantizer::code::Counted;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NBQC";
const VERSION: u16 = 1;
const MAX_RANK: u8 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: Network,
    pub opt: OptimState,
    pub seed: u64,
    pub epoch: usize,
    /// Free-form configuration the run was started from.
    pub config_json: String,
    pub history: Vec<EpochMetrics>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    network: Network,
    config: String,
    history: Vec<EpochMetrics>,
    slots: usize,
}

fn network_tensors(net: &mut Network) -> Vec<&mut Tensor> {
    let mut out = Vec::new();
    for layer in &mut net.layers {
        match layer {
            Layer::Conv(c) => {
                out.push(&mut c.weight);
                if let Some(b) = &mut c.bias {
                    out.push(b);
                }
            }
            Layer::BatchNorm(bn) => {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
                out.push(&mut bn.running_mean);
                out.push(&mut bn.running_var);
            }
            _ => {}
        }
    }
    out
}

fn write_tensor<W: Write>(t: &Tensor, w: &mut W) -> Result<()> {
    if t.rank() > MAX_RANK as usize {
        return Err(NbqError::Unsupported(format!("tensor rank {} too large", t.rank())));
    }
    w.write_u8(t.rank() as u8)?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| NbqError::Unsupported(format!("extent {d} exceeds u32")))?;
        w.write_u32::<LittleEndian>(d)?;
    }
    for &v in t.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(c: &mut Counted<R>) -> Result<Tensor> {
    let rank = c.u8("tensor rank")?;
    if rank > MAX_RANK {
        return c.fail(format!("tensor rank {rank} exceeds {MAX_RANK}"));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(c.u32("tensor extent")? as usize);
    }
    let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let Some(len) = len.filter(|&l| l <= (1 << 31)) else {
        return c.fail(format!("tensor of shape {shape:?} is too large"));
    };
    let data = c.f64_vec(len, "tensor values")?;
    Tensor::new(shape, data)
}

pub fn write_checkpoint<W: Write>(ck: &Checkpoint, w: &mut W) -> Result<()> {
    let mut skeleton = ck.net.clone();
    skeleton.clear_caches();
    let tensors: Vec<Tensor> = network_tensors(&mut skeleton)
        .into_iter()
        .map(|t| std::mem::replace(t, Tensor::zeros(&[0])))
        .collect();
    if ck.opt.first.len() != ck.opt.second.len() {
        return Err(NbqError::State("optimizer slot lists differ in length".into()));
    }
    let meta = Meta {
        network: skeleton,
        config: ck.config_json.clone(),
        history: ck.history.clone(),
        slots: ck.opt.first.len(),
    };
    let json = serde_json::to_vec(&meta)?;
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(ck.seed)?;
    w.write_u64::<LittleEndian>(ck.epoch as u64)?;
    w.write_u64::<LittleEndian>(ck.opt.step)?;
    let len = u32::try_from(json.len()).map_err(|_| NbqError::Unsupported("checkpoint metadata too large".into()))?;
    w.write_u32::<LittleEndian>(len)?;
    w.write_all(&json)?;
    let all: Vec<&Tensor> = tensors.iter().chain(&ck.opt.first).chain(&ck.opt.second).collect();
    w.write_u32::<LittleEndian>(all.len() as u32)?;
    for t in all {
        write_tensor(t, w)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Checkpoint> {
    let mut c = Counted::new(r);
    c.magic(MAGIC)?;
    let version = c.u16("version")?;
    if version != VERSION {
        return c.fail(format!("unsupported checkpoint version {version}"));
    }
    let seed = c.u64("seed")?;
    let epoch = c.u64("epoch")? as usize;
    let step = c.u64("optimizer step")?;
    let len = c.u32("metadata length")? as usize;
    let meta_at = c.pos;
    let mut json = vec![0u8; len];
    c.exact(&mut json, "metadata")?;
    let meta: Meta = serde_json::from_slice(&json).map_err(|e| NbqError::Format {
        offset: meta_at,
        reason: format!("bad checkpoint metadata: {e}"),
    })?;
    let count = c.u32("tensor count")? as usize;
    let mut net = meta.network;
    let expected = network_tensors(&mut net).len() + 2 * meta.slots;
    if count != expected {
        return c.fail(format!("checkpoint holds {count} tensors, network needs {expected}"));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        tensors.push(read_tensor(&mut c)?);
    }
    let mut rest = tensors.into_iter();
    for slot in network_tensors(&mut net) {
        *slot = rest.next().expect("counted above");
    }
    let first: Vec<Tensor> = rest.by_ref().take(meta.slots).collect();
    let second: Vec<Tensor> = rest.collect();
    net.validate().map_err(|e| NbqError::Format { offset: meta_at, reason: format!("checkpoint network invalid: {e}") })?;
    Ok(Checkpoint {
        net,
        opt: OptimState { step, first, second },
        seed,
        epoch,
        config_json: meta.config,
        history: meta.history,
    })
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        write_checkpoint(self, &mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = bytes;
        let ck = read_checkpoint(&mut c)?;
        if !c.is_empty() {
            return Err(NbqError::Format { offset: (bytes.len() - c.len()) as u64, reason: "trailing bytes after checkpoint".into() });
        }
        Ok(ck)
    }
}
