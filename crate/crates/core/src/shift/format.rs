//! `NBQF` frozen-model files.
//!
//! ```text
//! "NBQF" | version u16 | input c,h,w u32×3 | classes u32 | head u8
//! | stage count u32 | stages | spec length u32 | spec JSON
//! conv stage = 0u8 | stride u32 | pad u32 | activation | NBQK kernel block
//!              | channels u32 | scale f64… | offset f64…
//! pool stage = 1u8 (max) or 2u8 (avg) | k u32 | stride u32
//! activation = 0u8 relu | 1u8 identity | 2u8 n u8 lambda f64
//! ```
//!
//! Little-endian throughout.

use std::io::{Read, Write};

use byteorder::{LittleEndian, WriteBytesExt};

use crate::error::{NbqError, Result};
use crate::qat::{Activation, FrozenLayer, FrozenNetwork, OutputHead};
use crate::quantizer::code::{read_kernel_counted, Counted};
use crate::quantizer::write_kernel;

const MAGIC: &[u8; 4] = b"NBQF";
const VERSION: u16 = 1;

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| NbqError::Unsupported(format!("{what} {v} exceeds u32")))
}

pub fn write_frozen<W: Write>(net: &FrozenNetwork, w: &mut W) -> Result<()> {
    net.validate()?;
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    for &d in &net.input_shape {
        w.write_u32::<LittleEndian>(u32_of(d, "input extent")?)?;
    }
    w.write_u32::<LittleEndian>(u32_of(net.classes, "class count")?)?;
    w.write_u8(match net.head {
        OutputHead::Linear => 0,
        OutputHead::Softmax => 1,
    })?;
    w.write_u32::<LittleEndian>(u32_of(net.layers.len(), "stage count")?)?;
    for layer in &net.layers {
        match layer {
            FrozenLayer::Conv { kernel, stride, pad, scale, offset, act } => {
                w.write_u8(0)?;
                w.write_u32::<LittleEndian>(u32_of(*stride, "stride")?)?;
                w.write_u32::<LittleEndian>(u32_of(*pad, "pad")?)?;
                match *act {
                    Activation::Relu => w.write_u8(0)?,
                    Activation::Identity => w.write_u8(1)?,
                    Activation::Quantized { n, lambda } => {
                        w.write_u8(2)?;
                        w.write_u8(n)?;
                        w.write_f64::<LittleEndian>(lambda)?;
                    }
                }
                write_kernel(kernel, w)?;
                w.write_u32::<LittleEndian>(u32_of(scale.len(), "channel count")?)?;
                for &v in scale.iter().chain(offset) {
                    w.write_f64::<LittleEndian>(v)?;
                }
            }
            FrozenLayer::MaxPool { k, stride } | FrozenLayer::AvgPool { k, stride } => {
                w.write_u8(if matches!(layer, FrozenLayer::MaxPool { .. }) { 1 } else { 2 })?;
                w.write_u32::<LittleEndian>(u32_of(*k, "pool size")?)?;
                w.write_u32::<LittleEndian>(u32_of(*stride, "pool stride")?)?;
            }
        }
    }
    w.write_u32::<LittleEndian>(u32_of(net.spec_json.len(), "spec length")?)?;
    w.write_all(net.spec_json.as_bytes())?;
    Ok(())
}

fn read_body<R: Read>(c: &mut Counted<R>) -> Result<FrozenNetwork> {
    let version = c.u16("version")?;
    if version != VERSION {
        return c.fail(format!("unsupported frozen-model version {version}"));
    }
    let input_shape = [c.u32("input channels")? as usize, c.u32("input height")? as usize, c.u32("input width")? as usize];
    let classes = c.u32("class count")? as usize;
    let head = match c.u8("output head")? {
        0 => OutputHead::Linear,
        1 => OutputHead::Softmax,
        h => return c.fail(format!("unknown output head {h}")),
    };
    let count = c.u32("stage count")?;
    let mut layers = Vec::new();
    for _ in 0..count {
        let at = c.pos;
        let layer = match c.u8("stage tag")? {
            0 => {
                let stride = c.u32("stride")? as usize;
                let pad = c.u32("pad")? as usize;
                let act = match c.u8("activation")? {
                    0 => Activation::Relu,
                    1 => Activation::Identity,
                    2 => Activation::Quantized { n: c.u8("activation bits")?, lambda: c.f64("activation lambda")? },
                    a => return c.fail(format!("unknown activation {a}")),
                };
                let kernel = read_kernel_counted(c)?;
                let channels = c.u32("channel count")? as usize;
                if kernel.shape.first() != Some(&channels) {
                    return c.fail(format!("{channels} folded channels for kernel {:?}", kernel.shape));
                }
                let scale = c.f64_vec(channels, "scale")?;
                let offset = c.f64_vec(channels, "offset")?;
                FrozenLayer::Conv { kernel, stride, pad, scale, offset, act }
            }
            t @ (1 | 2) => {
                let k = c.u32("pool size")? as usize;
                let stride = c.u32("pool stride")? as usize;
                if t == 1 {
                    FrozenLayer::MaxPool { k, stride }
                } else {
                    FrozenLayer::AvgPool { k, stride }
                }
            }
            t => {
                return Err(NbqError::Format { offset: at, reason: format!("unknown stage tag {t}") });
            }
        };
        layers.push(layer);
    }
    let len = c.u32("spec length")? as usize;
    let at = c.pos;
    let mut buf = vec![0u8; len];
    c.exact(&mut buf, "spec JSON")?;
    let spec_json = String::from_utf8(buf).map_err(|_| NbqError::Format { offset: at, reason: "spec is not UTF-8".into() })?;
    let net = FrozenNetwork { layers, input_shape, classes, head, spec_json };
    net.validate().map_err(|e| NbqError::Format { offset: c.pos, reason: format!("frozen network invalid: {e}") })?;
    Ok(net)
}

pub fn read_frozen<R: Read>(r: &mut R) -> Result<FrozenNetwork> {
    let mut c = Counted::new(r);
    let mut magic = [0u8; 4];
    c.exact(&mut magic, "magic")?;
    match &magic {
        MAGIC => read_body(&mut c),
        b"NBQC" => Err(NbqError::State("this is a training checkpoint; freeze it before fixed-point inference".into())),
        other => Err(NbqError::Format {
            offset: 0,
            reason: format!("bad magic {:?}, expected \"NBQF\"", String::from_utf8_lossy(other)),
        }),
    }
}

impl FrozenNetwork {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        write_frozen(self, &mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rest = bytes;
        let net = read_frozen(&mut rest)?;
        if !rest.is_empty() {
            return Err(NbqError::Format {
                offset: (bytes.len() - rest.len()) as u64,
                reason: "trailing bytes after frozen model".into(),
            });
        }
        Ok(net)
    }
}
