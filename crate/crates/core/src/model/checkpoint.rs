//! Binary checkpoint format.
//!
//! All integers and reals are little-endian.
//!
//! ```text
//! magic "BMCK" | u32 version
//! u8 kind | u8 distortion | u32 N | u32 M | f32 λ | f32 scale_min
//! u32 hidden count | u32 hidden widths…
//! u32 parameter count, then per parameter:
//!     u16 name length | name | u8 reparam tag | f64 bound
//!     u8 rank | u32 dims… | f32 values…
//! u8 has_state; if 1: u64 step | f64 learning rate
//!     | f32 first moments… | f32 second moments…   (parameter order)
//! ```
//!
//! Everything before `has_state` is the model section; its SHA-256 is the
//! model identity stored in compressed streams.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::adam::Adam;
use crate::autodiff::param::Reparam;
use crate::density::ChainShape;
use crate::error::{Error, Result};
use crate::model::{Architecture, DistortionKind, Model, ModelKind};
use crate::tensor::Tensor;
use crate::wire::{Reader, Writer};

pub const MAGIC: [u8; 4] = *b"BMCK";
pub const VERSION: u32 = 1;

/// Optimizer state stored alongside the parameters for resuming.
#[derive(Clone, Debug)]
pub struct TrainingState {
    pub step: u64,
    pub adam: Adam<f32>,
}

fn model_section(model: &Model) -> Vec<u8> {
    let mut w = Writer::default();
    w.raw(&MAGIC);
    w.u32(VERSION);
    let a = &model.arch;
    w.u8(a.kind.tag());
    w.u8(a.distortion.tag());
    w.u32(a.n as u32);
    w.u32(a.m as u32);
    w.f32(a.lambda);
    w.f32(a.scale_min);
    w.u32(a.density.hidden().len() as u32);
    for &r in a.density.hidden() {
        w.u32(r as u32);
    }
    w.u32(model.store.len() as u32);
    for (_, p) in model.store.iter() {
        w.u16(p.name.len() as u16);
        w.raw(p.name.as_bytes());
        let (tag, bound) = p.reparam.tag();
        w.u8(tag);
        w.f64(bound);
        w.u8(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            w.u32(d as u32);
        }
        for &v in p.value.data() {
            w.f32(v);
        }
    }
    w.bytes
}

/// First 8 bytes of the SHA-256 of the model section.
pub fn model_hash(model: &Model) -> [u8; 8] {
    let digest = Sha256::digest(model_section(model));
    digest[..8].try_into().expect("digest is 32 bytes")
}

pub fn to_bytes(model: &Model, state: Option<&TrainingState>) -> Vec<u8> {
    let mut w = Writer {
        bytes: model_section(model),
    };
    match state {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            w.u64(s.step);
            w.f64(s.adam.learning_rate);
            let (m, v) = s.adam.moments();
            for t in m.iter().chain(v) {
                for &x in t.data() {
                    w.f32(x);
                }
            }
        }
    }
    w.bytes
}

fn read_f32s(r: &mut Reader<'_>, n: usize) -> Result<Vec<f32>> {
    let bytes = r.take(n.checked_mul(4).ok_or_else(|| Error::Truncated("size overflow".into()))?)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, Option<TrainingState>)> {
    let mut r = Reader::new(bytes, "checkpoint");
    let magic = r.magic()?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: VERSION,
        });
    }
    let kind = r.u8()?;
    let kind = ModelKind::from_tag(kind).ok_or_else(|| Error::config("checkpoint", format!("unknown model kind {kind}")))?;
    let dist = r.u8()?;
    let distortion = DistortionKind::from_tag(dist)
        .ok_or_else(|| Error::config("checkpoint", format!("unknown distortion {dist}")))?;
    let n = r.u32()? as usize;
    let m = r.u32()? as usize;
    let lambda = r.f32()?;
    let scale_min = r.f32()?;
    let depth = r.u32()? as usize;
    if depth > 64 {
        return Err(Error::config("checkpoint", format!("{depth} density stages")));
    }
    let hidden = (0..depth).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        kind,
        distortion,
        n,
        m,
        lambda,
        density: ChainShape::new(&hidden)?,
        scale_min,
    };
    let mut model = Model::<f32>::new(arch, 0)?;
    let count = r.u32()? as usize;
    if count != model.store.len() {
        return Err(Error::ShapeMismatch {
            name: "parameter table".into(),
            expected: vec![model.store.len()],
            found: vec![count],
        });
    }
    let ids: Vec<_> = model.store.ids().collect();
    for id in &ids {
        let len = r.u16()? as usize;
        let name = String::from_utf8_lossy(r.take(len)?).into_owned();
        let tag = r.u8()?;
        let bound = r.f64()?;
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let p = model.store.get_mut(*id);
        if name != p.name || dims != p.value.shape() {
            return Err(Error::ShapeMismatch {
                name: if name == p.name { name } else { format!("{} (file has `{name}`)", p.name) },
                expected: p.value.shape().to_vec(),
                found: dims,
            });
        }
        if Reparam::from_tag(tag, bound) != Some(p.reparam) {
            return Err(Error::config(&p.name, "parameterization differs from this build"));
        }
        let values = read_f32s(&mut r, p.value.len())?;
        p.value = Tensor::new(&dims, values)?;
    }
    let state = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let lr = r.f64()?;
            let mut moments = Vec::with_capacity(2 * ids.len());
            for _ in 0..2 {
                for id in &ids {
                    let shape = model.store.get(*id).value.shape().to_vec();
                    let n = shape.iter().product();
                    moments.push(Tensor::new(&shape, read_f32s(&mut r, n)?)?);
                }
            }
            let second = moments.split_off(ids.len());
            Some(TrainingState {
                step,
                adam: Adam::from_parts(lr, step, moments, second),
            })
        }
        other => return Err(Error::config("checkpoint", format!("unknown state flag {other}"))),
    };
    if r.remaining() != 0 {
        return Err(Error::config("checkpoint", format!("{} trailing bytes", r.remaining())));
    }
    Ok((model, state))
}

pub fn save(path: &Path, model: &Model, state: Option<&TrainingState>) -> Result<()> {
    // write then rename so an interrupted save never clobbers a good file
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_bytes(model, state))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, Option<TrainingState>)> {
    from_bytes(&std::fs::read(path)?)
}
