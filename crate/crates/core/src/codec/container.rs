//! Compressed file layout, version 1. Integers are little-endian.
//!
//! | offset | size | field                                        |
//! |-------:|-----:|----------------------------------------------|
//! | 0      | 4    | magic `BMSH`                                 |
//! | 4      | 2    | format version                               |
//! | 6      | 1    | model kind (0 factorized, 1 hyperprior)      |
//! | 7      | 1    | distortion (0 mse, 1 msssim)                 |
//! | 8      | 4    | λ as f32                                     |
//! | 12     | 8    | model hash                                   |
//! | 20     | 4    | width                                        |
//! | 24     | 4    | height                                       |
//! | 28     | 4    | padded width                                 |
//! | 32     | 4    | padded height                                |
//! | 36     | 4    | side-information segment length              |
//! | 40     | 4    | latent segment length                        |
//! | 44     | 8    | first 8 bytes of SHA-256 over bytes 0..44    |
//! | 52     | …    | side-information segment, latent segment     |

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{DistortionKind, ModelKind};
use crate::wire::{Reader, Writer};

pub const MAGIC: [u8; 4] = *b"BMSH";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 52;
/// Largest accepted width or height.
pub const MAX_EXTENT: u32 = 1 << 15;

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub kind: ModelKind,
    pub distortion: DistortionKind,
    pub lambda: f32,
    pub model_hash: [u8; 8],
    pub width: u32,
    pub height: u32,
    pub padded_width: u32,
    pub padded_height: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: Header,
    /// Coded side information; empty for the factorized model.
    pub side: Vec<u8>,
    pub latents: Vec<u8>,
}

pub fn check_dimensions(width: u64, height: u64) -> Result<()> {
    if width == 0 || height == 0 || width > MAX_EXTENT as u64 || height > MAX_EXTENT as u64 {
        return Err(Error::Dimensions { width, height });
    }
    Ok(())
}

fn checksum(bytes: &[u8]) -> [u8; 8] {
    Sha256::digest(bytes)[..8].try_into().expect("digest is 32 bytes")
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut w = Writer::default();
        w.raw(&MAGIC);
        w.u16(VERSION);
        w.u8(h.kind.tag());
        w.u8(h.distortion.tag());
        w.f32(h.lambda);
        w.raw(&h.model_hash);
        w.u32(h.width);
        w.u32(h.height);
        w.u32(h.padded_width);
        w.u32(h.padded_height);
        w.u32(self.side.len() as u32);
        w.u32(self.latents.len() as u32);
        let sum = checksum(&w.bytes);
        w.raw(&sum);
        w.raw(&self.side);
        w.raw(&self.latents);
        w.bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "compressed stream");
        let magic = r.magic()?;
        if magic != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version.into(),
                supported: VERSION.into(),
            });
        }
        let kind = r.u8()?;
        let distortion = r.u8()?;
        let lambda = r.f32()?;
        let model_hash: [u8; 8] = r.take(8)?.try_into().expect("8 bytes");
        let (width, height) = (r.u32()?, r.u32()?);
        let (padded_width, padded_height) = (r.u32()?, r.u32()?);
        let (side_len, latent_len) = (r.u32()? as usize, r.u32()? as usize);
        let stored: [u8; 8] = r.take(8)?.try_into().expect("8 bytes");
        if stored != checksum(&bytes[..HEADER_LEN - 8]) {
            return Err(Error::HeaderChecksum);
        }
        let kind = ModelKind::from_tag(kind)
            .ok_or_else(|| Error::CorruptStream(format!("unknown model kind {kind}")))?;
        let distortion = DistortionKind::from_tag(distortion)
            .ok_or_else(|| Error::CorruptStream(format!("unknown distortion {distortion}")))?;
        check_dimensions(width.into(), height.into())?;
        if padded_width < width || padded_height < height {
            return Err(Error::CorruptStream("padded extents smaller than the image".into()));
        }
        let side = r.take(side_len)?.to_vec();
        let latents = r.take(latent_len)?.to_vec();
        if r.remaining() != 0 {
            return Err(Error::CorruptStream(format!("{} bytes after the last segment", r.remaining())));
        }
        Ok(Self {
            header: Header {
                kind,
                distortion,
                lambda,
                model_hash,
                width,
                height,
                padded_width,
                padded_height,
            },
            side,
            latents,
        })
    }
}
