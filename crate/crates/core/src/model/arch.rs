use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::density::{ChainShape, SCALE_MIN};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Factorized,
    Hyperprior,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistortionKind {
    Mse,
    Msssim,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Factorized => 0,
            ModelKind::Hyperprior => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Factorized),
            1 => Some(ModelKind::Hyperprior),
            _ => None,
        }
    }
}

impl DistortionKind {
    pub fn tag(self) -> u8 {
        match self {
            DistortionKind::Mse => 0,
            DistortionKind::Msssim => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DistortionKind::Mse),
            1 => Some(DistortionKind::Msssim),
            _ => None,
        }
    }

    /// Factor applied to the distortion before `λ`, so that one λ grid gives
    /// comparable rates for both kinds. Squared error is measured on `[0, 1]`
    /// pixels and rescaled to the 8-bit range.
    pub fn loss_scale(self) -> f64 {
        match self {
            DistortionKind::Mse => 255.0 * 255.0,
            DistortionKind::Msssim => 1300.0,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Factorized => "factorized",
            ModelKind::Hyperprior => "hyperprior",
        })
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistortionKind::Mse => "mse",
            DistortionKind::Msssim => "msssim",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factorized" => Ok(ModelKind::Factorized),
            "hyperprior" => Ok(ModelKind::Hyperprior),
            _ => Err(Error::Usage(format!("unknown model kind {s:?}"))),
        }
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(DistortionKind::Mse),
            "msssim" | "ms-ssim" => Ok(DistortionKind::Msssim),
            _ => Err(Error::Usage(format!("unknown distortion {s:?}"))),
        }
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub kind: ModelKind,
    pub distortion: DistortionKind,
    /// Internal filter count.
    pub n: usize,
    /// Bottleneck filter count.
    pub m: usize,
    pub lambda: f32,
    /// Hidden widths of the per-channel densities.
    pub density: ChainShape,
    pub scale_min: f32,
}

impl Architecture {
    pub fn new(kind: ModelKind, distortion: DistortionKind, n: usize, m: usize, lambda: f32) -> Self {
        Self {
            kind,
            distortion,
            n,
            m,
            lambda,
            density: ChainShape::default(),
            scale_min: SCALE_MIN as f32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::config("architecture", "filter counts must be positive"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("architecture", "lambda must be finite and nonnegative"));
        }
        if !(self.scale_min > 0.0) {
            return Err(Error::config("architecture", "scale_min must be positive"));
        }
        Ok(())
    }

    /// Downsampling factor of the analysis transform.
    pub const LATENT_STRIDE: usize = 16;
    /// Downsampling factor of the analysis and hyper-analysis transforms.
    pub const HYPER_STRIDE: usize = 64;

    /// Padding granularity for inputs of this model.
    pub fn block(&self) -> usize {
        match self.kind {
            ModelKind::Factorized => Self::LATENT_STRIDE,
            ModelKind::Hyperprior => Self::HYPER_STRIDE,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse_and_print() {
        for k in [ModelKind::Factorized, ModelKind::Hyperprior] {
            assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
            assert_eq!(ModelKind::from_tag(k.tag()), Some(k));
        }
        for d in [DistortionKind::Mse, DistortionKind::Msssim] {
            assert_eq!(d.to_string().parse::<DistortionKind>().unwrap(), d);
            assert_eq!(DistortionKind::from_tag(d.tag()), Some(d));
        }
        assert!("jpeg".parse::<ModelKind>().is_err());
    }

    #[test]
    fn validation_rejects_degenerate_settings() {
        let mut a = Architecture::new(ModelKind::Hyperprior, DistortionKind::Mse, 8, 8, 0.01);
        assert!(a.validate().is_ok());
        a.n = 0;
        assert!(a.validate().is_err());
        a.n = 8;
        a.lambda = f32::NAN;
        assert!(a.validate().is_err());
    }
}
