//! Train-and-evaluate grids over filter counts and λ.
//!
//! A sweep is described by a TOML file:
//!
//! ```toml
//! corpus = "data/train"
//! eval = "data/eval"
//! out_dir = "runs/sweep"
//! kind = "hyperprior"
//! distortion = "mse"
//! filters = [[8, 12], [32, 48]]
//! lambdas = [0.003, 0.01]
//!
//! [train]
//! steps = 2000
//! learning_rate = 1e-3
//! ```
//!
//! Each cell writes `n{N}_m{M}_lambda{λ}.bmck` and its training log into
//! `out_dir`; the results go to `out_dir/sweep.csv` with columns
//! `n,m,lambda,image,bpp,psnr,msssim`, one row per cell and evaluation image
//! followed by a `mean` row per cell. `out_dir/manifest.csv` records the
//! SHA-256 of every training and evaluation file.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::RgbImage;
use log::info;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::corpus::{list_files, load_corpus};
use super::trainer::{train_to_files, TrainConfig};
use crate::codec::metrics::{evaluate, mean_record, RdRecord};
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::image_io;
use crate::model::{Architecture, DistortionKind, Model, ModelKind};

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub corpus: PathBuf,
    pub eval: PathBuf,
    pub out_dir: PathBuf,
    pub kind: ModelKind,
    #[serde(default = "default_distortion")]
    pub distortion: DistortionKind,
    /// `(N, M)` pairs.
    pub filters: Vec<(usize, usize)>,
    pub lambdas: Vec<f32>,
    /// Shrink each training image by a random factor in `[1, 2]` on load.
    #[serde(default)]
    pub downsample: bool,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_distortion() -> DistortionKind {
    DistortionKind::Mse
}

impl SweepConfig {
    /// Parses TOML. Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut c: Self = toml::from_str(text).map_err(|e| Error::SweepConfig(e.to_string()))?;
        for p in [&mut c.corpus, &mut c.eval, &mut c.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() || self.lambdas.is_empty() {
            return Err(Error::SweepConfig("filter and λ grids must be nonempty".into()));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::SweepConfig(format!("λ = {l} is not positive")));
        }
        for &(n, m) in &self.filters {
            Architecture::new(self.kind, self.distortion, n, m, 1.0)
                .validate()
                .map_err(|e| Error::SweepConfig(format!("filters ({n}, {m}): {e}")))?;
        }
        let block = Architecture::new(self.kind, self.distortion, 1, 1, 1.0).block();
        self.train.validate(block).map_err(|e| Error::SweepConfig(e.to_string()))
    }

    pub fn checkpoint_path(&self, n: usize, m: usize, lambda: f32) -> PathBuf {
        self.out_dir.join(format!("n{n}_m{m}_lambda{lambda}.bmck"))
    }
}

pub const SWEEP_HEADER: &str = "n,m,lambda,image,bpp,psnr,msssim";

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub n: usize,
    pub m: usize,
    pub lambda: f32,
    pub record: RdRecord,
}

impl SweepRow {
    pub fn csv(&self) -> String {
        let r = &self.record;
        format!(
            "{},{},{},{},{:.6},{:.4},{:.6}",
            self.n, self.m, self.lambda, r.image, r.bpp_total, r.psnr, r.msssim
        )
    }
}

fn file_hashes(files: &[PathBuf]) -> Result<Vec<[u8; 32]>> {
    files
        .iter()
        .map(|p| Ok(Sha256::digest(std::fs::read(p)?).into()))
        .collect()
}

/// Writes a content manifest of both sets and fails if any evaluation file
/// is byte-identical to a training file.
pub fn check_disjoint(train: &[PathBuf], eval: &[PathBuf], manifest: &Path) -> Result<()> {
    let train_hashes = file_hashes(train)?;
    let eval_hashes = file_hashes(eval)?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(manifest)?);
    writeln!(out, "set,path,sha256")?;
    let hex = |h: &[u8; 32]| h.iter().map(|b| format!("{b:02x}")).collect::<String>();
    for (set, files, hashes) in [("train", train, &train_hashes), ("eval", eval, &eval_hashes)] {
        for (p, h) in files.iter().zip(hashes.iter()) {
            writeln!(out, "{set},{},{}", p.display(), hex(h))?;
        }
    }
    out.flush()?;
    let seen: HashMap<_, _> = train_hashes.iter().zip(train).collect();
    for (h, p) in eval_hashes.iter().zip(eval) {
        if let Some(t) = seen.get(h) {
            return Err(Error::SweepConfig(format!(
                "evaluation image {} duplicates training image {}",
                p.display(),
                t.display()
            )));
        }
    }
    Ok(())
}

pub fn load_eval_images(dir: &Path) -> Result<Vec<(String, RgbImage)>> {
    let files = list_files(dir)?;
    if files.is_empty() {
        return Err(Error::EmptyCorpus(dir.to_path_buf()));
    }
    files
        .iter()
        .map(|p| {
            let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((name, image_io::load_rgb8(p)?))
        })
        .collect()
}

/// Trains every cell (resuming finished or partial checkpoints), evaluates
/// it, and writes `sweep.csv`. Returns every row written.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let corpus = load_corpus(
        &config.corpus,
        config.train.crop,
        config.downsample.then_some(config.train.seed),
    )?;
    let eval_files = list_files(&config.eval)?;
    check_disjoint(&corpus.paths, &eval_files, &config.out_dir.join("manifest.csv"))?;
    let eval_images = load_eval_images(&config.eval)?;

    let mut csv = std::fs::File::create(config.out_dir.join("sweep.csv"))?;
    writeln!(csv, "{SWEEP_HEADER}")?;
    let mut rows = Vec::new();
    for &(n, m) in &config.filters {
        for &lambda in &config.lambdas {
            let arch = Architecture::new(config.kind, config.distortion, n, m, lambda);
            let path = config.checkpoint_path(n, m, lambda);
            info!("training {}", path.display());
            let model = Model::new(arch, config.train.seed)?;
            train_to_files(model, corpus.images.clone(), config.train.clone(), &path)?;
            let codec = Codec::load(&path)?;
            let mut records = evaluate(&codec, &eval_images)?;
            records.push(mean_record(&records));
            for record in records {
                let row = SweepRow { n, m, lambda, record };
                writeln!(csv, "{}", row.csv())?;
                rows.push(row);
            }
        }
    }
    csv.flush()?;
    Ok(rows)
}
