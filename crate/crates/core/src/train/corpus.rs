use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image_io;
use crate::tensor::Tensor;

/// Decoded training images, each `[1, 3, h, w]` in `[0, 1]`.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub images: Vec<Tensor>,
    pub paths: Vec<PathBuf>,
    /// Files that were not used, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Regular files of `dir`, sorted by name.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every decodable image of `dir`. Files that fail to decode, and
/// images smaller than `min_size` on either side, are skipped with a
/// warning. With `downsample_seed`, each image is first shrunk by a random
/// factor in `[1, 2]`.
pub fn load_corpus(dir: &Path, min_size: usize, downsample_seed: Option<u64>) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (i, path) in list_files(dir)?.into_iter().enumerate() {
        let mut img = match image_io::load_rgb8(&path) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                corpus.skipped.push((path, e.to_string()));
                continue;
            }
        };
        if let Some(seed) = downsample_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let factor: f64 = rng.gen_range(1.0..=2.0);
            let w = ((img.width() as f64 / factor).round() as u32).max(1);
            let h = ((img.height() as f64 / factor).round() as u32).max(1);
            img = imageops::resize(&img, w, h, FilterType::Triangle);
        }
        if (img.width() as usize) < min_size || (img.height() as usize) < min_size {
            let reason = format!("{}x{} is smaller than {min_size}", img.width(), img.height());
            warn!("skipping {}: {reason}", path.display());
            corpus.skipped.push((path, reason));
            continue;
        }
        corpus.images.push(image_io::from_rgb8(&img));
        corpus.paths.push(path);
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(dir.to_path_buf()));
    }
    Ok(corpus)
}

/// One minibatch and where each crop came from: `(image, top, left)`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Tensor,
    pub origins: Vec<(usize, usize, usize)>,
}

/// `batch` crops of `crop × crop`, each from a uniformly chosen image at a
/// uniformly chosen position.
pub fn sample_batch<R: Rng>(images: &[Tensor], crop: usize, batch: usize, rng: &mut R) -> Result<Batch> {
    if images.is_empty() {
        return Err(Error::Usage("cannot sample from an empty corpus".into()));
    }
    let mut data = Vec::with_capacity(batch * 3 * crop * crop);
    let mut origins = Vec::with_capacity(batch);
    for _ in 0..batch {
        let idx = rng.gen_range(0..images.len());
        let (_, c, h, w) = images[idx].dims4()?;
        if h < crop || w < crop {
            return Err(Error::Shape(format!("image {idx} is {h}x{w}, smaller than the {crop} crop")));
        }
        let top = rng.gen_range(0..=h - crop);
        let left = rng.gen_range(0..=w - crop);
        let src = images[idx].data();
        for ch in 0..c {
            for y in top..top + crop {
                let row = ch * h * w + y * w;
                data.extend_from_slice(&src[row + left..row + left + crop]);
            }
        }
        origins.push((idx, top, left));
    }
    Ok(Batch {
        images: Tensor::new(&[batch, 3, crop, crop], data)?,
        origins,
    })
}
