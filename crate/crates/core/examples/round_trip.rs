//! Compresses one evaluation image and decodes it again. Uses the checkpoint
//! given as the first argument, or an untrained model otherwise.
//!
//! cargo run --release --example round_trip -- [model.bmck]

use std::path::Path;

use hyperprior::codec::metrics::psnr;
use hyperprior::codec::Codec;
use hyperprior::image_io;
use hyperprior::model::{Architecture, DistortionKind, Model, ModelKind};
use hyperprior::train::sweep::load_eval_images;

fn main() -> hyperprior::Result<()> {
    let codec = match std::env::args().nth(1) {
        Some(path) => Codec::load(Path::new(&path))?,
        None => Codec::new(Model::new(
            Architecture::new(ModelKind::Hyperprior, DistortionKind::Mse, 32, 48, 0.01),
            0,
        )?),
    };
    let eval = load_eval_images(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/corpus/eval"))?;
    let (name, img) = &eval[0];

    let sent = codec.compress(img)?;
    let got = codec.decompress(&sent.bytes)?;
    assert_eq!(got.image, sent.reconstruction, "decoder disagrees with encoder");

    let pixels = f64::from(img.width() * img.height());
    println!(
        "{name} {}x{}: {} bytes ({:.4} bpp, side {} bytes), model estimate {:.4} bpp, PSNR {:.2} dB",
        img.width(),
        img.height(),
        sent.bytes.len(),
        sent.bytes.len() as f64 * 8.0 / pixels,
        sent.container.side.len(),
        (sent.model_bits_y + sent.model_bits_z) / pixels,
        psnr(img, &got.image)?
    );
    let out = std::env::temp_dir().join("round_trip.png");
    image_io::save_rgb8(&out, &got.image)?;
    println!("reconstruction written to {}", out.display());
    Ok(())
}
