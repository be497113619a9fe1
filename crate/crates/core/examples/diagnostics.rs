//! Compares the spatial correlation of the latents before and after dividing
//! by the predicted scales, for every evaluation image.
//!
//! cargo run --release --example diagnostics -- hyperprior.bmck [outdir]

use std::path::Path;

use hyperprior::codec::diagnostics::{diagnose, lag1_autocorrelation, rate_row, write_diagnostics};
use hyperprior::codec::Codec;
use hyperprior::train::sweep::load_eval_images;

fn main() -> hyperprior::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(ckpt) = args.next() else {
        eprintln!("usage: diagnostics <hyperprior checkpoint> [outdir]");
        std::process::exit(2);
    };
    let codec = Codec::load(Path::new(&ckpt))?;
    let images = load_eval_images(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/corpus/eval"))?;
    let mut whiter = 0;
    for (name, img) in &images {
        let diag = diagnose(&codec, img)?;
        let (raw, normalized) = (lag1_autocorrelation(&diag.y)?, lag1_autocorrelation(&diag.normalized)?);
        whiter += usize::from(normalized < raw);
        println!("{name}: lag-1 y {raw:.3}, y/σ {normalized:.3}, bpp {}", rate_row(diag.bpp_total, diag.bpp_side));
    }
    println!("{whiter}/{} images whiter after normalization", images.len());
    if let Some(dir) = args.next() {
        write_diagnostics(&diagnose(&codec, &images[0].1)?, Path::new(&dir))?;
        println!("planes of {} written to {dir}", images[0].0);
    }
    Ok(())
}
