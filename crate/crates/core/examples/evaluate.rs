//! Rate and quality of checkpoints over the bundled evaluation set, one CSV
//! row per image plus a mean row per checkpoint.
//!
//! cargo run --release --example evaluate -- a.bmck [b.bmck ...]

use std::path::Path;

use hyperprior::codec::metrics::{evaluate, mean_record, write_rd_rows, RD_HEADER};
use hyperprior::codec::Codec;
use hyperprior::train::sweep::load_eval_images;

fn main() -> hyperprior::Result<()> {
    let ckpts: Vec<String> = std::env::args().skip(1).collect();
    if ckpts.is_empty() {
        eprintln!("usage: evaluate <checkpoint>... (the train example writes one)");
        std::process::exit(2);
    }
    let images = load_eval_images(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/corpus/eval"))?;
    let mut out = std::io::stdout().lock();
    println!("{RD_HEADER}");
    for path in &ckpts {
        let codec = Codec::load(Path::new(path))?;
        let arch = &codec.model.arch;
        let mut records = evaluate(&codec, &images)?;
        records.push(mean_record(&records));
        write_rd_rows(&mut out, arch.kind, arch.distortion, arch.lambda, &records)?;
    }
    Ok(())
}
