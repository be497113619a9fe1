//! Runs a tiny 2×2 sweep (two filter sizes, two λ values) on a handful of
//! corpus images and prints the mean row of each cell.
//!
//! cargo run --release --example sweep

use std::path::Path;

use hyperprior::train::{run_sweep, SweepConfig};

fn main() -> hyperprior::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/corpus");
    let work = std::env::temp_dir().join("example_sweep");
    // Keep the example fast: six training crops and three evaluation images.
    for (set, count) in [("train", 6), ("eval", 3)] {
        let dir = work.join(set);
        std::fs::create_dir_all(&dir)?;
        let mut files: Vec<_> = std::fs::read_dir(root.join(set))?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        files.sort();
        for f in files.iter().take(count) {
            std::fs::copy(f, dir.join(f.file_name().expect("file name")))?;
        }
    }
    let toml = r#"
corpus = "train"
eval = "eval"
out_dir = "out"
kind = "hyperprior"
filters = [[8, 12], [16, 24]]
lambdas = [0.003, 0.03]

[train]
crop = 64
batch = 2
steps = 40
learning_rate = 1e-3
"#;
    let config = SweepConfig::from_toml(toml, &work)?;
    let rows = run_sweep(&config)?;
    println!("n,m,lambda,image,bpp,psnr,msssim");
    for row in rows.iter().filter(|r| r.record.image == "mean") {
        println!("{}", row.csv());
    }
    println!("full table in {}", config.out_dir.join("sweep.csv").display());
    Ok(())
}
