use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hyperprior::codec::diagnostics::{diagnose, lag1_autocorrelation, rate_row, write_diagnostics};
use hyperprior::codec::metrics::{evaluate, mean_record, write_rd_rows, RD_HEADER};
use hyperprior::codec::Codec;
use hyperprior::density::fit::write_fit_csv;
use hyperprior::density::{fit_density, ChainShape, FitConfig, Mixture, NonParametricDensity};
use hyperprior::image_io;
use hyperprior::model::{Architecture, DistortionKind, Model, ModelKind};
use hyperprior::train::sweep::load_eval_images;
use hyperprior::train::{load_corpus, run_sweep, train_to_files, SweepConfig, TrainConfig};
use hyperprior::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Learned image codec with a scale hyperprior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on a directory of images.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lambda: f32,
        #[arg(long, default_value = "mse")]
        distortion: DistortionKind,
        #[arg(long, default_value = "hyperprior")]
        model: ModelKind,
        #[arg(long, default_value_t = 128)]
        n: usize,
        #[arg(long, default_value_t = 192)]
        m: usize,
        #[arg(long, default_value_t = 1000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        crop: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        /// Save a checkpoint every this many steps (0: only at the end).
        #[arg(long, default_value_t = 0)]
        checkpoint_every: u64,
        /// Shrink training images by a random factor in [1, 2] on load.
        #[arg(long)]
        downsample: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate a grid of models described by a TOML file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    Compress {
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Decompress {
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rate and quality of each checkpoint over a directory of images.
    Eval {
        #[arg(long)]
        images: PathBuf,
        /// Comma-separated checkpoint paths.
        #[arg(long, value_delimiter = ',', required = true)]
        ckpts: Vec<PathBuf>,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Latent, scale and normalized-latent planes of one image.
    Diagnostics {
        input: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Fit a standalone density and write its evolution as CSV.
    FitDensity {
        #[arg(long, value_enum, default_value = "mixture")]
        target: Target,
        /// Text file with one sample per line (for `--target file`).
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 20_000)]
        count: usize,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Uniform,
    Mixture,
    File,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse().command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train {
            corpus,
            lambda,
            distortion,
            model,
            n,
            m,
            steps,
            seed,
            crop,
            batch,
            lr,
            checkpoint_every,
            downsample,
            out,
        } => {
            let config = TrainConfig {
                crop,
                batch,
                learning_rate: lr,
                steps,
                seed,
                checkpoint_every,
            };
            let arch = Architecture::new(model, distortion, n, m, lambda);
            let corpus = load_corpus(&corpus, crop, downsample.then_some(seed))?;
            info!("{} training images", corpus.len());
            let start = Instant::now();
            let outputs = train_to_files(Model::new(arch, seed)?, corpus.images, config, &out)?;
            info!(
                "wrote {} and {} in {:.1?}",
                outputs.checkpoint.display(),
                outputs.log.display(),
                start.elapsed()
            );
        }
        Command::Sweep { config } => {
            let config = SweepConfig::load(&config)?;
            let rows = run_sweep(&config)?;
            info!("{} rows in {}", rows.len(), config.out_dir.join("sweep.csv").display());
        }
        Command::Compress { input, ckpt, out } => {
            let codec = Codec::load(&ckpt)?;
            let img = image_io::load_rgb8(&input)?;
            let start = Instant::now();
            let c = codec.compress(&img)?;
            std::fs::write(&out, &c.bytes)?;
            let pixels = f64::from(img.width()) * f64::from(img.height());
            info!(
                "{} bytes ({:.4} bpp, side {:.4} bpp) in {:.1?}",
                c.bytes.len(),
                c.bytes.len() as f64 * 8.0 / pixels,
                c.container.side.len() as f64 * 8.0 / pixels,
                start.elapsed()
            );
        }
        Command::Decompress { input, ckpt, out } => {
            let codec = Codec::load(&ckpt)?;
            let bytes = std::fs::read(&input)?;
            let start = Instant::now();
            let d = codec.decompress(&bytes)?;
            image_io::save_rgb8(&out, &d.image)?;
            info!("decoded {}x{} in {:.1?}", d.image.width(), d.image.height(), start.elapsed());
        }
        Command::Eval { images, ckpts, csv } => {
            let images = load_eval_images(&images)?;
            let mut out = BufWriter::new(File::create(&csv)?);
            writeln!(out, "{RD_HEADER}")?;
            for path in &ckpts {
                let codec = Codec::load(path)?;
                let arch = &codec.model.arch;
                let mut records = evaluate(&codec, &images)?;
                let mean = mean_record(&records);
                info!(
                    "{}: {:.4} bpp, {:.2} dB PSNR, {:.2} dB MS-SSIM",
                    path.display(),
                    mean.bpp_total,
                    mean.psnr,
                    mean.msssim_db
                );
                records.push(mean);
                write_rd_rows(&mut out, arch.kind, arch.distortion, arch.lambda, &records)?;
            }
            out.flush()?;
        }
        Command::Diagnostics { input, ckpt, outdir } => {
            let codec = Codec::load(&ckpt)?;
            let diag = diagnose(&codec, &image_io::load_rgb8(&input)?)?;
            write_diagnostics(&diag, &outdir)?;
            info!(
                "lag-1 autocorrelation: y {:.4}, y/sigma {:.4}",
                lag1_autocorrelation(&diag.y)?,
                lag1_autocorrelation(&diag.normalized)?
            );
            println!("{}", rate_row(diag.bpp_total, diag.bpp_side));
        }
        Command::FitDensity {
            target,
            samples,
            count,
            steps,
            lr,
            seed,
            out,
        } => fit(target, samples.as_deref(), count, steps, lr, seed, &out)?,
    }
    Ok(())
}

fn read_samples(path: &Path) -> Result<Vec<f64>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::Usage(format!("`{l}` in {} is not a number", path.display())))
        })
        .collect()
}

fn fit(target: Target, file: Option<&Path>, count: usize, steps: usize, lr: f64, seed: u64, out: &Path) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixture = Mixture::three_modes();
    let uniform_pdf = |x: f64| if x.abs() <= 0.5 { 1.0 } else { 0.0 };
    let mixture_pdf = |x: f64| mixture.pdf(x);
    let (samples, reference): (Vec<f64>, Option<&dyn Fn(f64) -> f64>) = match target {
        Target::Uniform => ((0..count).map(|_| rng.gen_range(-0.5..0.5)).collect(), Some(&uniform_pdf)),
        Target::Mixture => (mixture.sample(&mut rng, count), Some(&mixture_pdf)),
        Target::File => {
            let path = file.ok_or_else(|| Error::Usage("--target file needs --samples".into()))?;
            (read_samples(path)?, None)
        }
    };
    let config = FitConfig {
        steps,
        learning_rate: lr,
        snapshot_steps: [0, steps / 10, steps / 4, steps / 2, steps].into(),
        seed,
        ..FitConfig::default()
    };
    let mut model = NonParametricDensity::new(ChainShape::default(), 10.0, &mut rng);
    let report = fit_density(&samples, &mut model, &config)?;
    info!("final NLL {:.5} nats", report.final_nll);
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let grid: Vec<f64> = (0..=400).map(|i| lo - 1.0 + (hi - lo + 2.0) * i as f64 / 400.0).collect();
    let mut w = BufWriter::new(File::create(out)?);
    write_fit_csv(&mut w, &grid, reference, &report.snapshots)?;
    w.flush()?;
    Ok(())
}
