//! Fits the noisy non-parametric density to uniform and mixture samples and
//! prints the final NLL next to the best achievable value.
//!
//! cargo run --release --example fit_density

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hyperprior::density::{fit_density, ChainShape, FitConfig, IntervalMass, Mixture, NonParametricDensity};

fn main() -> hyperprior::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let config = FitConfig::default();

    let uniform: Vec<f64> = (0..20_000).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let mut model = NonParametricDensity::new(ChainShape::default(), 10.0, &mut rng);
    let start = std::time::Instant::now();
    let report = fit_density(&uniform, &mut model, &config)?;
    println!("uniform: NLL {:.4} nats (entropy 0) in {:.1?}", report.final_nll, start.elapsed());

    let mixture = Mixture::three_modes();
    let samples = mixture.sample(&mut rng, 20_000);
    let entropy = mixture.entropy(&mut rng, 1_000_000);
    let mut model = NonParametricDensity::new(ChainShape::default(), 10.0, &mut rng);
    let start = std::time::Instant::now();
    let report = fit_density(&samples, &mut model, &config)?;
    println!(
        "mixture: NLL {:.4} nats (entropy {entropy:.4}) in {:.1?}",
        report.final_nll,
        start.elapsed()
    );
    for x in [-6.0, -4.0, -2.0, 0.0, 2.0, 5.0, 8.0] {
        println!("  x {x:5.1}: fitted {:.4} true {:.4}", model.noisy().mass(x - 0.5, x + 0.5), mixture.pdf(x));
    }
    Ok(())
}
