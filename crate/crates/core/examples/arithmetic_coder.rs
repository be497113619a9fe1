//! Codes Gaussian-distributed integers with the binary arithmetic coder and
//! compares the stream length with the ideal code length.
//!
//! cargo run --release --example arithmetic_coder

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use hyperprior::coder::{decode_symbol, derive_range, encode_symbol, Decoder, Encoder};
use hyperprior::density::NoisyDensity;

fn main() -> hyperprior::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for scale in [0.2, 1.0, 5.0, 40.0] {
        let pmf = NoisyDensity::gaussian(scale);
        let range = derive_range(&pmf);
        let noise = Normal::new(0.0, scale).expect("positive scale");
        let values: Vec<i64> = (0..10_000).map(|_| noise.sample(&mut rng).round() as i64).collect();

        let mut enc = Encoder::new();
        for &v in &values {
            encode_symbol(&mut enc, v, &pmf, range);
        }
        let bytes = enc.finish();
        let ideal: f64 = values.iter().map(|&v| -pmf.pmf(range.clamp(v)).log2()).sum();

        let mut dec = Decoder::new(&bytes)?;
        for &v in &values {
            assert_eq!(decode_symbol(&mut dec, &pmf, range)?, range.clamp(v));
        }
        println!(
            "σ {scale:5.1}: {} values in {} bytes, ideal {:.0} bytes, {} decisions per value",
            values.len(),
            bytes.len(),
            ideal / 8.0,
            range.n_bits
        );
    }
    Ok(())
}
