mod common;

use common::criteria::{lossless_round_trips, random_image};
use hyperprior::codec::container::{Container, HEADER_LEN};
use hyperprior::codec::metrics::measure;
use hyperprior::codec::Codec;
use hyperprior::model::{checkpoint, Architecture, DistortionKind, Model, ModelKind};
use hyperprior::{image_io, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn codec(kind: ModelKind, seed: u64) -> Codec {
    Codec::new(Model::new(Architecture::new(kind, DistortionKind::Mse, 6, 10, 0.01), seed).unwrap())
}

#[test]
fn random_images_and_models_round_trip_exactly() {
    let report = lossless_round_trips(24, 9).unwrap();
    assert_eq!(report.cases, 24);
    assert!(report.mismatches.is_empty(), "{:?}", report.mismatches);
}

#[test]
fn every_header_byte_is_protected() {
    let c = codec(ModelKind::Hyperprior, 1);
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(2));
    let bytes = c.compress(&img).unwrap().bytes;
    for i in 0..HEADER_LEN {
        let mut bad = bytes.clone();
        bad[i] = bad[i].wrapping_add(1);
        assert!(c.decompress(&bad).is_err(), "byte {i}");
    }
}

#[test]
fn truncated_latent_segment_is_a_corrupt_stream() {
    let c = codec(ModelKind::Hyperprior, 3);
    let img = image::RgbImage::from_fn(96, 80, |x, y| image::Rgb([(x * 2) as u8, (y * 3) as u8, ((x ^ y) * 5) as u8]));
    let sent = c.compress(&img).unwrap();
    let mut container = sent.container.clone();
    assert!(container.latents.len() > 8);
    container.latents.truncate(container.latents.len() / 4);
    let err = c.decompress(&container.to_bytes()).unwrap_err();
    assert!(matches!(err, Error::CorruptStream(_)), "unexpected {err}");
    // Dropping bytes from the file itself is caught by the length fields.
    let cut = &sent.bytes[..sent.bytes.len() - 1];
    assert!(matches!(c.decompress(cut), Err(Error::Truncated(_))));
}

#[test]
fn a_different_checkpoint_is_refused() {
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(4));
    let bytes = codec(ModelKind::Factorized, 5).compress(&img).unwrap().bytes;
    let err = codec(ModelKind::Factorized, 6).decompress(&bytes).unwrap_err();
    assert!(matches!(err, Error::ModelMismatch { .. }), "{err}");
}

#[test]
fn checkpoint_files_preserve_the_codec() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bmck");
    let c = codec(ModelKind::Hyperprior, 7);
    checkpoint::save(&path, &c.model, None).unwrap();
    let loaded = Codec::load(&path).unwrap();
    assert_eq!(loaded.model_hash(), c.model_hash());
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(8));
    let sent = c.compress(&img).unwrap();
    assert_eq!(loaded.compress(&img).unwrap().bytes, sent.bytes);
    assert_eq!(loaded.decompress(&sent.bytes).unwrap().image, sent.reconstruction);
}

#[test]
fn rates_add_up_to_the_file_size() {
    let c = codec(ModelKind::Hyperprior, 9);
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(10));
    let r = measure(&c, "x", &img).unwrap();
    assert!((r.bpp_side + r.bpp_latents + r.bpp_header - r.bpp_total).abs() < 1e-12);
    assert!(r.bpp_side <= r.bpp_total);
    let bytes = c.compress(&img).unwrap().bytes;
    let parsed = Container::from_bytes(&bytes).unwrap();
    assert_eq!(HEADER_LEN + parsed.side.len() + parsed.latents.len(), bytes.len());
}

#[test]
fn files_decode_through_portable_formats() {
    let dir = tempfile::tempdir().unwrap();
    let c = codec(ModelKind::Factorized, 11);
    let img = random_image(&mut ChaCha8Rng::seed_from_u64(12));
    let input = dir.path().join("in.ppm");
    image_io::save_rgb8(&input, &img).unwrap();
    let loaded = image_io::load_rgb8(&input).unwrap();
    let sent = c.compress(&loaded).unwrap();
    let out = dir.path().join("out.png");
    image_io::save_rgb8(&out, &c.decompress(&sent.bytes).unwrap().image).unwrap();
    assert_eq!(image_io::load_rgb8(&out).unwrap(), sent.reconstruction);
}
