use hyperprior::model::{checkpoint, Architecture, DistortionKind, Model, ModelKind};
use hyperprior::train::{batch_rng, sample_batch, train_to_files, TrainConfig, Trainer};
use hyperprior::Tensor;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Eight smooth colour ramps in different directions and frequencies.
fn gradient_images() -> Vec<Tensor> {
    (0..8)
        .map(|k| {
            let angle = k as f32 * 0.7;
            let (dx, dy) = (angle.cos(), angle.sin());
            Tensor::from_fn(&[1, 3, 96, 96], |i| {
                let (c, y, x) = (i / (96 * 96), (i / 96) % 96, i % 96);
                let t = (dx * x as f32 + dy * y as f32) / 96.0;
                (0.5 + 0.4 * (t * (1.0 + k as f32 * 0.5) + c as f32).sin()).clamp(0.0, 1.0)
            })
        })
        .collect()
}

fn config(steps: u64) -> TrainConfig {
    TrainConfig {
        crop: 64,
        batch: 4,
        learning_rate: 1e-3,
        steps,
        seed: 3,
        checkpoint_every: 0,
    }
}

fn model() -> Model {
    Model::new(Architecture::new(ModelKind::Hyperprior, DistortionKind::Mse, 8, 12, 0.01), 3).unwrap()
}

#[test]
fn crop_positions_are_uniform() {
    let (h, w, crop) = (20usize, 30usize, 8usize);
    let image = Tensor::from_fn(&[1, 3, h, w], |i| i as f32);
    let (rows, cols) = (h - crop + 1, w - crop + 1);
    let mut counts = vec![0u32; rows * cols];
    let draws = 10_000u32;
    let mut rng = batch_rng(17, 0);
    for _ in 0..draws / 10 {
        let batch = sample_batch(std::slice::from_ref(&image), crop, 10, &mut rng).unwrap();
        for &(_, top, left) in &batch.origins {
            counts[top * cols + left] += 1;
        }
    }
    let expected = f64::from(draws) / counts.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (f64::from(c) - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((counts.len() - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(chi2 < critical, "χ² = {chi2:.1} exceeds {critical:.1}");
}

#[test]
fn short_run_reduces_the_loss() {
    let mut t = Trainer::new(model(), gradient_images(), config(500)).unwrap();
    let history = t.run::<Vec<u8>>(None, None).unwrap();
    assert_eq!(history.len(), 500);
    assert!(history.iter().all(|h| h.loss.is_finite()));
    let (early, late) = (history[9].loss, history[499].loss);
    assert!(late <= 0.8 * early, "loss went from {early} at step 10 to {late} at step 500");
}

#[test]
fn identical_configs_give_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.bmck"), dir.path().join("b.bmck"));
    train_to_files(model(), gradient_images(), config(15), &a).unwrap();
    train_to_files(model(), gradient_images(), config(15), &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(a.with_extension("csv")).unwrap(),
        std::fs::read(b.with_extension("csv")).unwrap()
    );
}

#[test]
fn resumed_runs_match_uninterrupted_ones() {
    let dir = tempfile::tempdir().unwrap();
    let whole = dir.path().join("whole.bmck");
    let split = dir.path().join("split.bmck");
    train_to_files(model(), gradient_images(), config(12), &whole).unwrap();
    train_to_files(model(), gradient_images(), config(7), &split).unwrap();
    let resumed = train_to_files(model(), gradient_images(), config(12), &split).unwrap();
    assert_eq!(resumed.history.len(), 5);
    assert_eq!(std::fs::read(&whole).unwrap(), std::fs::read(&split).unwrap());
    let log = std::fs::read_to_string(split.with_extension("csv")).unwrap();
    assert_eq!(log, std::fs::read_to_string(whole.with_extension("csv")).unwrap());
    let (_, state) = checkpoint::load(&split).unwrap();
    assert_eq!(state.unwrap().step, 12);
}

#[test]
fn divergence_keeps_the_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bmck");
    let mut images = gradient_images();
    images[5] = images[5].map(|_| f32::NAN);
    let mut c = config(200);
    c.checkpoint_every = 1;
    let err = train_to_files(model(), images, c, &path).err().expect("a NaN batch must abort training");
    let hyperprior::Error::Training { step, .. } = err else {
        panic!("unexpected error {err}");
    };
    if step == 1 {
        assert!(!path.exists());
    } else {
        let (m, state) = checkpoint::load(&path).unwrap();
        assert_eq!(state.unwrap().step, step - 1);
        assert!(m.store.iter().all(|(_, p)| p.value.all_finite()));
    }
}

#[test]
fn sweep_writes_one_mean_row_per_cell() {
    use hyperprior::train::sweep::SWEEP_HEADER;
    use hyperprior::train::{run_sweep, SweepConfig};

    let dir = tempfile::tempdir().unwrap();
    for (set, count, seed) in [("train", 3u8, 0u8), ("eval", 2, 100)] {
        std::fs::create_dir(dir.path().join(set)).unwrap();
        for k in 0..count {
            let s = seed + k;
            let img = image::RgbImage::from_fn(48, 40, |x, y| {
                image::Rgb([(x * 5 + u32::from(s)) as u8, (y * 6) as u8, ((x + y) * 3) as u8])
            });
            img.save(dir.path().join(set).join(format!("{k}.png"))).unwrap();
        }
    }
    let toml = r#"
corpus = "train"
eval = "eval"
out_dir = "out"
kind = "factorized"
filters = [[4, 6], [6, 8]]
lambdas = [0.005, 0.05]

[train]
crop = 32
batch = 2
steps = 3
"#;
    let config = SweepConfig::from_toml(toml, dir.path()).unwrap();
    let rows = run_sweep(&config).unwrap();
    assert_eq!(rows.len(), 4 * 3);
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(SWEEP_HEADER));
    let means: Vec<&str> = lines.filter(|l| l.split(',').nth(3) == Some("mean")).collect();
    assert_eq!(means.len(), 4);
    assert!(means[0].starts_with("4,6,0.005,mean,"));
    assert!(config.checkpoint_path(6, 8, 0.05).exists());
    let manifest = std::fs::read_to_string(dir.path().join("out/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 3 + 2);
}
