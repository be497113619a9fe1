//! Central finite differences against reverse-mode gradients, in f64.

use hyperprior::autodiff::{Direction, Graph, ParamStore, Reparam, Var};
use hyperprior::density::{ChainShape, DensityBank};
use hyperprior::model::msssim;
use hyperprior::model::{Architecture, DistortionKind, Mode, Model, ModelKind, NoiseSource};
use hyperprior::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;
/// Finite-difference step, relative to the parameter magnitude.
const STEP: f64 = 1e-4;

/// Worst relative gradient error over the tensors of one check.
#[derive(Debug)]
pub struct GradReport {
    pub name: String,
    pub worst: f64,
    pub worst_param: String,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst <= TOLERANCE
    }
}

/// A recorded loss: the graph, the scalar to backpropagate, and scalar
/// terms that add up to it.
pub struct Recorded {
    pub graph: Graph<f64>,
    pub loss: Var,
    pub terms: Vec<Var>,
}

impl Recorded {
    fn term_values(&self) -> Vec<f64> {
        self.terms.iter().map(|&t| self.graph.value(t).item()).collect()
    }
}

type LossFn<'a> = dyn Fn(&ParamStore<f64>) -> Result<Recorded> + 'a;

/// Compares the gradient of every raw parameter in `store` with a five-point
/// central difference of `loss`. Each term is differenced on its own, so a
/// large term that does not depend on a parameter adds no rounding noise.
/// Errors are measured per tensor relative to the largest numerical gradient
/// entry.
pub fn check_store(name: &str, store: &ParamStore<f64>, loss: &LossFn<'_>) -> Result<GradReport> {
    let base = loss(store)?;
    let mut analytic = store.clone();
    analytic.zero_grad();
    base.graph.backward(base.loss, &mut analytic)?;
    let mut report = GradReport {
        name: name.to_owned(),
        worst: 0.0,
        worst_param: String::new(),
    };
    let mut probe = store.clone();
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.get(id).value.len();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let raw = store.get(id).value.data()[i];
            let h = STEP * raw.abs().max(1.0);
            let mut at = |offset: f64| -> Result<Vec<f64>> {
                probe.get_mut(id).value.data_mut()[i] = raw + offset;
                Ok(loss(&probe)?.term_values())
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            probe.get_mut(id).value.data_mut()[i] = raw;
            *slot = (0..p1.len())
                .map(|t| (8.0 * (p1[t] - m1[t]) - (p2[t] - m2[t])) / (12.0 * h))
                .sum();
        }
        let grad = analytic.get(id).grad.data();
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let err = grad
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / scale;
        if err > report.worst || report.worst_param.is_empty() {
            report.worst = report.worst.max(err);
            report.worst_param = store.get(id).name.clone();
        }
    }
    Ok(report)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values in `±[gap, 1]`, away from a kink at zero.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(gap..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// One primitive under test: its inputs become parameters and the checked
/// loss is a positively weighted sum of its output.
pub struct Primitive {
    pub name: &'static str,
    pub inputs: Vec<(Tensor<f64>, Reparam)>,
    pub build: Build,
}

impl Primitive {
    fn new(
        name: &'static str,
        inputs: Vec<(Tensor<f64>, Reparam)>,
        build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> Self {
        Self {
            name,
            inputs,
            build: Box::new(build),
        }
    }

    pub fn check(&self, seed: u64) -> Result<GradReport> {
        let mut store = ParamStore::new();
        for (k, (t, r)) in self.inputs.iter().enumerate() {
            store.add(format!("{}.{k}", self.name), t.clone(), *r);
        }
        let ids: Vec<_> = store.ids().collect();
        let weights = std::cell::RefCell::new(None::<Tensor<f64>>);
        let loss = |s: &ParamStore<f64>| -> Result<Recorded> {
            let mut g = Graph::new();
            let vars: Vec<_> = ids.iter().map(|&id| g.param(s, id)).collect();
            let out = (self.build)(&mut g, &vars)?;
            let shape = g.value(out).shape().to_vec();
            let w = weights
                .borrow_mut()
                .get_or_insert_with(|| uniform(&shape, 0.5, 1.5, &mut rng(seed)))
                .clone();
            let w = g.input(w);
            let prod = g.mul(out, w)?;
            let l = g.sum(prod);
            Ok(Recorded {
                graph: g,
                loss: l,
                terms: vec![l],
            })
        };
        check_store(self.name, &store, &loss)
    }
}

const PLANE: [usize; 4] = [1, 2, 16, 16];

pub fn primitives(seed: u64) -> Vec<Primitive> {
    use Reparam::*;
    let r = &mut rng(seed);
    let x = |r: &mut ChaCha8Rng| (uniform(&PLANE, -1.0, 1.0, r), Identity);
    let pos = |r: &mut ChaCha8Rng| (uniform(&PLANE, 0.5, 2.0, r), Identity);
    let image = |r: &mut ChaCha8Rng| (uniform(&[1, 3, 16, 16], 0.0, 1.0, r), Identity);
    let mut gamma = Tensor::from_fn(&[3, 3], |_| r.gen_range(0.02..0.05));
    for i in 0..3 {
        gamma.data_mut()[i * 4] += 0.1;
    }
    let beta = (uniform(&[3], 0.8, 1.2, r), LowerBound(1e-6));
    let gamma = (gamma, LowerBound(0.0));

    let shape = ChainShape::default();
    let mut density = ParamStore::new();
    let bank = DensityBank::init(&mut density, "d", shape.clone(), 2, 10.0, r);
    let chain: Vec<_> = bank
        .ids
        .iter()
        .map(|&id| {
            let p = density.get(id);
            let jitter = Tensor::new(
                p.value.shape(),
                p.value.data().iter().map(|v| v + r.gen_range(-0.3..0.3)).collect(),
            )
            .expect("same shape");
            (jitter, p.reparam)
        })
        .collect();
    let mut chain_inputs = vec![(uniform(&PLANE, -20.0, 20.0, r), Identity)];
    chain_inputs.extend(chain);

    vec![
        Primitive::new("add", vec![x(r), x(r)], |g, v| g.add(v[0], v[1])),
        Primitive::new("sub", vec![x(r), x(r)], |g, v| g.sub(v[0], v[1])),
        Primitive::new("mul", vec![x(r), x(r)], |g, v| g.mul(v[0], v[1])),
        Primitive::new("div", vec![x(r), pos(r)], |g, v| g.div(v[0], v[1])),
        Primitive::new("scale", vec![x(r)], |g, v| Ok(g.scale(v[0], -2.5))),
        Primitive::new("offset", vec![x(r)], |g, v| Ok(g.offset(v[0], 0.7))),
        Primitive::new("exp", vec![x(r)], |g, v| Ok(g.exp(v[0]))),
        Primitive::new("log", vec![pos(r)], |g, v| Ok(g.log(v[0]))),
        Primitive::new("relu", vec![(away_from_zero(&PLANE, 1e-2, r), Identity)], |g, v| Ok(g.relu(v[0]))),
        Primitive::new("pow", vec![pos(r)], |g, v| Ok(g.pow(v[0], 1.7))),
        Primitive::new("clamp_min", vec![(away_from_zero(&PLANE, 1e-2, r), Identity)], |g, v| {
            Ok(g.clamp_min(v[0], 0.0))
        }),
        Primitive::new("lower_bound", vec![(away_from_zero(&PLANE, 1e-2, r), Identity)], |g, v| {
            Ok(g.lower_bound(v[0], 0.0))
        }),
        Primitive::new("sum", vec![x(r)], |g, v| Ok(g.sum(v[0]))),
        Primitive::new("mean", vec![x(r)], |g, v| Ok(g.mean(v[0]))),
        Primitive::new("mean_planes", vec![x(r)], |g, v| g.mean_planes(v[0])),
        Primitive::new(
            "conv_down_k5_s2",
            vec![image(r), (uniform(&[4, 3, 5, 5], -0.3, 0.3, r), Identity), (uniform(&[4], -0.1, 0.1, r), Identity)],
            |g, v| g.conv2d("down", v[0], v[1], v[2], 2, Direction::Down),
        ),
        Primitive::new(
            "conv_down_k3_s1",
            vec![image(r), (uniform(&[4, 3, 3, 3], -0.3, 0.3, r), Identity), (uniform(&[4], -0.1, 0.1, r), Identity)],
            |g, v| g.conv2d("same", v[0], v[1], v[2], 1, Direction::Down),
        ),
        Primitive::new(
            "conv_up_k5_s2",
            vec![
                (uniform(&[1, 3, 8, 8], -1.0, 1.0, r), Identity),
                (uniform(&[3, 4, 5, 5], -0.3, 0.3, r), Identity),
                (uniform(&[4], -0.1, 0.1, r), Identity),
            ],
            |g, v| g.conv2d("up", v[0], v[1], v[2], 2, Direction::Up),
        ),
        Primitive::new(
            "gdn",
            vec![(uniform(&[1, 3, 16, 16], -1.0, 1.0, r), Identity), beta.clone(), gamma.clone()],
            |g, v| g.gdn("gdn", v[0], v[1], v[2], false),
        ),
        Primitive::new(
            "igdn",
            vec![(uniform(&[1, 3, 16, 16], -1.0, 1.0, r), Identity), beta, gamma],
            |g, v| g.gdn("igdn", v[0], v[1], v[2], true),
        ),
        Primitive::new("blur_valid", vec![x(r)], |g, v| g.blur_valid(v[0], &msssim::window::<f64>())),
        Primitive::new("avg_pool2", vec![x(r)], |g, v| g.avg_pool2(v[0])),
        Primitive::new("crop", vec![x(r)], |g, v| g.crop(v[0], 11, 7)),
        Primitive::new(
            "gaussian_likelihood",
            vec![(uniform(&PLANE, -4.0, 4.0, r), Identity), (uniform(&PLANE, 0.2, 3.0, r), Identity)],
            |g, v| g.gaussian_likelihood(v[0], v[1]),
        ),
        Primitive::new("chain_likelihood", chain_inputs, move |g, v| g.chain_likelihood(v[0], &shape, &v[1..])),
        Primitive::new("softplus_param", vec![(x(r).0, Softplus)], |g, v| Ok(g.scale(v[0], 1.0))),
        Primitive::new("tanh_param", vec![(x(r).0, Tanh)], |g, v| Ok(g.scale(v[0], 1.0))),
        Primitive::new("lower_bound_param", vec![(uniform(&PLANE, 0.1, 1.0, r), LowerBound(0.05))], |g, v| {
            Ok(g.scale(v[0], 1.0))
        }),
        Primitive::new("ms_ssim", vec![image(r), image(r)], |g, v| msssim::ms_ssim(g, v[0], v[1])),
    ]
}

/// Full rate–distortion loss of a small model on a 16×16 image. Bounded
/// parameters that start exactly on their bound are moved slightly inside,
/// and zero-initialized biases are shifted, so that no ReLU or bound sits on
/// its kink where the finite differences would straddle it.
pub fn check_model(kind: ModelKind, distortion: DistortionKind, seed: u64) -> Result<GradReport> {
    let arch = Architecture::new(kind, distortion, 4, 5, 0.02);
    let mut model: Model<f64> = Model::<f32>::new(arch.clone(), seed)?.cast();
    let r = &mut rng(seed);
    for id in model.store.ids().collect::<Vec<_>>() {
        let p = model.store.get_mut(id);
        let is_bias = p.name.ends_with(".bias");
        for v in p.value.data_mut() {
            match p.reparam {
                Reparam::LowerBound(bound) if *v <= bound + 1e-3 => *v = bound + r.gen_range(0.01..0.03),
                _ if is_bias => *v += r.gen_range(0.05..0.2) * if r.gen_bool(0.5) { 1.0 } else { -1.0 },
                _ => {}
            }
        }
    }
    let x = uniform(&[1, 3, 16, 16], 0.0, 1.0, r);
    let name = format!("{kind}/{distortion}");
    let weight = arch.lambda as f64 * distortion.loss_scale();
    let loss = |s: &ParamStore<f64>| -> Result<Recorded> {
        let mut m = model.clone();
        m.store = s.clone();
        let mut g = Graph::new();
        let input = g.input(x.clone());
        let out = m.forward(&mut g, input, Mode::Noise(NoiseSource::new(seed, 1)))?;
        let per_pixel = 1.0 / out.pixels as f64;
        let mut terms = vec![g.scale(out.rate_y, per_pixel), g.scale(out.distortion, weight)];
        if let Some(rz) = out.rate_z {
            terms.push(g.scale(rz, per_pixel));
        }
        Ok(Recorded {
            graph: g,
            loss: out.loss,
            terms,
        })
    };
    check_store(&name, &model.store, &loss)
}

pub fn all_model_checks(seed: u64) -> Result<Vec<GradReport>> {
    let mut out = Vec::new();
    for kind in [ModelKind::Factorized, ModelKind::Hyperprior] {
        for distortion in [DistortionKind::Mse, DistortionKind::Msssim] {
            out.push(check_model(kind, distortion, seed)?);
        }
    }
    Ok(out)
}
