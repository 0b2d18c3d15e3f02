//! Finite-difference verification drivers for every primitive and
//! composite block, each over at least twenty random shapes in 64-bit mode.

use edaseg::gradcheck::{grad_check, GradReport};
use edaseg::layers::{Downsampler, EdaModule, Head, Mode, Param, ParamKind};
use edaseg::ops::{self, ConvGeometry, NormMode};
use edaseg::{Shape, SplitMix64, Tensor};

use super::random_tensor;

pub const TOL: f64 = 1e-4;
pub const SHAPES: u64 = 20;

/// Outcome of one driver: shapes checked, worst relative error seen and a
/// description of every failing shape.
#[derive(Debug)]
pub struct Suite {
    pub name: &'static str,
    pub cases: u64,
    pub worst: f64,
    pub failures: Vec<String>,
}

impl Suite {
    fn run(name: &'static str, seed: u64, mut case: impl FnMut(u64, &mut SplitMix64) -> GradReport) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut s = Self {
            name,
            cases: 0,
            worst: 0.0,
            failures: Vec::new(),
        };
        for i in 0..SHAPES {
            let r = case(i, &mut rng);
            s.cases += 1;
            s.worst = s.worst.max(r.worst());
            if !r.passed() {
                s.failures.push(format!("case {i}: {:?}", r.max_rel_error));
            }
        }
        s
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.cases >= SHAPES
    }
}

fn small_shape(rng: &mut SplitMix64, even: bool) -> Shape {
    let n = rng.range_inclusive(1, 2) as usize;
    let c = rng.range_inclusive(1, 3) as usize;
    let mut h = rng.range_inclusive(2, 6) as usize;
    let mut w = rng.range_inclusive(2, 6) as usize;
    if even {
        h += h % 2;
        w += w % 2;
    }
    Shape::new(n, c, h, w)
}

pub fn conv2d() -> Suite {
    Suite::run("conv2d", 100, |case, rng| {
        let k = [(1, 1), (3, 3), (3, 1), (1, 3)][case as usize % 4];
        let d = 1 + rng.below(2) as usize;
        let stride = 1 + rng.below(2) as usize;
        let mut s = small_shape(rng, false);
        s.h = s.h.max(3);
        s.w = s.w.max(3);
        let cout = rng.range_inclusive(1, 3) as usize;
        let g = ConvGeometry::new(k, (stride, stride), (d, d), (d * (k.0 - 1) / 2, d * (k.1 - 1) / 2)).unwrap();
        let inputs = vec![
            random_tensor(s, rng),
            random_tensor(Shape::new(cout, s.c, k.0, k.1), rng),
            random_tensor(Shape::new(cout, 1, 1, 1), rng),
        ];
        grad_check(
            |t| ops::conv2d(&t[0], &t[1], Some(t[2].data()), &g).unwrap(),
            |t, dy| {
                let gr = ops::conv2d_backward(&t[0], &t[1], &g, dy, true).unwrap();
                vec![gr.input.into_data(), gr.weight, gr.bias.unwrap()]
            },
            &inputs,
            TOL,
            case,
        )
    })
}

pub fn bn_check(mode: NormMode, seed: u64, shape: Shape, tol: f64) -> GradReport {
    let mut rng = SplitMix64::new(seed);
    let c = shape.c;
    let vec_t = |rng: &mut SplitMix64, lo: f64, hi: f64| Tensor::from_fn(Shape::new(c, 1, 1, 1), |_| rng.uniform(lo, hi));
    let inputs = vec![random_tensor(shape, &mut rng), vec_t(&mut rng, 0.5, 1.5), vec_t(&mut rng, -0.5, 0.5)];
    let mean: Vec<f64> = (0..c).map(|_| rng.uniform(-0.2, 0.2)).collect();
    let var: Vec<f64> = (0..c).map(|_| rng.uniform(0.5, 1.5)).collect();
    let run = |t: &[Tensor<f64>]| {
        let (mut m, mut v) = (mean.clone(), var.clone());
        ops::batchnorm2d(&t[0], t[1].data(), t[2].data(), &mut m, &mut v, mode, 0.1, 1e-3).unwrap()
    };
    grad_check(
        |t| run(t).0,
        |t, dy| {
            let (_, cache) = run(t);
            let (dx, dg, db) = ops::batchnorm2d_backward(&cache, t[1].data(), dy).unwrap();
            vec![dx.into_data(), dg, db]
        },
        &inputs,
        tol,
        seed,
    )
}

pub fn batchnorm_train() -> Suite {
    Suite::run("batchnorm (train)", 200, |case, rng| bn_check(NormMode::Train, 200 + case, small_shape(rng, false), TOL))
}

pub fn batchnorm_infer() -> Suite {
    Suite::run("batchnorm (infer)", 250, |case, rng| bn_check(NormMode::Infer, 250 + case, small_shape(rng, false), TOL))
}

pub fn maxpool() -> Suite {
    Suite::run("maxpool2d", 300, |case, rng| {
        let s = small_shape(rng, true);
        grad_check(
            |t| ops::maxpool2d(&t[0]).unwrap().0,
            |t, dy| {
                let (_, arg) = ops::maxpool2d(&t[0]).unwrap();
                vec![ops::maxpool2d_backward(s, &arg, dy).unwrap().into_data()]
            },
            &[random_tensor(s, rng)],
            TOL,
            case,
        )
    })
}

pub fn avgpool() -> Suite {
    Suite::run("avgpool2d", 350, |case, rng| {
        let s = small_shape(rng, true);
        grad_check(
            |t| ops::avgpool2d(&t[0]).unwrap(),
            |_, dy| vec![ops::avgpool2d_backward(s, dy).unwrap().into_data()],
            &[random_tensor(s, rng)],
            TOL,
            case,
        )
    })
}

pub fn upsample() -> Suite {
    Suite::run("upsample_bilinear", 400, |case, rng| {
        let s = small_shape(rng, false);
        let f = 1 + rng.below(4) as usize;
        grad_check(
            |t| ops::upsample_bilinear(&t[0], f).unwrap(),
            |_, dy| vec![ops::upsample_bilinear_backward(dy, s, f).unwrap().into_data()],
            &[random_tensor(s, rng)],
            TOL,
            case,
        )
    })
}

pub fn relu() -> Suite {
    Suite::run("relu", 500, |case, rng| {
        let s = small_shape(rng, false);
        grad_check(
            |t| ops::relu(&t[0]),
            |t, dy| vec![ops::relu_backward(&t[0], dy).unwrap().into_data()],
            &[random_tensor(s, rng)],
            TOL,
            case,
        )
    })
}

pub fn dropout() -> Suite {
    Suite::run("dropout", 550, |case, rng| {
        let s = small_shape(rng, false);
        let p = rng.uniform(0.0, 0.6);
        grad_check(
            |t| ops::dropout(&t[0], p, &mut SplitMix64::new(case)).unwrap().0,
            |t, dy| {
                let (_, mask) = ops::dropout(&t[0], p, &mut SplitMix64::new(case)).unwrap();
                vec![ops::dropout_backward(&mask, dy).into_data()]
            },
            &[random_tensor(s, rng)],
            TOL,
            case,
        )
    })
}

pub fn concat() -> Suite {
    Suite::run("concat_channels", 600, |case, rng| {
        let s = small_shape(rng, false);
        let c2 = rng.range_inclusive(1, 4) as usize;
        let inputs = vec![random_tensor(s, rng), random_tensor(Shape { c: c2, ..s }, rng)];
        grad_check(
            |t| ops::concat_channels(&[&t[0], &t[1]]).unwrap(),
            |_, dy| {
                ops::split_channels(dy, &[s.c, c2])
                    .unwrap()
                    .into_iter()
                    .map(Tensor::into_data)
                    .collect()
            },
            &inputs,
            TOL,
            case,
        )
    })
}

pub fn cross_entropy() -> Suite {
    Suite::run("softmax_cross_entropy", 700, |case, rng| {
        let k = rng.range_inclusive(2, 6) as usize;
        let s = Shape::new(rng.range_inclusive(1, 2) as usize, k, 3, rng.range_inclusive(2, 5) as usize);
        let mut labels: Vec<u8> = (0..s.n * s.plane()).map(|_| rng.below(k as u64) as u8).collect();
        labels[0] = 1;
        let weights: Vec<f64> = (0..k).map(|_| rng.uniform(0.2, 3.0)).collect();
        let ignore = (case % 2 == 0).then_some(0u8);
        let weighted = case % 3 != 0;
        let run = |t: &[Tensor<f64>]| {
            ops::softmax_cross_entropy(&t[0], &labels, weighted.then_some(&weights[..]), ignore).unwrap()
        };
        grad_check(
            |t| Tensor::full(Shape::new(1, 1, 1, 1), run(t).0),
            |t, dy| {
                let (_, g) = run(t);
                vec![g.data().iter().map(|v| v * dy.data()[0]).collect()]
            },
            &[random_tensor(s, rng).map(|v| 3.0 * v)],
            TOL,
            case,
        )
    })
}

/// A layer under test: forward in train mode, backward, learnable params.
trait Block: Clone {
    fn fwd(&mut self, x: &Tensor<f64>) -> Tensor<f64>;
    fn bwd(&mut self, dy: &Tensor<f64>) -> Tensor<f64>;
    fn params(&mut self) -> Vec<&mut Param<f64>>;
}

#[derive(Clone)]
struct Eda(EdaModule<f64>, u64);

impl Block for Eda {
    fn fwd(&mut self, x: &Tensor<f64>) -> Tensor<f64> {
        self.0.forward(x, Mode::Train, &mut SplitMix64::new(self.1)).unwrap()
    }
    fn bwd(&mut self, dy: &Tensor<f64>) -> Tensor<f64> {
        self.0.backward(dy).unwrap()
    }
    fn params(&mut self) -> Vec<&mut Param<f64>> {
        self.0.params_mut().into_iter().filter(|p| p.kind.learnable()).collect()
    }
}

#[derive(Clone)]
struct Down(Downsampler<f64>);

impl Block for Down {
    fn fwd(&mut self, x: &Tensor<f64>) -> Tensor<f64> {
        self.0.forward(x, Mode::Train).unwrap()
    }
    fn bwd(&mut self, dy: &Tensor<f64>) -> Tensor<f64> {
        self.0.backward(dy).unwrap()
    }
    fn params(&mut self) -> Vec<&mut Param<f64>> {
        self.0.params_mut().into_iter().filter(|p| p.kind.learnable()).collect()
    }
}

#[derive(Clone)]
struct Classifier(Head<f64>);

impl Block for Classifier {
    fn fwd(&mut self, x: &Tensor<f64>) -> Tensor<f64> {
        self.0.forward(x).unwrap()
    }
    fn bwd(&mut self, dy: &Tensor<f64>) -> Tensor<f64> {
        self.0.backward(dy).unwrap()
    }
    fn params(&mut self) -> Vec<&mut Param<f64>> {
        self.0.params_mut()
    }
}

/// Checks a block with freshly drawn parameters. A draw that places a ReLU
/// input within one finite-difference step of zero is not differentiable
/// there, so a failing draw is replaced once; a wrong backward fails both.
fn check_block<B: Block>(block: B, x: Tensor<f64>, rng: &mut SplitMix64, seed: u64) -> GradReport {
    let first = check_block_once(block.clone(), x.clone(), rng, seed);
    if first.passed() {
        return first;
    }
    check_block_once(block, x, rng, seed)
}

/// Randomizes every learnable tensor, then checks the input and all
/// parameter gradients together.
fn check_block_once<B: Block>(mut block: B, x: Tensor<f64>, rng: &mut SplitMix64, seed: u64) -> GradReport {
    for p in block.params() {
        let kind = p.kind;
        for v in p.value.data_mut() {
            *v = match kind {
                ParamKind::Gamma => rng.uniform(0.5, 1.5),
                _ => rng.uniform(-0.6, 0.6),
            };
        }
    }
    let mut inputs = vec![x];
    inputs.extend(block.params().into_iter().map(|p| p.value.clone()));
    let with = |t: &[Tensor<f64>]| {
        let mut b = block.clone();
        for (p, v) in b.params().into_iter().zip(&t[1..]) {
            p.value.data_mut().copy_from_slice(v.data());
        }
        b
    };
    grad_check(
        |t| with(t).fwd(&t[0]),
        |t, dy| {
            let mut b = with(t);
            b.fwd(&t[0]);
            for p in b.params() {
                p.value.zero_grad();
            }
            let dx = b.bwd(dy);
            let mut out = vec![dx.into_data()];
            out.extend(b.params().into_iter().map(|p| p.value.grad_mut().to_vec()));
            out
        },
        &inputs,
        TOL,
        seed,
    )
}

pub fn eda_module() -> Suite {
    Suite::run("EDA module", 800, |case, rng| {
        let cin = rng.range_inclusive(1, 3) as usize;
        let k = rng.range_inclusive(1, 3) as usize;
        let d = [1, 2, 4][case as usize % 3];
        let mut m = EdaModule::new("m", cin, k, d).unwrap();
        m.dropout = [0.0, 0.02, 0.3][case as usize % 3];
        let s = Shape::new(2, cin, rng.range_inclusive(3, 6) as usize, rng.range_inclusive(3, 6) as usize);
        let x = random_tensor(s, rng);
        check_block(Eda(m, case), x, rng, case)
    })
}

pub fn downsampler() -> Suite {
    Suite::run("downsampling block", 900, |case, rng| {
        let cin = rng.range_inclusive(1, 4) as usize;
        // alternate widening (conv + pool) and narrowing (conv only)
        let cout = if case % 2 == 0 {
            cin + rng.range_inclusive(1, 3) as usize
        } else {
            rng.range_inclusive(1, cin as i64) as usize
        };
        let d = Downsampler::new("ds", cin, cout).unwrap();
        assert_eq!(d.has_pool_branch(), case % 2 == 0);
        let s = Shape::new(2, cin, 2 * rng.range_inclusive(1, 3) as usize, 2 * rng.range_inclusive(1, 3) as usize);
        let x = random_tensor(s, rng);
        check_block(Down(d), x, rng, case)
    })
}

pub fn head() -> Suite {
    Suite::run("head", 1000, |case, rng| {
        let cin = rng.range_inclusive(1, 5) as usize;
        let classes = rng.range_inclusive(2, 6) as usize;
        let f = 1 << rng.below(3);
        let h = Head::new("head", cin, classes, f).unwrap();
        let s = Shape::new(
            rng.range_inclusive(1, 2) as usize,
            cin,
            rng.range_inclusive(1, 4) as usize,
            rng.range_inclusive(1, 4) as usize,
        );
        let x = random_tensor(s, rng);
        check_block(Classifier(h), x, rng, case)
    })
}

/// Every driver, primitives first.
pub fn all() -> Vec<Suite> {
    vec![
        conv2d(),
        batchnorm_train(),
        batchnorm_infer(),
        maxpool(),
        avgpool(),
        upsample(),
        relu(),
        dropout(),
        concat(),
        cross_entropy(),
        eda_module(),
        downsampler(),
        head(),
    ]
}
