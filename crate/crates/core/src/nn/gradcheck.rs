//! Central finite-difference verification of every handwritten backward pass.

use std::fmt;

use rand::Rng as _;
use serde::Serialize;

use super::{
    cross_entropy, dropout, dropout_backward, l1_penalty, maxpool1d, maxpool1d_backward, relu, relu_backward,
    seeded_rng, softmax, softmax_cross_entropy_backward, Conv1dParams, DenseParams, LrnParams, LstmParams,
    LstmStack, Rng, Tensor,
};
use crate::error::Result;
use crate::model::{ForwardMode, Hyperparams, Penalty, TrafficNet};

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Coordinates probed per seed in the full-model check.
pub const MODEL_PROBES: usize = 50;

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numerical: f64) -> f64 {
    (analytic - numerical).abs() / analytic.abs().max(numerical.abs()).max(1e-8)
}

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / (2·eps)`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &mut [f64], i: usize, eps: f64) -> f64 {
    let orig = x[i];
    x[i] = orig + eps;
    let plus = f(x);
    x[i] = orig - eps;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * eps)
}

/// Max relative error between `analytic` and central differences of `f` at `x`
/// over every coordinate.
pub fn grad_check<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], analytic: &[f64], eps: f64) -> f64 {
    assert_eq!(x.len(), analytic.len(), "one analytic value per coordinate");
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| relative_error(analytic[i], central_difference(&mut f, &mut x, i, eps)))
        .fold(0.0, f64::max)
}

/// Every differentiable operation covered by the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradOp {
    Conv1d,
    Relu,
    Maxpool1d,
    Lrn,
    Dense,
    Dropout,
    LstmStep,
    LstmSequence,
    SoftmaxCrossEntropy,
    L1Penalty,
    ModelLoss,
}

impl GradOp {
    pub const ALL: [GradOp; 11] = [
        GradOp::Conv1d,
        GradOp::Relu,
        GradOp::Maxpool1d,
        GradOp::Lrn,
        GradOp::Dense,
        GradOp::Dropout,
        GradOp::LstmStep,
        GradOp::LstmSequence,
        GradOp::SoftmaxCrossEntropy,
        GradOp::L1Penalty,
        GradOp::ModelLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradOp::Conv1d => "conv1d",
            GradOp::Relu => "relu",
            GradOp::Maxpool1d => "maxpool1d",
            GradOp::Lrn => "lrn",
            GradOp::Dense => "dense",
            GradOp::Dropout => "dropout",
            GradOp::LstmStep => "lstm_step",
            GradOp::LstmSequence => "lstm_sequence",
            GradOp::SoftmaxCrossEntropy => "softmax_cross_entropy",
            GradOp::L1Penalty => "l1_penalty",
            GradOp::ModelLoss => "model_loss",
        }
    }

    pub fn from_name(name: &str) -> Option<GradOp> {
        GradOp::ALL.into_iter().find(|op| op.name() == name)
    }
}

impl fmt::Display for GradOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub seeds: usize,
    pub base_seed: u64,
    pub ops: Vec<GradOp>,
    /// Scales the analytic gradient of one op, to prove the harness catches errors.
    pub fault: Option<GradOp>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seeds: 20,
            base_seed: crate::DEFAULT_SEED,
            ops: GradOp::ALL.to_vec(),
            fault: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OpReport {
    pub op: GradOp,
    pub seeds: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<OpReport>> {
    cfg.ops
        .iter()
        .map(|&op| {
            let fault = if cfg.fault == Some(op) { 1.5 } else { 1.0 };
            let mut worst = 0.0f64;
            for s in 0..cfg.seeds {
                let seed = cfg.base_seed.wrapping_add(s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                worst = worst.max(check_op(op, seed, fault)?);
            }
            Ok(OpReport {
                op,
                seeds: cfg.seeds,
                max_relative_error: worst,
                passed: worst < GRADCHECK_TOLERANCE,
            })
        })
        .collect()
}

/// Max relative error of one op at one seed; `fault` multiplies the analytic gradient.
pub fn check_op(op: GradOp, seed: u64, fault: f64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    match op {
        GradOp::Conv1d => check_conv1d(&mut rng, fault),
        GradOp::Relu => check_relu(&mut rng, fault),
        GradOp::Maxpool1d => check_maxpool(&mut rng, fault),
        GradOp::Lrn => check_lrn(&mut rng, fault),
        GradOp::Dense => check_dense(&mut rng, fault),
        GradOp::Dropout => check_dropout(&mut rng, seed, fault),
        GradOp::LstmStep => check_lstm_step(&mut rng, fault),
        GradOp::LstmSequence => check_lstm_sequence(&mut rng, seed, fault),
        GradOp::SoftmaxCrossEntropy => check_softmax_ce(&mut rng, fault),
        GradOp::L1Penalty => check_l1(&mut rng, fault),
        GradOp::ModelLoss => check_model_loss(&mut rng, seed, fault),
    }
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

/// Uniform in ±1 with `|v| ≥ margin`.
fn random_away_from_zero(shape: &[usize], margin: f64, rng: &mut Rng) -> Tensor {
    let mut t = random(shape, rng);
    for v in t.data_mut() {
        while v.abs() < margin {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    t
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Concatenates tensors into one coordinate vector and splits it back.
struct Packing {
    shapes: Vec<Vec<usize>>,
}

impl Packing {
    fn pack(tensors: &[&Tensor]) -> (Self, Vec<f64>) {
        let shapes = tensors.iter().map(|t| t.shape().to_vec()).collect();
        let flat = tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
        (Self { shapes }, flat)
    }

    fn unpack(&self, flat: &[f64]) -> Vec<Tensor> {
        let mut pos = 0;
        self.shapes
            .iter()
            .map(|s| {
                let n: usize = s.iter().product();
                let t = Tensor::from_vec(s, flat[pos..pos + n].to_vec()).expect("shape");
                pos += n;
                t
            })
            .collect()
    }
}

fn scaled(v: Vec<f64>, fault: f64) -> Vec<f64> {
    v.into_iter().map(|g| g * fault).collect()
}

fn check_conv1d(rng: &mut Rng, fault: f64) -> Result<f64> {
    let (cin, cout, width, len) = (2, 3, 3, 9);
    let mut p = Conv1dParams::init(cout, cin, width, rng);
    p.bias = random(&[cout], rng);
    let x = random(&[cin, len], rng);
    let r = random(&[cout, len], rng);
    let mut grads = p.zeros_like();
    let dx = p.backward(&x, &r, &mut grads)?;
    let (packing, flat) = Packing::pack(&[&x, &p.kernels, &p.bias]);
    let (_, analytic) = Packing::pack(&[&dx, &grads.kernels, &grads.bias]);
    Ok(grad_check(
        |v| {
            let t = packing.unpack(v);
            let q = Conv1dParams {
                kernels: t[1].clone(),
                bias: t[2].clone(),
            };
            dot(&q.forward(&t[0]).expect("conv"), &r)
        },
        &flat,
        &scaled(analytic, fault),
        GRADCHECK_EPS,
    ))
}

fn check_relu(rng: &mut Rng, fault: f64) -> Result<f64> {
    let x = random_away_from_zero(&[24], 1e-3, rng);
    let r = random(&[24], rng);
    let dx = relu_backward(&x, &r);
    Ok(grad_check(
        |v| dot(&relu(&Tensor::from_vec(&[24], v.to_vec()).expect("shape")), &r),
        x.data(),
        &scaled(dx.into_vec(), fault),
        GRADCHECK_EPS,
    ))
}

fn check_maxpool(rng: &mut Rng, fault: f64) -> Result<f64> {
    let (channels, len) = (2, 10);
    // keep every window's winner at least 1e-3 above the runner-up
    let x = loop {
        let x = random(&[channels, len], rng);
        let separated = (0..channels).all(|c| {
            x.row(c)[..9].chunks(3).all(|w| {
                let mut s = w.to_vec();
                s.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
                s[0] - s[1] > 1e-3
            })
        });
        if separated {
            break x;
        }
    };
    let pool = maxpool1d(&x, 3, 3)?;
    let r = random(pool.output.shape(), rng);
    let dx = maxpool1d_backward(&pool, &r)?;
    Ok(grad_check(
        |v| {
            let t = Tensor::from_vec(&[channels, len], v.to_vec()).expect("shape");
            dot(&maxpool1d(&t, 3, 3).expect("pool").output, &r)
        },
        x.data(),
        &scaled(dx.into_vec(), fault),
        GRADCHECK_EPS,
    ))
}

fn check_lrn(rng: &mut Rng, fault: f64) -> Result<f64> {
    let configs = [
        LrnParams::default(),
        LrnParams {
            k: 1.0,
            n: 3,
            alpha: 0.5,
            beta: 0.75,
        },
    ];
    let mut worst = 0.0f64;
    for p in configs {
        let x = random(&[6, 4], rng);
        let r = random(&[6, 4], rng);
        let dx = p.backward(&x, &r)?;
        worst = worst.max(grad_check(
            |v| dot(&p.forward(&Tensor::from_vec(&[6, 4], v.to_vec()).expect("shape")).expect("lrn"), &r),
            x.data(),
            &scaled(dx.into_vec(), fault),
            GRADCHECK_EPS,
        ));
    }
    Ok(worst)
}

fn check_dense(rng: &mut Rng, fault: f64) -> Result<f64> {
    let (n_in, n_out, rows) = (4, 5, 2);
    let mut p = DenseParams::init(n_in, n_out, rng);
    p.bias = random(&[n_out], rng);
    let x = random(&[rows, n_in], rng);
    let r = random(&[rows, n_out], rng);
    let mut grads = p.zeros_like();
    let dx = p.backward(&x, &r, &mut grads)?;
    let (packing, flat) = Packing::pack(&[&x, &p.weight, &p.bias]);
    let (_, analytic) = Packing::pack(&[&dx, &grads.weight, &grads.bias]);
    Ok(grad_check(
        |v| {
            let t = packing.unpack(v);
            let q = DenseParams {
                weight: t[1].clone(),
                bias: t[2].clone(),
            };
            dot(&q.forward(&t[0]).expect("dense"), &r)
        },
        &flat,
        &scaled(analytic, fault),
        GRADCHECK_EPS,
    ))
}

fn check_dropout(rng: &mut Rng, seed: u64, fault: f64) -> Result<f64> {
    let x = random(&[30], rng);
    let r = random(&[30], rng);
    let mask_seed = seed ^ 0xD0;
    let (_, mask) = dropout(&x, 0.5, &mut seeded_rng(mask_seed), true)?;
    let dx = dropout_backward(&r, mask.as_ref());
    Ok(grad_check(
        |v| {
            let t = Tensor::from_vec(&[30], v.to_vec()).expect("shape");
            let (y, _) = dropout(&t, 0.5, &mut seeded_rng(mask_seed), true).expect("dropout");
            dot(&y, &r)
        },
        x.data(),
        &scaled(dx.into_vec(), fault),
        GRADCHECK_EPS,
    ))
}

fn check_lstm_step(rng: &mut Rng, fault: f64) -> Result<f64> {
    let (n_in, hidden, rows) = (3, 4, 2);
    let mut p = LstmParams::init(n_in, hidden, rng);
    p.bias = random(&[4 * hidden], rng);
    let x = random(&[rows, n_in], rng);
    let h = random(&[rows, hidden], rng);
    let c = random(&[rows, hidden], rng);
    let rh = random(&[rows, hidden], rng);
    let rc = random(&[rows, hidden], rng);
    let (_, _, cache) = p.step(&x, &h, &c)?;
    let mut grads = p.zeros_like();
    let (dx, dh, dc) = p.step_backward(&cache, &rh, &rc, &mut grads)?;
    let (packing, flat) = Packing::pack(&[&x, &h, &c, &p.w_input, &p.w_recurrent, &p.bias]);
    let (_, analytic) = Packing::pack(&[&dx, &dh, &dc, &grads.w_input, &grads.w_recurrent, &grads.bias]);
    Ok(grad_check(
        |v| {
            let t = packing.unpack(v);
            let q = LstmParams {
                w_input: t[3].clone(),
                w_recurrent: t[4].clone(),
                bias: t[5].clone(),
            };
            let (h2, c2, _) = q.step(&t[0], &t[1], &t[2]).expect("lstm step");
            dot(&h2, &rh) + dot(&c2, &rc)
        },
        &flat,
        &scaled(analytic, fault),
        GRADCHECK_EPS,
    ))
}

fn check_lstm_sequence(rng: &mut Rng, seed: u64, fault: f64) -> Result<f64> {
    let (n_in, hidden, steps, rows, depth) = (3, 4, 5, 2, 3);
    let mut stack = LstmStack::init(n_in, hidden, depth, rng);
    for l in &mut stack.layers {
        l.bias = random(&[4 * hidden], rng);
    }
    let xs = random(&[steps, rows, n_in], rng);
    let r = random(&[rows, hidden], rng);
    let mask_seed = seed ^ 0x15;
    let (_, cache) = stack.forward(&xs, 0.5, &mut seeded_rng(mask_seed), true)?;
    let mut grads = stack.zeros_like();
    let dxs = stack.backward(&cache, &r, &mut grads)?;
    let mut tensors = vec![&xs];
    let mut grad_tensors = vec![&dxs];
    for (l, g) in stack.layers.iter().zip(&grads.layers) {
        tensors.extend([&l.w_input, &l.w_recurrent, &l.bias]);
        grad_tensors.extend([&g.w_input, &g.w_recurrent, &g.bias]);
    }
    let (packing, flat) = Packing::pack(&tensors);
    let (_, analytic) = Packing::pack(&grad_tensors);
    Ok(grad_check(
        |v| {
            let t = packing.unpack(v);
            let layers = (0..depth)
                .map(|l| LstmParams {
                    w_input: t[1 + 3 * l].clone(),
                    w_recurrent: t[2 + 3 * l].clone(),
                    bias: t[3 + 3 * l].clone(),
                })
                .collect();
            let q = LstmStack { layers };
            let (last, _) = q.forward(&t[0], 0.5, &mut seeded_rng(mask_seed), true).expect("lstm");
            dot(&last, &r)
        },
        &flat,
        &scaled(analytic, fault),
        GRADCHECK_EPS,
    ))
}

fn check_softmax_ce(rng: &mut Rng, fault: f64) -> Result<f64> {
    let n = 6;
    let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let label = rng.gen_range(0..n);
    let analytic = softmax_cross_entropy_backward(&softmax(&z), label)?;
    Ok(grad_check(
        |v| cross_entropy(&softmax(v), label).expect("label in range"),
        &z,
        &scaled(analytic, fault),
        GRADCHECK_EPS,
    ))
}

fn check_l1(rng: &mut Rng, fault: f64) -> Result<f64> {
    let w = random_away_from_zero(&[16], 1e-3, rng);
    let lambda = 0.0005;
    let (_, g) = l1_penalty(&w, lambda);
    Ok(grad_check(
        |v| l1_penalty(&Tensor::from_vec(&[16], v.to_vec()).expect("shape"), lambda).0,
        w.data(),
        &scaled(g.into_vec(), fault),
        GRADCHECK_EPS,
    ))
}

/// Full-size network, two-sample batch, dropout and both L1 terms on.
///
/// Probes whose ±eps step changes any ReLU sign or max-pool winner sit on a
/// kink of the loss and are redrawn.
fn check_model_loss(rng: &mut Rng, seed: u64, fault: f64) -> Result<f64> {
    let mut model = TrafficNet::build(3, seed)?;
    let batch: Vec<Vec<u8>> = (0..2).map(|_| (0..784).map(|_| rng.gen()).collect()).collect();
    let labels = [rng.gen_range(0..3), rng.gen_range(0..3)];
    let hp = Hyperparams::default();
    let mask_seed = seed ^ 0x3C;
    let (_, grads, _) = model.loss(&batch, &labels, &hp, Some(&mut seeded_rng(mask_seed)))?;
    let pattern = |m: &TrafficNet| -> Result<(f64, u64)> {
        let mut r = seeded_rng(mask_seed);
        m.data_loss_and_pattern(&batch, &labels, ForwardMode::Training { dropout: hp.dropout, rng: &mut r })
    };
    let (_, base_pattern) = pattern(&model)?;
    let penalties = model.penalties();
    let n_tensors = penalties.len();
    let mut worst = 0.0f64;
    let mut probes = 0;
    let mut attempts = 0;
    while probes < MODEL_PROBES {
        attempts += 1;
        if attempts > 20 * MODEL_PROBES {
            return Err(crate::Error::arg("model gradient check could not find enough smooth probes"));
        }
        let ti = rng.gen_range(0..n_tensors);
        let ci = rng.gen_range(0..grads.tensors()[ti].len());
        let w = model.tensors()[ti].data()[ci];
        let lambda = match penalties[ti] {
            Penalty::Conv => hp.lambda_conv,
            Penalty::Lstm => hp.lambda_lstm,
            Penalty::None => 0.0,
        };
        if lambda > 0.0 && w.abs() < 10.0 * GRADCHECK_EPS {
            continue;
        }
        let mut eval = |delta: f64| -> Result<(f64, u64)> {
            model.tensors_mut()[ti].data_mut()[ci] = w + delta;
            let out = pattern(&model);
            model.tensors_mut()[ti].data_mut()[ci] = w;
            // the penalty changes only through this coordinate
            out.map(|(loss, p)| (loss + lambda * ((w + delta).abs() - w.abs()), p))
        };
        let (plus, p_plus) = eval(GRADCHECK_EPS)?;
        let (minus, p_minus) = eval(-GRADCHECK_EPS)?;
        if p_plus != base_pattern || p_minus != base_pattern {
            continue;
        }
        let numerical = (plus - minus) / (2.0 * GRADCHECK_EPS);
        let analytic = grads.tensors()[ti].data()[ci] * fault;
        worst = worst.max(relative_error(analytic, numerical));
        probes += 1;
    }
    Ok(worst)
}
