//! Oracles and check suites shared by the integration tests and the
//! acceptance target. Each suite returns measurements; callers decide
//! how to report them.
#![allow(dead_code)]

use dnfs_core::arch::ArchSpec;
use dnfs_core::loss::{
    black_pixel_correctness, clamp_probabilities, composite_loss, cross_entropy_loss, iou_metric,
    jaccard_loss, LossConfig, MaskPair,
};
use dnfs_core::ops::{
    concat_channels, conv2d_backward, conv2d_forward, conv_transpose2d_backward,
    conv_transpose2d_forward, maxpool2, maxpool2_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, split_channels, ConvParams,
};
use dnfs_core::{Mode, Real, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: impl Into<Shape>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

pub fn binary(rng: &mut ChaCha8Rng, shape: impl Into<Shape>, p_one: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| if rng.random_bool(p_one) { 1.0 } else { 0.0 })
}

/// `||a - b|| / max(||a||, ||b||)`, with a tiny floor so all-zero pairs pass.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_grad(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn with_data(shape: Shape, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.dot(b).unwrap()
}

/// Worst relative error over `trials` for each checked primitive.
pub struct GradReport {
    pub op: &'static str,
    pub trials: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

const FD_STEP: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-4;
pub const LOSS_TOL: f64 = 1e-5;

fn random_conv(rng: &mut ChaCha8Rng, transposed: bool) -> (ConvParams<f64>, Shape) {
    let ci = rng.random_range(1..=3);
    let co = rng.random_range(1..=3);
    let k = rng.random_range(1..=3);
    let s = rng.random_range(1..=2);
    let p = rng.random_range(0..k);
    let n = rng.random_range(1..=2);
    let kernel = uniform(rng, [co, ci, k, k], -1.0, 1.0);
    let bias = (0..co).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut params = ConvParams::new(kernel, bias, s, p).unwrap();
    if transposed && s > 1 && rng.random_bool(0.5) {
        params = params.with_output_padding(1);
    }
    let pick = |rng: &mut ChaCha8Rng| loop {
        let h = rng.random_range(2..=6usize);
        if transposed || (h + 2 * p >= k && (h + 2 * p - k) % s == 0) {
            break h;
        }
    };
    let (h, w) = (pick(rng), pick(rng));
    (params, Shape::new(n, ci, h, w))
}

fn conv_with_kernel(p: &ConvParams<f64>, kernel: &[f64], bias: &[f64]) -> ConvParams<f64> {
    ConvParams::new(
        with_data(p.kernel.shape(), kernel),
        bias.to_vec(),
        p.stride,
        p.padding,
    )
    .unwrap()
    .with_output_padding(p.output_padding)
}

fn check_conv_trial(rng: &mut ChaCha8Rng, transposed: bool) -> f64 {
    let (params, in_shape) = random_conv(rng, transposed);
    let fwd = |x: &Tensor<f64>, p: &ConvParams<f64>| {
        if transposed {
            conv_transpose2d_forward(x, p).unwrap()
        } else {
            conv2d_forward(x, p).unwrap()
        }
    };
    let x = uniform(rng, in_shape, -1.0, 1.0);
    let out_shape = fwd(&x, &params).shape();
    let r = uniform(rng, out_shape, -1.0, 1.0);
    let grads = if transposed {
        conv_transpose2d_backward(&x, &params, &r).unwrap()
    } else {
        conv2d_backward(&x, &params, &r).unwrap()
    };
    let fx = fd_grad(
        |v| dot(&fwd(&with_data(in_shape, v), &params), &r),
        x.data(),
        FD_STEP,
    );
    let kd = params.kernel.data().to_vec();
    let fk = fd_grad(
        |v| dot(&fwd(&x, &conv_with_kernel(&params, v, &params.bias)), &r),
        &kd,
        FD_STEP,
    );
    let fb = fd_grad(
        |v| dot(&fwd(&x, &conv_with_kernel(&params, &kd, v)), &r),
        &params.bias,
        FD_STEP,
    );
    rel_err(grads.input.data(), &fx)
        .max(rel_err(grads.kernel.data(), &fk))
        .max(rel_err(&grads.bias, &fb))
}

/// Random input whose 2x2 windows have a unique maximum separated from the
/// runner-up by more than the finite-difference step.
fn untied_pool_input(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    loop {
        let x = uniform(rng, shape, -1.0, 1.0);
        let ok = (0..shape.n).all(|n| {
            (0..shape.c).all(|c| {
                (0..shape.h / 2).all(|i| {
                    (0..shape.w / 2).all(|j| {
                        let mut v = [
                            x.at(n, c, 2 * i, 2 * j),
                            x.at(n, c, 2 * i, 2 * j + 1),
                            x.at(n, c, 2 * i + 1, 2 * j),
                            x.at(n, c, 2 * i + 1, 2 * j + 1),
                        ];
                        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
                        v[0] - v[1] > 1e-3
                    })
                })
            })
        });
        if ok {
            return x;
        }
    }
}

fn small_shape(rng: &mut ChaCha8Rng, even: bool) -> Shape {
    let dim = |rng: &mut ChaCha8Rng| {
        if even {
            2 * rng.random_range(1..=3)
        } else {
            rng.random_range(1..=5)
        }
    };
    let (n, c) = (rng.random_range(1..=2), rng.random_range(1..=3));
    Shape::new(n, c, dim(rng), dim(rng))
}

fn check_elementwise(
    rng: &mut ChaCha8Rng,
    fwd: impl Fn(&Tensor<f64>) -> Tensor<f64>,
    bwd: impl Fn(&Tensor<f64>, &Tensor<f64>, &Tensor<f64>) -> Tensor<f64>,
    input: impl Fn(&mut ChaCha8Rng, Shape) -> Tensor<f64>,
    even: bool,
) -> f64 {
    let shape = small_shape(rng, even);
    let x = input(rng, shape);
    let y = fwd(&x);
    let r = uniform(rng, y.shape(), -1.0, 1.0);
    let analytic = bwd(&x, &y, &r);
    let numeric = fd_grad(|v| dot(&fwd(&with_data(shape, v)), &r), x.data(), FD_STEP);
    rel_err(analytic.data(), &numeric)
}

fn check_concat(rng: &mut ChaCha8Rng) -> f64 {
    let sa = small_shape(rng, false);
    let sb = Shape::new(sa.n, rng.random_range(1..=3), sa.h, sa.w);
    let a = uniform(rng, sa, -1.0, 1.0);
    let b = uniform(rng, sb, -1.0, 1.0);
    let r = uniform(rng, concat_channels(&a, &b).unwrap().shape(), -1.0, 1.0);
    let (ga, gb) = split_channels(&r, sa.c).unwrap();
    let fa = fd_grad(
        |v| dot(&concat_channels(&with_data(sa, v), &b).unwrap(), &r),
        a.data(),
        FD_STEP,
    );
    let fb = fd_grad(
        |v| dot(&concat_channels(&a, &with_data(sb, v)).unwrap(), &r),
        b.data(),
        FD_STEP,
    );
    rel_err(ga.data(), &fa).max(rel_err(gb.data(), &fb))
}

type LossFn = fn(&MaskPair<f64>, f64) -> (f64, Tensor<f64>);

fn check_loss(rng: &mut ChaCha8Rng, loss: LossFn) -> f64 {
    let n = rng.random_range(1..=3);
    let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
    let shape = Shape::new(n, 1, h, w);
    // Interior probabilities keep the clamp inactive and curvature moderate.
    let p = uniform(rng, shape, 0.1, 0.9);
    let y = binary(rng, shape, 0.3);
    let psi = rng.random_range(0.0..=1.0);
    let (_, g) = loss(&MaskPair::new(&p, &y).unwrap(), psi);
    let numeric = fd_grad(
        |v| loss(&MaskPair::new(&with_data(shape, v), &y).unwrap(), psi).0,
        p.data(),
        FD_STEP,
    );
    rel_err(g.data(), &numeric)
}

/// Finite-difference check of every primitive and both losses.
pub fn gradient_suite(trials: usize, seed: u64) -> Vec<GradReport> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    let mut run = |op: &'static str, tolerance: f64, f: &mut dyn FnMut(&mut ChaCha8Rng) -> f64| {
        let worst = (0..trials).map(|_| f(&mut rng)).fold(0.0, f64::max);
        out.push(GradReport {
            op,
            trials,
            worst,
            tolerance,
        });
    };
    run("conv2d", OP_TOL, &mut |r| check_conv_trial(r, false));
    run("conv_transpose2d", OP_TOL, &mut |r| {
        check_conv_trial(r, true)
    });
    run("maxpool2", OP_TOL, &mut |r| {
        check_elementwise(
            r,
            |x| maxpool2(x).unwrap().0,
            |x, _, g| maxpool2_backward(&maxpool2(x).unwrap().1, g).unwrap(),
            untied_pool_input,
            true,
        )
    });
    run("relu", OP_TOL, &mut |r| {
        check_elementwise(
            r,
            relu,
            |x, _, g| relu_backward(x, g).unwrap(),
            // Stay clear of the kink at zero.
            |r, s| {
                Tensor::from_fn(s, |_| {
                    let v: f64 = r.random_range(0.01..1.0);
                    if r.random_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
            },
            false,
        )
    });
    run("sigmoid", OP_TOL, &mut |r| {
        check_elementwise(
            r,
            sigmoid,
            |_, y, g| sigmoid_backward(y, g).unwrap(),
            |r, s| uniform(r, s, -4.0, 4.0),
            false,
        )
    });
    run("concat", OP_TOL, &mut check_concat);
    run("cross_entropy", LOSS_TOL, &mut |r| {
        check_loss(r, |pair, _| cross_entropy_loss(pair).unwrap())
    });
    run("jaccard", LOSS_TOL, &mut |r| {
        check_loss(r, |pair, _| jaccard_loss(pair, 1.0).unwrap())
    });
    run("composite", LOSS_TOL, &mut |r| {
        check_loss(r, |pair, psi| {
            let cfg = LossConfig {
                psi,
                ..LossConfig::default()
            };
            composite_loss(pair, &cfg).unwrap()
        })
    });
    out
}

/// Direct seven-index summation in the engine's accumulation order:
/// bias first, then `(c_in, kh, kw)`, skipping taps that land in padding.
pub fn conv_oracle<T: Real>(x: &Tensor<T>, p: &ConvParams<T>) -> Tensor<T> {
    let s = x.shape();
    let (k, st, pad) = (p.k() as isize, p.stride as isize, p.padding as isize);
    let ho = ((s.h as isize + 2 * pad - k) / st + 1) as usize;
    let wo = ((s.w as isize + 2 * pad - k) / st + 1) as usize;
    let mut out = Tensor::zeros([s.n, p.c_out(), ho, wo]);
    for n in 0..s.n {
        for co in 0..p.c_out() {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = p.bias[co];
                    for ci in 0..s.c {
                        for kh in 0..k {
                            for kw in 0..k {
                                let ih = oh as isize * st + kh - pad;
                                let iw = ow as isize * st + kw - pad;
                                if ih < 0 || iw < 0 || ih >= s.h as isize || iw >= s.w as isize {
                                    continue;
                                }
                                let wv = p.kernel.at(co, ci, kh as usize, kw as usize);
                                acc = acc + x.at(n, ci, ih as usize, iw as usize) * wv;
                            }
                        }
                    }
                    *out.at_mut(n, co, oh, ow) = acc;
                }
            }
        }
    }
    out
}

pub struct ConvOracleReport {
    pub shapes: usize,
    pub exact_mismatches: usize,
    pub worst_adjoint: f64,
}

/// Random conv configuration whose output size divides exactly.
fn random_oracle_case(rng: &mut ChaCha8Rng) -> (ConvParams<f64>, Shape) {
    let k = rng.random_range(1..=5);
    let s = rng.random_range(1..=3);
    let p = rng.random_range(0..=2);
    let (ci, co, n) = (
        rng.random_range(1..=4),
        rng.random_range(1..=4),
        rng.random_range(1..=2),
    );
    let pick = |rng: &mut ChaCha8Rng| loop {
        let h = rng.random_range(1..=11usize);
        if h + 2 * p >= k && (h + 2 * p - k) % s == 0 {
            break h;
        }
    };
    let (h, w) = (pick(rng), pick(rng));
    let kernel = uniform(rng, [co, ci, k, k], -1.0, 1.0);
    let bias = (0..co).map(|_| rng.random_range(-1.0..1.0)).collect();
    (
        ConvParams::new(kernel, bias, s, p).unwrap(),
        Shape::new(n, ci, h, w),
    )
}

/// Exact forward equality against the oracle (in f32 and f64) and the
/// conv / transposed-conv adjoint identity `<Ax, y> = <x, A^T y>`.
pub fn conv_oracle_suite(shapes: usize, seed: u64) -> ConvOracleReport {
    let mut rng = rng(seed);
    let mut mismatches = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..shapes {
        let (params, shape) = random_oracle_case(&mut rng);
        let x = uniform(&mut rng, shape, -1.0, 1.0);
        if conv2d_forward(&x, &params).unwrap().data() != conv_oracle(&x, &params).data() {
            mismatches += 1;
        }
        let (x32, p32) = (x.cast::<f32>(), cast_params(&params));
        if conv2d_forward(&x32, &p32).unwrap().data() != conv_oracle(&x32, &p32).data() {
            mismatches += 1;
        }
        let linear = ConvParams::new(
            params.kernel.clone(),
            vec![0.0; params.c_out()],
            params.stride,
            params.padding,
        )
        .unwrap();
        let ax = conv2d_forward(&x, &linear).unwrap();
        let y = uniform(&mut rng, ax.shape(), -1.0, 1.0);
        let aty = conv_transpose2d_forward(&y, &params.swap_io()).unwrap();
        let (lhs, rhs) = (dot(&ax, &y), dot(&x, &aty));
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    ConvOracleReport {
        shapes,
        exact_mismatches: mismatches,
        worst_adjoint: worst,
    }
}

pub fn cast_params(p: &ConvParams<f64>) -> ConvParams<f32> {
    ConvParams::new(
        p.kernel.cast(),
        p.bias.iter().map(|&b| b as f32).collect(),
        p.stride,
        p.padding,
    )
    .unwrap()
    .with_output_padding(p.output_padding)
}

/// Largest deviation of the composite loss from the endpoint losses and
/// from linear interpolation in psi.
pub struct LossLinearityReport {
    pub pairs: usize,
    pub worst_endpoint: f64,
    pub worst_linearity: f64,
}

pub fn loss_linearity_suite(pairs: usize, seed: u64) -> LossLinearityReport {
    let mut rng = rng(seed);
    let (mut endpoint, mut linear): (f64, f64) = (0.0, 0.0);
    for _ in 0..pairs {
        let shape = Shape::new(
            rng.random_range(1..=3),
            1,
            rng.random_range(1..=8),
            rng.random_range(1..=8),
        );
        let p = clamp_probabilities(&uniform(&mut rng, shape, 0.0, 1.0));
        let y = binary(&mut rng, shape, 0.4);
        let pair = MaskPair::new(&p, &y).unwrap();
        let eps = rng.random_range(0.1..2.0);
        let at = |psi: f64| {
            let cfg = LossConfig {
                psi,
                smooth_eps: eps,
                ..LossConfig::default()
            };
            composite_loss(&pair, &cfg).unwrap().0
        };
        let ce = cross_entropy_loss(&pair).unwrap().0;
        let jac = jaccard_loss(&pair, eps).unwrap().0;
        endpoint = endpoint
            .max((at(1.0) - ce).abs())
            .max((at(0.0) - jac).abs());
        for _ in 0..5 {
            let psi = rng.random_range(0.0..=1.0);
            let interp = psi * at(1.0) + (1.0 - psi) * at(0.0);
            linear = linear.max((at(psi) - interp).abs());
        }
    }
    LossLinearityReport {
        pairs,
        worst_endpoint: endpoint,
        worst_linearity: linear,
    }
}

/// Brute-force set counting on flattened binary masks.
pub fn brute_force_metrics(pred: &[f64], target: &[f64], threshold: f64) -> (f64, Option<f64>) {
    let p: std::collections::BTreeSet<usize> =
        (0..pred.len()).filter(|&i| pred[i] >= threshold).collect();
    let t: std::collections::BTreeSet<usize> =
        (0..target.len()).filter(|&i| target[i] == 1.0).collect();
    let inter = p.intersection(&t).count();
    let union = p.union(&t).count();
    let iou = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };
    let recall = (!t.is_empty()).then(|| inter as f64 / t.len() as f64);
    (iou, recall)
}

pub struct MetricReport {
    pub pairs: usize,
    pub recall_pairs: usize,
    pub mismatches: usize,
}

pub fn metric_oracle_suite(pairs: usize, seed: u64) -> MetricReport {
    let mut rng = rng(seed);
    let shape = Shape::new(1, 1, 8, 8);
    let (mut mismatches, mut recall_pairs) = (0, 0);
    for i in 0..pairs {
        // Sweep densities so that empty and full masks show up too.
        let density = (i % 11) as f64 / 10.0;
        let pred = binary(&mut rng, shape, density);
        let target_density = rng.random_range(0.0..=1.0);
        let target = binary(&mut rng, shape, target_density);
        let pair = MaskPair::new(&pred, &target).unwrap();
        let (iou, recall) = brute_force_metrics(pred.data(), target.data(), 0.5);
        if iou_metric(&pair, 0.5).unwrap() != iou {
            mismatches += 1;
        }
        match (recall, black_pixel_correctness(&pair, 0.5)) {
            (Some(r), Ok(v)) => {
                recall_pairs += 1;
                if r != v {
                    mismatches += 1;
                }
            }
            (None, Err(_)) => {}
            _ => mismatches += 1,
        }
    }
    MetricReport {
        pairs,
        recall_pairs,
        mismatches,
    }
}

/// Whole-network finite-difference check: dnfs multiplier 1 on one 8x8
/// image with the composite loss at psi 0.5. Returns the relative error
/// between the backprop and numeric parameter gradients.
///
/// Parameters are jittered after He init: zero biases plus single-channel
/// dead ReLU regions otherwise park pre-activations exactly on the kink,
/// where central differences average the two one-sided slopes.
pub fn tiny_network_check(seed: u64) -> (usize, f64) {
    let mut net = ArchSpec::dnfs(1).build::<f64>().unwrap();
    net.init_parameters(seed);
    let mut rng = rng(seed ^ 0x5eed);
    let jittered: Vec<f64> = net
        .flat_parameters()
        .iter()
        .map(|v| v + rng.random_range(-0.05..0.05))
        .collect();
    net.set_flat_parameters(&jittered).unwrap();
    let x = uniform(&mut rng, [1, 1, 8, 8], 0.0, 1.0);
    let y = binary(&mut rng, [1, 1, 8, 8], 0.3);
    let cfg = LossConfig::default();
    let loss_of = |net: &dnfs_core::Network<f64>| {
        let (out, _) = net.forward(&x, Mode::Eval).unwrap();
        let p = clamp_probabilities(&out);
        composite_loss(&MaskPair::new(&p, &y).unwrap(), &cfg)
            .unwrap()
            .0
    };
    let (out, cache) = net.forward(&x, Mode::Train).unwrap();
    let p = clamp_probabilities(&out);
    let (_, grad) = composite_loss(&MaskPair::new(&p, &y).unwrap(), &cfg).unwrap();
    net.zero_grads();
    net.backward(cache, &grad).unwrap();
    let analytic = net.flat_gradients();
    let theta = net.flat_parameters();
    let mut probe = net.clone();
    let numeric = fd_grad(
        |v| {
            probe.set_flat_parameters(v).unwrap();
            loss_of(&probe)
        },
        &theta,
        1e-6,
    );
    (theta.len(), rel_err(&analytic, &numeric))
}
