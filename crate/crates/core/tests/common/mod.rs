//! Independent reference implementations used by the integration tests and
//! the acceptance runner.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rif_core::analysis::{mean_shift, Kernel};
use rif_core::lifecycle::{
    detect_inactive, rank_by_l1, reactivate_complementary, reactivate_redundant, FilterBank, Reactivation,
};
use rif_core::model::ToyNet;
use rif_core::tensor::{ops, Graph, ParamId, Real, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
}

/// Plain six-loop cross-correlation with explicit bounds checks.
pub fn conv_loops(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let [f, _, kk, _] = k.shape().try_into().unwrap();
    let ho = (h + 2 * pad - kk) / stride + 1;
    let wo = (w + 2 * pad - kk) / stride + 1;
    let mut out = vec![0.0; n * f * ho * wo];
    for b in 0..n {
        for o in 0..f {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..kk {
                            for kx in 0..kk {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((b * c + ci) * h + iy as usize) * w + ix as usize];
                                let kv = k.data()[((o * c + ci) * kk + ky) * kk + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * f + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, f, ho, wo], out).unwrap()
}

pub fn gap_loops(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    Tensor::from_fn(&[n, c], |i| {
        let plane = &x.data()[i * h * w..(i + 1) * h * w];
        let mut s = 0.0;
        for v in plane {
            s += v;
        }
        s / (h * w) as f64
    })
}

pub fn linear_loops(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (n, d, m) = (x.shape()[0], x.shape()[1], w.shape()[1]);
    Tensor::from_fn(&[n, m], |i| {
        let (r, j) = (i / m, i % m);
        let mut s = b.data()[j];
        for k in 0..d {
            s += x.data()[r * d + k] * w.data()[k * m + j];
        }
        s
    })
}

/// Central difference `(f(p+h) - f(p-h)) / 2h` for every coordinate of `p`.
pub fn numeric_grad(p: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut q = p.clone();
    (0..p.len())
        .map(|i| {
            let orig = q.data()[i];
            q.data_mut()[i] = orig + h;
            let up = f(&q);
            q.data_mut()[i] = orig - h;
            let down = f(&q);
            q.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |a - n| / max(|a|, |n|, floor)` over all coordinates.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;

/// Gradient-check report: op name and worst relative error.
pub type Check = (&'static str, f64);

/// Finite-difference checks of every differentiable op and the toy network,
/// each reduced to a scalar through a fixed random projection.
pub fn gradient_checks(seed: u64) -> Vec<Check> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let h = FD_STEP;

    // conv2d, both inputs, across stride/pad combinations.
    for &(stride, pad) in &[(1, 1), (2, 1), (1, 0), (2, 0)] {
        let x = randn(&[2, 3, 7, 5], 1.0, &mut r);
        let k = randn(&[4, 3, 3, 3], 0.5, &mut r);
        let y = ops::conv2d_forward(&x, &k, stride, pad).unwrap();
        let proj = randn(y.shape(), 1.0, &mut r);
        let (gx, gk) = ops::conv2d_backward(&x, &k, &proj, stride, pad, true).unwrap();
        let dot = |t: &Tensor<f64>| t.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>();
        let nx = numeric_grad(&x, h, |x| dot(&ops::conv2d_forward(x, &k, stride, pad).unwrap()));
        let nk = numeric_grad(&k, h, |k| dot(&ops::conv2d_forward(&x, k, stride, pad).unwrap()));
        out.push(("conv2d input", max_rel_err(gx.unwrap().data(), &nx, FD_FLOOR)));
        out.push(("conv2d kernels", max_rel_err(gk.data(), &nk, FD_FLOOR)));
    }

    // relu away from the kink.
    let x = Tensor::from_fn(&[40], |i| {
        let v: f64 = r.random_range(0.05..2.0);
        if i % 2 == 0 {
            v
        } else {
            -v
        }
    });
    let proj = randn(&[40], 1.0, &mut r);
    let g = ops::relu_backward(&x, &proj).unwrap();
    let n = numeric_grad(&x, h, |x| {
        ops::relu(x).data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
    });
    out.push(("relu", max_rel_err(g.data(), &n, FD_FLOOR)));

    let x = randn(&[3, 4, 5, 5], 1.0, &mut r);
    let proj = randn(&[3, 4], 1.0, &mut r);
    let g = ops::global_avg_pool_backward(x.shape(), &proj).unwrap();
    let n = numeric_grad(&x, h, |x| {
        ops::global_avg_pool(x)
            .unwrap()
            .data()
            .iter()
            .zip(proj.data())
            .map(|(a, b)| a * b)
            .sum()
    });
    out.push(("global_avg_pool", max_rel_err(g.data(), &n, FD_FLOOR)));

    let x = randn(&[5, 6], 1.0, &mut r);
    let w = randn(&[6, 3], 0.5, &mut r);
    let b = randn(&[3], 0.5, &mut r);
    let proj = randn(&[5, 3], 1.0, &mut r);
    let (gx, gw, gb) = ops::linear_backward(&x, &w, &proj).unwrap();
    let dot = |t: Tensor<f64>| t.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum::<f64>();
    out.push((
        "linear input",
        max_rel_err(
            gx.data(),
            &numeric_grad(&x, h, |x| dot(ops::linear(x, &w, &b).unwrap())),
            FD_FLOOR,
        ),
    ));
    out.push((
        "linear weights",
        max_rel_err(
            gw.data(),
            &numeric_grad(&w, h, |w| dot(ops::linear(&x, w, &b).unwrap())),
            FD_FLOOR,
        ),
    ));
    out.push((
        "linear bias",
        max_rel_err(
            gb.data(),
            &numeric_grad(&b, h, |b| dot(ops::linear(&x, &w, b).unwrap())),
            FD_FLOOR,
        ),
    ));

    let logits = randn(&[6, 5], 2.0, &mut r);
    let labels: Vec<usize> = (0..6).map(|_| r.random_range(0..5)).collect();
    let (_, g) = ops::softmax_cross_entropy(&logits, &labels).unwrap();
    let n = numeric_grad(&logits, h, |l| ops::softmax_cross_entropy(l, &labels).unwrap().0);
    out.push(("softmax_cross_entropy", max_rel_err(g.data(), &n, FD_FLOOR)));

    let pred = randn(&[4, 3], 1.0, &mut r);
    let target = randn(&[4, 3], 1.0, &mut r);
    let (_, g) = ops::squared_error(&pred, &target).unwrap();
    let n = numeric_grad(&pred, h, |p| ops::squared_error(p, &target).unwrap().0);
    out.push(("squared_error", max_rel_err(g.data(), &n, FD_FLOOR)));

    // Whole network through the graph.
    let mut net = ToyNet::<f64>::new(4, 3);
    net.init_weights(seed, 0.3);
    let x = randn(&[3, 3, 7, 7], 1.0, &mut r);
    let labels = vec![0, 2, 1];
    let (_, grads, _) = net.loss_and_grads(x.clone(), &labels).unwrap();
    let names = ["network conv1", "network conv2", "network fc weight", "network fc bias"];
    for (pi, name) in names.iter().enumerate() {
        let p = net.params()[pi].clone();
        let n = numeric_grad(&p, h, |q| {
            let mut probe = net.clone();
            *probe.params_mut()[pi] = q.clone();
            probe.loss_and_grads(x.clone(), &labels).unwrap().0
        });
        let a = grads.get(ParamId(pi)).unwrap();
        out.push((name, max_rel_err(a.data(), &n, FD_FLOOR)));
    }

    // Graph composition of the same ops with squared error on top.
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let k = randn(&[2, 3, 3, 3], 0.5, &mut r);
    let kv = g.param(ParamId(0), k.clone());
    let c = g.conv2d(xv, kv, 2, 1).unwrap();
    let target = randn(g.value(c).unwrap().shape(), 1.0, &mut r);
    let loss = g.squared_error(c, &target).unwrap();
    let a = g.backward(loss).unwrap();
    let n = numeric_grad(&k, h, |k| {
        ops::squared_error(&ops::conv2d_forward(&x, k, 2, 1).unwrap(), &target)
            .unwrap()
            .0
    });
    out.push((
        "graph conv2d + squared_error",
        max_rel_err(a.get(ParamId(0)).unwrap().data(), &n, FD_FLOOR),
    ));
    out
}

/// Largest eigenpairs of a symmetric PSD matrix by power iteration with
/// deflation.
pub fn power_iteration(m: &DMatrix<f64>, count: usize, seed: u64) -> Vec<(f64, DVector<f64>)> {
    let mut a = m.clone();
    let mut r = rng(seed);
    let mut out = Vec::new();
    for _ in 0..count {
        let mut v = DVector::from_fn(a.nrows(), |_, _| r.random_range(-1.0..1.0));
        v /= v.norm();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w = &a * &v;
            let norm = w.norm();
            if norm == 0.0 {
                break;
            }
            let next = w / norm;
            let done = (&next - &v).norm() < 1e-14;
            v = next;
            lambda = v.dot(&(&a * &v));
            if done {
                break;
            }
        }
        a -= lambda * &v * v.transpose();
        out.push((lambda, v));
    }
    out
}

/// `k` Gaussian blobs in `dims` dimensions, centres `sep` apart along distinct
/// axes, `per` points each; returns the points and their blob ids.
pub fn blobs(
    k: usize,
    per: usize,
    dims: usize,
    spread: f64,
    sep: f64,
    r: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut points = Vec::new();
    let mut ids = Vec::new();
    for b in 0..k {
        let mut centre = vec![0.0; dims];
        centre[b % dims] = sep * (1 + b / dims) as f64;
        for _ in 0..per {
            points.push(
                centre
                    .iter()
                    .map(|c| c + spread * Distribution::<f64>::sample(&StandardNormal, r))
                    .collect(),
            );
            ids.push(b);
        }
    }
    (points, ids)
}

/// True when two labelings induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    use std::collections::HashMap;
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter()
        .zip(b)
        .all(|(x, y)| *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

pub fn random_conv_case(r: &mut ChaCha8Rng) -> (Tensor<f64>, Tensor<f64>, usize, usize) {
    let k = [1, 3, 5][r.random_range(0..3)];
    let stride = r.random_range(1..=3);
    let pad = r.random_range(0..=k / 2 + 1);
    // Output size must divide exactly: pick it, then derive the input size.
    let side = |r: &mut ChaCha8Rng| {
        let out: usize = r.random_range(1..6);
        ((out - 1) * stride + k).saturating_sub(2 * pad).max(1)
    };
    let h = side(r);
    let w = side(r);
    let x = randn(&[r.random_range(1..4), r.random_range(1..5), h, w], 1.0, r);
    if ops::conv_output_size(h, k, stride, pad).is_err() || ops::conv_output_size(w, k, stride, pad).is_err() {
        return random_conv_case(r);
    }
    let kern = randn(&[r.random_range(1..5), x.shape()[1], k, k], 1.0, r);
    (x, kern, stride, pad)
}

pub fn random_rows(n: usize, d: usize, r: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    // Anisotropic so eigenvalues are well separated.
    (0..n)
        .map(|_| (0..d).map(|j| r.random_range(-1.0..1.0) * (1.0 + j as f64)).collect())
        .collect()
}

pub fn sweep(points: &[Vec<f64>], kernel: Kernel) -> Vec<(f64, usize)> {
    (1..=60)
        .map(|step| {
            let h = 0.05 * step as f64;
            (h, mean_shift(points, h, kernel).unwrap().n_clusters)
        })
        .collect()
}

/// A bank mixing healthy, weak and dead filters, with some exact duplicates
/// so that ties in L1 occur.
pub fn random_bank<T: Real>(r: &mut ChaCha8Rng) -> FilterBank<T> {
    let n = r.random_range(4..48);
    let mut filters: Vec<Vec<T>> = Vec::with_capacity(n);
    for _ in 0..n {
        let scale = match r.random_range(0..5) {
            0 => 0.0,
            1 => 10f64.powf(r.random_range(-9.0..-3.0)),
            2 if !filters.is_empty() => {
                let j = r.random_range(0..filters.len());
                filters.push(filters[j].clone());
                continue;
            }
            _ => r.random_range(0.01..0.3),
        };
        filters.push((0..27).map(|_| T::lit(scale * r.random_range(-1.0..1.0))).collect());
    }
    FilterBank::from_filters(3, 3, &filters).unwrap()
}

pub fn l1_loop<T: Real>(f: &[T]) -> f64 {
    let mut s = 0.0f64;
    for w in f {
        s += w.as_f64().abs();
    }
    s
}

pub fn bits<T: Real>(f: &[T]) -> Vec<u64> {
    f.iter().map(|w| w.as_f64().to_bits()).collect()
}

/// Post-conditions shared by the two transplant policies.
pub fn check_transplant<T: Real>(
    before: &FilterBank<T>,
    after: &FilterBank<T>,
    inactive: &[usize],
    ranking: &[usize],
    events: &[Reactivation],
    negate: bool,
) {
    let k = inactive.len();
    assert_eq!(events.len(), k);
    let targets: Vec<usize> = events.iter().map(|e| e.target).collect();
    assert_eq!(targets, inactive);

    let mut sources: Vec<usize> = events.iter().map(|e| e.source.unwrap()).collect();
    let mut top: Vec<usize> = ranking
        .iter()
        .copied()
        .filter(|i| !inactive.contains(i))
        .take(k)
        .collect();
    sources.sort_unstable();
    top.sort_unstable();
    assert_eq!(sources, top, "sources must be the top-k active filters, each once");

    for e in events {
        let src = before.filter(e.source.unwrap());
        let dst = after.filter(e.target);
        if negate {
            for (d, s) in dst.iter().zip(src) {
                assert_eq!(d.as_f64().to_bits(), (-s.as_f64()).to_bits());
                assert_eq!((*d + *s).as_f64(), 0.0);
            }
        } else {
            assert_eq!(bits(dst), bits(src));
        }
        assert_eq!(l1_loop(dst).to_bits(), l1_loop(src).to_bits());
        assert_eq!(e.l1_after.to_bits(), after.l1_norm(e.target).unwrap().to_bits());
    }
    for i in (0..before.len()).filter(|i| !inactive.contains(i)) {
        assert_eq!(bits(before.filter(i)), bits(after.filter(i)), "non-target {i} changed");
    }
}

/// Runs `trials` transplant checks on random banks that have at least as
/// many active as inactive filters. Returns the number of events checked.
pub fn policy_trials<T: Real>(negate: bool, seed: u64, trials: usize) -> usize {
    let mut r = rng(seed);
    let (mut done, mut events_seen) = (0, 0);
    while done < trials {
        let bank: FilterBank<T> = random_bank(&mut r);
        let inactive = detect_inactive(&bank, 1e-3);
        let ranking = rank_by_l1(&bank);
        if inactive.is_empty() || inactive.len() * 2 > bank.len() {
            continue;
        }
        done += 1;
        let mut after = bank.clone();
        let events = if negate {
            reactivate_complementary(&mut after, &inactive, &ranking, &mut r)
        } else {
            reactivate_redundant(&mut after, &inactive, &ranking, &mut r)
        }
        .unwrap();
        check_transplant(&bank, &after, &inactive, &ranking, &events, negate);
        events_seen += events.len();
    }
    events_seen
}
