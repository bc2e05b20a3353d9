mod common;

use std::f64::consts::PI;

use chlorocast::autodiff::{Tape, Tensor, Var};
use chlorocast::decomposition::{
    decompose, decompose_batch, decomposition_forward, fft_topk_filter, moving_average_decompose,
    period_branch, trend_branch, DecompBranchParams, DecompBranchVars, SpectralFilter,
};
use common::{check_each, max_abs_diff, project, rng};
use proptest::prelude::*;
use rand::Rng;

fn window(rows: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

/// Means over an explicitly materialised edge-replicated copy of the series.
fn padded_means(x: &[f64], w: usize) -> Vec<f64> {
    let left = (w - 1) / 2;
    let right = w - 1 - left;
    let mut padded = vec![x[0]; left];
    padded.extend_from_slice(x);
    padded.extend(std::iter::repeat_n(*x.last().unwrap(), right));
    (0..x.len())
        .map(|s| padded[s..s + w].iter().sum::<f64>() / w as f64)
        .collect()
}

/// Top-k filter evaluated with an O(n²) DFT.
fn naive_topk(x: &[f64], k: usize) -> Vec<f64> {
    let n = x.len();
    let spec: Vec<(f64, f64)> = (0..n)
        .map(|f| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
                let a = -2.0 * PI * (f * t) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect();
    let mut bins: Vec<usize> = (0..=n / 2).collect();
    let power = |f: usize| spec[f].0 * spec[f].0 + spec[f].1 * spec[f].1;
    bins.sort_by(|&a, &b| power(b).partial_cmp(&power(a)).unwrap().then(a.cmp(&b)));
    let mut keep = vec![false; n];
    for &f in &bins[..k] {
        keep[f] = true;
        keep[(n - f) % n] = true;
    }
    (0..n)
        .map(|t| {
            (0..n)
                .filter(|&f| keep[f])
                .map(|f| {
                    let a = 2.0 * PI * (f * t) as f64 / n as f64;
                    spec[f].0 * a.cos() - spec[f].1 * a.sin()
                })
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

fn sinusoid(n: usize, cycles: f64, amp: f64, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|t| amp * (2.0 * PI * cycles * t as f64 / n as f64 + phase).sin())
        .collect()
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[test]
fn moving_average_examples() {
    let (trend, raw) = moving_average_decompose(&window(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]), 3).unwrap();
    let want = [4.0 / 3.0, 2.0, 3.0, 11.0 / 3.0];
    assert!(max_abs_diff(trend.data(), &want) < 1e-15);
    assert!(max_abs_diff(raw.data(), &[1.0 - 4.0 / 3.0, 0.0, 0.0, 4.0 - 11.0 / 3.0]) < 1e-15);

    let c = Tensor::full(&[20, 3], 2.5);
    for w in [1, 2, 5, 12, 40] {
        let (trend, raw) = moving_average_decompose(&c, w).unwrap();
        assert!(trend.data().iter().all(|v| (v - 2.5).abs() < 1e-15));
        assert!(raw.data().iter().all(|v| v.abs() < 1e-15));
    }

    let x = Tensor::randn(&[9, 2], 1.0, &mut rng(3));
    let (trend, raw) = moving_average_decompose(&x, 1).unwrap();
    assert_eq!(trend, x);
    assert!(raw.data().iter().all(|v| *v == 0.0));
    assert!(moving_average_decompose(&x, 0).is_err());
}

#[test]
fn moving_average_matches_padded_oracle() {
    let mut r = rng(11);
    for trial in 0..30 {
        let t = r.random_range(1..50);
        let f = r.random_range(1..4);
        let w = r.random_range(1..16);
        let x = Tensor::randn(&[t, f], 2.0, &mut rng(trial));
        let (trend, _) = moving_average_decompose(&x, w).unwrap();
        for c in 0..f {
            let col: Vec<f64> = (0..t).map(|s| x.data()[s * f + c]).collect();
            let got: Vec<f64> = (0..t).map(|s| trend.data()[s * f + c]).collect();
            assert!(max_abs_diff(&got, &padded_means(&col, w)) < 1e-12, "t={t} w={w}");
        }
    }
}

#[test]
fn trend_plus_raw_period_reconstructs_input() {
    for seed in 0..100 {
        let x = Tensor::randn(&[72, 7], 5.0, &mut rng(seed));
        let (trend, raw) = moving_average_decompose(&x, 12).unwrap();
        let back: Vec<f64> = trend.data().iter().zip(raw.data()).map(|(a, b)| a + b).collect();
        assert!(max_abs_diff(&back, x.data()) <= 1e-12);
    }
}

#[test]
fn filter_matches_naive_dft_oracle() {
    let mut r = rng(5);
    for trial in 0..40 {
        let n = r.random_range(1..60);
        let k = r.random_range(1..=n / 2 + 1);
        let x: Vec<f64> = Tensor::randn(&[n], 1.0, &mut rng(100 + trial)).into_data();
        let got = fft_topk_filter(&x, k).unwrap();
        assert!(max_abs_diff(&got, &naive_topk(&x, k)) < 1e-9, "n={n} k={k}");
    }
}

#[test]
fn filter_examples() {
    for n in [16, 17, 72] {
        let x = Tensor::randn(&[n], 1.0, &mut rng(n as u64)).into_data();
        assert!(max_abs_diff(&fft_topk_filter(&x, n / 2 + 1).unwrap(), &x) < 1e-9);

        let s = sinusoid(n, 3.0, 2.0, 0.4);
        assert!(max_abs_diff(&fft_topk_filter(&s, 1).unwrap(), &s) < 1e-9);

        let major = sinusoid(n, 2.0, 3.0, 0.1);
        let minor = sinusoid(n, 5.0, 1.0, 1.3);
        let mix: Vec<f64> = major.iter().zip(&minor).map(|(a, b)| a + b).collect();
        assert!(max_abs_diff(&fft_topk_filter(&mix, 1).unwrap(), &major) < 1e-6);
    }
}

#[test]
fn decompose_filters_every_feature() {
    let t = 48;
    let f = 3;
    let x = Tensor::randn(&[t, f], 1.0, &mut rng(8));
    let d = decompose(&x, 12, 5, &SpectralFilter::new(t)).unwrap();
    for c in 0..f {
        let raw: Vec<f64> = (0..t).map(|s| d.raw_period.data()[s * f + c]).collect();
        let pure: Vec<f64> = (0..t).map(|s| d.pure_period.data()[s * f + c]).collect();
        assert!(max_abs_diff(&pure, &naive_topk(&raw, 5)) < 1e-9);
    }
}

fn branch_params(f: usize, hidden: usize, p: usize, seed: u64) -> DecompBranchParams {
    let mut params = DecompBranchParams::init(f, hidden, p, &mut rng(seed));
    // nonzero biases so their gradients and effects are exercised
    params.for_each_mut("d", &mut |name, t| {
        if name.contains("bias") {
            *t = Tensor::randn(t.shape(), 0.5, &mut rng(seed + name.len() as u64));
        }
    });
    params
}

fn flatten(p: &DecompBranchParams) -> Vec<Tensor> {
    let mut out = Vec::new();
    p.map("d", &mut |_, t| out.push(t.clone()));
    out
}

fn rebind(p: &DecompBranchParams, vars: &[Var]) -> DecompBranchVars {
    let mut it = vars.iter();
    p.map("d", &mut |_, _| *it.next().unwrap())
}

fn bind(tape: &mut Tape, p: &DecompBranchParams) -> DecompBranchVars {
    p.map("d", &mut |_, t| tape.param(t.clone()))
}

#[test]
fn trend_branch_examples() {
    let x = Tensor::randn(&[10, 4], 1.0, &mut rng(1));
    let mut p = DecompBranchParams::init(4, 4, 2, &mut rng(2));
    p.trend_weight = Tensor::eye(4);
    let mut tape = Tape::new();
    let v = bind(&mut tape, &p);
    let xv = tape.constant(x.clone());
    let y = trend_branch(&mut tape, xv, &v).unwrap();
    assert_eq!(tape.value(y), &x);

    p.trend_weight = Tensor::zeros(&[4, 3]);
    p.trend_bias = Tensor::vector(vec![1.0, -2.0, 0.5]);
    let mut tape = Tape::new();
    let v = bind(&mut tape, &p);
    let xv = tape.constant(x);
    let y = trend_branch(&mut tape, xv, &v).unwrap();
    for row in tape.value(y).data().chunks(3) {
        assert_eq!(row, &[1.0, -2.0, 0.5]);
    }

    let bad = tape.constant(Tensor::zeros(&[10, 5]));
    assert!(trend_branch(&mut tape, bad, &v).is_err());
}

#[test]
fn period_branch_zero_input_and_impulse_response() {
    let p = DecompBranchParams::init(3, 5, 4, &mut rng(4));
    let mut tape = Tape::new();
    let v = bind(&mut tape, &p);
    let z = tape.constant(Tensor::zeros(&[12, 3]));
    let y = period_branch(&mut tape, z, &v).unwrap();
    assert_eq!(tape.shape(y), &[12, 5]);
    assert!(tape.value(y).data().iter().all(|v| *v == 0.0));

    // only the width-3 kernel is live and the fusion passes its channel through
    let mut p = DecompBranchParams::init(1, 1, 1, &mut rng(5));
    for k in &mut p.period_kernels {
        *k = Tensor::zeros(k.shape());
    }
    p.period_kernels[0] = Tensor::new(vec![3, 1, 1], vec![0.7, -1.1, 2.3]).unwrap();
    p.fuse_weight = Tensor::new(vec![3, 1], vec![1.0, 0.0, 0.0]).unwrap();
    let mut impulse = vec![0.0; 8];
    impulse[2] = 1.0;
    let mut tape = Tape::new();
    let v = bind(&mut tape, &p);
    let x = tape.constant(Tensor::new(vec![8, 1], impulse).unwrap());
    let y = period_branch(&mut tape, x, &v).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.7, -1.1, 2.3, 0.0, 0.0, 0.0]);
}

#[test]
fn period_branch_is_causal() {
    let t = 40;
    let p = DecompBranchParams::init(3, 4, 3, &mut rng(6));
    let x = Tensor::randn(&[t, 3], 1.0, &mut rng(7));
    let run = |x: &Tensor| {
        let mut tape = Tape::new();
        let v = bind(&mut tape, &p);
        let xv = tape.constant(x.clone());
        let y = period_branch(&mut tape, xv, &v).unwrap();
        tape.value(y).clone()
    };
    let full = run(&x);
    for cut in 0..t {
        let mut z = x.clone();
        z.data_mut()[cut * 3..].fill(0.0);
        let y = run(&z);
        assert_eq!(&y.data()[..cut * 4], &full.data()[..cut * 4], "cut at {cut}");
    }
}

#[test]
fn branch_gradients_match_finite_differences() {
    for seed in 0..3 {
        let p = branch_params(3, 4, 2, seed);
        let x = Tensor::randn(&[2, 9, 3], 1.0, &mut rng(seed + 10));
        let mut tensors = flatten(&p);
        tensors.push(x);
        let n = tensors.len();

        let err = check_each(&tensors, |tape, vars| {
            let v = rebind(&p, &vars[..n - 1]);
            let y = trend_branch(tape, vars[n - 1], &v)?;
            project(tape, y, seed)
        });
        assert!(err < 1e-5, "trend branch seed {seed}: {err}");

        let err = check_each(&tensors, |tape, vars| {
            let v = rebind(&p, &vars[..n - 1]);
            let y = period_branch(tape, vars[n - 1], &v)?;
            project(tape, y, seed)
        });
        assert!(err < 1e-5, "period branch seed {seed}: {err}");
    }
}

#[test]
fn decomposition_forward_end_to_end() {
    for seed in 0..3 {
        let p = branch_params(3, 5, 2, seed);
        let x = Tensor::randn(&[2, 16, 3], 1.0, &mut rng(seed + 20));
        let err = check_each(&flatten(&p), |tape, vars| {
            let v = rebind(&p, vars);
            let y = decomposition_forward(tape, &x, &v, 4, 3)?;
            project(tape, y, seed)
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }

    // a constant window has no period, so only the trend branch speaks
    let p = branch_params(2, 3, 2, 9);
    let x = Tensor::full(&[1, 16, 2], 1.5);
    let mut tape = Tape::new();
    let v = bind(&mut tape, &p);
    let y = decomposition_forward(&mut tape, &x, &v, 12, 9).unwrap();
    assert_eq!(tape.shape(y), &[1, 16, 3]);
    let batch = decompose_batch(&x, 12, 9).unwrap();
    assert!(batch.pure_period.data().iter().all(|v| v.abs() < 1e-12));
    let trend = tape.constant(batch.trend.clone());
    let t_only = trend_branch(&mut tape, trend, &v).unwrap();
    let zeros = tape.constant(Tensor::zeros(&[1, 16, 2]));
    let p_zero = period_branch(&mut tape, zeros, &v).unwrap();
    let expect = tape.add(t_only, p_zero).unwrap();
    assert!(tape.value(y).max_abs_diff(tape.value(expect)) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_is_idempotent_and_removes_energy(
        x in prop::collection::vec(-10f64..10.0, 4..80),
        kf in 0f64..1.0,
    ) {
        let bins = x.len() / 2 + 1;
        let k = 1 + ((bins - 1) as f64 * kf) as usize;
        let once = fft_topk_filter(&x, k).unwrap();
        let twice = fft_topk_filter(&once, k).unwrap();
        prop_assert!(max_abs_diff(&once, &twice) < 1e-9);
        prop_assert!(energy(&once) <= energy(&x) + 1e-9);
    }

    #[test]
    fn reconstruction_holds_for_any_window(
        x in prop::collection::vec(-1e3f64..1e3, 30),
        w in 1usize..20,
    ) {
        let t = Tensor::new(vec![10, 3], x.clone()).unwrap();
        let (trend, raw) = moving_average_decompose(&t, w).unwrap();
        let back: Vec<f64> = trend.data().iter().zip(raw.data()).map(|(a, b)| a + b).collect();
        prop_assert!(max_abs_diff(&back, &x) <= 1e-12);
    }
}
