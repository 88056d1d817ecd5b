//! Central-difference checks of every operator's backward pass.

use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dsp::{octave_bands, StftConfig, Window};
use crate::error::Error;

type Build = dyn Fn(&Tape, &[Var]) -> crate::Result<Var>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn eval(f: &Build, inputs: &[Tensor]) -> f64 {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars).unwrap();
    tape.value(out).unwrap().item().unwrap()
}

/// Compares analytic gradients against central differences.
fn check(f: &Build, inputs: &[Tensor], tol: f64) {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    let h = 1e-6;
    for (vi, (v, t)) in vars.iter().zip(inputs).enumerate() {
        let g = grads.get(*v).map(|g| g.data().to_vec()).unwrap_or(vec![0.0; t.numel()]);
        for i in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[vi].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[vi].data_mut()[i] -= h;
            let fd = (eval(f, &plus) - eval(f, &minus)) / (2.0 * h);
            let err = (fd - g[i]).abs();
            assert!(
                err <= tol * (1.0 + fd.abs()),
                "input {vi} element {i}: analytic {} vs numeric {fd}",
                g[i]
            );
        }
    }
}

/// Projects onto a fixed random direction so every output element matters.
fn project(tape: &Tape, y: Var, seed: u64) -> crate::Result<Var> {
    let v = tape.value(y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(v.shape(), &mut rng);
    let w = tape.constant(w);
    // Σ y·w expressed with the available operators: ((y + w)² − (y − w)²)/4 summed.
    let a = tape.add(y, w)?;
    let nw = tape.scale(w, -1.0)?;
    let b = tape.add(y, nw)?;
    let zero = tape.constant(Tensor::zeros(v.shape()));
    let n = v.numel() as f64;
    let sa = tape.mse_loss(a, zero)?;
    let sb = tape.mse_loss(b, zero)?;
    let nsb = tape.scale(sb, -1.0)?;
    let d = tape.add(sa, nsb)?;
    tape.scale(d, n / 4.0)
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (stride, pad, k) in [(1, 0, 3), (2, 1, 4), (3, 2, 5)] {
        let inputs = [
            random(&[2, 2, 9], &mut rng),
            random(&[3, 2, k], &mut rng),
            random(&[3], &mut rng),
        ];
        let f = move |t: &Tape, v: &[Var]| {
            let y = t.conv1d(v[0], v[1], Some(v[2]), stride, pad)?;
            project(t, y, 7)
        };
        check(&f, &inputs, 1e-6);
    }
}

#[test]
fn conv_transpose1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (stride, pad, k, op) in [(1, 1, 3, 0), (2, 1, 4, 1), (4, 2, 8, 3)] {
        let inputs = [
            random(&[2, 3, 4], &mut rng),
            random(&[3, 2, k], &mut rng),
            random(&[2], &mut rng),
        ];
        let f = move |t: &Tape, v: &[Var]| {
            let y = t.conv_transpose1d(v[0], v[1], Some(v[2]), stride, pad, op)?;
            project(t, y, 8)
        };
        check(&f, &inputs, 1e-6);
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x, w), y> == <x, convT(y, w)> for the same weight tensor.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 3, 10], &mut rng);
    let w = random(&[4, 3, 4], &mut rng);
    let tape = Tape::new();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
    let cx = tape.value(tape.conv1d(xv, wv, None, 2, 1).unwrap()).unwrap();
    let y = random(cx.shape(), &mut rng);
    let yv = tape.constant(y.clone());
    let ty = tape.value(tape.conv_transpose1d(yv, wv, None, 2, 1, 0).unwrap()).unwrap();
    assert_eq!(ty.shape(), x.shape());
    let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10);
}

#[test]
fn batchnorm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = [
        random(&[3, 2, 5], &mut rng),
        random(&[2], &mut rng),
        random(&[2], &mut rng),
    ];
    for mode in [BnMode::Train, BnMode::Eval] {
        let f = move |t: &Tape, v: &[Var]| {
            let mut stats = RunningStats {
                mean: vec![0.1, -0.2],
                var: vec![0.8, 1.3],
            };
            let y = t.batchnorm1d(v[0], v[1], v[2], &mut stats, mode)?;
            project(t, y, 9)
        };
        check(&f, &inputs, 1e-5);
    }
}

#[test]
fn batchnorm_running_stats() {
    let x = Tensor::new(vec![2, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
    let tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::full(&[1], 1.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let mut stats = RunningStats::new(1);
    let y = tape.batchnorm1d(xv, g, b, &mut stats, BnMode::Train).unwrap();
    // mean 4, biased var 5, unbiased var 20/3.
    assert!((stats.mean[0] - 0.4).abs() < 1e-12);
    assert!((stats.var[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
    let y = tape.value(y).unwrap();
    let s = (5.0 + BN_EPS).sqrt();
    assert!((y.data()[0] + 3.0 / s).abs() < 1e-12);

    let one = tape.constant(Tensor::zeros(&[1, 1, 4]));
    assert!(tape
        .batchnorm1d(one, g, b, &mut stats, BnMode::Train)
        .is_err());
}

#[test]
fn activation_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 3, 4], &mut rng);
    let f = |t: &Tape, v: &[Var]| {
        let y = t.leaky_relu(v[0], 0.2)?;
        project(t, y, 1)
    };
    check(&f, &[x.clone()], 1e-6);
    let f = |t: &Tape, v: &[Var]| {
        let y = t.tanh(v[0])?;
        project(t, y, 2)
    };
    check(&f, &[x.clone()], 1e-6);
    let f = |t: &Tape, v: &[Var]| {
        let y = t.prelu(v[0], v[1])?;
        project(t, y, 3)
    };
    check(&f, &[x, Tensor::full(&[3], 0.25)], 1e-6);
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random(&[2, 1, 5], &mut rng);
    let b = random(&[2, 1, 5], &mut rng);
    let f = |t: &Tape, v: &[Var]| t.mse_loss(v[0], v[1]);
    check(&f, &[a.clone(), b], 1e-6);
    for target in [0.0, 1.0] {
        let f = move |t: &Tape, v: &[Var]| t.bce_logit_loss(v[0], target);
        check(&f, &[a.clone()], 1e-6);
    }
}

#[test]
fn bce_is_stable_for_large_logits() {
    let tape = Tape::new();
    let l = tape.leaf(Tensor::new(vec![2], vec![800.0, -800.0]).unwrap(), true);
    let loss = tape.bce_logit_loss(l, 1.0).unwrap();
    let v = tape.value(loss).unwrap().item().unwrap();
    assert!((v - 400.0).abs() < 1e-9, "{v}");
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(l).unwrap().data(), &[0.0, -0.5]);
}

#[test]
fn structural_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random(&[2, 2, 3], &mut rng);
    let b = random(&[2, 1, 3], &mut rng);
    let f = |t: &Tape, v: &[Var]| {
        let c = t.concat_channels(v[0], v[1])?;
        let c = t.fit_length(c, 5)?;
        let c = t.fit_length(c, 2)?;
        let r = t.reshape(c, &[2, 6])?;
        let s = t.scale(r, -1.5)?;
        let s = t.reshape(s, &[12])?;
        let p = project(t, s, 4)?;
        let q = t.sum(s)?;
        t.add(p, q)
    };
    check(&f, &[a, b], 1e-6);
}

#[test]
fn edr_gradients() {
    let cfg = StftConfig::new(16, 8, Window::Hann).unwrap();
    let p = octave_bands(8000, 16, &[250.0, 500.0, 1000.0, 2000.0]).unwrap();
    let basis = Rc::new(EdrBasis::new(&cfg, &p, 40).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[2, 1, 40], &mut rng);
    let target = random(&[2, p.n_bands(), basis.n_frames()], &mut rng);
    let f = move |t: &Tape, v: &[Var]| {
        let e = t.edr(v[0], &basis)?;
        let tgt = t.constant(target.clone());
        t.mse_loss(e, tgt)
    };
    check(&f, &[x], 1e-5);
}

#[test]
fn gradients_accumulate_over_reuse() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1], vec![3.0]).unwrap(), true);
    let y = tape.add(x, x).unwrap();
    let z = tape.add(y, x).unwrap();
    let g = tape.backward(z).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[3.0]);
}

#[test]
fn backward_twice_fails() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0), true);
    let y = tape.scale(x, 2.0).unwrap();
    tape.backward(y).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::TapeConsumed)));
    assert!(matches!(tape.scale(x, 1.0), Err(Error::TapeConsumed)));
}

#[test]
fn backward_needs_scalar() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[3]), true);
    assert!(matches!(tape.backward(x), Err(Error::InvalidInput(_))));
}

#[test]
fn constants_get_no_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(1.0), true);
    let c = tape.constant(Tensor::scalar(4.0));
    let y = tape.add(x, c).unwrap();
    let g = tape.backward(y).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.len(), 1);
}

#[test]
fn shape_errors_are_reported() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 8]));
    let w = tape.constant(Tensor::zeros(&[3, 1, 3]));
    assert!(matches!(tape.conv1d(x, w, None, 1, 0), Err(Error::Shape(_))));
    let a = tape.constant(Tensor::zeros(&[2]));
    let b = tape.constant(Tensor::zeros(&[3]));
    assert!(matches!(tape.add(a, b), Err(Error::Shape(_))));
    assert!(matches!(tape.mse_loss(a, b), Err(Error::Shape(_))));
    let x = tape.constant(Tensor::zeros(&[1, 1, 4]));
    let w = tape.constant(Tensor::zeros(&[1, 1, 3]));
    assert!(matches!(
        tape.conv_transpose1d(x, w, None, 2, 0, 2),
        Err(Error::InvalidConfig(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conv_output_length(l in 4usize..40, k in 1usize..5, s in 1usize..4, p in 0usize..3) {
        prop_assume!(k <= l + 2 * p);
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, l]));
        let w = tape.constant(Tensor::zeros(&[2, 1, k]));
        let y = tape.conv1d(x, w, None, s, p).unwrap();
        let shape = tape.value(y).unwrap().shape().to_vec();
        prop_assert_eq!(shape, vec![1, 2, (l + 2 * p - k) / s + 1]);
    }

    #[test]
    fn conv_is_linear_in_input(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x1 = random(&[1, 2, 7], &mut rng);
        let x2 = random(&[1, 2, 7], &mut rng);
        let w = random(&[2, 2, 3], &mut rng);
        let tape = Tape::new();
        let wv = tape.constant(w);
        let run = |x: Tensor| {
            let v = tape.constant(x);
            tape.value(tape.conv1d(v, wv, None, 2, 1).unwrap()).unwrap()
        };
        let sum: Vec<f64> = x1.data().iter().zip(x2.data()).map(|(a, b)| a + b).collect();
        let y12 = run(Tensor::new(vec![1, 2, 7], sum).unwrap());
        let (y1, y2) = (run(x1), run(x2));
        for ((a, b), c) in y1.data().iter().zip(y2.data()).zip(y12.data()) {
            prop_assert!((a + b - c).abs() < 1e-12);
        }
    }
}
