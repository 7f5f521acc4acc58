use super::*;
use crate::error::Result;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(-1.0, 1.0))
}

#[test]
fn conv1d_hand_example() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
    let w = tape.constant(t(&[1, 1, 3], &[1.0, 0.0, -1.0]));
    let y = tape.conv1d(x, w, 1, 1).unwrap();
    assert_eq!(tape.shape(y), &[1, 3]);
    assert_eq!(tape.value(y).data(), &[-2.0, -2.0, 2.0]);
}

#[test]
fn conv1d_identity_kernel() {
    let mut rng = Rng::new(4);
    let mut tape = Tape::new();
    let xv = random(&mut rng, &[2, 3, 7]);
    let x = tape.constant(xv.clone());
    let w = tape.constant(Tensor::from_fn(&[3, 3, 1], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 }));
    let y = tape.conv1d(x, w, 1, 0).unwrap();
    assert_eq!(tape.value(y), &xv);
}

#[test]
fn conv1d_zero_input_gives_zero_gradient() {
    let mut rng = Rng::new(5);
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2, 2, 6]), true);
    let w = tape.leaf(random(&mut rng, &[3, 2, 3]), true);
    let y = tape.conv1d(x, w, 2, 1).unwrap();
    assert!(tape.value(y).data().iter().all(|v| *v == 0.0));
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    // dL/dw involves only the zero input
    assert!(g.wrt(w, &tape).data().iter().all(|v| *v == 0.0));
}

#[test]
fn conv1d_reports_bad_dimension() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 5]));
    let w = tape.constant(Tensor::zeros(&[1, 3, 3]));
    let err = tape.conv1d(x, w, 1, 1).unwrap_err().to_string();
    assert!(err.contains("C_in"), "{err}");
    let w = tape.constant(Tensor::zeros(&[1, 2, 9]));
    let err = tape.conv1d(x, w, 1, 1).unwrap_err().to_string();
    assert!(err.contains("kernel size"), "{err}");
}

#[test]
fn conv1d_output_length() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[4, 2, 64]));
    let w = tape.constant(Tensor::zeros(&[5, 2, 4]));
    let y = tape.conv1d(x, w, 2, 1).unwrap();
    assert_eq!(tape.shape(y), &[4, 5, 32]);
    let wt = tape.constant(Tensor::zeros(&[5, 2, 4]));
    let z = tape.conv_transpose1d(y, wt, 2, 1).unwrap();
    assert_eq!(tape.shape(z), &[4, 2, 64]);
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![-1.0, -4.0]));
    let y = tape.softmax_temp(x, 1.0).unwrap();
    let v = tape.value(y).data();
    assert!((v[0] - 0.9526).abs() < 1e-4 && (v[1] - 0.0474).abs() < 1e-4);

    let x = tape.constant(Tensor::vector(vec![0.7; 3]));
    let y = tape.softmax_temp(x, 3.5).unwrap();
    for v in tape.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let x = tape.constant(Tensor::vector(vec![5.0, 0.0]));
    let y = tape.softmax_temp(x, 1e-3).unwrap();
    assert!(tape.value(y).data()[0] > 1.0 - 1e-6);

    assert!(tape.softmax_temp(x, 0.0).is_err());
    assert!(tape.softmax_temp(x, -1.0).is_err());
}

#[test]
fn gumbel_sampling() {
    let mut a = Rng::new(11);
    let mut b = Rng::new(11);
    let ta = sample_gumbel(&mut a, &[4, 5]);
    let tb = sample_gumbel(&mut b, &[4, 5]);
    assert!(ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let mut rng = Rng::new(2024);
    let n = 1_000_000;
    let mean = (0..n).map(|_| rng.gumbel()).sum::<f64>() / n as f64;
    assert!((mean - 0.577_215_664_9).abs() < 5e-3, "mean {mean}");
}

#[test]
fn mse_examples() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
    let b = tape.constant(Tensor::vector(vec![0.0, 0.0]));
    let l = tape.mse_loss(a, b).unwrap();
    assert_eq!(tape.value(l).item(), 2.5);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.wrt(a, &tape).data(), &[1.0, 2.0]);

    let c = tape.mse_loss(a, a).unwrap();
    assert_eq!(tape.value(c).item(), 0.0);

    let d = tape.constant(Tensor::vector(vec![0.0; 3]));
    assert!(tape.mse_loss(a, d).is_err());
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0), true);
    let y = tape.mul(x, x).unwrap();
    assert_eq!(tape.backward(y).unwrap().wrt(x, &tape).item(), 6.0);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(2.0), true);
    let n = tape.scale(x, -1.0).unwrap();
    let y = tape.relu(n).unwrap();
    assert_eq!(tape.backward(y).unwrap().wrt(x, &tape).item(), 0.0);
}

#[test]
fn backward_rejects_non_scalar_and_zero_fills_unused_leaves() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true);
    let unused = tape.leaf(Tensor::vector(vec![5.0; 4]), true);
    let y = tape.scale(x, 2.0).unwrap();
    assert!(tape.backward(y).is_err());
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(unused).unwrap(), &[0.0; 4]);
}

#[test]
fn fan_out_accumulates() {
    // f(x) = g(x) + g(x) with g(x) = sum(exp(x) * x)
    let mut rng = Rng::new(8);
    let xv = random(&mut rng, &[5]);
    let grad_of = |twice: bool| {
        let mut tape = Tape::new();
        let x = tape.leaf(xv.clone(), true);
        let mut g = || -> Result<Var> {
            let e = tape.exp(x)?;
            let p = tape.mul(e, x)?;
            tape.sum(p)
        };
        let a = g().unwrap();
        let out = if twice {
            let b = g().unwrap();
            tape.add(a, b).unwrap()
        } else {
            a
        };
        tape.backward(out).unwrap().wrt(x, &tape)
    };
    let (one, two) = (grad_of(false), grad_of(true));
    for (a, b) in one.data().iter().zip(two.data()) {
        assert!((2.0 * a - b).abs() <= 1e-14 * b.abs(), "{a} {b}");
    }
}

#[test]
fn non_finite_values_are_rejected_when_checking() {
    let mut tape = Tape::new().with_finite_checks(true);
    let x = tape.constant(Tensor::scalar(1000.0));
    assert!(matches!(tape.exp(x), Err(crate::Error::NonFinite { op: "exp" })));
}

#[test]
fn grad_check_quadratic_and_negative_control() {
    let a = t(&[3, 3], &[2.0, 0.5, 0.1, 0.5, 3.0, -0.2, 0.1, -0.2, 1.0]);
    let quad = move |tape: &mut Tape, v: &[Var]| -> Result<Var> {
        let m = tape.constant(a.clone());
        let ax = tape.matvec(m, v[0])?;
        let p = tape.mul(ax, v[0])?;
        tape.sum(p)
    };
    let x = Tensor::vector(vec![0.3, -1.2, 0.8]);
    let r = grad_check(&quad, &[x.clone()], 1e-5, 1e-6).unwrap();
    assert!(r.pass, "{r:?}");

    let wrong = |tape: &Tape, loss: Var| {
        let mut g = tape.backward(loss)?;
        let _ = g.take(Var(0));
        Ok(g)
    };
    let r = grad_check_with(&quad, wrong, &[x], 1e-5, 1e-6).unwrap();
    assert!(!r.pass);

    let non_scalar = |tape: &mut Tape, v: &[Var]| tape.scale(v[0], 2.0);
    assert!(grad_check(non_scalar, &[Tensor::vector(vec![1.0, 2.0])], 1e-5, 1e-6).is_err());
}


#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = Rng::new(77);
    let reports = check_primitives(&mut rng, 20, 1e-5, 1e-4).unwrap();
    assert_eq!(reports.len(), primitive_cases().len());
    for (name, r) in reports {
        assert!(r.pass, "{name}: {r:?}");
    }
}

/// Large batches are processed in chunks; the result must match running each
/// sample on its own.
#[test]
fn chunked_convolutions_match_per_sample() {
    let mut rng = Rng::new(5);
    for transposed in [false, true] {
        let (n, cin, cout, len, taps) = if transposed { (3, 6, 40, 110, 4) } else { (3, 40, 6, 150, 3) };
        let x = random(&mut rng, &[n, cin, len]);
        let w = if transposed { random(&mut rng, &[cin, cout, taps]) } else { random(&mut rng, &[cout, cin, taps]) };
        let run = |x: Tensor| {
            let mut t = Tape::new();
            let xv = t.leaf(x, true);
            let wv = t.leaf(w.clone(), true);
            let y = if transposed { t.conv_transpose1d(xv, wv, 2, 1) } else { t.conv1d(xv, wv, 1, 1) }.unwrap();
            let sq = t.mul(y, y).unwrap();
            let loss = t.sum(sq).unwrap();
            let g = t.backward(loss).unwrap();
            (t.value(y).data().to_vec(), g.get(xv).unwrap().to_vec(), g.get(wv).unwrap().to_vec())
        };
        let (y, dx, dw) = run(x.clone());
        let (mut y1, mut dx1, mut dw1) = (Vec::new(), Vec::new(), vec![0.0; dw.len()]);
        for row in x.data().chunks(cin * len) {
            let (a, b, c) = run(Tensor::new(vec![cin, len], row.to_vec()).unwrap());
            y1.extend(a);
            dx1.extend(b);
            dw1.iter_mut().zip(c).for_each(|(s, v)| *s += v);
        }
        for (a, b) in y.iter().zip(&y1).chain(dx.iter().zip(&dx1)).chain(dw.iter().zip(&dw1)) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn softmax_rows_are_probability_vectors() {
    let mut rng = Rng::new(13);
    let mut tape = Tape::new();
    for _ in 0..50 {
        let x = tape.constant(Tensor::from_fn(&[4, 9], |_| rng.uniform_range(-30.0, 30.0)));
        let tau = rng.uniform_range(0.01, 10.0);
        let y = tape.softmax_temp(x, tau).unwrap();
        for row in tape.value(y).data().chunks(9) {
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn relu_margin_reports_nearest_kink() {
    let mut tape = Tape::new();
    assert_eq!(tape.relu_margin(), None);
    let x = tape.constant(t(&[3], &[-0.5, 0.25, 2.0]));
    tape.relu(x).unwrap();
    let y = tape.constant(t(&[2], &[0.1, -3.0]));
    tape.relu(y).unwrap();
    assert_eq!(tape.relu_margin(), Some(0.1));
}
