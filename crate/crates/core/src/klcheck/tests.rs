use super::*;

// Reference values are quoted to six decimals, so they are compared at 1e-6;
// the numeric methods are held to the tighter bounds against the closed form.

fn params(s: f64, b: f64) -> KlParams {
    KlParams::new(s, b).unwrap()
}

#[test]
fn closed_form_reference_values() {
    assert!((kl_closed_form(&params(1.0, 1.0)) - 0.229782).abs() < 1e-6);
    assert!((kl_closed_form(&params(2.0, 10.0)) - 1.210700).abs() < 1e-6);
}

#[test]
fn rejects_nonpositive_scales() {
    for (s, b) in [(0.0, 1.0), (1.0, 0.0), (-1.0, 2.0), (f64::NAN, 1.0), (1.0, f64::INFINITY)] {
        assert!(KlParams::new(s, b).is_err());
    }
}

#[test]
fn quadrature_matches_closed_form() {
    let p = params(1.0, 1.0);
    let q = kl_numeric(&p, KlMethod::Quadrature).unwrap();
    assert!((q.value - kl_closed_form(&p)).abs() < 1e-8);
    assert!((q.value - 0.229782).abs() < 1e-6);
    assert!(q.std_error.is_none());
}

#[test]
fn tail_moment_step_in_isolation() {
    let p = params(2.0, 10.0);
    let m = gaussian_expectation(&p, &|x| (-x / 10.0).exp());
    assert!((m - 0.02f64.exp()).abs() < 1e-8);
    assert!((m - 1.020201).abs() < 1e-6);
    assert!((gumbel_tail_moment(&p) - m).abs() < 1e-8);
}

#[test]
fn quadrature_is_exact_on_polynomials() {
    let v = adaptive_simpson(&|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 3, 1e-12);
    assert!((v - 3.75).abs() < 1e-12);
    let mass = gaussian_expectation(&params(3.0, 1.0), &|_| 1.0);
    assert!((mass - 1.0).abs() < 1e-12);
}

#[test]
fn monte_carlo_within_three_standard_errors() {
    let p = params(1.0, 1.0);
    let m = KlMethod::MonteCarlo { samples: 1_000_000, seed: 17 };
    let a = kl_numeric(&p, m).unwrap();
    let b = kl_numeric(&p, m).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    let se = a.std_error.unwrap();
    assert!(se > 0.0 && se < 1e-2);
    assert!((a.value - kl_closed_form(&p)).abs() < 3.0 * se, "{} vs {} (se {se})", a.value, kl_closed_form(&p));
    assert!(kl_numeric(&p, KlMethod::MonteCarlo { samples: 999, seed: 0 }).is_err());
}

#[test]
fn grid_agreement_and_nonnegativity() {
    let mut worst = 0.0f64;
    for i in 0..10 {
        for j in 0..10 {
            let s = 0.5 + 3.5 * i as f64 / 9.0;
            let b = 1.0 + 19.0 * j as f64 / 9.0;
            let p = params(s, b);
            let closed = kl_closed_form(&p);
            let quad = kl_numeric(&p, KlMethod::Quadrature).unwrap().value;
            worst = worst.max((closed - quad).abs());
            assert!(closed >= 0.0, "negative KL at sigma={s}, beta={b}: {closed}");
        }
    }
    assert!(worst < 1e-8, "worst |closed - quadrature| = {worst:e}");
}
