use num_complex::Complex64;
use proptest::prelude::*;

use super::*;
use crate::model::{build_tfim, Boundary, Lattice, PauliAxis, PauliString};

fn finite_difference(a: &Ansatz, theta: &[f64], x: SpinConfiguration, k: usize, eps: f64) -> Complex64 {
    let mut p = theta.to_vec();
    p[k] += eps;
    let up = a.eval_log_amplitude(&p, x);
    p[k] -= 2.0 * eps;
    let down = a.eval_log_amplitude(&p, x);
    (up - down) / (2.0 * eps)
}

fn architectures(n: usize) -> Vec<Ansatz> {
    vec![
        Ansatz::rbm(n, 2).unwrap(),
        Ansatz::jastrow(n).unwrap(),
        Ansatz::feedforward(n, vec![5, 3]).unwrap(),
        Ansatz::full(n).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradients_match_central_differences(seed in any::<u64>(), bits in any::<u64>(), arch in 0usize..4) {
        let n = 5;
        let a = &architectures(n)[arch];
        let theta = a.random_parameters(0.5, seed);
        let x = SpinConfiguration::new(bits & 0b11111, n).unwrap();
        let grad = a.log_derivatives(&theta, x).unwrap();
        for k in 0..a.n_params() {
            let fd = finite_difference(a, theta.as_slice(), x, k, 1e-5);
            let scale = grad.0[k].norm().max(1.0);
            prop_assert!((grad.0[k] - fd).norm() <= 1e-6 * scale,
                "{} k={k}: {} vs {}", a.architecture().tag(), grad.0[k], fd);
        }
    }

    #[test]
    fn complex_pairs_are_holomorphic(seed in any::<u64>(), bits in any::<u64>()) {
        for a in architectures(4) {
            let theta = a.random_parameters(0.7, seed);
            let x = SpinConfiguration::new(bits & 0b1111, 4).unwrap();
            let g = a.log_derivatives(&theta, x).unwrap();
            for (re, im) in a.layout().complex_pairs() {
                prop_assert!((g.0[im] - Complex64::i() * g.0[re]).norm() < 1e-14);
            }
        }
    }
}

#[test]
fn layout_partitions_parameters() {
    for a in architectures(6) {
        let mut covered = vec![false; a.n_params()];
        for b in a.layout().blocks() {
            for c in &mut covered[b.offset..b.offset + b.len] {
                assert!(!*c);
                *c = true;
            }
        }
        assert!(covered.into_iter().all(|c| c), "{}", a.architecture().tag());
    }
}

#[test]
fn parameter_counts() {
    assert_eq!(Ansatz::rbm(4, 2).unwrap().n_params(), 2 * (4 + 8 + 32));
    assert_eq!(Ansatz::jastrow(4).unwrap().n_params(), 2 * (4 + 6));
    assert_eq!(Ansatz::feedforward(4, vec![3, 2]).unwrap().n_params(), 15 + 8 + 2 * 3);
    assert_eq!(Ansatz::full(4).unwrap().n_params(), 32);
}

#[test]
fn zero_weight_rbm_is_constant() {
    let a = Ansatz::rbm(4, 2).unwrap();
    let theta = ParameterVector::zeros(a.n_params());
    let expected = 8.0 * 2f64.ln();
    for x in SpinConfiguration::basis(4) {
        let chi = a.log_amplitude(&theta, x).unwrap();
        assert!((chi - expected).norm() < 1e-14);
    }
}

#[test]
fn rbm_single_unit_closed_form() {
    let a = Ansatz::rbm(1, 1).unwrap();
    let theta = ParameterVector::new(vec![0.3, -0.2, 0.1, 0.4, -0.7, 0.25]);
    let x = SpinConfiguration::new(1, 1).unwrap();
    let w = Complex64::new(-0.7, 0.25);
    let b = Complex64::new(0.1, 0.4);
    let s = -1.0;
    let chi = Complex64::new(0.3, -0.2) * s + (2.0 * (b + w * s).cosh()).ln();
    assert!((a.log_amplitude(&theta, x).unwrap() - chi).norm() < 1e-14);
    let g = a.log_derivatives(&theta, x).unwrap();
    let t = (b + w * s).tanh();
    assert!((g.0[0] - s).norm() < 1e-14);
    assert!((g.0[2] - t).norm() < 1e-14);
    assert!((g.0[4] - t * s).norm() < 1e-14);
    for k in 0..6 {
        let fd = finite_difference(&a, theta.as_slice(), x, k, 1e-5);
        assert!((g.0[k] - fd).norm() < 1e-8);
    }
}

#[test]
fn ln_2cosh_is_stable() {
    let big = Complex64::new(800.0, 0.3);
    let v = super::networks::ln_2cosh(big);
    assert!(v.is_finite());
    assert!((v - big).norm() < 1e-12);
    assert!((super::networks::ln_2cosh(-big) - big).norm() < 1e-12);
}

#[test]
fn full_parametrization_is_identity_map() {
    let a = Ansatz::full(3).unwrap();
    let theta = a.random_parameters(1.0, 11);
    for x in SpinConfiguration::basis(3) {
        let k = x.index();
        let expected = Complex64::new(theta.as_slice()[2 * k], theta.as_slice()[2 * k + 1]);
        assert_eq!(a.log_amplitude(&theta, x).unwrap(), expected);
        let g = a.log_derivatives(&theta, x).unwrap();
        for (j, gj) in g.0.iter().enumerate() {
            let want = if j == 2 * k {
                Complex64::new(1.0, 0.0)
            } else if j == 2 * k + 1 {
                Complex64::i()
            } else {
                Complex64::new(0.0, 0.0)
            };
            assert_eq!(*gj, want);
        }
    }
}

#[test]
fn full_parametrization_encodes_any_state() {
    let n = 4;
    let psi: Vec<Complex64> = (0..16)
        .map(|k| Complex64::new((k as f64 * 0.37).sin() + 1.1, (k as f64 * 1.3).cos()))
        .collect();
    let a = Ansatz::full(n).unwrap();
    let mut theta = vec![0.0; a.n_params()];
    for (k, p) in psi.iter().enumerate() {
        let l = p.ln();
        theta[2 * k] = l.re;
        theta[2 * k + 1] = l.im;
    }
    let theta = ParameterVector::new(theta);
    for x in SpinConfiguration::basis(n) {
        let amp = a.log_amplitude(&theta, x).unwrap().exp();
        assert!((amp - psi[x.index()]).norm() < 1e-14);
    }
}

#[test]
fn attaching_z_flips_sign_of_down_configurations() {
    let n = 3;
    let a = Ansatz::full(n).unwrap();
    let theta = a.random_parameters(0.8, 2);
    let z1 = PauliOperator::single(n, 1, PauliAxis::Z, 1.0).unwrap();
    let b = a.attach_diagonal(&z1).unwrap();
    assert_eq!(b.n_params(), a.n_params());
    for x in SpinConfiguration::basis(n) {
        let before = a.log_amplitude(&theta, x).unwrap().exp();
        let after = b.log_amplitude(&theta, x).unwrap().exp();
        let sign = if x.is_up(1) { 1.0 } else { -1.0 };
        assert!((after - sign * before).norm() < 1e-14);
        // factors carry no parameters
        assert_eq!(
            a.log_derivatives(&theta, x).unwrap(),
            b.log_derivatives(&theta, x).unwrap()
        );
    }
}

#[test]
fn attached_zero_factor_gives_sentinel() {
    let n = 2;
    let a = Ansatz::rbm(n, 1).unwrap();
    let theta = a.random_parameters(0.1, 1);
    // (1 + Z_0)/2 projects on site 0 up
    let proj = PauliOperator::new(
        n,
        vec![
            PauliString::identity(0.5),
            PauliString::new(0.5, vec![(0, PauliAxis::Z)]).unwrap(),
        ],
    )
    .unwrap();
    let b = a.attach_diagonal(&proj).unwrap();
    for x in SpinConfiguration::basis(n) {
        let chi = b.log_amplitude(&theta, x).unwrap();
        assert_eq!(is_vanishing(chi), !x.is_up(0));
        if is_vanishing(chi) {
            assert_eq!(chi, LOG_ZERO);
        }
    }
}

#[test]
fn attach_identity_is_noop_and_rejects_offdiagonal() {
    let a = Ansatz::jastrow(3).unwrap();
    let theta = a.random_parameters(0.4, 3);
    let b = a.attach_diagonal(&PauliOperator::identity(3).unwrap()).unwrap();
    for x in SpinConfiguration::basis(3) {
        assert!((a.log_amplitude(&theta, x).unwrap() - b.log_amplitude(&theta, x).unwrap()).norm() < 1e-15);
    }
    let x0 = PauliOperator::single(3, 0, PauliAxis::X, 1.0).unwrap();
    assert!(matches!(a.attach_diagonal(&x0), Err(Error::NotDiagonal(_))));
    let wrong = PauliOperator::identity(4).unwrap();
    assert!(matches!(a.attach_diagonal(&wrong), Err(Error::SiteMismatch { .. })));
}

#[test]
fn parameter_checks() {
    let a = Ansatz::rbm(3, 1).unwrap();
    let x = SpinConfiguration::all_up(3);
    let short = ParameterVector::zeros(a.n_params() - 1);
    assert!(matches!(a.log_amplitude(&short, x), Err(Error::ParameterLength { .. })));
    let mut bad = ParameterVector::zeros(a.n_params());
    bad.as_mut_slice()[4] = f64::NAN;
    assert!(matches!(a.log_amplitude(&bad, x), Err(Error::NonFiniteParameter(4))));
    let other = SpinConfiguration::all_up(4);
    let ok = ParameterVector::zeros(a.n_params());
    assert!(matches!(a.log_amplitude(&ok, other), Err(Error::SiteMismatch { .. })));
}

#[test]
fn random_parameters_are_reproducible() {
    let a = Ansatz::rbm(4, 1).unwrap();
    assert_eq!(a.random_parameters(1e-2, 5), a.random_parameters(1e-2, 5));
    assert_ne!(a.random_parameters(1e-2, 5), a.random_parameters(1e-2, 6));
    assert!(a.random_parameters(1e-2, 5).as_slice().iter().all(|v| v.abs() <= 1e-2));
}

fn assert_encodes(a: &Ansatz, theta: &ParameterVector, psi0: &ProductState, up_to_constant: bool) {
    let n = psi0.n_sites();
    let x0 = SpinConfiguration::all_up(n);
    let offset = if up_to_constant {
        a.log_amplitude(theta, x0).unwrap() - psi0.amplitude(x0).ln()
    } else {
        Complex64::new(0.0, 0.0)
    };
    for x in SpinConfiguration::basis(n) {
        let chi = a.log_amplitude(theta, x).unwrap() - offset;
        assert!(
            (chi.exp() - psi0.amplitude(x)).norm() < 1e-12,
            "{}: {x:?}",
            a.architecture().tag()
        );
    }
}

#[test]
fn initial_parameters_encode_product_states() {
    let n = 4;
    let psi0 = ProductState::new(
        (0..n)
            .map(|i| [Complex64::new(0.8, 0.1 * i as f64), Complex64::new(0.3, -0.5)])
            .collect(),
    )
    .unwrap();
    let jas = Ansatz::jastrow(n).unwrap();
    assert_encodes(&jas, &jas.initial_parameters(&psi0, 1e-2, 1).unwrap(), &psi0, true);
    let full = Ansatz::full(n).unwrap();
    assert_encodes(&full, &full.initial_parameters(&psi0, 1e-2, 1).unwrap(), &psi0, false);
    // zero hidden weights make the rbm encode psi0 exactly up to a constant
    let rbm = Ansatz::rbm(n, 1).unwrap();
    assert_encodes(&rbm, &rbm.initial_parameters(&psi0, 0.0, 1).unwrap(), &psi0, true);

    let plus = ProductState::polarized(n, "+x").unwrap();
    let ff = Ansatz::feedforward(n, vec![3]).unwrap();
    assert_encodes(&ff, &ff.initial_parameters(&plus, 1e-2, 1).unwrap(), &plus, false);
    assert!(ff.initial_parameters(&psi0, 1e-2, 1).is_err());
}

#[test]
fn cumulant_at_zero_time_is_the_product_state() {
    let n = 5;
    let psi0 = ProductState::new(
        (0..n)
            .map(|i| [Complex64::new(0.6, 0.2), Complex64::new(0.1 * i as f64 + 0.2, 0.7)])
            .collect(),
    )
    .unwrap();
    let h = build_tfim(&Lattice::chain(n, Boundary::Periodic).unwrap(), 1.0, 0.7, 0.2).unwrap();
    let (a, theta) = cumulant_init(&psi0, &h, 0.0).unwrap();
    for x in SpinConfiguration::basis(n) {
        let amp = a.log_amplitude(&theta, x).unwrap().exp();
        assert!((amp - psi0.amplitude(x)).norm() < 1e-13);
    }
}

#[test]
fn cumulant_matches_local_cumulants() {
    let n = 4;
    let psi0 = ProductState::new(
        (0..n)
            .map(|i| [Complex64::new(0.9, 0.0), Complex64::new(0.3, 0.2 * i as f64 - 0.1)])
            .collect(),
    )
    .unwrap();
    let mut h = build_tfim(&Lattice::chain(n, Boundary::Open).unwrap(), 0.8, 0.6, 0.3).unwrap();
    h = h
        .plus(&PauliOperator::new(n, vec![PauliString::new(0.4, vec![(1, PauliAxis::Y), (2, PauliAxis::Y)]).unwrap()]).unwrap())
        .unwrap();
    let t = 0.13;
    let (a, theta) = cumulant_init(&psi0, &h, t).unwrap();
    let h2 = h.mul(&h).unwrap();
    for x in SpinConfiguration::basis(n) {
        let loc = |op: &PauliOperator| -> Complex64 {
            op.connected_configurations(x)
                .unwrap()
                .into_iter()
                .map(|(xp, m)| m * psi0.amplitude(xp) / psi0.amplitude(x))
                .sum()
        };
        let e = loc(&h);
        let var = loc(&h2) - e * e;
        let want = psi0.amplitude(x) * (Complex64::new(0.0, -t) * e - t * t / 2.0 * var).exp();
        let got = a.log_amplitude(&theta, x).unwrap().exp();
        assert!((got - want).norm() < 1e-12, "{x:?}: {got} vs {want}");
    }
}

#[test]
fn cumulant_error_is_third_order_for_a_two_level_system() {
    // H = -h X: e^{-iHt} = cos(ht) + i sin(ht) X
    let h_field = 0.9;
    // |↑⟩ itself has a vanishing ↓ amplitude, so tilt it
    let psi0 = ProductState::new(vec![[Complex64::new(0.8, 0.0), Complex64::new(0.3, 0.2)]]).unwrap();
    let h = PauliOperator::single(1, 0, PauliAxis::X, -h_field).unwrap();
    let exact = |t: f64, x: SpinConfiguration| -> Complex64 {
        let (c, s) = ((h_field * t).cos(), (h_field * t).sin());
        let [u, d] = psi0.site(0);
        let i = Complex64::i();
        if x.is_up(0) {
            c * u + i * s * d
        } else {
            i * s * u + c * d
        }
    };
    let err = |t: f64| -> f64 {
        let (a, theta) = cumulant_init(&psi0, &h, t).unwrap();
        SpinConfiguration::basis(1)
            .map(|x| (a.log_amplitude(&theta, x).unwrap().exp() - exact(t, x)).norm())
            .fold(0.0, f64::max)
    };
    let ratio = err(0.02) / err(0.01);
    assert!((ratio - 8.0).abs() < 2.0, "{ratio}");
}

#[test]
fn cumulant_rejects_vanishing_amplitudes_and_mismatch() {
    let h = PauliOperator::single(2, 0, PauliAxis::X, 1.0).unwrap();
    let up = ProductState::polarized(2, "up").unwrap();
    assert!(cumulant_init(&up, &h, 0.1).is_err());
    let plus = ProductState::polarized(3, "+x").unwrap();
    assert!(matches!(cumulant_init(&plus, &h, 0.1), Err(Error::SiteMismatch { .. })));
}

#[test]
fn serde_round_trip() {
    let a = Ansatz::feedforward(3, vec![4]).unwrap();
    let json = serde_json::to_string(&a).unwrap();
    let back: Ansatz = serde_json::from_str(&json).unwrap();
    assert_eq!(a, back);
    let z = PauliOperator::single(3, 2, PauliAxis::Z, 1.0).unwrap();
    let b = Ansatz::rbm(3, 1).unwrap().attach_diagonal(&z).unwrap();
    let back: Ansatz = serde_json::from_str(&serde_json::to_string(&b).unwrap()).unwrap();
    assert_eq!(b, back);
}
