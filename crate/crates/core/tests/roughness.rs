use std::f64::consts::LN_2;

use dichotomy_core::dichotomy::{DichotomyCertificate, Form};
use dichotomy_core::roughness::{random_perturbation, rho, verify_roughness, FixedPointConfig};
use dichotomy_core::system::{fixture, Window};
use dichotomy_core::{Error, Tolerances};

fn half_line(window: Window) -> (dichotomy_core::system::CoefficientSequence, DichotomyCertificate) {
    let f = fixture("S2b").unwrap();
    let cert = DichotomyCertificate::new(f.known_projection.unwrap(), Form::A { l: 1.0, alpha: LN_2 }, window).unwrap();
    (f.sequence, cert)
}

#[test]
fn half_line_survives_near_critical_perturbation() {
    let window = Window::new(0, 120).unwrap();
    let (seq, cert) = half_line(window);
    let delta = 0.99 / rho(1.0, LN_2);
    let b = random_perturbation(2, window, delta, 17);
    let config = FixedPointConfig { tol: 1e-12, ..FixedPointConfig::default() };
    let out = verify_roughness(&seq, &cert, &b, window, Window::new(10, 30).unwrap(), &config, &Tolerances::default()).unwrap();
    let r = &out.report;
    assert!((r.predicted.rho_delta - 0.99).abs() < 1e-12);
    assert!(r.rank_preserved, "{r:?}");
    assert!(r.passed, "{r:?}");
}

#[test]
fn critical_perturbation_is_rejected() {
    let window = Window::new(0, 40).unwrap();
    let (seq, cert) = half_line(window);
    for frac in [1.0, 1.5] {
        let b = random_perturbation(2, window, frac / rho(1.0, LN_2), 5);
        let err = verify_roughness(&seq, &cert, &b, window, Window::new(5, 10).unwrap(), &FixedPointConfig::default(), &Tolerances::default())
            .unwrap_err();
        assert!(matches!(err, Error::NotAdmissible(_)), "{err:?}");
    }
}
