mod common;

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use dichotomy_core::dichotomy::{verify_with, DichotomyCertificate, Form, ProjectionFamily};
use dichotomy_core::extension::{can_extend_plus, extend_plus};
use dichotomy_core::linalg::{
    kernel_of, make_projection, nullspace_of_projection, preimage, range_of_projection, rank_of, subspace_distance,
};
use dichotomy_core::roughness::{predicted_constants, random_perturbation, GreenSolver};
use dichotomy_core::system::{fixture, CoefficientSequence, Interval, Window};
use dichotomy_core::{Matrix, Tolerances};
use proptest::prelude::*;

use common::{random_dichotomy, random_rank, random_subspace, rng, uniform};

fn tol() -> Tolerances {
    Tolerances::default()
}

fn diag(a: f64, b: f64) -> Matrix {
    Matrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn preimage_dimension_formula(seed in any::<u64>(), rank in 0usize..=4, dim in 0usize..=4) {
        let mut g = rng(seed);
        let a = random_rank(&mut g, 4, rank);
        let s = random_subspace(&mut g, 4, dim);
        let t = tol();
        let image = dichotomy_core::linalg::Subspace::full(4).image(&a, &t).unwrap();
        let expected = s.intersection(&image, &t).dim() + kernel_of(&a, &t).dim();
        let pre = preimage(&a, &s, &t).unwrap();
        prop_assert_eq!(pre.dim(), expected);
        prop_assert!(pre.contains(&kernel_of(&a, &t), &t));
    }

    #[test]
    fn preimage_dimension_passes_to_left_factor(seed in any::<u64>(), ra in 1usize..=4, rb in 1usize..=4) {
        let mut g = rng(seed);
        let a = random_rank(&mut g, 4, ra);
        let b = random_rank(&mut g, 4, rb);
        let s = random_subspace(&mut g, 4, 2);
        let t = tol();
        if preimage(&(&a * &b), &s, &t).unwrap().dim() == 2 {
            prop_assert_eq!(preimage(&a, &s, &t).unwrap().dim(), 2);
        }
    }

    #[test]
    fn projection_round_trip(seed in any::<u64>(), r in 0usize..=3) {
        let mut g = rng(seed);
        let t = tol();
        let range = random_subspace(&mut g, 3, r);
        let null = random_subspace(&mut g, 3, 3 - r);
        let p = make_projection(&range, &null, &t).unwrap();
        let again = make_projection(&range_of_projection(&p, &t), &nullspace_of_projection(&p, &t), &t).unwrap();
        prop_assert!((&p - again).amax() <= 1e-9 * p.amax().max(1.0));
        prop_assert_eq!(rank_of(&p, &t), r);
    }

    #[test]
    fn transitions_compose(seed in any::<u64>(), m in 0i64..5, j in 5i64..9, k in 9i64..12) {
        let rd = random_dichotomy(seed, 3, 1, Window::new(0, 12).unwrap(), true);
        let s = &rd.sequence;
        let lhs = s.transition(k, j).unwrap() * s.transition(j, m).unwrap();
        let rhs = s.transition(k, m).unwrap();
        prop_assert!((lhs - &rhs).amax() <= 1e-12 * rhs.amax().max(1.0));
    }

    #[test]
    fn subspace_identities(seed in any::<u64>(), m in 0i64..9, gap in 1i64..4) {
        let rd = random_dichotomy(seed, 4, 2, Window::new(0, 12).unwrap(), true);
        let t = tol();
        let k = m + gap;
        let phi = rd.sequence.transition(k, m).unwrap();
        let ker = kernel_of(&phi, &t);
        let rm = rd.family.range_at(m, &t).unwrap();
        let nm = rd.family.nullspace_at(m, &t).unwrap();
        let pre_r = preimage(&phi, &rd.family.range_at(k, &t).unwrap(), &t).unwrap();
        let pre_n = preimage(&phi, &rd.family.nullspace_at(k, &t).unwrap(), &t).unwrap();
        prop_assert!(subspace_distance(&pre_r, &rm).unwrap() < 1e-8);
        prop_assert!(subspace_distance(&pre_n, &nm.sum(&ker, &t)).unwrap() < 1e-8);
        prop_assert!(rm.excess(&ker) < 1e-8);
    }

    #[test]
    fn form_b_implies_form_a(seed in any::<u64>()) {
        let rd = random_dichotomy(seed, 3, 2, Window::new(0, 20).unwrap(), false);
        let cert = rd.certificate(0.5);
        let b = cert.form.to_b();
        let t = tol();
        let rb = verify_with(&rd.sequence, &rd.family, b, rd.window, &t).unwrap();
        let ra = verify_with(&rd.sequence, &rd.family, b.to_a(), rd.window, &t).unwrap();
        prop_assert!(!rb.passed || ra.passed);
    }

    #[test]
    fn perturbed_exponent_decreases(k in 1.0f64..10.0, alpha in 0.05f64..3.0, d1 in 0.0f64..1.0, d2 in 0.0f64..1.0) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let scale = 0.99 / dichotomy_core::roughness::rho(k, alpha);
        let a = predicted_constants(k, alpha, lo * scale).unwrap();
        let b = predicted_constants(k, alpha, hi * scale).unwrap();
        prop_assert!(a.admissible && b.admissible);
        prop_assert!(b.beta.unwrap() <= a.beta.unwrap() + 1e-15);
        prop_assert!(a.beta.unwrap() <= alpha + 1e-15);
        prop_assert!(b.beta.unwrap() > 0.0);
        prop_assert!(b.l.unwrap() >= a.l.unwrap() * (1.0 - 1e-15));
    }

    #[test]
    fn green_operator_contracts(seed in any::<u64>(), frac in 0.01f64..0.99) {
        let f = fixture("S1").unwrap();
        let window = Window::new(-25, 25).unwrap();
        let cert = DichotomyCertificate::new(f.known_projection.unwrap(), Form::A { l: 1.0, alpha: LN_2 }, window).unwrap();
        let delta = frac / dichotomy_core::roughness::rho(1.0, LN_2);
        let b = random_perturbation(2, window, delta, seed);
        let solver = GreenSolver::new(&f.sequence, &cert, &b, window, 0.0, &tol()).unwrap();
        let mut g = rng(seed ^ 0x5eed);
        let u: Vec<Matrix> = window.iter().map(|_| uniform(&mut g, 2, 1)).collect();
        let sup = |v: &[Matrix]| v.iter().map(|x| x.norm()).fold(0.0, f64::max);
        prop_assert!(sup(&solver.homogeneous(&u)) <= solver.rho_delta() * sup(&u) * (1.0 + 1e-12));
    }

    #[test]
    fn backward_extension_is_monotone(seed in any::<u64>()) {
        let mut g = rng(seed);
        let m = 6;
        let mut seq = CoefficientSequence::constant(Interval::Whole, diag(0.5, 2.0)).unwrap();
        for k in 0..m {
            let rank = 1 + (k as usize + seed as usize) % 2;
            seq = seq.with_matrix(k, random_rank(&mut g, 2, rank)).unwrap();
        }
        let t = tol();
        let fam = ProjectionFamily::constant(Interval::HalfPlus { a: m }, diag(1.0, 0.0), &t).unwrap();
        let cert = DichotomyCertificate::new(fam, Form::A { l: 1.0, alpha: LN_2 }, Window::new(m, m + 20).unwrap()).unwrap();
        let verdicts: BTreeMap<i64, bool> = (0..m).map(|target| (target, can_extend_plus(&seq, &cert, target, &t).unwrap().extendable)).collect();
        for (&target, &ok) in &verdicts {
            if ok {
                prop_assert!(verdicts.range(target..).all(|(_, v)| *v));
            }
        }
        if let Some((&target, _)) = verdicts.iter().find(|(_, v)| **v) {
            let verdict = can_extend_plus(&seq, &cert, target, &t).unwrap();
            let out = extend_plus(&seq, &cert, target, &t).unwrap();
            if verdict.projection_preserved {
                for k in m..=m + 20 {
                    prop_assert_eq!(out.certificate.family.at(k).unwrap(), cert.family.at(k).unwrap());
                }
            }
            let c = &out.certificate;
            prop_assert!(verify_with(&seq, &c.family, c.form, c.window, &t).unwrap().passed);
            if let Some(g) = c.guaranteed {
                prop_assert!(verify_with(&seq, &c.family, g, c.window, &t).unwrap().passed);
            }
        }
    }
}
