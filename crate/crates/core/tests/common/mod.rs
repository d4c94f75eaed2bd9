#![allow(dead_code)]

use std::collections::BTreeMap;

use dichotomy_core::dichotomy::{estimate_constants, DichotomyCertificate, EstimateConfig, ProjectionFamily};
use dichotomy_core::linalg::Subspace;
use dichotomy_core::system::{CoefficientSequence, Interval, Window};
use dichotomy_core::{Matrix, Tolerances, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0))
}

pub fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    uniform(rng, n, n).qr().q()
}

/// U diag(s) Vᵀ with random orthogonal U, V.
pub fn with_singular_values(rng: &mut ChaCha8Rng, s: &[f64]) -> Matrix {
    let n = s.len();
    let u = orthogonal(rng, n);
    let v = orthogonal(rng, n);
    u * Matrix::from_diagonal(&Vector::from_column_slice(s)) * v.transpose()
}

pub fn random_subspace(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Subspace {
    Subspace::span(&uniform(rng, n, dim), &Tolerances::default())
}

/// A sequence on a finite window with a known dichotomy of rank r.
///
/// A(k) = [R(k+1)C(k) | N(k+1)E(k)] [R(k) | N(k)]⁻¹ with |C(k)| ≤ ½ and E(k)
/// expanding by at least 2. Every third C(k) is singular when `deficient` is set.
pub struct RandomDichotomy {
    pub sequence: CoefficientSequence,
    pub family: ProjectionFamily,
    pub window: Window,
}

pub fn random_dichotomy(seed: u64, n: usize, r: usize, window: Window, deficient: bool) -> RandomDichotomy {
    let tol = Tolerances::default();
    let mut g = rng(seed);
    let bases: Vec<Matrix> = window.iter().map(|_| Matrix::identity(n, n) + uniform(&mut g, n, n) * 0.25).collect();
    let mut seq = CoefficientSequence::new(n, Interval::finite(window.lo, window.hi).unwrap()).unwrap();
    let mut entries = BTreeMap::new();
    let mut select = Matrix::zeros(n, n);
    for i in 0..r {
        select[(i, i)] = 1.0;
    }
    for k in window.iter() {
        let i = (k - window.lo) as usize;
        let x = &bases[i];
        let x_inv = x.clone().try_inverse().unwrap();
        entries.insert(k, x * &select * &x_inv);
        if k == window.hi {
            break;
        }
        let mut s: Vec<f64> = (0..r).map(|_| g.random_range(0.1..=0.5)).collect();
        if deficient && k.rem_euclid(3) == 0 && r > 0 {
            s[0] = 0.0;
        }
        let c = with_singular_values(&mut g, &s);
        let t: Vec<f64> = (0..n - r).map(|_| g.random_range(2.0..=3.0)).collect();
        let e = with_singular_values(&mut g, &t);
        let next = &bases[i + 1];
        let mut image = Matrix::zeros(n, n);
        image.view_mut((0, 0), (n, r)).copy_from(&(next.columns(0, r) * c));
        image.view_mut((0, r), (n, n - r)).copy_from(&(next.columns(r, n - r) * e));
        seq = seq.with_matrix(k, image * x_inv).unwrap();
    }
    let family = ProjectionFamily::from_entries(Interval::finite(window.lo, window.hi).unwrap(), entries, &tol).unwrap();
    RandomDichotomy { sequence: seq, family, window }
}

impl RandomDichotomy {
    pub fn certificate(&self, alpha: f64) -> DichotomyCertificate {
        estimate_constants(&self.sequence, &self.family, self.window, Some(alpha), &EstimateConfig::default(), &Tolerances::default())
            .unwrap()
    }
}

/// A random n×n matrix of the given rank.
pub fn random_rank(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> Matrix {
    let s: Vec<f64> = (0..n).map(|i| if i < rank { rng.random_range(0.5..=2.0) } else { 0.0 }).collect();
    with_singular_values(rng, &s)
}
