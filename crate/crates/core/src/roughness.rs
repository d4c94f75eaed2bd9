//! Roughness under multiplicative perturbations x(k+1) = A(k)(I + B(k))x(k).
//!
//! The perturbed projection Q(m) is computed from the bounded solution of the
//! forced equation with an impulse at m − 1. Bounded solutions are the fixed
//! point of the Green's operator
//!
//! (Tu)(k) = Σ_{m<k} Φ(k,m)P(m)B(m)u(m) − Σ_{m≥k} Φ(k,m)(I−P(m))B(m)u(m) + forcing,
//!
//! evaluated with O(window) recursions instead of the double sums.
//!
//! B(k) is used on the steps lo..hi−1 of the solver window and counts as zero
//! elsewhere unless an outside bound is declared.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dichotomy::{fit_slope, verify_with, DichotomyCertificate, Form, ProjectionFamily, SplitTransitions, VerificationReport};
use crate::error::{Error, Result};
use crate::extension::embed_in_z;
use crate::linalg::{check_finite, idempotency_residual, norm2, rank_of, Matrix, Tolerances, Vector};
use crate::system::{CoefficientSequence, Interval, Window};

/// 1 − e^{−x} without cancellation.
fn one_minus_exp_neg(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// −log(cosh α − √(sinh²α − 2x sinh α)), or None when the radicand is negative.
fn decay_exponent(alpha: f64, x: f64) -> Option<f64> {
    if x == 0.0 {
        return Some(alpha);
    }
    let s = alpha.sinh();
    let rad = s * s - 2.0 * x * s;
    if rad < 0.0 {
        return None;
    }
    Some((alpha.cosh() + rad.sqrt()).ln() - (2.0 * x * s).ln_1p())
}

fn positive_inverse(den: f64) -> Option<f64> {
    (den > 0.0).then(|| 1.0 / den)
}

fn check_parameters(k: f64, alpha: f64, delta: f64) -> Result<()> {
    if !(k.is_finite() && k >= 1.0 && alpha.is_finite() && alpha > 0.0 && delta.is_finite() && delta >= 0.0) {
        return Err(Error::InvalidInput("need K ≥ 1, α > 0 and δ ≥ 0".into()));
    }
    Ok(())
}

/// Predicted constants of the perturbed dichotomy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RoughnessConstants {
    pub k: f64,
    pub alpha: f64,
    pub delta: f64,
    pub rho_delta: f64,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    pub l: Option<f64>,
    /// Bound on |Q(k) − P(k)|.
    pub projection_bound: Option<f64>,
    pub admissible: bool,
}

/// K(1−e^{−α})⁻¹(1+e^{−α}).
pub fn rho(k: f64, alpha: f64) -> f64 {
    k * (1.0 + (-alpha).exp()) / one_minus_exp_neg(alpha)
}

pub fn predicted_constants(k: f64, alpha: f64, delta: f64) -> Result<RoughnessConstants> {
    check_parameters(k, alpha, delta)?;
    let rho_delta = rho(k, alpha) * delta;
    let beta = decay_exponent(alpha, k * delta);
    let gamma = beta.map(|b| b + (2.0 * k * alpha.exp() * delta * alpha.sinh()).ln_1p());
    let d1 = beta.and_then(|b| positive_inverse(1.0 - k * delta / one_minus_exp_neg(alpha + b)));
    let d2 = gamma.and_then(|g| positive_inverse(1.0 - k * (alpha - g).exp() * delta / one_minus_exp_neg(alpha + g)));
    let l = match (d1, d2) {
        (Some(d1), Some(d2)) if rho_delta < 1.0 => {
            Some(k * (1.0 + k * delta / ((1.0 - rho_delta) * one_minus_exp_neg(alpha))) * d1.max(d2))
        }
        _ => None,
    };
    let projection_bound = match (l, beta) {
        (Some(l), Some(b)) => Some(k * l * (1.0 + (-(alpha + b)).exp()) / one_minus_exp_neg(alpha + b) * delta),
        _ => None,
    };
    Ok(RoughnessConstants {
        k,
        alpha,
        delta,
        rho_delta,
        beta,
        gamma,
        d1,
        d2,
        l,
        projection_bound,
        admissible: rho_delta < 1.0 && l.is_some(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    /// μ on k ≥ a, decaying away from a.
    Forward,
    /// μ on k ≤ b, decaying away from b.
    Backward,
}

/// A nonnegative sequence with the constants of a summation inequality.
///
/// `mu[i]` is the value at distance i from the anchor: k = a + i forward,
/// k = b − i backward. Values beyond the supplied ones are taken as zero.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthBoundInput {
    pub mu: Vec<f64>,
    pub d: f64,
    pub alpha: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SequenceBound {
    pub sigma: f64,
    pub coefficient: f64,
    /// β forward, γ backward.
    pub exponent: f64,
    /// Largest excess of μ over the right-hand side of the hypothesis.
    pub hypothesis_excess: f64,
    pub hypothesis_holds: bool,
    /// Largest relative excess of μ over the concluded bound.
    pub conclusion_excess: f64,
    /// False only if the hypothesis holds and the conclusion fails.
    pub consistent: bool,
}

/// Closed-form decay bound for sequences satisfying the summation inequality,
/// with a self-check on the supplied values.
pub fn sequence_bound(input: &GrowthBoundInput, side: BoundSide) -> Result<SequenceBound> {
    let GrowthBoundInput { ref mu, d, alpha, delta } = *input;
    if !(d > 0.0 && alpha > 0.0 && alpha.is_finite() && delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidInput("need D > 0, α > 0 and δ ≥ 0".into()));
    }
    if mu.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::InvalidInput("μ must be finite and nonnegative".into()));
    }
    let sigma = delta * (1.0 + (-alpha).exp()) / one_minus_exp_neg(alpha);
    if sigma >= 1.0 {
        return Err(Error::SigmaTooLarge(sigma));
    }
    let beta = decay_exponent(alpha, delta).ok_or(Error::SigmaTooLarge(sigma))?;
    let (exponent, coefficient) = match side {
        BoundSide::Forward => (beta, d / (1.0 - delta * (-alpha).exp() / one_minus_exp_neg(alpha + beta))),
        BoundSide::Backward => {
            let gamma = beta + (2.0 * delta * alpha.sinh()).ln_1p();
            (gamma, d / (1.0 - delta * (-gamma).exp() / one_minus_exp_neg(alpha + gamma)))
        }
    };
    let e = |t: i64| (-alpha * t as f64).exp();
    let mut hypothesis_excess = f64::NEG_INFINITY;
    let mut conclusion_excess = f64::NEG_INFINITY;
    for (i, &m) in mu.iter().enumerate() {
        let i = i as i64;
        let mut rhs = d * e(i);
        for (j, &mj) in mu.iter().enumerate() {
            let j = j as i64;
            let w = match side {
                BoundSide::Forward if j < i => e(i - j - 1),
                BoundSide::Forward => e(j + 1 - i),
                BoundSide::Backward if j > i => e(j - i - 1),
                BoundSide::Backward if j >= 1 => e(i - j + 1),
                BoundSide::Backward => 0.0,
            };
            rhs += delta * w * mj;
        }
        hypothesis_excess = hypothesis_excess.max(m - rhs);
        let bound = coefficient * (-exponent * i as f64).exp();
        conclusion_excess = conclusion_excess.max((m - bound) / bound);
    }
    let scale = mu.iter().cloned().fold(d, f64::max);
    let hypothesis_holds = hypothesis_excess <= 1e-12 * scale;
    Ok(SequenceBound {
        sigma,
        coefficient,
        exponent,
        hypothesis_excess,
        hypothesis_holds,
        conclusion_excess,
        consistent: !hypothesis_holds || conclusion_excess <= 1e-12,
    })
}

/// Constants for the continuous-time analogue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OdeConstants {
    pub beta: Option<f64>,
    pub l: Option<f64>,
    pub projection_bound: Option<f64>,
    pub admissible: bool,
}

pub fn ode_constants(k: f64, alpha: f64, delta: f64) -> Result<OdeConstants> {
    check_parameters(k, alpha, delta)?;
    let s = 1.0 - 2.0 * k * delta / alpha;
    if s <= 0.0 {
        return Ok(OdeConstants { beta: None, l: None, projection_bound: None, admissible: false });
    }
    let r = s.sqrt();
    let beta = alpha * r;
    let l = 2.0 * k * (1.0 + k * delta / (s * alpha)) / (1.0 + r);
    Ok(OdeConstants {
        beta: Some(beta),
        l: Some(l),
        projection_bound: Some(2.0 * k * l * delta / (alpha + beta)),
        admissible: true,
    })
}

/// Matrices B(k) with entries uniform in [−1, 1], scaled to spectral norm δ,
/// on the steps lo..hi−1 of `window`.
pub fn random_perturbation(n: usize, window: Window, delta: f64, seed: u64) -> BTreeMap<i64, Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (window.lo..window.hi)
        .map(|k| {
            let m = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
            let s = norm2(&m);
            (k, if s > 0.0 { m * (delta / s) } else { m })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPointConfig {
    /// Target accuracy of the fixed point, relative to max(1, |forcing part|).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig { tol: 1e-13, max_iter: 100_000 }
    }
}

/// Fixed point of the Green's operator on the solver window, with n × c
/// matrix values (c independent right-hand sides).
#[derive(Clone, Debug)]
pub struct ColumnSolution {
    pub window: Window,
    pub values: Vec<Matrix>,
    pub iterations: usize,
    /// ρδ/(1−ρδ) times the last step.
    pub fixed_point_error: f64,
}

impl ColumnSolution {
    pub fn at(&self, k: i64) -> &Matrix {
        &self.values[(k - self.window.lo) as usize]
    }
}

/// Green's operator of a dichotomy on a finite window.
pub struct GreenSolver {
    split: SplitTransitions,
    n: usize,
    k: f64,
    alpha: f64,
    b: Vec<Option<Matrix>>,
    delta: f64,
    outside_delta: f64,
    rho_delta: f64,
}

impl GreenSolver {
    /// `b` entries off the steps of `window` count towards `outside_delta`.
    pub fn new(
        seq: &CoefficientSequence,
        cert: &DichotomyCertificate,
        b: &BTreeMap<i64, Matrix>,
        window: Window,
        outside_delta: f64,
        tol: &Tolerances,
    ) -> Result<Self> {
        let n = seq.n();
        if !(outside_delta.is_finite() && outside_delta >= 0.0) {
            return Err(Error::InvalidInput("outside bound must be finite and nonnegative".into()));
        }
        let split = SplitTransitions::new(seq, &cert.family, window, tol)?;
        let mut steps = vec![None; window.len() - 1];
        let mut delta: f64 = 0.0;
        let mut outside_delta = outside_delta;
        for (&k, bk) in b {
            if bk.shape() != (n, n) {
                return Err(Error::DimensionMismatch(format!("B({k}) must be {n}x{n}")));
            }
            check_finite(bk, "perturbation")?;
            let s = norm2(bk);
            if k >= window.lo && k < window.hi {
                delta = delta.max(s);
                steps[(k - window.lo) as usize] = Some(bk.clone());
            } else {
                outside_delta = outside_delta.max(s);
            }
        }
        let k = cert.form.l_equivalent();
        let alpha = cert.form.alpha();
        let rho_delta = rho(k, alpha) * delta.max(outside_delta);
        if rho_delta >= 1.0 {
            return Err(Error::NotAdmissible(rho_delta));
        }
        Ok(GreenSolver { split, n, k, alpha, b: steps, delta, outside_delta, rho_delta })
    }

    pub fn window(&self) -> Window {
        self.split.window()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn rho_delta(&self) -> f64 {
        self.rho_delta
    }

    /// K of the unperturbed certificate.
    pub fn k_constant(&self) -> f64 {
        self.k
    }

    fn idx(&self, k: i64) -> usize {
        (k - self.window().lo) as usize
    }

    /// G(k,p) = Φ(k,p)P(p) for k > p and −Φ(k,p)(I − P(p)) for k ≤ p.
    pub fn kernel(&self, k: i64, p: i64) -> Matrix {
        if k > p {
            self.split.stable_row(p)[(k - p) as usize].clone()
        } else {
            -self.split.unstable_column(p)[(p - k) as usize].clone()
        }
    }

    /// The B-dependent part of T: Σ G(k,m)B(m)u(m).
    pub fn homogeneous(&self, u: &[Matrix]) -> Vec<Matrix> {
        let win = self.window();
        let w = win.len();
        let id = Matrix::identity(self.n, self.n);
        let c = u[0].ncols();
        let bu: Vec<Option<Matrix>> = (0..w - 1).map(|i| self.b[i].as_ref().map(|b| b * &u[i])).collect();
        let mut s = vec![Matrix::zeros(self.n, c); w];
        for k in win.lo..win.hi {
            let i = self.idx(k);
            let inner = match &bu[i] {
                Some(x) => &s[i] + self.split.projection(k) * x,
                None => s[i].clone(),
            };
            s[i + 1] = self.split.step(k) * inner;
        }
        let mut r = Matrix::zeros(self.n, c);
        let mut out = vec![Matrix::zeros(self.n, c); w];
        for k in win.iter().rev() {
            let i = self.idx(k);
            r = if k < win.hi { self.split.back_step(k) * &r } else { r };
            if let Some(Some(x)) = bu.get(i) {
                r += (&id - self.split.projection(k)) * x;
            }
            out[i] = &s[i] - &r;
        }
        out
    }

    /// The forcing part of T for f on the steps lo..hi−1.
    pub fn forcing(&self, f: &BTreeMap<i64, Matrix>) -> Result<Vec<Matrix>> {
        let win = self.window();
        let c = f.values().next().map_or(1, |m| m.ncols());
        let id = Matrix::identity(self.n, self.n);
        for (&k, fk) in f {
            if k < win.lo || k >= win.hi {
                return Err(Error::OutOfRange { k, what: format!("forcing steps of window {win}") });
            }
            if fk.shape() != (self.n, c) {
                return Err(Error::DimensionMismatch("forcing values must share one shape".into()));
            }
            check_finite(fk, "forcing")?;
        }
        let w = win.len();
        let mut plus = vec![Matrix::zeros(self.n, c); w];
        for k in win.lo..win.hi {
            let i = self.idx(k);
            let mut next = self.split.step(k) * &plus[i];
            if let Some(fk) = f.get(&k) {
                next += self.split.projection(k + 1) * fk;
            }
            plus[i + 1] = next;
        }
        let mut minus = Matrix::zeros(self.n, c);
        let mut out = vec![Matrix::zeros(self.n, c); w];
        out[w - 1] = plus[w - 1].clone();
        for k in (win.lo..win.hi).rev() {
            let i = self.idx(k);
            if let Some(fk) = f.get(&k) {
                minus += (&id - self.split.projection(k + 1)) * fk;
            }
            minus = self.split.back_step(k) * &minus;
            out[i] = &plus[i] - &minus;
        }
        Ok(out)
    }

    /// Iterates u ← T(u) from u = 0.
    pub fn solve_columns(&self, f: &BTreeMap<i64, Matrix>, config: &FixedPointConfig) -> Result<ColumnSolution> {
        let h = self.forcing(f)?;
        let scale = h.iter().map(norm2).fold(1.0, f64::max);
        let target = (1.0 - self.rho_delta) * config.tol * scale;
        let mut u = h.clone();
        for it in 1..=config.max_iter {
            let next: Vec<Matrix> = self.homogeneous(&u).into_iter().zip(&h).map(|(g, hk)| g + hk).collect();
            let step = next.iter().zip(&u).map(|(a, b)| norm2(&(a - b))).fold(0.0, f64::max);
            if !step.is_finite() {
                return Err(Error::NonFinite("fixed-point iterate".into()));
            }
            u = next;
            if step <= target {
                return Ok(ColumnSolution {
                    window: self.window(),
                    values: u,
                    iterations: it + 1,
                    fixed_point_error: self.rho_delta / (1.0 - self.rho_delta) * step,
                });
            }
        }
        Err(Error::InvalidInput(format!("fixed point not reached in {} iterations", config.max_iter)))
    }

    /// Bound on the error caused by B beyond the window at distance ≥ `margin`
    /// from the window edge, for forcing of size `f_norm`.
    pub fn truncation_bound(&self, margin: i64, f_norm: f64) -> f64 {
        if self.outside_delta == 0.0 {
            return 0.0;
        }
        let (k, a) = (self.k, self.alpha);
        let u_norm = rho(k, a) * f_norm / (1.0 - self.rho_delta);
        let c = 2.0 * k * self.outside_delta * u_norm / one_minus_exp_neg(a);
        let half = a / 2.0;
        let inner = k * self.delta * (1.0 + (-half).exp()) / one_minus_exp_neg(half);
        if inner >= 1.0 {
            return f64::INFINITY;
        }
        c * (-half * margin as f64).exp() / (1.0 - inner)
    }

    /// Largest deviation of `u` from the boundary-value representation on the
    /// window, relative to max(1, sup|u|).
    pub fn representation_residual(&self, u: &[Matrix], f: &BTreeMap<i64, Matrix>) -> Result<f64> {
        let win = self.window();
        let id = Matrix::identity(self.n, self.n);
        let rest = self.forcing(f)?;
        let hom = self.homogeneous(u);
        let head = self.split.stable_row(win.lo);
        let tail = self.split.unstable_column(win.hi);
        let ua = &u[0];
        let ub = &u[win.len() - 1];
        let mut worst: f64 = 0.0;
        let scale = u.iter().map(norm2).fold(1.0, f64::max);
        for k in win.iter() {
            let i = self.idx(k);
            let bdry = &head[i] * ua + &tail[win.len() - 1 - i] * (&id - self.split.projection(win.hi)) * ub;
            let rhs = bdry + &hom[i] + &rest[i];
            worst = worst.max(norm2(&(&u[i] - rhs)));
        }
        Ok(worst / scale)
    }
}

/// Inputs of a forced perturbed equation x(k+1) = A(k)(I+B(k))x(k) + f(k).
#[derive(Clone, Debug)]
pub struct ForcingProblem {
    pub b: BTreeMap<i64, Matrix>,
    pub f: BTreeMap<i64, Vector>,
    /// Solver window.
    pub window: Window,
    /// Region whose values are returned.
    pub report: Window,
    /// Bound on |B(k)| off the steps of the window.
    pub outside_delta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundedSolution {
    pub report: Window,
    #[serde(serialize_with = "crate::report::vector_pairs")]
    pub values: Vec<(i64, Vector)>,
    pub iterations: usize,
    pub fixed_point_error: f64,
    pub truncation_bound: f64,
}

fn margin_of(window: Window, report: Window) -> Result<i64> {
    if !window.contains_window(report) {
        return Err(Error::OutOfRange { k: report.lo, what: format!("solver window {window}") });
    }
    Ok((report.lo - window.lo).min(window.hi - report.hi))
}

/// The unique bounded solution of the forced perturbed equation.
pub fn bounded_solution_fixed_point(
    seq: &CoefficientSequence,
    cert: &DichotomyCertificate,
    problem: &ForcingProblem,
    config: &FixedPointConfig,
    tol: &Tolerances,
) -> Result<BoundedSolution> {
    let margin = margin_of(problem.window, problem.report)?;
    let solver = GreenSolver::new(seq, cert, &problem.b, problem.window, problem.outside_delta, tol)?;
    let f: BTreeMap<i64, Matrix> = problem
        .f
        .iter()
        .map(|(k, v)| (*k, Matrix::from_column_slice(v.len(), 1, v.as_slice())))
        .collect();
    let f_norm = problem.f.values().map(|v| v.norm()).fold(0.0, f64::max);
    let truncation_bound = solver.truncation_bound(margin, f_norm);
    if truncation_bound > tol.residual {
        return Err(Error::WindowTooSmall { bound: truncation_bound, tol: tol.residual });
    }
    let sol = solver.solve_columns(&f, config)?;
    let values = problem.report.iter().map(|k| (k, sol.at(k).column(0).into_owned())).collect();
    Ok(BoundedSolution {
        report: problem.report,
        values,
        iterations: sol.iterations,
        fixed_point_error: sol.fixed_point_error,
        truncation_bound,
    })
}

/// Q(m) from the impulse f(m−1) = I/K: Q(m) = K·x(m).
pub fn perturbed_projection(solver: &GreenSolver, m: i64, config: &FixedPointConfig, tol: &Tolerances) -> Result<Matrix> {
    let win = solver.window();
    if m - 1 < win.lo || m > win.hi {
        return Err(Error::OutOfRange { k: m, what: format!("interior of solver window {win}") });
    }
    let margin = (m - 1 - win.lo).min(win.hi - m);
    let bound = solver.truncation_bound(margin, 1.0 / solver.k);
    if bound > tol.residual {
        return Err(Error::WindowTooSmall { bound, tol: tol.residual });
    }
    let n = solver.n;
    let f = BTreeMap::from([(m - 1, Matrix::identity(n, n) / solver.k)]);
    Ok(solver.solve_columns(&f, config)?.at(m) * solver.k)
}

/// Q(m) for every m in `region`, computed in parallel.
pub fn perturbed_projections(
    solver: &GreenSolver,
    region: Window,
    config: &FixedPointConfig,
    tol: &Tolerances,
) -> Result<BTreeMap<i64, Matrix>> {
    region
        .iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&m| Ok((m, perturbed_projection(solver, m, config, tol)?)))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct RoughnessReport {
    pub predicted: RoughnessConstants,
    pub region: Window,
    pub delta: f64,
    pub rank: usize,
    pub rank_preserved: bool,
    pub max_idempotency_residual: f64,
    /// sup over the region of |Q(k) − P(k)|.
    pub projection_distance: f64,
    pub projection_within_bound: bool,
    /// Check of the perturbed family with constants (L, β).
    pub verification: VerificationReport,
    /// Fitted forward decay rate of |Ψ(k,m)Q(m)|.
    pub measured_beta: f64,
    /// Fitted backward decay rate of |Ψ(m,k)(I−Q(k))|.
    pub measured_gamma: f64,
    pub passed: bool,
}

/// Perturbed dichotomy data on a region.
#[derive(Clone, Debug)]
pub struct PerturbedDichotomy {
    pub sequence: CoefficientSequence,
    pub family: ProjectionFamily,
    pub report: RoughnessReport,
}

/// Computes Q on `region` and checks the predicted constants.
///
/// Dichotomies on half-lines or finite intervals are first embedded into ℤ;
/// B is dropped off the interval.
pub fn verify_roughness(
    seq: &CoefficientSequence,
    cert: &DichotomyCertificate,
    b: &BTreeMap<i64, Matrix>,
    window: Window,
    region: Window,
    config: &FixedPointConfig,
    tol: &Tolerances,
) -> Result<PerturbedDichotomy> {
    let interval = cert.family.interval();
    if !interval.contains_window(region) {
        return Err(Error::OutOfRange { k: region.lo, what: format!("dichotomy interval {interval}") });
    }
    let emb = embed_in_z(seq, cert, tol)?;
    let b: BTreeMap<i64, Matrix> = b.iter().filter(|(k, _)| interval.has_step(**k)).map(|(k, m)| (*k, m.clone())).collect();
    let solver = GreenSolver::new(&emb.sequence, &emb.certificate, &b, window, 0.0, tol)?;
    let predicted = predicted_constants(solver.k, solver.alpha, solver.delta)?;
    let (Some(l), Some(beta), Some(qp_bound)) = (predicted.l, predicted.beta, predicted.projection_bound) else {
        return Err(Error::NotAdmissible(predicted.rho_delta));
    };
    if !predicted.admissible {
        return Err(Error::NotAdmissible(predicted.rho_delta));
    }
    if region.lo - 1 < window.lo || !window.contains_window(region) {
        return Err(Error::OutOfRange { k: region.lo, what: format!("interior of solver window {window}") });
    }
    let qs = perturbed_projections(&solver, region, config, tol)?;
    let rank = cert.rank();
    let rank_preserved = qs.values().all(|q| rank_of(q, tol) == rank);
    let max_idempotency_residual = qs.values().map(idempotency_residual).fold(0.0, f64::max);
    let mut projection_distance: f64 = 0.0;
    for (k, q) in &qs {
        projection_distance = projection_distance.max(norm2(&(q - emb.certificate.family.at(*k)?)));
    }
    let projection_within_bound = projection_distance <= qp_bound * (1.0 + tol.residual);
    let sequence = emb.sequence.perturbed(&b, window)?;
    let family = ProjectionFamily::from_entries(Interval::finite(region.lo, region.hi)?, qs, tol)?;
    let verification = verify_with(&sequence, &family, Form::A { l, alpha: beta }, region, tol)?;
    let (measured_beta, measured_gamma) = measured_rates(&sequence, &family, region, tol)?;
    let passed = rank_preserved && projection_within_bound && verification.passed;
    let report = RoughnessReport {
        predicted,
        region,
        delta: solver.delta,
        rank,
        rank_preserved,
        max_idempotency_residual,
        projection_distance,
        projection_within_bound,
        verification,
        measured_beta,
        measured_gamma,
        passed,
    };
    Ok(PerturbedDichotomy { sequence, family, report })
}

/// Decay rates fitted to the envelopes of the split transition norms.
fn measured_rates(seq: &CoefficientSequence, family: &ProjectionFamily, region: Window, tol: &Tolerances) -> Result<(f64, f64)> {
    let split = SplitTransitions::new(seq, family, region, tol)?;
    let w = region.len();
    let mut stable = vec![0.0f64; w];
    let mut unstable = vec![0.0f64; w];
    for m in region.iter() {
        for (t, x) in split.stable_row(m).iter().enumerate() {
            stable[t] = stable[t].max(norm2(x));
        }
        for (t, y) in split.unstable_column(m).iter().enumerate() {
            unstable[t] = unstable[t].max(norm2(y));
        }
    }
    let rate = |env: &[f64]| {
        let pts: Vec<(f64, f64)> = env
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, v)| **v > f64::MIN_POSITIVE)
            .map(|(t, v)| (t as f64, v.ln()))
            .collect();
        -fit_slope(&pts)
    };
    Ok((rate(&stable), rate(&unstable)))
}

/// Direct solve of the boundary-value system for the bounded solution.
///
/// Unknowns are u(lo), …, u(hi) with u(k+1) − A(k)(I+B(k))u(k) = f(k) on the
/// steps of the window, P(lo)u(lo) = 0 and (I − P(hi))u(hi) = 0.
pub fn boundary_value_solution(
    seq: &CoefficientSequence,
    family: &ProjectionFamily,
    b: &BTreeMap<i64, Matrix>,
    f: &BTreeMap<i64, Vector>,
    window: Window,
    tol: &Tolerances,
) -> Result<Vec<Vector>> {
    let n = seq.n();
    let w = window.len();
    let size = n * w;
    let mut sys = Matrix::zeros(size, size);
    let mut rhs = Vector::zeros(size);
    let id = Matrix::identity(n, n);
    for k in window.lo..window.hi {
        let i = (k - window.lo) as usize;
        let a = match b.get(&k) {
            Some(bk) => seq.at(k)? * (&id + bk),
            None => seq.at(k)?.clone(),
        };
        sys.view_mut((i * n, i * n), (n, n)).copy_from(&(-a));
        sys.view_mut((i * n, (i + 1) * n), (n, n)).copy_from(&id);
        if let Some(fk) = f.get(&k) {
            rhs.rows_mut(i * n, n).copy_from(fk);
        }
    }
    let row = (w - 1) * n;
    let p_lo = family.at(window.lo)?;
    let rows_lo = family.range_at(window.lo, tol)?.basis().transpose() * p_lo;
    let p_hi = family.at(window.hi)?;
    let rows_hi = family.nullspace_at(window.hi, tol)?.basis().transpose() * (&id - p_hi);
    let r = rows_lo.nrows();
    if r + rows_hi.nrows() != n {
        return Err(Error::RankMismatch(r, n - rows_hi.nrows()));
    }
    sys.view_mut((row, 0), (r, n)).copy_from(&rows_lo);
    sys.view_mut((row + r, (w - 1) * n), (n - r, n)).copy_from(&rows_hi);
    let x = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidInput("boundary-value system is singular".into()))?;
    Ok((0..w).map(|i| x.rows(i * n, n).into_owned()).collect())
}
