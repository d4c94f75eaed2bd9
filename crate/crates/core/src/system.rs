//! The equation x(k+1) = A(k)x(k) on an interval and its transition matrices.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::dichotomy::ProjectionFamily;
use crate::error::{Error, Result};
use crate::linalg::{check_finite, min_singular, norm2, Matrix, Tolerances};

/// The time set J of the equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interval {
    Whole,
    HalfPlus { a: i64 },
    HalfMinus { b: i64 },
    Finite { a: i64, b: i64 },
}

impl Interval {
    pub fn finite(a: i64, b: i64) -> Result<Self> {
        if a > b {
            return Err(Error::InvalidInput(format!("empty interval [{a}, {b}]")));
        }
        Ok(Interval::Finite { a, b })
    }

    pub fn lower(&self) -> Option<i64> {
        match *self {
            Interval::HalfPlus { a } | Interval::Finite { a, .. } => Some(a),
            _ => None,
        }
    }

    pub fn upper(&self) -> Option<i64> {
        match *self {
            Interval::HalfMinus { b } | Interval::Finite { b, .. } => Some(b),
            _ => None,
        }
    }

    pub fn contains(&self, k: i64) -> bool {
        self.lower().is_none_or(|a| k >= a) && self.upper().is_none_or(|b| k <= b)
    }

    /// Whether A(k) belongs to the equation, i.e. k and k+1 both lie in J.
    pub fn has_step(&self, k: i64) -> bool {
        self.contains(k) && self.contains(k + 1)
    }

    pub fn contains_window(&self, w: Window) -> bool {
        self.contains(w.lo) && self.contains(w.hi)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interval::Whole => write!(f, "(-inf, inf)"),
            Interval::HalfPlus { a } => write!(f, "[{a}, inf)"),
            Interval::HalfMinus { b } => write!(f, "(-inf, {b}]"),
            Interval::Finite { a, b } => write!(f, "[{a}, {b}]"),
        }
    }
}

/// A finite integer window [lo, hi].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub lo: i64,
    pub hi: i64,
}

impl Window {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidInput(format!("empty window [{lo}, {hi}]")));
        }
        Ok(Window { lo, hi })
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: i64) -> bool {
        self.lo <= k && k <= self.hi
    }

    pub fn contains_window(&self, w: Window) -> bool {
        self.lo <= w.lo && w.hi <= self.hi
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<i64> {
        self.lo..=self.hi
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidInput(format!("window `{s}` is not of the form lo:hi")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<i64>()
                .map_err(|_| Error::InvalidInput(format!("bad window endpoint `{t}`")))
        };
        Window::new(parse(a)?, parse(b)?)
    }
}

/// How coefficients are generated outside the explicit window.
#[derive(Clone, Debug, PartialEq)]
pub enum TailRule {
    None,
    Constant(Matrix),
    /// Periodic in absolute time: A(k) = list[k mod p].
    Periodic(Vec<Matrix>),
}

impl TailRule {
    fn at(&self, k: i64) -> Option<&Matrix> {
        match self {
            TailRule::None => None,
            TailRule::Constant(a) => Some(a),
            TailRule::Periodic(v) if v.is_empty() => None,
            TailRule::Periodic(v) => Some(&v[k.rem_euclid(v.len() as i64) as usize]),
        }
    }

    fn matrices(&self) -> Vec<&Matrix> {
        match self {
            TailRule::None => vec![],
            TailRule::Constant(a) => vec![a],
            TailRule::Periodic(v) => v.iter().collect(),
        }
    }
}

/// The coefficients A(k) of the equation.
///
/// Explicit matrices take precedence. Indices below the explicit window use the
/// lower tail and indices above it the upper tail; with no explicit matrices the
/// lower tail covers k < 0.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSequence {
    n: usize,
    interval: Interval,
    window: BTreeMap<i64, Matrix>,
    below: TailRule,
    above: TailRule,
    norm_bound: Option<f64>,
}

impl CoefficientSequence {
    pub fn new(n: usize, interval: Interval) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("state dimension must be positive".into()));
        }
        Ok(CoefficientSequence {
            n,
            interval,
            window: BTreeMap::new(),
            below: TailRule::None,
            above: TailRule::None,
            norm_bound: None,
        })
    }

    pub fn constant(interval: Interval, a: Matrix) -> Result<Self> {
        let seq = Self::new(a.nrows(), interval)?;
        seq.with_tails(TailRule::Constant(a.clone()), TailRule::Constant(a))
    }

    fn check(&self, a: &Matrix) -> Result<()> {
        if a.shape() != (self.n, self.n) {
            return Err(Error::DimensionMismatch(format!(
                "coefficient is {}x{}, expected {}x{}",
                a.nrows(),
                a.ncols(),
                self.n,
                self.n
            )));
        }
        check_finite(a, "coefficient matrix")?;
        if let Some(m) = self.norm_bound {
            let na = norm2(a);
            if na > m * (1.0 + 1e-12) {
                return Err(Error::InvalidInput(format!("|A| = {na} exceeds the bound {m}")));
            }
        }
        Ok(())
    }

    pub fn with_matrix(mut self, k: i64, a: Matrix) -> Result<Self> {
        self.check(&a)?;
        self.window.insert(k, a);
        Ok(self)
    }

    pub fn with_tails(mut self, below: TailRule, above: TailRule) -> Result<Self> {
        for a in below.matrices().into_iter().chain(above.matrices()) {
            self.check(a)?;
        }
        self.below = below;
        self.above = above;
        Ok(self)
    }

    /// Attaches |A(k)| ≤ bound, checked on every stored matrix.
    pub fn with_norm_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::InvalidInput("norm bound must be positive".into()));
        }
        self.norm_bound = Some(bound);
        let all: Vec<Matrix> = self.stored().into_iter().cloned().collect();
        for a in &all {
            self.check(a)?;
        }
        Ok(self)
    }

    /// The same coefficients on a different time set.
    pub fn with_interval(mut self, interval: Interval) -> Self {
        self.interval = interval;
        self
    }

    fn stored(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = self.window.values().collect();
        v.extend(self.below.matrices());
        v.extend(self.above.matrices());
        v
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn norm_bound(&self) -> Option<f64> {
        self.norm_bound
    }

    pub fn explicit(&self) -> &BTreeMap<i64, Matrix> {
        &self.window
    }

    pub fn below(&self) -> &TailRule {
        &self.below
    }

    pub fn above(&self) -> &TailRule {
        &self.above
    }

    /// A(k); k and k+1 must both lie in the interval.
    pub fn at(&self, k: i64) -> Result<&Matrix> {
        if !self.interval.has_step(k) {
            return Err(Error::OutOfRange { k, what: format!("the steps of {}", self.interval) });
        }
        if let Some(a) = self.window.get(&k) {
            return Ok(a);
        }
        let lower = match (self.window.keys().next(), self.window.keys().next_back()) {
            (Some(&first), _) if k < first => true,
            (_, Some(&last)) if k > last => false,
            (None, None) => k < 0,
            _ => return Err(Error::Unresolvable(k)),
        };
        let rule = if lower { &self.below } else { &self.above };
        rule.at(k).ok_or(Error::Unresolvable(k))
    }

    /// Φ(k,m) = A(k−1)⋯A(m) for k ≥ m.
    pub fn transition(&self, k: i64, m: i64) -> Result<Matrix> {
        self.check_pair(k, m)?;
        let mut x = Matrix::identity(self.n, self.n);
        for j in m..k {
            x = self.at(j)? * x;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::OverflowDetected { m, k });
            }
        }
        Ok(x)
    }

    fn check_pair(&self, k: i64, m: i64) -> Result<()> {
        if k < m {
            return Err(Error::InvalidInput(format!("transition needs k >= m, got k={k}, m={m}")));
        }
        for t in [k, m] {
            if !self.interval.contains(t) {
                return Err(Error::OutOfRange { k: t, what: self.interval.to_string() });
            }
        }
        Ok(())
    }

    /// The sequence A(k)(I + B(k)) with B given explicitly on a window.
    pub fn perturbed(&self, b: &BTreeMap<i64, Matrix>, window: Window) -> Result<Self> {
        let mut out = self.clone();
        let id = Matrix::identity(self.n, self.n);
        for k in window.lo..window.hi {
            let a = self.at(k)?;
            let f = match b.get(&k) {
                Some(bk) => a * (&id + bk),
                None => a.clone(),
            };
            out = out.with_matrix(k, f)?;
        }
        Ok(out)
    }
}

/// Transition matrices cached per (k, m) and extended incrementally.
pub struct TransitionCache<'a> {
    seq: &'a CoefficientSequence,
    store: Mutex<HashMap<(i64, i64), Matrix>>,
}

impl<'a> TransitionCache<'a> {
    pub fn new(seq: &'a CoefficientSequence) -> Self {
        TransitionCache { seq, store: Mutex::new(HashMap::new()) }
    }

    pub fn get(&self, k: i64, m: i64) -> Result<Matrix> {
        self.seq.check_pair(k, m)?;
        let mut store = self.store.lock().expect("transition cache poisoned");
        if let Some(x) = store.get(&(k, m)) {
            return Ok(x.clone());
        }
        let mut j = k;
        while j > m && !store.contains_key(&(j, m)) {
            j -= 1;
        }
        let mut x = store.get(&(j, m)).cloned().unwrap_or_else(|| Matrix::identity(self.seq.n, self.seq.n));
        while j < k {
            x = self.seq.at(j)? * x;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::OverflowDetected { m, k });
            }
            j += 1;
            store.insert((j, m), x.clone());
        }
        Ok(x)
    }
}

/// Φ(m,k)(I − P(k)): the inverse of Φ(k,m) from 𝒩P(m) onto 𝒩P(k), zero on ℛP(k).
pub fn restricted_backward(
    seq: &CoefficientSequence,
    family: &ProjectionFamily,
    m: i64,
    k: i64,
    tol: &Tolerances,
) -> Result<Matrix> {
    let phi = seq.transition(k, m)?;
    let n = seq.n();
    let nm = family.nullspace_at(m, tol)?;
    if nm.dim() == 0 {
        return Ok(Matrix::zeros(n, n));
    }
    let y = &phi * nm.basis();
    let scale = norm2(&phi).max(1.0);
    if min_singular(&y) <= tol.rank * scale {
        return Err(Error::NotInjectiveOnNullspace { m, k });
    }
    let pinv = y
        .clone()
        .pseudo_inverse(0.0)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let id = Matrix::identity(n, n);
    Ok(nm.basis() * pinv * (id - family.at(k)?))
}

/// A labelled example system with its known dichotomy projection.
#[derive(Clone, Debug)]
pub struct NamedFixture {
    pub label: &'static str,
    pub description: &'static str,
    pub sequence: CoefficientSequence,
    pub known_projection: Option<ProjectionFamily>,
}

const FIXTURES: &[(&str, &str)] = &[
    ("S1", "constant diag(1/2, 2) on Z, P = diag(1, 0)"),
    ("S2a", "S1 on [0, inf) with A(0) = diag(1/2, 0), P = diag(1, 0) on [1, inf)"),
    ("S2b", "S1 on [0, inf) with A(0) = diag(0, 2), P = diag(1, 0) on [0, inf)"),
    ("S3", "diag(2, 1/2) on (-inf, 0] with A(-1) = diag(2, 0), P = diag(0, 1)"),
    ("S3i", "S3 with A(-1) = diag(0, 1/2), P = diag(0, 1) on (-inf, -1]"),
    ("S3r", "S3 with A(-1) = [[2, -2], [0, 0]], P = diag(0, 1) on (-inf, -1]"),
];

pub fn fixture_labels() -> Vec<&'static str> {
    FIXTURES.iter().map(|f| f.0).collect()
}

fn diag(a: f64, b: f64) -> Matrix {
    Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![a, b]))
}

pub fn fixture(label: &str) -> Option<NamedFixture> {
    let tol = Tolerances::default();
    let &(label, description) = FIXTURES.iter().find(|f| f.0 == label)?;
    let p_stable_first = diag(1.0, 0.0);
    let p_stable_second = diag(0.0, 1.0);
    let build = || -> Result<(CoefficientSequence, ProjectionFamily)> {
        Ok(match label {
            "S1" => (
                CoefficientSequence::constant(Interval::Whole, diag(0.5, 2.0))?,
                ProjectionFamily::constant(Interval::Whole, p_stable_first.clone(), &tol)?,
            ),
            "S2a" | "S2b" => {
                let a0 = if label == "S2a" { diag(0.5, 0.0) } else { diag(0.0, 2.0) };
                let from = if label == "S2a" { 1 } else { 0 };
                let seq = CoefficientSequence::constant(Interval::HalfPlus { a: 0 }, diag(0.5, 2.0))?
                    .with_matrix(0, a0)?;
                let fam = ProjectionFamily::constant(Interval::HalfPlus { a: from }, p_stable_first.clone(), &tol)?;
                (seq, fam)
            }
            _ => {
                let (last, upto) = match label {
                    "S3" => (diag(2.0, 0.0), 0),
                    "S3i" => (diag(0.0, 0.5), -1),
                    _ => (Matrix::from_row_slice(2, 2, &[2.0, -2.0, 0.0, 0.0]), -1),
                };
                let seq = CoefficientSequence::constant(Interval::HalfMinus { b: 0 }, diag(2.0, 0.5))?
                    .with_matrix(-1, last)?;
                let fam = ProjectionFamily::constant(Interval::HalfMinus { b: upto }, p_stable_second.clone(), &tol)?;
                (seq, fam)
            }
        })
    };
    let (sequence, fam) = build().expect("fixtures are well formed");
    Some(NamedFixture { label, description, sequence, known_projection: Some(fam) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn transitions_of_fixtures() {
        let s1 = fixture("S1").unwrap().sequence;
        assert_abs_diff_eq!(s1.transition(3, 0).unwrap(), diag(0.125, 8.0), epsilon = 1e-15);
        assert_eq!(s1.transition(7, 7).unwrap(), Matrix::identity(2, 2));
        let s2a = fixture("S2a").unwrap().sequence;
        assert_eq!(s2a.transition(1, 0).unwrap(), diag(0.5, 0.0));
        assert!(s2a.transition(1, -1).is_err());
        assert!(s2a.transition(0, 1).is_err());
    }

    #[test]
    fn cache_matches_direct_products() {
        let s1 = fixture("S2b").unwrap().sequence;
        let cache = TransitionCache::new(&s1);
        for (k, m) in [(5, 0), (9, 0), (3, 0), (9, 2), (9, 2)] {
            assert_eq!(cache.get(k, m).unwrap(), s1.transition(k, m).unwrap());
        }
    }

    #[test]
    fn overflow_is_reported() {
        let seq = CoefficientSequence::constant(Interval::Whole, diag(1e200, 1.0)).unwrap();
        assert!(matches!(seq.transition(3, 0), Err(Error::OverflowDetected { .. })));
    }

    #[test]
    fn tail_resolution() {
        let seq = CoefficientSequence::new(1, Interval::Whole)
            .unwrap()
            .with_matrix(0, Matrix::from_element(1, 1, 5.0))
            .unwrap()
            .with_tails(
                TailRule::Constant(Matrix::from_element(1, 1, 1.0)),
                TailRule::Periodic(vec![Matrix::from_element(1, 1, 2.0), Matrix::from_element(1, 1, 3.0)]),
            )
            .unwrap();
        assert_eq!(seq.at(-4).unwrap()[(0, 0)], 1.0);
        assert_eq!(seq.at(0).unwrap()[(0, 0)], 5.0);
        assert_eq!(seq.at(2).unwrap()[(0, 0)], 2.0);
        assert_eq!(seq.at(3).unwrap()[(0, 0)], 3.0);
        let bare = CoefficientSequence::new(1, Interval::Whole).unwrap();
        assert_eq!(bare.at(0), Err(Error::Unresolvable(0)));
    }

    #[test]
    fn norm_bound_is_enforced() {
        let seq = fixture("S1").unwrap().sequence;
        assert!(seq.clone().with_norm_bound(2.0).is_ok());
        assert!(seq.with_norm_bound(1.5).is_err());
    }

    #[test]
    fn restricted_inverse_on_fixtures() {
        let tol = Tolerances::default();
        let f = fixture("S1").unwrap();
        let fam = f.known_projection.unwrap();
        let r = restricted_backward(&f.sequence, &fam, 0, 3, &tol).unwrap();
        assert_abs_diff_eq!(r, diag(0.0, 0.125), epsilon = 1e-15);
        let r = restricted_backward(&f.sequence, &fam, 4, 4, &tol).unwrap();
        assert_abs_diff_eq!(r, diag(0.0, 1.0), epsilon = 1e-15);

        let s3 = fixture("S3").unwrap().sequence;
        let swapped = ProjectionFamily::constant(Interval::HalfMinus { b: 0 }, diag(1.0, 0.0), &tol).unwrap();
        assert_eq!(
            restricted_backward(&s3, &swapped, -1, 0, &tol),
            Err(Error::NotInjectiveOnNullspace { m: -1, k: 0 })
        );
    }

    #[test]
    fn window_parsing() {
        assert_eq!("-3:7".parse::<Window>().unwrap(), Window { lo: -3, hi: 7 });
        assert!("3:1".parse::<Window>().is_err());
        assert!("3".parse::<Window>().is_err());
    }
}
