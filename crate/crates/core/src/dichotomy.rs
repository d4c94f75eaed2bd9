//! Dichotomy certificates: verification, constant estimation, form conversion and
//! subspace estimation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{
    check_finite, idempotency_residual, norm2, nullspace_of_projection, range_of_projection, rank_of,
    svd_right, Matrix, Subspace, Tolerances, Vector,
};
use crate::system::{restricted_backward, CoefficientSequence, Interval, TransitionCache, Window};

/// Invariant projections P(k) of constant rank.
///
/// Stored entries take precedence; indices below or above them use the
/// optional constant tails.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionFamily {
    n: usize,
    rank: usize,
    interval: Interval,
    entries: BTreeMap<i64, Matrix>,
    below: Option<Matrix>,
    above: Option<Matrix>,
}

impl ProjectionFamily {
    fn validate(p: &Matrix, n: usize, tol: &Tolerances) -> Result<usize> {
        if p.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!("projection must be {n}x{n}")));
        }
        check_finite(p, "projection")?;
        let res = idempotency_residual(p);
        if res > tol.residual {
            return Err(Error::InvalidInput(format!("matrix is not a projection (|P²−P| = {res:e})")));
        }
        Ok(rank_of(p, tol))
    }

    pub fn constant(interval: Interval, p: Matrix, tol: &Tolerances) -> Result<Self> {
        let n = p.nrows();
        let rank = Self::validate(&p, n, tol)?;
        Ok(ProjectionFamily {
            n,
            rank,
            interval,
            entries: BTreeMap::new(),
            below: Some(p.clone()),
            above: Some(p),
        })
    }

    pub fn from_entries(interval: Interval, entries: BTreeMap<i64, Matrix>, tol: &Tolerances) -> Result<Self> {
        let first = entries
            .values()
            .next()
            .ok_or_else(|| Error::InvalidInput("projection family needs at least one entry".into()))?;
        let n = first.nrows();
        let rank = Self::validate(first, n, tol)?;
        for (k, p) in &entries {
            if !interval.contains(*k) {
                return Err(Error::OutOfRange { k: *k, what: interval.to_string() });
            }
            let r = Self::validate(p, n, tol)?;
            if r != rank {
                return Err(Error::RankMismatch(rank, r));
            }
        }
        Ok(ProjectionFamily { n, rank, interval, entries, below: None, above: None })
    }

    /// Builds entries P(k) = f(k) for every k in `window`.
    pub fn from_fn(
        interval: Interval,
        window: Window,
        tol: &Tolerances,
        f: impl Fn(i64) -> Result<Matrix>,
    ) -> Result<Self> {
        let entries = window.iter().map(|k| Ok((k, f(k)?))).collect::<Result<BTreeMap<_, _>>>()?;
        Self::from_entries(interval, entries, tol)
    }

    pub fn with_tails(mut self, below: Option<Matrix>, above: Option<Matrix>, tol: &Tolerances) -> Result<Self> {
        for p in below.iter().chain(above.iter()) {
            let r = Self::validate(p, self.n, tol)?;
            if r != self.rank {
                return Err(Error::RankMismatch(self.rank, r));
            }
        }
        self.below = below;
        self.above = above;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn entries(&self) -> &BTreeMap<i64, Matrix> {
        &self.entries
    }

    pub fn with_interval(mut self, interval: Interval) -> Self {
        self.interval = interval;
        self
    }

    /// Constant tails used below and above the stored entries.
    pub fn tails(&self) -> (Option<&Matrix>, Option<&Matrix>) {
        (self.below.as_ref(), self.above.as_ref())
    }

    pub(crate) fn insert_entry(&mut self, k: i64, p: Matrix, tol: &Tolerances) -> Result<()> {
        let r = Self::validate(&p, self.n, tol)?;
        if r != self.rank {
            return Err(Error::RankMismatch(self.rank, r));
        }
        self.entries.insert(k, p);
        Ok(())
    }

    pub fn at(&self, k: i64) -> Result<&Matrix> {
        if !self.interval.contains(k) {
            return Err(Error::OutOfRange { k, what: format!("projection family on {}", self.interval) });
        }
        if let Some(p) = self.entries.get(&k) {
            return Ok(p);
        }
        let tail = match (self.entries.keys().next(), self.entries.keys().next_back()) {
            (Some(&first), _) if k < first => self.below.as_ref(),
            (_, Some(&last)) if k > last => self.above.as_ref(),
            (None, None) => self.above.as_ref().or(self.below.as_ref()),
            _ => None,
        };
        tail.ok_or(Error::OutOfRange { k, what: "stored projections".into() })
    }

    pub fn range_at(&self, k: i64, tol: &Tolerances) -> Result<Subspace> {
        Ok(range_of_projection(self.at(k)?, tol))
    }

    pub fn nullspace_at(&self, k: i64, tol: &Tolerances) -> Result<Subspace> {
        Ok(nullspace_of_projection(self.at(k)?, tol))
    }

    /// Explicit entries on `window`, no tails, interval narrowed to the window.
    pub fn materialize(&self, window: Window, tol: &Tolerances) -> Result<Self> {
        let interval = Interval::finite(window.lo, window.hi)?;
        Self::from_fn(interval, window, tol, |k| Ok(self.at(k)?.clone()))
    }
}

/// Constants of a dichotomy certificate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "form")]
pub enum Form {
    /// |Φ(k,m)P(m)| ≤ L e^{−α(k−m)}, |Φ(m,k)(I−P(k))| ≤ L e^{−α(k−m)}.
    A { l: f64, alpha: f64 },
    /// |P|, |I−P| ≤ M and vectorwise decay/growth with constant K.
    B { m: f64, k: f64, alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FormKind {
    A,
    B,
}

impl Form {
    pub fn alpha(&self) -> f64 {
        match *self {
            Form::A { alpha, .. } | Form::B { alpha, .. } => alpha,
        }
    }

    pub fn kind(&self) -> FormKind {
        match self {
            Form::A { .. } => FormKind::A,
            Form::B { .. } => FormKind::B,
        }
    }

    /// The Form A constant implied by this form (L, or KM).
    pub fn l_equivalent(&self) -> f64 {
        match *self {
            Form::A { l, .. } => l,
            Form::B { m, k, .. } => k * m,
        }
    }

    pub fn to_a(&self) -> Form {
        Form::A { l: self.l_equivalent(), alpha: self.alpha() }
    }

    pub fn to_b(&self) -> Form {
        match *self {
            Form::A { l, alpha } => Form::B { m: l, k: l, alpha },
            b => b,
        }
    }

    /// The vectorwise constant: L for Form A (taking M = K = L), K for Form B.
    pub fn k_constant(&self) -> f64 {
        match *self {
            Form::A { l, .. } => l,
            Form::B { k, .. } => k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |x: f64| !(x.is_finite() && x >= 1.0);
        let alpha_ok = self.alpha().is_finite() && self.alpha() > 0.0;
        let consts_ok = match *self {
            Form::A { l, .. } => !bad(l),
            Form::B { m, k, .. } => !bad(m) && !bad(k),
        };
        if alpha_ok && consts_ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("constants need L, M, K ≥ 1 and α > 0".into()))
        }
    }
}

/// A projection family with dichotomy constants on a finite window.
#[derive(Clone, Debug, PartialEq)]
pub struct DichotomyCertificate {
    pub family: ProjectionFamily,
    /// Constants claimed for the window (measured unless stated otherwise).
    pub form: Form,
    /// Constants guaranteed by a constructive bound, when one applies.
    pub guaranteed: Option<Form>,
    pub window: Window,
}

impl DichotomyCertificate {
    pub fn new(family: ProjectionFamily, form: Form, window: Window) -> Result<Self> {
        form.validate()?;
        Ok(DichotomyCertificate { family, form, guaranteed: None, window })
    }

    pub fn rank(&self) -> usize {
        self.family.rank()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InvarianceReport {
    /// max over k of |A(k)P(k) − P(k+1)A(k)| / max(1, |A(k)| max(|P(k)|, |P(k+1)|)).
    pub max_residual: f64,
    pub worst_k: Option<i64>,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn invariance_residual(seq: &CoefficientSequence, family: &ProjectionFamily, k: i64) -> Result<f64> {
    let a = seq.at(k)?;
    let p0 = family.at(k)?;
    let p1 = family.at(k + 1)?;
    let scale = (norm2(a) * norm2(p0).max(norm2(p1))).max(1.0);
    Ok(norm2(&(a * p0 - p1 * a)) / scale)
}

pub fn check_invariance(
    seq: &CoefficientSequence,
    family: &ProjectionFamily,
    window: Window,
    tol: &Tolerances,
) -> Result<InvarianceReport> {
    let mut worst = (0.0, None);
    for k in window.lo..window.hi {
        let r = invariance_residual(seq, family, k)?;
        if worst.1.is_none() || r > worst.0 {
            worst = (r, Some(k));
        }
    }
    Ok(InvarianceReport {
        max_residual: worst.0,
        worst_k: worst.1,
        tolerance: tol.residual,
        passed: worst.0 < tol.residual,
    })
}

/// Numerically stable split products on a window.
///
/// Φ(k,m)P(m) is accumulated as products of P(j+1)A(j)P(j) and Φ(m,k)(I−P(k))
/// as products of one-step restricted inverses, so neither direction ever forms
/// a growing raw product.
pub struct SplitTransitions {
    lo: i64,
    hi: i64,
    n: usize,
    proj: Vec<Matrix>,
    ranges: Vec<Matrix>,
    nulls: Vec<Matrix>,
    step: Vec<Matrix>,
    back: Vec<Matrix>,
}

impl SplitTransitions {
    pub fn new(seq: &CoefficientSequence, family: &ProjectionFamily, window: Window, tol: &Tolerances) -> Result<Self> {
        let n = seq.n();
        if family.n() != n {
            return Err(Error::DimensionMismatch("family and sequence dimensions differ".into()));
        }
        let mut proj = Vec::with_capacity(window.len());
        let mut ranges = Vec::with_capacity(window.len());
        let mut nulls = Vec::with_capacity(window.len());
        for k in window.iter() {
            let p = family.at(k)?.clone();
            ranges.push(range_of_projection(&p, tol).basis().clone());
            nulls.push(nullspace_of_projection(&p, tol).basis().clone());
            proj.push(p);
        }
        let steps: Vec<i64> = (window.lo..window.hi).collect();
        let step = steps
            .iter()
            .map(|&k| {
                let i = (k - window.lo) as usize;
                Ok(&proj[i + 1] * seq.at(k)? * &proj[i])
            })
            .collect::<Result<Vec<_>>>()?;
        let back = steps
            .par_iter()
            .map(|&k| restricted_backward(seq, family, k, k + 1, tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(SplitTransitions { lo: window.lo, hi: window.hi, n, proj, ranges, nulls, step, back })
    }

    pub fn window(&self) -> Window {
        Window { lo: self.lo, hi: self.hi }
    }

    fn idx(&self, k: i64) -> usize {
        (k - self.lo) as usize
    }

    pub fn projection(&self, k: i64) -> &Matrix {
        &self.proj[self.idx(k)]
    }

    /// Orthonormal basis of ℛP(k).
    pub fn range_basis(&self, k: i64) -> &Matrix {
        &self.ranges[self.idx(k)]
    }

    /// Orthonormal basis of 𝒩P(k).
    pub fn null_basis(&self, k: i64) -> &Matrix {
        &self.nulls[self.idx(k)]
    }

    /// Φ(k,m)P(m) for k = m, …, hi.
    pub fn stable_row(&self, m: i64) -> Vec<Matrix> {
        let mut out = Vec::with_capacity((self.hi - m + 1) as usize);
        let mut x = self.projection(m).clone();
        out.push(x.clone());
        for k in m..self.hi {
            x = &self.step[self.idx(k)] * x;
            out.push(x.clone());
        }
        out
    }

    /// Φ(m,k)(I−P(k)) for m = k, k−1, …, lo.
    pub fn unstable_column(&self, k: i64) -> Vec<Matrix> {
        let mut out = Vec::with_capacity((k - self.lo + 1) as usize);
        let mut y = Matrix::identity(self.n, self.n) - self.projection(k);
        out.push(y.clone());
        for m in (self.lo..k).rev() {
            y = &self.back[self.idx(m)] * y;
            out.push(y.clone());
        }
        out
    }

    /// P(k+1)A(k)P(k).
    pub fn step(&self, k: i64) -> &Matrix {
        &self.step[self.idx(k)]
    }

    /// The one-step restricted inverse Φ(k,k+1)(I−P(k+1)).
    pub fn back_step(&self, k: i64) -> &Matrix {
        &self.back[self.idx(k)]
    }

    pub(crate) fn table(&self, restricted: bool) -> PairTable {
        let w = self.window().len();
        let rows: Vec<Vec<f64>> = self
            .window()
            .iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&m| {
                let rb = self.range_basis(m);
                self.stable_row(m)
                    .iter()
                    .map(|x| if restricted { norm2(&(x * rb)) } else { norm2(x) })
                    .collect()
            })
            .collect();
        let cols: Vec<Vec<f64>> = self
            .window()
            .iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&k| {
                let nb = self.null_basis(k);
                self.unstable_column(k)
                    .iter()
                    .map(|y| if restricted { norm2(&(y * nb)) } else { norm2(y) })
                    .collect()
            })
            .collect();
        let mut stable = vec![0.0; w * w];
        let mut unstable = vec![0.0; w * w];
        for (i, row) in rows.iter().enumerate() {
            for (d, v) in row.iter().enumerate() {
                stable[i * w + i + d] = *v;
            }
        }
        for (j, col) in cols.iter().enumerate() {
            for (d, v) in col.iter().enumerate() {
                unstable[(j - d) * w + j] = *v;
            }
        }
        PairTable { lo: self.lo, w, stable, unstable }
    }
}

/// Norms of the split transitions for every pair m ≤ k of a window.
pub(crate) struct PairTable {
    lo: i64,
    w: usize,
    stable: Vec<f64>,
    unstable: Vec<f64>,
}

impl PairTable {
    fn pairs(&self) -> impl Iterator<Item = (i64, i64, f64, f64)> + '_ {
        (0..self.w).flat_map(move |i| {
            (i..self.w).map(move |j| {
                let idx = i * self.w + j;
                (self.lo + i as i64, self.lo + j as i64, self.stable[idx], self.unstable[idx])
            })
        })
    }

    /// Largest required constant for exponent α.
    fn constant_for(&self, alpha: f64) -> f64 {
        self.pairs()
            .map(|(m, k, s, u)| s.max(u) * (alpha * (k - m) as f64).exp())
            .fold(1.0, f64::max)
    }

    /// max over pairs at distance t of the larger split norm.
    fn envelope(&self) -> Vec<f64> {
        let mut env = vec![0.0f64; self.w];
        for (m, k, s, u) in self.pairs() {
            let t = (k - m) as usize;
            env[t] = env[t].max(s.max(u));
        }
        env
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// Forward decay on the stable part.
    Decay,
    /// Backward decay on the unstable part.
    Growth,
    /// |P(k)| ≤ M or |I − P(k)| ≤ M.
    ProjectionBound,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub k: i64,
    pub m: i64,
    pub inequality: Inequality,
    pub value: f64,
    pub bound: f64,
    /// (bound − value)/bound; negative means violated.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub form: Form,
    pub window: Window,
    pub invariance: InvarianceReport,
    pub worst: Option<Witness>,
    pub worst_margin: f64,
    /// A check passes when its margin is at least −tolerance.
    pub tolerance: f64,
    pub checks: usize,
}

fn margin(value: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        (bound - value) / bound
    } else if value == 0.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Checks the inequalities of `form` for every pair m ≤ k in `window`.
pub fn verify_with(
    seq: &CoefficientSequence,
    family: &ProjectionFamily,
    form: Form,
    window: Window,
    tol: &Tolerances,
) -> Result<VerificationReport> {
    form.validate()?;
    let invariance = check_invariance(seq, family, window, tol)?;
    let fail = |invariance| VerificationReport {
        passed: false,
        form,
        window,
        invariance,
        worst: None,
        worst_margin: f64::NEG_INFINITY,
        tolerance: tol.residual,
        checks: 0,
    };
    if !invariance.passed {
        return Ok(fail(invariance));
    }
    let split = SplitTransitions::new(seq, family, window, tol)?;
    let (c, alpha, restricted) = match form {
        Form::A { l, alpha } => (l, alpha, false),
        Form::B { k, alpha, .. } => (k, alpha, true),
    };
    let table = split.table(restricted);
    let mut worst: Option<Witness> = None;
    let mut checks = 0;
    let mut consider = |w: Witness| {
        checks += 1;
        if worst.is_none_or(|cur| w.margin < cur.margin) {
            worst = Some(w);
        }
    };
    if let Form::B { m: mb, .. } = form {
        let id = Matrix::identity(seq.n(), seq.n());
        for k in window.iter() {
            let p = split.projection(k);
            for v in [norm2(p), norm2(&(&id - p))] {
                consider(Witness { k, m: k, inequality: Inequality::ProjectionBound, value: v, bound: mb, margin: margin(v, mb) });
            }
        }
    }
    for (m, k, s, u) in table.pairs() {
        let bound = c * (-alpha * (k - m) as f64).exp();
        consider(Witness { k, m, inequality: Inequality::Decay, value: s, bound, margin: margin(s, bound) });
        consider(Witness { k, m, inequality: Inequality::Growth, value: u, bound, margin: margin(u, bound) });
    }
    let worst_margin = worst.map_or(0.0, |w| w.margin);
    Ok(VerificationReport {
        passed: worst_margin >= -tol.residual,
        form,
        window,
        invariance,
        worst,
        worst_margin,
        tolerance: tol.residual,
        checks,
    })
}

pub fn verify_certificate(
    seq: &CoefficientSequence,
    cert: &DichotomyCertificate,
    window: Window,
    tol: &Tolerances,
) -> Result<VerificationReport> {
    verify_with(seq, &cert.family, cert.form, window, tol)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EstimateConfig {
    /// Largest admissible L when fitting α.
    pub l_cap: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig { l_cap: 1e6 }
    }
}

const ALPHA_CEILING: f64 = 1e3;

/// Smallest L for the given α, or the largest α with L(α) ≤ L_cap.
pub fn estimate_constants(
    seq: &CoefficientSequence,
    family: &ProjectionFamily,
    window: Window,
    alpha: Option<f64>,
    config: &EstimateConfig,
    tol: &Tolerances,
) -> Result<DichotomyCertificate> {
    let inv = check_invariance(seq, family, window, tol)?;
    if !inv.passed {
        return Err(Error::NotInvariant { k: inv.worst_k.unwrap_or(window.lo), residual: inv.max_residual });
    }
    let table = SplitTransitions::new(seq, family, window, tol)?.table(false);
    let alpha = match alpha {
        Some(a) if a.is_finite() && a > 0.0 => a,
        Some(_) => return Err(Error::InvalidInput("alpha must be positive".into())),
        None => fit_alpha(&table, config.l_cap)?,
    };
    let l = table.constant_for(alpha);
    DichotomyCertificate::new(family.clone(), Form::A { l, alpha }, window)
}

fn fit_alpha(table: &PairTable, l_cap: f64) -> Result<f64> {
    let env = table.envelope();
    let t_max = env.len() - 1;
    if t_max == 0 {
        return Err(Error::NoDecay);
    }
    let half = t_max.div_ceil(2);
    let head = env[..half].iter().copied().fold(0.0, f64::max);
    let tail = env[half..].iter().copied().fold(0.0, f64::max);
    if tail >= head * (1.0 - 1e-12) || table.constant_for(0.0) > l_cap {
        return Err(Error::NoDecay);
    }
    let mut hi = 1.0;
    while table.constant_for(hi) <= l_cap {
        hi *= 2.0;
        if hi > ALPHA_CEILING {
            return Ok(ALPHA_CEILING);
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if table.constant_for(mid) <= l_cap {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    if lo > 0.0 {
        Ok(lo)
    } else {
        Err(Error::NoDecay)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conversion {
    pub certificate: DichotomyCertificate,
    /// Ratio of the Form A constant after conversion to the one before.
    pub inflation: f64,
}

/// Form B → Form A with L = KM; Form A → Form B with M = K = L.
pub fn convert_certificate(cert: &DichotomyCertificate, target: FormKind) -> Conversion {
    let before = cert.form.l_equivalent();
    let form = match target {
        FormKind::A => cert.form.to_a(),
        FormKind::B => cert.form.to_b(),
    };
    let mut certificate = cert.clone();
    certificate.form = form;
    certificate.guaranteed = cert.guaranteed.map(|g| match target {
        FormKind::A => g.to_a(),
        FormKind::B => g.to_b(),
    });
    Conversion { certificate, inflation: form.l_equivalent() / before }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubspaceEstimate {
    pub at_k: i64,
    pub subspace: Subspace,
    /// Fitted exponent per singular value index (descending σ); −∞ for exact zeros.
    pub growth_rates: Vec<f64>,
    pub gap_quality: f64,
}

/// Threshold below which a fitted growth rate counts as undecided.
pub const TOL_SLOPE: f64 = 1e-3;

/// Estimates ℛP(m) from the singular value growth of Φ(m+N, m).
pub fn estimate_stable_subspace(
    seq: &CoefficientSequence,
    m: i64,
    ladder: &[usize],
    tol: &Tolerances,
) -> Result<SubspaceEstimate> {
    let mut ladder: Vec<usize> = ladder.to_vec();
    ladder.sort_unstable();
    ladder.dedup();
    if ladder.is_empty() || ladder[0] == 0 {
        return Err(Error::InvalidInput("ladder needs positive lengths".into()));
    }
    let n = seq.n();
    let cache = TransitionCache::new(seq);
    // (N, ln σ) pairs per index; values at the rounding floor of σ_max are dropped.
    let mut logs: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    let mut last_vt = Matrix::zeros(n, n);
    for &len in &ladder {
        let phi = cache.get(m + len as i64, m)?;
        let (s, vt) = svd_right(&phi);
        let smax = s[0];
        for (i, &si) in s.iter().enumerate() {
            if si > smax * f64::EPSILON * n as f64 && si > 0.0 {
                logs[i].push((len as f64, si.ln()));
            }
        }
        last_vt = vt;
    }
    let rates: Vec<f64> = logs.iter().map(|pts| fit_slope(pts)).collect();
    if let Some(r) = rates.iter().copied().filter(|r| r.abs() < TOL_SLOPE).reduce(|a, b| if a.abs() < b.abs() { a } else { b }) {
        return Err(Error::NoGap(r));
    }
    let stable: Vec<usize> = (0..n).filter(|&i| rates[i] < 0.0).collect();
    let basis = Matrix::from_fn(n, stable.len(), |r, c| last_vt[(stable[c], r)]);
    let subspace = Subspace::span(&basis, tol);
    let min_pos = rates.iter().copied().filter(|r| *r > 0.0).fold(f64::INFINITY, f64::min);
    let max_neg = rates.iter().copied().filter(|r| *r < 0.0 && r.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let gap_quality = (if min_pos.is_finite() { min_pos } else { 0.0 }) - (if max_neg.is_finite() { max_neg } else { 0.0 });
    Ok(SubspaceEstimate { at_k: m, subspace, growth_rates: rates, gap_quality })
}

/// Least-squares slope; a single point is fitted through the origin and no
/// points at all means the direction is annihilated.
pub(crate) fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    match pts {
        [] => f64::NEG_INFINITY,
        [(x, y)] => y / x,
        _ => {
            let nx = pts.len() as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / nx;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / nx;
            let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
            sxy / sxx
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BackwardSolution {
    /// (k, y(k)) for k from m − horizon up to m.
    #[serde(serialize_with = "crate::report::vector_pairs")]
    pub values: Vec<(i64, Vector)>,
    pub sup: f64,
    pub bounded: bool,
    pub endpoint_error: f64,
    /// max |y(k+1) − A(k)y(k)|.
    pub residual: f64,
    /// Largest difference between the one-shot and stepwise reconstructions.
    pub uniqueness_discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundedSolutionVerdict {
    pub m: i64,
    pub horizon: usize,
    /// sup |y| / |ξ| must stay below this for a "bounded" verdict.
    pub envelope: f64,
    pub forward_sup: f64,
    pub bounded_forward: bool,
    /// Distance of ξ from 𝒩P(m), when a family was supplied.
    pub unstable_residual: Option<f64>,
    pub backward: Option<BackwardSolution>,
}

/// Forward and backward boundedness of the solution through (m, ξ).
pub fn bounded_solution_oracle(
    seq: &CoefficientSequence,
    family_hint: Option<&ProjectionFamily>,
    m: i64,
    xi: &Vector,
    horizon: usize,
    envelope: f64,
    tol: &Tolerances,
) -> Result<BoundedSolutionVerdict> {
    if xi.len() != seq.n() {
        return Err(Error::DimensionMismatch("initial vector length".into()));
    }
    let xn = xi.norm().max(f64::MIN_POSITIVE);
    let mut x = xi.clone();
    let mut sup = x.norm();
    let mut k = m;
    while k < m + horizon as i64 && seq.interval().has_step(k) {
        x = seq.at(k)? * x;
        sup = sup.max(x.norm());
        k += 1;
    }
    let forward_sup = sup / xn;
    let mut verdict = BoundedSolutionVerdict {
        m,
        horizon,
        envelope,
        forward_sup,
        bounded_forward: forward_sup.is_finite() && forward_sup <= envelope,
        unstable_residual: None,
        backward: None,
    };
    let Some(fam) = family_hint else { return Ok(verdict) };
    let p = fam.at(m)?;
    let res = (p * xi).norm() / xn;
    verdict.unstable_residual = Some(res);
    if res > tol.subspace() {
        return Ok(verdict);
    }
    let lo = seq.interval().lower().map_or(m - horizon as i64, |a| a.max(m - horizon as i64));
    let window = Window::new(lo, m)?;
    let split = SplitTransitions::new(seq, fam, window, tol)?;
    let stepwise = split.unstable_column(m);
    let mut values = Vec::with_capacity(window.len());
    let mut discrepancy = 0.0f64;
    for (d, y_op) in stepwise.iter().enumerate() {
        let kk = m - d as i64;
        let direct = restricted_backward(seq, fam, kk, m, tol)? * xi;
        let step = y_op * xi;
        discrepancy = discrepancy.max((&direct - &step).norm() / xn);
        values.push((kk, step));
    }
    values.reverse();
    let mut residual = 0.0f64;
    for w in values.windows(2) {
        let r = (&w[1].1 - seq.at(w[0].0)? * &w[0].1).norm() / xn;
        residual = residual.max(r);
    }
    let bsup = values.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max) / xn;
    let endpoint_error = (&values.last().expect("window is nonempty").1 - xi).norm() / xn;
    verdict.backward = Some(BackwardSolution {
        values,
        sup: bsup,
        bounded: bsup <= envelope,
        endpoint_error,
        residual,
        uniqueness_discrepancy: discrepancy,
    });
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::fixture;
    use approx::assert_abs_diff_eq;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn s1() -> (CoefficientSequence, ProjectionFamily) {
        let f = fixture("S1").unwrap();
        (f.sequence, f.known_projection.unwrap())
    }

    fn w(lo: i64, hi: i64) -> Window {
        Window::new(lo, hi).unwrap()
    }

    #[test]
    fn invariance_checks() {
        let (seq, fam) = s1();
        let r = check_invariance(&seq, &fam, w(0, 20), &tol()).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_residual, 0.0);
        let skew = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let bad = ProjectionFamily::constant(Interval::Whole, skew, &tol()).unwrap();
        assert!(!check_invariance(&seq, &bad, w(0, 20), &tol()).unwrap().passed);
        assert!(check_invariance(&seq, &bad, w(3, 3), &tol()).unwrap().passed);
    }

    #[test]
    fn verifies_exact_fixture() {
        let (seq, fam) = s1();
        let form = Form::A { l: 1.0, alpha: 2f64.ln() };
        let rep = verify_with(&seq, &fam, form, w(0, 50), &tol()).unwrap();
        assert!(rep.passed);
        assert!(rep.worst_margin.abs() <= 1e-12);
        let rep = verify_with(&seq, &fam, Form::A { l: 1.0, alpha: 2f64.ln() + 0.1 }, w(0, 50), &tol()).unwrap();
        assert!(!rep.passed);
        let wit = rep.worst.unwrap();
        assert!(wit.k - wit.m >= 1);
        let rep = verify_with(&seq, &fam, Form::B { m: 1.0, k: 1.0, alpha: 2f64.ln() }, w(-5, 20), &tol()).unwrap();
        assert!(rep.passed);
    }

    #[test]
    fn full_rank_family_checks_only_decay() {
        let seq = CoefficientSequence::constant(Interval::Whole, Matrix::identity(2, 2) * 0.5).unwrap();
        let fam = ProjectionFamily::constant(Interval::Whole, Matrix::identity(2, 2), &tol()).unwrap();
        let rep = verify_with(&seq, &fam, Form::A { l: 1.0, alpha: 2f64.ln() }, w(0, 10), &tol()).unwrap();
        assert!(rep.passed);
    }

    #[test]
    fn estimates_constants() {
        let (seq, fam) = s1();
        let c = estimate_constants(&seq, &fam, w(0, 40), Some(2f64.ln()), &EstimateConfig::default(), &tol()).unwrap();
        assert_abs_diff_eq!(c.form.l_equivalent(), 1.0, epsilon = 1e-12);
        let c = estimate_constants(&seq, &fam, w(0, 40), Some(2f64.ln() / 2.0), &EstimateConfig::default(), &tol()).unwrap();
        assert_abs_diff_eq!(c.form.l_equivalent(), 1.0, epsilon = 1e-12);
        let fitted = estimate_constants(&seq, &fam, w(0, 40), None, &EstimateConfig::default(), &tol()).unwrap();
        let expect = 2f64.ln() + 1e6f64.ln() / 40.0;
        assert_abs_diff_eq!(fitted.form.alpha(), expect, epsilon = 1e-9);

        let id = CoefficientSequence::constant(Interval::Whole, Matrix::identity(2, 2)).unwrap();
        let pid = ProjectionFamily::constant(Interval::Whole, Matrix::identity(2, 2), &tol()).unwrap();
        assert_eq!(
            estimate_constants(&id, &pid, w(0, 20), None, &EstimateConfig::default(), &tol()),
            Err(Error::NoDecay)
        );
    }

    #[test]
    fn conversions() {
        let (_, fam) = s1();
        let cert = DichotomyCertificate::new(fam, Form::B { m: 2.0, k: 3.0, alpha: 0.5 }, w(0, 5)).unwrap();
        let a = convert_certificate(&cert, FormKind::A);
        assert_eq!(a.certificate.form, Form::A { l: 6.0, alpha: 0.5 });
        let b = convert_certificate(&a.certificate, FormKind::B);
        assert_eq!(b.certificate.form, Form::B { m: 6.0, k: 6.0, alpha: 0.5 });
        assert_abs_diff_eq!(b.inflation, 6.0);
        let back = convert_certificate(&b.certificate, FormKind::A);
        assert_eq!(back.certificate.form.l_equivalent(), 36.0);
    }

    #[test]
    fn stable_subspace_estimates() {
        let (seq, _) = s1();
        let est = estimate_stable_subspace(&seq, 0, &[10, 20, 30], &tol()).unwrap();
        assert_eq!(est.subspace.dim(), 1);
        assert!(crate::linalg::subspace_distance(&est.subspace, &Subspace::axes(2, &[0])).unwrap() < 1e-12);
        assert_abs_diff_eq!(est.growth_rates[0], 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(est.growth_rates[1], -(2f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(est.gap_quality, 2.0 * 2f64.ln(), epsilon = 1e-12);

        let half = CoefficientSequence::constant(Interval::Whole, Matrix::identity(3, 3) * 0.5).unwrap();
        assert_eq!(estimate_stable_subspace(&half, 0, &[5, 10], &tol()).unwrap().subspace.dim(), 3);
        let two = CoefficientSequence::constant(Interval::Whole, Matrix::identity(3, 3) * 2.0).unwrap();
        assert_eq!(estimate_stable_subspace(&two, 0, &[5, 10], &tol()).unwrap().subspace.dim(), 0);
        let id = CoefficientSequence::constant(Interval::Whole, Matrix::identity(2, 2)).unwrap();
        assert!(matches!(estimate_stable_subspace(&id, 0, &[5, 10], &tol()), Err(Error::NoGap(_))));
    }

    #[test]
    fn bounded_solutions() {
        let (seq, fam) = s1();
        let e1 = Vector::from_vec(vec![1.0, 0.0]);
        let e2 = Vector::from_vec(vec![0.0, 1.0]);
        let v = bounded_solution_oracle(&seq, None, 0, &e1, 40, 1e3, &tol()).unwrap();
        assert!(v.bounded_forward);
        let v = bounded_solution_oracle(&seq, Some(&fam), 0, &e2, 40, 1e3, &tol()).unwrap();
        assert!(!v.bounded_forward);
        let b = v.backward.unwrap();
        assert!(b.bounded);
        assert!(b.uniqueness_discrepancy < 1e-10);
        assert!(b.residual < 1e-12);
        for (k, y) in &b.values {
            assert_abs_diff_eq!(y[1], 2f64.powi(*k as i32), epsilon = 1e-15);
            assert_eq!(y[0], 0.0);
        }
    }
}
