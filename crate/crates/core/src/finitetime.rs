//! Uniform dichotomies on finite windows [a, a+N] and the global dichotomy
//! they are expected to produce.
//!
//! The window length needed for the global conclusion is not known in closed
//! form, so the global check is reported separately as an empirical result.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::dichotomy::{estimate_stable_subspace, verify_with, DichotomyCertificate, Form, ProjectionFamily};
use crate::error::{Error, Result};
use crate::linalg::{complement, make_projection, norm2, preimage, Tolerances};
use crate::system::{CoefficientSequence, Interval, Window};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiniteTimeHypothesis {
    /// Window length N.
    pub n_len: usize,
    /// Base points a; empty means every a with [a, a+N] inside the scan range.
    pub base_points: Vec<i64>,
    /// Every run of `density` consecutive integers must contain a passing base point.
    pub density: usize,
    pub k: f64,
    pub alpha: f64,
    /// Bound M on |A(k)|.
    pub m_bound: f64,
    pub k_bar: f64,
    pub beta_bar: f64,
}

impl FiniteTimeHypothesis {
    pub fn validate(&self) -> Result<()> {
        if self.n_len == 0 || self.density == 0 {
            return Err(Error::InvalidInput("N and the density gap must be positive".into()));
        }
        if !(self.k >= 1.0 && self.k.is_finite() && self.m_bound > 0.0 && self.m_bound.is_finite()) {
            return Err(Error::InvalidInput("need K ≥ 1 and M > 0".into()));
        }
        if !(self.alpha > self.beta_bar && self.beta_bar > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidInput("need α > β̄ > 0".into()));
        }
        if !(self.k_bar > 4.0 * self.k.powi(8) && self.k_bar.is_finite()) {
            return Err(Error::InvalidInput("need K̄ > 4K⁸".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowCheck {
    pub a: i64,
    pub passed: bool,
    pub rank: Option<usize>,
    pub worst_margin: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GlobalCheck {
    pub window: Window,
    pub passed: bool,
    pub worst_margin: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FiniteTimeReport {
    pub scan: Window,
    pub max_norm: f64,
    pub worst_norm_k: Option<i64>,
    pub norm_bound_holds: bool,
    pub windows: Vec<WindowCheck>,
    pub passing_points: Vec<i64>,
    /// Longest run of integers in [lo, hi − N] of the scan range without a passing point.
    pub largest_gap: usize,
    pub density_holds: bool,
    pub hypotheses_hold: bool,
    /// Not implied by the hypotheses at this N; checked directly.
    pub global_empirical: GlobalCheck,
    #[serde(skip)]
    pub certificates: BTreeMap<i64, DichotomyCertificate>,
}

/// An invariant family on `window`: the unstable subspace at lo is pushed
/// forward and the stable subspace at hi is pulled back one step at a time.
pub fn finite_window_family(seq: &CoefficientSequence, window: Window, tol: &Tolerances) -> Result<ProjectionFamily> {
    let len = window.len() - 1;
    if len == 0 {
        return Err(Error::InvalidInput("window needs at least one step".into()));
    }
    let ladder = [len.div_ceil(2), len];
    let est = estimate_stable_subspace(seq, window.lo, &ladder, tol)?;
    let r = est.subspace.dim();
    let n = seq.n();
    let mut nulls = vec![est.subspace.orthogonal_complement(tol)];
    let mut stable_image = est.subspace.clone();
    for k in window.lo..window.hi {
        let a = seq.at(k)?;
        let next = nulls.last().unwrap().image(a, tol)?;
        if next.dim() != n - r {
            return Err(Error::NotInjectiveOnNullspace { m: window.lo, k: k + 1 });
        }
        nulls.push(next);
        stable_image = stable_image.image(a, tol)?;
    }
    let end_null = nulls.last().unwrap();
    let mut range = complement(end_null, None, Some(&stable_image), tol)?;
    let mut entries = BTreeMap::new();
    for k in window.iter().rev() {
        if k < window.hi {
            range = preimage(seq.at(k)?, &range, tol)?;
            if range.dim() != r {
                return Err(Error::RankMismatch(range.dim(), r));
            }
        }
        let p = make_projection(&range, &nulls[(k - window.lo) as usize], tol)?;
        entries.insert(k, p);
    }
    ProjectionFamily::from_entries(Interval::finite(window.lo, window.hi)?, entries, tol)
}

fn check_window(seq: &CoefficientSequence, window: Window, form: Form, tol: &Tolerances) -> Result<(DichotomyCertificate, f64, bool)> {
    let family = finite_window_family(seq, window, tol)?;
    let rep = verify_with(seq, &family, form, window, tol)?;
    Ok((DichotomyCertificate::new(family, form, window)?, rep.worst_margin, rep.passed))
}

fn largest_gap(points: &[i64], scan: Window) -> usize {
    let mut gap = 0;
    let mut prev = scan.lo - 1;
    for &p in points.iter().filter(|p| scan.contains(**p)) {
        gap = gap.max((p - prev - 1) as usize);
        prev = p;
    }
    gap.max((scan.hi - prev) as usize)
}

pub fn finite_time_check(
    seq: &CoefficientSequence,
    hyp: &FiniteTimeHypothesis,
    scan: Window,
    tol: &Tolerances,
) -> Result<FiniteTimeReport> {
    hyp.validate()?;
    let mut max_norm: f64 = 0.0;
    let mut worst_norm_k = None;
    for k in scan.lo..scan.hi {
        let s = norm2(seq.at(k)?);
        if s > max_norm {
            max_norm = s;
            worst_norm_k = Some(k);
        }
    }
    let norm_bound_holds = max_norm <= hyp.m_bound * (1.0 + tol.residual);

    let n_len = hyp.n_len as i64;
    let bases: Vec<i64> = if hyp.base_points.is_empty() {
        (scan.lo..=scan.hi - n_len).collect()
    } else {
        let mut b = hyp.base_points.clone();
        b.sort_unstable();
        b.dedup();
        b
    };
    let form = Form::A { l: hyp.k, alpha: hyp.alpha };
    let results: Vec<(WindowCheck, Option<DichotomyCertificate>)> = bases
        .par_iter()
        .map(|&a| {
            let window = Window::new(a, a + n_len)?;
            Ok(match check_window(seq, window, form, tol) {
                Ok((cert, margin, passed)) => (
                    WindowCheck { a, passed, rank: Some(cert.rank()), worst_margin: Some(margin), failure: None },
                    passed.then_some(cert),
                ),
                Err(e) => (WindowCheck { a, passed: false, rank: None, worst_margin: None, failure: Some(e.code().into()) }, None),
            })
        })
        .collect::<Result<_>>()?;
    let mut windows = Vec::with_capacity(results.len());
    let mut certificates = BTreeMap::new();
    for (check, cert) in results {
        if let Some(c) = cert {
            certificates.insert(check.a, c);
        }
        windows.push(check);
    }
    let passing_points: Vec<i64> = windows.iter().filter(|w| w.passed).map(|w| w.a).collect();
    if scan.hi - n_len < scan.lo {
        return Err(Error::InvalidInput("scan range shorter than N".into()));
    }
    let gap = largest_gap(&passing_points, Window::new(scan.lo, scan.hi - n_len)?);
    let density_holds = gap < hyp.density;
    let ranks_agree = certificates.values().map(|c| c.rank()).collect::<std::collections::BTreeSet<_>>().len() <= 1;

    let global_form = Form::A { l: hyp.k_bar, alpha: hyp.beta_bar };
    let global_empirical = match check_window(seq, scan, global_form, tol) {
        Ok((_, margin, passed)) => GlobalCheck { window: scan, passed, worst_margin: Some(margin), failure: None },
        Err(e) => GlobalCheck { window: scan, passed: false, worst_margin: None, failure: Some(e.code().into()) },
    };
    Ok(FiniteTimeReport {
        scan,
        max_norm,
        worst_norm_k,
        norm_bound_holds,
        windows,
        passing_points,
        largest_gap: gap,
        density_holds,
        hypotheses_hold: norm_bound_holds && density_holds && ranks_agree,
        global_empirical,
        certificates,
    })
}
