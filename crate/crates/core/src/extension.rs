//! Extending half-line dichotomies to the end point of the half-line, and
//! embedding interval dichotomies into ℤ.
//!
//! Extensions run one step at a time so that the first failing index is
//! reported exactly. A forward certificate on [m, hi] is extended down to a
//! target below m; a backward certificate on [lo, m] is extended up to a
//! target above m.

use serde::Serialize;

use crate::dichotomy::{estimate_constants, DichotomyCertificate, EstimateConfig, Form, ProjectionFamily};
use crate::error::{Error, Obstruction, Result};
use crate::linalg::{
    complement, kernel_of, make_projection, min_singular, norm2, preimage, Matrix, Subspace, Tolerances,
};
use crate::projections::{change_complement_minus, change_complement_plus};
use crate::system::{CoefficientSequence, Interval, TailRule, Window};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExtensionVerdict {
    pub extendable: bool,
    /// Dimension of the preimage of ℛP(m) under the transition from the
    /// target to m (forward extensions only).
    pub preimage_dim: Option<usize>,
    pub rank: usize,
    pub obstruction: Option<Obstruction>,
    pub failing_step: Option<i64>,
    /// Whether the given projections survive the extension unchanged.
    pub projection_preserved: bool,
    pub preservation_blocker: Option<Obstruction>,
}

/// Constant after one extension step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExtensionStep {
    pub j: i64,
    pub l: f64,
    pub complement_rechosen: bool,
}

#[derive(Clone, Debug)]
pub struct ExtensionOutcome {
    pub certificate: DichotomyCertificate,
    pub verdict: ExtensionVerdict,
    pub steps: Vec<ExtensionStep>,
}

struct PlusPlan {
    range: Subspace,
    null: Subspace,
    rechosen: Option<Subspace>,
}

/// Range and nullspace of P(j) from those of P(j+1), or None when the
/// preimage of the range has the wrong dimension.
fn plus_step(a: &Matrix, range_next: &Subspace, null_next: &Subspace, tol: &Tolerances) -> Result<Option<PlusPlan>> {
    let n = a.nrows();
    let r = range_next.dim();
    let range = preimage(a, range_next, tol)?;
    if range.dim() != r {
        return Ok(None);
    }
    let img = Subspace::full(n).image(a, tol)?;
    let mut rechosen = None;
    let mut null_next = null_next.clone();
    if !img.contains(&null_next, tol) {
        // 𝒩P(j+1) must be A(j) of a complement, so it is moved into the image.
        let w = complement(&range_next.intersection(&img, tol), Some(&img), None, tol)?;
        if w.dim() != n - r {
            return Err(Error::NotAComplement(format!("image complement has dimension {}", w.dim())));
        }
        null_next = w.clone();
        rechosen = Some(w);
    }
    let null = complement(&kernel_of(a, tol), Some(&preimage(a, &null_next, tol)?), None, tol)?;
    if null.dim() != n - r {
        return Err(Error::NotAComplement(format!("nullspace candidate has dimension {}", null.dim())));
    }
    Ok(Some(PlusPlan { range, null, rechosen }))
}

/// Norm of the inverse of A: 𝒩P(from) → 𝒩P(to), and of that inverse composed with I − P(to).
fn nullspace_inverse_norms(a: &Matrix, p_from: &Matrix, p_to: &Matrix, tol: &Tolerances) -> Result<(f64, f64)> {
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let null = crate::linalg::nullspace_of_projection(p_from, tol);
    if null.dim() == 0 {
        return Ok((0.0, 0.0));
    }
    let y = a * null.basis();
    let s = min_singular(&y);
    if s <= tol.rank * norm2(a).max(1.0) {
        return Err(Error::NotInjectiveOnNullspace { m: 0, k: 1 });
    }
    let pinv = y.pseudo_inverse(0.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok((1.0 / s, norm2(&(null.basis() * pinv * (id - p_to)))))
}

fn lower_to(i: Interval, to: i64) -> Interval {
    match i {
        Interval::HalfPlus { .. } => Interval::HalfPlus { a: to },
        Interval::Finite { b, .. } => Interval::Finite { a: to, b },
        other => other,
    }
}

fn upper_to(i: Interval, to: i64) -> Interval {
    match i {
        Interval::HalfMinus { .. } => Interval::HalfMinus { b: to },
        Interval::Finite { a, .. } => Interval::Finite { a, b: to },
        other => other,
    }
}

fn proper_target(cert: &DichotomyCertificate, target: i64, forward: bool) -> Result<()> {
    let ok = if forward { target < cert.window.lo } else { target > cert.window.hi };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("target {target} is not beyond the end of window {}", cert.window)))
    }
}

/// Decides whether a certificate on [m, hi] extends down to `target`.
pub fn can_extend_plus(
    seq: &CoefficientSequence,
    cert: &DichotomyCertificate,
    target: i64,
    tol: &Tolerances,
) -> Result<ExtensionVerdict> {
    proper_target(cert, target, true)?;
    let m = cert.window.lo;
    let r = cert.rank();
    let mut range = cert.family.range_at(m, tol)?;
    let mut null = cert.family.nullspace_at(m, tol)?;
    let pre = preimage(&seq.transition(m, target)?, &range, tol)?;
    let mut verdict = ExtensionVerdict {
        extendable: true,
        preimage_dim: Some(pre.dim()),
        rank: r,
        obstruction: None,
        failing_step: None,
        projection_preserved: true,
        preservation_blocker: None,
    };
    for j in (target..m).rev() {
        match plus_step(seq.at(j)?, &range, &null, tol)? {
            None => {
                verdict.extendable = false;
                verdict.obstruction = Some(Obstruction::DimensionMismatch);
                verdict.failing_step = Some(j);
                break;
            }
            Some(plan) => {
                if plan.rechosen.is_some() && verdict.projection_preserved {
                    verdict.projection_preserved = false;
                    verdict.preservation_blocker = Some(Obstruction::NotInjectiveOnNullspace);
                }
                range = plan.range;
                null = plan.null;
            }
        }
    }
    if verdict.extendable && pre.dim() != r {
        verdict.extendable = false;
        verdict.obstruction = Some(Obstruction::DimensionMismatch);
    }
    if !verdict.extendable {
        verdict.projection_preserved = false;
    }
    Ok(verdict)
}

/// Extends a certificate on [m, hi] down to [target, hi].
///
/// P(j) has range A(j)⁻¹(ℛP(j+1)) and as nullspace a complement of 𝒩A(j)
/// inside A(j)⁻¹(𝒩P(j+1)). The guaranteed constant is carried step by step
/// and dropped if it overflows.
pub fn extend_plus(
    seq: &CoefficientSequence,
    cert: &DichotomyCertificate,
    target: i64,
    tol: &Tolerances,
) -> Result<ExtensionOutcome> {
    let verdict = can_extend_plus(seq, cert, target, tol)?;
    if !verdict.extendable {
        return Err(Error::ExtensionObstructed {
            at: verdict.failing_step.unwrap_or(target),
            obstruction: verdict.obstruction.unwrap_or(Obstruction::DimensionMismatch),
        });
    }
    let (m, hi) = (cert.window.lo, cert.window.hi);
    let alpha = cert.form.alpha();
    let e = alpha.exp();
    let n = seq.n();
    let id = Matrix::identity(n, n);
    let mut family = cert.family.clone();
    let mut l = cert.form.l_equivalent();
    let mut steps = Vec::new();
    for j in (target..m).rev() {
        let a = seq.at(j)?;
        let plan = plus_step(a, &family.range_at(j + 1, tol)?, &family.nullspace_at(j + 1, tol)?, tol)?
            .ok_or(Error::ExtensionObstructed { at: j, obstruction: Obstruction::DimensionMismatch })?;
        if let Some(w) = &plan.rechosen {
            let current = DichotomyCertificate {
                family: family.clone(),
                form: Form::A { l, alpha },
                guaranteed: None,
                window: Window::new(j + 1, hi)?,
            };
            let changed = change_complement_plus(seq, &current, w, tol)?;
            l = changed.guaranteed.map_or(l, |g| g.l_equivalent());
            family = changed.family;
        }
        let p0 = make_projection(&plan.range, &plan.null, tol)?;
        let p1 = family.at(j + 1)?.clone();
        let (inv, inv_q) = nullspace_inverse_norms(a, &p0, &p1, tol)
            .map_err(|_| Error::ExtensionObstructed { at: j, obstruction: Obstruction::NotInjectiveOnNullspace })?;
        let (na, np) = (norm2(a), norm2(&p0));
        let k1 = l.max(l * na * e).max(na * np * e).max(np);
        let k2 = l.max(inv * l * e).max(inv_q * e).max(norm2(&(&id - &p0)));
        l = k1.max(k2);
        let widened = lower_to(family.interval(), j);
        family = family.with_interval(widened);
        family.insert_entry(j, p0, tol)?;
        steps.push(ExtensionStep { j, l, complement_rechosen: plan.rechosen.is_some() });
    }
    let window = Window::new(target, hi)?;
    let mut certificate = estimate_constants(seq, &family, window, Some(alpha), &EstimateConfig::default(), tol)?;
    certificate.guaranteed = l.is_finite().then_some(Form::A { l, alpha });
    Ok(ExtensionOutcome { certificate, verdict, steps })
}

/// Decides whether a certificate on [lo, m] extends up to `target`.
pub fn can_extend_minus(
    seq: &CoefficientSequence,
    cert: &DichotomyCertificate,
    target: i64,
    tol: &Tolerances,
) -> Result<ExtensionVerdict> {
    proper_target(cert, target, false)?;
    let m = cert.window.hi;
    let r = cert.rank();
    let phi = seq.transition(target, m)?;
    let null = cert.family.nullspace_at(m, tol)?;
    let injective = |a: &Matrix, s: &Subspace| s.dim() == 0 || min_singular(&(a * s.basis())) > tol.rank * norm2(a).max(1.0);
    let mut failing_step = None;
    if !injective(&phi, &null) {
        let mut nj = null.clone();
        for j in m..target {
            let a = seq.at(j)?;
            if !injective(a, &nj) {
                failing_step = Some(j);
                break;
            }
            nj = nj.image(a, tol)?;
        }
        let failing_step = failing_step.or(Some(m));
        return Ok(ExtensionVerdict {
            extendable: false,
            preimage_dim: None,
            rank: r,
            obstruction: Some(Obstruction::NotInjectiveOnNullspace),
            failing_step,
            projection_preserved: false,
            preservation_blocker: None,
        });
    }
    let preserved = cert.family.range_at(m, tol)?.contains(&kernel_of(&phi, tol), tol);
    Ok(ExtensionVerdict {
        extendable: true,
        preimage_dim: None,
        rank: r,
        obstruction: None,
        failing_step: None,
        projection_preserved: preserved,
        preservation_blocker: (!preserved).then_some(Obstruction::KernelNotInStable),
    })
}

/// Extends a certificate on [lo, m] up to [lo, target].
///
/// 𝒩P(j+1) = A(j)𝒩P(j) and ℛP(j+1) = A(j)ℛP(j) ⊕ W with W orthogonal to
/// both images. Whenever the kernel of the remaining transition would leave
/// ℛP, the range is re-chosen to contain it.
pub fn extend_minus(
    seq: &CoefficientSequence,
    cert: &DichotomyCertificate,
    target: i64,
    tol: &Tolerances,
) -> Result<ExtensionOutcome> {
    let verdict = can_extend_minus(seq, cert, target, tol)?;
    if !verdict.extendable {
        return Err(Error::ExtensionObstructed {
            at: verdict.failing_step.unwrap_or(cert.window.hi),
            obstruction: Obstruction::NotInjectiveOnNullspace,
        });
    }
    let (lo, m) = (cert.window.lo, cert.window.hi);
    let alpha = cert.form.alpha();
    let e = alpha.exp();
    let n = seq.n();
    let id = Matrix::identity(n, n);
    let mut family = cert.family.clone();
    let mut l = cert.form.l_equivalent();
    let mut steps = Vec::new();
    if !verdict.projection_preserved {
        let ker = kernel_of(&seq.transition(target, m)?, tol);
        let w = complement(&family.nullspace_at(m, tol)?, None, Some(&ker), tol)?;
        let changed = change_complement_minus(seq, cert, &w, tol)?;
        l = changed.guaranteed.map_or(l, |g| g.l_equivalent());
        family = changed.family;
        steps.push(ExtensionStep { j: m, l, complement_rechosen: true });
    }
    for j in m..target {
        let a = seq.at(j)?;
        let u = family.nullspace_at(j, tol)?.image(a, tol)?;
        let v = family.range_at(j, tol)?.image(a, tol)?;
        let ker = if j + 1 < target { kernel_of(&seq.transition(target, j + 1)?, tol) } else { Subspace::zero(n) };
        let mut range = complement(&u, None, Some(&v), tol)?;
        let rechosen = !range.contains(&ker, tol);
        if rechosen {
            range = complement(&u, None, Some(&v.sum(&ker, tol)), tol)?;
        }
        let p1 = make_projection(&range, &u, tol)?;
        let p0 = family.at(j)?.clone();
        let (inv, _) = nullspace_inverse_norms(a, &p0, &p1, tol)
            .map_err(|_| Error::ExtensionObstructed { at: j, obstruction: Obstruction::NotInjectiveOnNullspace })?;
        let (np, nq) = (norm2(&p1), norm2(&(&id - &p1)));
        l = l.max(np).max(nq).max(norm2(a) * l * e).max(l * e * inv * nq);
        let widened = upper_to(family.interval(), j + 1);
        family = family.with_interval(widened);
        family.insert_entry(j + 1, p1, tol)?;
        steps.push(ExtensionStep { j, l, complement_rechosen: rechosen });
    }
    let window = Window::new(lo, target)?;
    let mut certificate = estimate_constants(seq, &family, window, Some(alpha), &EstimateConfig::default(), tol)?;
    certificate.guaranteed = l.is_finite().then_some(Form::A { l, alpha });
    Ok(ExtensionOutcome { certificate, verdict, steps })
}

/// An equation on ℤ agreeing with the original on its interval.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub sequence: CoefficientSequence,
    pub certificate: DichotomyCertificate,
    /// e^{−α}P(a) + e^{α}(I − P(a)), used below a.
    pub below: Option<Matrix>,
    /// e^{−α}P(b) + e^{α}(I − P(b)), used from b on.
    pub above: Option<Matrix>,
    /// Largest |𝒜P(a) − P(a)𝒜|, |ℬP(b) − P(b)ℬ|.
    pub commute_residual: f64,
}

/// Embeds a dichotomy on the interval of its family into one on ℤ with the
/// same constants.
pub fn embed_in_z(seq: &CoefficientSequence, cert: &DichotomyCertificate, tol: &Tolerances) -> Result<Embedding> {
    let n = seq.n();
    let id = Matrix::identity(n, n);
    let alpha = cert.form.alpha();
    let block = |p: &Matrix| p * (-alpha).exp() + (&id - p) * alpha.exp();
    let interval = cert.family.interval();
    let (lower, upper) = (interval.lower(), interval.upper());
    let keys = seq.explicit();
    let lo = lower.unwrap_or_else(|| keys.keys().next().map_or(cert.window.lo, |&k| k.min(cert.window.lo)));
    let hi = upper.map_or_else(|| keys.keys().next_back().map_or(cert.window.hi, |&k| k.max(cert.window.hi)), |b| b - 1);

    let pa = lower.map(|a| cert.family.at(a).cloned()).transpose()?;
    let pb = upper.map(|b| cert.family.at(b).cloned()).transpose()?;
    let below = pa.as_ref().map(block);
    let above = pb.as_ref().map(block);
    let mut commute_residual: f64 = 0.0;
    for (p, x) in pa.iter().zip(below.iter()).chain(pb.iter().zip(above.iter())) {
        commute_residual = commute_residual.max(norm2(&(x * p - p * x)));
    }

    let mut sequence = CoefficientSequence::new(n, Interval::Whole)?;
    for k in lo..=hi {
        sequence = sequence.with_matrix(k, seq.at(k)?.clone())?;
    }
    let tail = |m: &Option<Matrix>, orig: &TailRule| m.clone().map_or_else(|| orig.clone(), TailRule::Constant);
    sequence = sequence.with_tails(tail(&below, seq.below()), tail(&above, seq.above()))?;

    let last = upper.unwrap_or(hi);
    let entries = (lo..=last).map(|k| Ok((k, cert.family.at(k)?.clone()))).collect::<Result<_>>()?;
    let (fb, fa) = cert.family.tails();
    let family = ProjectionFamily::from_entries(Interval::Whole, entries, tol)?
        .with_tails(pa.or(fb.cloned()), pb.or(fa.cloned()), tol)?;
    let certificate = DichotomyCertificate { family, form: cert.form, guaranteed: cert.guaranteed, window: cert.window };
    Ok(Embedding { sequence, certificate, below, above, commute_residual })
}
