//! Projection surgery: changing the complement, re-basing at an interior point,
//! gluing half-line dichotomies and non-uniqueness witnesses.
//!
//! Half-line certificates are anchored at an end of their window: a forward
//! (plus) certificate on [lo, hi] treats lo as the base point, a backward
//! (minus) certificate treats hi as the base point.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dichotomy::{estimate_constants, DichotomyCertificate, EstimateConfig, Form, ProjectionFamily};
use crate::error::{Error, Result};
use crate::linalg::{complement, kernel_of, make_projection, norm2, preimage, subspace_distance, Matrix, Subspace, Tolerances};
use crate::system::{CoefficientSequence, Interval, Window};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plus,
    Minus,
}

fn ensure_complement(a: &Subspace, b: &Subspace, tol: &Tolerances) -> Result<()> {
    let n = a.ambient_dim();
    if b.ambient_dim() != n {
        return Err(Error::DimensionMismatch("complement lives in a different space".into()));
    }
    if a.dim() + b.dim() != n || a.sum(b, tol).dim() != n {
        return Err(Error::NotAComplement(format!(
            "subspaces of dimensions {} and {} do not split R^{n}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

fn finish(
    seq: &CoefficientSequence,
    family: ProjectionFamily,
    window: Window,
    alpha: f64,
    guaranteed: Form,
    tol: &Tolerances,
) -> Result<DichotomyCertificate> {
    let mut cert = estimate_constants(seq, &family, window, Some(alpha), &EstimateConfig::default(), tol)?;
    cert.guaranteed = Some(guaranteed);
    Ok(cert)
}

/// Keeps ℛP(k) and replaces the nullspace at the base point by `w`.
pub fn change_complement_plus(
    seq: &CoefficientSequence,
    cert: &DichotomyCertificate,
    w: &Subspace,
    tol: &Tolerances,
) -> Result<DichotomyCertificate> {
    let win = cert.window;
    let n = seq.n();
    let r = cert.rank();
    ensure_complement(&cert.family.range_at(win.lo, tol)?, w, tol)?;
    let mut wk = w.clone();
    let mut entries = BTreeMap::new();
    for k in win.iter() {
        if k > win.lo {
            wk = wk.image(seq.at(k - 1)?, tol)?;
            if wk.dim() != n - r {
                return Err(Error::NotAComplement(format!("transported complement collapsed at k = {k}")));
            }
        }
        entries.insert(k, make_projection(&cert.family.range_at(k, tol)?, &wk, tol)?);
    }
    let q0 = norm2(&entries[&win.lo]);
    let family = ProjectionFamily::from_entries(cert.family.interval(), entries, tol)?;
    let Form::B { m, k, alpha } = cert.form.to_b() else { unreachable!() };
    let m1 = m + k * k * m * q0;
    let guaranteed = Form::B { m: 1.0 + m1, k: k * m * (1.0 + m1), alpha };
    finish(seq, family, win, alpha, guaranteed, tol)
}

/// Keeps 𝒩P(k) and replaces the range at the base point by `w`.
pub fn change_complement_minus(
    seq: &CoefficientSequence,
    cert: &DichotomyCertificate,
    w: &Subspace,
    tol: &Tolerances,
) -> Result<DichotomyCertificate> {
    let win = cert.window;
    let r = cert.rank();
    ensure_complement(w, &cert.family.nullspace_at(win.hi, tol)?, tol)?;
    let mut wk = w.clone();
    let mut entries = BTreeMap::new();
    for k in win.iter().rev() {
        if k < win.hi {
            wk = preimage(seq.at(k)?, &wk, tol)?;
            if wk.dim() != r {
                return Err(Error::NotAComplement(format!("pulled-back range has wrong dimension at k = {k}")));
            }
        }
        entries.insert(k, make_projection(&wk, &cert.family.nullspace_at(k, tol)?, tol)?);
    }
    let d = norm2(&(cert.family.at(win.hi)? - &entries[&win.hi]));
    let family = ProjectionFamily::from_entries(cert.family.interval(), entries, tol)?;
    let Form::B { m, k, alpha } = cert.form.to_b() else { unreachable!() };
    let guaranteed = Form::B { m: m + k * k * m * d, k: k * m * (1.0 + k * d), alpha };
    finish(seq, family, win, alpha, guaranteed, tol)
}

/// Prescribes the complementary subspace at an interior point m.
///
/// Plus side: 𝒩Q(m) = `w`, which must lie in the range of the transition from
/// the base point to m. Minus side: ℛQ(m) = `w`, which must contain the
/// kernel of the transition from m to the base point.
pub fn rebase_at_m(
    seq: &CoefficientSequence,
    cert: &DichotomyCertificate,
    m: i64,
    w: &Subspace,
    side: Side,
    tol: &Tolerances,
) -> Result<DichotomyCertificate> {
    let win = cert.window;
    if !win.contains(m) {
        return Err(Error::OutOfRange { k: m, what: format!("certificate window {win}") });
    }
    match side {
        Side::Plus => {
            ensure_complement(&cert.family.range_at(m, tol)?, w, tol)?;
            let v = plus_base_complement(seq, win.lo, m, w, tol)?;
            change_complement_plus(seq, cert, &v, tol)
        }
        Side::Minus => {
            ensure_complement(w, &cert.family.nullspace_at(m, tol)?, tol)?;
            let phi = seq.transition(win.hi, m)?;
            if !w.contains(&kernel_of(&phi, tol), tol) {
                return Err(Error::ComplementConstraintViolated);
            }
            let x = w.image(&phi, tol)?;
            let v = complement(&cert.family.nullspace_at(win.hi, tol)?, None, Some(&x), tol)
                .map_err(|_| Error::NotAComplement("image of the complement meets the unstable subspace".into()))?;
            change_complement_minus(seq, cert, &v, tol)
        }
    }
}

/// V with V ⊕ 𝒩Φ(m,base) = Φ(m,base)⁻¹(W).
fn plus_base_complement(seq: &CoefficientSequence, base: i64, m: i64, w: &Subspace, tol: &Tolerances) -> Result<Subspace> {
    let phi = seq.transition(m, base)?;
    let pre = preimage(&phi, w, tol)?;
    let ker = kernel_of(&phi, tol);
    let v = complement(&ker, Some(&pre), None, tol)?;
    // Every admissible nullspace at m is Φ(m,base) of one at the base point.
    if v.dim() != w.dim() {
        return Err(Error::ComplementConstraintViolated);
    }
    Ok(v)
}

fn joined_interval(minus: Interval, plus: Interval) -> Interval {
    match (minus.lower(), plus.upper()) {
        (Some(a), Some(b)) => Interval::Finite { a, b },
        (Some(a), None) => Interval::HalfPlus { a },
        (None, Some(b)) => Interval::HalfMinus { b },
        (None, None) => Interval::Whole,
    }
}

/// Joins a forward certificate starting at j with a backward one ending at j.
pub fn glue_half_lines(
    seq: &CoefficientSequence,
    plus: &DichotomyCertificate,
    minus: &DichotomyCertificate,
    tol: &Tolerances,
) -> Result<DichotomyCertificate> {
    let j = plus.window.lo;
    if minus.window.hi != j {
        return Err(Error::InvalidInput(format!(
            "forward window starts at {j} but backward window ends at {}",
            minus.window.hi
        )));
    }
    if plus.rank() != minus.rank() {
        return Err(Error::RankMismatch(plus.rank(), minus.rank()));
    }
    let stable = plus.family.range_at(j, tol)?;
    let unstable = minus.family.nullspace_at(j, tol)?;
    if stable.sum(&unstable, tol).dim() != seq.n() {
        return Err(Error::TransversalityFailure);
    }
    let p_new = change_complement_plus(seq, plus, &unstable, tol)?;
    let m_new = change_complement_minus(seq, minus, &stable, tol)?;
    let mut entries: BTreeMap<i64, Matrix> = m_new.family.entries().clone();
    entries.extend(p_new.family.entries().iter().map(|(k, p)| (*k, p.clone())));
    let interval = joined_interval(minus.family.interval(), plus.family.interval());
    let family = ProjectionFamily::from_entries(interval, entries, tol)?;
    let window = Window::new(minus.window.lo, plus.window.hi)?;
    let l = p_new.form.l_equivalent().max(m_new.form.l_equivalent());
    let alpha = p_new.form.alpha().min(m_new.form.alpha());
    finish(seq, family, window, alpha, Form::B { m: l, k: l * l, alpha }, tol)
}

/// Two certificates that agree at m but differ on the other side of m.
#[derive(Clone, Debug, PartialEq)]
pub enum WitnessOutcome {
    Pair {
        first: Box<DichotomyCertificate>,
        second: Box<DichotomyCertificate>,
        /// Index where the complementary subspaces differ most.
        differing_at: i64,
        gap: f64,
    },
    /// The transition is invertible, so the projection is unique.
    NoWitness,
}

pub fn nonuniqueness_witness(
    seq: &CoefficientSequence,
    cert: &DichotomyCertificate,
    m: i64,
    side: Side,
    tol: &Tolerances,
) -> Result<WitnessOutcome> {
    let win = cert.window;
    if !win.contains(m) {
        return Err(Error::OutOfRange { k: m, what: format!("certificate window {win}") });
    }
    let (first, second) = match side {
        Side::Plus => {
            let phi = seq.transition(m, win.lo)?;
            let ker = kernel_of(&phi, tol);
            let v1 = plus_base_complement(seq, win.lo, m, &cert.family.nullspace_at(m, tol)?, tol)?;
            if ker.dim() == 0 || v1.dim() == 0 {
                return Ok(WitnessOutcome::NoWitness);
            }
            let v2 = tilt(&v1, 0, ker.basis().column(0).into_owned(), tol);
            (change_complement_plus(seq, cert, &v1, tol)?, change_complement_plus(seq, cert, &v2, tol)?)
        }
        Side::Minus => {
            let phi = seq.transition(win.hi, m)?;
            let ker = kernel_of(&phi, tol);
            let unstable = cert.family.nullspace_at(win.hi, tol)?;
            let x = cert.family.range_at(m, tol)?.image(&phi, tol)?;
            let v1 = complement(&unstable, None, Some(&x), tol)?;
            if ker.dim() == 0 || v1.dim() == x.dim() || unstable.dim() == 0 {
                return Ok(WitnessOutcome::NoWitness);
            }
            // Rotate a completion direction, leaving Φ(base, m)ℛP(m) in place.
            let fill = complement(&x, Some(&v1), None, tol)?;
            let mut basis = x.basis().clone().resize_horizontally(x.dim() + fill.dim(), 0.0);
            basis.columns_mut(x.dim(), fill.dim()).copy_from(fill.basis());
            let ordered = Subspace::from_orthonormal(basis, tol)?;
            let v2 = tilt(&ordered, x.dim(), unstable.basis().column(0).into_owned(), tol);
            (change_complement_minus(seq, cert, &v1, tol)?, change_complement_minus(seq, cert, &v2, tol)?)
        }
    };
    let mut best = (win.lo, 0.0);
    for k in win.iter() {
        let (a, b) = match side {
            Side::Plus => (first.family.nullspace_at(k, tol)?, second.family.nullspace_at(k, tol)?),
            Side::Minus => (first.family.range_at(k, tol)?, second.family.range_at(k, tol)?),
        };
        let g = subspace_distance(&a, &b)?;
        if g > best.1 {
            best = (k, g);
        }
    }
    Ok(WitnessOutcome::Pair { first: Box::new(first), second: Box::new(second), differing_at: best.0, gap: best.1 })
}

/// Replaces basis vector `i` of `s` by its 45° rotation toward `u`.
fn tilt(s: &Subspace, i: usize, u: crate::linalg::Vector, tol: &Tolerances) -> Subspace {
    let mut b = s.basis().clone();
    let v = b.column(i).into_owned();
    let u_perp = &u - &v * v.dot(&u);
    let dir = if u_perp.norm() > tol.rank { u_perp.normalize() } else { u.normalize() };
    b.set_column(i, &((v + dir) * std::f64::consts::FRAC_1_SQRT_2));
    Subspace::span(&b, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dichotomy::verify_certificate;
    use crate::system::fixture;
    use approx::assert_abs_diff_eq;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn cert_for(label: &str, lo: i64, hi: i64) -> (CoefficientSequence, DichotomyCertificate) {
        let f = fixture(label).unwrap();
        let fam = f.known_projection.unwrap();
        let c = estimate_constants(&f.sequence, &fam, Window::new(lo, hi).unwrap(), Some(2f64.ln()), &EstimateConfig::default(), &tol())
            .unwrap();
        (f.sequence, c)
    }

    fn line(x: f64, y: f64) -> Subspace {
        Subspace::span(&Matrix::from_column_slice(2, 1, &[x, y]), &tol())
    }

    #[test]
    fn plus_complement_change() {
        let (seq, cert) = cert_for("S1", 0, 30);
        let same = change_complement_plus(&seq, &cert, &Subspace::axes(2, &[1]), &tol()).unwrap();
        assert_eq!(same.family.at(7).unwrap(), cert.family.at(7).unwrap());
        let q = change_complement_plus(&seq, &cert, &line(1.0, 1.0), &tol()).unwrap();
        for k in 0..=30 {
            let d = norm2(&(q.family.at(k).unwrap() - cert.family.at(k).unwrap()));
            assert_abs_diff_eq!(d / 4f64.powi(-(k as i32)), 1.0, epsilon = 1e-12);
        }
        assert!(verify_certificate(&seq, &q, q.window, &tol()).unwrap().passed);
        let g = q.guaranteed.unwrap();
        assert!(verify_certificate(&seq, &DichotomyCertificate { form: g, ..q.clone() }, q.window, &tol()).unwrap().passed);
        assert!(change_complement_plus(&seq, &cert, &Subspace::axes(2, &[0]), &tol()).is_err());
    }

    #[test]
    fn rank_zero_complement() {
        let seq = CoefficientSequence::constant(Interval::Whole, Matrix::identity(2, 2) * 2.0).unwrap();
        let fam = ProjectionFamily::constant(Interval::Whole, Matrix::zeros(2, 2), &tol()).unwrap();
        let cert = estimate_constants(&seq, &fam, Window::new(0, 10).unwrap(), Some(0.5), &EstimateConfig::default(), &tol()).unwrap();
        let q = change_complement_plus(&seq, &cert, &Subspace::full(2), &tol()).unwrap();
        assert_eq!(q.family.at(4).unwrap(), &Matrix::zeros(2, 2));
    }

    #[test]
    fn minus_complement_change() {
        let (seq, cert) = cert_for("S3", -30, 0);
        let q = change_complement_minus(&seq, &cert, &Subspace::axes(2, &[1]), &tol()).unwrap();
        assert_eq!(q.family.at(-3).unwrap(), cert.family.at(-3).unwrap());

        let tail = CoefficientSequence::constant(Interval::HalfMinus { b: 0 }, Matrix::from_diagonal(&crate::Vector::from_vec(vec![2.0, 0.5]))).unwrap();
        let fam = ProjectionFamily::constant(Interval::HalfMinus { b: 0 }, Matrix::from_diagonal(&crate::Vector::from_vec(vec![0.0, 1.0])), &tol()).unwrap();
        let cert = estimate_constants(&tail, &fam, Window::new(-20, 0).unwrap(), Some(2f64.ln()), &EstimateConfig::default(), &tol()).unwrap();
        let q = change_complement_minus(&tail, &cert, &line(1.0, 1.0), &tol()).unwrap();
        for k in -20..=0 {
            let r = q.family.range_at(k, &tol()).unwrap();
            let expect = line(4f64.powi(k as i32), 1.0);
            assert!(subspace_distance(&r, &expect).unwrap() < 1e-14);
        }
        assert!(verify_certificate(&tail, &q, q.window, &tol()).unwrap().passed);
        assert!(change_complement_minus(&tail, &cert, &Subspace::axes(2, &[0]), &tol()).is_err());
    }

    #[test]
    fn rebase_examples() {
        let (seq, cert) = cert_for("S1", 0, 20);
        let a = rebase_at_m(&seq, &cert, 0, &line(1.0, 1.0), Side::Plus, &tol()).unwrap();
        let b = change_complement_plus(&seq, &cert, &line(1.0, 1.0), &tol()).unwrap();
        assert_eq!(a.family, b.family);

        let (s2b, c2b) = cert_for("S2b", 0, 20);
        let q = rebase_at_m(&s2b, &c2b, 1, &Subspace::axes(2, &[1]), Side::Plus, &tol()).unwrap();
        assert_abs_diff_eq!(q.family.at(1).unwrap(), &Matrix::from_diagonal(&crate::Vector::from_vec(vec![1.0, 0.0])), epsilon = 1e-14);
        assert_eq!(
            rebase_at_m(&s2b, &c2b, 3, &line(1.0, 1.0), Side::Plus, &tol()),
            Err(Error::ComplementConstraintViolated)
        );
        let q = rebase_at_m(&seq, &cert, 3, &line(1.0, 1.0), Side::Plus, &tol()).unwrap();
        let n3 = q.family.nullspace_at(3, &tol()).unwrap();
        assert!(subspace_distance(&n3, &line(1.0, 1.0)).unwrap() < 1e-12);

        let (s3, c3) = cert_for("S3", -20, 0);
        assert!(rebase_at_m(&s3, &c3, -1, &Subspace::axes(2, &[1]), Side::Minus, &tol()).is_ok());
        assert_eq!(
            rebase_at_m(&s3, &c3, -1, &line(1.0, 1.0), Side::Minus, &tol()),
            Err(Error::ComplementConstraintViolated)
        );
    }

    #[test]
    fn gluing() {
        let (seq, whole) = cert_for("S1", -30, 30);
        let (_, plus) = cert_for("S1", 0, 30);
        let (_, minus) = cert_for("S1", -30, 0);
        let g = glue_half_lines(&seq, &plus, &minus, &tol()).unwrap();
        assert_abs_diff_eq!(g.family.at(0).unwrap(), whole.family.at(0).unwrap(), epsilon = 1e-14);
        assert_abs_diff_eq!(g.form.l_equivalent(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.guaranteed.unwrap().l_equivalent(), 1.0, epsilon = 1e-12);

        let other = ProjectionFamily::constant(Interval::Whole, Matrix::from_diagonal(&crate::Vector::from_vec(vec![0.0, 1.0])), &tol()).unwrap();
        let bad_minus = DichotomyCertificate { family: other, ..minus.clone() };
        assert_eq!(glue_half_lines(&seq, &plus, &bad_minus, &tol()), Err(Error::TransversalityFailure));
    }

    #[test]
    fn witnesses() {
        let (s2b, c2b) = cert_for("S2b", 0, 30);
        let WitnessOutcome::Pair { first, second, differing_at, gap } = nonuniqueness_witness(&s2b, &c2b, 1, Side::Plus, &tol()).unwrap() else {
            panic!("expected a witness")
        };
        assert_eq!(differing_at, 0);
        assert!(gap > 0.1);
        assert!(norm2(&(first.family.at(1).unwrap() - second.family.at(1).unwrap())) < 1e-12);

        let (s1, c1) = cert_for("S1", 0, 10);
        assert_eq!(nonuniqueness_witness(&s1, &c1, 3, Side::Plus, &tol()).unwrap(), WitnessOutcome::NoWitness);

        let (s3, c3) = cert_for("S3", -20, 0);
        let WitnessOutcome::Pair { first, second, differing_at, .. } = nonuniqueness_witness(&s3, &c3, -1, Side::Minus, &tol()).unwrap() else {
            panic!("expected a witness")
        };
        assert_eq!(differing_at, 0);
        assert!(norm2(&(first.family.at(-1).unwrap() - second.family.at(-1).unwrap())) < 1e-12);
    }
}
