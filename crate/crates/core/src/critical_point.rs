//! Per-`t` feasibility maxima of the shift and the resulting estimate of the
//! critical point.
//!
//! Since `R = P + c^2 Q` with `P >= 0`, the shifts passing a scan form the
//! interval `c^2 <= min { -P/Q : Q < 0 }`, found in a single pass.

use std::io::Write;

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::Serialize;

use crate::coefficients::{Mode, ScaledKernel};
use crate::error::{Error, Result};
use crate::id_analyzer::{cutoff_set, validate_ladder};
use crate::model::{case_constants, normalize, CanonicalProblem, GaussianProblem, ShiftCase};
use crate::rational::{
    format_f64, format_rational, int, serde_rational, serde_rational_or_inf, to_f64,
};

/// Default relative spread below which the bracket counts as converged.
pub const DEFAULT_DRIFT_TOL: f64 = 0.05;

/// Minimum ladder length for an estimate.
pub const MIN_RUNGS: usize = 3;

/// Largest `c^2` keeping every cutoff coefficient nonnegative at one `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeasibleMax {
    /// `None` when no cutoff coefficient has `Q < 0`.
    #[serde(with = "serde_rational_or_inf")]
    pub c_star_sq: Option<BigRational>,
    /// First cell (in `(j, k)` order) attaining the minimum ratio.
    pub argmin: Option<(u64, u64)>,
}

struct Segment {
    best_hi: f64,
    exact: Vec<(u64, u64)>,
}

/// Float bounds on `-P/Q` for a cell whose `Q` sign is trusted.
fn ratio_bounds(p: f64, p_env: f64, q: f64, q_env: f64) -> Option<(f64, f64)> {
    let delta = 4.0 * crate::coefficients::CONFIRM_REL * (q_env / q.abs() + p_env / p);
    if delta.is_nan() || delta >= 0.5 {
        return None;
    }
    let r = -p / q;
    Some((r * (1.0 - delta), r * (1.0 + delta)))
}

pub fn max_feasible_csq(
    canon: &CanonicalProblem,
    t: &BigRational,
    b: &BigRational,
    mode: Mode,
) -> Result<FeasibleMax> {
    let cutoff = cutoff_set(t, b)?;
    let kernel = ScaledKernel::for_problem(canon, t)?;
    let mut best: Option<(BigRational, (u64, u64))> = None;
    let mut consider = |cells: Vec<(u64, u64)>| -> Result<()> {
        for (j, k) in cells {
            let e = kernel.exact(j, k)?;
            if !e.q.is_negative() {
                continue;
            }
            let r = -e.p / e.q;
            if best.as_ref().is_none_or(|(b, _)| &r < b) {
                best = Some((r, (j, k)));
            }
        }
        Ok(())
    };
    match mode {
        Mode::Exact => {
            let segs =
                cutoff.par_segments(|cells| -> Result<Option<(BigRational, (u64, u64))>> {
                    let mut local: Option<(BigRational, (u64, u64))> = None;
                    for (j, k) in cells {
                        let e = kernel.exact(j, k)?;
                        if e.q.is_negative() {
                            let r = -e.p / e.q;
                            if local.as_ref().is_none_or(|(b, _)| &r < b) {
                                local = Some((r, (j, k)));
                            }
                        }
                    }
                    Ok(local)
                })?;
            for (r, idx) in segs.into_iter().flatten() {
                if best.as_ref().is_none_or(|(b, _)| &r < b) {
                    best = Some((r, idx));
                }
            }
        }
        Mode::Float => {
            // Pass 1: smallest upper bound, and cells needing exact treatment.
            let segs = cutoff.par_segments(|cells| -> Result<Segment> {
                let mut s = Segment {
                    best_hi: f64::INFINITY,
                    exact: Vec::new(),
                };
                for (j, k) in cells {
                    let f = kernel.float(j, k)?;
                    if f.q_doubtful() {
                        s.exact.push((j, k));
                    } else if f.q < 0.0 {
                        match ratio_bounds(f.p, f.p_env, f.q, f.q_env) {
                            Some((_, hi)) => s.best_hi = s.best_hi.min(hi),
                            None => s.exact.push((j, k)),
                        }
                    }
                }
                Ok(s)
            })?;
            let upper = segs.iter().map(|s| s.best_hi).fold(f64::INFINITY, f64::min);
            // Pass 2: every cell whose lower bound does not exceed it.
            let candidates = cutoff.par_segments(|cells| -> Result<Vec<(u64, u64)>> {
                let mut out = Vec::new();
                for (j, k) in cells {
                    let f = kernel.float(j, k)?;
                    if !f.q_doubtful() && f.q < 0.0 {
                        if let Some((lo, _)) = ratio_bounds(f.p, f.p_env, f.q, f.q_env) {
                            if lo <= upper {
                                out.push((j, k));
                            }
                        }
                    }
                }
                Ok(out)
            })?;
            let mut cells: Vec<(u64, u64)> = candidates.into_iter().flatten().collect();
            cells.extend(segs.into_iter().flat_map(|s| s.exact));
            cells.sort_unstable();
            consider(cells)?;
        }
    }
    Ok(match best {
        Some((r, idx)) => FeasibleMax {
            c_star_sq: Some(r),
            argmin: Some(idx),
        },
        None => FeasibleMax {
            c_star_sq: None,
            argmin: None,
        },
    })
}

/// Reference value of `c^2` below which the `p = 0` term of every interior
/// coefficient is eventually positive: `d / (2 w)` with `w` equal to `zeta`,
/// `zeta_tilde` or `b` by case. `None` when `w <= 0`.
pub fn remark51_lower(canon: &CanonicalProblem) -> Result<Option<BigRational>> {
    let cc = case_constants(canon)?;
    let w = match canon.case_label {
        ShiftCase::EqualShift => cc.zeta,
        ShiftCase::OppositeShift => cc.zeta_tilde,
        ShiftCase::SingleShift => canon.b.clone(),
    };
    Ok(w.is_positive().then(|| &canon.d / (int(2) * w)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReportStatus {
    Estimated,
    IDForAllAlpha,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerT {
    #[serde(with = "serde_rational")]
    pub t: BigRational,
    #[serde(with = "serde_rational_or_inf")]
    pub c_star_sq: Option<BigRational>,
    /// `sqrt(c_star_sq / kappa_sq)`, in the caller's shift units.
    #[serde(serialize_with = "crate::rational::serialize_f64")]
    pub alpha_star: f64,
    pub argmin: Option<(u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPointReport {
    pub status: ReportStatus,
    pub case_label: Option<ShiftCase>,
    #[serde(with = "serde_rational")]
    pub kappa_sq: BigRational,
    #[serde(serialize_with = "crate::rational::serialize_rationals")]
    pub ladder: Vec<BigRational>,
    #[serde(rename = "B", with = "serde_rational")]
    pub b: BigRational,
    pub mode: Mode,
    pub per_t: Vec<PerT>,
    /// `[min, max]` of `alpha_star` over the top three rungs.
    #[serde(serialize_with = "serialize_bracket")]
    pub bracket: Option<(f64, f64)>,
    /// `(max - min) / max` over the top three rungs.
    #[serde(serialize_with = "crate::rational::serialize_f64")]
    pub relative_spread: f64,
    pub drift_tol: f64,
    pub converged: bool,
    /// Small-shift reference for the `p = 0` term, in `c^2` units; not a
    /// bound on the critical point.
    #[serde(with = "serde_rational_or_inf")]
    pub remark51_lower: Option<BigRational>,
}

fn serialize_bracket<S: serde::Serializer>(
    b: &Option<(f64, f64)>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    match b {
        None => s.serialize_none(),
        Some((lo, hi)) => {
            let mut seq = s.serialize_seq(Some(2))?;
            for x in [lo, hi] {
                if x.is_finite() {
                    seq.serialize_element(x)?;
                } else {
                    seq.serialize_element(&format_f64(*x))?;
                }
            }
            seq.end()
        }
    }
}

fn alpha_star(c_star_sq: &Option<BigRational>, kappa_sq: &BigRational) -> f64 {
    match c_star_sq {
        Some(c) => to_f64(&(c / kappa_sq)).sqrt(),
        None => f64::INFINITY,
    }
}

pub fn estimate_critical_point(
    problem: &GaussianProblem,
    t_ladder: &[BigRational],
    b: &BigRational,
    drift_tol: f64,
    mode: Mode,
) -> Result<CriticalPointReport> {
    validate_ladder(t_ladder, MIN_RUNGS)?;
    if !b.is_positive() {
        return Err(Error::InvalidParameter("B must be positive".into()));
    }
    if !(drift_tol >= 0.0 && drift_tol.is_finite()) {
        return Err(Error::InvalidParameter(
            "drift tolerance must be a nonnegative number".into(),
        ));
    }
    let canon = normalize(problem)?;
    let mut report = CriticalPointReport {
        status: ReportStatus::Degenerate,
        case_label: Some(canon.case_label),
        kappa_sq: canon.kappa_sq.clone(),
        ladder: t_ladder.to_vec(),
        b: b.clone(),
        mode,
        per_t: Vec::new(),
        bracket: None,
        relative_spread: f64::NAN,
        drift_tol,
        converged: false,
        remark51_lower: None,
    };
    if canon.degenerate {
        return Ok(report);
    }
    report.remark51_lower = remark51_lower(&canon)?;
    if canon.all_alpha() {
        report.status = ReportStatus::IDForAllAlpha;
        return Ok(report);
    }
    report.status = ReportStatus::Estimated;
    for t in t_ladder {
        let fm = max_feasible_csq(&canon, t, b, mode)?;
        report.per_t.push(PerT {
            t: t.clone(),
            alpha_star: alpha_star(&fm.c_star_sq, &canon.kappa_sq),
            c_star_sq: fm.c_star_sq,
            argmin: fm.argmin,
        });
    }
    let top = &report.per_t[report.per_t.len() - MIN_RUNGS..];
    let lo = top
        .iter()
        .map(|p| p.alpha_star)
        .fold(f64::INFINITY, f64::min);
    let hi = top
        .iter()
        .map(|p| p.alpha_star)
        .fold(f64::NEG_INFINITY, f64::max);
    report.bracket = Some((lo, hi));
    report.relative_spread = if hi.is_finite() && hi > 0.0 {
        (hi - lo) / hi
    } else if lo == hi {
        0.0
    } else {
        f64::INFINITY
    };
    report.converged = hi.is_finite() && report.relative_spread <= drift_tol;
    Ok(report)
}

impl CriticalPointReport {
    /// CSV rows `t,c_star_sq,alpha_star`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::InvalidParameter(format!("csv write failed: {e}"));
        w.write_record(["t", "c_star_sq", "alpha_star"])
            .map_err(err)?;
        for p in &self.per_t {
            let c = p
                .c_star_sq
                .as_ref()
                .map_or_else(|| "inf".to_string(), format_rational);
            w.write_record([format_rational(&p.t), c, format_f64(p.alpha_star)])
                .map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidParameter(format!("csv write failed: {e}")))
    }
}

/// `c^2` nudged just past `c_star_sq` by a relative `eps`; a zero bound moves
/// to `eps` itself.
pub fn just_above(c_star_sq: &BigRational, eps: &BigRational) -> BigRational {
    if c_star_sq.is_zero() {
        eps.clone()
    } else {
        c_star_sq * (int(1) + eps)
    }
}
