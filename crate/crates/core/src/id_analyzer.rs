//! Positivity scans of the log-Laplace coefficients over a finite cutoff,
//! tail diagnostics, and horizon-limited infinite-divisibility verdicts.

use std::cmp::Ordering;

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{Mode, ScaledKernel};
use crate::error::{Error, Result};
use crate::model::{normalize, CanonicalProblem, GaussianProblem};
use crate::rational::{int, serde_rational, to_f64};

/// Number of top ladder rungs a violation must persist over.
pub const PERSISTENCE_RUNGS: usize = 3;

/// Index set `{(j,k) : j,k >= 1, jk <= floor(L^2)}` with `L = B t ln t`,
/// plus the boundary rows `(j,0)`, `(0,k)` for `1 <= j,k <= ceil(L)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffSpec {
    #[serde(rename = "B", with = "serde_rational")]
    pub b: BigRational,
    #[serde(with = "serde_rational")]
    pub t: BigRational,
    /// `B t ln t`, evaluated in `f64`.
    pub radius: f64,
    /// Interior membership bound on `j * k`.
    pub interior_max_product: u64,
    /// `M_b`, the last boundary index kept.
    pub boundary_max: u64,
}

pub fn cutoff_set(t: &BigRational, b: &BigRational) -> Result<CutoffSpec> {
    if !b.is_positive() {
        return Err(Error::InvalidParameter("B must be positive".into()));
    }
    if t < &int(3) {
        return Err(Error::CutoffTooSmall);
    }
    let radius = to_f64(b) * to_f64(t) * crate::rational::ln(t);
    if !radius.is_finite() || radius * radius >= u64::MAX as f64 / 4.0 {
        return Err(Error::InvalidParameter("cutoff radius too large".into()));
    }
    Ok(CutoffSpec {
        b: b.clone(),
        t: t.clone(),
        radius,
        interior_max_product: (radius * radius).floor() as u64,
        boundary_max: radius.ceil() as u64,
    })
}

impl CutoffSpec {
    pub fn contains(&self, j: u64, k: u64) -> bool {
        match (j, k) {
            (0, 0) => false,
            (0, k) => k <= self.boundary_max,
            (j, 0) => j <= self.boundary_max,
            (j, k) => j
                .checked_mul(k)
                .is_some_and(|p| p <= self.interior_max_product),
        }
    }

    /// Number of indices, boundary rows included.
    pub fn len(&self) -> u64 {
        let n = self.interior_max_product;
        (1..=n).map(|j| n / j).sum::<u64>() + 2 * self.boundary_max
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Applies `f` to consecutive runs of cells in parallel and returns the
    /// results in lexicographic order of the runs: the column `(0, k)`, then
    /// each row `j` (its boundary cell first), then any boundary cells
    /// `(j, 0)` past the last interior row.
    pub fn par_segments<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut dyn Iterator<Item = (u64, u64)>) -> Result<T> + Sync,
    {
        let (n, mb) = (self.interior_max_product, self.boundary_max);
        let rows = n.max(mb);
        (0..rows as usize + 1)
            .into_par_iter()
            .map(|j| {
                let j = j as u64;
                if j == 0 {
                    return f(&mut (1..=mb).map(|k| (0, k)));
                }
                let boundary = (j <= mb).then_some((j, 0));
                let last = if j <= n { n / j } else { 0 };
                f(&mut boundary.into_iter().chain((1..=last).map(move |k| (j, k))))
            })
            .collect()
    }

    /// All indices in lexicographic order.
    pub fn indices(&self) -> Vec<(u64, u64)> {
        let mut out: Vec<(u64, u64)> = (1..=self.boundary_max).map(|k| (0, k)).collect();
        let n = self.interior_max_product;
        for j in 1..=n.max(self.boundary_max) {
            if j <= self.boundary_max {
                out.push((j, 0));
            }
            if j <= n {
                out.extend((1..=n / j).map(|k| (j, k)));
            }
        }
        out
    }
}

/// A strictly negative scaled coefficient.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub j: u64,
    pub k: u64,
    /// Scaled value `R_{jk} / (alpha^{j-1} beta^{k-1})`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "violations")]
pub enum ScanVerdict {
    AllNonnegative,
    /// Every violation in the cutoff, sorted by `(j, k)`.
    NegativeAt(Vec<Violation>),
}

impl ScanVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, ScanVerdict::AllNonnegative)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            ScanVerdict::AllNonnegative => &[],
            ScanVerdict::NegativeAt(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub verdict: ScanVerdict,
    pub cutoff: CutoffSpec,
    pub mode: Mode,
    pub cells: u64,
    /// Float values whose sign was settled exactly.
    pub confirmations: u64,
    /// The boundary rows are nonnegative for every index, not only up to
    /// `M_b`: their scaled values are `alpha/j + c^2 q` with `q` fixed, so this
    /// holds exactly when both boundary `q` values are nonnegative or `c = 0`.
    pub boundary_certified: bool,
}

struct RowScan {
    violations: Vec<Violation>,
    confirmations: u64,
}

fn scan_cells(
    kernel: &ScaledKernel,
    c_sq: &BigRational,
    c_sq_f: f64,
    mode: Mode,
    cells: &mut dyn Iterator<Item = (u64, u64)>,
) -> Result<RowScan> {
    let mut out = RowScan {
        violations: Vec::new(),
        confirmations: 0,
    };
    for (j, k) in cells {
        let r = kernel.r_confirmed(j, k, c_sq, c_sq_f, mode)?;
        if mode == Mode::Float && r.exact.is_some() {
            out.confirmations += 1;
        }
        if r.sign == Ordering::Less {
            out.violations.push(Violation {
                j,
                k,
                value: r.value,
            });
        }
    }
    Ok(out)
}

/// Checks the sign of every scaled `R_{jk}` in the cutoff at `t`.
pub fn scan_positivity(
    canon: &CanonicalProblem,
    c_sq: &BigRational,
    t: &BigRational,
    b: &BigRational,
    mode: Mode,
) -> Result<ScanReport> {
    if c_sq.is_negative() {
        return Err(Error::InvalidParameter("c^2 must be nonnegative".into()));
    }
    let cutoff = cutoff_set(t, b)?;
    let kernel = ScaledKernel::for_problem(canon, t)?;
    scan_with_kernel(&kernel, &cutoff, c_sq, mode)
}

pub(crate) fn scan_with_kernel(
    kernel: &ScaledKernel,
    cutoff: &CutoffSpec,
    c_sq: &BigRational,
    mode: Mode,
) -> Result<ScanReport> {
    let c_sq_f = to_f64(c_sq);
    let segments = cutoff.par_segments(|cells| scan_cells(kernel, c_sq, c_sq_f, mode, cells))?;
    let mut violations = Vec::new();
    let mut confirmations = 0;
    for r in segments {
        violations.extend(r.violations);
        confirmations += r.confirmations;
    }
    let boundary_certified = c_sq.is_zero()
        || (!kernel.boundary_row_q().is_negative() && !kernel.boundary_col_q().is_negative());
    let verdict = if violations.is_empty() {
        ScanVerdict::AllNonnegative
    } else {
        ScanVerdict::NegativeAt(violations)
    };
    Ok(ScanReport {
        verdict,
        cutoff: cutoff.clone(),
        mode,
        cells: cutoff.len(),
        confirmations,
        boundary_certified,
    })
}

/// Sum of `|R_{jk}|` (unscaled) over `cutoff(B_ext) \ cutoff(B)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailMass {
    #[serde(rename = "B", with = "serde_rational")]
    pub b: BigRational,
    #[serde(rename = "B_ext", with = "serde_rational")]
    pub b_ext: BigRational,
    #[serde(with = "serde_rational")]
    pub t: BigRational,
    pub cells: u64,
    /// The mass itself; may underflow to 0 when `log10_mass` is very negative.
    pub mass: f64,
    /// `log10` of the mass, `-inf` for an empty set.
    #[serde(serialize_with = "crate::rational::serialize_f64")]
    pub log10_mass: f64,
}

/// Running `ln(sum exp(x_i))`.
#[derive(Clone, Copy)]
struct LogSum {
    max: f64,
    scaled: f64,
}

impl LogSum {
    const EMPTY: LogSum = LogSum {
        max: f64::NEG_INFINITY,
        scaled: 0.0,
    };

    fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.scaled += (x - self.max).exp();
        }
    }

    fn merge(&mut self, other: LogSum) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            self.scaled = self.scaled * (self.max - other.max).exp() + other.scaled;
            self.max = other.max;
        } else {
            self.scaled += other.scaled * (other.max - self.max).exp();
        }
    }

    fn ln(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

pub fn tail_mass(
    canon: &CanonicalProblem,
    c_sq: &BigRational,
    t: &BigRational,
    b: &BigRational,
    b_ext: &BigRational,
) -> Result<TailMass> {
    if b_ext <= b {
        return Err(Error::InvalidParameter("B_ext must exceed B".into()));
    }
    let inner = cutoff_set(t, b)?;
    let outer = cutoff_set(t, b_ext)?;
    let kernel = ScaledKernel::for_problem(canon, t)?;
    let c_sq_f = to_f64(c_sq);
    let ln_abs_r = |j: u64, k: u64| -> Result<f64> {
        let v = kernel.float(j, k)?;
        let r = v.r(c_sq_f);
        let r = if r.is_finite() {
            r
        } else {
            let e = kernel.exact(j, k)?;
            to_f64(&(e.p + c_sq * e.q))
        };
        Ok(r.abs().ln() + kernel.ln_prefactor(j, k))
    };
    let (n_in, n_out) = (inner.interior_max_product, outer.interior_max_product);
    let rows: Vec<(LogSum, u64)> = (1..n_out as usize + 1)
        .into_par_iter()
        .map(|j| -> Result<(LogSum, u64)> {
            let j = j as u64;
            let mut acc = LogSum::EMPTY;
            let first = if j <= n_in { n_in / j + 1 } else { 1 };
            let last = n_out / j;
            for k in first..=last {
                acc.push(ln_abs_r(j, k)?);
            }
            Ok((acc, (last + 1).saturating_sub(first)))
        })
        .collect::<Result<_>>()?;
    let mut total = LogSum::EMPTY;
    let mut cells = 0;
    for (r, n) in rows {
        total.merge(r);
        cells += n;
    }
    for n in inner.boundary_max + 1..=outer.boundary_max {
        total.push(ln_abs_r(n, 0)?);
        total.push(ln_abs_r(0, n)?);
        cells += 2;
    }
    let ln_mass = total.ln();
    Ok(TailMass {
        b: b.clone(),
        b_ext: b_ext.clone(),
        t: t.clone(),
        cells,
        mass: ln_mass.exp(),
        log10_mass: ln_mass / std::f64::consts::LN_10,
    })
}

/// Outcome of [`id_verdict`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "verdict")]
pub enum Verdict {
    /// `det Gamma = 0`.
    Degenerate,
    /// The matrix condition for every shift multiple holds.
    IDForAllAlpha,
    /// Every ladder rung scanned nonnegative.
    IDCertifiedUpToHorizon,
    /// A violation at the top rung that persists over the top three rungs.
    NotIDWitness {
        j: u64,
        k: u64,
        #[serde(with = "serde_rational")]
        t: BigRational,
    },
    /// Some rung failed but the persistence check did not hold.
    Inconclusive,
}

/// Scan outcome at one ladder rung.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RungSummary {
    #[serde(with = "serde_rational")]
    pub t: BigRational,
    pub cells: u64,
    pub violation_count: u64,
    pub boundary_certified: bool,
}

/// Relative violation of the witness cell at one rung.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PersistencePoint {
    #[serde(with = "serde_rational")]
    pub t: BigRational,
    /// Scaled `R`.
    pub value: f64,
    /// `-R / (P + c^2 |Q|)` on scaled values; in `[-1, 1]`, positive when `R < 0`.
    pub relative_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictReport {
    #[serde(flatten)]
    pub verdict: Verdict,
    #[serde(with = "serde_rational")]
    pub alpha: BigRational,
    #[serde(with = "serde_rational")]
    pub c_sq: BigRational,
    #[serde(serialize_with = "crate::rational::serialize_rationals")]
    pub ladder: Vec<BigRational>,
    #[serde(rename = "B", with = "serde_rational")]
    pub b: BigRational,
    pub mode: Mode,
    pub rungs: Vec<RungSummary>,
    pub persistence: Vec<PersistencePoint>,
    /// Violations at the top rung.
    pub violations: Vec<Violation>,
}

pub fn validate_ladder(ladder: &[BigRational], minimum: usize) -> Result<()> {
    if ladder.len() < minimum {
        return Err(Error::LadderTooShort {
            minimum,
            found: ladder.len(),
        });
    }
    if ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::LadderNotIncreasing);
    }
    if ladder.first().is_some_and(|t| t < &int(3)) {
        return Err(Error::CutoffTooSmall);
    }
    Ok(())
}

fn relative_violation(
    kernel: &ScaledKernel,
    j: u64,
    k: u64,
    c_sq: &BigRational,
) -> Result<(f64, f64)> {
    let e = kernel.exact(j, k)?;
    let r = &e.p + c_sq * &e.q;
    let env = &e.p + c_sq * e.q.abs();
    Ok((to_f64(&r), to_f64(&(-r / env))))
}

/// Horizon-limited verdict for the shift `alpha (c1, c2)`.
///
/// A `NotIDWitness` requires the most strongly violated cell of the top
/// rung (by relative violation) to be negative at each of the top three
/// rungs with a nondecreasing relative violation.
pub fn id_verdict(
    problem: &GaussianProblem,
    alpha: &BigRational,
    t_ladder: &[BigRational],
    b: &BigRational,
    mode: Mode,
) -> Result<VerdictReport> {
    validate_ladder(t_ladder, 1)?;
    let canon = normalize(problem)?;
    let c_sq = alpha * alpha * &canon.kappa_sq;
    let mut report = VerdictReport {
        verdict: Verdict::Degenerate,
        alpha: alpha.clone(),
        c_sq: c_sq.clone(),
        ladder: t_ladder.to_vec(),
        b: b.clone(),
        mode,
        rungs: Vec::new(),
        persistence: Vec::new(),
        violations: Vec::new(),
    };
    if canon.degenerate {
        return Ok(report);
    }
    if canon.all_alpha() {
        report.verdict = Verdict::IDForAllAlpha;
        return Ok(report);
    }
    let mut kernels = Vec::with_capacity(t_ladder.len());
    let mut top = None;
    for t in t_ladder {
        let kernel = ScaledKernel::for_problem(&canon, t)?;
        let scan = scan_with_kernel(&kernel, &cutoff_set(t, b)?, &c_sq, mode)?;
        report.rungs.push(RungSummary {
            t: t.clone(),
            cells: scan.cells,
            violation_count: scan.verdict.violations().len() as u64,
            boundary_certified: scan.boundary_certified,
        });
        kernels.push(kernel);
        top = Some(scan.verdict);
    }
    let top = top.expect("ladder is nonempty");
    if report.rungs.iter().all(|r| r.violation_count == 0) {
        report.verdict = Verdict::IDCertifiedUpToHorizon;
        return Ok(report);
    }
    report.verdict = Verdict::Inconclusive;
    let top_violations = top.violations().to_vec();
    if top_violations.is_empty() || kernels.len() < PERSISTENCE_RUNGS {
        report.violations = top_violations;
        return Ok(report);
    }
    let top_kernel = kernels.last().expect("nonempty");
    let c_sq_f = to_f64(&c_sq);
    let rel: Vec<f64> = top_violations
        .par_iter()
        .map(|v| -> Result<f64> {
            let f = top_kernel.float(v.j, v.k)?;
            let env = f.p + c_sq_f * f.q.abs();
            Ok(if env > 0.0 && env.is_finite() {
                -f.r(c_sq_f) / env
            } else {
                0.0
            })
        })
        .collect::<Result<_>>()?;
    let mut witness = None;
    let mut worst = f64::NEG_INFINITY;
    for (v, &r) in top_violations.iter().zip(&rel) {
        if r > worst {
            worst = r;
            witness = Some((v.j, v.k));
        }
    }
    let (j, k) = witness.expect("violations are nonempty");
    let start = kernels.len() - PERSISTENCE_RUNGS;
    for (kernel, t) in kernels[start..].iter().zip(&t_ladder[start..]) {
        let (value, rel) = relative_violation(kernel, j, k, &c_sq)?;
        report.persistence.push(PersistencePoint {
            t: t.clone(),
            value,
            relative_violation: rel,
        });
    }
    let negative = report.persistence.iter().all(|p| p.value < 0.0);
    let nondecreasing = report
        .persistence
        .windows(2)
        .all(|w| w[1].relative_violation >= w[0].relative_violation);
    if negative && nondecreasing {
        report.verdict = Verdict::NotIDWitness {
            j,
            k,
            t: t_ladder.last().expect("nonempty").clone(),
        };
    }
    report.violations = top_violations;
    Ok(report)
}
