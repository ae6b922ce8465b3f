//! Gaussian problem representation, normalization to the canonical
//! covariance `((a, 1), (1, b))`, and the Laplace transform of the squared
//! shifted vector.

use dashu_float::{round::mode::HalfEven, Context, FBig};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{self, int, serde_rational};

/// Binary float used for configurable-precision evaluations.
pub type Real = FBig<HalfEven>;

/// Smallest precision accepted by [`laplace_squared_shifted`].
pub const MIN_PRECISION_BITS: usize = 16;

/// Default working precision for high-precision evaluations.
pub const DEFAULT_PRECISION_BITS: usize = 128;

/// A mean-zero bivariate Gaussian `(G1, G2)` with covariance `gamma` and a
/// shift direction `(c1, c2)`; the object of study is
/// `((G1 + alpha c1)^2, (G2 + alpha c2)^2)` for real `alpha`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaussianProblem {
    pub gamma11: BigRational,
    pub gamma12: BigRational,
    pub gamma22: BigRational,
    pub c1: BigRational,
    pub c2: BigRational,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemJson {
    cov: [[String; 2]; 2],
    shift: [String; 2],
}

impl GaussianProblem {
    pub fn new(
        gamma11: BigRational,
        gamma12: BigRational,
        gamma22: BigRational,
        c1: BigRational,
        c2: BigRational,
    ) -> Result<Self> {
        let p = Self {
            gamma11,
            gamma12,
            gamma22,
            c1,
            c2,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !self.gamma11.is_positive() || !self.gamma22.is_positive() || self.det().is_negative() {
            return Err(Error::NotPositiveSemidefinite);
        }
        if self.gamma12.is_zero() {
            return Err(Error::ZeroCorrelation);
        }
        if self.c1.is_zero() && self.c2.is_zero() {
            return Err(Error::ZeroShift);
        }
        Ok(())
    }

    pub fn det(&self) -> BigRational {
        &self.gamma11 * &self.gamma22 - &self.gamma12 * &self.gamma12
    }

    /// Parses `{"cov":[["4","1"],["1","1/2"]],"shift":["1","1"]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ProblemJson = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "problem JSON",
            input: text.chars().take(64).collect(),
            reason: e.to_string(),
        })?;
        let p = rational::parse_rational;
        if raw.cov[0][1].trim() != raw.cov[1][0].trim() && p(&raw.cov[0][1])? != p(&raw.cov[1][0])?
        {
            return Err(Error::Parse {
                what: "problem JSON",
                input: text.chars().take(64).collect(),
                reason: "covariance must be symmetric".into(),
            });
        }
        Self::new(
            p(&raw.cov[0][0])?,
            p(&raw.cov[0][1])?,
            p(&raw.cov[1][1])?,
            p(&raw.shift[0])?,
            p(&raw.shift[1])?,
        )
    }

    pub fn to_json(&self) -> String {
        let f = rational::format_rational;
        let raw = ProblemJson {
            cov: [
                [f(&self.gamma11), f(&self.gamma12)],
                [f(&self.gamma12), f(&self.gamma22)],
            ],
            shift: [f(&self.c1), f(&self.c2)],
        };
        serde_json::to_string(&raw).expect("plain strings serialize")
    }

    /// Condition under which the squares are infinitely divisible for every
    /// `alpha`: `gamma11 >= (c1/c2) gamma12`, `gamma22 >= (c2/c1) gamma12`,
    /// together with `c1 c2 gamma12 > 0` (the sign condition that makes
    /// `C Gamma^{-1} C` have nonpositive off-diagonals).
    pub fn all_alpha_condition(&self) -> bool {
        if self.det().is_zero() {
            return true;
        }
        if self.c1.is_zero() || self.c2.is_zero() {
            return false;
        }
        let r = &self.c1 / &self.c2;
        (&r * &self.gamma12).is_positive()
            && self.gamma11 >= &r * &self.gamma12
            && self.gamma22 >= &self.gamma12 / &r
    }

    /// Laplace transform `E exp(-(l1 (G1 + alpha c1)^2 + l2 (G2 + alpha c2)^2) / 2)`
    /// for the unnormalized covariance, in `f64`.
    pub fn laplace_f64(
        &self,
        lambda1: &BigRational,
        lambda2: &BigRational,
        alpha: &BigRational,
    ) -> f64 {
        let s1 = alpha * &self.c1;
        let s2 = alpha * &self.c2;
        let h = BigRational::one()
            + &self.gamma11 * lambda1
            + &self.gamma22 * lambda2
            + self.det() * lambda1 * lambda2;
        let quad = &s1 * &s1 * &self.gamma22 + &s2 * &s2 * &self.gamma11
            - int(2) * &s1 * &s2 * &self.gamma12;
        let num = &s1 * &s1 * lambda1 + &s2 * &s2 * lambda2 + quad * lambda1 * lambda2;
        let x = num / (int(2) * &h);
        (-rational::to_f64(&x)).exp() / rational::to_f64(&h).sqrt()
    }
}

/// Which of the three canonical shift patterns a problem reduces to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShiftCase {
    /// Shift `(c, c)`.
    EqualShift,
    /// Shift `(c, -c)`.
    OppositeShift,
    /// Shift `(c, 0)`.
    SingleShift,
}

impl ShiftCase {
    pub const ALL: [ShiftCase; 3] = [
        ShiftCase::EqualShift,
        ShiftCase::OppositeShift,
        ShiftCase::SingleShift,
    ];

    /// Canonical shift pattern `(s1, s2)` multiplying `c`.
    pub fn pattern(self) -> (i8, i8) {
        match self {
            ShiftCase::EqualShift => (1, 1),
            ShiftCase::OppositeShift => (1, -1),
            ShiftCase::SingleShift => (1, 0),
        }
    }
}

/// Covariance `((a, 1), (1, b))` with `ab = d + 1`, plus the shift case.
///
/// `kappa_sq` maps the user's shift multiplier to the canonical one through
/// `c^2 = kappa_sq * alpha^2`. Only the square is kept: `kappa` itself is
/// `1/sqrt(|gamma12|)` times a rational and is generally irrational, while
/// every downstream quantity depends on `c` through `c^2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CanonicalProblem {
    #[serde(with = "serde_rational")]
    pub a: BigRational,
    #[serde(with = "serde_rational")]
    pub b: BigRational,
    #[serde(with = "serde_rational")]
    pub d: BigRational,
    pub case_label: ShiftCase,
    #[serde(with = "serde_rational")]
    pub kappa_sq: BigRational,
    pub degenerate: bool,
    /// Squared per-coordinate scale factors `u_i^2` of the map
    /// `G'_i = u_i G_i` (after the optional swap), so `lambda'_i = lambda_i / u_i^2`.
    #[serde(skip)]
    pub coord_scale_sq: [BigRational; 2],
    /// True when the coordinates were swapped to put the nonzero shift first.
    #[serde(skip)]
    pub swapped: bool,
}

impl CanonicalProblem {
    /// Builds a canonical problem directly from `(a, b)`; `kappa_sq = 1`.
    pub fn from_ab(a: BigRational, b: BigRational, case_label: ShiftCase) -> Result<Self> {
        if !a.is_positive() || !b.is_positive() {
            return Err(Error::InvalidParameter("a and b must be positive".into()));
        }
        let d = &a * &b - BigRational::one();
        if d.is_negative() {
            return Err(Error::NotPositiveSemidefinite);
        }
        Ok(Self {
            degenerate: d.is_zero(),
            a,
            b,
            d,
            case_label,
            kappa_sq: BigRational::one(),
            coord_scale_sq: [BigRational::one(), BigRational::one()],
            swapped: false,
        })
    }

    /// `a + b - (d + 2)`; nonpositive exactly when the all-alpha condition holds
    /// for the equal-shift case.
    pub fn zeta(&self) -> BigRational {
        &self.a + &self.b - (&self.d + int(2))
    }

    /// Whether the all-alpha condition holds in the canonical frame.
    pub fn all_alpha(&self) -> bool {
        if self.degenerate {
            return true;
        }
        let (s1, s2) = self.case_label.pattern();
        all_alpha_condition(self, &int(s1.into()), &int(s2.into()))
    }

    /// Numerator coefficient of the Laplace exponent, `gamma`, `rho` or `b`.
    pub fn quadratic_weight(&self) -> BigRational {
        match self.case_label {
            ShiftCase::EqualShift => &self.a + &self.b - int(2),
            ShiftCase::OppositeShift => &self.a + &self.b + int(2),
            ShiftCase::SingleShift => self.b.clone(),
        }
    }

    fn require_nondegenerate(&self) -> Result<()> {
        if self.degenerate {
            Err(Error::Degenerate)
        } else {
            Ok(())
        }
    }
}

/// Reduces a problem to canonical form.
///
/// With both shifts nonzero, coordinate `i` is scaled so the shifts have
/// equal magnitude and the off-diagonal becomes `1`, flipping coordinate 2
/// when the covariance is negative. With one zero shift, the nonzero shift is
/// moved to coordinate 1 and both coordinates are scaled by `1/sqrt(|gamma12|)`.
pub fn normalize(problem: &GaussianProblem) -> Result<CanonicalProblem> {
    problem.validate()?;
    let g12 = problem.gamma12.abs();
    let det = problem.det();
    let (a, b, kappa_sq, case_label, coord_scale_sq, swapped);
    if !problem.c1.is_zero() && !problem.c2.is_zero() {
        let c1 = problem.c1.abs();
        let c2 = problem.c2.abs();
        a = &problem.gamma11 * &c2 / (&c1 * &g12);
        b = &problem.gamma22 * &c1 / (&c2 * &g12);
        kappa_sq = &c1 * &c2 / &g12;
        let sign = (&problem.c1 * &problem.c2 * &problem.gamma12).is_positive();
        case_label = if sign {
            ShiftCase::EqualShift
        } else {
            ShiftCase::OppositeShift
        };
        coord_scale_sq = [&c2 / (&c1 * &g12), &c1 / (&c2 * &g12)];
        swapped = false;
    } else {
        swapped = problem.c1.is_zero();
        let (g11, g22, c) = if swapped {
            (&problem.gamma22, &problem.gamma11, &problem.c2)
        } else {
            (&problem.gamma11, &problem.gamma22, &problem.c1)
        };
        a = g11 / &g12;
        b = g22 / &g12;
        kappa_sq = c * c / &g12;
        case_label = ShiftCase::SingleShift;
        let u = BigRational::one() / &g12;
        coord_scale_sq = [u.clone(), u];
    }
    let d = &a * &b - BigRational::one();
    Ok(CanonicalProblem {
        degenerate: det.is_zero(),
        a,
        b,
        d,
        case_label,
        kappa_sq,
        coord_scale_sq,
        swapped,
    })
}

/// `gamma = a+b-2`, `rho = a+b+2`, `zeta = a+b-(d+2)`, `zeta_tilde = a+b+d+2`.
///
/// `zeta` and `zeta_tilde` are defined by `-(d+2) w + d(a+b) = -2 zeta` with
/// `w = gamma` and `w = rho`; at `d = 1`, `zeta_tilde = a+b+3`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseConstants {
    #[serde(rename = "gamma", with = "serde_rational")]
    pub gamma_const: BigRational,
    #[serde(rename = "rho", with = "serde_rational")]
    pub rho_const: BigRational,
    #[serde(with = "serde_rational")]
    pub zeta: BigRational,
    #[serde(with = "serde_rational")]
    pub zeta_tilde: BigRational,
}

pub fn case_constants(canon: &CanonicalProblem) -> Result<CaseConstants> {
    canon.require_nondegenerate()?;
    let s = &canon.a + &canon.b;
    Ok(CaseConstants {
        gamma_const: &s - int(2),
        rho_const: &s + int(2),
        zeta: &s - (&canon.d + int(2)),
        zeta_tilde: &s + &canon.d + int(2),
    })
}

/// Checks `a + b - (d + 2) = (a - (d + 1)) (a - 1) / a` exactly.
pub fn zeta_factorization_holds(canon: &CanonicalProblem) -> bool {
    let one = BigRational::one();
    let lhs = canon.zeta();
    let rhs = (&canon.a - (&canon.d + &one)) * (&canon.a - &one) / &canon.a;
    lhs == rhs
}

/// All-alpha condition `a >= c1/c2 > 0` and `b >= c2/c1 > 0` against the
/// covariance `((a, 1), (1, b))`.
///
/// A zero shift component makes the ratio degenerate and the condition never
/// holds; the single-shift case is always decided by the critical-point
/// machinery.
pub fn all_alpha_condition(canon: &CanonicalProblem, c1: &BigRational, c2: &BigRational) -> bool {
    if c1.is_zero() || c2.is_zero() {
        return false;
    }
    let r = c1 / c2;
    r.is_positive() && canon.a >= r && canon.b >= r.recip()
}

/// Laplace-transform argument `(lambda1, lambda2)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationPoint {
    pub lambda1: BigRational,
    pub lambda2: BigRational,
}

impl EvaluationPoint {
    pub fn new(lambda1: BigRational, lambda2: BigRational) -> Result<Self> {
        if lambda1.is_negative() || lambda2.is_negative() {
            return Err(Error::InvalidParameter("lambda must be nonnegative".into()));
        }
        Ok(Self { lambda1, lambda2 })
    }

    /// `lambda_i = t (1 - s_i)` with `t > 0` and `s_i` in `[0, 1]`.
    pub fn from_ts(t: &BigRational, s1: &BigRational, s2: &BigRational) -> Result<Self> {
        if !t.is_positive() {
            return Err(Error::NonPositiveT);
        }
        let unit = |s: &BigRational| !s.is_negative() && *s <= BigRational::one();
        if !unit(s1) || !unit(s2) {
            return Err(Error::InvalidParameter("s must lie in [0, 1]".into()));
        }
        let one = BigRational::one();
        Ok(Self {
            lambda1: t * (&one - s1),
            lambda2: t * (&one - s2),
        })
    }
}

/// `H = 1 + a l1 + b l2 + d l1 l2` and the exponent numerator divided by
/// `c^2` for the active case.
fn laplace_parts(canon: &CanonicalProblem, pt: &EvaluationPoint) -> (BigRational, BigRational) {
    let (l1, l2) = (&pt.lambda1, &pt.lambda2);
    let h = BigRational::one() + &canon.a * l1 + &canon.b * l2 + &canon.d * l1 * l2;
    let cross = l1 * l2;
    let num = match canon.case_label {
        ShiftCase::EqualShift | ShiftCase::OppositeShift => {
            canon.quadratic_weight() * cross + l1 + l2
        }
        ShiftCase::SingleShift => &canon.b * cross + l1,
    };
    (h, num)
}

fn to_real(x: &BigRational, ctx: &Context<HalfEven>) -> Real {
    let n = dashu_int(x.numer());
    let d = dashu_int(x.denom());
    ctx.div(Real::from(n).repr(), Real::from(d).repr()).value()
}

fn dashu_int(x: &BigInt) -> dashu_int::IBig {
    let (sign, bytes) = x.to_bytes_le();
    let mag = dashu_int::UBig::from_le_bytes(&bytes);
    match sign {
        num_bigint::Sign::Minus => -dashu_int::IBig::from(mag),
        _ => dashu_int::IBig::from(mag),
    }
}

/// `H^{-1/2} exp(-c^2 N / (2H))`, the Laplace transform of the squared
/// shifted canonical vector, evaluated to `precision_bits` bits.
///
/// `c_sq` is the square of the canonical shift `c`.
pub fn laplace_squared_shifted(
    canon: &CanonicalProblem,
    c_sq: &BigRational,
    pt: &EvaluationPoint,
    precision_bits: usize,
) -> Result<Real> {
    if precision_bits < MIN_PRECISION_BITS {
        return Err(Error::Precision {
            requested: precision_bits,
            minimum: MIN_PRECISION_BITS,
        });
    }
    if c_sq.is_negative() {
        return Err(Error::InvalidParameter("c^2 must be nonnegative".into()));
    }
    let (h, num) = laplace_parts(canon, pt);
    let exponent = -(c_sq * num) / (int(2) * &h);
    // Guard bits absorb the rounding of the three chained operations.
    let ctx = Context::<HalfEven>::new(precision_bits + 16);
    let e = ctx.exp(to_real(&exponent, &ctx).repr()).value();
    let root = ctx.sqrt(to_real(&h, &ctx).repr()).value();
    let value = ctx.div(e.repr(), root.repr()).value();
    Ok(value.with_precision(precision_bits).value())
}

/// Same transform in `f64`.
pub fn laplace_squared_shifted_f64(
    canon: &CanonicalProblem,
    c_sq: &BigRational,
    pt: &EvaluationPoint,
) -> f64 {
    let (h, num) = laplace_parts(canon, pt);
    let exponent = -(c_sq * num) / (int(2) * &h);
    rational::to_f64(&exponent).exp() / rational::to_f64(&h).sqrt()
}

/// Sample mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

/// Samples per generator stream. Stream `i` of the seeded ChaCha20 generator
/// produces samples `[i * MC_CHUNK, (i + 1) * MC_CHUNK)`, so the estimate does
/// not depend on how chunks are scheduled across threads.
pub const MC_CHUNK: u64 = 1 << 16;

#[derive(Clone, Copy)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    const EMPTY: Moments = Moments {
        n: 0.0,
        mean: 0.0,
        m2: 0.0,
    };

    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if other.n == 0.0 {
            return self;
        }
        if self.n == 0.0 {
            return other;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * other.n / n,
            m2: self.m2 + other.m2 + delta * delta * self.n * other.n / n,
        }
    }
}

/// Monte Carlo estimate of the Laplace transform from `n` Gaussian draws.
///
/// Pairs are drawn as `L z` where `L` is the Cholesky factor of
/// `((a, 1), (1, b))` and `z` are two standard normals (ziggurat) from a
/// ChaCha20 stream seeded with `seed`.
pub fn mc_laplace_estimate(
    canon: &CanonicalProblem,
    c_sq: &BigRational,
    pt: &EvaluationPoint,
    n: u64,
    seed: u64,
) -> Result<McEstimate> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "sample count must be at least 1".into(),
        ));
    }
    if canon.degenerate {
        return Err(Error::NotPositiveDefinite);
    }
    if c_sq.is_negative() {
        return Err(Error::InvalidParameter("c^2 must be nonnegative".into()));
    }
    let a = rational::to_f64(&canon.a);
    let l11 = a.sqrt();
    let l21 = 1.0 / l11;
    let l22 = (rational::to_f64(&canon.d) / a).sqrt();
    let c = rational::to_f64(c_sq).sqrt();
    let (p1, p2) = canon.case_label.pattern();
    let (s1, s2) = (c * f64::from(p1), c * f64::from(p2));
    let lam1 = rational::to_f64(&pt.lambda1);
    let lam2 = rational::to_f64(&pt.lambda2);

    let chunks = n.div_ceil(MC_CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(chunk);
            let count = MC_CHUNK.min(n - chunk * MC_CHUNK);
            let mut m = Moments::EMPTY;
            for _ in 0..count {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                let g1 = l11 * z1 + s1;
                let g2 = l21 * z1 + l22 * z2 + s2;
                m.push((-(lam1 * g1 * g1 + lam2 * g2 * g2) / 2.0).exp());
            }
            m
        })
        .collect();
    let total = parts.into_iter().fold(Moments::EMPTY, Moments::merge);
    let var = if total.n > 1.0 {
        total.m2 / (total.n - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean: total.mean,
        stderr: (var / total.n).sqrt(),
        n,
    })
}
