//! Closed-form power-series coefficients of the log Laplace transform.
//!
//! Writing `l_i = t (1 - s_i)`, the log of the Laplace transform of the
//! squared shifted vector is `(P + c^2 Q) / 2` with
//! `P = -log H` and `Q = -N / H`. This module evaluates
//! `P_{jk}`, `Q_{jk}` and `R_{jk} = P_{jk} + c^2 Q_{jk}` in closed form.
//!
//! Positivity work uses the scaled coefficients
//! `R_{jk} / (alpha^{j-1} beta^{k-1})` (exponents clamped at 0 on the
//! boundary rows), evaluated through [`ScaledKernel`] either exactly or in
//! `f64` with exact confirmation of doubtful signs.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{case_constants, CanonicalProblem, ShiftCase};
use crate::rational::{format_f64, format_rational, int, serde_rational, to_f64};

/// Float values whose magnitude is below this fraction of their error
/// envelope are recomputed exactly before their sign is used.
pub const CONFIRM_REL: f64 = 1e-12;

/// Relative size below which trailing terms of a float p-sum are dropped.
const TRUNCATE_REL: f64 = 1e-17;

/// Substitution-level quantities at a fixed `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SeriesParams {
    #[serde(with = "serde_rational")]
    pub t: BigRational,
    #[serde(with = "serde_rational")]
    pub alpha: BigRational,
    #[serde(with = "serde_rational")]
    pub beta: BigRational,
    #[serde(with = "serde_rational")]
    pub p_param: BigRational,
    #[serde(with = "serde_rational")]
    pub theta: BigRational,
    #[serde(with = "serde_rational")]
    pub one_minus_theta: BigRational,
    #[serde(with = "serde_rational")]
    pub tbar_sq: BigRational,
}

pub fn params(canon: &CanonicalProblem, t: &BigRational) -> Result<SeriesParams> {
    if !t.is_positive() {
        return Err(Error::NonPositiveT);
    }
    if canon.degenerate {
        return Err(Error::Degenerate);
    }
    let (a, b, d) = (&canon.a, &canon.b, &canon.d);
    let dt2 = d * t * t;
    let tbar_sq = int(1) + a * t + b * t + &dt2;
    let alpha = (a * t + &dt2) / &tbar_sq;
    let beta = (b * t + &dt2) / &tbar_sq;
    let p_param = &dt2 / &tbar_sq;
    // (a + dt)(b + dt) = (1 + at + bt + dt^2) d + 1 because ab = d + 1.
    let one_minus_theta = ((a + d * t) * (b + d * t)).recip();
    let theta = int(1) - &one_minus_theta;
    Ok(SeriesParams {
        t: t.clone(),
        alpha,
        beta,
        p_param,
        theta,
        one_minus_theta,
        tbar_sq,
    })
}

/// Coefficients of `N(s) / c^2 = n00 + n10 s1 + n01 s2 + n11 s1 s2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NumeratorCoeffs {
    #[serde(with = "serde_rational")]
    pub n00: BigRational,
    #[serde(with = "serde_rational")]
    pub n10: BigRational,
    #[serde(with = "serde_rational")]
    pub n01: BigRational,
    #[serde(with = "serde_rational")]
    pub n11: BigRational,
}

pub fn numerator_coeffs(canon: &CanonicalProblem, t: &BigRational) -> NumeratorCoeffs {
    let w = canon.quadratic_weight() * t * t;
    match canon.case_label {
        ShiftCase::EqualShift | ShiftCase::OppositeShift => NumeratorCoeffs {
            n00: &w + t * int(2),
            n10: -(&w + t),
            n01: -(&w + t),
            n11: w,
        },
        ShiftCase::SingleShift => NumeratorCoeffs {
            n00: &w + t,
            n10: -(&w + t),
            n01: -w.clone(),
            n11: w,
        },
    }
}

fn binomial(n: u64, p: u64) -> BigInt {
    if p > n {
        return BigInt::zero();
    }
    let p = p.min(n - p);
    let mut acc = BigInt::one();
    for i in 0..p {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

fn pow(x: &BigRational, e: u64) -> BigRational {
    num_traits::pow(x.clone(), e as usize)
}

fn check_not_constant(j: u64, k: u64) -> Result<()> {
    if j == 0 && k == 0 {
        Err(Error::ConstantIndex)
    } else {
        Ok(())
    }
}

/// `D_{jk} = sum_{p <= min(j,k)} (1-theta)^p C(j,p) C(k,p)`, the coefficients
/// of `1 / (1 - u1 - u2 + theta u1 u2)`.
pub fn d_jk(one_minus_theta: &BigRational, j: u64, k: u64) -> BigRational {
    (0..=j.min(k))
        .map(|p| {
            pow(one_minus_theta, p) * BigRational::from_integer(binomial(j, p) * binomial(k, p))
        })
        .sum()
}

/// Coefficients of `-log(1 - u1 - u2 + theta u1 u2)`.
pub fn c_jk(one_minus_theta: &BigRational, j: u64, k: u64) -> Result<BigRational> {
    check_not_constant(j, k)?;
    if k == 0 {
        return Ok(BigRational::new(BigInt::one(), j.into()));
    }
    if j == 0 {
        return Ok(BigRational::new(BigInt::one(), k.into()));
    }
    Ok((0..j.min(k))
        .map(|p| {
            pow(one_minus_theta, p + 1)
                * BigRational::new(binomial(j - 1, p) * binomial(k - 1, p), (p + 1).into())
        })
        .sum())
}

pub fn p_jk(sp: &SeriesParams, j: u64, k: u64) -> Result<BigRational> {
    Ok(pow(&sp.alpha, j) * pow(&sp.beta, k) * c_jk(&sp.one_minus_theta, j, k)?)
}

pub fn q_jk(sp: &SeriesParams, nc: &NumeratorCoeffs, j: u64, k: u64) -> Result<BigRational> {
    check_not_constant(j, k)?;
    let omt = &sp.one_minus_theta;
    let term = |n: &BigRational, dj: u64, dk: u64| {
        if dj > j || dk > k {
            BigRational::zero()
        } else {
            let (jj, kk) = (j - dj, k - dk);
            n * d_jk(omt, jj, kk) * pow(&sp.alpha, jj) * pow(&sp.beta, kk)
        }
    };
    let s = term(&nc.n00, 0, 0) + term(&nc.n10, 1, 0) + term(&nc.n01, 0, 1) + term(&nc.n11, 1, 1);
    Ok(-s / &sp.tbar_sq)
}

pub fn r_jk(
    sp: &SeriesParams,
    nc: &NumeratorCoeffs,
    c_sq: &BigRational,
    j: u64,
    k: u64,
) -> Result<BigRational> {
    Ok(p_jk(sp, j, k)? + c_sq * q_jk(sp, nc, j, k)?)
}

/// Splits an interior `R_{jk}` into the terms `R_{jkp}`, `p = 0..=min(j,k)`.
///
/// Term `p` is `alpha^{j-1} beta^{k-1} w_p ((1-theta) F_p - c^2 A_p / tbar^2)`
/// with `w_p = (1-theta)^p C(j,p) C(k,p)`,
/// `F_p = alpha beta (j-p)(k-p) / ((p+1) j k)` and `A_p` the numerator bracket
/// with its `p^2 / jk` part carried to term `p - 1`. The `p = 0` term does
/// not depend on `(j, k)`.
pub fn decompose_r(
    sp: &SeriesParams,
    nc: &NumeratorCoeffs,
    c_sq: &BigRational,
    j: u64,
    k: u64,
) -> Result<Vec<BigRational>> {
    if j == 0 || k == 0 {
        return Err(Error::BoundaryIndex(j, k));
    }
    let tau = &sp.one_minus_theta;
    let ab = &sp.alpha * &sp.beta;
    let prefactor = pow(&sp.alpha, j - 1) * pow(&sp.beta, k - 1);
    let (jr, kr) = (int(j as i64), int(k as i64));
    let mut w = BigRational::one();
    let mut terms = Vec::with_capacity(j.min(k) as usize + 1);
    for p in 0..=j.min(k) {
        let pr = int(p as i64);
        let x = &pr / &jr;
        let y = &pr / &kr;
        let (ox, oy) = (int(1) - &x, int(1) - &y);
        let f = &ab * &ox * &oy / int(p as i64 + 1);
        let a_p = &nc.n00 * &ab
            + &nc.n10 * &sp.beta * &ox
            + &nc.n01 * &sp.alpha * &oy
            + &nc.n11 * &ox * &oy
            - &nc.n11 * &x * &y
            + &nc.n11 * tau * &ox * &oy;
        terms.push(&prefactor * &w * (tau * f - c_sq * a_p / &sp.tbar_sq));
        w = w * tau * int(((j - p) * (k - p)) as i64) / int(((p + 1) * (p + 1)) as i64);
    }
    Ok(terms)
}

/// Exact residuals of the large-`t` expansions and exact checks of the
/// algebraic identities used by the asymptotic analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AsymptoticReport {
    #[serde(with = "serde_rational")]
    pub t: BigRational,
    /// `(1 - alpha) - [b/(dt) - (1 + b^2)/(dt)^2]`, order `t^-3`.
    #[serde(with = "serde_rational")]
    pub residual_one_minus_alpha: BigRational,
    /// `(1 - beta) - [a/(dt) - (1 + a^2)/(dt)^2]`, order `t^-3`.
    #[serde(with = "serde_rational")]
    pub residual_one_minus_beta: BigRational,
    /// `(1-alpha)(1-beta) - [(d+1)/(dt)^2 - (a(1+b^2) + b(1+a^2))/(dt)^3]`, order `t^-4`.
    #[serde(with = "serde_rational")]
    pub residual_product: BigRational,
    /// `(1 - theta) - [1/(dt)^2 - (a+b)/(dt)^3]`, order `t^-4`.
    #[serde(with = "serde_rational")]
    pub residual_one_minus_theta: BigRational,
    pub identities: IdentityChecks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IdentityChecks {
    /// `zeta = (a - (d+1))(a - 1) / a`
    pub zeta_factorization: bool,
    /// `-(d+2) gamma + d(a+b) = -2 zeta`
    pub gamma_zeta: bool,
    /// `a gamma - d = (a-1)^2`
    pub a_gamma: bool,
    /// `b gamma - d = (b-1)^2`
    pub b_gamma: bool,
    /// `-(d+2) rho + d(a+b) = -2 zeta_tilde`
    pub rho_zeta_tilde: bool,
    /// `a rho - d = (a+1)^2`
    pub a_rho: bool,
    /// `b rho - d = (b+1)^2`
    pub b_rho: bool,
    /// `alpha beta theta = p`
    pub alpha_beta_theta: bool,
    /// `1 - theta = d^-1 / (1 + d^-1 + at + bt + dt^2)`
    pub one_minus_theta_form: bool,
}

impl IdentityChecks {
    pub fn all(&self) -> bool {
        self.zeta_factorization
            && self.gamma_zeta
            && self.a_gamma
            && self.b_gamma
            && self.rho_zeta_tilde
            && self.a_rho
            && self.b_rho
            && self.alpha_beta_theta
            && self.one_minus_theta_form
    }
}

pub fn asymptotic_check(canon: &CanonicalProblem, t: &BigRational) -> Result<AsymptoticReport> {
    let sp = params(canon, t)?;
    let cc = case_constants(canon)?;
    let (a, b, d) = (&canon.a, &canon.b, &canon.d);
    let dt = d * t;
    let dt2 = &dt * &dt;
    let dt3 = &dt2 * &dt;
    let one = int(1);
    let u = &one - &sp.alpha;
    let v = &one - &sp.beta;
    let (gamma, rho) = (&cc.gamma_const, &cc.rho_const);
    let d_inv = d.recip();
    let identities = IdentityChecks {
        zeta_factorization: cc.zeta == (a - (d + &one)) * (a - &one) / a,
        gamma_zeta: -(d + int(2)) * gamma + d * (a + b) == int(-2) * &cc.zeta,
        a_gamma: a * gamma - d == (a - &one) * (a - &one),
        b_gamma: b * gamma - d == (b - &one) * (b - &one),
        rho_zeta_tilde: -(d + int(2)) * rho + d * (a + b) == int(-2) * &cc.zeta_tilde,
        a_rho: a * rho - d == (a + &one) * (a + &one),
        b_rho: b * rho - d == (b + &one) * (b + &one),
        alpha_beta_theta: &sp.alpha * &sp.beta * &sp.theta == sp.p_param,
        one_minus_theta_form: sp.one_minus_theta
            == &d_inv / (&one + &d_inv + a * t + b * t + d * t * t),
    };
    Ok(AsymptoticReport {
        residual_one_minus_alpha: &u - (b / &dt - (&one + b * b) / &dt2),
        residual_one_minus_beta: &v - (a / &dt - (&one + a * a) / &dt2),
        residual_product: &u * &v
            - ((d + &one) / &dt2 - (a * (&one + b * b) + b * (&one + a * a)) / &dt3),
        residual_one_minus_theta: &sp.one_minus_theta - (dt2.recip() - (a + b) / &dt3),
        t: sp.t,
        identities,
    })
}

/// Exact scaled coefficients `P / (alpha^{j-1} beta^{k-1})` and likewise `Q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaledExact {
    pub p: BigRational,
    pub q: BigRational,
}

/// Float scaled coefficients with error envelopes: the sum of the absolute
/// values of everything that was added to form each value, plus a bound on
/// any dropped tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledFloat {
    pub p: f64,
    pub p_env: f64,
    pub q: f64,
    pub q_env: f64,
}

impl ScaledFloat {
    pub fn r(&self, c_sq: f64) -> f64 {
        self.p + c_sq * self.q
    }

    pub fn r_env(&self, c_sq: f64) -> f64 {
        self.p_env + c_sq * self.q_env
    }

    /// Whether the float sign of `P + c^2 Q` needs exact confirmation.
    pub fn r_doubtful(&self, c_sq: f64) -> bool {
        let r = self.r(c_sq);
        !r.is_finite() || r.abs() < CONFIRM_REL * self.r_env(c_sq)
    }

    pub fn q_doubtful(&self) -> bool {
        !self.q.is_finite() || self.q.abs() < CONFIRM_REL * self.q_env
    }
}

/// Sign of a scaled `R`, with the exact value whenever float was not trusted.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledR {
    pub value: f64,
    pub sign: Ordering,
    pub exact: Option<BigRational>,
}

/// Evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Float,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Mode::Exact),
            "float" => Ok(Mode::Float),
            _ => Err(Error::Parse {
                what: "mode",
                input: s.chars().take(64).collect(),
                reason: "expected \"exact\" or \"float\"".into(),
            }),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Exact => "exact",
            Mode::Float => "float",
        })
    }
}

#[derive(Debug, Clone)]
struct FloatConsts {
    tau: f64,
    ab_tau: f64,
    g: f64,
    h1: f64,
    h2: f64,
    n11: f64,
    inv_tbar_sq: f64,
    alpha: f64,
    beta: f64,
    q_row: f64,
    q_col: f64,
    ln_alpha: f64,
    ln_beta: f64,
}

/// Per-`t` constants for evaluating scaled coefficients at many indices.
///
/// The interior scaled `Q` is
/// `-(1/tbar^2) sum_p w_p (g - x h1 - y h2 + n11 x y)` with `x = p/j`,
/// `y = p/k`, where `g`, `h1`, `h2` are formed exactly so that their large
/// cancelling parts never meet in floating point.
#[derive(Debug, Clone)]
pub struct ScaledKernel {
    sp: SeriesParams,
    nc: NumeratorCoeffs,
    tau_num: BigInt,
    tau_den: BigInt,
    ab_tau: BigRational,
    g: BigRational,
    h1: BigRational,
    h2: BigRational,
    q_row: BigRational,
    q_col: BigRational,
    f: FloatConsts,
}

impl ScaledKernel {
    pub fn new(sp: &SeriesParams, nc: &NumeratorCoeffs) -> Self {
        let one = int(1);
        let u = &one - &sp.alpha;
        let v = &one - &sp.beta;
        let (n00, n10, n01, n11) = (&nc.n00, &nc.n10, &nc.n01, &nc.n11);
        let g = (n00 + n10 + n01 + n11) - &u * (n00 + n01) - &v * (n00 + n10) + n00 * &u * &v;
        let h1 = (n10 + n11) - n10 * &v;
        let h2 = (n01 + n11) - n01 * &u;
        let ab_tau = &sp.alpha * &sp.beta * &sp.one_minus_theta;
        let q_row = -(n00 * &sp.alpha + n10) / &sp.tbar_sq;
        let q_col = -(n00 * &sp.beta + n01) / &sp.tbar_sq;
        let f = FloatConsts {
            tau: to_f64(&sp.one_minus_theta),
            ab_tau: to_f64(&ab_tau),
            g: to_f64(&g),
            h1: to_f64(&h1),
            h2: to_f64(&h2),
            n11: to_f64(n11),
            inv_tbar_sq: to_f64(&sp.tbar_sq.recip()),
            alpha: to_f64(&sp.alpha),
            beta: to_f64(&sp.beta),
            q_row: to_f64(&q_row),
            q_col: to_f64(&q_col),
            ln_alpha: (-to_f64(&u)).ln_1p(),
            ln_beta: (-to_f64(&v)).ln_1p(),
        };
        Self {
            sp: sp.clone(),
            nc: nc.clone(),
            tau_num: sp.one_minus_theta.numer().clone(),
            tau_den: sp.one_minus_theta.denom().clone(),
            ab_tau,
            g,
            h1,
            h2,
            q_row,
            q_col,
            f,
        }
    }

    pub fn for_problem(canon: &CanonicalProblem, t: &BigRational) -> Result<Self> {
        Ok(Self::new(&params(canon, t)?, &numerator_coeffs(canon, t)))
    }

    pub fn params(&self) -> &SeriesParams {
        &self.sp
    }

    pub fn numerator(&self) -> &NumeratorCoeffs {
        &self.nc
    }

    /// Scaled `Q` on the row `(j, 0)`, the same for every `j >= 1`.
    pub fn boundary_row_q(&self) -> &BigRational {
        &self.q_row
    }

    /// Scaled `Q` on the column `(0, k)`, the same for every `k >= 1`.
    pub fn boundary_col_q(&self) -> &BigRational {
        &self.q_col
    }

    /// `(j-1) ln alpha + (k-1) ln beta` with exponents clamped at 0.
    pub fn ln_prefactor(&self, j: u64, k: u64) -> f64 {
        let e = |n: u64| n.saturating_sub(1) as f64;
        e(j) * self.f.ln_alpha + e(k) * self.f.ln_beta
    }

    pub fn exact_prefactor(&self, j: u64, k: u64) -> BigRational {
        pow(&self.sp.alpha, j.saturating_sub(1)) * pow(&self.sp.beta, k.saturating_sub(1))
    }

    /// `sum_{p=0}^{n} c_p tau^p` for integer `c_p`, in one exact division.
    fn tau_poly(&self, coeffs: &[BigInt]) -> BigRational {
        let Some((last, rest)) = coeffs.split_last() else {
            return BigRational::zero();
        };
        let mut acc = last.clone();
        let mut den_pow = BigInt::one();
        for c in rest.iter().rev() {
            den_pow *= &self.tau_den;
            acc = acc * &self.tau_num + c * &den_pow;
        }
        BigRational::new(acc, den_pow)
    }

    pub fn exact(&self, j: u64, k: u64) -> Result<ScaledExact> {
        check_not_constant(j, k)?;
        if k == 0 {
            return Ok(ScaledExact {
                p: &self.sp.alpha / int(j as i64),
                q: self.q_row.clone(),
            });
        }
        if j == 0 {
            return Ok(ScaledExact {
                p: &self.sp.beta / int(k as i64),
                q: self.q_col.clone(),
            });
        }
        let m = j.min(k);
        let mut s0 = Vec::with_capacity(m as usize + 1);
        let mut s1 = Vec::with_capacity(m as usize + 1);
        let mut s2 = Vec::with_capacity(m as usize + 1);
        let mut sp = Vec::with_capacity(m as usize);
        // C(j,p), C(k,p), C(j,p+1), C(k-1,p)
        let (mut cj, mut ck) = (BigInt::one(), BigInt::one());
        let (mut cj1, mut ck1) = (BigInt::from(j), BigInt::one());
        for p in 0..=m {
            let w = &cj * &ck;
            s1.push(&w * p);
            s2.push(&w * p * p);
            s0.push(w);
            if p < m {
                sp.push(&cj1 * &ck1);
                cj = cj * (j - p) / (p + 1);
                ck = ck * (k - p) / (p + 1);
                cj1 = cj1 * (j - p - 1) / (p + 2);
                ck1 = ck1 * (k - 1 - p) / (p + 1);
            }
        }
        let (jr, kr) = (int(j as i64), int(k as i64));
        let p = &self.ab_tau * self.tau_poly(&sp) / &jr;
        let bracket = &self.g * self.tau_poly(&s0)
            - (&self.h1 / &jr + &self.h2 / &kr) * self.tau_poly(&s1)
            + &self.nc.n11 * self.tau_poly(&s2) / (&jr * &kr);
        Ok(ScaledExact {
            p,
            q: -bracket / &self.sp.tbar_sq,
        })
    }

    /// Float evaluation by the term recurrence
    /// `w_{p+1} = w_p tau (j-p)(k-p) / (p+1)^2`.
    ///
    /// The ratio is decreasing in `p`, so once it is below 1/2 the remaining
    /// terms sum to at most twice the next one. The sum stops when that bound
    /// is negligible and the bound is added to both envelopes.
    pub fn float(&self, j: u64, k: u64) -> Result<ScaledFloat> {
        check_not_constant(j, k)?;
        let f = &self.f;
        if k == 0 {
            let p = f.alpha / j as f64;
            return Ok(ScaledFloat {
                p,
                p_env: p,
                q: f.q_row,
                q_env: f.q_row.abs(),
            });
        }
        if j == 0 {
            let p = f.beta / k as f64;
            return Ok(ScaledFloat {
                p,
                p_env: p,
                q: f.q_col,
                q_env: f.q_col.abs(),
            });
        }
        let (jf, kf) = (j as f64, k as f64);
        let (ag, ah1, ah2, an11) = (f.g.abs(), f.h1.abs(), f.h2.abs(), f.n11.abs());
        let (mut sp, mut sq, mut se) = (0.0, 0.0, 0.0);
        let (mut p_tail, mut q_tail) = (0.0, 0.0);
        let mut w = 1.0f64;
        let mut w_max = 1.0f64;
        for p in 0..=j.min(k) {
            let pf = p as f64;
            let (x, y) = (pf / jf, pf / kf);
            sp += w * ((jf - pf) / jf) * ((kf - pf) / kf) / (pf + 1.0);
            sq += w * (f.g - x * f.h1 - y * f.h2 + f.n11 * x * y);
            se += w * (ag + x * ah1 + y * ah2 + an11 * x * y);
            let ratio = f.tau * (jf - pf) * (kf - pf) / ((pf + 1.0) * (pf + 1.0));
            w *= ratio;
            w_max = w_max.max(w);
            if w == 0.0 {
                break;
            }
            if ratio < 0.5 && w < TRUNCATE_REL * w_max {
                p_tail = 2.0 * w;
                q_tail = 2.0 * w * (ag + ah1 + ah2 + an11);
                break;
            }
        }
        let p = f.ab_tau * sp;
        Ok(ScaledFloat {
            p,
            p_env: p + f.ab_tau * p_tail,
            q: -sq * f.inv_tbar_sq,
            q_env: (se + q_tail) * f.inv_tbar_sq,
        })
    }

    /// Scaled `R` in the requested mode. In float mode a doubtful sign is
    /// settled by exact recomputation.
    pub fn r_confirmed(
        &self,
        j: u64,
        k: u64,
        c_sq: &BigRational,
        c_sq_f: f64,
        mode: Mode,
    ) -> Result<ScaledR> {
        if mode == Mode::Float {
            let v = self.float(j, k)?;
            if !v.r_doubtful(c_sq_f) {
                let value = v.r(c_sq_f);
                return Ok(ScaledR {
                    value,
                    sign: value.partial_cmp(&0.0).expect("finite"),
                    exact: None,
                });
            }
        }
        let e = self.exact(j, k)?;
        let r = e.p + c_sq * e.q;
        Ok(ScaledR {
            value: to_f64(&r),
            sign: r.cmp(&BigRational::zero()),
            exact: Some(r),
        })
    }
}

/// A coefficient value from either evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Exact(BigRational),
    Float(f64),
}

impl Value {
    pub fn to_f64(&self) -> f64 {
        match self {
            Value::Exact(x) => to_f64(x),
            Value::Float(x) => *x,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Exact(x) => f.write_str(&format_rational(x)),
            Value::Float(x) => f.write_str(&format_f64(*x)),
        }
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientCell {
    pub j: u64,
    pub k: u64,
    #[serde(rename = "P")]
    pub p: Value,
    #[serde(rename = "Q")]
    pub q: Value,
    #[serde(rename = "R")]
    pub r: Value,
}

/// Unscaled `P`, `Q`, `R` over an index set, in input order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientGrid {
    pub mode: Mode,
    #[serde(with = "serde_rational")]
    pub t: BigRational,
    #[serde(with = "serde_rational")]
    pub c_sq: BigRational,
    pub cells: Vec<CoefficientCell>,
}

pub fn coefficient_grid(
    canon: &CanonicalProblem,
    t: &BigRational,
    c_sq: &BigRational,
    indices: &[(u64, u64)],
    mode: Mode,
) -> Result<CoefficientGrid> {
    let kernel = ScaledKernel::for_problem(canon, t)?;
    let c_sq_f = to_f64(c_sq);
    let cells = indices
        .par_iter()
        .map(|&(j, k)| -> Result<CoefficientCell> {
            let exact_cell = || -> Result<CoefficientCell> {
                let e = kernel.exact(j, k)?;
                let pre = kernel.exact_prefactor(j, k);
                let r = &e.p + c_sq * &e.q;
                Ok(CoefficientCell {
                    j,
                    k,
                    p: Value::Exact(e.p * &pre),
                    q: Value::Exact(e.q * &pre),
                    r: Value::Exact(r * pre),
                })
            };
            match mode {
                Mode::Exact => exact_cell(),
                Mode::Float => {
                    let v = kernel.float(j, k)?;
                    let pre = kernel.ln_prefactor(j, k).exp();
                    let (q, r) = if v.q_doubtful() || v.r_doubtful(c_sq_f) {
                        let e = kernel.exact(j, k)?;
                        let r = &e.p + c_sq * &e.q;
                        (to_f64(&e.q), to_f64(&r))
                    } else {
                        (v.q, v.r(c_sq_f))
                    };
                    Ok(CoefficientCell {
                        j,
                        k,
                        p: Value::Float(v.p * pre),
                        q: Value::Float(q * pre),
                        r: Value::Float(r * pre),
                    })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoefficientGrid {
        mode,
        t: t.clone(),
        c_sq: c_sq.clone(),
        cells,
    })
}

impl CoefficientGrid {
    /// CSV with columns `j,k,P,Q,R,mode`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::InvalidParameter(format!("csv write failed: {e}"));
        w.write_record(["j", "k", "P", "Q", "R", "mode"])
            .map_err(err)?;
        let mode = self.mode.to_string();
        for c in &self.cells {
            w.write_record([
                c.j.to_string(),
                c.k.to_string(),
                c.p.to_string(),
                c.q.to_string(),
                c.r.to_string(),
                mode.clone(),
            ])
            .map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidParameter(format!("csv write failed: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;

    fn canon(a: BigRational, b: BigRational, case: ShiftCase) -> CanonicalProblem {
        CanonicalProblem::from_ab(a, b, case).unwrap()
    }

    fn worked() -> (SeriesParams, NumeratorCoeffs) {
        let c = canon(int(4), rat(1, 2), ShiftCase::EqualShift);
        (
            params(&c, &int(10)).unwrap(),
            numerator_coeffs(&c, &int(10)),
        )
    }

    #[test]
    fn params_worked_example() {
        let (sp, _) = worked();
        assert_eq!(sp.alpha, rat(70, 73));
        assert_eq!(sp.beta, rat(105, 146));
        assert_eq!(sp.p_param, rat(50, 73));
        assert_eq!(sp.one_minus_theta, rat(1, 147));
        assert_eq!(sp.tbar_sq, int(146));
        assert_eq!(&sp.alpha * &sp.beta * &sp.theta, sp.p_param);
    }

    #[test]
    fn params_rejects_bad_t() {
        let c = canon(int(4), rat(1, 2), ShiftCase::EqualShift);
        assert_eq!(params(&c, &int(0)).unwrap_err(), Error::NonPositiveT);
        assert_eq!(params(&c, &int(-1)).unwrap_err(), Error::NonPositiveT);
        let deg = canon(int(2), rat(1, 2), ShiftCase::EqualShift);
        assert_eq!(params(&deg, &int(1)).unwrap_err(), Error::Degenerate);
    }

    #[test]
    fn alpha_increases_in_t() {
        let c = canon(int(4), rat(1, 2), ShiftCase::EqualShift);
        let alphas: Vec<_> = (0..10)
            .map(|e| params(&c, &int(1 << e)).unwrap().alpha)
            .collect();
        assert!(alphas.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn numerator_worked_examples() {
        let t = int(10);
        let n = |case| {
            let nc = numerator_coeffs(&canon(int(4), rat(1, 2), case), &t);
            [nc.n00, nc.n10, nc.n01, nc.n11]
        };
        assert_eq!(
            n(ShiftCase::EqualShift),
            [int(270), int(-260), int(-260), int(250)]
        );
        assert_eq!(
            n(ShiftCase::OppositeShift),
            [int(670), int(-660), int(-660), int(650)]
        );
        assert_eq!(
            n(ShiftCase::SingleShift),
            [int(60), int(-60), int(-50), int(50)]
        );
    }

    #[test]
    fn d_and_c_examples() {
        let zero = BigRational::zero();
        for j in 0..5 {
            for k in 0..5 {
                assert!(d_jk(&zero, j, k).is_one());
                if j > 0 && k > 0 {
                    assert!(c_jk(&zero, j, k).unwrap().is_zero());
                }
            }
        }
        let tau = rat(1, 147);
        assert_eq!(d_jk(&tau, 1, 1), int(1) + &tau);
        assert_eq!(d_jk(&tau, 0, 7), int(1));
        assert_eq!(c_jk(&tau, 1, 1).unwrap(), tau);
        assert_eq!(c_jk(&tau, 5, 0).unwrap(), rat(1, 5));
        assert_eq!(c_jk(&tau, 0, 3).unwrap(), rat(1, 3));
        assert_eq!(c_jk(&tau, 0, 0).unwrap_err(), Error::ConstantIndex);
        assert_eq!(c_jk(&tau, 3, 5).unwrap(), c_jk(&tau, 5, 3).unwrap());
        assert_eq!(d_jk(&tau, 3, 5), d_jk(&tau, 5, 3));
    }

    #[test]
    fn p_and_q_worked_values() {
        let (sp, nc) = worked();
        assert_eq!(p_jk(&sp, 1, 1).unwrap(), rat(25, 5329));
        assert_eq!(p_jk(&sp, 2, 0).unwrap(), &sp.alpha * &sp.alpha / int(2));
        assert_eq!(q_jk(&sp, &nc, 1, 0).unwrap(), rat(40, 5329));
        let t = &sp.t;
        let gamma = rat(5, 2);
        let closed = -(&gamma * t * t * (&sp.alpha - int(1)) + t * (int(2) * &sp.alpha - int(1)))
            / &sp.tbar_sq;
        assert_eq!(q_jk(&sp, &nc, 1, 0).unwrap(), closed);
        assert_eq!(p_jk(&sp, 0, 0).unwrap_err(), Error::ConstantIndex);
        assert_eq!(q_jk(&sp, &nc, 0, 0).unwrap_err(), Error::ConstantIndex);
    }

    #[test]
    fn boundary_rows_match_closed_forms() {
        let t = int(7);
        for case in ShiftCase::ALL {
            let c = canon(int(3), rat(5, 4), case);
            let sp = params(&c, &t).unwrap();
            let nc = numerator_coeffs(&c, &t);
            let w = c.quadratic_weight();
            let t2 = &t * &t;
            for n in 1..6u64 {
                let ra = pow(&sp.alpha, n - 1);
                let rb = pow(&sp.beta, n - 1);
                let (row, col) = match case {
                    ShiftCase::SingleShift => (
                        (&c.b * &t2 + &t) * (int(1) - &sp.alpha) * &ra / &sp.tbar_sq,
                        (&c.b * &t2 * (int(1) - &sp.beta) - &sp.beta * &t) * &rb / &sp.tbar_sq,
                    ),
                    _ => (
                        -(&w * &t2 * (&sp.alpha - int(1)) + &t * (int(2) * &sp.alpha - int(1)))
                            * &ra
                            / &sp.tbar_sq,
                        -(&w * &t2 * (&sp.beta - int(1)) + &t * (int(2) * &sp.beta - int(1))) * &rb
                            / &sp.tbar_sq,
                    ),
                };
                assert_eq!(q_jk(&sp, &nc, n, 0).unwrap(), row, "{case:?} row {n}");
                assert_eq!(q_jk(&sp, &nc, 0, n).unwrap(), col, "{case:?} col {n}");
            }
        }
    }

    /// Sum over `p <= j` of the per-term bracket in the shifted form, for
    /// `1 <= j <= k`, as an independent cross-check of the recombination.
    fn q_shifted_sum(sp: &SeriesParams, c: &CanonicalProblem, j: u64, k: u64) -> BigRational {
        let t = &sp.t;
        let w = c.quadratic_weight();
        let (u, v) = (int(1) - &sp.alpha, int(1) - &sp.beta);
        let tau = &sp.one_minus_theta;
        let mut total = BigRational::zero();
        for p in 0..=j {
            let x = rat(p as i64, j as i64);
            let y = rat(p as i64, k as i64);
            let quad =
                -(&w * t * t) * (&u * &v - &v * &x - &u * &y + tau * (int(1) - &x) * (int(1) - &y));
            let lin = match c.case_label {
                ShiftCase::SingleShift => t * &sp.beta * (&u - &x),
                _ => t * (&sp.alpha * (&v - &y) + &sp.beta * (&u - &x)),
            };
            total += pow(tau, p)
                * BigRational::from_integer(binomial(j, p) * binomial(k, p))
                * (quad + lin);
        }
        total * pow(&sp.alpha, j - 1) * pow(&sp.beta, k - 1) / &sp.tbar_sq
    }

    #[test]
    fn interior_q_matches_shifted_sum() {
        let t = int(9);
        for case in ShiftCase::ALL {
            let c = canon(rat(6, 5), int(5), case);
            let sp = params(&c, &t).unwrap();
            let nc = numerator_coeffs(&c, &t);
            for j in 1..5 {
                for k in j..8 {
                    assert_eq!(q_jk(&sp, &nc, j, k).unwrap(), q_shifted_sum(&sp, &c, j, k));
                }
            }
        }
    }

    #[test]
    fn swap_symmetry() {
        let t = rat(13, 2);
        let c_sq = rat(7, 3);
        for case in [ShiftCase::EqualShift, ShiftCase::OppositeShift] {
            let c1 = canon(int(4), rat(1, 2), case);
            let c2 = canon(rat(1, 2), int(4), case);
            let (sp1, nc1) = (params(&c1, &t).unwrap(), numerator_coeffs(&c1, &t));
            let (sp2, nc2) = (params(&c2, &t).unwrap(), numerator_coeffs(&c2, &t));
            for j in 0..6 {
                for k in 0..6 {
                    if j + k == 0 {
                        continue;
                    }
                    assert_eq!(p_jk(&sp1, j, k).unwrap(), p_jk(&sp2, k, j).unwrap());
                    assert_eq!(
                        r_jk(&sp1, &nc1, &c_sq, j, k).unwrap(),
                        r_jk(&sp2, &nc2, &c_sq, k, j).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn r_is_affine_in_c_sq() {
        let (sp, nc) = worked();
        let r0 = r_jk(&sp, &nc, &int(0), 2, 3).unwrap();
        let r1 = r_jk(&sp, &nc, &int(1), 2, 3).unwrap();
        let c_sq = rat(11, 7);
        assert_eq!(r0, p_jk(&sp, 2, 3).unwrap());
        assert_eq!(
            r_jk(&sp, &nc, &c_sq, 2, 3).unwrap(),
            &r0 + &c_sq * (&r1 - &r0)
        );
        assert_eq!(
            r_jk(&sp, &nc, &int(1), 1, 0).unwrap(),
            rat(70, 73) + rat(40, 5329)
        );
    }

    #[test]
    fn decomposition_sums_to_r() {
        let t = int(11);
        for case in ShiftCase::ALL {
            let c = canon(int(4), rat(1, 2), case);
            let sp = params(&c, &t).unwrap();
            let nc = numerator_coeffs(&c, &t);
            for (j, k) in [(1, 1), (2, 5), (5, 2), (4, 4), (3, 9)] {
                for c_sq in [int(0), rat(3, 2), int(40)] {
                    let terms = decompose_r(&sp, &nc, &c_sq, j, k).unwrap();
                    assert_eq!(terms.len() as u64, j.min(k) + 1);
                    let total: BigRational = terms.iter().sum();
                    assert_eq!(total, r_jk(&sp, &nc, &c_sq, j, k).unwrap());
                }
            }
        }
        let (sp, nc) = worked();
        assert_eq!(
            decompose_r(&sp, &nc, &int(1), 0, 3).unwrap_err(),
            Error::BoundaryIndex(0, 3)
        );
    }

    #[test]
    fn decomposition_at_zero_shift_is_p_series() {
        let (sp, nc) = worked();
        let (j, k) = (3u64, 5u64);
        let terms = decompose_r(&sp, &nc, &int(0), j, k).unwrap();
        let tau = &sp.one_minus_theta;
        for (p, term) in terms.iter().enumerate() {
            let p = p as u64;
            let expected = pow(&sp.alpha, j)
                * pow(&sp.beta, k)
                * pow(tau, p + 1)
                * BigRational::from_integer(binomial(j, p) * binomial(k, p))
                * BigRational::new(((j - p) * (k - p)).into(), ((p + 1) * j * k).into());
            assert_eq!(term, &expected);
        }
    }

    #[test]
    fn decomposition_p0_is_index_free() {
        let (sp, nc) = worked();
        let c_sq = rat(5, 3);
        let base = decompose_r(&sp, &nc, &c_sq, 1, 1).unwrap()[0].clone();
        for (j, k) in [(2u64, 3u64), (4, 1), (6, 6)] {
            let t0 = &decompose_r(&sp, &nc, &c_sq, j, k).unwrap()[0];
            let scaled = t0 / (pow(&sp.alpha, j - 1) * pow(&sp.beta, k - 1));
            assert_eq!(scaled, base);
        }
    }

    #[test]
    fn decomposition_terms_nonnegative_when_zeta_negative() {
        let c = canon(int(2), int(2), ShiftCase::EqualShift);
        let t = int(64);
        let sp = params(&c, &t).unwrap();
        let nc = numerator_coeffs(&c, &t);
        for c_sq in [int(1), int(4), int(100)] {
            let terms = decompose_r(&sp, &nc, &c_sq, 4, 4).unwrap();
            assert!(terms.iter().all(|x| !x.is_negative()));
        }
    }

    #[test]
    fn scaled_exact_matches_unscaled() {
        let t = int(10);
        for case in ShiftCase::ALL {
            let c = canon(int(4), rat(1, 2), case);
            let kernel = ScaledKernel::for_problem(&c, &t).unwrap();
            let (sp, nc) = (kernel.params().clone(), kernel.numerator().clone());
            for j in 0..9 {
                for k in 0..9 {
                    if j + k == 0 {
                        continue;
                    }
                    let e = kernel.exact(j, k).unwrap();
                    let pre = kernel.exact_prefactor(j, k);
                    assert_eq!(&e.p * &pre, p_jk(&sp, j, k).unwrap(), "P {j} {k}");
                    assert_eq!(&e.q * &pre, q_jk(&sp, &nc, j, k).unwrap(), "Q {j} {k}");
                }
            }
        }
    }

    #[test]
    fn float_tracks_exact() {
        let t = int(32);
        for case in ShiftCase::ALL {
            let c = canon(int(4), rat(1, 2), case);
            let kernel = ScaledKernel::for_problem(&c, &t).unwrap();
            for (j, k) in [
                (1, 1),
                (3, 40),
                (40, 3),
                (25, 25),
                (7, 0),
                (0, 9),
                (300, 2),
                (60, 60),
            ] {
                let e = kernel.exact(j, k).unwrap();
                let f = kernel.float(j, k).unwrap();
                let (ep, eq) = (to_f64(&e.p), to_f64(&e.q));
                assert!(
                    (f.p - ep).abs() <= 1e-13 * ep.abs(),
                    "P {j} {k}: {} vs {ep}",
                    f.p
                );
                assert!(
                    (f.q - eq).abs() <= 1e-13 * f.q_env,
                    "Q {j} {k}: {} vs {eq}",
                    f.q
                );
            }
        }
    }

    #[test]
    fn large_index_float_is_finite() {
        let c = canon(int(4), rat(1, 2), ShiftCase::EqualShift);
        let kernel = ScaledKernel::for_problem(&c, &int(64)).unwrap();
        let f = kernel.float(17000, 1).unwrap();
        assert!(f.p.is_finite() && f.p > 0.0 && f.q.is_finite());
        assert!(kernel.ln_prefactor(17000, 1) < -100.0);
    }

    #[test]
    fn confirmation_settles_exact_zero() {
        let (sp, nc) = worked();
        let kernel = ScaledKernel::new(&sp, &nc);
        let e = kernel.exact(2, 3).unwrap();
        assert!(e.q.is_negative());
        let c_sq = -&e.p / &e.q;
        let r = kernel
            .r_confirmed(2, 3, &c_sq, to_f64(&c_sq), Mode::Float)
            .unwrap();
        assert_eq!(r.sign, Ordering::Equal);
        assert_eq!(r.exact, Some(BigRational::zero()));
    }

    #[test]
    fn asymptotic_identities_and_orders() {
        let c = canon(int(4), rat(1, 2), ShiftCase::EqualShift);
        let rep = asymptotic_check(&c, &int(10)).unwrap();
        assert!(rep.identities.all());
        assert_eq!(rep.residual_one_minus_theta, rat(1, 147) - rat(55, 10000));
        let mut prev_a = f64::INFINITY;
        for e in 4..=12 {
            let t = int(1 << e);
            let rep = asymptotic_check(&c, &t).unwrap();
            let tf = (1u64 << e) as f64;
            let ra = to_f64(&rep.residual_one_minus_alpha).abs() * tf.powi(3);
            let rt = to_f64(&rep.residual_one_minus_theta).abs() * tf.powi(4);
            let rp = to_f64(&rep.residual_product).abs() * tf.powi(4);
            // Next-order coefficients are bounded by (a^2 + ab + b^2) / d^4 = 18.25
            // and its relatives at these parameters.
            assert!(ra < 10.0 && rt < 20.0 && rp < 100.0, "{e}: {ra} {rt} {rp}");
            if e > 6 {
                assert!((ra - prev_a).abs() < 0.1 * ra, "{e}: {prev_a} -> {ra}");
            }
            prev_a = ra;
        }
    }

    #[test]
    fn rho_identities_away_from_unit_d() {
        for (a, b) in [(int(3), int(1)), (int(5), int(2)), (rat(6, 5), int(5))] {
            let c = canon(a.clone(), b.clone(), ShiftCase::OppositeShift);
            assert!(asymptotic_check(&c, &rat(7, 3)).unwrap().identities.all());
            let rho = &a + &b + int(2);
            // The unit-d form holds only when d = 1.
            assert_ne!(&a * &rho - int(1), (&a + int(1)) * (&a + int(1)));
        }
    }

    #[test]
    fn leading_term_slope_matches_zeta_tilde() {
        // d^2 t^2 R_{jk0} / (alpha^{j-1} beta^{k-1}) -> 1 - 2 c^2 zeta_tilde / d.
        let c = canon(int(5), int(2), ShiftCase::OppositeShift);
        let t = int(100_000);
        let sp = params(&c, &t).unwrap();
        let nc = numerator_coeffs(&c, &t);
        let scale = pow(&sp.alpha, 1) * pow(&sp.beta, 2) / (&c.d * &c.d * &t * &t);
        let r0 = &decompose_r(&sp, &nc, &int(0), 2, 3).unwrap()[0] / &scale;
        let r1 = &decompose_r(&sp, &nc, &int(1), 2, 3).unwrap()[0] / &scale;
        let zt = case_constants(&c).unwrap().zeta_tilde;
        assert_eq!(zt, int(18));
        let slope = to_f64(&(r1 - r0));
        assert!((slope + 2.0 * to_f64(&(zt / &c.d))).abs() < 1e-3, "{slope}");
    }

    #[test]
    fn grid_modes_agree_in_sign() {
        let c = canon(int(4), rat(1, 2), ShiftCase::EqualShift);
        let idx: Vec<(u64, u64)> = (0..12)
            .flat_map(|j| (0..12).map(move |k| (j, k)))
            .skip(1)
            .collect();
        let c_sq = int(30);
        let ex = coefficient_grid(&c, &int(10), &c_sq, &idx, Mode::Exact).unwrap();
        let fl = coefficient_grid(&c, &int(10), &c_sq, &idx, Mode::Float).unwrap();
        for (a, b) in ex.cells.iter().zip(&fl.cells) {
            let (ra, rb) = (a.r.to_f64(), b.r.to_f64());
            assert_eq!(
                ra.partial_cmp(&0.0),
                rb.partial_cmp(&0.0),
                "({}, {})",
                a.j,
                a.k
            );
            assert!((ra - rb).abs() <= 1e-10 * ra.abs().max(1e-300));
        }
        let cell = &ex.cells.iter().find(|c| (c.j, c.k) == (1, 1)).unwrap();
        assert_eq!(cell.p, Value::Exact(rat(25, 5329)));
        let mut buf = Vec::new();
        ex.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("j,k,P,Q,R,mode\n0,1,"));
        assert!(text.contains("\n1,1,25/5329,"));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("exact".parse::<Mode>().unwrap(), Mode::Exact);
        assert_eq!("float".parse::<Mode>().unwrap(), Mode::Float);
        assert!("fast".parse::<Mode>().is_err());
    }
}
