//! Truncated bivariate power series over exact rationals.
//!
//! This module is deliberately naive: it expands the generating functions
//! directly from the covariance entries and the Laplace exponent, without
//! going through any of the closed forms in [`crate::coefficients`], so the
//! two can be checked against each other.

use std::io::{Read, Write};

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CanonicalProblem, ShiftCase};
use crate::rational::{format_rational, int, parse_rational};

/// Coefficients of `sum x_{jk} u1^j u2^k` for `j <= max_deg1`, `k <= max_deg2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BivariateSeries {
    max_deg1: usize,
    max_deg2: usize,
    coeffs: Vec<BigRational>,
}

impl BivariateSeries {
    pub fn zero(max_deg1: usize, max_deg2: usize) -> Self {
        Self {
            max_deg1,
            max_deg2,
            coeffs: vec![BigRational::zero(); (max_deg1 + 1) * (max_deg2 + 1)],
        }
    }

    pub fn one(max_deg1: usize, max_deg2: usize) -> Self {
        let mut s = Self::zero(max_deg1, max_deg2);
        s.set(0, 0, BigRational::one());
        s
    }

    /// Builds a series from `(j, k, value)` terms; terms beyond the orders are
    /// dropped and repeated indices accumulate.
    pub fn from_terms(
        max_deg1: usize,
        max_deg2: usize,
        terms: impl IntoIterator<Item = (usize, usize, BigRational)>,
    ) -> Self {
        let mut s = Self::zero(max_deg1, max_deg2);
        for (j, k, v) in terms {
            if j <= max_deg1 && k <= max_deg2 {
                let slot = s.slot(j, k);
                s.coeffs[slot] += v;
            }
        }
        s
    }

    pub fn max_deg1(&self) -> usize {
        self.max_deg1
    }

    pub fn max_deg2(&self) -> usize {
        self.max_deg2
    }

    fn slot(&self, j: usize, k: usize) -> usize {
        j * (self.max_deg2 + 1) + k
    }

    /// Coefficient at `(j, k)`; zero outside the truncation.
    pub fn get(&self, j: usize, k: usize) -> BigRational {
        if j <= self.max_deg1 && k <= self.max_deg2 {
            self.coeffs[self.slot(j, k)].clone()
        } else {
            BigRational::zero()
        }
    }

    fn at(&self, j: usize, k: usize) -> &BigRational {
        &self.coeffs[self.slot(j, k)]
    }

    pub fn set(&mut self, j: usize, k: usize, v: BigRational) {
        let slot = self.slot(j, k);
        self.coeffs[slot] = v;
    }

    /// Nonzero entries in index order.
    pub fn nonzero_terms(&self) -> impl Iterator<Item = (usize, usize, &BigRational)> {
        let w = self.max_deg2 + 1;
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_zero())
            .map(move |(i, v)| (i / w, i % w, v))
    }

    pub fn truncate(&self, max_deg1: usize, max_deg2: usize) -> Self {
        let (j_max, k_max) = (max_deg1.min(self.max_deg1), max_deg2.min(self.max_deg2));
        let mut s = Self::zero(j_max, k_max);
        for j in 0..=j_max {
            for k in 0..=k_max {
                s.set(j, k, self.at(j, k).clone());
            }
        }
        s
    }

    pub fn scale(&self, factor: &BigRational) -> Self {
        let mut s = self.clone();
        s.coeffs.iter_mut().for_each(|v| *v *= factor);
        s
    }

    pub fn add(&self, other: &Self) -> Self {
        let (j_max, k_max) = (
            self.max_deg1.min(other.max_deg1),
            self.max_deg2.min(other.max_deg2),
        );
        let mut s = Self::zero(j_max, k_max);
        for j in 0..=j_max {
            for k in 0..=k_max {
                s.set(j, k, self.at(j, k) + other.at(j, k));
            }
        }
        s
    }

    /// Cauchy product truncated to the smaller orders.
    pub fn mul(&self, other: &Self) -> Self {
        let (j_max, k_max) = (
            self.max_deg1.min(other.max_deg1),
            self.max_deg2.min(other.max_deg2),
        );
        let mut s = Self::zero(j_max, k_max);
        for (a, b, x) in self.nonzero_terms() {
            if a > j_max || b > k_max {
                continue;
            }
            for j in a..=j_max {
                for k in b..=k_max {
                    let y = other.at(j - a, k - b);
                    if !y.is_zero() {
                        let slot = s.slot(j, k);
                        s.coeffs[slot] += x * y;
                    }
                }
            }
        }
        s
    }

    /// Multiplicative inverse by the recursion
    /// `y_{jk} = -(1/x_00) sum_{(a,b) != 0} x_{ab} y_{j-a,k-b}`.
    pub fn reciprocal(&self) -> Result<Self> {
        let x00 = self.at(0, 0);
        if x00.is_zero() {
            return Err(Error::ConstantTerm("nonzero"));
        }
        let inv0 = x00.recip();
        let rest: Vec<_> = self
            .nonzero_terms()
            .filter(|&(a, b, _)| a + b > 0)
            .collect();
        let mut y = Self::zero(self.max_deg1, self.max_deg2);
        for j in 0..=self.max_deg1 {
            for k in 0..=self.max_deg2 {
                let v = if j + k == 0 {
                    inv0.clone()
                } else {
                    let mut acc = BigRational::zero();
                    for &(a, b, x) in &rest {
                        if a <= j && b <= k {
                            acc += x * y.at(j - a, k - b);
                        }
                    }
                    -acc * &inv0
                };
                y.set(j, k, v);
            }
        }
        Ok(y)
    }

    /// `-log x` for a series with unit constant term, from the Euler-operator
    /// identity `E(log x) = E(x) / x`. The constant term of the result is 0.
    pub fn log_neg(&self) -> Result<Self> {
        if !self.at(0, 0).is_one() {
            return Err(Error::ConstantTerm("1"));
        }
        let rest: Vec<_> = self
            .nonzero_terms()
            .filter(|&(a, b, _)| a + b > 0)
            .collect();
        // l = log x; (j+k) l_jk = (j+k) x_jk - sum x_ab (j+k-a-b) l_{j-a,k-b}
        let mut l = Self::zero(self.max_deg1, self.max_deg2);
        for j in 0..=self.max_deg1 {
            for k in 0..=self.max_deg2 {
                let n = j + k;
                if n == 0 {
                    continue;
                }
                let mut acc = self.at(j, k) * int(n as i64);
                for &(a, b, x) in &rest {
                    if a <= j && b <= k && a + b < n {
                        acc -= x * l.at(j - a, k - b) * int((n - a - b) as i64);
                    }
                }
                l.set(j, k, acc / int(n as i64));
            }
        }
        l.coeffs.iter_mut().for_each(|v| *v = -v.clone());
        Ok(l)
    }

    /// Writes `j,k,value` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidParameter(format!("csv write failed: {e}"));
        for j in 0..=self.max_deg1 {
            for k in 0..=self.max_deg2 {
                w.serialize(SeriesRow {
                    j,
                    k,
                    value: format_rational(self.at(j, k)),
                })
                .map_err(io)?;
            }
        }
        w.flush()
            .map_err(|e| Error::InvalidParameter(format!("csv write failed: {e}")))
    }

    /// Reads rows written by [`write_csv`](Self::write_csv). Orders are the
    /// largest indices present; missing cells are zero.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut terms = Vec::new();
        for row in r.deserialize::<SeriesRow>() {
            let row = row.map_err(|e| Error::Parse {
                what: "series CSV",
                input: String::new(),
                reason: e.to_string(),
            })?;
            if row.j > MAX_CSV_ORDER || row.k > MAX_CSV_ORDER {
                return Err(Error::Parse {
                    what: "series CSV",
                    input: format!("{},{}", row.j, row.k),
                    reason: format!("index exceeds {MAX_CSV_ORDER}"),
                });
            }
            terms.push((row.j, row.k, parse_rational(&row.value)?));
        }
        let j_max = terms.iter().map(|t| t.0).max().unwrap_or(0);
        let k_max = terms.iter().map(|t| t.1).max().unwrap_or(0);
        if (j_max + 1) * (k_max + 1) > MAX_CSV_CELLS {
            return Err(Error::Parse {
                what: "series CSV",
                input: format!("{j_max},{k_max}"),
                reason: format!("table exceeds {MAX_CSV_CELLS} cells"),
            });
        }
        Ok(Self::from_terms(j_max, k_max, terms))
    }
}

/// Largest index accepted when reading a series dump.
pub const MAX_CSV_ORDER: usize = 4096;

/// Largest dense table accepted when reading a series dump.
pub const MAX_CSV_CELLS: usize = 1 << 20;

#[derive(Serialize, Deserialize)]
struct SeriesRow {
    j: usize,
    k: usize,
    value: String,
}

/// `H(s) = 1 + a l1 + b l2 + d l1 l2` with `l_i = t (1 - s_i)`, as a series
/// in `(s1, s2)`.
fn h_polynomial(canon: &CanonicalProblem, t: &BigRational, j: usize, k: usize) -> BivariateSeries {
    let (a, b, d) = (&canon.a, &canon.b, &canon.d);
    let t2 = t * t;
    BivariateSeries::from_terms(
        j,
        k,
        [
            (0, 0, int(1) + a * t + b * t + d * &t2),
            (1, 0, -(a * t) - d * &t2),
            (0, 1, -(b * t) - d * &t2),
            (1, 1, d * &t2),
        ],
    )
}

/// Laplace exponent numerator `N` divided by `c^2`, as a series in `(s1, s2)`.
fn numerator_polynomial(
    canon: &CanonicalProblem,
    t: &BigRational,
    j: usize,
    k: usize,
) -> BivariateSeries {
    // (1 - s1)(1 - s2), (1 - s1), (1 - s2)
    let both = [
        (0, 0, int(1)),
        (1, 0, int(-1)),
        (0, 1, int(-1)),
        (1, 1, int(1)),
    ];
    let first = [(0, 0, int(1)), (1, 0, int(-1))];
    let second = [(0, 0, int(1)), (0, 1, int(-1))];
    let t2 = t * t;
    let w = &canon.quadratic_weight() * &t2;
    let mut terms: Vec<(usize, usize, BigRational)> =
        both.into_iter().map(|(p, q, v)| (p, q, v * &w)).collect();
    terms.extend(first.into_iter().map(|(p, q, v)| (p, q, v * t)));
    if canon.case_label != ShiftCase::SingleShift {
        terms.extend(second.into_iter().map(|(p, q, v)| (p, q, v * t)));
    }
    BivariateSeries::from_terms(j, k, terms)
}

/// Series `P = -log H` (constant term dropped) and `Q = -N / H` whose
/// combination `exp((P + c^2 Q) / 2)` is the Laplace transform of the squared
/// shifted vector at `l_i = t (1 - s_i)`.
pub fn oracle_pq(
    canon: &CanonicalProblem,
    t: &BigRational,
    max_deg1: usize,
    max_deg2: usize,
) -> Result<(BivariateSeries, BivariateSeries)> {
    if !t.is_positive() {
        return Err(Error::NonPositiveT);
    }
    let h = h_polynomial(canon, t, max_deg1, max_deg2);
    let h0 = h.get(0, 0);
    let p = h.scale(&h0.recip()).log_neg()?;
    let q = numerator_polynomial(canon, t, max_deg1, max_deg2)
        .mul(&h.reciprocal()?)
        .scale(&int(-1));
    Ok((p, q))
}
