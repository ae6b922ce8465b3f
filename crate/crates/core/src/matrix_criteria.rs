//! Exact M-matrix tests and the matrix characterizations of infinitely
//! divisible squares: the signature-conjugation criterion for mean-zero
//! vectors and the `C Gamma^{-1} C` criterion for shifted vectors.

use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rational::{format_rational, parse_rational};

pub const MIN_DIM: usize = 2;
pub const MAX_DIM: usize = 8;

/// Dense square matrix of exact rationals, `2 <= n <= 8`.
#[derive(Clone, PartialEq, Eq)]
pub struct SquareMatrix {
    n: usize,
    entries: Vec<BigRational>,
}

impl fmt::Debug for SquareMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<String>> = (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| format_rational(self.get(i, j)))
                    .collect()
            })
            .collect();
        f.debug_struct("SquareMatrix").field("rows", &rows).finish()
    }
}

impl SquareMatrix {
    pub fn from_rows(rows: Vec<Vec<BigRational>>) -> Result<Self> {
        let n = rows.len();
        if !(MIN_DIM..=MAX_DIM).contains(&n) {
            return Err(Error::Dimension(n));
        }
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::NotSquare);
        }
        Ok(Self {
            n,
            entries: rows.into_iter().flatten().collect(),
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::diagonal(vec![BigRational::one(); n])
    }

    pub fn diagonal(diag: Vec<BigRational>) -> Result<Self> {
        let n = diag.len();
        let rows = diag
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let mut row = vec![BigRational::zero(); n];
                row[i] = v;
                row
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &BigRational {
        &self.entries[i * self.n + j]
    }

    fn get_mut(&mut self, i: usize, j: usize) -> &mut BigRational {
        &mut self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<BigRational>> {
        self.entries.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Inverse by Gauss-Jordan elimination with exact pivots; `None` when
    /// singular.
    pub fn inverse(&self) -> Option<SquareMatrix> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = SquareMatrix::identity(n).expect("dimension already validated");
        for col in 0..n {
            let pivot = (col..n).find(|&r| !a.get(r, col).is_zero())?;
            if pivot != col {
                for j in 0..n {
                    a.entries.swap(pivot * n + j, col * n + j);
                    inv.entries.swap(pivot * n + j, col * n + j);
                }
            }
            let p = a.get(col, col).recip();
            for j in 0..n {
                *a.get_mut(col, j) *= &p;
                *inv.get_mut(col, j) *= &p;
            }
            for r in 0..n {
                if r == col || a.get(r, col).is_zero() {
                    continue;
                }
                let f = a.get(r, col).clone();
                for j in 0..n {
                    let da = &f * a.get(col, j);
                    let di = &f * inv.get(col, j);
                    *a.get_mut(r, j) -= da;
                    *inv.get_mut(r, j) -= di;
                }
            }
        }
        Some(inv)
    }

    /// `D A D` for a diagonal `D` given by its entries.
    pub fn conjugate_diagonal(&self, diag: &[BigRational]) -> Result<SquareMatrix> {
        if diag.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: diag.len(),
            });
        }
        let mut out = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                *out.get_mut(i, j) *= &diag[i] * &diag[j];
            }
        }
        Ok(out)
    }

    /// Sylvester's criterion on the leading principal minors.
    pub fn is_positive_definite(&self) -> bool {
        if !self.is_symmetric() {
            return false;
        }
        // The k-th pivot of unpivoted elimination is the ratio of consecutive
        // leading minors.
        let n = self.n;
        let mut a = self.clone();
        for k in 0..n {
            let p = a.get(k, k).clone();
            if !p.is_positive() {
                return false;
            }
            for r in (k + 1)..n {
                let f = a.get(r, k) / &p;
                if f.is_zero() {
                    continue;
                }
                for j in k..n {
                    let v = &f * a.get(k, j);
                    *a.get_mut(r, j) -= v;
                }
            }
        }
        true
    }

    /// Connectivity of the graph whose edges are the nonzero off-diagonal
    /// entries.
    pub fn is_irreducible(&self) -> bool {
        let n = self.n;
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for (j, s) in seen.iter_mut().enumerate() {
                if !*s && (!self.get(i, j).is_zero() || !self.get(j, i).is_zero()) {
                    *s = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Parses `[["2","1"],["1","2"]]`.
    pub fn from_json(text: &str) -> Result<Self> {
        let rows: Vec<Vec<String>> = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "matrix JSON",
            input: text.chars().take(64).collect(),
            reason: e.to_string(),
        })?;
        let n = rows.len();
        if !(MIN_DIM..=MAX_DIM).contains(&n) {
            return Err(Error::Dimension(n));
        }
        let rows = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|s| parse_rational(s))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows)
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Vec<String>> = (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| format_rational(self.get(i, j)))
                    .collect()
            })
            .collect();
        serde_json::to_string(&rows).expect("strings serialize")
    }
}

/// Nonpositive off-diagonals, nonsingular, entrywise nonnegative inverse.
pub fn is_m_matrix(a: &SquareMatrix) -> bool {
    let n = a.dim();
    let off_ok = (0..n).all(|i| (0..n).all(|j| i == j || !a.get(i, j).is_positive()));
    if !off_ok {
        return false;
    }
    match a.inverse() {
        Some(inv) => inv.entries.iter().all(|x| !x.is_negative()),
        None => false,
    }
}

/// Every row sums to a nonnegative value.
pub fn has_nonnegative_row_sums(a: &SquareMatrix) -> bool {
    (0..a.dim()).all(|i| {
        let s: BigRational = (0..a.dim()).map(|j| a.get(i, j)).sum();
        !s.is_negative()
    })
}

/// Diagonal `+-1` matrix, stored as its sign pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature(pub Vec<i8>);

impl Signature {
    fn from_mask(mask: u32, n: usize) -> Self {
        Signature(
            (0..n)
                .map(|i| if mask >> i & 1 == 1 { -1 } else { 1 })
                .collect(),
        )
    }

    pub fn diag(&self) -> Vec<BigRational> {
        self.0
            .iter()
            .map(|&s| BigRational::from_integer(s.into()))
            .collect()
    }
}

/// Mean-zero criterion: `G^2` is infinitely divisible iff some signature
/// matrix `N` makes `N Gamma^{-1} N` an M-matrix. All `2^n` signatures are
/// tried in order of their bit mask; the first hit is returned.
pub fn bapat_id_criterion(gamma: &SquareMatrix) -> Result<(bool, Option<Signature>)> {
    if !gamma.is_positive_definite() {
        return Err(Error::NotPositiveDefinite);
    }
    let inv = gamma.inverse().ok_or(Error::NotPositiveDefinite)?;
    let n = gamma.dim();
    for mask in 0..(1u32 << n) {
        let sig = Signature::from_mask(mask, n);
        if is_m_matrix(&inv.conjugate_diagonal(&sig.diag())?) {
            return Ok((true, Some(sig)));
        }
    }
    Ok((false, None))
}

/// Shifted criterion: `(G + c alpha)^2` is infinitely divisible for every
/// `alpha` iff `C Gamma^{-1} C` is an M-matrix with nonnegative row sums.
pub fn ek_criterion(gamma: &SquareMatrix, c: &[BigRational]) -> Result<bool> {
    if c.len() != gamma.dim() {
        return Err(Error::DimensionMismatch {
            expected: gamma.dim(),
            found: c.len(),
        });
    }
    if c.iter().all(Zero::is_zero) {
        return Err(Error::ZeroShift);
    }
    if !gamma.is_positive_definite() {
        return Err(Error::NotPositiveDefinite);
    }
    if !gamma.is_irreducible() {
        return Err(Error::Reducible);
    }
    let inv = gamma.inverse().ok_or(Error::NotPositiveDefinite)?;
    let m = inv.conjugate_diagonal(c)?;
    Ok(is_m_matrix(&m) && has_nonnegative_row_sums(&m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, rat};

    fn m(rows: &[&[(i64, i64)]]) -> SquareMatrix {
        SquareMatrix::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&(p, q)| rat(p, q)).collect())
                .collect(),
        )
        .unwrap()
    }

    fn mi(rows: &[&[i64]]) -> SquareMatrix {
        SquareMatrix::from_rows(
            rows.iter()
                .map(|r| r.iter().map(|&v| int(v)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn m_matrix_examples() {
        let a = mi(&[&[2, -1], &[-1, 2]]);
        assert!(is_m_matrix(&a));
        assert_eq!(
            a.inverse().unwrap(),
            m(&[&[(2, 3), (1, 3)], &[(1, 3), (2, 3)]])
        );
        assert!(!is_m_matrix(&mi(&[&[1, 2], &[2, 1]])));
        assert!(!is_m_matrix(&mi(&[&[1, -1], &[-1, 1]])));
    }

    #[test]
    fn m_matrix_3x3() {
        // Tridiagonal Laplacian plus identity: a classic nonsingular M-matrix.
        let a = mi(&[&[3, -1, 0], &[-1, 3, -1], &[0, -1, 3]]);
        assert!(is_m_matrix(&a));
        // Nonpositive off-diagonals but an indefinite matrix.
        let b = mi(&[&[1, -2, 0], &[-2, 1, 0], &[0, 0, 1]]);
        assert!(!is_m_matrix(&b));
    }

    #[test]
    fn bapat_examples() {
        let (ok, w) = bapat_id_criterion(&mi(&[&[2, 1], &[1, 2]])).unwrap();
        assert!(ok);
        assert_eq!(w, Some(Signature(vec![1, 1])));
        let (ok, w) = bapat_id_criterion(&mi(&[&[2, -1], &[-1, 2]])).unwrap();
        assert!(ok);
        assert_eq!(w, Some(Signature(vec![-1, 1])));
        assert_eq!(
            bapat_id_criterion(&mi(&[&[1, 2], &[2, 1]])).unwrap_err(),
            Error::NotPositiveDefinite
        );
    }

    #[test]
    fn bapat_3x3_negative() {
        let g = m(&[
            &[(1, 1), (1, 2), (1, 2)],
            &[(1, 2), (1, 1), (-1, 2)],
            &[(1, 2), (-1, 2), (1, 1)],
        ]);
        // Singular.
        assert!(bapat_id_criterion(&g).is_err());
        let g = m(&[
            &[(1, 1), (2, 5), (2, 5)],
            &[(2, 5), (1, 1), (-2, 5)],
            &[(2, 5), (-2, 5), (1, 1)],
        ]);
        // Inverse off-diagonal signs multiply to +1 around the cycle.
        let (ok, w) = bapat_id_criterion(&g).unwrap();
        assert!(!ok);
        assert!(w.is_none());
    }

    #[test]
    fn ek_examples() {
        let g = mi(&[&[2, 1], &[1, 2]]);
        assert!(ek_criterion(&g, &[int(1), int(1)]).unwrap());
        assert!(!ek_criterion(&g, &[int(1), int(-1)]).unwrap());
        let g = m(&[&[(4, 1), (1, 1)], &[(1, 1), (1, 2)]]);
        assert!(!ek_criterion(&g, &[int(1), int(1)]).unwrap());
        assert!(ek_criterion(&g, &[int(2), int(1)]).unwrap());
        assert_eq!(
            ek_criterion(&g, &[int(0), int(0)]).unwrap_err(),
            Error::ZeroShift
        );
        let diag = mi(&[&[2, 0], &[0, 2]]);
        assert_eq!(
            ek_criterion(&diag, &[int(1), int(1)]).unwrap_err(),
            Error::Reducible
        );
    }

    #[test]
    fn dimension_bounds() {
        assert_eq!(
            SquareMatrix::from_rows(vec![vec![int(1)]]).unwrap_err(),
            Error::Dimension(1)
        );
        assert_eq!(
            SquareMatrix::from_rows(vec![vec![int(1), int(2)], vec![int(1)]]).unwrap_err(),
            Error::NotSquare
        );
        assert!(SquareMatrix::identity(9).is_err());
    }

    #[test]
    fn json_round_trip() {
        let a = SquareMatrix::from_json(r#"[["4","1"],["1","1/2"]]"#).unwrap();
        assert_eq!(a.get(1, 1), &rat(1, 2));
        assert_eq!(a.to_json(), r#"[["4","1"],["1","1/2"]]"#);
        assert!(SquareMatrix::from_json(r#"[["1"]]"#).is_err());
        assert!(SquareMatrix::from_json(r#"[["1","x"],["1","1"]]"#).is_err());
    }

    #[test]
    fn irreducibility() {
        assert!(mi(&[&[2, 1, 0], &[1, 2, 1], &[0, 1, 2]]).is_irreducible());
        assert!(!mi(&[&[2, 1, 0], &[1, 2, 0], &[0, 0, 2]]).is_irreducible());
    }
}
