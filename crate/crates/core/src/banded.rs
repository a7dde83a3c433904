//! Banded matrices and their LU factorization with partial pivoting.
//!
//! Transport operators are tridiagonal in 1D and have bandwidth `n` in 2D
//! (five-point stencil, x-fastest ordering); the coupled Newton Jacobian of
//! the two-species problem is interleaved `(u_0, v_0, u_1, v_1, ...)` and has
//! bandwidth 2. A pivoting band LU covers all of these; for the M-matrices
//! produced by implicit transport steps no row swaps ever occur and it
//! reduces to the Thomas algorithm.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Square matrix stored by diagonals within `[-kl, ku]` of the main one.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    // row-major, row i holds columns i-kl ..= i+ku
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self {
            n,
            kl,
            ku,
            data: vec![T::zero(); n * (kl + ku + 1)],
        }
    }

    pub fn identity(n: usize, kl: usize, ku: usize) -> Self {
        let mut m = Self::zeros(n, kl, ku);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower_bandwidth(&self) -> usize {
        self.kl
    }

    pub fn upper_bandwidth(&self) -> usize {
        self.ku
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        i * (self.kl + self.ku + 1) + (j + self.kl - i)
    }

    /// Entry `(i, j)`; zero outside the band.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        if i < self.n && j < self.n && self.in_band(i, j) {
            self.data[self.offset(i, j)]
        } else {
            T::zero()
        }
    }

    /// Sets entry `(i, j)`. Panics when `(i, j)` lies outside the band.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        assert!(
            i < self.n && j < self.n && self.in_band(i, j),
            "({i}, {j}) outside band"
        );
        let k = self.offset(i, j);
        self.data[k] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(
            i < self.n && j < self.n && self.in_band(i, j),
            "({i}, {j}) outside band"
        );
        let k = self.offset(i, j);
        self.data[k] = self.data[k] + v;
    }

    /// Column index range stored for row `i`.
    #[inline]
    pub fn row_span(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    /// Iterates the stored entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        self.row_span(i)
            .map(move |j| (j, self.data[self.offset(i, j)]))
    }

    pub fn matvec_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for j in self.row_span(i) {
                acc = acc + self.data[self.offset(i, j)] * x[j];
            }
            *yi = acc;
        }
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn column_sums(&self) -> Vec<T> {
        let mut s = vec![T::zero(); self.n];
        for i in 0..self.n {
            for j in self.row_span(i) {
                s[j] = s[j] + self.data[self.offset(i, j)];
            }
        }
        s
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> T {
        (0..self.n)
            .map(|i| self.row(i).fold(T::zero(), |a, (_, v)| a + v.abs()))
            .fold(T::zero(), T::max)
    }

    /// `alpha * I + beta * self`, same band.
    pub fn shifted_scaled(&self, alpha: T, beta: T) -> Self {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = *v * beta;
        }
        for i in 0..self.n {
            out.add(i, i, alpha);
        }
        out
    }

    /// Adds `d[i]` to each diagonal entry.
    pub fn add_diagonal(&mut self, d: &[T]) {
        assert_eq!(d.len(), self.n);
        for (i, &di) in d.iter().enumerate() {
            self.add(i, i, di);
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn factor(&self) -> Result<BandLu<T>> {
        BandLu::new(self)
    }
}

/// LU factors of a [`BandMatrix`] with row pivoting (LAPACK `gbtrf` layout:
/// multipliers stay with the row they were computed on).
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    n: usize,
    kl: usize,
    // upper factor width, ku + kl to hold pivoting fill
    ku: usize,
    // columns actually touched by back substitution (original ku if no swaps)
    ku_used: usize,
    // row i holds columns i-kl ..= i+ku (left part unused after elimination)
    rows: Vec<T>,
    lower: Vec<T>,
    pivots: Vec<usize>,
    min_pivot: T,
    max_pivot: T,
}

impl<T: Scalar> BandLu<T> {
    fn new(a: &BandMatrix<T>) -> Result<Self> {
        let n = a.n;
        let kl = a.kl;
        let ku = a.ku + a.kl;
        let w = kl + ku + 1;
        let mut rows = vec![T::zero(); n * w];
        let at = |i: usize, j: usize| i * w + (j + kl - i);
        for i in 0..n {
            for j in a.row_span(i) {
                rows[at(i, j)] = a.get(i, j);
            }
        }
        let mut lower = vec![T::zero(); n * kl.max(1)];
        let mut pivots = vec![0usize; n];
        let mut min_pivot = T::infinity();
        let mut max_pivot = T::zero();
        let mut swapped = false;

        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + ku).min(n - 1);
            // partial pivoting within the band
            let mut p = k;
            let mut best = rows[at(k, k)].abs();
            for i in k + 1..=last_row {
                let v = rows[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            pivots[k] = p;
            if !(best > T::zero()) || !best.is_finite() {
                return Err(Error::SingularMatrix { row: k });
            }
            min_pivot = min_pivot.min(best);
            max_pivot = max_pivot.max(best);
            if p != k {
                swapped = true;
                for c in k..=last_col {
                    rows.swap(at(k, c), at(p, c));
                }
            }
            let piv = rows[at(k, k)];
            for i in k + 1..=last_row {
                let m = rows[at(i, k)] / piv;
                lower[k * kl + (i - k - 1)] = m;
                if m != T::zero() {
                    for c in k + 1..=last_col {
                        let ukc = rows[at(k, c)];
                        rows[at(i, c)] = rows[at(i, c)] - m * ukc;
                    }
                }
            }
        }
        Ok(Self {
            n,
            kl,
            ku,
            ku_used: if swapped { ku } else { a.ku },
            rows,
            lower,
            pivots,
            min_pivot,
            max_pivot,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Ratio of smallest to largest pivot magnitude; a cheap conditioning hint.
    pub fn pivot_ratio(&self) -> T {
        self.min_pivot / self.max_pivot
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [T]) -> Result<()> {
        if b.len() != self.n {
            return Err(Error::ShapeMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        let n = self.n;
        let kl = self.kl;
        let w = kl + self.ku + 1;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != T::zero() {
                let last_row = (k + kl).min(n - 1);
                for i in k + 1..=last_row {
                    b[i] = b[i] - self.lower[k * kl + (i - k - 1)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let base = k * w + kl - k;
            let last_col = (k + self.ku_used).min(n - 1);
            let mut acc = b[k];
            for c in k + 1..=last_col {
                acc = acc - self.rows[base + c] * b[c];
            }
            b[k] = acc / self.rows[base + k];
        }
        Ok(())
    }

    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    #[test]
    fn tridiagonal_solve_matches_known_solution() {
        let n = 6;
        let mut a = BandMatrix::<f64>::zeros(n, 1, 1);
        for i in 0..n {
            a.set(i, i, 4.0);
            if i > 0 {
                a.set(i, i - 1, -1.0);
            }
            if i + 1 < n {
                a.set(i, i + 1, -1.5);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64) * 0.5 - 1.0).collect();
        let b = a.matvec(&x);
        let lu = a.factor().unwrap();
        let got = lu.solve(&b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        // [[0, 1], [1, 0]] needs a row swap
        let mut a = BandMatrix::<f64>::zeros(3, 1, 1);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 2, 2.0);
        a.set(2, 1, 3.0);
        a.set(2, 2, 1.0);
        let x = [1.0, -2.0, 0.25];
        let b = a.matvec(&x);
        let got = a.factor().unwrap().solve(&b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-14, "{got:?}");
        }
    }

    #[test]
    fn singular_is_reported() {
        let a = BandMatrix::<f64>::zeros(3, 1, 1);
        assert!(matches!(a.factor(), Err(Error::SingularMatrix { row: 0 })));
    }

    #[test]
    fn wide_band_random_system() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (n, kl, ku) = (40, 3, 2);
        let mut a = BandMatrix::<f64>::zeros(n, kl, ku);
        for i in 0..n {
            for j in a.row_span(i) {
                a.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = dense_mul(&a.to_dense(), &x);
        let got = a.factor().unwrap().solve(&b).unwrap();
        let err = got
            .iter()
            .zip(&x)
            .map(|(g, e)| (g - e).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn works_in_single_precision() {
        let mut a = BandMatrix::<f32>::identity(4, 1, 1);
        a.set(0, 1, 0.5);
        a.set(3, 2, -0.25);
        let x = [1.0f32, 2.0, 3.0, 4.0];
        let b = a.matvec(&x);
        let got = a.factor().unwrap().solve(&b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let lu = BandMatrix::<f64>::identity(3, 1, 1).factor().unwrap();
        assert!(matches!(
            lu.solve(&[1.0, 2.0]),
            Err(Error::ShapeMismatch {
                expected: 3,
                got: 2
            })
        ));
    }
}
