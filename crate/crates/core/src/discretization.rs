//! Cell-centered grids and the conservative transport operator
//! `u -> (d u_x - alpha u)_x` with zero-flux faces at the domain boundary.
//!
//! Interior face fluxes are centered,
//! `F_{i+1/2} = d (u_{i+1} - u_i)/h - alpha (u_i + u_{i+1})/2`,
//! and the two boundary faces carry no flux at all, so every column of the
//! assembled matrix sums to zero. Off-diagonals are `d/h^2 +- alpha/(2h)`,
//! nonnegative exactly when the grid Peclet number `h|alpha|/d` is below 2.

use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::expr::FieldExpr;
use crate::scalar::Scalar;

/// Values sampled at cell centers (x-fastest ordering in 2D).
pub type Field<T> = Vec<T>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dim {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
}

/// Uniform cell-centered mesh on `[a,b]` or `[a,b]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dim: Dim,
    a: T,
    b: T,
    n: usize,
    h: T,
}

impl<T: Scalar> Grid<T> {
    pub fn new(dim: Dim, a: T, b: T, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::param(
                "n",
                format!("need at least 3 cells per axis, got {n}"),
            ));
        }
        if !(b > a) || !a.is_finite() || !b.is_finite() {
            return Err(Error::param(
                "domain",
                format!("need a < b, got [{a}, {b}]"),
            ));
        }
        let h = (b - a) / T::from_usize_exact(n);
        Ok(Self { dim, a, b, n, h })
    }

    pub fn line(a: T, b: T, n: usize) -> Result<Self> {
        Self::new(Dim::One, a, b, n)
    }

    pub fn square(a: T, b: T, n: usize) -> Result<Self> {
        Self::new(Dim::Two, a, b, n)
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn a(&self) -> T {
        self.a
    }

    pub fn b(&self) -> T {
        self.b
    }

    /// Cells per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> T {
        self.h
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        match self.dim {
            Dim::One => self.n,
            Dim::Two => self.n * self.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell measure (`h` or `h^2`), the midpoint quadrature weight.
    pub fn cell_volume(&self) -> T {
        match self.dim {
            Dim::One => self.h,
            Dim::Two => self.h * self.h,
        }
    }

    /// Center coordinate along one axis.
    pub fn center(&self, i: usize) -> T {
        self.a + (T::from_usize_exact(i) + T::lit(0.5)) * self.h
    }

    /// Coordinate of face `i` (face 0 is `a`, face `n` is `b`).
    pub fn face(&self, i: usize) -> T {
        self.a + T::from_usize_exact(i) * self.h
    }

    pub fn centers(&self) -> Vec<T> {
        (0..self.n).map(|i| self.center(i)).collect()
    }

    /// `(x, y)` of a cell; `y` is 0 on a 1D grid.
    pub fn coords(&self, idx: usize) -> (T, T) {
        match self.dim {
            Dim::One => (self.center(idx), T::zero()),
            Dim::Two => (self.center(idx % self.n), self.center(idx / self.n)),
        }
    }

    pub fn sample(&self, expr: &FieldExpr) -> Result<Field<T>> {
        if self.dim == Dim::One && expr.depends_on_y() {
            return Err(Error::Expression(format!("`{expr}` uses y on a 1D grid")));
        }
        (0..self.len())
            .map(|idx| {
                let (x, y) = self.coords(idx);
                let v = expr.eval(x.as_f64(), y.as_f64());
                if v.is_finite() {
                    Ok(T::lit(v))
                } else {
                    Err(Error::Expression(format!(
                        "`{expr}` is not finite at ({x}, {y})"
                    )))
                }
            })
            .collect()
    }

    /// Midpoint-rule integral of a field.
    pub fn integrate(&self, f: &[T]) -> T {
        f.iter().copied().sum::<T>() * self.cell_volume()
    }

    /// Smallest cell count per axis keeping the Peclet number strictly below 2.
    pub fn min_cells_for(&self, d: T, alpha: T) -> usize {
        let ratio = ((self.b - self.a) * alpha.abs() / (T::lit(2.0) * d)).as_f64();
        (ratio.floor() as usize + 1).max(3)
    }
}

/// Direction of advection on 2D grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Advection2d {
    /// Advect along x only, diffuse in both axes.
    #[default]
    X,
    /// Advect with velocity `alpha*(1,1)`.
    Diagonal,
}

/// Assembled sparse transport matrix with its movement parameters.
#[derive(Debug, Clone)]
pub struct TransportOperator<T> {
    matrix: BandMatrix<T>,
    d: T,
    alpha: T,
    peclet: T,
    // log of the diagonal similarity that symmetrizes the matrix
    log_scale: Vec<T>,
}

/// Coefficients `(lower, diag, upper)` of the 1D flux-form row `i`.
fn row_1d<T: Scalar>(i: usize, n: usize, h: T, d: T, alpha: T) -> (T, T, T) {
    let half = T::lit(0.5);
    let inv_h = T::one() / h;
    let dh = d * inv_h;
    // face i+1/2 contributes +F, face i-1/2 contributes -F
    let mut lower = T::zero();
    let mut diag = T::zero();
    let mut upper = T::zero();
    if i + 1 < n {
        diag = diag - dh - alpha * half;
        upper = dh - alpha * half;
    }
    if i > 0 {
        diag = diag - dh + alpha * half;
        lower = dh + alpha * half;
    }
    (lower * inv_h, diag * inv_h, upper * inv_h)
}

/// `ln D_i` with `D_i / D_{i-1} = sqrt(lower_i / upper_{i-1})`, centred on zero.
fn log_scales_1d<T: Scalar>(n: usize, h: T, d: T, alpha: T) -> Vec<T> {
    let half = T::lit(0.5);
    let step = half * ((d / h + alpha * half) / (d / h - alpha * half)).ln();
    let mid = step * T::from_usize_exact(n - 1) * half;
    (0..n)
        .map(|i| step * T::from_usize_exact(i) - mid)
        .collect()
}

fn check_movement<T: Scalar>(grid: &Grid<T>, d: T, alpha: T) -> Result<T> {
    if !(d > T::zero()) || !d.is_finite() {
        return Err(Error::param("d", format!("diffusion must be > 0, got {d}")));
    }
    if !alpha.is_finite() {
        return Err(Error::param("alpha", "advection must be finite"));
    }
    let peclet = grid.h() * alpha.abs() / d;
    if peclet >= T::lit(2.0) {
        return Err(Error::Peclet {
            peclet: peclet.as_f64(),
            d: d.as_f64(),
            alpha: alpha.as_f64(),
            min_n: grid.min_cells_for(d, alpha),
        });
    }
    Ok(peclet)
}

/// Assembles the 1D operator (tridiagonal).
pub fn assemble_transport<T: Scalar>(
    grid: &Grid<T>,
    d: T,
    alpha: T,
) -> Result<TransportOperator<T>> {
    if grid.dim() != Dim::One {
        return Err(Error::Unsupported(
            "assemble_transport expects a 1D grid".into(),
        ));
    }
    let peclet = check_movement(grid, d, alpha)?;
    let n = grid.n();
    let mut m = BandMatrix::zeros(n, 1, 1);
    for i in 0..n {
        let (lo, di, up) = row_1d(i, n, grid.h(), d, alpha);
        m.set(i, i, di);
        if i > 0 {
            m.set(i, i - 1, lo);
        }
        if i + 1 < n {
            m.set(i, i + 1, up);
        }
    }
    Ok(TransportOperator {
        matrix: m,
        d,
        alpha,
        peclet,
        log_scale: log_scales_1d(n, grid.h(), d, alpha),
    })
}

/// Assembles the 2D operator as the Kronecker sum of 1D operators:
/// advective-diffusive along x, and along y either pure diffusion
/// ([`Advection2d::X`]) or the same advective-diffusive form.
pub fn assemble_transport_2d<T: Scalar>(
    grid: &Grid<T>,
    d: T,
    alpha: T,
    advection: Advection2d,
) -> Result<TransportOperator<T>> {
    if grid.dim() != Dim::Two {
        return Err(Error::Unsupported(
            "assemble_transport_2d expects a 2D grid".into(),
        ));
    }
    let peclet = check_movement(grid, d, alpha)?;
    let n = grid.n();
    let h = grid.h();
    let alpha_y = match advection {
        Advection2d::X => T::zero(),
        Advection2d::Diagonal => alpha,
    };
    let mut m = BandMatrix::zeros(n * n, n, n);
    for j in 0..n {
        let (ylo, ydi, yup) = row_1d(j, n, h, d, alpha_y);
        for i in 0..n {
            let (xlo, xdi, xup) = row_1d(i, n, h, d, alpha);
            let idx = j * n + i;
            m.set(idx, idx, xdi + ydi);
            if i > 0 {
                m.set(idx, idx - 1, xlo);
            }
            if i + 1 < n {
                m.set(idx, idx + 1, xup);
            }
            if j > 0 {
                m.set(idx, idx - n, ylo);
            }
            if j + 1 < n {
                m.set(idx, idx + n, yup);
            }
        }
    }
    let sx = log_scales_1d(n, h, d, alpha);
    let sy = log_scales_1d(n, h, d, alpha_y);
    Ok(TransportOperator {
        matrix: m,
        d,
        alpha,
        peclet,
        log_scale: (0..n * n).map(|k| sx[k % n] + sy[k / n]).collect(),
    })
}

/// Dimension-dispatching assembly.
pub fn assemble<T: Scalar>(
    grid: &Grid<T>,
    d: T,
    alpha: T,
    advection: Advection2d,
) -> Result<TransportOperator<T>> {
    match grid.dim() {
        Dim::One => assemble_transport(grid, d, alpha),
        Dim::Two => assemble_transport_2d(grid, d, alpha, advection),
    }
}

impl<T: Scalar> TransportOperator<T> {
    pub fn matrix(&self) -> &BandMatrix<T> {
        &self.matrix
    }

    /// Diagonal `D` for which `D^-1 L D` is symmetric. With drift the
    /// zero-flux profile grows like `exp(alpha x/d)`, so working in these
    /// coordinates keeps vectors of very different magnitude well scaled.
    pub fn balancing(&self) -> Vec<T> {
        self.log_scale.iter().map(|s| s.exp()).collect()
    }

    pub fn d(&self) -> T {
        self.d
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn peclet(&self) -> T {
        self.peclet
    }

    pub fn len(&self) -> usize {
        self.matrix.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, f: &[T]) -> Result<Field<T>> {
        if f.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                got: f.len(),
            });
        }
        Ok(self.matrix.matvec(f))
    }

    pub fn apply_into(&self, f: &[T], out: &mut [T]) {
        self.matrix.matvec_into(f, out)
    }

    pub fn column_sums(&self) -> Vec<T> {
        self.matrix.column_sums()
    }

    /// True when every off-diagonal entry is nonnegative.
    pub fn is_metzler(&self) -> bool {
        let m = &self.matrix;
        (0..m.dim()).all(|i| m.row(i).all(|(j, v)| j == i || v >= T::zero()))
    }

    /// Strong connectivity of the directed graph of nonzero off-diagonals.
    pub fn is_irreducible(&self) -> bool {
        is_irreducible(&self.matrix)
    }
}

pub(crate) fn is_irreducible<T: Scalar>(m: &BandMatrix<T>) -> bool {
    let n = m.dim();
    if n == 0 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            let span = m.row_span(i);
            for j in span {
                let nz = if forward { m.get(i, j) } else { m.get(j, i) } != T::zero();
                if j != i && nz && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Zero-flux face fluxes `d u_x - alpha u` on a 1D grid: `n+1` values, the
/// two boundary entries identically zero.
pub fn face_fluxes<T: Scalar>(grid: &Grid<T>, d: T, alpha: T, u: &[T]) -> Vec<T> {
    let n = grid.n();
    let h = grid.h();
    let half = T::lit(0.5);
    let mut f = vec![T::zero(); n + 1];
    for i in 0..n - 1 {
        f[i + 1] = d * (u[i + 1] - u[i]) / h - alpha * (u[i] + u[i + 1]) * half;
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(n: usize, d: f64, alpha: f64) -> TransportOperator<f64> {
        assemble_transport(&Grid::line(0.0, 1.0, n).unwrap(), d, alpha).unwrap()
    }

    #[test]
    fn hand_assembled_three_cell_rows() {
        let l = op(3, 1.0, 0.0);
        let m = l.matrix();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(m.get(0, 0), -9.0) && close(m.get(0, 1), 9.0) && close(m.get(0, 2), 0.0));
        assert!(close(m.get(1, 0), 9.0) && close(m.get(1, 1), -18.0) && close(m.get(1, 2), 9.0));
        let y = l.apply(&[1.0, 2.0, 4.0]).unwrap();
        for (g, e) in y.iter().zip([9.0, 9.0, -18.0]) {
            assert!(close(*g, e), "{y:?}");
        }
    }

    #[test]
    fn constants_annihilated_without_advection() {
        let l = op(17, 0.3, 0.0);
        let y = l.apply(&vec![2.5; 17]).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-12));
        let y = l.apply(&vec![0.0; 17]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fig1_four_cell_operator() {
        let l = op(4, 0.08, 0.05);
        assert!((l.peclet() - 0.15625).abs() < 1e-15);
        for s in l.column_sums() {
            assert!(s.abs() < 1e-14);
        }
        let m = l.matrix();
        for i in 0..4 {
            for (j, v) in m.row(i) {
                if j != i {
                    assert!(v > 0.0);
                }
            }
        }
        assert!(l.is_metzler() && l.is_irreducible());
    }

    #[test]
    fn peclet_guard_names_minimum_n() {
        // (b-a) alpha / (2 d) = 2.5 -> n_min = 3 by ceil and floor+1
        let g = Grid::line(0.0, 1.0, 4).unwrap();
        let err = assemble_transport(&g, 0.1, 0.5);
        assert!(err.is_ok(), "peclet 1.25 is allowed");
        let g = Grid::line(0.0, 1.0, 10).unwrap();
        match assemble_transport(&g, 0.001, 0.05) {
            Err(Error::Peclet { min_n, peclet, .. }) => {
                assert_eq!(min_n, 26);
                assert!((peclet - 5.0).abs() < 1e-12);
            }
            other => panic!("expected Peclet error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_nonpositive_diffusion_and_bad_shapes() {
        let g = Grid::line(0.0, 1.0, 8).unwrap();
        assert!(matches!(
            assemble_transport(&g, 0.0, 0.0),
            Err(Error::InvalidParameter { .. })
        ));
        let l = op(8, 1.0, 0.1);
        assert!(matches!(
            l.apply(&[1.0; 7]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(Grid::<f64>::line(0.0, 1.0, 2).is_err());
        assert!(Grid::<f64>::line(1.0, 1.0, 5).is_err());
    }

    #[test]
    fn two_d_separable_field_matches_1d() {
        let n = 6;
        let g2 = Grid::square(0.0, 1.0, n).unwrap();
        let l2 = assemble_transport_2d(&g2, 0.05, 0.02, Advection2d::X).unwrap();
        let l1 = op(n, 0.05, 0.02);
        let gx: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 2.0).collect();
        let f2: Vec<f64> = (0..n * n).map(|k| gx[k % n]).collect();
        let y2 = l2.apply(&f2).unwrap();
        let y1 = l1.apply(&gx).unwrap();
        for k in 0..n * n {
            assert!((y2[k] - y1[k % n]).abs() < 1e-12);
        }
        let c = l2.apply(&vec![1.0; n * n]).unwrap();
        // constants: only the x-advection part survives, identical on every row
        for k in 0..n * n {
            assert!((c[k] - l1.apply(&vec![1.0; n]).unwrap()[k % n]).abs() < 1e-12);
        }
    }

    #[test]
    fn two_d_constant_field_zero_without_advection() {
        let g2 = Grid::<f64>::square(0.0, 1.0, 5).unwrap();
        let l2 = assemble_transport_2d(&g2, 0.3, 0.0, Advection2d::X).unwrap();
        assert!(l2
            .apply(&vec![3.0; 25])
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn two_d_fig6_columns_sum_to_zero() {
        let g2 = Grid::<f64>::square(0.0, 1.0, 4).unwrap();
        for adv in [Advection2d::X, Advection2d::Diagonal] {
            let l2 = assemble_transport_2d(&g2, 0.005, 0.002, adv).unwrap();
            assert!(l2.column_sums().iter().all(|s| s.abs() < 1e-14));
            assert!(l2.is_metzler() && l2.is_irreducible());
        }
    }

    #[test]
    fn face_fluxes_vanish_on_boundary() {
        let g = Grid::line(0.0, 1.0, 10).unwrap();
        let u: Vec<f64> = g.centers().iter().map(|x| 1.0 + x * x).collect();
        let f = face_fluxes(&g, 0.1, 0.3, &u);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[10], 0.0);
        // divergence of the face fluxes equals the operator
        let lu = op(10, 0.1, 0.3).apply(&u).unwrap();
        for i in 0..10 {
            assert!(((f[i + 1] - f[i]) / g.h() - lu[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn single_precision_assembly() {
        let g = Grid::<f32>::line(0.0, 1.0, 8).unwrap();
        let l = assemble_transport(&g, 0.08f32, 0.05).unwrap();
        assert!(l.column_sums().iter().all(|s| s.abs() < 1e-4));
    }
}
