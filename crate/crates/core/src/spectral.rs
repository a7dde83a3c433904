//! Principal eigenpairs of `M = L + diag(p)` and stability of the
//! single-species states.
//!
//! `M` is Metzler and irreducible under the Peclet guard, so its eigenvalue
//! `Lambda` with largest real part is real and simple with a positive
//! eigenvector. Reports follow the convention of the eigenproblem
//! `(d phi_x - alpha phi)_x + (p + lambda1) phi = 0`, i.e. `lambda1 = -Lambda`:
//! a positive `lambda1` means the invader decays.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::banded::BandMatrix;
use crate::discretization::{Dim, Field, Grid, TransportOperator};
use crate::error::{Error, Result};
use crate::scalar::{max_abs, min_value, Scalar};
use crate::steady::SteadyState;
use crate::timestepper::CompetitionSystem;

pub const MAX_ITERATIONS: usize = 10_000;
/// Eigenvector Cauchy tolerance between successive iterates (sup norm).
pub const CAUCHY_TOL: f64 = 1e-12;
/// `|lambda1|` below this is reported as marginal.
pub const TOL_MARGINAL: f64 = 1e-7;
/// Largest matrix the dense oracle accepts.
pub const ORACLE_MAX: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenReport<T> {
    /// Stability value `-Lambda`.
    pub lambda1: T,
    /// Spectral abscissa of `M`.
    pub abscissa: T,
    /// Positive eigenvector with `max phi = 1`.
    pub phi: Field<T>,
    pub iterations: usize,
    /// `max |M phi - Lambda phi|`.
    pub residual: T,
}

fn perturbed_matrix<T: Scalar>(op: &TransportOperator<T>, p: &[T]) -> Result<BandMatrix<T>> {
    if p.len() != op.len() {
        return Err(Error::ShapeMismatch {
            expected: op.len(),
            got: p.len(),
        });
    }
    let m = op.matrix();
    for i in 0..m.dim() {
        for (j, v) in m.row(i) {
            if j != i && v < T::zero() {
                return Err(Error::NotMetzler {
                    row: i,
                    col: j,
                    value: v.as_f64(),
                });
            }
        }
    }
    let mut m = m.clone();
    m.add_diagonal(p);
    Ok(m)
}

/// Collatz-Wielandt bounds `min (Mx)_i/x_i <= Lambda <= max (Mx)_i/x_i` for
/// positive `x`, returned with `Mx`.
fn ratio_bounds<T: Scalar>(m: &BandMatrix<T>, x: &[T]) -> (T, T, Vec<T>) {
    let y = m.matvec(x);
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for (yi, xi) in y.iter().zip(x) {
        let r = *yi / *xi;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi, y)
}

fn normalize<T: Scalar>(x: &mut [T]) {
    let s = max_abs(x);
    for v in x.iter_mut() {
        *v = *v / s;
    }
}

fn finish<T: Scalar>(m: &BandMatrix<T>, phi: Vec<T>, iterations: usize) -> Result<EigenReport<T>> {
    let (lo, hi, y) = ratio_bounds(m, &phi);
    let lambda = (lo + hi) * T::lit(0.5);
    let residual = y
        .iter()
        .zip(&phi)
        .fold(T::zero(), |r, (&yi, &xi)| r.max((yi - lambda * xi).abs()));
    let ratio = min_value(&phi) / max_abs(&phi);
    if !(ratio > T::zero()) {
        return Err(Error::PerronPositivity {
            ratio: ratio.as_f64(),
        });
    }
    Ok(EigenReport {
        lambda1: -lambda,
        abscissa: lambda,
        phi,
        iterations,
        residual,
    })
}

/// Principal eigenpair of `L + diag(p)` by shifted inverse iteration.
///
/// Each sweep computes Collatz-Wielandt bounds `lo <= Lambda <= hi` from the
/// current positive iterate and solves `(s I - M) x' = x` with
/// `s = hi + max(hi - lo, 1e-10 (1 + |hi|))`. Since `s > Lambda`, `s I - M` is
/// a nonsingular M-matrix whose inverse is positive, so iterates stay
/// positive and the shift closes in on `Lambda` as the bounds tighten.
/// Stops when successive normalized iterates differ by less than 1e-12 and
/// the residual is below `max(tol, 100 eps ||M||)`. The sweeps run on the
/// symmetrized `D^-1 M D` (see [`TransportOperator::balancing`]); with strong
/// drift the Perron vector spans many orders of magnitude and unscaled
/// Collatz-Wielandt ratios at its small entries are rounding noise.
pub fn principal_eigenpair<T: Scalar>(
    op: &TransportOperator<T>,
    p: &[T],
    tol: T,
) -> Result<EigenReport<T>> {
    let original = perturbed_matrix(op, p)?;
    // iterate on the symmetrized matrix D^-1 M D and map back with D
    let scale = op.balancing();
    let mut m = original.clone();
    for i in 0..m.dim() {
        for j in m.row_span(i) {
            let v = m.get(i, j);
            m.set(i, j, v * scale[j] / scale[i]);
        }
    }
    let n = m.dim();
    let floor = T::lit(100.0) * T::epsilon() * m.norm_inf();
    let tol = tol.max(floor);
    let cauchy = T::lit(CAUCHY_TOL).max(T::lit(100.0) * T::epsilon());
    let mut x = vec![T::one(); n];
    let mut last_residual = T::infinity();
    for it in 1..=MAX_ITERATIONS {
        let (lo, hi, y) = ratio_bounds(&m, &x);
        let lambda = (lo + hi) * T::lit(0.5);
        last_residual = y
            .iter()
            .zip(&x)
            .fold(T::zero(), |r, (&yi, &xi)| r.max((yi - lambda * xi).abs()));
        let gap = (hi - lo).max(T::lit(1e-10) * (T::one() + hi.abs()));
        let shift = hi + gap;
        let lu = m.shifted_scaled(shift, -T::one()).factor()?;
        let mut next = x.clone();
        lu.solve_in_place(&mut next)?;
        normalize(&mut next);
        if next.iter().any(|v| !(*v > T::zero())) {
            return Err(Error::PerronPositivity {
                ratio: (min_value(&next) / max_abs(&next)).as_f64(),
            });
        }
        let diff = next
            .iter()
            .zip(&x)
            .fold(T::zero(), |d, (&a, &b)| d.max((a - b).abs()));
        x = next;
        if diff < cauchy && last_residual < tol {
            let report = finish(&m, x, it)?;
            if report.residual < tol {
                return unbalance(&original, report, &scale);
            }
            x = report.phi;
        }
    }
    Err(Error::EigenNoConvergence {
        iterations: MAX_ITERATIONS,
        residual: last_residual.as_f64(),
    })
}

/// Maps a balanced-coordinate report back to `phi = D psi` with `max phi = 1`
/// and the residual measured on the original matrix.
fn unbalance<T: Scalar>(
    m: &BandMatrix<T>,
    mut report: EigenReport<T>,
    scale: &[T],
) -> Result<EigenReport<T>> {
    for (v, s) in report.phi.iter_mut().zip(scale) {
        *v = *v * *s;
    }
    normalize(&mut report.phi);
    if report.phi.iter().any(|v| !(*v > T::zero())) {
        return Err(Error::PerronPositivity {
            ratio: (min_value(&report.phi) / max_abs(&report.phi)).as_f64(),
        });
    }
    let y = m.matvec(&report.phi);
    report.residual = y.iter().zip(&report.phi).fold(T::zero(), |r, (&yi, &xi)| {
        r.max((yi - report.abscissa * xi).abs())
    });
    Ok(report)
}

/// Plain power iteration on `M + s I` with `s = ||M||_inf + 1`, which makes
/// the matrix nonnegative. Converges at rate `(s + Lambda_2)/(s + Lambda)`;
/// practical only for small, coarse operators.
pub fn shifted_power_iteration<T: Scalar>(
    op: &TransportOperator<T>,
    p: &[T],
    tol: T,
    max_iter: usize,
) -> Result<EigenReport<T>> {
    let m = perturbed_matrix(op, p)?;
    let s = m.norm_inf() + T::one();
    let shifted = m.shifted_scaled(s, T::one());
    let mut x = vec![T::one(); m.dim()];
    let mut residual = T::infinity();
    for it in 1..=max_iter {
        let mut next = shifted.matvec(&x);
        normalize(&mut next);
        let diff = next
            .iter()
            .zip(&x)
            .fold(T::zero(), |d, (&a, &b)| d.max((a - b).abs()));
        x = next;
        let (lo, hi, _) = ratio_bounds(&m, &x);
        residual = (hi - lo) * T::lit(0.5);
        if diff < T::lit(CAUCHY_TOL) && residual < tol {
            return finish(&m, x, it);
        }
    }
    Err(Error::EigenNoConvergence {
        iterations: max_iter,
        residual: residual.as_f64(),
    })
}

/// Largest real part over the full spectrum of `L + diag(p)`, from a dense
/// eigen-decomposition. Limited to `n <= 128`.
pub fn dense_abscissa<T: Scalar>(op: &TransportOperator<T>, p: &[T]) -> Result<f64> {
    let n = op.len();
    if n > ORACLE_MAX {
        return Err(Error::OracleTooLarge { n, max: ORACLE_MAX });
    }
    if p.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: p.len(),
        });
    }
    let m = op.matrix();
    let dense = DMatrix::<f64>::from_fn(n, n, |i, j| {
        let v = m.get(i, j).as_f64();
        if i == j {
            v + p[i].as_f64()
        } else {
            v
        }
    });
    Ok(dense
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Which single-species state is perturbed by the absent competitor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SemiTrivial {
    /// `(û, 0)`, invaded by `v`.
    UOnly,
    /// `(0, v̂)`, invaded by `u`.
    VOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
    Marginal,
}

impl Stability {
    pub fn from_lambda1(lambda1: f64) -> Self {
        if lambda1 > TOL_MARGINAL {
            Stability::Stable
        } else if lambda1 < -TOL_MARGINAL {
            Stability::Unstable
        } else {
            Stability::Marginal
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict<T> {
    pub state: SemiTrivial,
    /// `kappa1` for [`SemiTrivial::UOnly`], `tau1` for [`SemiTrivial::VOnly`].
    pub lambda1: T,
    pub verdict: Stability,
    pub eigen: EigenReport<T>,
}

/// Linear growth rate `p` of the invader at a single-species state.
pub fn invader_potential<T: Scalar>(
    system: &CompetitionSystem<T>,
    which: SemiTrivial,
    resident: &[T],
) -> Field<T> {
    let kin = match which {
        SemiTrivial::UOnly => system.kinetics_v(),
        SemiTrivial::VOnly => system.kinetics_u(),
    };
    (0..resident.len())
        .map(|i| kin.jacobian(i, T::zero(), resident[i]).0)
        .collect()
}

/// Stability of `(û, 0)` or `(0, v̂)` from the invader's principal eigenvalue.
pub fn stability_of_semitrivial<T: Scalar>(
    system: &CompetitionSystem<T>,
    which: SemiTrivial,
    resident: &SteadyState<T>,
    tol: T,
) -> Result<StabilityVerdict<T>> {
    let p = invader_potential(system, which, &resident.u);
    let op = match which {
        SemiTrivial::UOnly => system.op_v(),
        SemiTrivial::VOnly => system.op_u(),
    };
    let eigen = principal_eigenpair(op, &p, tol)?;
    Ok(StabilityVerdict {
        state: which,
        lambda1: eigen.lambda1,
        verdict: Stability::from_lambda1(eigen.lambda1.as_f64()),
        eigen,
    })
}

/// Two principal eigenvalues with the same `p` and different movement, and
/// the weighted-integral expression for their difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenDifference {
    pub eta1: f64,
    pub eta2: f64,
    pub difference: f64,
    pub formula: f64,
    pub residual: f64,
}

/// Compares `eta2 - eta1` with
///
/// ```text
/// ∫ [(d2-d1) z1_x + (a1-a2) z1] (e^{-a2 x/d2} z2)_x  /  ∫ e^{-a2 x/d2} z1 z2
/// ```
///
/// where `(eta_k, z_k)` is the principal pair for movement `(d_k, a_k)`.
/// The numerator uses central differences at interior faces (both fluxes
/// vanish on the boundary, where the integrand is zero), the denominator the
/// midpoint rule.
pub fn eigen_difference_check<T: Scalar>(
    op1: &TransportOperator<T>,
    op2: &TransportOperator<T>,
    grid: &Grid<T>,
    p: &[T],
    tol: T,
) -> Result<EigenDifference> {
    if grid.dim() != Dim::One {
        return Err(Error::Unsupported(
            "eigenvalue difference check is available on 1D grids only".into(),
        ));
    }
    let e1 = principal_eigenpair(op1, p, tol)?;
    let e2 = principal_eigenpair(op2, p, tol)?;
    let (d1, a1) = (op1.d().as_f64(), op1.alpha().as_f64());
    let (d2, a2) = (op2.d().as_f64(), op2.alpha().as_f64());
    let n = grid.n();
    let h = grid.h().as_f64();
    let z1: Vec<f64> = e1.phi.iter().map(|v| v.as_f64()).collect();
    let z2: Vec<f64> = e2.phi.iter().map(|v| v.as_f64()).collect();
    let w: Vec<f64> = (0..n)
        .map(|i| (-a2 / d2 * grid.center(i).as_f64()).exp())
        .collect();
    let mut num = 0.0;
    for f in 1..n {
        let z1x = (z1[f] - z1[f - 1]) / h;
        let z1f = 0.5 * (z1[f] + z1[f - 1]);
        let wz2x = (w[f] * z2[f] - w[f - 1] * z2[f - 1]) / h;
        num += h * ((d2 - d1) * z1x + (a1 - a2) * z1f) * wz2x;
    }
    let den: f64 = (0..n).map(|i| h * w[i] * z1[i] * z2[i]).sum();
    let (eta1, eta2) = (e1.lambda1.as_f64(), e2.lambda1.as_f64());
    let formula = num / den;
    Ok(EigenDifference {
        eta1,
        eta2,
        difference: eta2 - eta1,
        formula,
        residual: (eta2 - eta1 - formula).abs(),
    })
}

/// One-sided bound `d phi_x/phi - alpha <= 10 h^2` on the interior faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerronBand {
    pub max_excess: f64,
    pub tolerance: f64,
    pub violations: usize,
}

/// Checks the drift-adjusted log-derivative of a principal eigenvector; only
/// meaningful for nonincreasing `p`, otherwise `None` is returned.
pub fn perron_band_check<T: Scalar>(
    phi: &[T],
    p: &[T],
    d: T,
    alpha: T,
    grid: &Grid<T>,
) -> Option<PerronBand> {
    if grid.dim() != Dim::One || phi.len() != grid.n() || p.len() != grid.n() {
        return None;
    }
    if p.windows(2).any(|w| w[1] > w[0]) {
        log::info!("p is not monotone nonincreasing; eigenvector band check skipped");
        return None;
    }
    let h = grid.h().as_f64();
    let tol = 10.0 * h * h;
    let (d, alpha) = (d.as_f64(), alpha.as_f64());
    let mut max_excess = f64::NEG_INFINITY;
    let mut violations = 0;
    for f in 1..grid.n() {
        let (l, r) = (phi[f - 1].as_f64(), phi[f].as_f64());
        let ratio = d * (r - l) / (h * 0.5 * (l + r)) - alpha;
        max_excess = max_excess.max(ratio);
        if ratio > tol {
            violations += 1;
        }
    }
    Some(PerronBand {
        max_excess,
        tolerance: tol,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{assemble_transport, Advection2d};
    use crate::expr::FieldExpr;
    use crate::model::ModelParams;
    use crate::steady::{semitrivial_u, semitrivial_v, SteadyOptions};

    fn line(n: usize, d: f64, alpha: f64) -> (Grid<f64>, TransportOperator<f64>) {
        let g = Grid::line(0.0, 1.0, n).unwrap();
        let op = assemble_transport(&g, d, alpha).unwrap();
        (g, op)
    }

    #[test]
    fn constant_potential_gives_constant_vector() {
        let (_, op) = line(40, 0.3, 0.0);
        let e = principal_eigenpair(&op, &vec![0.7; 40], 1e-10).unwrap();
        assert!((e.lambda1 + 0.7).abs() < 1e-12);
        assert!(e.phi.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn matches_dense_oracle_and_power_iteration() {
        let (g, op) = line(24, 0.05, 0.3);
        let p: Vec<f64> = g.centers().iter().map(|x| (3.0 * x).sin()).collect();
        let e = principal_eigenpair(&op, &p, 1e-10).unwrap();
        let dense = dense_abscissa(&op, &p).unwrap();
        assert!(
            (e.abscissa - dense).abs() < 1e-8,
            "{} vs {dense}",
            e.abscissa
        );
        let slow = shifted_power_iteration(&op, &p, 1e-10, 200_000).unwrap();
        assert!((slow.abscissa - dense).abs() < 1e-8);
        let diff = slow
            .phi
            .iter()
            .zip(&e.phi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8);
    }

    #[test]
    fn oracle_rejects_large_inputs() {
        let (_, op) = line(200, 0.3, 0.0);
        assert!(matches!(
            dense_abscissa(&op, &vec![0.0; 200]),
            Err(Error::OracleTooLarge { .. })
        ));
    }

    #[test]
    fn fig1_semitrivial_verdicts() {
        let p = ModelParams::new(
            0.08,
            0.07,
            0.05,
            0.04,
            0.009,
            FieldExpr::parse("2+cos(pi*x)").unwrap(),
        );
        let g = Grid::line(0.0, 1.0, 128).unwrap();
        let sys = CompetitionSystem::transformed(&p, &g, Advection2d::X).unwrap();
        let opts = SteadyOptions::default();
        let u_hat = semitrivial_u(&sys, &opts).unwrap();
        let v_hat = semitrivial_v(&sys, &opts).unwrap();
        let kappa = stability_of_semitrivial(&sys, SemiTrivial::UOnly, &u_hat, 1e-10).unwrap();
        let tau = stability_of_semitrivial(&sys, SemiTrivial::VOnly, &v_hat, 1e-10).unwrap();
        assert_eq!(
            kappa.verdict,
            Stability::Unstable,
            "kappa1 = {}",
            kappa.lambda1
        );
        assert_eq!(tau.verdict, Stability::Stable, "tau1 = {}", tau.lambda1);
    }

    #[test]
    fn identical_species_are_marginal() {
        let p = ModelParams::new(
            0.08,
            0.08,
            0.05,
            0.05,
            0.1,
            FieldExpr::parse("2+cos(pi*x)").unwrap(),
        );
        let g = Grid::line(0.0, 1.0, 64).unwrap();
        let sys = CompetitionSystem::transformed(&p, &g, Advection2d::X).unwrap();
        let u_hat = semitrivial_u(&sys, &SteadyOptions::default()).unwrap();
        let k = stability_of_semitrivial(&sys, SemiTrivial::UOnly, &u_hat, 1e-11).unwrap();
        assert_eq!(k.verdict, Stability::Marginal, "{}", k.lambda1);
    }

    #[test]
    fn difference_formula_trivial_cases() {
        let (g, op1) = line(64, 0.1, 0.02);
        let p: Vec<f64> = g.centers().iter().map(|x| 1.0 - x).collect();
        let r = eigen_difference_check(&op1, &op1, &g, &p, 1e-11).unwrap();
        assert!(r.difference.abs() < 1e-12 && r.formula.abs() < 1e-12);

        let (_, a) = line(64, 0.1, 0.0);
        let (_, b) = line(64, 0.3, 0.0);
        let r = eigen_difference_check(&a, &b, &g, &vec![0.4; 64], 1e-11).unwrap();
        assert!(
            r.difference.abs() < 1e-12 && r.formula.abs() < 1e-10,
            "{r:?}"
        );
    }

    #[test]
    fn band_check_skipped_for_non_monotone_potential() {
        let (g, op) = line(32, 0.1, 0.05);
        let p: Vec<f64> = g.centers().iter().map(|x| (6.0 * x).sin()).collect();
        let e = principal_eigenpair(&op, &p, 1e-10).unwrap();
        assert!(perron_band_check(&e.phi, &p, 0.1, 0.05, &g).is_none());
        let p: Vec<f64> = g.centers().iter().map(|x| 1.0 - x).collect();
        let e = principal_eigenpair(&op, &p, 1e-10).unwrap();
        let band = perron_band_check(&e.phi, &p, 0.1, 0.05, &g).unwrap();
        assert_eq!(band.violations, 0, "{band:?}");
    }
}
