//! Steady states and the integral/log-derivative diagnostics evaluated on them.
//!
//! Single-species states solve `L u + R(u, 0) = 0` by time marching followed
//! by a Newton polish; coexistence states solve the coupled residual with a
//! damped Newton iteration on interleaved unknowns `(u_0, v_0, u_1, v_1, ...)`.
//! The diagnostics (flux products, log derivatives `u_x/u`, weighted flux
//! identities) are 1D only.

use serde::Serialize;

use crate::banded::{BandLu, BandMatrix};
use crate::discretization::{face_fluxes, Dim, Field, Grid, TransportOperator};
use crate::error::{Error, Result};
use crate::model::{EffectiveParams, Kinetics, ModelParams};
use crate::scalar::{max_abs, min_value, Scalar};
use crate::timestepper::CompetitionSystem;

/// Smallest Armijo step before a Newton iteration is declared stuck.
const STEP_FLOOR: f64 = 1.0 / 1024.0;
const ARMIJO_C: f64 = 1e-4;
/// Pivot ratio below which a Jacobian is reported as near-singular.
const NEAR_SINGULAR: f64 = 1e-10;
/// Densities at or below this multiple of `max K1` do not count as present.
pub const POSITIVE_FRACTION: f64 = 1e-8;

/// Smallest residual that can be certified for `L u` at densities up to
/// `scale`: evaluating a row costs about `eps ||L||_inf scale` in rounding.
pub fn residual_floor<T: Scalar>(op: &TransportOperator<T>, scale: T) -> T {
    T::lit(16.0) * T::epsilon() * op.matrix().norm_inf() * scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SteadyMethod {
    LongTime,
    Newton,
    Hybrid,
}

/// A strictly positive single-species steady state.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState<T> {
    pub u: Field<T>,
    /// `max |L u + R(u)|`.
    pub residual_norm: T,
    pub method: SteadyMethod,
    pub iterations: usize,
}

/// A strictly positive coexistence state `(u*, v*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoexistenceState<T> {
    pub u: Field<T>,
    pub v: Field<T>,
    pub residual_norm: T,
    pub iterations: usize,
    /// Set when the Jacobian at some iterate had a pivot ratio below 1e-10
    /// (a marginal point or a continuum of states).
    pub near_singular: bool,
}

#[derive(Debug, Clone)]
pub struct SteadyOptions<T> {
    pub tol: T,
    pub max_newton: usize,
    /// Cap on time steps for the marching phase.
    pub max_steps: usize,
}

impl<T: Scalar> Default for SteadyOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-10),
            max_newton: 50,
            max_steps: 400_000,
        }
    }
}

fn single_residual<T: Scalar>(op: &TransportOperator<T>, kin: &Kinetics<T>, u: &[T]) -> Field<T> {
    let mut r = op.matrix().matvec(u);
    for (i, ri) in r.iter_mut().enumerate() {
        *ri = *ri + kin.eval(i, u[i], T::zero());
    }
    r
}

fn norm2<T: Scalar>(x: &[T]) -> T {
    x.iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// Integrates `u_t = L u + R(u, 0)` with the IMEX step until
/// `max |u_t| < rate_tol` or `max_steps` is reached.
pub fn steady_by_time_marching<T: Scalar>(
    op: &TransportOperator<T>,
    kin: &Kinetics<T>,
    u0: &[T],
    rate_tol: T,
    max_steps: usize,
) -> Result<SteadyState<T>> {
    let dt = T::lit(0.9) / kin.max_net_rate();
    let lu = op.matrix().shifted_scaled(T::one(), -dt).factor()?;
    let mut u = u0.to_vec();
    let mut steps = 0;
    loop {
        let mut b: Vec<T> = (0..u.len())
            .map(|i| u[i] + dt * kin.eval(i, u[i], T::zero()))
            .collect();
        lu.solve_in_place(&mut b)?;
        let mut rate = T::zero();
        for (bi, &ui) in b.iter_mut().zip(&u) {
            if !bi.is_finite() {
                return Err(Error::NonFinite {
                    t: (dt * T::from_usize_exact(steps)).as_f64(),
                    what: "steady marching".into(),
                });
            }
            *bi = bi.max(T::zero());
            rate = rate.max((*bi - ui).abs() / dt);
        }
        u = b;
        steps += 1;
        if rate < rate_tol || steps >= max_steps {
            break;
        }
    }
    let residual_norm = max_abs(&single_residual(op, kin, &u));
    Ok(SteadyState {
        u,
        residual_norm,
        method: SteadyMethod::LongTime,
        iterations: steps,
    })
}

/// Outcome of an undamped-to-damped Newton run.
struct NewtonRun<T> {
    x: Vec<T>,
    residual: T,
    iterations: usize,
    converged: bool,
    near_singular: bool,
}

/// Damped Newton on `F(x) = 0` with Armijo backtracking on `||F||_2`.
/// `jac` assembles the banded Jacobian at `x`.
fn damped_newton<T: Scalar>(
    mut x: Vec<T>,
    f: impl Fn(&[T]) -> Vec<T>,
    jac: impl Fn(&[T]) -> BandMatrix<T>,
    tol: T,
    max_iter: usize,
    regularize: bool,
) -> Result<NewtonRun<T>> {
    let mut fx = f(&x);
    let mut res = max_abs(&fx);
    let mut near_singular = false;
    let mut it = 0;
    let floor = T::lit(STEP_FLOOR);
    while it < max_iter {
        if res < tol {
            break;
        }
        it += 1;
        let j = jac(&x);
        let lu = factor_checked(&j, regularize, &mut near_singular)?;
        let mut delta: Vec<T> = fx.iter().map(|&v| -v).collect();
        lu.solve_in_place(&mut delta)?;
        let n0 = norm2(&fx);
        let mut lambda = T::one();
        loop {
            let trial: Vec<T> = x
                .iter()
                .zip(&delta)
                .map(|(&a, &d)| a + lambda * d)
                .collect();
            let ft = f(&trial);
            let nt = norm2(&ft);
            if nt.is_finite() && nt <= (T::one() - T::lit(ARMIJO_C) * lambda) * n0 {
                x = trial;
                fx = ft;
                break;
            }
            lambda = lambda * T::lit(0.5);
            if lambda < floor {
                return Ok(NewtonRun {
                    x,
                    residual: res,
                    iterations: it,
                    converged: false,
                    near_singular,
                });
            }
        }
        res = max_abs(&fx);
    }
    Ok(NewtonRun {
        converged: res < tol,
        x,
        residual: res,
        iterations: it,
        near_singular,
    })
}

/// Factors `j`; a near-singular or singular matrix is flagged and, when
/// `regularize` is set, shifted by `-1e-8 ||j||_inf` so the step stays bounded
/// along the (near) null direction.
fn factor_checked<T: Scalar>(
    j: &BandMatrix<T>,
    regularize: bool,
    flag: &mut bool,
) -> Result<BandLu<T>> {
    match j.factor() {
        Ok(lu) if lu.pivot_ratio() >= T::lit(NEAR_SINGULAR) => Ok(lu),
        attempt => {
            *flag = true;
            if !regularize {
                return match attempt {
                    Ok(lu) => Ok(lu),
                    Err(e) => Err(Error::SingularJacobian(e.to_string())),
                };
            }
            let sigma = T::lit(1e-8) * j.norm_inf();
            let mut shifted = j.clone();
            shifted.add_diagonal(&vec![-sigma; j.dim()]);
            shifted.factor().map_err(|e| {
                Error::SingularJacobian(format!("Jacobian singular even after shift: {e}"))
            })
        }
    }
}

fn single_jacobian<T: Scalar>(
    op: &TransportOperator<T>,
    kin: &Kinetics<T>,
    u: &[T],
) -> BandMatrix<T> {
    let mut j = op.matrix().clone();
    let d: Vec<T> = (0..u.len())
        .map(|i| kin.jacobian(i, u[i], T::zero()).0)
        .collect();
    j.add_diagonal(&d);
    j
}

/// Newton iteration on the single-species stationary residual from `u0`.
pub fn steady_by_newton<T: Scalar>(
    op: &TransportOperator<T>,
    kin: &Kinetics<T>,
    u0: &[T],
    tol: T,
    max_iter: usize,
) -> Result<SteadyState<T>> {
    let run = damped_newton(
        u0.to_vec(),
        |u| single_residual(op, kin, u),
        |u| single_jacobian(op, kin, u),
        tol,
        max_iter,
        false,
    )?;
    if !run.converged {
        return Err(Error::NoConvergence {
            what: "single-species Newton".into(),
            iterations: run.iterations,
            residual: run.residual.as_f64(),
        });
    }
    Ok(SteadyState {
        u: run.x,
        residual_norm: run.residual,
        method: SteadyMethod::Newton,
        iterations: run.iterations,
    })
}

fn check_persistent<T: Scalar>(u: &[T], kin: &Kinetics<T>) -> Result<()> {
    let scale = max_abs(&kin.effective_capacity());
    if !(min_value(u) > T::lit(POSITIVE_FRACTION) * scale) {
        return Err(Error::NotPersistent);
    }
    Ok(())
}

/// Positive steady state of one species alone: march until
/// `max |u_t| < sqrt(tol)`, then polish with Newton to residual `< tol` (raised to
/// [`residual_floor`] on stiff grids).
/// If Newton fails the marching continues and the result is tagged
/// [`SteadyMethod::LongTime`].
pub fn solve_single_steady<T: Scalar>(
    op: &TransportOperator<T>,
    kin: &Kinetics<T>,
    opts: &SteadyOptions<T>,
) -> Result<SteadyState<T>> {
    if op.len() != kin.len() {
        return Err(Error::ShapeMismatch {
            expected: op.len(),
            got: kin.len(),
        });
    }
    if !(opts.tol > T::zero()) {
        return Err(Error::param("tol", "must be > 0"));
    }
    let cap = kin.effective_capacity();
    let tol = opts.tol.max(residual_floor(op, max_abs(&cap)));
    let mean = cap.iter().copied().sum::<T>() / T::from_usize_exact(cap.len());
    let u0 = vec![mean; cap.len()];
    let marched = steady_by_time_marching(op, kin, &u0, tol.sqrt(), opts.max_steps)?;
    check_persistent(&marched.u, kin)?;
    match steady_by_newton(op, kin, &marched.u, tol, opts.max_newton) {
        Ok(mut s) => {
            check_persistent(&s.u, kin)?;
            s.method = SteadyMethod::Hybrid;
            s.iterations += marched.iterations;
            Ok(s)
        }
        Err(Error::NoConvergence { .. }) => {
            log::warn!("Newton polish failed, continuing with long-time integration");
            let s =
                steady_by_time_marching(op, kin, &marched.u, tol * T::lit(1e-2), opts.max_steps)?;
            check_persistent(&s.u, kin)?;
            if !(s.residual_norm < tol) {
                return Err(Error::NoConvergence {
                    what: "long-time steady state".into(),
                    iterations: s.iterations,
                    residual: s.residual_norm.as_f64(),
                });
            }
            Ok(s)
        }
        Err(e) => Err(e),
    }
}

/// `(û, 0)`: the first species alone.
pub fn semitrivial_u<T: Scalar>(
    system: &CompetitionSystem<T>,
    opts: &SteadyOptions<T>,
) -> Result<SteadyState<T>> {
    solve_single_steady(system.op_u(), system.kinetics_u(), opts)
}

/// `(0, v̂)`: the second species alone.
pub fn semitrivial_v<T: Scalar>(
    system: &CompetitionSystem<T>,
    opts: &SteadyOptions<T>,
) -> Result<SteadyState<T>> {
    solve_single_steady(system.op_v(), system.kinetics_v(), opts)
}

fn pair_residual<T: Scalar>(sys: &CompetitionSystem<T>, x: &[T]) -> Vec<T> {
    let n = sys.len();
    let u: Vec<T> = (0..n).map(|i| x[2 * i]).collect();
    let v: Vec<T> = (0..n).map(|i| x[2 * i + 1]).collect();
    let (ru, rv) = sys.residual(&u, &v);
    let mut out = vec![T::zero(); 2 * n];
    for i in 0..n {
        out[2 * i] = ru[i];
        out[2 * i + 1] = rv[i];
    }
    out
}

fn pair_jacobian<T: Scalar>(sys: &CompetitionSystem<T>, x: &[T]) -> BandMatrix<T> {
    let n = sys.len();
    let (lu, lv) = (sys.op_u().matrix(), sys.op_v().matrix());
    let band = lu
        .lower_bandwidth()
        .max(lu.upper_bandwidth())
        .max(lv.lower_bandwidth())
        .max(lv.upper_bandwidth());
    let w = 2 * band + 1;
    let mut j = BandMatrix::zeros(2 * n, w, w);
    for i in 0..n {
        for (c, val) in lu.row(i) {
            j.add(2 * i, 2 * c, val);
        }
        for (c, val) in lv.row(i) {
            j.add(2 * i + 1, 2 * c + 1, val);
        }
        let (u, v) = (x[2 * i], x[2 * i + 1]);
        let (uu, uv) = sys.kinetics_u().jacobian(i, u, v);
        let (vv, vu) = sys.kinetics_v().jacobian(i, v, u);
        j.add(2 * i, 2 * i, uu);
        j.add(2 * i, 2 * i + 1, uv);
        j.add(2 * i + 1, 2 * i + 1, vv);
        j.add(2 * i + 1, 2 * i, vu);
    }
    j
}

/// Damped Newton for a coexistence state from `(guess_u, guess_v)`.
///
/// Returns `Ok(None)` when the iteration converges to a state where one
/// species is absent (or fails to converge), and
/// [`Error::SingularJacobian`] when a Newton step cannot be formed.
pub fn solve_coexistence<T: Scalar>(
    sys: &CompetitionSystem<T>,
    guess_u: &[T],
    guess_v: &[T],
    tol: T,
    max_iter: usize,
) -> Result<Option<CoexistenceState<T>>> {
    let n = sys.len();
    for g in [guess_u, guess_v] {
        if g.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: g.len(),
            });
        }
    }
    let mut x = vec![T::zero(); 2 * n];
    for i in 0..n {
        x[2 * i] = guess_u[i];
        x[2 * i + 1] = guess_v[i];
    }
    let scale = sys.capacity_scale();
    let tol = tol
        .max(residual_floor(sys.op_u(), scale))
        .max(residual_floor(sys.op_v(), scale));
    let run = damped_newton(
        x,
        |x| pair_residual(sys, x),
        |x| pair_jacobian(sys, x),
        tol,
        max_iter,
        true,
    )?;
    let mut near_singular = run.near_singular;
    // a converged start never factors the Jacobian, so check it here
    if run.iterations == 0 {
        factor_checked(&pair_jacobian(sys, &run.x), true, &mut near_singular)?;
    }
    if !run.converged {
        log::debug!(
            "coexistence Newton stopped after {} iterations at residual {}",
            run.iterations,
            run.residual
        );
        return Ok(None);
    }
    let u: Vec<T> = (0..n).map(|i| run.x[2 * i]).collect();
    let v: Vec<T> = (0..n).map(|i| run.x[2 * i + 1]).collect();
    let floor = T::lit(POSITIVE_FRACTION) * sys.capacity_scale();
    if !(min_value(&u) > floor && min_value(&v) > floor) {
        log::debug!("coexistence Newton converged to a semi-trivial or zero state");
        return Ok(None);
    }
    Ok(Some(CoexistenceState {
        u,
        v,
        residual_norm: run.residual,
        iterations: run.iterations,
        near_singular,
    }))
}

fn require_1d<T: Scalar>(grid: &Grid<T>, what: &str) -> Result<()> {
    if grid.dim() != Dim::One {
        return Err(Error::Unsupported(format!(
            "{what} is available on 1D grids only"
        )));
    }
    Ok(())
}

/// Integral `∫ r K1 (1 - u/K1)` at a single-species steady state together with
/// `∫ r K1 (1 - u/K1)^2`, which it equals exactly in the continuum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityIntegral {
    pub integral: f64,
    pub squared_integral: f64,
    pub identity_gap: f64,
    /// `K1` constant: both sides vanish and the positivity claim is void.
    pub degenerate: bool,
}

/// Midpoint-rule evaluation of the capacity deficit integrals at `u`.
pub fn lemma_l22_integral<T: Scalar>(
    u: &[T],
    eff: &EffectiveParams<T>,
    grid: &Grid<T>,
) -> Result<CapacityIntegral> {
    if u.len() != grid.len() || eff.k1.len() != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: grid.len(),
            got: u.len(),
        });
    }
    let mut a = T::zero();
    let mut b = T::zero();
    for i in 0..u.len() {
        let r = eff.rr1[i] / eff.r1;
        let deficit = T::one() - u[i] / eff.k1[i];
        a = a + r * eff.k1[i] * deficit;
        b = b + r * eff.k1[i] * deficit * deficit;
    }
    let vol = grid.cell_volume();
    let (a, b) = ((a * vol).as_f64(), (b * vol).as_f64());
    Ok(CapacityIntegral {
        integral: a,
        squared_integral: b,
        identity_gap: (a - b).abs(),
        degenerate: eff.capacity_is_constant(),
    })
}

/// Log-derivative `u_x/u` at interior cells compared with `[0, alpha/d]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogDerivativeReport {
    /// Central-difference `u_x/u` at cells `1..n-1`.
    pub t: Vec<f64>,
    pub bound: f64,
    pub tolerance: f64,
    pub min: f64,
    pub max: f64,
    pub violations: usize,
}

pub fn log_derivative_bounds<T: Scalar>(
    u: &[T],
    d: T,
    alpha: T,
    grid: &Grid<T>,
) -> Result<LogDerivativeReport> {
    require_1d(grid, "log-derivative check")?;
    let n = grid.n();
    if u.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: u.len(),
        });
    }
    let h = grid.h();
    let tol = T::lit(10.0) * h * h;
    let bound = alpha / d;
    let mut t = Vec::with_capacity(n - 2);
    let mut violations = 0;
    for i in 1..n - 1 {
        let ti = (u[i + 1] - u[i - 1]) / (T::lit(2.0) * h * u[i]);
        if ti < -tol || ti > bound + tol {
            violations += 1;
        }
        t.push(ti.as_f64());
    }
    Ok(LogDerivativeReport {
        min: t.iter().copied().fold(f64::INFINITY, f64::min),
        max: t.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        t,
        bound: bound.as_f64(),
        tolerance: tol.as_f64(),
        violations,
    })
}

/// Face fluxes `A = d1 u_x - alpha1 u`, `B = d2 v_x - alpha2 v` of a pair and
/// the run-length encoded signs over the interior faces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxDiagnostics {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sign_a: Vec<(i8, usize)>,
    pub sign_b: Vec<(i8, usize)>,
}

fn run_lengths(xs: &[f64]) -> Vec<(i8, usize)> {
    let mut out: Vec<(i8, usize)> = Vec::new();
    for &x in xs {
        let s = if x > 0.0 {
            1
        } else if x < 0.0 {
            -1
        } else {
            0
        };
        match out.last_mut() {
            Some((last, count)) if *last == s => *count += 1,
            _ => out.push((s, 1)),
        }
    }
    out
}

pub fn flux_diagnostics<T: Scalar>(
    u: &[T],
    v: &[T],
    params: &ModelParams<T>,
    grid: &Grid<T>,
) -> Result<FluxDiagnostics> {
    require_1d(grid, "flux diagnostics")?;
    let a: Vec<f64> = face_fluxes(grid, params.d1, params.alpha1, u)
        .iter()
        .map(|x| x.as_f64())
        .collect();
    let b: Vec<f64> = face_fluxes(grid, params.d2, params.alpha2, v)
        .iter()
        .map(|x| x.as_f64())
        .collect();
    let n = grid.n();
    Ok(FluxDiagnostics {
        sign_a: run_lengths(&a[1..n]),
        sign_b: run_lengths(&b[1..n]),
        a,
        b,
    })
}

/// Both sides of the two weighted flux identities on `[face a1, face b1]` and
/// the interior residual of the log-derivative identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResiduals {
    pub weighted_u_lhs: f64,
    pub weighted_u_rhs: f64,
    pub weighted_u_residual: f64,
    pub weighted_v_lhs: f64,
    pub weighted_v_rhs: f64,
    pub weighted_v_residual: f64,
    pub log_derivative_residual: f64,
}

/// Evaluates, for a coexistence pair on faces `a1 <= b1` (indices `0..=n`):
///
/// ```text
/// (1/d1) ∫ [(d1-d2) v_x - (a1-a2) v] A e^{-a1 x/d1} = [A e^{-a1 x/d1} v] - [B e^{-a1 x/d1} u]
/// (1/d2) ∫ [(d2-d1) u_x - (a2-a1) u] B e^{-a2 x/d2} = [B e^{-a2 x/d2} u] - [A e^{-a2 x/d2} v]
/// -d1 T_x + a1 T - d1 T^2 = -d2 S_x + a2 S - d2 S^2,   T = u_x/u, S = v_x/v
/// ```
///
/// with `A, B` the face fluxes, trapezoid quadrature over faces and face
/// values averaged from the adjacent cells.
pub fn coexistence_identities<T: Scalar>(
    u: &[T],
    v: &[T],
    params: &ModelParams<T>,
    grid: &Grid<T>,
    a1: usize,
    b1: usize,
) -> Result<IdentityResiduals> {
    require_1d(grid, "coexistence identities")?;
    let n = grid.n();
    for f in [u, v] {
        if f.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: f.len(),
            });
        }
    }
    if !(a1 <= b1 && b1 <= n) {
        return Err(Error::param(
            "interval",
            format!("need faces 0 <= a1 <= b1 <= {n}, got {a1}, {b1}"),
        ));
    }
    let f64s = |x: &[T]| x.iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
    let a = f64s(&face_fluxes(grid, params.d1, params.alpha1, u));
    let b = f64s(&face_fluxes(grid, params.d2, params.alpha2, v));
    let (u, v) = (f64s(u), f64s(v));
    let (d1, d2) = (params.d1.as_f64(), params.d2.as_f64());
    let (al1, al2) = (params.alpha1.as_f64(), params.alpha2.as_f64());
    let h = grid.h().as_f64();

    // face values and derivatives; at the outer faces use the adjacent cell
    // (the fluxes vanish there so these only enter multiplied by zero)
    let face_val = |f: &[f64], k: usize| -> f64 {
        if k == 0 {
            f[0]
        } else if k == n {
            f[n - 1]
        } else {
            0.5 * (f[k - 1] + f[k])
        }
    };
    let face_dx = |f: &[f64], k: usize| -> f64 {
        if k == 0 || k == n {
            0.0
        } else {
            (f[k] - f[k - 1]) / h
        }
    };
    let x_face = |k: usize| grid.face(k).as_f64();
    let w1 = |k: usize| (-al1 / d1 * x_face(k)).exp();
    let w2 = |k: usize| (-al2 / d2 * x_face(k)).exp();

    let mut lhs_u = 0.0;
    let mut lhs_v = 0.0;
    for k in a1..=b1 {
        let weight = if a1 == b1 {
            0.0
        } else if k == a1 || k == b1 {
            0.5 * h
        } else {
            h
        };
        let gu = ((d1 - d2) * face_dx(&v, k) - (al1 - al2) * face_val(&v, k)) * a[k] * w1(k);
        let gv = ((d2 - d1) * face_dx(&u, k) - (al2 - al1) * face_val(&u, k)) * b[k] * w2(k);
        lhs_u += weight * gu;
        lhs_v += weight * gv;
    }
    lhs_u /= d1;
    lhs_v /= d2;
    let bracket = |g: &dyn Fn(usize) -> f64| g(b1) - g(a1);
    let rhs_u =
        bracket(&|k| a[k] * w1(k) * face_val(&v, k)) - bracket(&|k| b[k] * w1(k) * face_val(&u, k));
    let rhs_v =
        bracket(&|k| b[k] * w2(k) * face_val(&u, k)) - bracket(&|k| a[k] * w2(k) * face_val(&v, k));

    // log derivatives at interior faces, their derivative at interior cells
    let logd = |f: &[f64], k: usize| (f[k] - f[k - 1]) / (h * 0.5 * (f[k] + f[k - 1]));
    let mut worst = 0.0f64;
    for i in 1..n - 1 {
        let (tl, tr) = (logd(&u, i), logd(&u, i + 1));
        let (sl, sr) = (logd(&v, i), logd(&v, i + 1));
        let (t, s) = (0.5 * (tl + tr), 0.5 * (sl + sr));
        let (tx, sx) = ((tr - tl) / h, (sr - sl) / h);
        let lhs = -d1 * tx + al1 * t - d1 * t * t;
        let rhs = -d2 * sx + al2 * s - d2 * s * s;
        worst = worst.max((lhs - rhs).abs());
    }

    Ok(IdentityResiduals {
        weighted_u_lhs: lhs_u,
        weighted_u_rhs: rhs_u,
        weighted_u_residual: (lhs_u - rhs_u).abs(),
        weighted_v_lhs: lhs_v,
        weighted_v_rhs: rhs_v,
        weighted_v_residual: (lhs_v - rhs_v).abs(),
        log_derivative_residual: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{assemble_transport, Advection2d};
    use crate::expr::FieldExpr;
    use crate::model::build_effective_params;

    fn single(
        d: f64,
        alpha: f64,
        k: &str,
        mu: f64,
        n: usize,
    ) -> (
        TransportOperator<f64>,
        Kinetics<f64>,
        EffectiveParams<f64>,
        Grid<f64>,
    ) {
        let g = Grid::line(0.0, 1.0, n).unwrap();
        let p = ModelParams::new(d, d, alpha, alpha, mu, FieldExpr::parse(k).unwrap());
        let eff = build_effective_params(&p, mu, &g).unwrap();
        (
            assemble_transport(&g, d, alpha).unwrap(),
            Kinetics::transformed(&eff),
            eff,
            g,
        )
    }

    #[test]
    fn constant_capacity_without_drift_is_capacity() {
        let (op, kin, eff, _) = single(0.1, 0.0, "1.7", 0.2, 32);
        let s = solve_single_steady(&op, &kin, &SteadyOptions::default()).unwrap();
        assert!(s.residual_norm < 1e-12);
        for (u, k) in s.u.iter().zip(&eff.k1) {
            assert!((u - k).abs() < 1e-10);
        }
    }

    #[test]
    fn drift_free_residual_of_capacity_is_diffusion_of_capacity() {
        // with alpha = 0 the reaction vanishes at u = K1 but d K1'' does not,
        // so K1 is not stationary unless K1 is linear
        let (op, kin, eff, g) = single(0.08, 0.0, "2+cos(pi*x)", 0.0, 128);
        let r = single_residual(&op, &kin, &eff.k1);
        let pi2 = std::f64::consts::PI.powi(2);
        for i in 1..127 {
            let x = g.center(i);
            let exact = -0.08 * pi2 * (std::f64::consts::PI * x).cos();
            assert!((r[i] - exact).abs() < 1e-3, "cell {i}: {} vs {exact}", r[i]);
        }
        let s = solve_single_steady(&op, &kin, &SteadyOptions::default()).unwrap();
        let gap =
            s.u.iter()
                .zip(&eff.k1)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        assert!(gap > 1e-2);
    }

    #[test]
    fn marching_and_newton_agree() {
        let (op, kin, eff, _) = single(0.08, 0.05, "2+cos(pi*x)", 0.009, 256);
        let mean = eff.k1.iter().sum::<f64>() / 256.0;
        let newton = steady_by_newton(&op, &kin, &vec![mean; 256], 1e-11, 50).unwrap();
        let marched = steady_by_time_marching(&op, &kin, &vec![mean; 256], 1e-11, 400_000).unwrap();
        assert!(newton.residual_norm < 1e-10);
        let diff = newton
            .u
            .iter()
            .zip(&marched.u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "diff {diff}");
        let lo = min_value(&newton.u);
        let hi = max_abs(&newton.u);
        assert!(lo > 0.0 && hi - lo > 0.1);
    }

    #[test]
    fn washout_reported_as_not_persistent() {
        // strong drift with slow growth sweeps the population out
        let g = Grid::line(0.0, 1.0, 64).unwrap();
        let p = ModelParams::new(0.05, 0.05, 1.5, 1.5, 0.0, FieldExpr::constant(1.0))
            .with_growth(FieldExpr::constant(0.01));
        let eff = build_effective_params(&p, 0.0, &g).unwrap();
        let op = assemble_transport(&g, 0.05, 1.5).unwrap();
        let err = solve_single_steady(&op, &Kinetics::transformed(&eff), &SteadyOptions::default());
        assert!(matches!(err, Err(Error::NotPersistent)), "{err:?}");
    }

    #[test]
    fn capacity_integral_degenerate_and_positive() {
        let (op, kin, eff, g) = single(0.1, 0.0, "1.5", 0.0, 16);
        let s = solve_single_steady(&op, &kin, &SteadyOptions::default()).unwrap();
        let c = lemma_l22_integral(&s.u, &eff, &g).unwrap();
        assert!(c.degenerate && c.integral.abs() < 1e-12);

        let (op, kin, eff, g) = single(0.08, 0.05, "2+cos(pi*x)", 0.009, 512);
        let s = solve_single_steady(&op, &kin, &SteadyOptions::default()).unwrap();
        let c = lemma_l22_integral(&s.u, &eff, &g).unwrap();
        assert!(!c.degenerate && c.integral > 0.0);
        assert!(c.identity_gap < 1e-6, "{c:?}");
    }

    #[test]
    fn log_derivative_vanishes_without_drift() {
        let (op, kin, _, g) = single(0.08, 0.0, "2", 0.1, 64);
        let s = solve_single_steady(&op, &kin, &SteadyOptions::default()).unwrap();
        let r = log_derivative_bounds(&s.u, 0.08, 0.0, &g).unwrap();
        assert!(r.t.iter().all(|t| t.abs() < 1e-8));
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn symmetric_species_give_near_singular_pair() {
        let g = Grid::line(0.0, 1.0, 32).unwrap();
        let p = ModelParams::new(
            0.1,
            0.1,
            0.05,
            0.05,
            0.1,
            FieldExpr::parse("2+cos(pi*x)").unwrap(),
        );
        let sys = CompetitionSystem::transformed(&p, &g, Advection2d::X).unwrap();
        let k1 = sys.kinetics_u().effective_capacity();
        let half: Vec<f64> = k1.iter().map(|k| 0.5 * k).collect();
        let pair = solve_coexistence(&sys, &half, &half, 1e-10, 50)
            .unwrap()
            .expect("positive pair");
        assert!(pair.near_singular);
        assert!(pair.residual_norm < 1e-10);
        assert!(min_value(&pair.u) > 0.0 && min_value(&pair.v) > 0.0);
    }

    #[test]
    fn flux_identities_trivial_for_identical_movement() {
        let g = Grid::line(0.0, 1.0, 32).unwrap();
        let p = ModelParams::new(
            0.1,
            0.1,
            0.05,
            0.05,
            0.1,
            FieldExpr::parse("2+cos(pi*x)").unwrap(),
        );
        let u: Vec<f64> = g.centers().iter().map(|x| 1.0 + 0.3 * x).collect();
        let v: Vec<f64> = g.centers().iter().map(|x| 0.5 + 0.1 * x * x).collect();
        let r = coexistence_identities(&u, &v, &p, &g, 0, 32).unwrap();
        assert_eq!(r.weighted_u_lhs, 0.0);
        assert!(r.weighted_u_rhs.abs() < 1e-15);
        let fl = flux_diagnostics(&u, &v, &p, &g).unwrap();
        assert_eq!(fl.a[0], 0.0);
        assert_eq!(fl.b[32], 0.0);
    }

    #[test]
    fn run_lengths_group_signs() {
        assert_eq!(
            run_lengths(&[1.0, 2.0, -1.0, 0.0, 0.0, 3.0]),
            vec![(1, 2), (-1, 1), (0, 2), (1, 1)]
        );
    }
}
