//! IMEX Euler time stepping of the coupled system and run classification.
//!
//! Each step solves `(I - dt L_u) u' = u + dt R_u(u, v)` and the same for `v`:
//! transport is implicit, the logistic competition term explicit. Because the
//! columns of `L` sum to zero, `sum(u') = sum(u) + dt sum(R_u)` holds up to
//! rounding, and because `I - dt L` is an M-matrix the update keeps densities
//! nonnegative while `dt <= 0.9 / max(r r1)`.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::banded::BandLu;
use crate::discretization::{assemble, Advection2d, Field, Grid, TransportOperator};
use crate::error::{Error, Result};
use crate::model::{build_effective_params, Kinetics, ModelParams};
use crate::scalar::{max_abs, Scalar};

/// Cell count above which the two species' solves run on separate threads.
const PARALLEL_CELLS: usize = 1024;

/// Densities of both species at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesState<T> {
    pub t: T,
    pub u: Field<T>,
    pub v: Field<T>,
}

impl<T: Scalar> SpeciesState<T> {
    pub fn new(t: T, u: Field<T>, v: Field<T>) -> Self {
        Self { t, u, v }
    }

    pub fn uniform(len: usize, u0: T, v0: T) -> Self {
        Self::new(T::zero(), vec![u0; len], vec![v0; len])
    }
}

/// Transport operators and reaction coefficients of both species on one grid.
#[derive(Debug, Clone)]
pub struct CompetitionSystem<T> {
    grid: Grid<T>,
    op_u: TransportOperator<T>,
    op_v: TransportOperator<T>,
    kin_u: Kinetics<T>,
    kin_v: Kinetics<T>,
}

impl<T: Scalar> CompetitionSystem<T> {
    pub fn new(
        grid: Grid<T>,
        op_u: TransportOperator<T>,
        op_v: TransportOperator<T>,
        kin_u: Kinetics<T>,
        kin_v: Kinetics<T>,
    ) -> Result<Self> {
        let n = grid.len();
        for len in [op_u.len(), op_v.len(), kin_u.len(), kin_v.len()] {
            if len != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        Ok(Self {
            grid,
            op_u,
            op_v,
            kin_u,
            kin_v,
        })
    }

    fn operators(
        params: &ModelParams<T>,
        grid: &Grid<T>,
        adv: Advection2d,
    ) -> Result<(TransportOperator<T>, TransportOperator<T>)> {
        Ok((
            assemble(grid, params.d1, params.alpha1, adv)?,
            assemble(grid, params.d2, params.alpha2, adv)?,
        ))
    }

    /// Harvest-free form; requires `mu1 == mu2`.
    pub fn transformed(params: &ModelParams<T>, grid: &Grid<T>, adv: Advection2d) -> Result<Self> {
        let mu = params
            .equal_harvest()
            .ok_or_else(|| Error::Unsupported("the harvest-free form needs mu1 == mu2".into()))?;
        let eff = build_effective_params(params, mu, grid)?;
        let (op_u, op_v) = Self::operators(params, grid, adv)?;
        Self::new(
            grid.clone(),
            op_u,
            op_v,
            Kinetics::transformed(&eff),
            Kinetics::transformed(&eff),
        )
    }

    /// Raw harvested form `r u (1 - (u+v)/K - mu_i)`.
    pub fn harvested(params: &ModelParams<T>, grid: &Grid<T>, adv: Advection2d) -> Result<Self> {
        let (op_u, op_v) = Self::operators(params, grid, adv)?;
        Self::new(
            grid.clone(),
            op_u,
            op_v,
            Kinetics::harvested(params, params.mu1, grid)?,
            Kinetics::harvested(params, params.mu2, grid)?,
        )
    }

    /// Transformed form when harvesting is equal, harvested form otherwise.
    pub fn from_params(params: &ModelParams<T>, grid: &Grid<T>, adv: Advection2d) -> Result<Self> {
        if params.equal_harvest().is_some() {
            Self::transformed(params, grid, adv)
        } else {
            Self::harvested(params, grid, adv)
        }
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn op_u(&self) -> &TransportOperator<T> {
        &self.op_u
    }

    pub fn op_v(&self) -> &TransportOperator<T> {
        &self.op_v
    }

    pub fn kinetics_u(&self) -> &Kinetics<T> {
        &self.kin_u
    }

    pub fn kinetics_v(&self) -> &Kinetics<T> {
        &self.kin_v
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Explicit-reaction step limit `0.9 / max(r r1)` over both species.
    pub fn dt_max(&self) -> T {
        T::lit(0.9) / self.kin_u.max_net_rate().max(self.kin_v.max_net_rate())
    }

    /// Largest effective carrying capacity over both species.
    pub fn capacity_scale(&self) -> T {
        let cu = self.kin_u.effective_capacity();
        let cv = self.kin_v.effective_capacity();
        max_abs(&cu).max(max_abs(&cv))
    }

    /// Smallest effective carrying capacity over both species.
    pub fn min_capacity(&self) -> T {
        let cu = self.kin_u.effective_capacity();
        let cv = self.kin_v.effective_capacity();
        cu.iter()
            .chain(cv.iter())
            .fold(T::infinity(), |m, &x| m.min(x))
    }

    pub fn reaction_u(&self, u: &[T], v: &[T]) -> Field<T> {
        (0..u.len())
            .map(|i| self.kin_u.eval(i, u[i], v[i]))
            .collect()
    }

    pub fn reaction_v(&self, u: &[T], v: &[T]) -> Field<T> {
        (0..u.len())
            .map(|i| self.kin_v.eval(i, v[i], u[i]))
            .collect()
    }

    /// Stationary residuals `(L_u u + R_u, L_v v + R_v)`.
    pub fn residual(&self, u: &[T], v: &[T]) -> (Field<T>, Field<T>) {
        let mut ru = self.op_u.matrix().matvec(u);
        let mut rv = self.op_v.matrix().matvec(v);
        for i in 0..u.len() {
            ru[i] = ru[i] + self.kin_u.eval(i, u[i], v[i]);
            rv[i] = rv[i] + self.kin_v.eval(i, v[i], u[i]);
        }
        (ru, rv)
    }

    fn check_state(&self, state: &SpeciesState<T>) -> Result<()> {
        let n = self.len();
        for len in [state.u.len(), state.v.len()] {
            if len != n {
                return Err(Error::ShapeMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        Ok(())
    }
}

/// IMEX Euler stepper with both implicit factorizations computed once.
#[derive(Debug)]
pub struct ImexStepper<'a, T> {
    system: &'a CompetitionSystem<T>,
    dt: T,
    lu_u: BandLu<T>,
    lu_v: BandLu<T>,
    clamps: usize,
}

impl<'a, T: Scalar> ImexStepper<'a, T> {
    pub fn new(system: &'a CompetitionSystem<T>, dt: T) -> Result<Self> {
        let dt_max = system.dt_max();
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::param("dt", format!("must be > 0, got {dt}")));
        }
        // a relative slack absorbs the rounding of t_end / ceil(t_end / dt)
        if dt > dt_max * (T::one() + T::lit(1e-12)) {
            return Err(Error::param(
                "dt",
                format!(
                    "{dt} exceeds the explicit-reaction limit dt_max = 0.9/max(r r1) = {dt_max}"
                ),
            ));
        }
        let lu_u = system
            .op_u
            .matrix()
            .shifted_scaled(T::one(), -dt)
            .factor()?;
        let lu_v = system
            .op_v
            .matrix()
            .shifted_scaled(T::one(), -dt)
            .factor()?;
        Ok(Self {
            system,
            dt,
            lu_u,
            lu_v,
            clamps: 0,
        })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Number of negative values reset to zero so far.
    pub fn clamps(&self) -> usize {
        self.clamps
    }

    /// Advances `state` by one step in place.
    pub fn step(&mut self, state: &mut SpeciesState<T>) -> Result<()> {
        self.system.check_state(state)?;
        let sys = self.system;
        let dt = self.dt;
        let n = sys.len();
        let mut bu = Vec::with_capacity(n);
        let mut bv = Vec::with_capacity(n);
        for i in 0..n {
            let (u, v) = (state.u[i], state.v[i]);
            bu.push(u + dt * sys.kin_u.eval(i, u, v));
            bv.push(v + dt * sys.kin_v.eval(i, v, u));
        }
        let (ru, rv) = if n >= PARALLEL_CELLS {
            rayon::join(
                || self.lu_u.solve_in_place(&mut bu),
                || self.lu_v.solve_in_place(&mut bv),
            )
        } else {
            (
                self.lu_u.solve_in_place(&mut bu),
                self.lu_v.solve_in_place(&mut bv),
            )
        };
        ru?;
        rv?;
        let t_next = state.t + dt;
        for (name, f) in [("u", &mut bu), ("v", &mut bv)] {
            for x in f.iter_mut() {
                if !x.is_finite() {
                    return Err(Error::NonFinite {
                        t: t_next.as_f64(),
                        what: format!("{name} density"),
                    });
                }
                if *x < T::zero() {
                    *x = T::zero();
                    self.clamps += 1;
                }
            }
        }
        state.u = bu;
        state.v = bv;
        state.t = t_next;
        Ok(())
    }
}

/// Controls for [`integrate`].
#[derive(Debug, Clone)]
pub struct IntegrateOptions<T> {
    /// Approximate number of norm samples over the run (besides t=0).
    pub samples: usize,
    /// Times at which full fields are kept (snapped to the nearest step).
    pub snapshot_times: Vec<T>,
    /// Wall-clock limit; when exceeded the run stops and is flagged truncated.
    pub budget: Option<Duration>,
}

impl<T> Default for IntegrateOptions<T> {
    fn default() -> Self {
        Self {
            samples: 100,
            snapshot_times: Vec::new(),
            budget: None,
        }
    }
}

/// Norm time series of a run plus requested snapshots and the final state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub norm_u: Vec<T>,
    pub norm_v: Vec<T>,
    pub mass_u: Vec<T>,
    pub mass_v: Vec<T>,
    pub snapshots: Vec<SpeciesState<T>>,
    pub final_state: SpeciesState<T>,
    /// Step actually used (`t_end` divided by a whole number of steps).
    pub dt: T,
    pub steps: usize,
    pub clamps: usize,
    /// True when the wall-clock budget stopped the run early.
    pub truncated: bool,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn record(&mut self, grid: &Grid<T>, s: &SpeciesState<T>) {
        self.times.push(s.t);
        self.norm_u.push(max_abs(&s.u));
        self.norm_v.push(max_abs(&s.v));
        self.mass_u.push(grid.integrate(&s.u));
        self.mass_v.push(grid.integrate(&s.v));
    }
}

/// Integrates from `initial` to `initial.t + t_end` with a step no larger
/// than `dt`, landing exactly on the end time.
pub fn integrate<T: Scalar>(
    system: &CompetitionSystem<T>,
    initial: &SpeciesState<T>,
    t_end: T,
    dt: T,
    opts: &IntegrateOptions<T>,
) -> Result<Trajectory<T>> {
    system.check_state(initial)?;
    if !(t_end >= T::zero()) || !t_end.is_finite() {
        return Err(Error::param("t_end", format!("must be >= 0, got {t_end}")));
    }
    if !(dt > T::zero()) {
        return Err(Error::param("dt", format!("must be > 0, got {dt}")));
    }
    let steps = (t_end / dt).ceil().to_usize().unwrap_or(0);
    let dt_eff = if steps == 0 {
        dt
    } else {
        t_end / T::from_usize_exact(steps)
    };
    let mut stepper = ImexStepper::new(system, dt_eff)?;
    let stride = (steps / opts.samples.max(1)).max(1);
    let t0 = initial.t;
    let mut snap_steps: Vec<usize> = opts
        .snapshot_times
        .iter()
        .map(|&s| {
            let k = ((s - t0) / dt_eff)
                .round()
                .max(T::zero())
                .to_usize()
                .unwrap_or(0);
            k.min(steps)
        })
        .collect();
    snap_steps.sort_unstable();
    snap_steps.dedup();

    let mut state = initial.clone();
    let mut traj = Trajectory {
        times: Vec::new(),
        norm_u: Vec::new(),
        norm_v: Vec::new(),
        mass_u: Vec::new(),
        mass_v: Vec::new(),
        snapshots: Vec::new(),
        final_state: initial.clone(),
        dt: dt_eff,
        steps: 0,
        clamps: 0,
        truncated: false,
    };
    traj.record(system.grid(), &state);
    let mut next_snap = 0;
    if snap_steps.first() == Some(&0) {
        traj.snapshots.push(state.clone());
        next_snap = 1;
    }
    let start = Instant::now();
    for k in 1..=steps {
        stepper.step(&mut state)?;
        // avoid accumulating rounding in the clock
        state.t = if k == steps {
            t0 + t_end
        } else {
            t0 + dt_eff * T::from_usize_exact(k)
        };
        traj.steps = k;
        if k % stride == 0 || k == steps {
            traj.record(system.grid(), &state);
        }
        if next_snap < snap_steps.len() && snap_steps[next_snap] == k {
            traj.snapshots.push(state.clone());
            next_snap += 1;
        }
        if let Some(budget) = opts.budget {
            if start.elapsed() > budget {
                if k % stride != 0 && k != steps {
                    traj.record(system.grid(), &state);
                }
                traj.truncated = k < steps;
                break;
            }
        }
    }
    traj.clamps = stepper.clamps();
    traj.final_state = state;
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    UWins,
    VWins,
    Coexistence,
    BothExtinct,
    Undecided,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::UWins => "UWins",
            Verdict::VWins => "VWins",
            Verdict::Coexistence => "Coexistence",
            Verdict::BothExtinct => "BothExtinct",
            Verdict::Undecided => "Undecided",
        };
        f.write_str(s)
    }
}

/// End-of-run classification with the numbers it was based on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub verdict: Verdict,
    pub t_final: f64,
    pub norm_u: f64,
    pub norm_v: f64,
    pub eps_extinct: f64,
    pub eps_settle: f64,
    /// Relative change of each sup-norm over the last tenth of the samples.
    pub change_u: f64,
    pub change_v: f64,
    pub truncated: bool,
}

fn relative_change(xs: &[f64]) -> f64 {
    let (first, last) = (xs[0], xs[xs.len() - 1]);
    if last == 0.0 {
        if first == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        ((last - first) / last).abs()
    }
}

/// Classifies the end of a run: one species below `eps_extinct` while the
/// other is not decides a winner; both present and both sup-norms changing
/// by less than `eps_settle` (relative) over the last tenth of the samples is
/// coexistence.
pub fn classify_outcome<T: Scalar>(traj: &Trajectory<T>, eps_extinct: T, eps_settle: T) -> Outcome {
    let len = traj.len();
    let nu: Vec<f64> = traj.norm_u.iter().map(|x| x.as_f64()).collect();
    let nv: Vec<f64> = traj.norm_v.iter().map(|x| x.as_f64()).collect();
    let window = (((len as f64) * 0.1).ceil() as usize)
        .max(2)
        .min(len.max(1));
    let from = len.saturating_sub(window);
    let (change_u, change_v) = if len >= 2 {
        (relative_change(&nu[from..]), relative_change(&nv[from..]))
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let eps = eps_extinct.as_f64();
    let settle = eps_settle.as_f64();
    let (u, v) = (
        nu.last().copied().unwrap_or(0.0),
        nv.last().copied().unwrap_or(0.0),
    );
    let verdict = if traj.truncated || len < 2 {
        Verdict::Undecided
    } else if v < eps && u >= eps {
        Verdict::UWins
    } else if u < eps && v >= eps {
        Verdict::VWins
    } else if u < eps && v < eps {
        Verdict::BothExtinct
    } else if change_u < settle && change_v < settle {
        Verdict::Coexistence
    } else {
        Verdict::Undecided
    };
    Outcome {
        verdict,
        t_final: traj.final_state.t.as_f64(),
        norm_u: u,
        norm_v: v,
        eps_extinct: eps,
        eps_settle: settle,
        change_u,
        change_v,
        truncated: traj.truncated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::FieldExpr;

    fn fig1(n: usize) -> CompetitionSystem<f64> {
        let p = ModelParams::new(
            0.08,
            0.07,
            0.05,
            0.04,
            0.009,
            FieldExpr::parse("2+cos(pi*x)").unwrap(),
        );
        CompetitionSystem::transformed(&p, &Grid::line(0.0, 1.0, n).unwrap(), Advection2d::X)
            .unwrap()
    }

    #[test]
    fn extinction_is_absorbing() {
        let sys = fig1(32);
        let mut s = SpeciesState::uniform(32, 0.0, 0.0);
        let mut st = ImexStepper::new(&sys, 0.5).unwrap();
        for _ in 0..10 {
            st.step(&mut s).unwrap();
        }
        assert!(s.u.iter().chain(&s.v).all(|&x| x == 0.0));
    }

    #[test]
    fn homogeneous_logistic_reduction() {
        let p = ModelParams::new(0.1, 0.2, 0.0, 0.0, 0.25, FieldExpr::constant(2.0));
        let sys =
            CompetitionSystem::transformed(&p, &Grid::line(0.0, 1.0, 16).unwrap(), Advection2d::X)
                .unwrap();
        let mut s = SpeciesState::uniform(16, 0.3, 0.0);
        let dt = 0.1;
        let mut st = ImexStepper::new(&sys, dt).unwrap();
        let (rate, k1) = (0.75, 1.5);
        let mut u: f64 = 0.3;
        for _ in 0..20 {
            st.step(&mut s).unwrap();
            u = u + dt * rate * u * (1.0 - u / k1);
            for &x in &s.u {
                assert!((x - u).abs() < 1e-13, "{x} vs {u}");
            }
        }
    }

    #[test]
    fn single_step_mass_identity() {
        let sys = fig1(64);
        let s0 = SpeciesState::uniform(64, 0.5, 0.5);
        let mut s = s0.clone();
        let mut st = ImexStepper::new(&sys, 0.1).unwrap();
        st.step(&mut s).unwrap();
        let g = sys.grid();
        let ru = sys.reaction_u(&s0.u, &s0.v);
        let rv = sys.reaction_v(&s0.u, &s0.v);
        let lhs_u = g.integrate(&s.u) - g.integrate(&s0.u);
        let lhs_v = g.integrate(&s.v) - g.integrate(&s0.v);
        assert!((lhs_u - 0.1 * g.integrate(&ru)).abs() < 1e-12);
        assert!((lhs_v - 0.1 * g.integrate(&rv)).abs() < 1e-12);
        assert_eq!(st.clamps(), 0);
    }

    #[test]
    fn rejects_oversized_step() {
        let sys = fig1(16);
        assert!(ImexStepper::new(&sys, 1.0).is_err());
        assert!(ImexStepper::new(&sys, 0.0).is_err());
    }

    #[test]
    fn zero_horizon_keeps_initial_sample_only() {
        let sys = fig1(16);
        let s0 = SpeciesState::uniform(16, 0.5, 0.5);
        let tr = integrate(&sys, &s0, 0.0, 0.1, &IntegrateOptions::default()).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.steps, 0);
        assert_eq!(tr.final_state, s0);
    }

    #[test]
    fn lands_exactly_on_end_time() {
        let sys = fig1(16);
        let s0 = SpeciesState::uniform(16, 0.5, 0.5);
        let opts = IntegrateOptions {
            samples: 7,
            snapshot_times: vec![0.0, 0.5, 10.0],
            budget: None,
        };
        let tr = integrate(&sys, &s0, 1.05, 0.1, &opts).unwrap();
        assert_eq!(tr.steps, 11);
        assert_eq!(*tr.times.last().unwrap(), 1.05);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(tr.snapshots.len(), 3);
        assert_eq!(tr.snapshots[0].t, 0.0);
        assert_eq!(tr.snapshots[2].t, 1.05);
    }

    fn traj(nu: &[f64], nv: &[f64]) -> Trajectory<f64> {
        let n = nu.len();
        Trajectory {
            times: (0..n).map(|i| i as f64).collect(),
            norm_u: nu.to_vec(),
            norm_v: nv.to_vec(),
            mass_u: nu.to_vec(),
            mass_v: nv.to_vec(),
            snapshots: vec![],
            final_state: SpeciesState::new(n as f64, vec![], vec![]),
            dt: 1.0,
            steps: n,
            clamps: 0,
            truncated: false,
        }
    }

    #[test]
    fn verdicts_from_final_norms() {
        let o = classify_outcome(&traj(&[0.5, 0.1, 0.0], &[1.0, 1.5, 1.8]), 1e-3, 1e-4);
        assert_eq!(o.verdict, Verdict::VWins);
        let o = classify_outcome(&traj(&[0.9, 0.9, 0.9], &[0.95, 0.95, 0.95]), 1e-3, 1e-4);
        assert_eq!(o.verdict, Verdict::Coexistence);
        let o = classify_outcome(&traj(&[0.9, 0.8], &[0.95, 0.95]), 1e-3, 1e-4);
        assert_eq!(o.verdict, Verdict::Undecided);
        let o = classify_outcome(&traj(&[1.0, 1.2], &[0.1, 0.0]), 1e-3, 1e-4);
        assert_eq!(o.verdict, Verdict::UWins);
        let o = classify_outcome(&traj(&[1.0, 0.0], &[0.1, 0.0]), 1e-3, 1e-4);
        assert_eq!(o.verdict, Verdict::BothExtinct);
        let mut t = traj(&[1.0, 1.0], &[0.0, 0.0]);
        t.truncated = true;
        assert_eq!(classify_outcome(&t, 1e-3, 1e-4).verdict, Verdict::Undecided);
    }

    #[test]
    fn unequal_harvest_uses_raw_form() {
        let p = ModelParams::new(1.0, 1.0, 1.0, 1.0, 0.0, FieldExpr::constant(2.0))
            .with_harvest(0.01, 0.0076);
        let g = Grid::line(0.0, 1.0, 8).unwrap();
        let sys = CompetitionSystem::from_params(&p, &g, Advection2d::X).unwrap();
        assert!(matches!(sys.kinetics_u(), Kinetics::Harvested { .. }));
        assert!(CompetitionSystem::transformed(&p, &g, Advection2d::X).is_err());
    }
}
