//! Built-in figure presets, the `alpha2` sweep across the exclusion and
//! coexistence regimes, and the lemma verification report.

use rayon::prelude::*;
use serde::Serialize;

use crate::discretization::{Advection2d, Dim, Grid};
use crate::error::{Error, Result};
use crate::expr::FieldExpr;
use crate::model::{build_effective_params, classify_regime, ModelParams, RegimeReport};
use crate::spectral::{
    eigen_difference_check, invader_potential, perron_band_check, stability_of_semitrivial,
    SemiTrivial, Stability,
};
use crate::steady::{
    coexistence_identities, lemma_l22_integral, log_derivative_bounds, semitrivial_u,
    semitrivial_v, solve_coexistence, CoexistenceState, SteadyOptions, SteadyState,
};
use crate::timestepper::{
    classify_outcome, integrate, CompetitionSystem, IntegrateOptions, Outcome, SpeciesState,
    Verdict,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Species {
    U,
    V,
}

/// What a preset's caption and narrative say about the state at `t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expectation {
    /// The classifier must return this verdict.
    Settled { verdict: Verdict },
    /// Both species above the extinction threshold, optionally one larger in sup-norm.
    BothPresent { dominant: Option<Species> },
    /// Only the ordering of the sup-norms is claimed.
    Dominant { species: Species },
}

impl Expectation {
    pub fn is_met(&self, outcome: &Outcome) -> bool {
        let larger = |s: &Species| match s {
            Species::U => outcome.norm_u > outcome.norm_v,
            Species::V => outcome.norm_v > outcome.norm_u,
        };
        match self {
            Expectation::Settled { verdict } => outcome.verdict == *verdict,
            Expectation::BothPresent { dominant } => {
                !outcome.truncated
                    && outcome.norm_u >= outcome.eps_extinct
                    && outcome.norm_v >= outcome.eps_extinct
                    && dominant.as_ref().is_none_or(larger)
            }
            Expectation::Dominant { species } => !outcome.truncated && larger(species),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FigurePreset {
    pub id: &'static str,
    pub caption: &'static str,
    pub params: ModelParams<f64>,
    pub n: usize,
    pub t_end: f64,
    pub expected: Expectation,
}

const K_1D: &str = "2+cos(pi*x)";
const K_2D: &str = "2.0+cos(pi*x)*cos(pi*y)";

/// Grid size used for 1D presets.
pub const PRESET_N_1D: usize = 256;
/// Cells per axis for 2D presets.
pub const PRESET_N_2D: usize = 64;

/// The eleven built-in presets, in catalog order.
pub fn catalog() -> Vec<FigurePreset> {
    let k1 = FieldExpr::parse(K_1D).expect("built-in capacity");
    let k2 = FieldExpr::parse(K_2D).expect("built-in capacity");
    let line = |d1, d2, a1, a2, mu| ModelParams::new(d1, d2, a1, a2, mu, k1.clone());
    let square =
        |d1, d2, a1, a2, mu| ModelParams::new(d1, d2, a1, a2, mu, k2.clone()).with_dim(Dim::Two);
    let settled = |verdict| Expectation::Settled { verdict };
    let both = |dominant| Expectation::BothPresent { dominant };
    let preset = |id, caption, params: ModelParams<f64>, t_end, expected| {
        let n = match params.dim {
            Dim::One => PRESET_N_1D,
            Dim::Two => PRESET_N_2D,
        };
        FigurePreset {
            id,
            caption,
            params,
            n,
            t_end,
            expected,
        }
    };
    let unequal = square(1.0, 1.0, 1.0, 1.0, 0.0).with_harvest(0.01, 0.0076);
    vec![
        preset(
            "fig1",
            "d1=0.08, d2=0.07, alpha1=0.05, alpha2=0.04, mu=0.009, t=2000",
            line(0.08, 0.07, 0.05, 0.04, 0.009),
            2000.0,
            settled(Verdict::VWins),
        ),
        preset(
            "fig3",
            "d1=0.08, d2=0.07, alpha1=0.05, alpha2=0.04, mu=0.001, t=2000",
            line(0.08, 0.07, 0.05, 0.04, 0.001),
            2000.0,
            settled(Verdict::VWins),
        ),
        preset(
            "fig6",
            "2D, d1=0.005, d2=0.002, alpha1=0.002, alpha2=0.0018, mu=0.03, t=80",
            square(0.005, 0.002, 0.002, 0.0018, 0.03),
            80.0,
            both(Some(Species::U)),
        ),
        preset(
            "fig7",
            "2D, d1=0.002, d2=0.001, alpha1=0.001, alpha2=0.0006, mu=0.3, t=80",
            square(0.002, 0.001, 0.001, 0.0006, 0.3),
            80.0,
            both(None),
        ),
        preset(
            "fig8",
            "d1=0.002, d2=0.001, alpha1=0.001, alpha2=0.0006, mu=0.3, t=2000",
            line(0.002, 0.001, 0.001, 0.0006, 0.3),
            2000.0,
            settled(Verdict::Coexistence),
        ),
        preset(
            "fig10",
            "d1=0.002, d2=0.001, alpha1=0.001, alpha2=0.0006, mu=0.3, t=80",
            line(0.002, 0.001, 0.001, 0.0006, 0.3),
            80.0,
            both(None),
        ),
        preset(
            "fig12",
            "d1=3, d2=0.8, alpha1=0.7, alpha2=0.03, mu=0.1, t=80",
            line(3.0, 0.8, 0.7, 0.03, 0.1),
            80.0,
            Expectation::Dominant {
                species: Species::V,
            },
        ),
        preset(
            "fig13",
            "d1=3, d2=0.8, alpha1=0.7, alpha2=0.03, mu=0.1, t=2000",
            line(3.0, 0.8, 0.7, 0.03, 0.1),
            2000.0,
            settled(Verdict::VWins),
        ),
        preset(
            "fig15",
            "2D, d1=3, d2=0.8, alpha1=0.7, alpha2=0.03, mu=0.1, t=80",
            square(3.0, 0.8, 0.7, 0.03, 0.1),
            80.0,
            Expectation::Dominant {
                species: Species::V,
            },
        ),
        preset(
            "fig17",
            "2D, d=1, alpha=1, mu1=0.01, mu2=0.0076, t=80",
            unequal.clone(),
            80.0,
            both(Some(Species::V)),
        ),
        preset(
            "fig17-long",
            "2D, d=1, alpha=1, mu1=0.01, mu2=0.0076, long horizon t=5000",
            unequal,
            5000.0,
            settled(Verdict::VWins),
        ),
    ]
}

pub fn preset(id: &str) -> Result<FigurePreset> {
    catalog()
        .into_iter()
        .find(|p| p.id == id)
        .ok_or_else(|| Error::UnknownPreset(id.to_string()))
}

/// Everything needed for one time-dependent run.
#[derive(Debug, Clone)]
pub struct SimulationSetup {
    pub params: ModelParams<f64>,
    pub n: usize,
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Initial densities; `None` means `0.5 * min K1` for both.
    pub u0: Option<FieldExpr>,
    pub v0: Option<FieldExpr>,
    pub snapshot_times: Vec<f64>,
    pub samples: usize,
    pub advection: Advection2d,
    pub eps_extinct: Option<f64>,
    pub eps_settle: f64,
    pub budget: Option<std::time::Duration>,
}

impl SimulationSetup {
    pub fn new(params: ModelParams<f64>, n: usize, t_end: f64) -> Self {
        Self {
            params,
            n,
            dt: None,
            t_end,
            u0: None,
            v0: None,
            snapshot_times: vec![0.0, t_end],
            samples: 100,
            advection: Advection2d::X,
            eps_extinct: None,
            eps_settle: 1e-4,
            budget: None,
        }
    }

    pub fn from_preset(p: &FigurePreset) -> Self {
        Self::new(p.params.clone(), p.n, p.t_end)
    }

    pub fn grid(&self) -> Result<Grid<f64>> {
        Grid::new(self.params.dim, self.params.a, self.params.b, self.n)
    }
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub grid: Grid<f64>,
    pub system: CompetitionSystem<f64>,
    pub trajectory: crate::timestepper::Trajectory<f64>,
    pub outcome: Outcome,
    pub regime: RegimeReport,
}

pub fn initial_state(
    system: &CompetitionSystem<f64>,
    u0: Option<&FieldExpr>,
    v0: Option<&FieldExpr>,
) -> Result<SpeciesState<f64>> {
    let default = 0.5 * system.min_capacity();
    let field = |e: Option<&FieldExpr>| -> Result<Vec<f64>> {
        match e {
            Some(e) => {
                let f = system.grid().sample(e)?;
                if f.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                    return Err(Error::param(
                        "u0/v0",
                        "initial densities must be finite and nonnegative",
                    ));
                }
                Ok(f)
            }
            None => Ok(vec![default; system.len()]),
        }
    };
    Ok(SpeciesState::new(0.0, field(u0)?, field(v0)?))
}

pub fn run_simulation(setup: &SimulationSetup) -> Result<SimulationRun> {
    setup.params.validate()?;
    let regime = classify_regime(&setup.params)?;
    let grid = setup.grid()?;
    let system = CompetitionSystem::from_params(&setup.params, &grid, setup.advection)?;
    let initial = initial_state(&system, setup.u0.as_ref(), setup.v0.as_ref())?;
    let dt = setup.dt.unwrap_or_else(|| system.dt_max().min(0.1));
    let opts = IntegrateOptions {
        samples: setup.samples,
        snapshot_times: setup.snapshot_times.clone(),
        budget: setup.budget,
    };
    let trajectory = integrate(&system, &initial, setup.t_end, dt, &opts)?;
    let eps = setup.eps_extinct.unwrap_or(1e-3 * system.capacity_scale());
    let outcome = classify_outcome(&trajectory, eps, setup.eps_settle);
    Ok(SimulationRun {
        grid,
        system,
        trajectory,
        outcome,
        regime,
    })
}

/// Principal eigenvalues at both single-species states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemitrivialStability {
    pub kappa1: f64,
    pub tau1: f64,
    pub u_state: Stability,
    pub v_state: Stability,
}

pub fn semitrivial_states(
    system: &CompetitionSystem<f64>,
    opts: &SteadyOptions<f64>,
) -> Result<(SteadyState<f64>, SteadyState<f64>)> {
    Ok((semitrivial_u(system, opts)?, semitrivial_v(system, opts)?))
}

pub fn semitrivial_stability(
    system: &CompetitionSystem<f64>,
    u_hat: &SteadyState<f64>,
    v_hat: &SteadyState<f64>,
    tol: f64,
) -> Result<SemitrivialStability> {
    let k = stability_of_semitrivial(system, SemiTrivial::UOnly, u_hat, tol)?;
    let t = stability_of_semitrivial(system, SemiTrivial::VOnly, v_hat, tol)?;
    Ok(SemitrivialStability {
        kappa1: k.lambda1,
        tau1: t.lambda1,
        u_state: k.verdict,
        v_state: t.verdict,
    })
}

/// Newton for a coexistence pair, first from `seed` and then from `(K1/3, K1/3)`.
pub fn find_coexistence(
    system: &CompetitionSystem<f64>,
    seed: Option<&SpeciesState<f64>>,
    tol: f64,
) -> Result<Option<CoexistenceState<f64>>> {
    let third: Vec<f64> = system
        .kinetics_u()
        .effective_capacity()
        .iter()
        .map(|k| k / 3.0)
        .collect();
    let third_v: Vec<f64> = system
        .kinetics_v()
        .effective_capacity()
        .iter()
        .map(|k| k / 3.0)
        .collect();
    let mut guesses = Vec::new();
    if let Some(s) = seed {
        guesses.push((s.u.clone(), s.v.clone()));
    }
    guesses.push((third, third_v));
    for (gu, gv) in guesses {
        match solve_coexistence(system, &gu, &gv, tol, 50) {
            Ok(Some(found)) => return Ok(Some(found)),
            Ok(None) => {}
            Err(Error::SingularJacobian(msg)) => log::info!("coexistence Newton: {msg}"),
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

/// Classification of one `alpha2` value from the linear stability of the two
/// single-species states and the coexistence solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepVerdict {
    VWins,
    UWins,
    Coexistence,
    Undetermined,
    Anomaly,
}

impl SweepVerdict {
    fn from_parts(s: &SemitrivialStability, found: bool) -> Self {
        use Stability::*;
        match (s.u_state, s.v_state) {
            (Stable, Stable) if found => SweepVerdict::Anomaly,
            (Unstable, Stable) => SweepVerdict::VWins,
            (Stable, Unstable) => SweepVerdict::UWins,
            (Unstable, Unstable) if found => SweepVerdict::Coexistence,
            _ => SweepVerdict::Undetermined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub alpha2: f64,
    pub kappa1: f64,
    pub tau1: f64,
    pub u_state: Stability,
    pub v_state: Stability,
    pub coexistence: bool,
    pub coexistence_residual: Option<f64>,
    pub simulated: Outcome,
    pub verdict: SweepVerdict,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSettings {
    pub points: usize,
    pub refine: bool,
    pub t_end: f64,
    pub steady_tol: f64,
    pub eigen_tol: f64,
    pub coexistence_tol: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            points: 33,
            refine: true,
            t_end: 2000.0,
            steady_tol: 1e-10,
            eigen_tol: 1e-10,
            coexistence_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub omega1: f64,
    /// The open interval `(omega1 * alpha1, alpha1)` that is scanned.
    pub lower: f64,
    pub upper: f64,
    pub points: Vec<SweepPoint>,
    /// Verdicts along increasing `alpha2` with repeats collapsed.
    pub pattern: Vec<SweepVerdict>,
    pub transitions: usize,
    pub window: Option<[f64; 2]>,
    pub epsilon1: Option<f64>,
    pub epsilon2: Option<f64>,
    /// Point below the window is `VWins` and point above is `UWins` (or the
    /// window reaches the end of the scan).
    pub edges_consistent: bool,
    pub anomalies: Vec<f64>,
}

impl SweepResult {
    pub fn verdict_at(&self, alpha2: f64) -> Option<SweepVerdict> {
        self.points
            .iter()
            .min_by(|a, b| {
                (a.alpha2 - alpha2)
                    .abs()
                    .total_cmp(&(b.alpha2 - alpha2).abs())
            })
            .map(|p| p.verdict)
    }

    pub fn in_window(&self, alpha2: f64) -> bool {
        self.window
            .is_some_and(|[lo, hi]| lo <= alpha2 && alpha2 <= hi)
    }
}

fn sweep_point(
    base: &ModelParams<f64>,
    grid: &Grid<f64>,
    u_hat: &SteadyState<f64>,
    alpha2: f64,
    settings: &SweepSettings,
) -> Result<SweepPoint> {
    let mut params = base.clone();
    params.alpha2 = alpha2;
    params.validate()?;
    let system = CompetitionSystem::from_params(&params, grid, Advection2d::X)?;
    let opts = SteadyOptions {
        tol: settings.steady_tol,
        ..SteadyOptions::default()
    };
    let v_hat = semitrivial_v(&system, &opts)?;
    let stab = semitrivial_stability(&system, u_hat, &v_hat, settings.eigen_tol)?;
    let initial = initial_state(&system, None, None)?;
    let dt = system.dt_max().min(0.1);
    let traj = integrate(
        &system,
        &initial,
        settings.t_end,
        dt,
        &IntegrateOptions::default(),
    )?;
    let simulated = classify_outcome(&traj, 1e-3 * system.capacity_scale(), 1e-4);
    let pair = find_coexistence(&system, Some(&traj.final_state), settings.coexistence_tol)?;
    Ok(SweepPoint {
        alpha2,
        kappa1: stab.kappa1,
        tau1: stab.tau1,
        u_state: stab.u_state,
        v_state: stab.v_state,
        coexistence: pair.is_some(),
        coexistence_residual: pair.as_ref().map(|p| p.residual_norm),
        simulated,
        verdict: SweepVerdict::from_parts(&stab, pair.is_some()),
    })
}

/// Scans `alpha2` over `(omega1 alpha1, alpha1)` with `omega1 = d2/d1` and
/// locates the run of values where both single-species states are unstable
/// and a coexistence state exists. Points run in parallel and are merged by
/// `alpha2`; an optional pass adds the midpoint of every adjacent pair whose
/// verdicts differ.
pub fn sweep_alpha2(
    base: &ModelParams<f64>,
    n: usize,
    settings: &SweepSettings,
) -> Result<SweepResult> {
    base.validate()?;
    if base.dim != Dim::One {
        return Err(Error::Unsupported(
            "the alpha2 sweep is available on 1D grids only".into(),
        ));
    }
    if !(base.d1 > base.d2 && base.d2 > 0.0) {
        return Err(Error::param("d1, d2", "the sweep needs d1 > d2 > 0"));
    }
    if !(base.alpha1 > 0.0) {
        return Err(Error::param("alpha1", "the sweep needs alpha1 > 0"));
    }
    if settings.points < 8 {
        return Err(Error::param("sweep_points", "must be at least 8"));
    }
    let omega1 = base.d2 / base.d1;
    let (lower, upper) = (omega1 * base.alpha1, base.alpha1);
    let grid = Grid::line(base.a, base.b, n)?;
    let base_system = CompetitionSystem::from_params(base, &grid, Advection2d::X)?;
    let u_hat = semitrivial_u(
        &base_system,
        &SteadyOptions {
            tol: settings.steady_tol,
            ..SteadyOptions::default()
        },
    )?;
    let run = |alphas: &[f64]| -> Result<Vec<SweepPoint>> {
        alphas
            .par_iter()
            .map(|&a2| sweep_point(base, &grid, &u_hat, a2, settings))
            .collect()
    };
    let m = settings.points;
    let alphas: Vec<f64> = (0..m)
        .map(|k| lower + (upper - lower) * (k + 1) as f64 / (m + 1) as f64)
        .collect();
    let mut points = run(&alphas)?;
    if settings.refine {
        let mids: Vec<f64> = points
            .windows(2)
            .filter(|w| w[0].verdict != w[1].verdict)
            .map(|w| 0.5 * (w[0].alpha2 + w[1].alpha2))
            .collect();
        points.extend(run(&mids)?);
        points.sort_by(|a, b| a.alpha2.total_cmp(&b.alpha2));
    }
    Ok(summarize_sweep(omega1, lower, upper, points))
}

fn summarize_sweep(omega1: f64, lower: f64, upper: f64, points: Vec<SweepPoint>) -> SweepResult {
    let mut pattern: Vec<SweepVerdict> = Vec::new();
    for p in &points {
        if pattern.last() != Some(&p.verdict) {
            pattern.push(p.verdict);
        }
    }
    let transitions = pattern.len().saturating_sub(1);
    // longest run of coexistence points
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for (i, p) in points.iter().enumerate() {
        if p.verdict == SweepVerdict::Coexistence {
            let s = *start.get_or_insert(i);
            if best.is_none_or(|(bs, be)| i - s > be - bs) {
                best = Some((s, i));
            }
        } else {
            start = None;
        }
    }
    let window = best.map(|(s, e)| [points[s].alpha2, points[e].alpha2]);
    let edges_consistent = best.is_some_and(|(s, e)| {
        let below = s == 0 || points[s - 1].verdict == SweepVerdict::VWins;
        let above = e + 1 == points.len() || points[e + 1].verdict == SweepVerdict::UWins;
        below && above
    });
    let anomalies = points
        .iter()
        .filter(|p| p.verdict == SweepVerdict::Anomaly)
        .map(|p| p.alpha2)
        .collect();
    SweepResult {
        omega1,
        lower,
        upper,
        pattern,
        transitions,
        epsilon1: window.map(|w| w[0] - lower),
        epsilon2: window.map(|w| upper - w[1]),
        window,
        edges_consistent,
        anomalies,
        points,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Both sides vanish identically; passes trivially.
    Degenerate,
    /// The hypotheses of the statement do not hold here; the value is informational.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub name: String,
    pub status: CheckStatus,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub n: usize,
    pub coarse_n: usize,
    pub regime: RegimeReport,
    pub checks: Vec<LemmaCheck>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&LemmaCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, status: CheckStatus, value: f64, detail: impl Into<String>) {
        self.checks.push(LemmaCheck {
            name: name.to_string(),
            status,
            value,
            detail: detail.into(),
        });
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifySettings {
    pub steady_tol: f64,
    pub eigen_tol: f64,
    /// Horizon of the run that seeds the coexistence solve.
    pub t_end: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            steady_tol: 1e-10,
            eigen_tol: 1e-10,
            t_end: 2000.0,
        }
    }
}

/// Accepted range of the error ratio between `n/2` and `n` for a
/// second-order quantity.
pub const SECOND_ORDER_RATIO: (f64, f64) = (3.0, 5.0);
/// Residuals below this are treated as identically zero.
const ZERO_RESIDUAL: f64 = 1e-12;

fn ratio_status(coarse: f64, fine: f64) -> (CheckStatus, f64) {
    if coarse.abs() < ZERO_RESIDUAL && fine.abs() < ZERO_RESIDUAL {
        return (CheckStatus::Degenerate, f64::NAN);
    }
    let ratio = coarse / fine;
    let ok = ratio >= SECOND_ORDER_RATIO.0 && ratio <= SECOND_ORDER_RATIO.1;
    (
        if ok {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        },
        ratio,
    )
}

struct Level {
    grid: Grid<f64>,
    system: CompetitionSystem<f64>,
    u_hat: SteadyState<f64>,
    v_hat: SteadyState<f64>,
}

fn level(params: &ModelParams<f64>, n: usize, opts: &SteadyOptions<f64>) -> Result<Level> {
    let grid = Grid::line(params.a, params.b, n)?;
    let system = CompetitionSystem::from_params(params, &grid, Advection2d::X)?;
    let (u_hat, v_hat) = semitrivial_states(&system, opts)?;
    Ok(Level {
        grid,
        system,
        u_hat,
        v_hat,
    })
}

/// Runs the steady-state and spectral diagnostics at `n` cells (and `n/2`
/// for the refinement ratios) and collects one entry per check. Failures are
/// entries, not errors; only invalid input or a failed single-species solve
/// is an error.
pub fn verify_lemmas(
    params: &ModelParams<f64>,
    n: usize,
    settings: &VerifySettings,
) -> Result<LemmaReport> {
    params.validate()?;
    if params.dim != Dim::One {
        return Err(Error::Unsupported(
            "lemma verification is available on 1D grids only".into(),
        ));
    }
    let regime = classify_regime(params)?;
    let coarse_n = n / 2;
    let opts = SteadyOptions {
        tol: settings.steady_tol,
        ..SteadyOptions::default()
    };
    let fine = level(params, n, &opts)?;
    let coarse = level(params, coarse_n, &opts)?;
    let mut report = LemmaReport {
        n,
        coarse_n,
        regime,
        checks: Vec::new(),
    };

    for (name, mu, state) in [
        ("capacity_integral_u", params.mu1, &fine.u_hat),
        ("capacity_integral_v", params.mu2, &fine.v_hat),
    ] {
        let eff = build_effective_params(params, mu, &fine.grid)?;
        let c = lemma_l22_integral(&state.u, &eff, &fine.grid)?;
        let scale = c.integral.abs().max(c.squared_integral.abs()).max(1.0);
        let status = if c.degenerate {
            CheckStatus::Degenerate
        } else if c.integral > 0.0 && c.identity_gap < 1e-8 * scale {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        report.push(
            name,
            status,
            c.integral,
            format!(
                "squared form {:e}, gap {:e}",
                c.squared_integral, c.identity_gap
            ),
        );
    }

    let constant_k = build_effective_params(params, params.mu1, &fine.grid)?.capacity_is_constant();
    for (name, state, d, alpha) in [
        (
            "log_derivative_band_u",
            &fine.u_hat,
            params.d1,
            params.alpha1,
        ),
        (
            "log_derivative_band_v",
            &fine.v_hat,
            params.d2,
            params.alpha2,
        ),
    ] {
        let r = log_derivative_bounds(&state.u, d, alpha, &fine.grid)?;
        let status = match (constant_k, r.violations) {
            (false, _) => CheckStatus::NotApplicable,
            (true, 0) => CheckStatus::Pass,
            (true, _) => CheckStatus::Fail,
        };
        let mut detail = format!(
            "T in [{:e}, {:e}], band [0, {:e}] +- {:e}, {} violations",
            r.min, r.max, r.bound, r.tolerance, r.violations
        );
        if !constant_k {
            detail.push_str("; stated for constant K1 only");
        }
        report.push(name, status, r.violations as f64, detail);
    }

    let diffs: Vec<_> = [&fine, &coarse]
        .iter()
        .map(|lv| {
            let p = invader_potential(&lv.system, SemiTrivial::UOnly, &lv.u_hat.u);
            eigen_difference_check(
                lv.system.op_u(),
                lv.system.op_v(),
                &lv.grid,
                &p,
                settings.eigen_tol,
            )
        })
        .collect::<Result<_>>()?;
    let (status, ratio) = ratio_status(diffs[1].residual, diffs[0].residual);
    report.push(
        "eigen_difference",
        status,
        ratio,
        format!(
            "eta2-eta1 {:e}, formula {:e}, residual {:e} (n={n}), {:e} (n={coarse_n})",
            diffs[0].difference, diffs[0].formula, diffs[0].residual, diffs[1].residual
        ),
    );

    let stab = semitrivial_stability(&fine.system, &fine.u_hat, &fine.v_hat, settings.eigen_tol)?;
    let hypotheses = regime.holds_c1 && regime.ordering_d && regime.ordering_alpha && !constant_k;
    let sign_status = |ok: bool| match (hypotheses, ok) {
        (false, _) => CheckStatus::NotApplicable,
        (true, true) => CheckStatus::Pass,
        (true, false) => CheckStatus::Fail,
    };
    report.push(
        "kappa1_negative",
        sign_status(stab.kappa1 < 0.0),
        stab.kappa1,
        format!("(u,0) is {:?}", stab.u_state),
    );
    report.push(
        "tau1_positive",
        sign_status(stab.tau1 > 0.0),
        stab.tau1,
        format!("(0,v) is {:?}", stab.v_state),
    );

    let p = invader_potential(&fine.system, SemiTrivial::UOnly, &fine.u_hat.u);
    let eig = crate::spectral::principal_eigenpair(fine.system.op_v(), &p, settings.eigen_tol)?;
    match perron_band_check(&eig.phi, &p, params.d2, params.alpha2, &fine.grid) {
        Some(b) => report.push(
            "perron_band",
            if b.violations == 0 {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
            b.max_excess,
            format!("{} violations, tolerance {:e}", b.violations, b.tolerance),
        ),
        None => report.push(
            "perron_band",
            CheckStatus::NotApplicable,
            f64::NAN,
            "p is not nonincreasing",
        ),
    }

    let pairs: Vec<Option<CoexistenceState<f64>>> = [&fine, &coarse]
        .iter()
        .map(|lv| {
            let initial = initial_state(&lv.system, None, None)?;
            let dt = lv.system.dt_max().min(0.1);
            let traj = integrate(
                &lv.system,
                &initial,
                settings.t_end,
                dt,
                &IntegrateOptions::default(),
            )?;
            find_coexistence(&lv.system, Some(&traj.final_state), 1e-10)
        })
        .collect::<Result<_>>()?;
    match (&pairs[0], &pairs[1]) {
        (Some(pf), Some(pc)) => {
            let rf = coexistence_identities(&pf.u, &pf.v, params, &fine.grid, 0, n)?;
            let rc = coexistence_identities(&pc.u, &pc.v, params, &coarse.grid, 0, coarse_n)?;
            for (name, f, c) in [
                (
                    "identity_weighted_u",
                    rf.weighted_u_residual,
                    rc.weighted_u_residual,
                ),
                (
                    "identity_weighted_v",
                    rf.weighted_v_residual,
                    rc.weighted_v_residual,
                ),
                (
                    "identity_log_derivative",
                    rf.log_derivative_residual,
                    rc.log_derivative_residual,
                ),
            ] {
                let (status, ratio) = ratio_status(c, f);
                report.push(
                    name,
                    status,
                    ratio,
                    format!("residual {f:e} (n={n}), {c:e} (n={coarse_n})"),
                );
            }
        }
        _ => report.push(
            "coexistence_identities",
            CheckStatus::NotApplicable,
            f64::NAN,
            "no coexistence state found",
        ),
    }
    Ok(report)
}
