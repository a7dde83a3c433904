//! Run configuration: a JSON object (optionally from a file) merged with
//! command-line overrides, validated before any computation.
//!
//! Unknown keys are rejected. Every key that was filled in by the program
//! rather than the user is listed under `"defaulted"` in the echo, and the
//! echo itself is a valid configuration that reproduces the run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::discretization::{Advection2d, Dim, Grid};
use crate::error::{Error, Result};
use crate::experiments::{self, SimulationSetup, SweepSettings, VerifySettings};
use crate::expr::FieldExpr;
use crate::model::ModelParams;
use crate::timestepper::CompetitionSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Steady,
    Eigen,
    Sweep,
    Figure,
    Verify,
}

/// Environment variable overriding the worker count of the config file.
pub const WORKERS_ENV: &str = "RIVERCOMP_WORKERS";

/// Keys written to the echo, in addition to `defaulted`.
const ECHO_KEYS: &[&str] = &[
    "mode",
    "figure",
    "d1",
    "d2",
    "alpha1",
    "alpha2",
    "mu1",
    "mu2",
    "r",
    "K",
    "domain",
    "dim",
    "n",
    "dt",
    "t_end",
    "u0",
    "v0",
    "snapshot_times",
    "samples",
    "advection_2d",
    "eps_extinct",
    "eps_settle",
    "tol_steady",
    "tol_eigen",
    "sweep_points",
    "sweep_refine",
    "budget_seconds",
];

/// Accepted on input but not echoed: they do not change the results.
const RUNTIME_KEYS: &[&str] = &["output_dir", "workers"];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub figure: Option<String>,
    pub params: ModelParams<f64>,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub u0: FieldExpr,
    pub v0: FieldExpr,
    pub snapshot_times: Vec<f64>,
    pub samples: usize,
    pub advection_2d: Advection2d,
    pub eps_extinct: f64,
    pub eps_settle: f64,
    pub tol_steady: f64,
    pub tol_eigen: f64,
    pub sweep_points: usize,
    pub sweep_refine: bool,
    pub budget_seconds: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Keys not supplied by the user.
    pub defaulted: BTreeSet<String>,
}

fn cfg_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("`{key}`: {msg}"))
}

/// Typed access to the merged key/value map that records which keys were
/// read and which fell back to a default.
struct Source {
    map: Map<String, Value>,
    defaulted: BTreeSet<String>,
}

impl Source {
    fn raw(&self, key: &str) -> Option<&Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .map(Some)
                .ok_or_else(|| cfg_err(key, format!("expected a finite number, got {v}"))),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|x| Some(x as usize))
                .ok_or_else(|| cfg_err(key, format!("expected a nonnegative integer, got {v}"))),
        }
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .as_bool()
                .map(Some)
                .ok_or_else(|| cfg_err(key, format!("expected true or false, got {v}"))),
        }
    }

    fn string(&self, key: &str) -> Result<Option<String>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(cfg_err(key, format!("expected a string, got {v}"))),
        }
    }

    /// A field expression given as a string or a bare number.
    fn expr(&self, key: &str) -> Result<Option<FieldExpr>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::String(s)) => FieldExpr::parse(s).map(Some).map_err(|e| cfg_err(key, e)),
            Some(Value::Number(x)) => Ok(Some(FieldExpr::constant(x.as_f64().unwrap_or(f64::NAN)))),
            Some(v) => Err(cfg_err(
                key,
                format!("expected an expression string, got {v}"),
            )),
        }
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(Value::Array(xs)) => xs
                .iter()
                .map(|x| {
                    x.as_f64()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| cfg_err(key, format!("expected numbers, got {x}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(v) => Err(cfg_err(
                key,
                format!("expected an array of numbers, got {v}"),
            )),
        }
    }

    fn enum_value<E: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<Option<E>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|_| cfg_err(key, format!("unrecognised value {v}"))),
        }
    }

    fn or_default<T>(&mut self, key: &str, value: Option<T>, default: impl FnOnce() -> T) -> T {
        value.unwrap_or_else(|| {
            self.defaulted.insert(key.to_string());
            default()
        })
    }

    fn required<T>(&self, key: &str, value: Option<T>) -> Result<T> {
        value.ok_or_else(|| cfg_err(key, "is required"))
    }
}

impl RunConfig {
    /// Parses a JSON document (if any) and applies `overrides` on top.
    pub fn parse(text: Option<&str>, overrides: &Map<String, Value>) -> Result<Self> {
        let mut map = match text {
            Some(t) => match serde_json::from_str::<Value>(t) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(Error::Config("configuration must be a JSON object".into())),
                Err(e) => return Err(Error::Config(format!("malformed configuration: {e}"))),
            },
            None => Map::new(),
        };
        for (k, v) in overrides {
            // `mu` and `mu1`/`mu2` are alternatives; a flag for one replaces the other
            if k == "mu" {
                map.remove("mu1");
                map.remove("mu2");
            } else if k == "mu1" || k == "mu2" {
                if let Some(mu) = map.remove("mu") {
                    map.entry("mu1").or_insert(mu.clone());
                    map.entry("mu2").or_insert(mu);
                }
            }
            map.insert(k.clone(), v.clone());
        }
        Self::from_map(map)
    }

    /// Reads a configuration file and applies `overrides`.
    pub fn from_file(path: &Path, overrides: &Map<String, Value>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(Some(&text), overrides)
    }

    fn from_map(map: Map<String, Value>) -> Result<Self> {
        for key in map.keys() {
            let known = ECHO_KEYS.contains(&key.as_str())
                || RUNTIME_KEYS.contains(&key.as_str())
                || key == "mu"
                || key == "defaulted";
            if !known {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
        }
        if map.contains_key("mu") && (map.contains_key("mu1") || map.contains_key("mu2")) {
            return Err(Error::Config(
                "give either `mu` or `mu1`/`mu2`, not both".into(),
            ));
        }
        let mut src = Source {
            map,
            defaulted: BTreeSet::new(),
        };
        // an echo re-marks the keys that were defaulted in the original run
        if let Some(v) = src.raw("defaulted") {
            let keys: Vec<String> = serde_json::from_value(v.clone())
                .map_err(|_| cfg_err("defaulted", "expected an array of key names"))?;
            for k in keys {
                if !ECHO_KEYS.contains(&k.as_str()) {
                    return Err(cfg_err("defaulted", format!("unknown key `{k}`")));
                }
                src.defaulted.insert(k);
            }
        }

        let mode: Mode = src.required("mode", src.enum_value("mode")?)?;
        let figure = src.string("figure")?;
        let preset = match (mode, &figure) {
            (Mode::Figure, Some(id)) => Some(experiments::preset(id)?),
            (Mode::Figure, None) => return Err(cfg_err("figure", "is required in figure mode")),
            (_, Some(_)) => return Err(cfg_err("figure", "only allowed in figure mode")),
            _ => None,
        };
        let pp = preset.as_ref().map(|p| &p.params);

        // model parameters: required unless a preset supplies them
        let model_f64 = |src: &mut Source, key: &str, from: Option<f64>| -> Result<f64> {
            match (src.f64(key)?, from) {
                (Some(v), _) => Ok(v),
                (None, Some(p)) => {
                    src.defaulted.insert(key.to_string());
                    Ok(p)
                }
                (None, None) => Err(cfg_err(key, "is required")),
            }
        };
        let d1 = model_f64(&mut src, "d1", pp.map(|p| p.d1))?;
        let d2 = model_f64(&mut src, "d2", pp.map(|p| p.d2))?;
        let alpha1 = model_f64(&mut src, "alpha1", pp.map(|p| p.alpha1))?;
        let alpha2 = model_f64(&mut src, "alpha2", pp.map(|p| p.alpha2))?;
        let (mu1, mu2) = match src.f64("mu")? {
            Some(mu) => (mu, mu),
            None => (
                model_f64(&mut src, "mu1", pp.map(|p| p.mu1))?,
                model_f64(&mut src, "mu2", pp.map(|p| p.mu2))?,
            ),
        };
        let capacity = match (src.expr("K")?, pp) {
            (Some(k), _) => k,
            (None, Some(p)) => {
                src.defaulted.insert("K".into());
                p.capacity.clone()
            }
            (None, None) => return Err(cfg_err("K", "is required")),
        };
        let growth = {
            let v = src.expr("r")?;
            src.or_default("r", v, || {
                pp.map_or(FieldExpr::constant(1.0), |p| p.growth.clone())
            })
        };
        let domain = {
            let v = src.f64_list("domain")?;
            src.or_default("domain", v, || {
                pp.map_or(vec![0.0, 1.0], |p| vec![p.a, p.b])
            })
        };
        if domain.len() != 2 {
            return Err(cfg_err("domain", "expected [a, b]"));
        }
        let dim = {
            let v = match src.raw("dim") {
                Some(Value::Number(x)) if x.as_u64() == Some(1) => Some(Dim::One),
                Some(Value::Number(x)) if x.as_u64() == Some(2) => Some(Dim::Two),
                None => None,
                Some(_) => src.enum_value("dim")?,
            };
            src.or_default("dim", v, || pp.map_or(Dim::One, |p| p.dim))
        };
        let params = ModelParams::new(d1, d2, alpha1, alpha2, mu1, capacity)
            .with_harvest(mu1, mu2)
            .with_growth(growth)
            .with_domain(domain[0], domain[1])
            .with_dim(dim);
        params.validate()?;

        let n = {
            let v = src.usize("n")?;
            src.or_default("n", v, || match (&preset, dim) {
                (Some(p), _) => p.n,
                (None, Dim::One) => experiments::PRESET_N_1D,
                (None, Dim::Two) => experiments::PRESET_N_2D,
            })
        };
        let grid = Grid::new(dim, domain[0], domain[1], n).map_err(|e| match e {
            Error::InvalidParameter { reason, .. } => cfg_err("n", reason),
            e => e,
        })?;
        let advection_2d = {
            let v = src.enum_value("advection_2d")?;
            src.or_default("advection_2d", v, Advection2d::default)
        };
        // assembling both operators checks the Peclet bound and names the minimum n
        let system = CompetitionSystem::from_params(&params, &grid, advection_2d)?;

        let t_end = {
            let v = src.f64("t_end")?;
            src.or_default("t_end", v, || preset.as_ref().map_or(2000.0, |p| p.t_end))
        };
        if !(t_end >= 0.0) {
            return Err(cfg_err("t_end", "must be >= 0"));
        }
        let dt_max = system.dt_max();
        let dt = {
            let v = src.f64("dt")?;
            src.or_default("dt", v, || dt_max.min(0.1))
        };
        if !(dt > 0.0) || dt > dt_max * (1.0 + 1e-12) {
            return Err(cfg_err(
                "dt",
                format!("must lie in (0, {dt_max}] (0.9 / max net growth rate), got {dt}"),
            ));
        }
        let start = 0.5 * system.min_capacity();
        let u0 = {
            let v = src.expr("u0")?;
            src.or_default("u0", v, || FieldExpr::constant(start))
        };
        let v0 = {
            let v = src.expr("v0")?;
            src.or_default("v0", v, || FieldExpr::constant(start))
        };
        for (key, e) in [("u0", &u0), ("v0", &v0)] {
            let f = grid.sample(e).map_err(|err| cfg_err(key, err))?;
            if f.iter().any(|x| *x < 0.0) {
                return Err(cfg_err(key, "initial densities must be nonnegative"));
            }
        }
        let snapshot_times = {
            let v = src.f64_list("snapshot_times")?;
            src.or_default("snapshot_times", v, || vec![0.0, t_end])
        };
        if let Some(t) = snapshot_times
            .iter()
            .find(|t| !(**t >= 0.0 && **t <= t_end))
        {
            return Err(cfg_err(
                "snapshot_times",
                format!("{t} is outside [0, t_end]"),
            ));
        }
        let samples = {
            let v = src.usize("samples")?;
            src.or_default("samples", v, || 100)
        };
        if samples == 0 {
            return Err(cfg_err("samples", "must be >= 1"));
        }
        let eps_extinct = {
            let v = src.f64("eps_extinct")?;
            src.or_default("eps_extinct", v, || 1e-3 * system.capacity_scale())
        };
        let eps_settle = {
            let v = src.f64("eps_settle")?;
            src.or_default("eps_settle", v, || 1e-4)
        };
        let tol_steady = {
            let v = src.f64("tol_steady")?;
            src.or_default("tol_steady", v, || 1e-10)
        };
        let tol_eigen = {
            let v = src.f64("tol_eigen")?;
            src.or_default("tol_eigen", v, || 1e-10)
        };
        for (key, x) in [
            ("eps_extinct", eps_extinct),
            ("eps_settle", eps_settle),
            ("tol_steady", tol_steady),
            ("tol_eigen", tol_eigen),
        ] {
            if !(x > 0.0) {
                return Err(cfg_err(key, "must be > 0"));
            }
        }
        let sweep_points = {
            let v = src.usize("sweep_points")?;
            src.or_default("sweep_points", v, || SweepSettings::default().points)
        };
        let sweep_refine = {
            let v = src.bool("sweep_refine")?;
            src.or_default("sweep_refine", v, || true)
        };
        let budget_seconds = src.f64("budget_seconds")?;
        if budget_seconds.is_none() {
            src.defaulted.insert("budget_seconds".into());
        }
        if let Some(b) = budget_seconds {
            if !(b > 0.0) {
                return Err(cfg_err("budget_seconds", "must be > 0"));
            }
        }
        let output_dir = src.string("output_dir")?.map(PathBuf::from);
        let workers = src.usize("workers")?;
        if workers == Some(0) {
            return Err(cfg_err("workers", "must be >= 1"));
        }

        match mode {
            Mode::Sweep | Mode::Verify if dim != Dim::One => {
                return Err(cfg_err(
                    "dim",
                    format!("{mode:?} mode is available in 1D only"),
                ));
            }
            Mode::Sweep if !(d1 > d2 && alpha1 > 0.0) => {
                return Err(cfg_err("d1", "the sweep needs d1 > d2 > 0 and alpha1 > 0"));
            }
            Mode::Sweep if sweep_points < 8 => return Err(cfg_err("sweep_points", "must be >= 8")),
            Mode::Verify if n < 8 => {
                return Err(cfg_err("n", "verification needs n >= 8 (it also runs n/2)"))
            }
            _ => {}
        }

        Ok(Self {
            mode,
            figure,
            params,
            n,
            dt,
            t_end,
            u0,
            v0,
            snapshot_times,
            samples,
            advection_2d,
            eps_extinct,
            eps_settle,
            tol_steady,
            tol_eigen,
            sweep_points,
            sweep_refine,
            budget_seconds,
            output_dir,
            workers,
            defaulted: src.defaulted,
        })
    }

    /// Applies the worker-count environment override, if set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            let w: usize = v.trim().parse().ok().filter(|w| *w > 0).ok_or_else(|| {
                Error::Config(format!(
                    "{WORKERS_ENV} must be a positive integer, got `{v}`"
                ))
            })?;
            self.workers = Some(w);
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid<f64>> {
        Grid::new(self.params.dim, self.params.a, self.params.b, self.n)
    }

    pub fn simulation_setup(&self) -> SimulationSetup {
        SimulationSetup {
            params: self.params.clone(),
            n: self.n,
            dt: Some(self.dt),
            t_end: self.t_end,
            u0: Some(self.u0.clone()),
            v0: Some(self.v0.clone()),
            snapshot_times: self.snapshot_times.clone(),
            samples: self.samples,
            advection: self.advection_2d,
            eps_extinct: Some(self.eps_extinct),
            eps_settle: self.eps_settle,
            budget: self.budget_seconds.map(Duration::from_secs_f64),
        }
    }

    pub fn sweep_settings(&self) -> SweepSettings {
        SweepSettings {
            points: self.sweep_points,
            refine: self.sweep_refine,
            t_end: self.t_end,
            steady_tol: self.tol_steady,
            eigen_tol: self.tol_eigen,
            coexistence_tol: self.tol_steady,
        }
    }

    pub fn verify_settings(&self) -> VerifySettings {
        VerifySettings {
            steady_tol: self.tol_steady,
            eigen_tol: self.tol_eigen,
            t_end: self.t_end,
        }
    }

    /// The resolved configuration with every value explicit.
    pub fn echo(&self) -> Value {
        let p = &self.params;
        let mut m = Map::new();
        m.insert(
            "mode".into(),
            serde_json::to_value(self.mode).expect("mode"),
        );
        if let Some(f) = &self.figure {
            m.insert("figure".into(), json!(f));
        }
        m.insert("d1".into(), json!(p.d1));
        m.insert("d2".into(), json!(p.d2));
        m.insert("alpha1".into(), json!(p.alpha1));
        m.insert("alpha2".into(), json!(p.alpha2));
        m.insert("mu1".into(), json!(p.mu1));
        m.insert("mu2".into(), json!(p.mu2));
        m.insert("r".into(), json!(p.growth.source()));
        m.insert("K".into(), json!(p.capacity.source()));
        m.insert("domain".into(), json!([p.a, p.b]));
        m.insert(
            "dim".into(),
            json!(match p.dim {
                Dim::One => 1,
                Dim::Two => 2,
            }),
        );
        m.insert("n".into(), json!(self.n));
        m.insert("dt".into(), json!(self.dt));
        m.insert("t_end".into(), json!(self.t_end));
        m.insert("u0".into(), json!(self.u0.source()));
        m.insert("v0".into(), json!(self.v0.source()));
        m.insert("snapshot_times".into(), json!(self.snapshot_times));
        m.insert("samples".into(), json!(self.samples));
        m.insert(
            "advection_2d".into(),
            serde_json::to_value(self.advection_2d).expect("advection"),
        );
        m.insert("eps_extinct".into(), json!(self.eps_extinct));
        m.insert("eps_settle".into(), json!(self.eps_settle));
        m.insert("tol_steady".into(), json!(self.tol_steady));
        m.insert("tol_eigen".into(), json!(self.tol_eigen));
        m.insert("sweep_points".into(), json!(self.sweep_points));
        m.insert("sweep_refine".into(), json!(self.sweep_refine));
        m.insert("budget_seconds".into(), json!(self.budget_seconds));
        m.insert("defaulted".into(), json!(self.defaulted));
        Value::Object(m)
    }
}
