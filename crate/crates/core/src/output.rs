//! Run directories: deterministic CSV/JSON rendering and writing.
//!
//! Numbers are printed in the shortest form that parses back to the same
//! `f64`, so identical runs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::discretization::{Dim, Grid};
use crate::error::Result;
use crate::timestepper::{SpeciesState, Trajectory};

/// Files of one run, keyed by file name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Bundle {
    files: BTreeMap<String, Vec<u8>>,
}

impl Bundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_text(&mut self, name: impl Into<String>, text: String) {
        self.files.insert(name.into(), text.into_bytes());
    }

    pub fn insert_json<S: Serialize + ?Sized>(
        &mut self,
        name: impl Into<String>,
        value: &S,
    ) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.insert_text(name, text);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(|v| v.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Writes every file into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Shortest round-trip decimal form; `NaN`/`inf` spelled as in Rust.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// CSV text from a header and numeric rows.
pub fn csv<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: AsRef<[f64]>,
{
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let mut first = true;
        for &x in row.as_ref() {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{x:?}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// `t,norm_u_inf,norm_v_inf,mass_u,mass_v` per sample.
pub fn norms_csv(traj: &Trajectory<f64>) -> String {
    csv(
        &["t", "norm_u_inf", "norm_v_inf", "mass_u", "mass_v"],
        (0..traj.len()).map(|k| {
            [
                traj.times[k],
                traj.norm_u[k],
                traj.norm_v[k],
                traj.mass_u[k],
                traj.mass_v[k],
            ]
        }),
    )
}

/// Cell-centred `x,u,v` in 1D or `x,y,u,v` in 2D (x fastest, one row per
/// cell, ready for contouring).
pub fn snapshot_csv(grid: &Grid<f64>, state: &SpeciesState<f64>) -> String {
    match grid.dim() {
        Dim::One => csv(
            &["x", "u", "v"],
            (0..grid.len()).map(|i| [grid.center(i), state.u[i], state.v[i]]),
        ),
        Dim::Two => csv(
            &["x", "y", "u", "v"],
            (0..grid.len()).map(|i| {
                let (x, y) = grid.coords(i);
                [x, y, state.u[i], state.v[i]]
            }),
        ),
    }
}

/// `snapshot_<t>.csv` with `t` in plain decimal (`snapshot_2000.csv`).
pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_{t}.csv")
}

/// Adds the norm series and every stored snapshot of a trajectory.
pub fn add_trajectory(bundle: &mut Bundle, grid: &Grid<f64>, traj: &Trajectory<f64>) {
    bundle.insert_text("norms.csv", norms_csv(traj));
    for snap in &traj.snapshots {
        bundle.insert_text(snapshot_name(snap.t), snapshot_csv(grid, snap));
    }
}
