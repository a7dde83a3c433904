//! Model parameters, the harvesting-elimination transform, the logistic
//! competition reaction and the advection/diffusion ratio regimes.
//!
//! With equal harvesting `mu`, the harvested growth
//! `r u (1 - (u+v)/K - mu)` is rewritten as `r r1 u (1 - (u+v)/K1)` with
//! `r1 = 1 - mu` and `K1 = K r1`, an equivalent harvest-free model.

use serde::Serialize;

use crate::discretization::{Dim, Field, Grid};
use crate::error::{Error, Result};
use crate::expr::FieldExpr;
use crate::scalar::{min_value, Scalar};

/// Raw physical parameters of the two-species system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub d1: T,
    pub d2: T,
    pub alpha1: T,
    pub alpha2: T,
    pub mu1: T,
    pub mu2: T,
    /// Intrinsic growth rate `r(x[,y])`.
    pub growth: FieldExpr,
    /// Carrying capacity `K(x[,y])`.
    pub capacity: FieldExpr,
    pub a: T,
    pub b: T,
    pub dim: Dim,
}

// points per axis used to check positivity of r and K before any grid exists
const PROBE: usize = 257;

impl<T: Scalar> ModelParams<T> {
    /// Equal harvesting, `r = 1`, domain `[0,1]` in 1D.
    pub fn new(d1: T, d2: T, alpha1: T, alpha2: T, mu: T, capacity: FieldExpr) -> Self {
        Self {
            d1,
            d2,
            alpha1,
            alpha2,
            mu1: mu,
            mu2: mu,
            growth: FieldExpr::constant(1.0),
            capacity,
            a: T::zero(),
            b: T::one(),
            dim: Dim::One,
        }
    }

    pub fn with_harvest(mut self, mu1: T, mu2: T) -> Self {
        self.mu1 = mu1;
        self.mu2 = mu2;
        self
    }

    pub fn with_growth(mut self, growth: FieldExpr) -> Self {
        self.growth = growth;
        self
    }

    pub fn with_domain(mut self, a: T, b: T) -> Self {
        self.a = a;
        self.b = b;
        self
    }

    pub fn with_dim(mut self, dim: Dim) -> Self {
        self.dim = dim;
        self
    }

    /// Common harvesting fraction, if both species are harvested equally.
    pub fn equal_harvest(&self) -> Option<T> {
        (self.mu1 == self.mu2).then_some(self.mu1)
    }

    /// Checks every invariant that does not depend on the grid, sampling
    /// `r` and `K` on a fine probe mesh for positivity.
    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("d1", self.d1), ("d2", self.d2)] {
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::param(name, format!("must be > 0, got {d}")));
            }
        }
        for (name, a) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !a.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        for (name, mu) in [("mu1", self.mu1), ("mu2", self.mu2)] {
            check_mu(name, mu)?;
        }
        if !(self.b > self.a) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::param(
                "domain",
                format!("need a < b, got [{}, {}]", self.a, self.b),
            ));
        }
        let probe = Grid::new(self.dim, self.a, self.b, PROBE)?;
        for (name, expr) in [("K", &self.capacity), ("r", &self.growth)] {
            let f = probe.sample(expr)?;
            let lo = min_value(&f);
            // cell centers never touch the boundary, so also check the corners
            let mut edge = vec![
                expr.eval(self.a.as_f64(), self.a.as_f64()),
                expr.eval(self.b.as_f64(), self.a.as_f64()),
            ];
            if self.dim == Dim::Two {
                edge.push(expr.eval(self.a.as_f64(), self.b.as_f64()));
                edge.push(expr.eval(self.b.as_f64(), self.b.as_f64()));
            }
            if !(lo > T::zero()) || edge.iter().any(|&e| !(e > 0.0)) {
                return Err(Error::param(
                    name,
                    format!("`{expr}` must be > 0 on the whole domain"),
                ));
            }
        }
        Ok(())
    }
}

fn check_mu<T: Scalar>(name: &str, mu: T) -> Result<()> {
    if !mu.is_finite() || mu < T::zero() {
        return Err(Error::param(
            name,
            format!("mu must lie in [0,1), got {mu}"),
        ));
    }
    if mu >= T::one() {
        return Err(Error::param(
            name,
            format!("mu must lie in [0,1), got {mu} (harvest-to-extinction regime, transform undefined)"),
        ));
    }
    Ok(())
}

/// Harvest-free coefficients sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveParams<T> {
    /// Survival factor `1 - mu`.
    pub r1: T,
    /// `K1 = K (1 - mu)`.
    pub k1: Field<T>,
    /// `r r1`.
    pub rr1: Field<T>,
}

impl<T: Scalar> EffectiveParams<T> {
    pub fn max_rate(&self) -> T {
        self.rr1.iter().fold(T::zero(), |m, &x| m.max(x))
    }

    pub fn max_capacity(&self) -> T {
        self.k1.iter().fold(T::zero(), |m, &x| m.max(x))
    }

    pub fn min_capacity(&self) -> T {
        min_value(&self.k1)
    }

    /// True when `K1` takes a single value on the grid.
    pub fn capacity_is_constant(&self) -> bool {
        let lo = self.min_capacity();
        let hi = self.max_capacity();
        hi - lo <= T::epsilon() * T::lit(16.0) * hi
    }
}

pub fn build_effective_params<T: Scalar>(
    params: &ModelParams<T>,
    mu: T,
    grid: &Grid<T>,
) -> Result<EffectiveParams<T>> {
    check_mu("mu", mu)?;
    let k = grid.sample(&params.capacity)?;
    let r = grid.sample(&params.growth)?;
    if let Some(i) = k.iter().position(|&v| !(v > T::zero())) {
        let (x, y) = grid.coords(i);
        return Err(Error::param(
            "K",
            format!("must be > 0, got {} at ({x}, {y})", k[i]),
        ));
    }
    if let Some(i) = r.iter().position(|&v| !(v > T::zero())) {
        let (x, y) = grid.coords(i);
        return Err(Error::param(
            "r",
            format!("must be > 0, got {} at ({x}, {y})", r[i]),
        ));
    }
    let r1 = T::one() - mu;
    Ok(EffectiveParams {
        r1,
        k1: k.iter().map(|&k| k * r1).collect(),
        rr1: r.iter().map(|&r| r * r1).collect(),
    })
}

/// Transformed competition rate `r r1 u (1 - (u+v)/K1)`; swap `u` and `v`
/// for the second species.
#[inline]
pub fn reaction<T: Scalar>(u: T, v: T, rr1: T, k1: T) -> T {
    rr1 * u * (T::one() - (u + v) / k1)
}

/// Harvested competition rate `r u (1 - (u+v)/K - mu)`.
#[inline]
pub fn harvested_reaction<T: Scalar>(u: T, v: T, r: T, k: T, mu: T) -> T {
    r * u * (T::one() - (u + v) / k - mu)
}

/// Per-species reaction coefficients on a grid, in either form.
#[derive(Debug, Clone, PartialEq)]
pub enum Kinetics<T> {
    /// `rate u (1 - (u+v)/capacity)` with `rate = r r1`, `capacity = K1`.
    Transformed { rate: Field<T>, capacity: Field<T> },
    /// `rate u (1 - (u+v)/capacity - harvest)` with the raw `r`, `K`, `mu`.
    Harvested {
        rate: Field<T>,
        capacity: Field<T>,
        harvest: T,
    },
}

impl<T: Scalar> Kinetics<T> {
    pub fn transformed(eff: &EffectiveParams<T>) -> Self {
        Kinetics::Transformed {
            rate: eff.rr1.clone(),
            capacity: eff.k1.clone(),
        }
    }

    pub fn harvested(params: &ModelParams<T>, mu: T, grid: &Grid<T>) -> Result<Self> {
        check_mu("mu", mu)?;
        let raw = build_effective_params(params, T::zero(), grid)?;
        Ok(Kinetics::Harvested {
            rate: raw.rr1,
            capacity: raw.k1,
            harvest: mu,
        })
    }

    pub fn len(&self) -> usize {
        match self {
            Kinetics::Transformed { rate, .. } | Kinetics::Harvested { rate, .. } => rate.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reaction rate of the focal species with density `own` against `other`.
    #[inline]
    pub fn eval(&self, i: usize, own: T, other: T) -> T {
        match self {
            Kinetics::Transformed { rate, capacity } => reaction(own, other, rate[i], capacity[i]),
            Kinetics::Harvested {
                rate,
                capacity,
                harvest,
            } => harvested_reaction(own, other, rate[i], capacity[i], *harvest),
        }
    }

    /// Partial derivatives `(d/d own, d/d other)` of [`Self::eval`].
    #[inline]
    pub fn jacobian(&self, i: usize, own: T, other: T) -> (T, T) {
        let (rate, cap, harvest) = match self {
            Kinetics::Transformed { rate, capacity } => (rate[i], capacity[i], T::zero()),
            Kinetics::Harvested {
                rate,
                capacity,
                harvest,
            } => (rate[i], capacity[i], *harvest),
        };
        let d_own = rate * (T::one() - harvest - (T::lit(2.0) * own + other) / cap);
        let d_other = -rate * own / cap;
        (d_own, d_other)
    }

    /// Largest per-capita growth rate `r r1` (or `r (1-mu)`), which limits the
    /// explicit reaction step.
    pub fn max_net_rate(&self) -> T {
        match self {
            Kinetics::Transformed { rate, .. } => rate.iter().fold(T::zero(), |m, &x| m.max(x)),
            Kinetics::Harvested { rate, harvest, .. } => {
                rate.iter().fold(T::zero(), |m, &x| m.max(x)) * (T::one() - *harvest)
            }
        }
    }

    /// Effective carrying capacity `K1` (or `K (1-mu)`) per cell.
    pub fn effective_capacity(&self) -> Field<T> {
        match self {
            Kinetics::Transformed { capacity, .. } => capacity.clone(),
            Kinetics::Harvested {
                capacity, harvest, ..
            } => capacity
                .iter()
                .map(|&k| k * (T::one() - *harvest))
                .collect(),
        }
    }
}

/// Which of the two ratio conditions holds, and the diffusion ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeReport {
    pub ratio1: f64,
    pub ratio2: f64,
    /// `alpha1/d1 >= alpha2/d2`.
    pub holds_c1: bool,
    /// `alpha1/d1 < alpha2/d2`.
    pub holds_c2: bool,
    /// `d1 > d2 > 0`.
    pub ordering_d: bool,
    /// `alpha1 > alpha2 > 0`.
    pub ordering_alpha: bool,
    /// `d2/d1`.
    pub omega1: f64,
}

pub fn classify_regime<T: Scalar>(params: &ModelParams<T>) -> Result<RegimeReport> {
    if !(params.d1 > T::zero()) {
        return Err(Error::param(
            "d1",
            format!("must be > 0, got {}", params.d1),
        ));
    }
    if !(params.d2 > T::zero()) {
        return Err(Error::param(
            "d2",
            format!("must be > 0, got {}", params.d2),
        ));
    }
    let ratio1 = params.alpha1 / params.d1;
    let ratio2 = params.alpha2 / params.d2;
    let holds_c1 = ratio1 >= ratio2;
    Ok(RegimeReport {
        ratio1: ratio1.as_f64(),
        ratio2: ratio2.as_f64(),
        holds_c1,
        holds_c2: !holds_c1,
        ordering_d: params.d1 > params.d2,
        ordering_alpha: params.alpha1 > params.alpha2 && params.alpha2 > T::zero(),
        omega1: (params.d2 / params.d1).as_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1() -> ModelParams<f64> {
        ModelParams::new(
            0.08,
            0.07,
            0.05,
            0.04,
            0.009,
            FieldExpr::parse("2+cos(pi*x)").unwrap(),
        )
    }

    #[test]
    fn identity_transform_at_zero_harvest() {
        let p = fig1();
        let g = Grid::line(0.0, 1.0, 16).unwrap();
        let e = build_effective_params(&p, 0.0, &g).unwrap();
        assert_eq!(e.r1, 1.0);
        assert_eq!(e.k1, g.sample(&p.capacity).unwrap());
    }

    #[test]
    fn effective_capacity_at_upstream_end() {
        let p = fig1();
        let e = build_effective_params(&p, 0.009, &Grid::line(0.0, 1.0, 16).unwrap()).unwrap();
        assert_eq!(e.r1, 0.991);
        let k1_at_0 = 0.991 * (2.0 + (0.0f64).cos());
        assert!((k1_at_0 - 2.973).abs() < 1e-12);
        let x0 = 1.0 / 32.0;
        assert!((e.k1[0] - 0.991 * (2.0 + (std::f64::consts::PI * x0).cos())).abs() < 1e-15);
    }

    #[test]
    fn rejects_harvest_outside_unit_interval() {
        let p = fig1();
        let g = Grid::line(0.0, 1.0, 8).unwrap();
        for mu in [1.0, 1.2, -0.1] {
            assert!(matches!(
                build_effective_params(&p, mu, &g),
                Err(Error::InvalidParameter { .. })
            ));
        }
        let bad = fig1().with_harvest(1.2, 0.0);
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("mu must lie in [0,1)"), "{msg}");
    }

    #[test]
    fn rejects_nonpositive_capacity() {
        let p = ModelParams::new(
            0.1,
            0.1,
            0.0,
            0.0,
            0.0,
            FieldExpr::parse("1+cos(pi*x)").unwrap(),
        );
        assert!(p.validate().is_err());
        let p = ModelParams::new(
            0.1,
            0.1,
            0.0,
            0.0,
            0.0,
            FieldExpr::parse("cos(pi*x)").unwrap(),
        );
        assert!(build_effective_params(&p, 0.0, &Grid::line(0.0, 1.0, 8).unwrap()).is_err());
    }

    #[test]
    fn reaction_values() {
        assert_eq!(reaction::<f64>(1.2, 0.8, 0.7, 2.0), 0.0);
        assert_eq!(reaction::<f64>(0.0, 0.8, 0.7, 2.0), 0.0);
        let expected: f64 = 0.991 * (1.0 - 1.5 / 2.973);
        assert!((reaction(1.0, 0.5, 0.991, 2.973) - expected).abs() < 1e-15);
        // 0.991 * (1 - 1.5/2.973) = 0.991 * 1.473/2.973 = 0.491 exactly
        assert!((expected - 0.491).abs() < 1e-12);
    }

    #[test]
    fn harvested_and_transformed_agree() {
        let (r, k, mu) = (1.3f64, 2.4, 0.2);
        for &(u, v) in &[(0.3f64, 0.9), (1.5, 0.0), (2.0, 1.0)] {
            let a = harvested_reaction(u, v, r, k, mu);
            let b = reaction(u, v, r * (1.0 - mu), k * (1.0 - mu));
            assert!((a - b).abs() <= 8.0 * f64::EPSILON * a.abs().max(1.0));
        }
    }

    #[test]
    fn kinetics_jacobian_matches_finite_difference() {
        let g = Grid::line(0.0, 1.0, 4).unwrap();
        let p = fig1();
        let kin = [
            Kinetics::transformed(&build_effective_params(&p, 0.1, &g).unwrap()),
            Kinetics::harvested(&p, 0.1, &g).unwrap(),
        ];
        for k in &kin {
            let (u, v, eps) = (0.7, 0.4, 1e-6);
            let (du, dv) = k.jacobian(2, u, v);
            let fu = (k.eval(2, u + eps, v) - k.eval(2, u - eps, v)) / (2.0 * eps);
            let fv = (k.eval(2, u, v + eps) - k.eval(2, u, v - eps)) / (2.0 * eps);
            assert!((du - fu).abs() < 1e-8 && (dv - fv).abs() < 1e-8);
        }
    }

    #[test]
    fn regimes_of_caption_sets() {
        let r = classify_regime(&fig1()).unwrap();
        assert!(r.holds_c1 && !r.holds_c2);
        assert!((r.ratio1 - 0.625).abs() < 1e-15);
        assert!((r.ratio2 - 0.04 / 0.07).abs() < 1e-15);

        let p = ModelParams::new(0.002, 0.001, 0.001, 0.0006, 0.3, FieldExpr::constant(2.0));
        let r = classify_regime(&p).unwrap();
        assert!(r.holds_c2 && !r.holds_c1);
        assert!((r.ratio1 - 0.5).abs() < 1e-15 && (r.ratio2 - 0.6).abs() < 1e-12);
        assert_eq!(r.omega1, 0.5);
        assert!(r.ordering_d && r.ordering_alpha);

        let p = ModelParams::new(0.3, 0.3, 0.1, 0.1, 0.0, FieldExpr::constant(2.0));
        assert!(classify_regime(&p).unwrap().holds_c1);

        let p = ModelParams::new(0.0, 0.3, 0.1, 0.1, 0.0, FieldExpr::constant(2.0));
        assert!(classify_regime(&p).is_err());
    }
}
