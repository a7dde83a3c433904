use proptest::prelude::*;
use rivercomp::discretization::face_fluxes;
use rivercomp::{assemble_transport, assemble_transport_2d, Advection2d, Error, Grid};

/// Cell count at or above the Peclet minimum for `(d, alpha)` on `[0, 1]`.
fn admissible_n(d: f64, alpha: f64, extra: usize) -> usize {
    let g = Grid::line(0.0, 1.0, 3).unwrap();
    g.min_cells_for(d, alpha).max(3) + extra
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn columns_sum_to_zero(d in 1e-3f64..1.0, alpha in 0.0f64..0.5, extra in 0usize..150) {
        let n = admissible_n(d, alpha, extra);
        let l = assemble_transport(&Grid::line(0.0, 1.0, n).unwrap(), d, alpha).unwrap();
        prop_assert!(l.peclet() < 2.0);
        let scale = l.matrix().norm_inf();
        for s in l.column_sums() {
            prop_assert!(s.abs() <= 1e-12 * n as f64 * scale, "column sum {s} (norm {scale})");
        }
        prop_assert!(l.is_metzler() && l.is_irreducible());
    }

    #[test]
    fn discrete_mass_of_transport_vanishes(
        d in 1e-3f64..1.0,
        alpha in 0.0f64..0.5,
        extra in 0usize..60,
        seed in prop::collection::vec(0.0f64..3.0, 64),
    ) {
        let n = admissible_n(d, alpha, extra);
        let g = Grid::line(0.0, 1.0, n).unwrap();
        let l = assemble_transport(&g, d, alpha).unwrap();
        let f: Vec<f64> = (0..n).map(|i| seed[i % seed.len()]).collect();
        let lf = l.apply(&f).unwrap();
        let total: f64 = lf.iter().sum();
        prop_assert!(total.abs() <= 1e-12 * n as f64 * l.matrix().norm_inf() * max_abs(&f).max(1.0));
    }

    #[test]
    fn boundary_faces_carry_no_flux(d in 1e-2f64..1.0, alpha in 0.0f64..0.5, extra in 0usize..40) {
        let n = admissible_n(d, alpha, extra);
        let g = Grid::line(0.0, 1.0, n).unwrap();
        let u: Vec<f64> = g.centers().iter().map(|x: &f64| 1.5 + (3.0 * x).sin()).collect();
        let f = face_fluxes(&g, d, alpha, &u);
        prop_assert_eq!(f[0], 0.0);
        prop_assert_eq!(f[n], 0.0);
    }

    #[test]
    fn separable_2d_field_reduces_to_1d(
        d in 1e-2f64..0.5,
        alpha in 0.0f64..0.2,
        extra in 0usize..12,
        profile in prop::collection::vec(0.1f64..3.0, 24),
    ) {
        let n = admissible_n(d, alpha, extra).min(24);
        prop_assume!(n >= admissible_n(d, alpha, 0));
        let l1 = assemble_transport(&Grid::line(0.0, 1.0, n).unwrap(), d, alpha).unwrap();
        let l2 = assemble_transport_2d(&Grid::square(0.0, 1.0, n).unwrap(), d, alpha, Advection2d::X).unwrap();
        let gx = &profile[..n];
        let y1 = l1.apply(gx).unwrap();
        let f2: Vec<f64> = (0..n * n).map(|k| gx[k % n]).collect();
        let y2 = l2.apply(&f2).unwrap();
        for k in 0..n * n {
            prop_assert!((y2[k] - y1[k % n]).abs() <= 1e-12 * (1.0 + y1[k % n].abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn balancing_symmetrizes(d in 1e-2f64..1.0, alpha in 0.0f64..0.5, extra in 0usize..10, two_d in any::<bool>(), diag in any::<bool>()) {
        let n = admissible_n(d, alpha, extra).min(30);
        prop_assume!(n >= admissible_n(d, alpha, 0));
        let l = if two_d {
            let adv = if diag { Advection2d::Diagonal } else { Advection2d::X };
            assemble_transport_2d(&Grid::square(0.0, 1.0, n).unwrap(), d, alpha, adv).unwrap()
        } else {
            assemble_transport(&Grid::line(0.0, 1.0, n).unwrap(), d, alpha).unwrap()
        };
        let s = l.balancing();
        let m = l.matrix();
        for i in 0..m.dim() {
            for (j, v) in m.row(i) {
                let a = v * s[j] / s[i];
                let b = m.get(j, i) * s[i] / s[j];
                prop_assert!((a - b).abs() <= 1e-12 * m.norm_inf(), "({i},{j}) {a} vs {b}");
            }
        }
    }
}

#[test]
fn diagonal_drift_2d_conserves_and_is_symmetric_under_transpose() {
    let n = 12;
    let g = Grid::<f64>::square(0.0, 1.0, n).unwrap();
    let l = assemble_transport_2d(&g, 0.05, 0.03, Advection2d::Diagonal).unwrap();
    let scale = l.matrix().norm_inf();
    assert!(l
        .column_sums()
        .iter()
        .all(|s| s.abs() <= 1e-12 * (n * n) as f64 * scale));
    // a field and its transpose map to transposed images when drift is (a, a)
    let f: Vec<f64> = (0..n * n)
        .map(|k| 1.0 + ((k % n) as f64 * 0.3).sin() * ((k / n) as f64 * 0.2).cos())
        .collect();
    let ft: Vec<f64> = (0..n * n).map(|k| f[(k % n) * n + k / n]).collect();
    let y = l.apply(&f).unwrap();
    let yt = l.apply(&ft).unwrap();
    for k in 0..n * n {
        assert!((yt[k] - y[(k % n) * n + k / n]).abs() < 1e-10);
    }
}

/// `exp(alpha x / d)` has zero flux everywhere, so `L` applied to it is pure
/// truncation error.
fn kernel_residual(n: usize, d: f64, alpha: f64) -> (f64, f64) {
    let g = Grid::line(0.0, 1.0, n).unwrap();
    let l = assemble_transport(&g, d, alpha).unwrap();
    let u: Vec<f64> = g.centers().iter().map(|x| (alpha * x / d).exp()).collect();
    let lu = l.apply(&u).unwrap();
    let interior = max_abs(&lu[1..n - 1]);
    let weighted_l1 = g.h()
        * lu.iter()
            .zip(&g.centers())
            .map(|(r, x)| r.abs() * (-alpha * x / d).exp())
            .sum::<f64>();
    (interior, weighted_l1)
}

#[test]
fn zero_flux_kernel_is_second_order_in_the_interior() {
    for &(d, alpha) in &[(0.08, 0.05), (0.07, 0.04), (1.0, 0.9)] {
        let (i1, w1) = kernel_residual(64, d, alpha);
        let (i2, w2) = kernel_residual(128, d, alpha);
        let (ri, rw) = (i1 / i2, w1 / w2);
        assert!(
            (3.0..=5.0).contains(&ri),
            "interior ratio {ri} for d={d} alpha={alpha}"
        );
        assert!(
            (1.8..=5.0).contains(&rw),
            "weighted ratio {rw} for d={d} alpha={alpha}"
        );
    }
}

#[test]
fn peclet_violation_reports_minimum_cells() {
    let g = Grid::line(0.0, 1.0, 16).unwrap();
    match assemble_transport(&g, 0.002, 0.3) {
        Err(Error::Peclet { min_n, .. }) => {
            assert_eq!(min_n, 76);
            let ok = Grid::line(0.0, 1.0, min_n).unwrap();
            assert!(assemble_transport(&ok, 0.002, 0.3).is_ok());
            let short = Grid::line(0.0, 1.0, min_n - 1).unwrap();
            assert!(assemble_transport(&short, 0.002, 0.3).is_err());
        }
        other => panic!("expected a Peclet error, got {other:?}"),
    }
}

#[test]
fn single_and_double_precision_agree() {
    let g64 = Grid::<f64>::line(0.0, 1.0, 32).unwrap();
    let g32 = Grid::<f32>::line(0.0, 1.0, 32).unwrap();
    let l64 = assemble_transport(&g64, 0.08, 0.05).unwrap();
    let l32 = assemble_transport(&g32, 0.08f32, 0.05).unwrap();
    let f64s: Vec<f64> = g64
        .centers()
        .iter()
        .map(|x| 2.0 + (std::f64::consts::PI * x).cos())
        .collect();
    let f32s: Vec<f32> = f64s.iter().map(|&x| x as f32).collect();
    let y64 = l64.apply(&f64s).unwrap();
    let y32 = l32.apply(&f32s).unwrap();
    for (a, b) in y64.iter().zip(&y32) {
        assert!((a - *b as f64).abs() < 1e-3 * (1.0 + a.abs()));
    }
}
