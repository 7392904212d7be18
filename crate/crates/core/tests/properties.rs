use std::sync::Arc;

use proptest::prelude::*;

use fracsym::elliptic::{l1_contraction_check, solve_nonlinear, Nonlinearity};
use fracsym::fraclap::{assemble_restricted, gagliardo_double_sum, gagliardo_form};
use fracsym::io::{field_from_csv, field_to_csv};
use fracsym::parabolic::{evolve, stability_check, Source};
use fracsym::rearrange::{
    concentration_report, convex_order_check, decreasing_rearrangement, default_convex_family,
    distribution_function, hardy_littlewood_check, same_grid_tolerance, spherical_rearrangement, Concentration,
};
use fracsym::{Domain, ScalarField, Shape};

fn interval(n: usize) -> Arc<Domain> {
    Arc::new(Domain::interval(-1.0, 1.0, n).unwrap())
}

fn field(d: &Arc<Domain>, v: Vec<f64>) -> ScalarField {
    ScalarField::new(d.clone(), v).unwrap()
}

fn shapes() -> impl Strategy<Value = Arc<Domain>> {
    prop_oneof![
        (8usize..40).prop_map(interval),
        (6usize..12).prop_map(|n| Arc::new(Shape::Lshape { side: 1.0 }.build(n).unwrap())),
        (6usize..12).prop_map(|n| Arc::new(Shape::Disk { radius: 1.0 }.build(n).unwrap())),
        (6usize..12).prop_map(|n| Arc::new(Shape::Annulus { inner: 0.4, outer: 1.0 }.build(n).unwrap())),
    ]
}

fn domain_and_values(lo: f64, hi: f64) -> impl Strategy<Value = (Arc<Domain>, Vec<f64>)> {
    shapes().prop_flat_map(move |d| {
        let n = d.len();
        (Just(d), prop::collection::vec(lo..hi, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rearrangement_is_equimeasurable((d, v) in domain_and_values(-2.0, 2.0), level in 0.0f64..2.0) {
        let f = field(&d, v);
        let p = decreasing_rearrangement(&f);
        let steps = p.values().iter().filter(|x| **x > level).count() as f64 * d.cell_measure();
        prop_assert_eq!(distribution_function(&f, level).unwrap(), steps);
        prop_assert!(p.values().windows(2).all(|w| w[0] >= w[1]));
        for q in [1.0, 2.0, 3.5] {
            let a = f.norm_lp(q);
            prop_assert!((a - p.norm_lp(q)).abs() <= 1e-12 * a.max(1e-300));
        }
        prop_assert_eq!(f.norm_linf(), p.values()[0]);
    }

    #[test]
    fn hardy_littlewood((d, v) in domain_and_values(-1.0, 1.0), seed in any::<u64>()) {
        let f = field(&d, v);
        let g = f.map(|x| ((x * 12.9898 + seed as f64 * 1e-3).sin() * 43758.5453).fract());
        let (lhs, rhs) = hardy_littlewood_check(&f, &g).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn spherical_rearrangement_preserves_distribution((d, v) in domain_and_values(0.0, 1.0)) {
        let f = field(&d, v);
        let fs = spherical_rearrangement(&f);
        prop_assert_eq!(fs.len(), f.len());
        let (a, b) = (decreasing_rearrangement(&f), decreasing_rearrangement(&fs));
        prop_assert_eq!(a.values(), b.values());
        prop_assert!((fs.domain().measure() - d.measure()).abs() < 1e-12 * d.measure());
    }

    #[test]
    fn pointwise_domination_orders_concentration((d, v) in domain_and_values(0.0, 1.0), bump in 0.0f64..0.5) {
        let f = field(&d, v);
        let g = f.map(|x| x + bump * x * x);
        let (pf, pg) = (decreasing_rearrangement(&f), decreasing_rearrangement(&g));
        let rep = concentration_report(&pf, &pg, same_grid_tolerance(&pg)).unwrap();
        prop_assert!(rep.verdict.is_less_or_equal());
        prop_assert_eq!(concentration_report(&pf, &pf, 0.0).unwrap().verdict, Concentration::Equal);
        let fam = default_convex_family(pg.values()[0], 8);
        prop_assert!(convex_order_check(&pf, &pg, &fam, 1e-12));
    }

    #[test]
    fn averaging_lowers_concentration((d, v) in domain_and_values(0.0, 1.0)) {
        let f = field(&d, v);
        let mean = f.integral() / d.measure();
        let flat = ScalarField::constant(d.clone(), mean);
        let (pf, pc) = (decreasing_rearrangement(&f), decreasing_rearrangement(&flat));
        let rep = concentration_report(&pc, &pf, 1e-12 * f.norm_l1().max(1e-300)).unwrap();
        prop_assert!(rep.verdict.is_less_or_equal());
    }

    #[test]
    fn field_csv_round_trip((d, v) in domain_and_values(-1e6, 1e6)) {
        let f = field(&d, v);
        let g = field_from_csv(&field_to_csv(&f), &d).unwrap();
        prop_assert!(f.values().iter().zip(g.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn operator_structure(d in shapes(), sigma in 0.05f64..1.95) {
        let a = assemble_restricted(&d, sigma).unwrap();
        let m = a.matrix();
        let n = a.len();
        let scale = m.amax();
        for i in 0..n {
            prop_assert!(m[(i, i)] > 0.0);
            let mut off = 0.0;
            for j in 0..n {
                prop_assert!((m[(i, j)] - m[(j, i)]).abs() <= 1e-13 * scale);
                if i != j {
                    prop_assert!(m[(i, j)] <= 0.0);
                    off -= m[(i, j)];
                }
            }
            prop_assert!(m[(i, i)] > off);
        }
        let a1 = a.apply(&vec![1.0; n]);
        for (x, t) in a1.iter().zip(a.killing()) {
            prop_assert!((x - t).abs() <= 1e-10 * t.abs().max(1.0));
        }
    }

    #[test]
    fn energy_is_nonnegative((d, v) in domain_and_values(-1.0, 1.0), sigma in 0.1f64..1.9) {
        let a = assemble_restricted(&d, sigma).unwrap();
        let u = field(&d, v);
        let e1 = gagliardo_form(&a, &u).unwrap();
        let e2 = gagliardo_double_sum(&a, &u).unwrap();
        prop_assert!(e1 >= 0.0);
        prop_assert!((e1 - e2).abs() <= 1e-9 * e1.abs().max(1e-12));
    }

    #[test]
    fn elliptic_comparison_principle(
        (d, v) in domain_and_values(0.0, 1.0),
        sigma in 0.2f64..1.8,
        extra in 0.0f64..1.0,
        which in 0usize..3,
    ) {
        let a = assemble_restricted(&d, sigma).unwrap();
        let b = [Nonlinearity::Linear(0.5), Nonlinearity::Saturating, Nonlinearity::power(0.5, 1e-3).unwrap()][which].clone();
        let f1 = field(&d, v);
        let f2 = f1.map(|x| x + extra * x.sqrt());
        let v1 = solve_nonlinear(&a, &b, &f1, 1.0).unwrap();
        let v2 = solve_nonlinear(&a, &b, &f2, 1.0).unwrap();
        let tol = 1e-9 * (1.0 + v2.norm_linf());
        prop_assert!(v1.values().iter().all(|x| *x >= -tol));
        prop_assert!(v1.values().iter().zip(v2.values()).all(|(x, y)| *x <= *y + tol));
        let (lhs, rhs) = l1_contraction_check(&a, &b, &f2, &f1).unwrap();
        prop_assert!(lhs <= rhs + 1e-9 * f2.norm_l1());
    }

    #[test]
    fn heat_flow_is_positive_and_contracting(
        (d, v) in domain_and_values(0.0, 1.0),
        sigma in 0.2f64..1.8,
        h in 0.01f64..0.2,
    ) {
        let a = assemble_restricted(&d, sigma).unwrap();
        let u0 = field(&d, v);
        let u1 = u0.map(|x| 0.5 * x + 0.25);
        let t1 = evolve(&a, &u0, &Source::Zero, 0.5, h).unwrap();
        let t2 = evolve(&a, &u1, &Source::Zero, 0.5, h).unwrap();
        let masses: Vec<f64> = t1.states.iter().map(|s| s.integral()).collect();
        prop_assert!(masses.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        prop_assert!(t1.states.iter().all(|s| s.values().iter().all(|x| *x >= -1e-12)));
        prop_assert!(stability_check(&t1, &t2).unwrap() <= 1e-10);
    }
}
