use proptest::prelude::*;
use vreg_core::exponents::{delta_formula, q_range, Scenario};
use vreg_core::fields::{extend, shift_difference, Face, Parity, Side};
use vreg_core::integrands::{e_pmu, v_norm_sq, v_transform, Coefficient};
use vreg_core::regularity::excess;
use vreg_core::{GridFunction, GridSpec, GrowthParams, IntegrandSpec};

fn vec2() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn v_norm_matches_transform(p in 1.1f64..5.0, mu in 0.0f64..2.0, z in vec2()) {
        let v = v_transform(p, mu, &z);
        let n2: f64 = v.iter().map(|x| x * x).sum();
        prop_assert!((n2 - v_norm_sq(p, mu, &z)).abs() <= 1e-12 * (1.0 + n2));
    }

    #[test]
    fn v_scales_with_mu(p in 1.1f64..5.0, mu in 0.0f64..2.0, lambda in 0.1f64..4.0, z in vec2()) {
        let scaled: Vec<f64> = z.iter().map(|x| lambda * x).collect();
        let lhs = v_norm_sq(p, lambda * mu, &scaled);
        let rhs = lambda.powf(p) * v_norm_sq(p, mu, &z);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs));
    }

    #[test]
    fn e_pmu_is_monotone_in_the_modulus(p in 1.1f64..5.0, mu in 0.0f64..2.0, s in 0.0f64..10.0, ds in 1e-3f64..1.0) {
        prop_assert!(e_pmu(p, mu, s + ds) > e_pmu(p, mu, s));
    }

    #[test]
    fn integrand_gradient_matches_central_differences(p in 1.5f64..4.0, extra in 0.0f64..1.0, z in vec2(), x in 0.05f64..0.95) {
        let mut params = GrowthParams::new(p, p + extra, 1, 2);
        params.mu = 0.5;
        let f = IntegrandSpec::double_phase(params, Coefficient::Constant { value: 1.0 }).unwrap();
        let g = f.grad_z(&[x], &z).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += h;
            zm[i] -= h;
            let fd = (f.eval(&[x], &zp).unwrap() - f.eval(&[x], &zm).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + g[i].abs()), "{} vs {}", fd, g[i]);
        }
    }

    #[test]
    fn delta_lies_between_zero_and_alpha(n in 1usize..6, p in 1.1f64..6.0, alpha in 0.01f64..1.0) {
        let d = delta_formula(&Scenario::new(n, p, p, alpha));
        prop_assert!(d > 0.0 && d <= alpha + 1e-15);
    }

    #[test]
    fn growth_bounds_exceed_p(n in 1usize..6, p in 1.1f64..6.0, alpha in 0.01f64..1.0) {
        let b = q_range(&Scenario::new(n, p, p, alpha));
        prop_assert!(b.basic > p && b.partial_regularity > p && b.autonomous >= b.partial_regularity);
        prop_assert!(b.basic_satisfied);
    }

    #[test]
    fn second_differences_kill_affine_fields(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, kx in 1i64..6, ky in -5i64..6) {
        let g = GridSpec::rectangle((0.0, 1.0), (0.0, 1.0), [17, 17]).unwrap();
        let u = GridFunction::from_scalar_fn(&g, |x| a + b * x[0] + c * x[1]);
        let d2 = shift_difference(&u, [kx, ky], 2).unwrap();
        prop_assert!(d2.field.max_abs() < 1e-12);
        let d1 = shift_difference(&u, [kx, ky], 1).unwrap();
        let expect = b * kx as f64 / 16.0 + c * ky as f64 / 16.0;
        prop_assert!(d1.field.values.iter().all(|v| (v - expect).abs() < 1e-12));
    }

    #[test]
    fn reflections_keep_the_original_half(coef in prop::collection::vec(-1.0f64..1.0, 3), parity in prop_oneof![Just(Parity::Odd), Just(Parity::Even), Just(Parity::Zero)]) {
        let g = GridSpec::interval(0.0, 1.0, 33).unwrap();
        let u = GridFunction::from_scalar_fn(&g, |x| x[0] * (coef[0] + coef[1] * x[0] + coef[2] * x[0] * x[0]));
        let e = extend(&u, Face::new(0, Side::Low), parity).unwrap();
        prop_assert_eq!(e.field.grid.nodes[0], 65);
        prop_assert_eq!(&e.field.values[32..], &u.values[..]);
        let sign = match parity { Parity::Odd => -1.0, Parity::Even => 1.0, Parity::Zero => 0.0 };
        for t in 1..33 {
            prop_assert_eq!(e.field.values[32 - t], sign * u.values[t]);
        }
        prop_assert!(e.trace_violation == 0.0);
    }

    #[test]
    fn affine_excess_is_the_radius_term(b in -2.0f64..2.0, r in 0.05f64..0.3, beta in 0.1f64..1.0) {
        let g = GridSpec::interval(0.0, 1.0, 257).unwrap();
        let u = GridFunction::from_scalar_fn(&g, |x| 1.0 + b * x[0]);
        let e = excess(&u, &[0.5], r, beta, 3.0, 0.0).unwrap();
        prop_assert!((e - r.powf(2.0 * beta)).abs() < 1e-12);
    }
}
