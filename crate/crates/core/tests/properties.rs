//! Property tests for the flows, kernels, divergences, couplings and bounds.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use uhmc::bounds::{
    kl_bias_bound, kl_mixing_bound, renyi_mixing_bound, BoundParams, Moments, Rates,
};
use uhmc::couplings::{solve_mixing_map, NewtonOptions};
use uhmc::divergences::{
    gaussian_kl, gaussian_renyi, orlicz_norm_samples, orlicz_wasserstein_upper, w2_gaussian,
};
use uhmc::dynamics::{
    exact_flow, exact_trajectory, grid_times, hamiltonian, phase_jacobian, verlet_flow,
    verlet_positions, FlowParams, PhasePoint,
};
use uhmc::gaussian::GaussianLaw;
use uhmc::kernels::{
    chain_coefficients, gaussian_chain_law, kernel_step, run_chain, synchronous_coupled_step,
    ChainInit, ChainSteps, KernelSpec,
};
use uhmc::potential::Potential;
use uhmc::rng::RngStream;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn vector(d: usize, scale: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-scale..scale, d).prop_map(DVector::from_vec)
}

/// Either a diagonal quadratic or the log-cosh potential, with dimension `d`.
fn potential(d: usize) -> impl Strategy<Value = Potential> {
    prop_oneof![
        prop::collection::vec(0.1f64..2.0, d).prop_map(|w| Potential::quadratic(&w).unwrap()),
        (0.0f64..1.0).prop_map(move |c| Potential::log_cosh(d, c).unwrap()),
    ]
}

/// Potential, phase point, and a step count with `h√L < 1.9`.
fn flow_case() -> impl Strategy<Value = (Potential, PhasePoint, FlowParams)> {
    (1usize..=4).prop_flat_map(|d| {
        (potential(d), vector(d, 2.0), vector(d, 2.0), 0.1f64..1.5, 1usize..=20).prop_filter_map(
            "Verlet unstable",
            |(p, x, v, t, n)| {
                let h = t / n as f64;
                if h * p.smoothness().l.sqrt() >= 1.9 {
                    return None;
                }
                Some((p, PhasePoint::new(x, v).unwrap(), FlowParams::new(t, h).unwrap()))
            },
        )
    })
}

fn diag_law(d: usize) -> impl Strategy<Value = GaussianLaw> {
    (vector(d, 1.5), prop::collection::vec(0.3f64..3.0, d))
        .prop_map(|(m, s)| GaussianLaw::diagonal(m, DVector::from_vec(s)).unwrap())
}

fn full_law(d: usize) -> impl Strategy<Value = GaussianLaw> {
    (vector(d, 1.5), prop::collection::vec(-1.0f64..1.0, d * d)).prop_map(move |(m, a)| {
        let a = DMatrix::from_vec(d, d, a);
        let cov = &a * a.transpose() + DMatrix::identity(d, d) * 0.5;
        GaussianLaw::full(m, cov).unwrap()
    })
}

proptest! {
    #![proptest_config(config(96))]

    #[test]
    fn verlet_preserves_volume((p, z, fp) in flow_case()) {
        let jac = phase_jacobian(&p, &z, &fp).unwrap();
        prop_assert!((jac.determinant() - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn verlet_is_time_reversible((p, z, fp) in flow_case()) {
        let end = verlet_flow(&p, &z, &fp).unwrap();
        let back = verlet_flow(&p, &end.flip(), &fp).unwrap().flip();
        prop_assert!((&back.x - &z.x).amax() <= 1e-10);
        prop_assert!((&back.v - &z.v).amax() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn exact_flow_reverses_and_conserves_energy(
        c in 0.0f64..1.0,
        x in vector(2, 2.0),
        v in vector(2, 2.0),
        t in 0.1f64..1.5,
    ) {
        let p = Potential::log_cosh(2, c).unwrap();
        let z = PhasePoint::new(x, v).unwrap();
        let end = exact_flow(&p, &z, t).unwrap();
        let back = exact_flow(&p, &end.flip(), t).unwrap().flip();
        prop_assert!((&back.x - &z.x).amax() <= 1e-10);
        prop_assert!((&back.v - &z.v).amax() <= 1e-10);
        prop_assert!((hamiltonian(&p, &end) - hamiltonian(&p, &z)).abs() <= 1e-9);
        let fp = FlowParams::exact(t).unwrap();
        let jac = phase_jacobian(&p, &z, &fp).unwrap();
        prop_assert!((jac.determinant() - 1.0).abs() <= 1e-8);
    }

    /// Grid-time Verlet error against the exact flow, first-order estimate.
    #[test]
    fn verlet_tracks_exact_flow_to_first_order(
        c in 0.0f64..1.0,
        x in vector(3, 2.0),
        v in vector(3, 2.0),
        t in 0.05f64..0.3,
        n in 1usize..=10,
    ) {
        let p = Potential::log_cosh(3, c).unwrap();
        let l = p.smoothness().l;
        let h = t / n as f64;
        prop_assume!(l * (t * t + t * h) <= 1.0 / 6.0);
        let fp = FlowParams::new(t, h).unwrap();
        let z = PhasePoint::new(x.clone(), v.clone()).unwrap();
        let approx = verlet_positions(&p, &z, &fp).unwrap();
        let exact = exact_trajectory(&p, &z, &grid_times(&fp)).unwrap();
        let err = approx
            .iter()
            .zip(&exact)
            .map(|(a, e)| (a - &e.x).norm())
            .fold(0.0, f64::max);
        let rhs = h * (0.24 * v.norm() + 7.0 / 30.0 * l * t * x.norm());
        prop_assert!(err <= rhs * (1.0 + 1e-9) + 1e-11, "err {err} > {rhs}");
    }
}

#[test]
fn verlet_energy_drift_is_second_order() {
    let p = Potential::log_cosh(2, 0.5).unwrap();
    let z = PhasePoint::from_slices(&[1.0, -0.5], &[0.3, 1.2]).unwrap();
    let h0 = hamiltonian(&p, &z);
    let hs = [0.1, 0.05, 0.025, 0.0125];
    let drift: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let fp = FlowParams::new(1.0, h).unwrap();
            (hamiltonian(&p, &verlet_flow(&p, &z, &fp).unwrap()) - h0).abs()
        })
        .collect();
    for w in drift.windows(2) {
        let slope = (w[0] / w[1]).log2();
        assert!((slope - 2.0).abs() < 0.2, "drift slope {slope}");
    }
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn ehmc_preserves_standard_gaussian(d in 1usize..=5, t in 0.05f64..1.5) {
        let p = Potential::isotropic_quadratic(d, 1.0).unwrap();
        let k = KernelSpec::ehmc(&p, t).unwrap();
        let law = gaussian_chain_law(&k, &ChainInit::Law(GaussianLaw::standard(d)), ChainSteps::Finite(1)).unwrap();
        prop_assert!(law.mean.amax() <= 1e-12);
        prop_assert!((law.variances().add_scalar(-1.0)).amax() <= 1e-12);
    }

    #[test]
    fn uhmc_stationary_law_is_fixed(w in prop::collection::vec(0.1f64..2.0, 1..=4), t in 0.1f64..1.2, n in 1usize..=20) {
        let p = Potential::quadratic(&w).unwrap();
        let k = KernelSpec::uhmc(&p, t, t / n as f64).unwrap();
        let pi = gaussian_chain_law(&k, &ChainInit::Point(DVector::zeros(w.len())), ChainSteps::Stationary).unwrap();
        let next = gaussian_chain_law(&k, &ChainInit::Law(pi.clone()), ChainSteps::Finite(1)).unwrap();
        let rel = (next.variances() - pi.variances()).component_div(&pi.variances());
        prop_assert!(rel.amax() <= 1e-12);
    }

    #[test]
    fn synchronous_factor_contracts(
        w in prop::collection::vec(0.2f64..1.0, 1..=4),
        t_frac in 0.05f64..1.0,
        n in 1usize..=20,
        x in -3.0f64..3.0,
        y in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let l = w.iter().cloned().fold(0.0, f64::max);
        let alpha = w.iter().cloned().fold(f64::INFINITY, f64::min);
        // Largest T with L(T² + T h) ≤ 1/20 when h = T/n.
        let tmax = (1.0 / (20.0 * l * (1.0 + 1.0 / n as f64))).sqrt();
        let t = t_frac * tmax;
        let p = Potential::quadratic(&w).unwrap();
        let k = KernelSpec::uhmc(&p, t, t / n as f64).unwrap();
        let (a, _) = chain_coefficients(&k).unwrap();
        let limit = 1.0 - alpha * t * t / 10.0;
        prop_assert!(a.amax() <= limit + 1e-15);

        let p1 = Potential::quadratic(&w[..1]).unwrap();
        let k1 = KernelSpec::uhmc(&p1, t, t / n as f64).unwrap();
        let (a1, _) = chain_coefficients(&k1).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let (xn, yn) = synchronous_coupled_step(&k1, &DVector::from_element(1, x), &DVector::from_element(1, y), &mut rng).unwrap();
        prop_assert!(((xn[0] - yn[0]).abs() - a1[0].abs() * (x - y).abs()).abs() <= 1e-12 * (1.0 + (x - y).abs()));
    }

    #[test]
    fn ula_one_step_law(x in vector(3, 3.0), eta in 0.001f64..0.9) {
        let p = Potential::isotropic_quadratic(3, 1.0).unwrap();
        let k = KernelSpec::ula(&p, eta).unwrap();
        let law = gaussian_chain_law(&k, &ChainInit::Point(x.clone()), ChainSteps::Finite(1)).unwrap();
        prop_assert!((&law.mean - &x * (1.0 - eta)).amax() <= 1e-15);
        prop_assert!(law.variances().add_scalar(-2.0 * eta).amax() <= 1e-15);
    }
}

#[test]
fn uhmc_long_run_variance_matches_stationary_law() {
    let p = Potential::quadratic(&[1.0]).unwrap();
    let k = KernelSpec::uhmc(&p, 1.0, 0.1).unwrap();
    let (a, b) = chain_coefficients(&k).unwrap();
    let target = b[0] * b[0] / (1.0 - a[0] * a[0]);
    let root = RngStream::new(2024, 0);
    let n = 20_000;
    let x0 = DVector::from_element(1, 0.0);
    let ends: Vec<f64> = (0..n)
        .map(|i| {
            let mut rng = root.split(i as u64);
            run_chain(&k, &x0, 60, &mut rng).unwrap().last().unwrap()[0]
        })
        .collect();
    let mean = ends.iter().sum::<f64>() / n as f64;
    let var = ends.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = target * (2.0 / (n - 1) as f64).sqrt();
    assert!((var - target).abs() <= 3.0 * se, "variance {var} vs {target} ± {se}");
}

#[test]
fn ehmc_preserves_standard_gaussian_empirically() {
    let p = Potential::isotropic_quadratic(1, 1.0).unwrap();
    let k = KernelSpec::ehmc(&p, 0.7).unwrap();
    let root = RngStream::new(99, 0);
    let n = 20_000;
    let out: Vec<f64> = (0..n)
        .map(|i| {
            let mut rng = root.split(i as u64);
            let x0 = DVector::from_element(1, rng.normal());
            kernel_step(&k, &x0, &mut rng).unwrap()[0]
        })
        .collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let var = out.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() <= 3.0 / (n as f64).sqrt());
    assert!((var - 1.0).abs() <= 3.0 * (2.0 / (n - 1) as f64).sqrt());
}

#[test]
fn same_seed_gives_identical_path() {
    let p = Potential::log_cosh(2, 0.5).unwrap();
    let k = KernelSpec::uhmc(&p, 0.5, 0.1).unwrap();
    let x0 = DVector::from_vec(vec![1.0, -1.0]);
    let a = run_chain(&k, &x0, 50, &mut RngStream::new(7, 3)).unwrap();
    let b = run_chain(&k, &x0, 50, &mut RngStream::new(7, 3)).unwrap();
    let c = run_chain(&k, &x0, 50, &mut RngStream::new(8, 3)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn divergences_are_nonnegative(a in diag_law(3), b in diag_law(3), q in 1.01f64..6.0) {
        prop_assert!(gaussian_kl(&a, &b).unwrap().value >= 0.0);
        prop_assert!(gaussian_renyi(q, &a, &b).unwrap().value >= 0.0);
        prop_assert!(w2_gaussian(&a, &b).unwrap().value >= 0.0);
        prop_assert!(orlicz_wasserstein_upper(&a, &b).unwrap().value >= 0.0);
        prop_assert!(gaussian_kl(&a, &a).unwrap().value <= 1e-12);
    }

    #[test]
    fn renyi_is_monotone_in_order(a in diag_law(2), b in diag_law(2), q in 1.01f64..5.0, dq in 0.0f64..5.0) {
        let lo = gaussian_renyi(q, &a, &b).unwrap().value;
        let hi = gaussian_renyi(q + dq, &a, &b).unwrap().value;
        let kl = gaussian_kl(&a, &b).unwrap().value;
        prop_assert!(lo <= hi + 1e-10 * (1.0 + hi.abs()));
        prop_assert!(kl <= lo + 1e-10 * (1.0 + lo.abs()));
    }

    #[test]
    fn renyi_weak_triangle(mu in diag_law(2), rho in diag_law(2), pi in diag_law(2), q in 2.0f64..5.0) {
        let lhs = gaussian_renyi(q, &mu, &pi).unwrap().value;
        let rhs = 1.5 * gaussian_renyi(2.0 * q, &mu, &rho).unwrap().value
            + gaussian_renyi(2.0 * q - 1.0, &rho, &pi).unwrap().value;
        prop_assert!(lhs <= rhs + 1e-10, "{lhs} > {rhs}");
    }

    #[test]
    fn renyi_tends_to_kl(a in diag_law(2), b in diag_law(2)) {
        let kl = gaussian_kl(&a, &b).unwrap().value;
        let r = gaussian_renyi(1.0 + 1e-9, &a, &b).unwrap().value;
        prop_assume!(r.is_finite());
        prop_assert!((r - kl).abs() <= 1e-6 * (1.0 + kl));
    }

    #[test]
    fn divergences_are_affine_invariant(
        a in full_law(2),
        b in full_law(2),
        m in prop::collection::vec(-2.0f64..2.0, 4),
        shift in vector(2, 3.0),
        q in 1.1f64..4.0,
    ) {
        let m = DMatrix::from_vec(2, 2, m);
        prop_assume!(m.determinant().abs() > 0.2);
        let (ta, tb) = (a.affine(&m, &shift).unwrap(), b.affine(&m, &shift).unwrap());
        let kl = gaussian_kl(&a, &b).unwrap().value;
        let kl_t = gaussian_kl(&ta, &tb).unwrap().value;
        prop_assert!((kl - kl_t).abs() <= 1e-8 * (1.0 + kl));
        let r = gaussian_renyi(q, &a, &b).unwrap().value;
        let r_t = gaussian_renyi(q, &ta, &tb).unwrap().value;
        if r.is_finite() {
            prop_assert!((r - r_t).abs() <= 1e-8 * (1.0 + r));
        } else {
            prop_assert!(r_t.is_infinite() || r_t > 1e8);
        }
    }

    #[test]
    fn orlicz_wasserstein_dominates_w2(a in diag_law(3), b in full_law(3)) {
        let w2 = w2_gaussian(&a, &b).unwrap().value;
        let ow = orlicz_wasserstein_upper(&a, &b).unwrap().value;
        prop_assert!(w2 / 2.0 <= ow * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn orlicz_exponential_moment(seed in any::<u64>(), d in 1usize..=3, s in 0.2f64..2.0, frac in 0.05f64..1.0) {
        let mut rng = RngStream::new(seed, 0);
        let xs: Vec<DVector<f64>> = (0..400).map(|_| rng.normal_vec(d) * s).collect();
        let k = orlicz_norm_samples(&xs).unwrap();
        let c = frac / (k * k);
        let vals: Vec<f64> = xs.iter().map(|x| (c * x.norm_squared()).exp()).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let rel_se = sd / n.sqrt() / mean;
        prop_assert!(mean <= 2f64.powf(c * k * k) * (1.0 + 3.0 * rel_se));
    }
}

fn bound_params() -> impl Strategy<Value = BoundParams> {
    (0.5f64..2.0, 0.0f64..1.0, 0.0f64..1.0, 0.05f64..1.0, 1usize..=50, 0.02f64..1.0, 1usize..=20).prop_map(
        |(l, m, n, af, d, t, steps)| BoundParams {
            l,
            m,
            n,
            alpha: af * l,
            d,
            t,
            h: t / steps as f64,
        },
    )
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn bound_value_present_iff_flags_hold(p in bound_params(), k in 0usize..500, w in 0.0f64..10.0, q in 1.01f64..5.0) {
        let rates = Rates::verlet(&p).unwrap();
        let mo = Moments::isotropic_gaussian(p.d, 1.0);
        for r in [
            kl_mixing_bound(&p, rates, k, w),
            kl_bias_bound(&p, rates, k, w, &mo, 0.1),
            renyi_mixing_bound(&p, rates, q, k, w),
        ] {
            prop_assert_eq!(r.value.is_some(), r.flags.iter().all(|f| f.holds), "{}", r.id);
        }
    }

    #[test]
    fn leaving_the_coupling_regime_suppresses_values(p in bound_params(), k in 0usize..50) {
        let t = (1.0 / (6.0 * p.l)).sqrt();
        let p = BoundParams { t, h: t / 4.0, ..p };
        let rates = Rates::verlet(&p).unwrap();
        prop_assert!(kl_mixing_bound(&p, rates, k, 1.0).value.is_none());
        let mo = Moments::isotropic_gaussian(p.d, 1.0);
        prop_assert!(kl_bias_bound(&p, rates, k, 1.0, &mo, 0.1).value.is_none());
    }

    #[test]
    fn kl_mixing_nonincreasing_in_k(p in bound_params(), k in 0usize..1000, w in 0.0f64..10.0) {
        let rates = Rates::verlet(&p).unwrap();
        let now = kl_mixing_bound(&p, rates, k, w);
        let next = kl_mixing_bound(&p, rates, k + 1, w);
        if let (Some(x), Some(y)) = (now.value, next.value) {
            prop_assert!(y <= x);
        }
    }

    #[test]
    fn kl_bias_nondecreasing_in_inputs(
        p in bound_params(),
        m2 in 0.0f64..100.0,
        m4 in 0.0f64..1e4,
        dh in 0.0f64..2.0,
        bump in 1.0f64..2.0,
    ) {
        let rates = Rates::verlet(&p).unwrap();
        let base_mo = Moments { m2, m4, source: String::new() };
        let base = kl_bias_bound(&p, rates, 10, 1.0, &base_mo, dh).get("bias").unwrap();
        let h_up = kl_bias_bound(&p.with_h(p.h * bump), rates, 10, 1.0, &base_mo, dh).get("bias").unwrap();
        let m2_up = kl_bias_bound(&p, rates, 10, 1.0, &Moments { m2: m2 * bump, ..base_mo.clone() }, dh).get("bias").unwrap();
        let m4_up = kl_bias_bound(&p, rates, 10, 1.0, &Moments { m4: m4 * bump, ..base_mo.clone() }, dh).get("bias").unwrap();
        let dh_up = kl_bias_bound(&p, rates, 10, 1.0, &base_mo, dh * bump).get("bias").unwrap();
        for up in [h_up, m2_up, m4_up, dh_up] {
            prop_assert!(up >= base * (1.0 - 1e-14));
        }
    }

    #[test]
    fn renyi_mixing_nonincreasing_past_burn_in(p in bound_params(), q in 1.01f64..5.0, w in 0.1f64..10.0, extra in 0usize..500) {
        let rates = Rates::verlet(&p).unwrap();
        let kstar = renyi_mixing_bound(&p, rates, q, 0, w).get("burn_in").unwrap();
        let k = kstar.max(0.0).ceil() as usize + extra;
        let now = renyi_mixing_bound(&p, rates, q, k, w);
        let next = renyi_mixing_bound(&p, rates, q, k + 1, w);
        if let (Some(x), Some(y)) = (now.value, next.value) {
            prop_assert!(y <= x);
        }
    }
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn coincident_mixing_map_is_identity(c in 0.0f64..1.0, x in vector(2, 2.0), v in vector(2, 2.0), n in 1usize..=8) {
        let p = Potential::log_cosh(2, c).unwrap();
        let fp = FlowParams::new(0.2, 0.2 / n as f64).unwrap();
        let sol = solve_mixing_map(&p, &x, &x, &v, &fp, &NewtonOptions::default()).unwrap();
        prop_assert!((&sol.v_prime - &v).amax() <= 1e-12);
    }

    #[test]
    fn mixing_map_meets_its_defining_equation(
        c in 0.0f64..1.0,
        x in vector(2, 1.5),
        y in vector(2, 1.5),
        v in vector(2, 2.0),
        n in 1usize..=8,
    ) {
        let p = Potential::log_cosh(2, c).unwrap();
        let fp = FlowParams::new(0.2, 0.2 / n as f64).unwrap();
        let sol = solve_mixing_map(&p, &x, &y, &v, &fp, &NewtonOptions::default()).unwrap();
        let a = verlet_flow(&p, &PhasePoint::new(x.clone(), v.clone()).unwrap(), &fp).unwrap();
        let b = verlet_flow(&p, &PhasePoint::new(y.clone(), sol.v_prime.clone()).unwrap(), &fp).unwrap();
        prop_assert!((&a.x - &b.x).norm() <= 1e-10);
        prop_assert!(sol.residual <= 1e-10);
    }
}
