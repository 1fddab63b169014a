use pjko::energy::{derive, EnergySpec};
use pjko::jko::*;
use pjko::measure::{self, initial, GridDensity, QuantileRep};
use pjko::reference::{fd_solve, FdConfig};
use proptest::prelude::*;

fn energy_of(xr: &QuantileRep, traj: &Trajectory) -> f64 {
    measure::energy_quantile_form(xr, &traj.ledger_energy()).unwrap()
}

fn catalog_runs() -> Vec<(&'static str, Trajectory)> {
    let bump = initial::bump(0.0, 1.0, 128, 0.5, 0.3, 1.0, 0.0).unwrap();
    let positive = initial::bump(0.0, 1.0, 128, 0.4, 0.25, 3.0, 0.5).unwrap();
    let cases: Vec<(&str, f64, &GridDensity, Vec<f64>)> = vec![
        ("entropy", 2.0, &positive, vec![]),
        ("entropy", 1.5, &positive, vec![]),
        ("power:m=2", 2.0, &bump, vec![]),
        ("power:m=3", 3.0, &bump, vec![]),
        ("power:m=0.5", 2.0, &positive, vec![1e-2, 1e-4]),
        ("qlaplace:p=3", 3.0, &positive, vec![1e-3, 1e-5]),
    ];
    cases
        .into_iter()
        .map(|(key, p, rho0, eps)| {
            let e = derive(&EnergySpec::from_key(key).unwrap()).unwrap();
            let mut cfg = SchemeConfig::new(p, 2e-3, 0.02, 128);
            cfg.eps_schedule = eps;
            let traj = run_scheme(rho0, &cfg, &e).unwrap();
            assert!(traj.is_complete(), "{key} p={p}: {:?}", traj.failure);
            (key, traj)
        })
        .collect()
}

#[test]
fn uniform_is_a_fixed_point() {
    let u = QuantileRep::uniform(0.0, 1.0, 64);
    for (key, eps) in [("entropy", 0.0), ("power:m=2", 0.0), ("power:m=3", 0.0), ("qlaplace:p=3", 1e-3)] {
        let e = derive(&EnergySpec::from_key(key).unwrap()).unwrap();
        let r = jko_step(&u, &e, 2.0, 1e-2, eps).unwrap();
        assert!(r.converged);
        assert!(measure::wasserstein_p(&r.next, &u, 2.0).unwrap() < 1e-12, "{key}");
        assert!(r.transport_term < 1e-24);
    }
    let e = derive(&EnergySpec::entropy()).unwrap();
    let traj = run_scheme(&initial::uniform(0.0, 1.0, 64).unwrap(), &SchemeConfig::new(2.0, 1e-2, 0.05, 64), &e).unwrap();
    assert_eq!(traj.steps.len(), 6);
    for k in 0..5 {
        assert!(traj.velocity(k).unwrap().iter().all(|v| v.abs() < 1e-10));
    }
}

#[test]
fn heat_step_matches_fd_oracle() {
    let tau = 1e-3;
    let rho0 = initial::bump(0.0, 1.0, 256, 0.5, 0.3, 1.0, 0.2).unwrap();
    let e = derive(&EnergySpec::entropy()).unwrap();
    let x0 = measure::density_to_quantile(&rho0, 256).unwrap();
    let r = jko_step(&x0, &e, 2.0, tau, 0.0).unwrap();
    assert!(r.converged && r.objective < r.objective_prev);
    let fd = fd_solve(&rho0, &EnergySpec::entropy(), 2.0, &FdConfig::new(tau, vec![tau])).unwrap();
    let l1 = measure::quantile_to_density(&r.next, 256).l1_distance(&fd.snapshots[0].density).unwrap();
    assert!(l1 <= 5e-3, "{l1}");
}

#[test]
fn rejects_bad_inputs() {
    let u = QuantileRep::uniform(0.0, 1.0, 16);
    let weak = derive(&EnergySpec::power(0.5).unwrap()).unwrap();
    assert_eq!(jko_step(&u, &weak, 2.0, 1e-2, 0.0).unwrap_err(), JkoError::NotSuperlinear);
    assert!(jko_step(&u, &weak, 2.0, 1e-2, 1e-3).unwrap().converged);
    let e = derive(&EnergySpec::entropy()).unwrap();
    assert!(matches!(degiorgi_step(&u, &e, 2.0, 1e-2, 0.0), Err(JkoError::RangeError(_))));
    assert!(matches!(degiorgi_step(&u, &e, 2.0, 1e-2, 1.5), Err(JkoError::RangeError(_))));
    assert!(matches!(epsilon_continuation(&u, &e, 2.0, 1e-2, &[1e-2, 1e-1], 1e-10, 50), Err(JkoError::Config(_))));
    let rho = initial::uniform(0.0, 1.0, 16).unwrap();
    for cfg in [
        SchemeConfig::new(1.0, 1e-2, 1.0, 16),
        SchemeConfig::new(2.0, 2.0, 1.0, 16),
        SchemeConfig::new(2.0, 1e-2, 1.0, 1),
        SchemeConfig { eps_schedule: vec![1e-3, 1e-2], ..SchemeConfig::new(2.0, 1e-2, 1.0, 16) },
    ] {
        assert!(matches!(run_scheme(&rho, &cfg, &e), Err(JkoError::Config(_))), "{cfg:?}");
    }
    assert_eq!(run_scheme(&rho, &SchemeConfig::new(2.0, 1e-2, 1.0, 16), &weak).unwrap_err(), JkoError::NotSuperlinear);
    let traj = run_scheme(&rho, &SchemeConfig::new(2.0, 0.3, 1.0, 16), &e).unwrap();
    assert_eq!(traj.steps.len(), 5);
    assert!(matches!(traj.interpolant(1.3, Interpolant::Geodesic), Err(JkoError::RangeError(_))));
    assert!(matches!(traj.velocity(4), Err(JkoError::RangeError(_))));
}

#[test]
fn scheme_invariants_on_catalog() {
    for (key, traj) in catalog_runs() {
        let f: Vec<f64> = traj.steps.iter().map(|x| energy_of(x, &traj)).collect();
        let slack = 1e-9 * (1.0 + f[0].abs());
        for (k, w) in f.windows(2).enumerate() {
            assert!(w[1] <= w[0] + slack, "{key}: energy rose at step {k}: {} -> {}", w[0], w[1]);
        }
        for (r, x) in traj.results.iter().zip(&traj.steps[1..]) {
            assert!(r.converged && r.objective <= r.objective_prev, "{key}");
            assert!(x.is_strictly_monotone() && x.x[0] >= 0.0 && x.x[x.m()] <= 1.0, "{key}");
            // Mass is fixed by the representation; the density grid must agree.
            assert!((measure::quantile_to_density(x, 128).mass() - 1.0).abs() < 1e-12);
        }
        // Σ W_p^p/(p τ^{p-1}) ≤ F(ρ₀) - min F, and min F = F(uniform) by Jensen.
        let budget: f64 = traj.results.iter().map(|r| r.transport_term).sum();
        let fmin = energy_of(&QuantileRep::uniform(0.0, 1.0, 128), &traj);
        assert!(budget <= f[0] - fmin + 1e-8, "{key}: {budget} vs {}", f[0] - fmin);
        // Telescoping the minimizer comparison gives the sharper Σ ≤ F₀ - F_N.
        assert!(budget <= f[0] - f[f.len() - 1] + 1e-8, "{key}");

        // Hölder in time with C = (p (F₀ - F_N))^{1/p}.
        let p = traj.p();
        let q = p / (p - 1.0);
        let c = (p * (f[0] - f[f.len() - 1]).max(0.0)).powf(1.0 / p);
        for (j, k) in [(0, 1), (0, 10), (2, 7), (5, 10)] {
            let d = measure::wasserstein_p(&traj.steps[j], &traj.steps[k], p).unwrap();
            let dt = (k - j) as f64 * traj.tau();
            assert!(d <= c * dt.powf(1.0 / q) * (1.0 + 1e-9) + 1e-12, "{key}: W({j},{k}) = {d}");
        }
    }
}

#[test]
fn minimizer_does_not_depend_on_start() {
    let rho0 = initial::bump(0.0, 1.0, 128, 0.5, 0.3, 1.0, 0.1).unwrap();
    let x0 = measure::density_to_quantile(&rho0, 128).unwrap();
    for (key, p, eps) in [("entropy", 2.0, 0.0), ("power:m=2", 2.0, 0.0), ("qlaplace:p=3", 3.0, 1e-3), ("power:m=3", 1.5, 0.0)] {
        let e = derive(&EnergySpec::from_key(key).unwrap()).unwrap();
        let a = jko_step_from(&x0, &x0, &e, p, 2e-3, eps, 1e-10, 200).unwrap();
        let b = jko_step_from(&x0, &QuantileRep::uniform(0.0, 1.0, 128), &e, p, 2e-3, eps, 1e-10, 200).unwrap();
        assert!(a.converged && b.converged, "{key}");
        let d = measure::wasserstein_p(&a.next, &b.next, p).unwrap();
        // For p < 2 the reachable KKT residual is the roundoff floor, not inner_tol.
        let tol = 10.0 * a.kkt_floor.max(b.kkt_floor).max(1e-10);
        assert!(d <= tol, "{key}: {d} vs {tol}");
    }
}

#[test]
fn heat_refinement_in_tau_is_first_order() {
    let e = derive(&EnergySpec::entropy()).unwrap();
    let rho0 = initial::bump(0.0, 1.0, 128, 0.5, 0.2, 2.0, 0.2).unwrap();
    let end = |tau: f64| {
        let traj = run_scheme(&rho0, &SchemeConfig::new(2.0, tau, 0.02, 128), &e).unwrap();
        assert!(traj.is_complete());
        measure::quantile_to_density(traj.steps.last().unwrap(), 128)
    };
    let r: Vec<GridDensity> = [4e-3, 2e-3, 1e-3].iter().map(|t| end(*t)).collect();
    let d1 = r[0].l1_distance(&r[1]).unwrap();
    let d2 = r[1].l1_distance(&r[2]).unwrap();
    assert!(d1 / d2 >= 1.5, "{d1} / {d2}");
}

#[test]
fn epsilon_continuation_record() {
    let rho0 = initial::bump(0.0, 1.0, 128, 0.5, 0.3, 1.0, 0.2).unwrap();
    let x0 = measure::density_to_quantile(&rho0, 128).unwrap();
    let e = derive(&EnergySpec::entropy()).unwrap();
    let sched = [1e-1, 1e-2, 1e-3, 1e-4];
    let r = epsilon_continuation(&x0, &e, 2.0, 1e-3, &sched, 1e-12, 200).unwrap();
    assert_eq!(r.eps_record.len(), 5);
    assert_eq!(r.eps_record.last().unwrap().0, 0.0);
    let d: Vec<f64> = r.eps_record[1..].iter().map(|x| x.1).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
    let direct = jko_step_from(&x0, &x0, &e, 2.0, 1e-3, 0.0, 1e-12, 200).unwrap();
    assert!(measure::wasserstein_p(&r.next, &direct.next, 2.0).unwrap() <= 1e-8);

    // eps > 0 keeps cells away from vacuum even for a degenerate energy and compact data.
    let pme = derive(&EnergySpec::power(2.0).unwrap()).unwrap();
    let x0 = measure::density_to_quantile(&initial::bump(0.0, 1.0, 128, 0.5, 0.3, 1.0, 0.0).unwrap(), 128).unwrap();
    let r = jko_step(&x0, &pme, 2.0, 1e-3, 1e-2).unwrap();
    let rho = r.next.cell_densities();
    assert!(rho.iter().all(|v| *v > 0.0 && v.is_finite()));
}

#[test]
fn degiorgi_interpolation() {
    let rho0 = initial::bump(0.0, 1.0, 128, 0.5, 0.3, 1.0, 0.1).unwrap();
    let x0 = measure::density_to_quantile(&rho0, 128).unwrap();
    let e = derive(&EnergySpec::entropy()).unwrap();
    let tau = 4e-3;
    let full = jko_step(&x0, &e, 2.0, tau, 0.0).unwrap();
    let s1 = degiorgi_step(&x0, &e, 2.0, tau, 1.0).unwrap();
    assert!(measure::wasserstein_p(&full.next, &s1.next, 2.0).unwrap() <= 1e-10);
    let small = degiorgi_step(&x0, &e, 2.0, tau, 1e-3).unwrap();
    // W_2(ρ̂_s, ρ₀) ≈ sτ |∇F|, and |∇F|² = 2·slope.
    let speed = (2.0 * pjko::diagnostics::quantile_slope(&x0, &e, 2.0)).sqrt();
    let d = measure::wasserstein_p(&small.next, &x0, 2.0).unwrap();
    assert!(d <= 10.0 * 1e-3 * tau * speed, "{d} vs {}", 1e-3 * tau * speed);
    let obj: Vec<f64> = [0.25, 0.5, 0.75, 1.0].iter().map(|s| degiorgi_step(&x0, &e, 2.0, tau, *s).unwrap().objective).collect();
    assert!(obj.windows(2).all(|w| w[1] <= w[0]), "{obj:?}");
}

#[test]
fn interpolants_and_velocity() {
    let e = derive(&EnergySpec::entropy()).unwrap();
    let rho0 = initial::bump(0.0, 1.0, 64, 0.5, 0.3, 1.0, 0.1).unwrap();
    let tau = 2e-3;
    let traj = run_scheme(&rho0, &SchemeConfig::new(2.0, tau, 0.02, 64), &e).unwrap();
    for k in 0..traj.steps.len() - 1 {
        let t = k as f64 * tau;
        let a = traj.interpolant(t, Interpolant::Geodesic).unwrap();
        let b = traj.interpolant(t + tau, Interpolant::Geodesic).unwrap();
        assert!(measure::wasserstein_p(&a, &traj.steps[k], 2.0).unwrap() < 1e-14);
        assert!(measure::wasserstein_p(&b, &traj.steps[k + 1], 2.0).unwrap() < 1e-14);
        let mid = traj.interpolant(t + 0.5 * tau, Interpolant::Geodesic).unwrap();
        let full = measure::wasserstein_p(&traj.steps[k], &traj.steps[k + 1], 2.0).unwrap();
        assert!((measure::wasserstein_p(&mid, &traj.steps[k], 2.0).unwrap() - full / 2.0).abs() < 1e-12);
        assert!((measure::wasserstein_p(&mid, &traj.steps[k + 1], 2.0).unwrap() - full / 2.0).abs() < 1e-12);
        let c = traj.interpolant(t + 0.5 * tau, Interpolant::Constant).unwrap();
        assert_eq!(c, traj.steps[k + 1]);

        let v = traj.velocity(k).unwrap();
        let w = traj.steps[k].node_weights();
        let kin: f64 = v.iter().zip(&w).map(|(v, w)| w * v.abs().powi(2)).sum::<f64>() * tau * tau;
        let wpp = measure::wasserstein_pp(&traj.steps[k], &traj.steps[k + 1], 2.0).unwrap();
        assert!((kin - wpp).abs() < 1e-12);
        assert!((traj.kinetic_term(k).unwrap() * tau - traj.results[k].transport_term).abs() < 1e-15);
    }
    let max_step = (0..traj.steps.len() - 1).map(|k| measure::wasserstein_p(&traj.steps[k], &traj.steps[k + 1], 2.0).unwrap()).fold(0.0, f64::max);
    for i in 0..=40 {
        let t = i as f64 * 0.02 / 40.0;
        let c = traj.interpolant(t, Interpolant::Constant).unwrap();
        let g = traj.interpolant(t, Interpolant::Geodesic).unwrap();
        assert!(measure::wasserstein_p(&c, &g, 2.0).unwrap() <= max_step + 1e-15);
    }
    let dg = traj.interpolant(3.0 * tau, Interpolant::DeGiorgi).unwrap();
    assert!(measure::wasserstein_p(&dg, &traj.steps[3], 2.0).unwrap() < 1e-9);
}

#[test]
fn translation_velocity() {
    let e = derive(&EnergySpec::entropy()).unwrap();
    let x0 = QuantileRep::new(0.0, 1.0, (0..=8).map(|i| 0.1 + 0.05 * i as f64).collect()).unwrap();
    let x1 = QuantileRep::new(0.0, 1.0, x0.x.iter().map(|x| x + 0.1).collect()).unwrap();
    let mut cfg = SchemeConfig::new(3.0, 0.5, 0.5, 8);
    cfg.eps_schedule = vec![];
    let traj = Trajectory { steps: vec![x0, x1], results: vec![], config: cfg, energy: e, failure: None };
    for v in traj.velocity(0).unwrap() {
        assert!((v - 0.2).abs() < 1e-14);
    }
    assert!((traj.kinetic_term(0).unwrap() - 0.2f64.powi(3) / 3.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn one_step_descends(vals in proptest::collection::vec(0.05f64..3.0, 32), tau in 1e-4f64..1e-2, p in 1.5f64..3.0) {
        let rho0 = GridDensity::normalized(0.0, 1.0, vals).unwrap();
        let x0 = measure::density_to_quantile(&rho0, 32).unwrap();
        let e = derive(&EnergySpec::entropy()).unwrap();
        let r = jko_step(&x0, &e, p, tau, 0.0).unwrap();
        prop_assert!(r.converged);
        prop_assert!(r.objective <= r.objective_prev);
        let f0 = measure::energy_quantile_form(&x0, &e).unwrap();
        let f1 = measure::energy_quantile_form(&r.next, &e).unwrap();
        prop_assert!(f1 + r.transport_term <= f0 + 1e-12);
        prop_assert!(r.next.is_strictly_monotone());
    }
}
