use pjko::energy::{derive, EnergySpec};
use pjko::measure::*;
use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_quantiles(rng: &mut ChaCha8Rng, m: usize) -> QuantileRep {
    let mut gaps: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let lead: f64 = rng.random_range(0.0..0.3);
    let span: f64 = rng.random_range(0.3..1.0 - lead);
    let total: f64 = gaps.iter().sum();
    gaps.iter_mut().for_each(|g| *g *= span / total);
    let mut x = vec![lead];
    for g in gaps {
        x.push(x[x.len() - 1] + g);
    }
    QuantileRep::new(0.0, 1.0, x).unwrap()
}

fn random_measure(rng: &mut ChaCha8Rng, max_atoms: usize) -> DiscreteMeasure {
    let k = rng.random_range(1..=max_atoms);
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut atoms: Vec<(f64, f64)> = w.iter().map(|w| (rng.random_range(-2.0..2.0), w / total)).collect();
    let s: f64 = atoms.iter().map(|a| a.1).sum();
    atoms[0].1 += 1.0 - s;
    DiscreteMeasure::new(atoms).unwrap()
}

#[test]
fn quantile_examples() {
    let rho = initial::uniform(0.0, 1.0, 64).unwrap();
    let q = density_to_quantile(&rho, 4).unwrap();
    for (x, e) in q.x.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
        assert!((x - e).abs() < 1e-14);
    }
    // ρ = 2x has CDF x², so X₁ = √(1/2); bisection on the closed-form CDF agrees.
    let tri = initial::sample(0.0, 1.0, 4096, |x| 2.0 * x).unwrap();
    let q = density_to_quantile(&tri, 2).unwrap();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * mid < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((q.x[1] - lo).abs() < 1e-7, "{}", q.x[1]);
    assert!((lo - 0.5f64.sqrt()).abs() < 1e-15);
}

#[test]
fn round_trip_mass_and_drift() {
    let rho = initial::bump(0.0, 1.0, 512, 0.4, 0.2, 3.0, 0.5).unwrap();
    let q = density_to_quantile(&rho, 512).unwrap();
    for n in [17, 100, 256, 1000] {
        let back = quantile_to_density(&q, n);
        assert!((back.mass() - 1.0).abs() < 1e-12);
    }
    let back = quantile_to_density(&q, 256);
    let q2 = density_to_quantile(&back, 512).unwrap();
    let drift = q.x.iter().zip(&q2.x).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    assert!(drift <= 2.0 / 256.0, "drift {drift}");
    let eq = QuantileRep::uniform(0.0, 1.0, 50);
    let d = quantile_to_density(&eq, 10);
    assert!(d.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn round_trip_error_halves_under_refinement() {
    let base = |x: f64| 1.0 + 0.8 * (3.0 * x).sin() + 0.3 * x;
    let fine = 8192;
    let m = 1024;
    let q_exact = density_to_quantile(&initial::sample(0.0, 1.0, fine, base).unwrap(), m).unwrap();
    let mut errs = vec![];
    let ns = [32usize, 64, 128, 256];
    for &n in &ns {
        let coarse = quantile_to_density(&q_exact, n);
        let q = density_to_quantile(&coarse, m).unwrap();
        errs.push(q.x.iter().zip(&q_exact.x).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max));
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!(-slope >= 0.9, "errors {errs:?}, slope {slope}");
}

#[test]
fn wasserstein_examples() {
    let u = QuantileRep::uniform(0.0, 1.0, 64);
    assert_eq!(wasserstein_p(&u, &u, 2.0).unwrap(), 0.0);
    let x = QuantileRep::new(0.0, 1.25, (0..=64).map(|i| i as f64 / 64.0).collect()).unwrap();
    let y = QuantileRep::new(0.0, 1.25, (0..=64).map(|i| 0.25 + i as f64 / 64.0).collect()).unwrap();
    for p in [1.0, 1.5, 2.0, 3.0, 7.0] {
        assert!((wasserstein_p(&x, &y, p).unwrap() - 0.25).abs() < 1e-14);
    }
    // Quantiles s and s/2: W₂² = ∫ (s/2)² = 1/12; the trapezoid rule adds exactly 1/(24 m²).
    let m = 2048;
    let x = QuantileRep::uniform(0.0, 1.0, m);
    let y = QuantileRep::new(0.0, 1.0, (0..=m).map(|i| 0.5 * i as f64 / m as f64).collect()).unwrap();
    let w = wasserstein_pp(&x, &y, 2.0).unwrap();
    assert!((w - 1.0 / 12.0 - 1.0 / (24.0 * (m * m) as f64)).abs() < 1e-15);
    // Cross-check against the transport oracle on an 8-atom discretization of the same pair.
    let k = 8;
    let mu = DiscreteMeasure::new((0..k).map(|i| ((i as f64 + 0.5) / k as f64, 1.0 / k as f64)).collect()).unwrap();
    let nu = DiscreteMeasure::new((0..k).map(|i| (0.5 * (i as f64 + 0.5) / k as f64, 1.0 / k as f64)).collect()).unwrap();
    let lp = wasserstein_lp_oracle(&mu, &nu, 2.0).unwrap_err();
    assert!(matches!(lp, MeasureError::SizeError(_)));
    let lp = wasserstein_discrete(&mu, &nu, 2.0).powi(2);
    assert!((lp - 1.0 / 12.0).abs() < 1e-2);
    assert!(matches!(wasserstein_p(&x, &QuantileRep::uniform(0.0, 1.0, 8), 2.0), Err(MeasureError::ShapeMismatch(_))));
}

#[test]
fn node_metric_separates_checkerboard_modes() {
    // Midpoint quantiles cannot see X_i + (-1)^i δ; the node metric does.
    let m = 16;
    let x = QuantileRep::uniform(0.0, 1.0, m);
    let mut y = x.clone();
    for i in 1..m {
        y.x[i] += if i % 2 == 0 { 0.01 } else { -0.01 };
    }
    assert!(wasserstein_p(&x, &y, 2.0).unwrap() > 0.0);
}

#[test]
fn lp_oracle_examples() {
    let d = |x: f64| DiscreteMeasure::new(vec![(x, 1.0)]).unwrap();
    assert!((wasserstein_lp_oracle(&d(0.3), &d(-1.2), 2.0).unwrap() - 1.5).abs() < 1e-15);
    let a = DiscreteMeasure::new(vec![(0.0, 0.5), (1.0, 0.5)]).unwrap();
    let b = DiscreteMeasure::new(vec![(1.0, 0.5), (0.0, 0.5)]).unwrap();
    assert_eq!(wasserstein_lp_oracle(&a, &b, 1.5).unwrap(), 0.0);
    let big = DiscreteMeasure::new((0..9).map(|i| (i as f64, 1.0 / 9.0 + if i == 0 { 1.0 - 9.0 * (1.0 / 9.0) } else { 0.0 })).collect()).unwrap();
    assert!(matches!(wasserstein_lp_oracle(&big, &a, 2.0), Err(MeasureError::SizeError(_))));
}

#[test]
fn monotone_coupling_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let mu = random_measure(&mut rng, 5);
        let nu = random_measure(&mut rng, 5);
        let p = [1.0, 1.5, 2.0, 3.0][rng.random_range(0..4)];
        let a = wasserstein_discrete(&mu, &nu, p);
        let b = wasserstein_lp_oracle(&mu, &nu, p).unwrap();
        assert!((a - b).abs() <= 1e-12 * (1.0 + b), "{a} vs {b}");
    }
}

#[test]
fn metric_axioms_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let m = 24;
        let (x, y, z) = (random_quantiles(&mut rng, m), random_quantiles(&mut rng, m), random_quantiles(&mut rng, m));
        for p in [1.0, 2.0, 3.5] {
            let xy = wasserstein_p(&x, &y, p).unwrap();
            assert_eq!(xy, wasserstein_p(&y, &x, p).unwrap());
            assert_eq!(wasserstein_p(&x, &x, p).unwrap(), 0.0);
            assert!(xy > 0.0);
            let xz = wasserstein_p(&x, &z, p).unwrap();
            let zy = wasserstein_p(&z, &y, p).unwrap();
            assert!(xy <= xz + zy + 1e-12);
            // Jensen: W_p ≤ W_r for p ≤ r.
            assert!(wasserstein_p(&x, &y, 1.0).unwrap() <= xy + 1e-12);
        }
    }
}

#[test]
fn tv_examples() {
    assert_eq!(tv_norm(&initial::uniform(0.0, 1.0, 100).unwrap()), 0.0);
    let bump = initial::sample(0.0, 1.0, 1000, |x| 1.0 + 0.5 * (-((x - 0.5) / 0.05).powi(2)).exp()).unwrap();
    let peak = bump.values.iter().cloned().fold(0.0, f64::max);
    let floor = bump.values[0];
    assert!((tv_norm(&bump) - 2.0 * (peak - floor)).abs() < 1e-12);
    let smooth = |n| tv_norm(&initial::sample(0.0, 1.0, n, |x| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * x).sin()).unwrap());
    assert!((smooth(500) - smooth(1000)).abs() <= 0.01 * smooth(1000));
    assert!(QuantileRep::uniform(0.0, 1.0, 20).total_variation() < 1e-12);
}

#[test]
fn energy_examples() {
    let ent = derive(&EnergySpec::entropy()).unwrap();
    let u = initial::uniform(0.0, 1.0, 10).unwrap();
    assert_eq!(energy_density_form(&u, &ent).unwrap(), 0.0);
    let sq = derive(&EnergySpec::power(2.0).unwrap()).unwrap();
    let u2 = initial::uniform(0.0, 2.0, 10).unwrap();
    assert!((energy_density_form(&u2, &sq).unwrap() - 0.5).abs() < 1e-14);
    assert!((energy_quantile_form(&QuantileRep::uniform(0.0, 2.0, 10), &sq).unwrap() - 0.5).abs() < 1e-14);
    let bump = initial::bump(0.0, 1.0, 1024, 0.5, 0.3, 2.0, 0.2).unwrap();
    let q = density_to_quantile(&bump, 1024).unwrap();
    for e in [&ent, &sq] {
        let a = energy_density_form(&bump, e).unwrap();
        let b = energy_quantile_form(&q, e).unwrap();
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
    let ff = derive(&EnergySpec::flux_identity(3.0).unwrap()).unwrap();
    let compact = initial::bump(0.0, 1.0, 64, 0.5, 0.2, 1.0, 0.0).unwrap();
    assert!(matches!(energy_density_form(&compact, &ff), Err(MeasureError::DomainError(_))));
}

#[test]
fn snapshot_csv_round_trip() {
    let dir = std::env::temp_dir().join(format!("pjko-measure-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("density.csv");
    let rho = initial::bump(-1.0, 2.0, 33, 0.4, 0.5, 1.0, 0.1).unwrap();
    rho.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("x,rho\n"));
    let back = GridDensity::read_csv(&path, Some((-1.0, 2.0))).unwrap();
    for (u, v) in rho.values.iter().zip(&back.values) {
        assert!((u - v).abs() <= 1e-14 * u.abs().max(1.0));
    }
    let inferred = GridDensity::read_csv(&path, None).unwrap();
    assert!((inferred.a + 1.0).abs() < 1e-12 && (inferred.b - 2.0).abs() < 1e-12);
    std::fs::remove_dir_all(&dir).ok();
}

proptest! {
    #[test]
    fn histogram_preserves_mass(xs in proptest::collection::vec(0.001f64..1.0, 3..40), n in 1usize..300) {
        let total: f64 = xs.iter().sum();
        let mut x = vec![0.0];
        for g in &xs {
            x.push(x[x.len() - 1] + g / total);
        }
        let q = QuantileRep::new(0.0, 1.0 + 1e-12, x).unwrap();
        let d = quantile_to_density(&q, n);
        prop_assert!((d.mass() - 1.0).abs() < 1e-12);
        prop_assert!(d.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn translation_is_exact(shift in 0.0f64..0.5, p in 1.0f64..6.0) {
        let x = QuantileRep::new(0.0, 1.5, (0..=40).map(|i| (i as f64 / 40.0).powi(2)).collect()).unwrap();
        let y = QuantileRep::new(0.0, 1.5, x.x.iter().map(|v| v + shift).collect()).unwrap();
        prop_assert!((wasserstein_p(&x, &y, p).unwrap() - shift).abs() < 1e-13);
    }
}
