//! Quadrature helpers shared by the energy and diagnostics modules.

/// 8-point Gauss–Legendre nodes on (-1, 1).
const GL8_X: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL8_W: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Gauss–Legendre nodes and weights mapped to (0, 1); weights sum to 1.
pub fn gauss_legendre_unit() -> [(f64, f64); 8] {
    let mut out = [(0.0, 0.0); 8];
    for i in 0..8 {
        out[i] = (0.5 * (GL8_X[i] + 1.0), 0.5 * GL8_W[i]);
    }
    out
}

/// Fixed 8-point Gauss–Legendre rule on [a, b].
pub fn gauss8<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for i in 0..8 {
        acc += GL8_W[i] * f(mid + half * GL8_X[i]);
    }
    acc * half
}

/// Adaptive Gauss–Legendre on [a, b]: bisect until the 8-point rule agrees with its two halves.
pub fn adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let whole = gauss8(&f, a, b);
    adaptive_rec(&f, a, b, whole, abs_tol.max(1e-300), 0)
}

fn adaptive_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let mid = 0.5 * (a + b);
    let left = gauss8(f, a, mid);
    let right = gauss8(f, mid, b);
    let both = left + right;
    if (both - whole).abs() <= tol || depth >= 48 || !both.is_finite() {
        return both;
    }
    adaptive_rec(f, a, mid, left, 0.5 * tol, depth + 1) + adaptive_rec(f, mid, b, right, 0.5 * tol, depth + 1)
}

/// Geometric grid of `n` points from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let r = (hi / lo).ln() / (n - 1) as f64;
    (0..n).map(|i| lo * (r * i as f64).exp()).collect()
}

/// Neumaier-compensated sum.
pub fn stable_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in it {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss8_integrates_degree_15_exactly() {
        let v = gauss8(|x| x.powi(15) + 3.0 * x.powi(14), 0.0, 1.0);
        assert!((v - (1.0 / 16.0 + 3.0 / 15.0)).abs() < 1e-14);
    }

    #[test]
    fn unit_weights_sum_to_one() {
        let s: f64 = gauss_legendre_unit().iter().map(|p| p.1).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_resolves_a_sharp_peak() {
        let v = adaptive(|x| 1e-3 / (x * x + 1e-6), -1.0, 1.0, 1e-13);
        let exact = 2.0 * (1e3f64).atan();
        assert!((v - exact).abs() < 1e-11, "{v} vs {exact}");
    }
}
