//! Gauss-Legendre nodes for the cap quadratures.

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    assert!(n >= 1, "quadrature needs at least one node");
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut out = vec![(0.0, 0.0); n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[i] = (mid - half * x, half * w);
        out[n - 1 - i] = (mid + half * x, half * w);
    }
    out
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let rule = gauss_legendre(8, 0.0, 2.0);
        let total: f64 = rule.iter().map(|&(_, w)| w).sum();
        assert!((total - 2.0).abs() < 1e-14);
        // x^15 is the highest degree an 8-point rule integrates exactly.
        let x15: f64 = rule.iter().map(|&(x, w)| w * x.powi(15)).sum();
        assert!((x15 - 2f64.powi(16) / 16.0).abs() < 1e-9);
    }

    #[test]
    fn sine_integral() {
        let r = 0.07;
        let got: f64 = gauss_legendre(16, 0.0, r).iter().map(|&(x, w)| w * x.sin()).sum();
        let exact = 2.0 * (0.5 * r).sin().powi(2);
        assert!((got - exact).abs() < 1e-15 * exact);
    }

    #[test]
    fn odd_node_count_has_centre_node() {
        let rule = gauss_legendre(5, -1.0, 1.0);
        assert!(rule[2].0.abs() < 1e-15);
        assert!((rule[2].1 - 128.0 / 225.0).abs() < 1e-14);
    }
}
