//! Collapsed Gauss-Legendre rules on the reference triangle (0,0),(1,0),(0,1).

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Total polynomial degree integrated exactly.
    pub degree: usize,
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        // Newton on P_n from the Tricomi initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

impl QuadratureRule {
    /// Duffy-collapsed tensor rule exact for total degree `degree`.
    ///
    /// `x^a y^b` maps to `u^a (1-u)^(b+1) v^b`, so `n` points per direction
    /// with `2n - 1 >= degree + 1` suffice.
    pub fn collapsed_gauss(degree: usize) -> Self {
        let n = (degree + 3) / 2;
        let (t, w) = gauss_legendre(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (&u, &wu) in t.iter().zip(&w) {
            for (&v, &wv) in t.iter().zip(&w) {
                points.push([u, (1.0 - u) * v]);
                weights.push(wu * wv * (1.0 - u));
            }
        }
        QuadratureRule {
            points,
            weights,
            degree,
        }
    }

    /// Integral over the reference triangle.
    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p[0], p[1]))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn weights_sum_to_reference_area() {
        for d in [1, 4, 10, 20] {
            let rule = QuadratureRule::collapsed_gauss(d);
            assert!((rule.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
            assert!(rule.points.iter().all(|p| p[0] > 0.0 && p[1] > 0.0 && p[0] + p[1] < 1.0));
        }
    }

    #[test]
    fn exact_on_monomials_up_to_degree() {
        for degree in [2, 5, 10, 14] {
            let rule = QuadratureRule::collapsed_gauss(degree);
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                    let got = rule.integrate(|x, y| x.powi(a as i32) * y.powi(b as i32));
                    assert!((got - exact).abs() <= 1e-14, "degree {degree}: x^{a} y^{b}: {got} vs {exact}");
                }
            }
        }
    }

    #[test]
    fn one_dimensional_nodes() {
        let (x, w) = gauss_legendre(2);
        let s = 0.5 / 3f64.sqrt();
        assert!((x[0] - (0.5 + s)).abs() < 1e-15 || (x[0] - (0.5 - s)).abs() < 1e-15);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }
}
