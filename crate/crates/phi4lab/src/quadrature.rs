//! Gauss rules and singular-corner product rules used by the torus quadratures.

use nalgebra::{DMatrix, SymmetricEigen};
use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss–Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    (
        x.iter().map(|&t| c + h * t).collect(),
        w.iter().map(|&wi| h * wi).collect(),
    )
}

/// Gauss–Laguerre nodes and weights for the weight e^{-x} on [0, ∞) (Golub–Welsch).
pub fn gauss_laguerre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = (2 * i + 1) as f64;
        if i + 1 < n {
            j[(i, i + 1)] = (i + 1) as f64;
            j[(i + 1, i)] = (i + 1) as f64;
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Composite Gauss–Legendre integral of `f` over [a, b].
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut acc = crate::scalar::CompensatedSum::new();
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            acc.add(0.5 * h * wi * f(lo + 0.5 * h * (xi + 1.0)));
        }
    }
    acc.value()
}

/// Geometrically graded Gauss rule on [0, 1] clustered at 0.
pub fn graded_unit(order: usize, levels: usize, ratio: f64) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ws = Vec::new();
    let mut hi = 1.0;
    for l in 0..=levels {
        let lo = if l == levels { 0.0 } else { hi * ratio };
        let (x, w) = gauss_legendre_on(order, lo, hi);
        xs.extend(x);
        ws.extend(w);
        hi = lo;
    }
    (xs, ws)
}

/// Product rule on a planar domain: nodes with weights.
#[derive(Clone, Debug)]
pub struct Rule2 {
    pub nodes: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl Rule2 {
    pub fn integrate<F: Fn([f64; 2]) -> f64>(&self, f: F) -> f64 {
        crate::scalar::ksum(self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Rule for the triangle {0 ≤ y ≤ x ≤ a} with a point singularity at the origin.
///
/// Duffy map x = a u, y = a u s with the u-direction geometrically graded.
pub fn duffy_triangle(a: f64, order: usize, levels: usize) -> Rule2 {
    let (us, uw) = graded_unit(order, levels, 0.2);
    let (ss, sw) = gauss_legendre_on(order, 0.0, 1.0);
    let mut nodes = Vec::with_capacity(us.len() * ss.len());
    let mut weights = Vec::with_capacity(us.len() * ss.len());
    for (&u, &wu) in us.iter().zip(&uw) {
        for (&s, &ws) in ss.iter().zip(&sw) {
            nodes.push([a * u, a * u * s]);
            weights.push(a * a * u * wu * ws);
        }
    }
    Rule2 { nodes, weights }
}

/// Rule for the square [-a, a]² with a point singularity at the origin, built
/// from the eight images of [`duffy_triangle`].
pub fn duffy_square(a: f64, order: usize, levels: usize) -> Rule2 {
    let t = duffy_triangle(a, order, levels);
    let mut nodes = Vec::with_capacity(8 * t.len());
    let mut weights = Vec::with_capacity(8 * t.len());
    for (p, &w) in t.nodes.iter().zip(&t.weights) {
        for &(sx, sy) in &[(1.0, 1.0), (-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
            nodes.push([sx * p[0], sy * p[1]]);
            weights.push(w);
            nodes.push([sx * p[1], sy * p[0]]);
            weights.push(w);
        }
    }
    Rule2 { nodes, weights }
}
