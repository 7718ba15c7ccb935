//! Quadrature building blocks shared by the kernel, obstacle and verification
//! modules: Gauss–Legendre rules, adaptive Gauss–Kronrod, hyperspherical
//! product rules, and spherical means of radial profiles about off-centre
//! points.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Surface area of the unit sphere S^{N-1} in R^N.
pub fn sphere_area(dim: usize) -> f64 {
    let half = dim as f64 / 2.0;
    2.0 * PI.powf(half) / gamma(half)
}

/// Volume of the ball of radius `r` in R^N.
pub fn ball_volume(dim: usize, r: f64) -> f64 {
    sphere_area(dim) * r.powi(dim as i32) / dim as f64
}

/// Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Integrate `f` over `[a, b]`.
    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, w * half))
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Intervals are bisected (deterministically, depth first) until the local
/// Kronrod–Gauss difference falls under the tolerance share of the interval.
pub fn adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (whole, err) = gk15(&mut f, a, b);
    let tol = abs_tol.max(rel_tol * whole.abs());
    if err <= tol {
        return Ok(whole);
    }
    let mut total = 0.0;
    let mut stack = vec![(a, b, 0u32)];
    let width = (b - a).abs();
    let mut evaluations = 0usize;
    while let Some((lo, hi, depth)) = stack.pop() {
        let (val, e) = gk15(&mut f, lo, hi);
        evaluations += 15;
        let share = tol * ((hi - lo).abs() / width).max(1e-3);
        if e <= share || depth >= 40 {
            if !val.is_finite() {
                return Err(Error::Quadrature(format!(
                    "non-finite integrand on [{lo}, {hi}]"
                )));
            }
            total += val;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
        if evaluations > 20_000_000 {
            return Err(Error::Quadrature("evaluation budget exhausted".into()));
        }
    }
    Ok(total)
}

/// Adaptive integration over consecutive pieces `points[0]..points[1]..`.
pub fn adaptive_pieces<F: FnMut(f64) -> f64>(
    mut f: F,
    points: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let pieces = points.len().saturating_sub(1).max(1) as f64;
    for w in points.windows(2) {
        if w[1] > w[0] {
            total += adaptive(&mut f, w[0], w[1], abs_tol / pieces, rel_tol)?;
        }
    }
    Ok(total)
}

/// Normalised weight of the polar angle on S^{N-1}: the density of the angle
/// between a uniform direction and a fixed axis is `sin^{N-2}(phi) / Z_N`.
pub fn polar_angle_norm(dim: usize) -> f64 {
    // Z_N = sqrt(pi) Gamma((N-1)/2) / Gamma(N/2)
    PI.sqrt() * gamma((dim as f64 - 1.0) / 2.0) / gamma(dim as f64 / 2.0)
}

/// Mean of a radial profile `f(|y|)` over the sphere `|y - x| = rho`, where
/// `|x| = r0`.
///
/// `breakpoints` are radii where `f` is not smooth; the polar-angle integral is
/// split wherever the sphere crosses one of them.
pub fn spherical_mean<F: Fn(f64) -> f64>(
    f: &F,
    r0: f64,
    rho: f64,
    dim: usize,
    breakpoints: &[f64],
    rule: &GaussLegendre,
) -> f64 {
    if r0 == 0.0 || rho == 0.0 {
        return f(r0.max(rho));
    }
    let mut cuts: Vec<f64> = Vec::with_capacity(breakpoints.len() + 2);
    cuts.push(0.0);
    let lo = (r0 - rho).abs();
    let hi = r0 + rho;
    for &b in breakpoints {
        if b > lo && b < hi {
            let c = ((r0 * r0 + rho * rho - b * b) / (2.0 * r0 * rho)).clamp(-1.0, 1.0);
            cuts.push(c.acos());
        }
    }
    cuts.push(PI);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let expo = dim as i32 - 2;
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        acc += rule.integrate(w[0], w[1], |phi| {
            let rr = (r0 * r0 + rho * rho - 2.0 * r0 * rho * phi.cos()).max(0.0).sqrt();
            f(rr) * phi.sin().powi(expo)
        });
    }
    acc / polar_angle_norm(dim)
}

/// Product rule for the uniform probability measure on S^{N-1}.
#[derive(Debug, Clone)]
pub struct SphereRule {
    pub dim: usize,
    /// Flattened unit directions, `dim` entries each.
    pub directions: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SphereRule {
    /// `n` Gauss nodes per polar angle and `2n` trapezoid nodes for the azimuth.
    pub fn new(dim: usize, n: usize) -> Self {
        assert!(dim >= 2);
        let gl = GaussLegendre::new(n);
        let n_az = 2 * n;
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        let mut weights = Vec::new();
        // azimuthal circle
        for k in 0..n_az {
            let t = 2.0 * PI * (k as f64 + 0.5) / n_az as f64;
            dirs.push(vec![t.cos(), t.sin()]);
            weights.push(1.0 / n_az as f64);
        }
        // lift S^{m-1} -> S^m with polar angle weighted by sin^{m-1}
        for m in 2..dim {
            let polar: Vec<(f64, f64)> = gl
                .mapped(0.0, PI)
                .map(|(phi, w)| (phi, w * phi.sin().powi(m as i32 - 1)))
                .collect();
            let norm: f64 = polar.iter().map(|p| p.1).sum();
            let mut nd = Vec::new();
            let mut nw = Vec::new();
            for &(phi, w) in &polar {
                let wphi = w / norm;
                for (d, wd) in dirs.iter().zip(&weights) {
                    let mut v = Vec::with_capacity(m + 1);
                    v.push(phi.cos());
                    v.extend(d.iter().map(|c| c * phi.sin()));
                    nd.push(v);
                    nw.push(wd * wphi);
                }
            }
            dirs = nd;
            weights = nw;
        }
        let directions = dirs.into_iter().flatten().collect();
        Self {
            dim,
            directions,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn direction(&self, k: usize) -> &[f64] {
        &self.directions[k * self.dim..(k + 1) * self.dim]
    }
}

/// Deterministic average of `u` over the ball `B_r(x)`: Gauss–Legendre in the
/// radius (weighted by `rho^{N-1}`) times a hyperspherical product rule.
pub fn ball_average<F: Fn(&[f64]) -> f64>(
    u: &F,
    x: &[f64],
    r: f64,
    radial: &GaussLegendre,
    sphere: &SphereRule,
) -> f64 {
    let dim = x.len();
    let mut y = vec![0.0; dim];
    let mut acc = 0.0;
    for (rho, w) in radial.mapped(0.0, r) {
        let wr = w * dim as f64 * rho.powi(dim as i32 - 1) / r.powi(dim as i32);
        let mut shell = 0.0;
        for k in 0..sphere.len() {
            let d = sphere.direction(k);
            for i in 0..dim {
                y[i] = x[i] + rho * d[i];
            }
            shell += sphere.weights[k] * u(&y);
        }
        acc += wr * shell;
    }
    acc
}
