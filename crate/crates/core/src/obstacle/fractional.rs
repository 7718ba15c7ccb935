//! Fractional obstacle problem with quadratic confinement.
//!
//! With `h = V_s * rho` the minimiser satisfies `rho >= 0`,
//! `h >= C - K |x|^2` and complementarity. The unknown is the density itself
//! (hat basis on the radial grid) and `h = G rho` is a dense Riesz-potential
//! collocation matrix, so the discrete problem is a linear complementarity
//! problem in `rho`, solved by a primal–dual active-set iteration. Solutions
//! for different levels `C` are related by `rho_C(x) = C^{1-s} rho_1(x / sqrt C)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::{ObstacleSolution, Residuals};
use crate::error::{Error, Result};
use crate::kernels::{riesz_constant, Attraction, Kernel, RadialProfile, Tail};
use crate::measures::RadialGrid;
use crate::quadrature::{adaptive, polar_angle_norm, sphere_area, GaussLegendre};

fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..64 {
        if (a - b).abs() <= 1e-15 * a {
            break;
        }
        let next = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = next;
    }
    a
}

/// `c_{N,s}` times the mean of `|x - y|^{2s-N}` over `|y| = t`, `|x| = r`.
pub fn riesz_sphere_mean(dim: usize, s: f64, r: f64, t: f64) -> f64 {
    let c = riesz_constant(dim, s);
    let p = dim as f64 - 2.0 * s;
    if r == 0.0 || t == 0.0 {
        return c * r.max(t).powf(-p);
    }
    if dim == 2 && p == 1.0 {
        // (1/pi) int_0^pi (r^2 + t^2 - 2 r t cos phi)^{-1/2} dphi = 1 / AGM(r + t, |r - t|)
        return c / agm(r + t, (r - t).abs());
    }
    if dim == 3 {
        let (a, b) = (r + t, (r - t).abs());
        return if (p - 2.0).abs() < 1e-14 {
            c * (a / b).ln() / (2.0 * r * t)
        } else {
            c * (a.powf(2.0 - p) - b.powf(2.0 - p)) / (2.0 * r * t * (2.0 - p))
        };
    }
    let expo = dim as i32 - 2;
    let f = |phi: f64| (r * r + t * t - 2.0 * r * t * phi.cos()).max(1e-300).powf(-0.5 * p) * phi.sin().powi(expo);
    let v = adaptive(f, 0.0, std::f64::consts::PI, 1e-14, 1e-11).unwrap_or(f64::NAN);
    c * v / polar_angle_norm(dim)
}

/// Dense map from nodal densities (hat basis) to `V_s * rho` at given radii.
#[derive(Debug, Clone)]
pub struct RieszOperator {
    pub dim: usize,
    pub order: f64,
    pub grid: RadialGrid,
}

impl RieszOperator {
    pub fn new(dim: usize, order: f64, grid: &RadialGrid) -> Self {
        Self {
            dim,
            order,
            grid: grid.clone(),
        }
    }

    /// Row of weights `int hat_j(t) t^{N-1} sigma Kbar(r, t) dt` for one target.
    pub fn row(&self, r: f64) -> Vec<f64> {
        let gl = GaussLegendre::new(8);
        let grid = &self.grid;
        let (m, h) = (grid.m, grid.h);
        let sigma = sphere_area(self.dim);
        let n1 = self.dim as i32 - 1;
        // grading stops well above the rounding level of r so that t != r
        let levels = ((h / (1e3 * f64::EPSILON * r.max(h))).log2().floor() as i32).clamp(1, 60);
        let mut row = vec![0.0; m + 1];
        let add = |row: &mut [f64], cell: usize, a: f64, b: f64| {
            let lo = grid.r(cell);
            for (t, w) in gl.mapped(a, b) {
                let base = w * sigma * t.powi(n1) * riesz_sphere_mean(self.dim, self.order, r, t);
                let u = (t - lo) / h;
                row[cell] += base * (1.0 - u);
                row[cell + 1] += base * u;
            }
        };
        for cell in 0..m {
            let (a, b) = (grid.r(cell), grid.r(cell + 1));
            // graded pieces towards a singular endpoint
            let singular_at = if (r - a).abs() < 1e-12 * h || (cell == 0 && r < 0.5 * h) {
                Some(a)
            } else if (r - b).abs() < 1e-12 * h {
                Some(b)
            } else if r > a && r < b {
                None
            } else {
                add(&mut row, cell, a, b);
                continue;
            };
            match singular_at {
                Some(e) => {
                    let dir = if e == a { 1.0 } else { -1.0 };
                    let width = b - a;
                    for k in 0..levels {
                        let near = e + dir * width * 0.5f64.powi(k + 1);
                        let far = e + dir * width * 0.5f64.powi(k);
                        let (x, y) = if dir > 0.0 { (near, far) } else { (far, near) };
                        add(&mut row, cell, x, y);
                    }
                }
                None => {
                    // target strictly inside the cell: grade towards r from both sides
                    for (lo, hi) in [(a, r), (r, b)] {
                        let width = hi - lo;
                        for k in 0..levels {
                            let (x, y) = if lo == a {
                                (r - width * 0.5f64.powi(k), r - width * 0.5f64.powi(k + 1))
                            } else {
                                (r + width * 0.5f64.powi(k + 1), r + width * 0.5f64.powi(k))
                            };
                            add(&mut row, cell, x, y);
                        }
                    }
                }
            }
        }
        row
    }

    pub fn matrix_at(&self, targets: &[f64]) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = targets.par_iter().map(|&r| self.row(r)).collect();
        DMatrix::from_fn(targets.len(), self.grid.len(), |i, j| rows[i][j])
    }

    /// Collocation matrix at the grid nodes.
    pub fn matrix(&self) -> DMatrix<f64> {
        self.matrix_at(&self.grid.radii())
    }

    /// Mass weights of the hat basis: `mass = sum_j w_j rho_j`.
    pub fn mass_weights(&self) -> Vec<f64> {
        let g = &self.grid;
        let gl = GaussLegendre::new(8);
        let sigma = sphere_area(self.dim);
        let n1 = self.dim as i32 - 1;
        let mut w = vec![0.0; g.len()];
        for cell in 0..g.m {
            let lo = g.r(cell);
            for (t, wt) in gl.mapped(lo, lo + g.h) {
                let u = (t - lo) / g.h;
                let base = wt * sigma * t.powi(n1);
                w[cell] += base * (1.0 - u);
                w[cell + 1] += base * u;
            }
        }
        w
    }
}

/// Discrete fractional LCP: `rho >= 0`, `G rho - g >= 0`, complementarity.
#[derive(Debug, Clone)]
pub struct LcpResult {
    pub rho: Vec<f64>,
    /// `G rho - g`
    pub slack: Vec<f64>,
    pub iterations: usize,
}

/// Primal–dual active-set iteration; the inactive set starts where `g > 0`.
pub fn active_set_lcp(g_mat: &DMatrix<f64>, g: &[f64]) -> Result<LcpResult> {
    let n = g.len();
    let mut inactive: Vec<bool> = g.iter().map(|&v| v > 0.0).collect();
    let mut seen: Vec<Vec<bool>> = Vec::new();
    for it in 1..=200 {
        let idx: Vec<usize> = (0..n).filter(|&i| inactive[i]).collect();
        let mut rho = vec![0.0; n];
        if !idx.is_empty() {
            let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| g_mat[(idx[a], idx[b])]);
            let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&i| g[i]));
            let sol = sub
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Quadrature("singular Riesz collocation block".into()))?;
            for (a, &i) in idx.iter().enumerate() {
                rho[i] = sol[a];
            }
        }
        let h = g_mat * DVector::from_vec(rho.clone());
        let slack: Vec<f64> = (0..n).map(|i| h[i] - g[i]).collect();
        let next: Vec<bool> = (0..n)
            .map(|i| if inactive[i] { rho[i] > 0.0 } else { slack[i] < 0.0 })
            .collect();
        if next == inactive {
            return Ok(LcpResult {
                rho,
                slack,
                iterations: it,
            });
        }
        if seen.contains(&next) {
            // cycling: keep the nodes with positive density only
            let fixed: Vec<bool> = (0..n).map(|i| inactive[i] && rho[i] > 0.0).collect();
            if fixed == inactive {
                return Ok(LcpResult {
                    rho,
                    slack,
                    iterations: it,
                });
            }
            inactive = fixed;
            continue;
        }
        seen.push(inactive.clone());
        inactive = next;
    }
    Err(Error::NotConverged {
        iterations: 200,
        residual: f64::NAN,
    })
}

/// Options for [`frac_quadratic_minimizer`].
#[derive(Debug, Clone)]
pub struct FracOptions {
    /// Obstacle levels at which the mass law is sampled; must contain 1.
    pub levels: Vec<f64>,
}

impl Default for FracOptions {
    fn default() -> Self {
        Self {
            levels: vec![0.5, 1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FracLevel {
    pub level: f64,
    pub mass: f64,
    pub support_radius: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct FracReport {
    /// Unit-mass minimiser (total potential in `psi`).
    pub solution: ObstacleSolution,
    pub levels: Vec<FracLevel>,
    /// Least-squares slope of `log m(C)` against `log C`.
    pub mass_exponent: f64,
    /// `N/2 + 1 - s`
    pub predicted_exponent: f64,
    /// Level giving unit mass.
    pub unit_level: f64,
    /// `(max - min) / |mean|` of the total potential over contact nodes and
    /// interior midpoints.
    pub psi_oscillation: f64,
}

fn interp(values: &[f64], grid: &RadialGrid, r: f64) -> f64 {
    let t = r / grid.h;
    if t >= grid.m as f64 {
        return 0.0;
    }
    let i = t.floor() as usize;
    let w = t - i as f64;
    (1.0 - w) * values[i] + w * values[i + 1]
}

/// Fractional minimiser for `W = V_s + K |x|^2`: solve the LCP at each level,
/// then rescale the `C = 1` solution to unit mass.
pub fn frac_quadratic_minimizer(k: &Kernel, grid: &RadialGrid) -> Result<FracReport> {
    frac_quadratic_minimizer_with(k, grid, &FracOptions::default())
}

pub fn frac_quadratic_minimizer_with(k: &Kernel, grid: &RadialGrid, opts: &FracOptions) -> Result<FracReport> {
    let s = k.order();
    let dim = k.dim();
    let kq = match (k.attraction(), k.cutoff()) {
        (Attraction::Quadratic { k }, None) => k,
        (Attraction::Power { q, coeff }, None) if q == 2.0 => 0.5 * coeff,
        _ => {
            return Err(Error::OutOfScope(
                "fractional obstacle solver needs quadratic attraction without cutoff".into(),
            ))
        }
    };
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::OutOfScope(format!("fractional solver needs 0 < s < 1 (got {s})")));
    }
    if !opts.levels.contains(&1.0) {
        return Err(Error::Config(vec!["fractional levels must include C = 1".into()]));
    }
    let op = RieszOperator::new(dim, s, grid);
    let g_mat = op.matrix();
    let mw = op.mass_weights();
    let radii = grid.radii();
    let outer = (0.9 * grid.m as f64) as usize;

    let mut levels = Vec::new();
    let mut unit_rho = None;
    for &c in &opts.levels {
        let g: Vec<f64> = radii.iter().map(|r| c - kq * r * r).collect();
        let res = active_set_lcp(&g_mat, &g)?;
        if res.rho[outer..].iter().any(|&v| v > 0.0) {
            return Err(Error::GridTooSmall {
                max_radius: grid.r(res.rho.iter().rposition(|&v| v > 0.0).unwrap_or(0)),
                grid_end: grid.length(),
            });
        }
        let mass: f64 = res.rho.iter().zip(&mw).map(|(a, b)| a * b).sum();
        let last = res.rho.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        levels.push(FracLevel {
            level: c,
            mass,
            support_radius: grid.r(last) + 0.5 * grid.h,
            iterations: res.iterations,
        });
        if c == 1.0 {
            unit_rho = Some(res);
        }
    }
    let beta = dim as f64 / 2.0 + 1.0 - s;
    let mass_exponent = {
        let xs: Vec<f64> = levels.iter().map(|l| l.level.ln()).collect();
        let ys: Vec<f64> = levels.iter().map(|l| l.mass.ln()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            f64::NAN
        }
    };
    let one = unit_rho.expect("level 1 solved");
    let m1 = levels.iter().find(|l| l.level == 1.0).unwrap().mass;

    // oscillation of h + K r^2 at contact nodes and interior midpoints (C = 1)
    let contact: Vec<usize> = (0..grid.len()).filter(|&i| one.rho[i] > 0.0).collect();
    let mids: Vec<f64> = contact
        .windows(2)
        .filter(|w| w[1] == w[0] + 1)
        .map(|w| grid.r(w[0]) + 0.5 * grid.h)
        .collect();
    let mid_h = op.matrix_at(&mids) * DVector::from_vec(one.rho.clone());
    let mut samples: Vec<f64> = contact.iter().map(|&i| one.slack[i] + 1.0).collect();
    samples.extend(mids.iter().enumerate().map(|(a, r)| mid_h[a] + kq * r * r));

    // unit mass by the scaling law
    let c_star = m1.powf(-1.0 / beta);
    let sq = c_star.sqrt();
    let rho: Vec<f64> = radii
        .iter()
        .map(|&r| c_star.powf(1.0 - s) * interp(&one.rho, grid, r / sq))
        .collect();
    let mass: f64 = rho.iter().zip(&mw).map(|(a, b)| a * b).sum();
    let h = &g_mat * DVector::from_vec(rho.clone());
    let m2: f64 = {
        let gl = GaussLegendre::new(8);
        let sigma = sphere_area(dim);
        (0..grid.m)
            .map(|cell| {
                let lo = grid.r(cell);
                gl.integrate(lo, lo + grid.h, |t| {
                    let u = (t - lo) / grid.h;
                    sigma * t.powi(dim as i32 + 1) * ((1.0 - u) * rho[cell] + u * rho[cell + 1])
                })
            })
            .sum()
    };
    let c0 = c_star + kq * m2 * mass;
    let psi: Vec<f64> = radii
        .iter()
        .enumerate()
        .map(|(i, r)| h[i] + kq * (r * r * mass + m2))
        .collect();
    let contact_mask: Vec<bool> = rho.iter().map(|&v| v > 0.0).collect();
    let scale = c0.abs().max(1e-300);
    let mean = samples.iter().sum::<f64>() / samples.len().max(1) as f64;
    let spread = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - samples.iter().copied().fold(f64::INFINITY, f64::min);
    let psi_oscillation = c_star * spread / scale.max(c_star * mean.abs());

    let mut residuals = Residuals::default();
    for i in 0..grid.len() {
        let slack = psi[i] - c0;
        residuals.complementarity = residuals.complementarity.max(rho[i].min(slack).abs());
        if contact_mask[i] {
            residuals.pde = residuals.pde.max(slack.abs());
        }
    }
    residuals.mass = (mass - 1.0).abs();
    let solution = ObstacleSolution {
        dim,
        order: s,
        grid: grid.clone(),
        psi,
        rho,
        contact: contact_mask,
        f: vec![f64::NAN; grid.len()],
        c0,
        residuals,
        iterations: one.iterations,
    };
    Ok(FracReport {
        solution,
        levels,
        mass_exponent,
        predicted_exponent: beta,
        unit_level: c_star,
        psi_oscillation,
    })
}

/// Tabulated `h = V_s * rho` for a radial density, with the monopole tail
/// `c_{N,s} m r^{2s-N}` beyond the table.
#[derive(Debug, Clone)]
pub struct RieszPotential {
    pub dim: usize,
    pub order: f64,
    radii: Vec<f64>,
    values: Vec<f64>,
    mass: f64,
}

impl RieszPotential {
    /// Nodes of `grid` up to its end, then log-spaced to `8 L`.
    pub fn new(dim: usize, order: f64, grid: &RadialGrid, rho: &[f64]) -> Self {
        let op = RieszOperator::new(dim, order, grid);
        let mut radii = grid.radii();
        let l = grid.length();
        radii.extend((1..=48).map(|i| l * 8f64.powf(i as f64 / 48.0)));
        let values = op.matrix_at(&radii) * DVector::from_column_slice(rho);
        let mass = op.mass_weights().iter().zip(rho).map(|(a, b)| a * b).sum();
        Self {
            dim,
            order,
            radii,
            values: values.iter().copied().collect(),
            mass,
        }
    }

    pub fn from_solution(sol: &ObstacleSolution) -> Self {
        Self::new(sol.dim, sol.order, &sol.grid, &sol.rho)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    fn far(&self, r: f64) -> f64 {
        riesz_constant(self.dim, self.order) * self.mass * r.powf(2.0 * self.order - self.dim as f64)
    }
}

impl RadialProfile for RieszPotential {
    fn value(&self, r: f64) -> f64 {
        let last = *self.radii.last().unwrap();
        if r >= last {
            return self.far(r) * self.values[self.radii.len() - 1] / self.far(last);
        }
        let i = self.radii.partition_point(|&t| t <= r).max(1) - 1;
        let (a, b) = (self.radii[i], self.radii[i + 1]);
        let w = (r - a) / (b - a);
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    fn tail(&self) -> Tail {
        Tail::Power {
            start: *self.radii.last().unwrap(),
            coeff: riesz_constant(self.dim, self.order) * self.mass,
            exponent: self.dim as f64 - 2.0 * self.order,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_means_match_quadrature() {
        let ang = GaussLegendre::new(64);
        for &(dim, s, r, t) in &[(2usize, 0.5, 0.7, 0.3), (3, 0.3, 0.4, 1.1), (3, 0.5, 1.0, 0.2), (4, 0.6, 0.5, 0.9)] {
            let p = dim as f64 - 2.0 * s;
            let f = |rr: f64| rr.powf(-p);
            let m = crate::quadrature::spherical_mean(&f, r, t, dim, &[], &ang) * riesz_constant(dim, s);
            let v = riesz_sphere_mean(dim, s, r, t);
            assert!((m / v - 1.0).abs() < 1e-9, "{dim} {s}: {m} vs {v}");
        }
    }

    #[test]
    fn riesz_rows_reproduce_newton_potential_of_a_ball() {
        // N = 3, s = 1/2 is not Newtonian; use the exact mean of |x-y|^{-2} over the ball instead
        let g = RadialGrid::new(0.01, 2.0).unwrap();
        let op = RieszOperator::new(3, 0.5, &g);
        let rho: Vec<f64> = g.radii().iter().map(|&r| if r <= 1.0 { 1.0 } else { 0.0 }).collect();
        let row = op.row(0.0);
        let h0: f64 = row.iter().zip(&rho).map(|(a, b)| a * b).sum();
        // c_{3,1/2} 4 pi int_0^1 t^{-2} t^2 dt = 4 pi c
        let exact = 4.0 * std::f64::consts::PI * riesz_constant(3, 0.5) * 1.0;
        // hat interpolation smears the jump over one cell
        assert!((h0 / exact - 1.0).abs() < 0.01, "{h0} vs {exact}");
    }

    #[test]
    fn two_dimensional_half_laplacian_matches_closed_form() {
        // unit-mass minimiser is A (R^2 - r^2)^{1/2} with A = 8K/pi, R^3 = 3/(16K)
        let kq = 3.0 / 16.0;
        let k = Kernel::new(2, 0.5, Attraction::Quadratic { k: kq }, None).unwrap();
        let g = RadialGrid::new(0.02, 3.0).unwrap();
        let rep = frac_quadratic_minimizer(&k, &g).unwrap();
        let a = 8.0 * kq / std::f64::consts::PI;
        let (mut l1, mut norm) = (0.0, 0.0);
        for (i, &v) in rep.solution.rho.iter().enumerate() {
            let r = g.r(i);
            let exact = a * (1.0 - r * r).max(0.0).sqrt();
            let w = g.shell_volume(2, i);
            l1 += (v - exact).abs() * w;
            norm += exact * w;
        }
        assert!(l1 / norm < 0.005, "relative L1 error {}", l1 / norm);
        assert!((rep.mass_exponent - 1.5).abs() < 0.015, "{}", rep.mass_exponent);
        assert!(rep.psi_oscillation < 1e-3, "{}", rep.psi_oscillation);
        assert!(rep.solution.f.iter().all(|v| v.is_nan()));
    }
}
