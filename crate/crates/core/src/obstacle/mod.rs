//! Radial obstacle problems for minimisers.
//!
//! Newtonian case: find `psi >= C0` with `-Delta psi + F >= 0` and
//! complementarity, where `F = Delta W_a * rho`; the density is recovered as
//! `rho = -Delta psi + F` on the contact set. The fractional case with
//! quadratic confinement lives in [`fractional`].

pub mod fractional;
mod lcp;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{Attraction, Kernel};
use crate::measures::{RadialDensity, RadialGrid};
use crate::quadrature::{sphere_area, spherical_mean, GaussLegendre};

pub use fractional::{
    frac_quadratic_minimizer, frac_quadratic_minimizer_with, FracLevel, FracOptions, FracReport, RieszOperator,
    RieszPotential,
};
pub use lcp::{brennan_schwartz, penalized_solve, psor_solve, psor_solve_from, RadialLaplacian};

/// Discrete radial obstacle problem on `[0, L]`.
#[derive(Debug, Clone)]
pub struct ObstacleProblem {
    pub dim: usize,
    pub order: f64,
    pub grid: RadialGrid,
    /// Source term at every node.
    pub f: Vec<f64>,
    /// Obstacle level.
    pub c0: f64,
    /// Dirichlet value at `r = L`.
    pub boundary: f64,
}

impl ObstacleProblem {
    pub fn new(dim: usize, grid: RadialGrid, f: Vec<f64>, c0: f64, boundary: f64) -> Result<Self> {
        if f.len() != grid.len() {
            return Err(Error::InvalidMeasure(format!(
                "source has {} values on a grid of {} nodes",
                f.len(),
                grid.len()
            )));
        }
        if f.iter().any(|x| !x.is_finite()) || !c0.is_finite() || !boundary.is_finite() {
            return Err(Error::InvalidMeasure("obstacle data must be finite".into()));
        }
        Ok(Self {
            dim,
            order: 1.0,
            grid,
            f,
            c0,
            boundary,
        })
    }

    pub fn with_level(&self, c0: f64) -> Self {
        Self { c0, ..self.clone() }
    }
}

/// Residuals of a discrete solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Residuals {
    /// `max_i |min(-Delta_h psi + F, psi - C0)|`
    pub complementarity: f64,
    /// `max |-Delta_h psi + F|` off the contact set.
    pub pde: f64,
    /// `|mass - target|` (zero when no target was imposed).
    pub mass: f64,
}

/// Solution of an obstacle problem.
#[derive(Debug, Clone)]
pub struct ObstacleSolution {
    pub dim: usize,
    pub order: f64,
    pub grid: RadialGrid,
    pub psi: Vec<f64>,
    pub rho: Vec<f64>,
    pub contact: Vec<bool>,
    /// Source term; NaN where it is not defined (fractional case).
    pub f: Vec<f64>,
    pub c0: f64,
    pub residuals: Residuals,
    pub iterations: usize,
}

impl ObstacleSolution {
    pub fn density(&self) -> Result<RadialDensity> {
        RadialDensity::new(self.dim, self.grid.clone(), self.rho.iter().map(|v| v.max(0.0)).collect())
    }

    pub fn mass(&self) -> f64 {
        self.rho
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.grid.shell_volume(self.dim, i))
            .sum()
    }

    /// Index of the outermost contact node.
    pub fn last_contact(&self) -> Option<usize> {
        self.contact.iter().rposition(|&c| c)
    }

    /// Midpoint between the last contact node and the next node.
    pub fn contact_radius(&self) -> f64 {
        match self.last_contact() {
            Some(i) => self.grid.r(i) + 0.5 * self.grid.h,
            None => 0.0,
        }
    }

    /// CSV with columns `r,psi,rho,contact,F`.
    pub fn write_csv<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["r", "psi", "rho", "contact", "F"])?;
        for i in 0..self.grid.len() {
            w.write_record([
                format!("{:e}", self.grid.r(i)),
                format!("{:e}", self.psi[i]),
                format!("{:e}", self.rho[i]),
                (self.contact[i] as u8).to_string(),
                format!("{:e}", self.f[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linear map from a radial density on a grid to `(g * rho)(r)` for a radial
/// kernel `g`, evaluated on a coarse set of target radii and interpolated.
#[derive(Debug, Clone)]
pub struct RadialConvolution {
    dim: usize,
    grid: RadialGrid,
    targets: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl RadialConvolution {
    /// Largest number of target radii; fine nodes between targets are interpolated.
    pub const MAX_TARGETS: usize = 401;

    /// `g` must be locally integrable in R^N.
    pub fn new<G: Fn(f64) -> f64 + Sync>(dim: usize, grid: &RadialGrid, g: G, targets: Vec<f64>) -> Self {
        let gl = GaussLegendre::new(4);
        let ang = GaussLegendre::new(20);
        let sigma = sphere_area(dim);
        let m = grid.m;
        let h = grid.h;
        let rows = targets
            .par_iter()
            .map(|&r| {
                let mut row = vec![0.0; m + 1];
                for cell in 0..m {
                    let a = grid.r(cell);
                    for (s, w) in gl.mapped(a, a + h) {
                        // mean of g(|x - y|) over |y| = s, |x| = r
                        let mean = spherical_mean(&g, r, s, dim, &[], &ang);
                        let base = w * sigma * s.powi(dim as i32 - 1) * mean;
                        let t = (s - a) / h;
                        row[cell] += base * (1.0 - t);
                        row[cell + 1] += base * t;
                    }
                }
                row
            })
            .collect();
        Self {
            dim,
            grid: grid.clone(),
            targets,
            rows,
        }
    }

    fn default_targets(grid: &RadialGrid) -> Vec<f64> {
        let stride = grid.len().div_ceil(Self::MAX_TARGETS).max(1);
        let mut t: Vec<f64> = (0..grid.len()).step_by(stride).map(|i| grid.r(i)).collect();
        if *t.last().unwrap() < grid.length() {
            t.push(grid.length());
        }
        t
    }

    /// Convolution values at the targets.
    pub fn apply_targets(&self, rho: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().zip(rho).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Convolution at every grid node (linear interpolation between targets).
    pub fn apply(&self, rho: &[f64]) -> Vec<f64> {
        let vals = self.apply_targets(rho);
        (0..self.grid.len())
            .map(|i| {
                let r = self.grid.r(i);
                let k = self.targets.partition_point(|&t| t <= r).clamp(1, self.targets.len() - 1);
                let (t0, t1) = (self.targets[k - 1], self.targets[k]);
                let w = ((r - t0) / (t1 - t0)).clamp(0.0, 1.0);
                (1.0 - w) * vals[k - 1] + w * vals[k]
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// `F = Delta W_a * rho` and `(W_a * rho)(L)` for a kernel on a grid.
#[derive(Debug, Clone)]
pub struct AttractionOperator {
    kind: AttractionKind,
}

#[derive(Debug, Clone)]
enum AttractionKind {
    /// `W_a = k |x|^2`: `F = 2 N k mass`, `(W_a * rho)(L) = k (L^2 mass + m2)`.
    Quadratic { k: f64, dim: usize, length: f64 },
    General { lap: RadialConvolution, wa_at_l: RadialConvolution },
}

impl AttractionOperator {
    pub fn new(k: &Kernel, grid: &RadialGrid) -> Result<Self> {
        let quadratic = if k.cutoff().is_some() {
            None
        } else {
            match k.attraction() {
                Attraction::Quadratic { k } => Some(k),
                Attraction::Power { q, coeff } if q == 2.0 => Some(0.5 * coeff),
                Attraction::None => Some(0.0),
                _ => None,
            }
        };
        let kind = match quadratic {
            Some(kq) => AttractionKind::Quadratic {
                k: kq,
                dim: k.dim(),
                length: grid.length(),
            },
            None => {
                if let Attraction::Power { q, .. } = k.attraction() {
                    if q < 1.0 {
                        return Err(Error::OutOfScope(format!(
                            "radial convolution of |x|^(q-2) needs q >= 1 (got {q})"
                        )));
                    }
                }
                let kc = k.clone();
                let lap = RadialConvolution::new(
                    k.dim(),
                    grid,
                    move |t| kc.lap_wa(t).unwrap_or(0.0),
                    RadialConvolution::default_targets(grid),
                );
                let kc = k.clone();
                let wa_at_l = RadialConvolution::new(k.dim(), grid, move |t| kc.wa(t), vec![grid.length()]);
                AttractionKind::General { lap, wa_at_l }
            }
        };
        Ok(Self { kind })
    }

    pub fn source(&self, d: &RadialDensity) -> Vec<f64> {
        match &self.kind {
            AttractionKind::Quadratic { k, dim, .. } => {
                vec![2.0 * *dim as f64 * k * d.mass(); d.values.len()]
            }
            AttractionKind::General { lap, .. } => lap.apply(&d.values),
        }
    }

    pub fn attraction_at_boundary(&self, d: &RadialDensity) -> f64 {
        match &self.kind {
            AttractionKind::Quadratic { k, length, .. } => k * (length * length * d.mass() + d.second_moment()),
            AttractionKind::General { wa_at_l, .. } => wa_at_l.apply_targets(&d.values)[0],
        }
    }
}

/// `F = Delta W_a * rho` on the grid of `d`.
pub fn assemble_f(d: &RadialDensity, k: &Kernel) -> Result<Vec<f64>> {
    if d.dim != k.dim() {
        return Err(Error::InvalidKernel("kernel and density dimensions differ".into()));
    }
    Ok(AttractionOperator::new(k, &d.grid)?.source(d))
}

/// Exact exterior potential at `r = L` for a radial density supported inside
/// the grid: Newton's theorem for the repulsion plus `W_a * rho`.
pub fn boundary_value(k: &Kernel, op: &AttractionOperator, d: &RadialDensity) -> f64 {
    d.mass() * k.v(d.grid.length()) + op.attraction_at_boundary(d) + k.offset() * d.mass()
}

/// Residuals and density of a discrete potential.
pub(crate) fn finish(p: &ObstacleProblem, psi: Vec<f64>, iterations: usize, target: Option<f64>) -> ObstacleSolution {
    let lap = RadialLaplacian::new(p.dim, &p.grid);
    let scale = 1.0 + p.c0.abs();
    let m = p.grid.m;
    let mut rho = vec![0.0; m + 1];
    let mut contact = vec![false; m + 1];
    let mut res = Residuals::default();
    for i in 0..m {
        let r = lap.apply(&psi, i) + p.f[i];
        let gap = psi[i] - p.c0;
        res.complementarity = res.complementarity.max(r.min(gap).abs());
        contact[i] = gap <= 1e-12 * scale;
        if contact[i] {
            rho[i] = r;
        } else {
            res.pde = res.pde.max(r.abs());
        }
    }
    let mut sol = ObstacleSolution {
        dim: p.dim,
        order: 1.0,
        grid: p.grid.clone(),
        psi,
        rho,
        contact,
        f: p.f.clone(),
        c0: p.c0,
        residuals: res,
        iterations,
    };
    if let Some(t) = target {
        sol.residuals.mass = (sol.mass() - t).abs();
    }
    sol
}

/// `rho = -Delta_h psi + F` on the contact set, zero elsewhere; errors when the
/// mass misses `target` by more than 1 %.
pub fn extract_density(sol: &ObstacleSolution, target: f64) -> Result<RadialDensity> {
    let mass = sol.mass();
    if (mass - target).abs() > 0.01 * target.abs() {
        return Err(Error::MassMismatch {
            got: mass,
            expected: target,
        });
    }
    sol.density()
}

/// Direct solve (Brennan–Schwartz) followed by PSOR polishing.
pub fn solve(p: &ObstacleProblem) -> Result<ObstacleSolution> {
    let psi = brennan_schwartz(p);
    psor_solve_from(p, psi)
}

fn mass_at(p: &ObstacleProblem) -> f64 {
    finish(p, brennan_schwartz(p), 0, None).mass()
}

/// Obstacle level giving mass `target` for fixed `F` and boundary value, by
/// bisection; the mass is checked to be monotone along the way.
pub fn level_for_mass(p: &ObstacleProblem, target: f64) -> Result<f64> {
    let free = lcp::free_solution(p);
    let mut lo = free.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = p.boundary;
    let span = (hi - lo).abs().max(1e-12);
    lo -= 1e-9 * span;
    let mut m_lo = mass_at(&p.with_level(lo));
    let mut m_hi = mass_at(&p.with_level(hi));
    if m_lo > m_hi {
        return Err(Error::MassNotMonotone {
            c_lo: lo,
            m_lo,
            c_hi: hi,
            m_hi,
        });
    }
    if !(target >= m_lo && target <= m_hi) {
        return Err(Error::GridTooSmall {
            max_radius: f64::NAN,
            grid_end: p.grid.length(),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let m = mass_at(&p.with_level(mid));
        // roundoff in the extracted mass is far below this slack
        let slack = 1e-9 * (1.0 + m_hi.abs());
        if m < m_lo - slack || m > m_hi + slack {
            return Err(Error::MassNotMonotone {
                c_lo: lo,
                m_lo,
                c_hi: hi,
                m_hi,
            });
        }
        if m < target {
            lo = mid;
            m_lo = m;
        } else {
            hi = mid;
            m_hi = m;
        }
        if (hi - lo) <= 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    // interpolate inside the final bracket (mass is piecewise linear in C0)
    let c = if m_hi > m_lo {
        lo + (target - m_lo) / (m_hi - m_lo) * (hi - lo)
    } else {
        0.5 * (lo + hi)
    };
    Ok(c)
}

/// Options for [`self_consistent_minimizer`].
#[derive(Debug, Clone)]
pub struct SelfConsistentOptions {
    /// Relaxation `rho <- (1 - theta) rho + theta rho_new`.
    pub theta: f64,
    pub tol: f64,
    pub max_outer: usize,
    /// Support radius of the unit-mass ball used as the first iterate.
    pub initial_radius: Option<f64>,
}

impl Default for SelfConsistentOptions {
    fn default() -> Self {
        Self {
            theta: 0.5,
            tol: 1e-6,
            max_outer: 500,
            initial_radius: None,
        }
    }
}

/// Unit-mass minimiser for a Newtonian kernel: outer fixed point on
/// `F = Delta W_a * rho`, with the obstacle level set by mass bisection.
pub fn self_consistent_minimizer(k: &Kernel, grid: &RadialGrid) -> Result<ObstacleSolution> {
    self_consistent_minimizer_with(k, grid, &SelfConsistentOptions::default())
}

pub fn self_consistent_minimizer_with(
    k: &Kernel,
    grid: &RadialGrid,
    opts: &SelfConsistentOptions,
) -> Result<ObstacleSolution> {
    if !k.is_newtonian() {
        return Err(Error::OutOfScope("the local obstacle solver needs s = 1".into()));
    }
    match k.attraction() {
        Attraction::Quadratic { .. } => {}
        Attraction::Power { q, .. } if q >= 1.0 => {}
        a => {
            return Err(Error::OutOfScope(format!(
                "self-consistent solver needs quadratic or power (q >= 1) attraction, got {a:?}"
            )))
        }
    }
    let dim = k.dim();
    let op = AttractionOperator::new(k, grid)?;
    let r0 = opts.initial_radius.unwrap_or(0.25 * grid.length());
    let mut rho = RadialDensity::ball(dim, grid.clone(), r0, 1.0)?;
    let mut last = None;
    for outer in 0..opts.max_outer {
        let f = op.source(&rho);
        let boundary = boundary_value(k, &op, &rho);
        let base = ObstacleProblem::new(dim, grid.clone(), f, boundary, boundary)?;
        let c0 = level_for_mass(&base, 1.0)?;
        let mut sol = solve(&base.with_level(c0))?;
        sol.residuals.mass = (sol.mass() - 1.0).abs();
        let new = sol.density()?;
        let diff = new.l1_distance(&rho)?;
        let theta = if outer == 0 { 1.0 } else { opts.theta };
        let values = rho
            .values
            .iter()
            .zip(&new.values)
            .map(|(a, b)| (1.0 - theta) * a + theta * b)
            .collect();
        rho = RadialDensity::new(dim, grid.clone(), values)?;
        sol.iterations = outer + 1;
        if diff < opts.tol {
            // level consistent with the final density
            let boundary = boundary_value(k, &op, &new);
            let shift = boundary - sol.psi[grid.m];
            sol.psi.iter_mut().for_each(|v| *v += shift);
            sol.c0 += shift;
            return Ok(sol);
        }
        last = Some(diff);
    }
    Err(Error::NotConverged {
        iterations: opts.max_outer,
        residual: last.unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r_m() -> f64 {
        (3.0 / (4.0 * std::f64::consts::PI)).powf(1.0 / 3.0)
    }

    #[test]
    fn quadratic_source_is_constant() {
        let g = RadialGrid::new(0.01, 2.0).unwrap();
        let d = RadialDensity::ball(3, g, 0.6, 1.0).unwrap();
        let k = Kernel::newtonian_quadratic(3, 1.0 / 6.0).unwrap();
        let f = assemble_f(&d, &k).unwrap();
        let m = d.mass();
        assert!(f.iter().all(|v| (v - m).abs() < 1e-12));
        let zero = RadialDensity::new(3, d.grid.clone(), vec![0.0; d.values.len()]).unwrap();
        assert!(assemble_f(&zero, &k).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn quartic_source_matches_moment_formula() {
        // Delta(|x|^4/4) = (N + 2)|x|^2, so F(x) = (N + 2)(|x|^2 m0 + m2)
        let g = RadialGrid::new(0.01, 2.0).unwrap();
        let d = RadialDensity::ball(3, g, 0.7, 1.0).unwrap();
        let k = Kernel::new(3, 1.0, Attraction::Power { q: 4.0, coeff: 1.0 }, None).unwrap();
        let f = assemble_f(&d, &k).unwrap();
        let (m0, m2) = (d.mass(), d.second_moment());
        for i in (0..d.values.len()).step_by(37) {
            let r = d.grid.r(i);
            let exact = 5.0 * (r * r * m0 + m2);
            assert!((f[i] - exact).abs() < 1e-3 * exact.max(1.0), "{r}: {} vs {exact}", f[i]);
        }
    }

    #[test]
    fn ball_benchmark_small_grid() {
        let k = Kernel::newtonian_quadratic(3, 1.0 / 6.0).unwrap();
        let g = RadialGrid::new(0.01, 2.0).unwrap();
        let sol = self_consistent_minimizer(&k, &g).unwrap();
        assert!((sol.contact_radius() / r_m() - 1.0).abs() < 0.02);
        assert!((sol.c0 - 0.6 * r_m() * r_m()).abs() < 5e-3, "{}", sol.c0);
        assert!(sol.residuals.complementarity < 1e-8, "{:?}", sol.residuals);
        assert!((sol.mass() - 1.0).abs() < 1e-9);
    }
}
