//! Discrete radial Laplacian and complementarity solvers.

use super::{finish, ObstacleProblem, ObstacleSolution};
use crate::error::{Error, Result};
use crate::measures::RadialGrid;

/// Conservative finite-volume `-Delta` for radial functions on node-centred
/// shells. Row `i` is scaled by the shell volume `V_i / sigma`:
/// `V_i (-Delta psi)_i = lower_i psi_{i-1} + diag_i psi_i + upper_i psi_{i+1}`.
/// At the origin only the outward flux appears, which encodes `psi'(0) = 0`.
#[derive(Debug, Clone)]
pub struct RadialLaplacian {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    /// `V_i = (r_{i+1/2}^N - r_{i-1/2}^N) / N`.
    pub vol: Vec<f64>,
}

impl RadialLaplacian {
    pub fn new(dim: usize, grid: &RadialGrid) -> Self {
        let m = grid.m;
        let h = grid.h;
        let n = dim as i32;
        let face = |r: f64| r.powi(n - 1);
        let mut lower = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        let mut vol = vec![0.0; m];
        for i in 0..m {
            let r = grid.r(i);
            let (rm, rp) = (if i == 0 { 0.0 } else { r - 0.5 * h }, r + 0.5 * h);
            let (am, ap) = (if i == 0 { 0.0 } else { face(rm) / h }, face(rp) / h);
            lower[i] = -am;
            upper[i] = -ap;
            diag[i] = am + ap;
            vol[i] = (rp.powi(n) - rm.powi(n)) / dim as f64;
        }
        Self {
            lower,
            diag,
            upper,
            vol,
        }
    }

    /// `(-Delta_h psi)_i` for `i < m`.
    #[inline]
    pub fn apply(&self, psi: &[f64], i: usize) -> f64 {
        let mut acc = self.diag[i] * psi[i] + self.upper[i] * psi[i + 1];
        if i > 0 {
            acc += self.lower[i] * psi[i - 1];
        }
        acc / self.vol[i]
    }
}

/// Right-hand side `b_i = -V_i F_i` with the Dirichlet value folded into the
/// last row.
fn rhs(p: &ObstacleProblem, lap: &RadialLaplacian) -> Vec<f64> {
    let m = p.grid.m;
    let mut b: Vec<f64> = (0..m).map(|i| -lap.vol[i] * p.f[i]).collect();
    b[m - 1] -= lap.upper[m - 1] * p.boundary;
    b
}

/// Solution of `-Delta psi = -F` without obstacle.
pub(crate) fn free_solution(p: &ObstacleProblem) -> Vec<f64> {
    let lap = RadialLaplacian::new(p.dim, &p.grid);
    let b = rhs(p, &lap);
    let mut psi = thomas(&lap.lower, &lap.diag, &lap.upper, &b);
    psi.push(p.boundary);
    psi
}

/// Tridiagonal solve (no pivoting; the matrices here are diagonally dominant).
pub(crate) fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], b: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = b[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / den;
        d[i] = (b[i] - lower[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Direct LCP solve for a contact set that is an initial segment `[0, r_c]`:
/// eliminate from the outer boundary inwards, then substitute outwards with
/// projection onto `psi >= C0`.
pub fn brennan_schwartz(p: &ObstacleProblem) -> Vec<f64> {
    let lap = RadialLaplacian::new(p.dim, &p.grid);
    let m = p.grid.m;
    let mut b = rhs(p, &lap);
    let mut d = lap.diag.clone();
    for i in (0..m - 1).rev() {
        let f = lap.upper[i] / d[i + 1];
        d[i] -= f * lap.lower[i + 1];
        b[i] -= f * b[i + 1];
    }
    let mut psi = vec![0.0; m + 1];
    psi[0] = (b[0] / d[0]).max(p.c0);
    for i in 1..m {
        psi[i] = ((b[i] - lap.lower[i] * psi[i - 1]) / d[i]).max(p.c0);
    }
    psi[m] = p.boundary;
    psi
}

/// Projected SOR from a cold start (`psi = max(C0, boundary)`).
pub fn psor_solve(p: &ObstacleProblem) -> Result<ObstacleSolution> {
    let init = vec![p.c0.max(p.boundary); p.grid.len()];
    psor_solve_from(p, init)
}

/// Projected SOR with `omega = 2 / (1 + sin(pi h / L))`, stopping when the
/// largest update falls below `1e-10`.
pub fn psor_solve_from(p: &ObstacleProblem, mut psi: Vec<f64>) -> Result<ObstacleSolution> {
    const MAX_SWEEPS: usize = 1_000_000;
    let lap = RadialLaplacian::new(p.dim, &p.grid);
    let m = p.grid.m;
    let b = rhs(p, &lap);
    psi.resize(m + 1, p.boundary);
    psi[m] = p.boundary;
    let omega = 2.0 / (1.0 + (std::f64::consts::PI * p.grid.h / p.grid.length()).sin());
    let mut last = f64::INFINITY;
    for sweep in 1..=MAX_SWEEPS {
        let mut max_update = 0.0f64;
        for i in 0..m {
            let mut off = if i + 1 < m { lap.upper[i] * psi[i + 1] } else { 0.0 };
            if i > 0 {
                off += lap.lower[i] * psi[i - 1];
            }
            let gs = (b[i] - off) / lap.diag[i];
            let new = (psi[i] + omega * (gs - psi[i])).max(p.c0);
            max_update = max_update.max((new - psi[i]).abs());
            psi[i] = new;
        }
        last = max_update;
        if max_update < 1e-10 {
            return Ok(finish(p, psi, sweep, None));
        }
    }
    Err(Error::NotConverged {
        iterations: MAX_SWEEPS,
        residual: last,
    })
}

/// Penalised problem `-Delta psi + beta_delta(psi - C0) = -F` with
/// `beta_delta(t) = min(t, 0) / delta`, solved by semismooth Newton.
pub fn penalized_solve(p: &ObstacleProblem, delta: f64) -> Result<Vec<f64>> {
    if !(delta > 0.0) {
        return Err(Error::InvalidMeasure(format!("penalty delta = {delta} must be > 0")));
    }
    let lap = RadialLaplacian::new(p.dim, &p.grid);
    let m = p.grid.m;
    let b = rhs(p, &lap);
    let residual = |psi: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let mut acc = lap.diag[i] * psi[i] - b[i];
                if i > 0 {
                    acc += lap.lower[i] * psi[i - 1];
                }
                if i + 1 < m {
                    acc += lap.upper[i] * psi[i + 1];
                }
                acc + lap.vol[i] * (psi[i] - p.c0).min(0.0) / delta
            })
            .collect()
    };
    // Full semismooth Newton steps: for an M-matrix plus a monotone piecewise
    // linear penalty the iterates decrease monotonically after the first step
    // and stop once the penalised set repeats.
    let mut psi = vec![p.boundary; m];
    let mut active: Vec<bool> = vec![false; m];
    for it in 0..=m + 10 {
        let diag: Vec<f64> = (0..m)
            .map(|i| lap.diag[i] + if active[i] { lap.vol[i] / delta } else { 0.0 })
            .collect();
        let rhs: Vec<f64> = (0..m)
            .map(|i| b[i] + if active[i] { lap.vol[i] * p.c0 / delta } else { 0.0 })
            .collect();
        psi = thomas(&lap.lower, &diag, &lap.upper, &rhs);
        let next: Vec<bool> = psi.iter().map(|&v| v < p.c0).collect();
        if next == active && it > 0 {
            psi.push(p.boundary);
            return Ok(psi);
        }
        active = next;
    }
    let rn = residual(&psi).iter().map(|x| x.abs()).fold(0.0, f64::max);
    Err(Error::NotConverged {
        iterations: m + 10,
        residual: rn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball_problem(h: f64) -> (ObstacleProblem, f64) {
        // F = 1, N = 3: the exact potential of the unit ball with K = 1/6
        let g = RadialGrid::new(h, 2.0).unwrap();
        let rm = (3.0 / (4.0 * std::f64::consts::PI)).powf(1.0 / 3.0);
        let m2 = 0.6 * rm * rm;
        let l = g.length();
        let boundary = 1.0 / (4.0 * std::f64::consts::PI * l) + (l * l + m2) / 6.0;
        let p = ObstacleProblem::new(3, g.clone(), vec![1.0; g.len()], 0.6 * rm * rm, boundary).unwrap();
        (p, rm)
    }

    fn exact_ball_psi(r: f64, rm: f64) -> f64 {
        let m2 = 0.6 * rm * rm;
        if r <= rm {
            m2
        } else {
            1.0 / (4.0 * std::f64::consts::PI * r) + (r * r + m2) / 6.0
        }
    }

    #[test]
    fn flat_problem_stays_at_the_obstacle() {
        let g = RadialGrid::new(0.05, 1.0).unwrap();
        let p = ObstacleProblem::new(2, g.clone(), vec![0.0; g.len()], 0.3, 0.3).unwrap();
        let s = psor_solve(&p).unwrap();
        assert!(s.psi.iter().all(|v| (v - 0.3).abs() < 1e-12));
        let pen = penalized_solve(&p, 1e-3).unwrap();
        assert!(pen.iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn psor_matches_the_ball_potential() {
        let (p, rm) = ball_problem(0.01);
        let s = psor_solve(&p).unwrap();
        let err = (0..p.grid.len())
            .map(|i| (s.psi[i] - exact_ball_psi(p.grid.r(i), rm)).abs())
            .fold(0.0, f64::max);
        assert!(err <= 10.0 * 0.01f64.powi(2), "{err}");
        assert!((s.contact_radius() - rm).abs() <= 0.01, "{}", s.contact_radius());
        let direct = brennan_schwartz(&p);
        let gap = direct.iter().zip(&s.psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-7, "{gap}");
    }

    #[test]
    fn penalty_converges_towards_psor() {
        let (p, _) = ball_problem(0.02);
        let s = psor_solve_from(&p, brennan_schwartz(&p)).unwrap();
        let mut prev = f64::INFINITY;
        for delta in [1e-2, 1e-3, 1e-4] {
            let pen = penalized_solve(&p, delta).unwrap();
            let gap = pen.iter().zip(&s.psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap < prev, "{delta}: {gap}");
            assert!(gap <= 5.0 * delta.sqrt() + 10.0 * 0.02f64.powi(2));
            assert!(pen.iter().all(|v| (v - p.c0).min(0.0) / delta <= 0.0));
            prev = gap;
        }
    }

    #[test]
    fn contact_sets_grow_with_the_level() {
        let g = RadialGrid::new(0.02, 1.0).unwrap();
        let base = ObstacleProblem::new(3, g.clone(), vec![1.0; g.len()], 0.0, 0.5).unwrap();
        let mut prev: Option<Vec<bool>> = None;
        for k in 0..12 {
            let c0 = 0.3 + 0.02 * k as f64;
            let s = psor_solve(&base.with_level(c0)).unwrap();
            if let Some(pc) = &prev {
                assert!(pc.iter().zip(&s.contact).all(|(a, b)| !*a || *b));
            }
            prev = Some(s.contact);
        }
    }
}
