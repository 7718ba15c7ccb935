//! Executable checks of the structural properties of minimisers:
//! Euler–Lagrange conditions, mean-value inequalities, regularity bounds,
//! cross-validation between solvers and the second-moment rearrangement.

use rayon::prelude::*;
use serde::Serialize;

use crate::energy::total_energy;
use crate::error::{Error, Result};
use crate::kernels::{GammaTable, Kernel, MollifiedKernel, RadialProfile, Tail};
use crate::measures::{ParticleCloud, RadialDensity};
use crate::obstacle::{assemble_f, ObstacleSolution};
use crate::quadrature::{
    adaptive_pieces, ball_average, ball_volume, sphere_area, spherical_mean, GaussLegendre, SphereRule,
};

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Radical inverse of `i` in base `b`.
fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let (mut f, mut acc) = (inv, 0.0);
    while i > 0 {
        acc += f * (i % b) as f64;
        i /= b;
        f *= inv;
    }
    acc
}

/// Deterministic low-discrepancy points in the ball `B_r(x)`: Halton points of
/// `[-1, 1]^N` kept when inside the unit ball.
pub struct HaltonBall {
    dim: usize,
    index: u64,
}

impl HaltonBall {
    pub fn new(dim: usize, start: u64) -> Self {
        assert!(dim <= PRIMES.len());
        Self { dim, index: start + 1 }
    }

    pub fn next_in(&mut self, x: &[f64], r: f64, out: &mut [f64]) {
        loop {
            let i = self.index;
            self.index += 1;
            let mut n2 = 0.0;
            for d in 0..self.dim {
                let v = 2.0 * radical_inverse(i, PRIMES[d]) - 1.0;
                out[d] = v;
                n2 += v * v;
            }
            if n2 <= 1.0 {
                for d in 0..self.dim {
                    out[d] = x[d] + r * out[d];
                }
                return;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// classical mean-value inequality

/// `||V||_{L^q(B_r)}` for the Newtonian kernel.
pub fn newton_lq_norm(dim: usize, q: f64, r: f64) -> Result<f64> {
    let n = dim as f64;
    let sigma = sphere_area(dim);
    if dim >= 3 {
        let e = n - (n - 2.0) * q;
        if e <= 0.0 {
            return Err(Error::DivergentIntegral(format!("V is not in L^{q} near the origin for N = {dim}")));
        }
        let c = 1.0 / ((n - 2.0) * sigma);
        Ok((c.powf(q) * sigma * r.powf(e) / e).powf(1.0 / q))
    } else {
        let f = |t: f64| if t > 0.0 { t * (t.ln().abs() / (2.0 * std::f64::consts::PI)).powf(q) } else { 0.0 };
        let pts: Vec<f64> = if r > 1.0 { vec![0.0, 1.0, r] } else { vec![0.0, r] };
        Ok((sigma * adaptive_pieces(f, &pts, 1e-15, 1e-11)?).powf(1.0 / q))
    }
}

/// `||f||_{L^p(B_R(x))}` by product quadrature (`p = inf` gives the sampled maximum).
pub fn lp_norm_on_ball<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], radius: f64, p: f64) -> f64 {
    let dim = x.len();
    let radial = GaussLegendre::new(24);
    let sphere = SphereRule::new(dim, 12);
    if p.is_infinite() {
        let mut y = vec![0.0; dim];
        let mut m = f(x).abs();
        for (rho, _) in radial.mapped(0.0, radius) {
            for k in 0..sphere.len() {
                let d = sphere.direction(k);
                for i in 0..dim {
                    y[i] = x[i] + rho * d[i];
                }
                m = m.max(f(&y).abs());
            }
        }
        return m;
    }
    let avg = ball_average(&|y: &[f64]| f(y).abs().powf(p), x, radius, &radial, &sphere);
    (avg * ball_volume(dim, radius)).powf(1.0 / p)
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanValueDeficit {
    pub r: f64,
    pub average: f64,
    /// `u(x) - avg_{B_r(x)} u`
    pub raw: f64,
    /// `||Delta u||_{L^p(B_1(x))} ||V||_{L^q(B_r)}`
    pub correction: f64,
    /// `raw + correction`, non-negative by the mean-value inequality.
    pub deficit: f64,
}

impl MeanValueDeficit {
    /// Deficit with the correction multiplied by `scale`.
    pub fn with_constant(&self, scale: f64) -> f64 {
        self.raw + scale * self.correction
    }
}

/// Mean-value deficits of `u` at `x` for each radius, given
/// `lap_norm = ||Delta u||_{L^p(B_1(x))}` with `p > N/2` (`p = inf` allowed).
pub fn mean_value_check<F: Fn(&[f64]) -> f64>(
    u: &F,
    lap_norm: f64,
    x: &[f64],
    radii: &[f64],
    p: f64,
) -> Result<Vec<MeanValueDeficit>> {
    let dim = x.len();
    if dim < 2 {
        return Err(Error::OutOfScope("mean-value checks need N >= 2".into()));
    }
    if !(p > dim as f64 / 2.0) {
        return Err(Error::OutOfScope(format!("need p > N/2, got p = {p}")));
    }
    let q = if p.is_infinite() { 1.0 } else { p / (p - 1.0) };
    let radial = GaussLegendre::new(32);
    let sphere = SphereRule::new(dim, 16);
    let ux = u(x);
    radii
        .iter()
        .map(|&r| {
            let average = ball_average(u, x, r, &radial, &sphere);
            let correction = lap_norm * newton_lq_norm(dim, q, r)?;
            let raw = ux - average;
            Ok(MeanValueDeficit {
                r,
                average,
                raw,
                correction,
                deficit: raw + correction,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// fractional mean-value inequality

#[derive(Debug, Clone, Serialize)]
pub struct FracDeficit {
    pub lambda: f64,
    pub value: f64,
    /// `(u * gamma_lambda)(x)`
    pub convolution: f64,
    /// `value - convolution`
    pub deficit: f64,
}

/// `(u * gamma_lambda)(x)` for a radial profile `u`, `|x| = r0`.
pub fn gamma_convolution(u: &dyn RadialProfile, r0: f64, lambda: f64, table: &GammaTable) -> Result<f64> {
    let dim = table.dim;
    let s = table.order;
    let sigma = sphere_area(dim);
    let bps = u.breakpoints();
    let rule = GaussLegendre::new(24);
    let mut cuts = vec![0.0, lambda, GammaTable::INNER_END * lambda];
    for &b in &bps {
        cuts.push((r0 - b).abs());
        cuts.push(r0 + b);
    }
    let gamma_far = GammaTable::OUTER_END * lambda;
    let (end, tail) = match u.tail() {
        Tail::Compact { radius } => (r0 + radius, 0.0),
        Tail::Power { start, coeff, exponent } => {
            let end = (4.0 * (r0 + start)).max(4.0 * gamma_far);
            let e = exponent + 2.0 * s;
            if e <= 0.0 {
                return Err(Error::DivergentIntegral("profile decays too slowly for gamma_lambda".into()));
            }
            (end, sigma * table.tail_coeff() * lambda.powf(2.0 * s) * coeff * end.powf(-e) / e)
        }
    };
    let mut t = GammaTable::INNER_END * lambda;
    while t < end {
        cuts.push(t);
        t *= 2.0;
    }
    cuts.push(gamma_far);
    cuts.push(end);
    cuts.retain(|&c| c <= end);
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let f = |r: f64| u.value(r);
    let integrand = |t: f64| {
        if t == 0.0 {
            return 0.0;
        }
        sigma * t.powi(dim as i32 - 1) * table.scaled(lambda, t) * spherical_mean(&f, r0, t, dim, &bps, &rule)
    };
    Ok(adaptive_pieces(integrand, &cuts, 1e-13, 1e-10)? + tail)
}

/// `u(x) - (u * gamma_lambda)(x)` for radial `u`; non-negative wherever
/// `(-Delta)^s u >= 0` on `B_lambda(x)`'s neighbourhood.
pub fn frac_mean_value_check(
    u: &dyn RadialProfile,
    x: &[f64],
    lambdas: &[f64],
    table: &GammaTable,
) -> Result<Vec<FracDeficit>> {
    if x.len() != table.dim {
        return Err(Error::InvalidKernel("point and gamma table dimensions differ".into()));
    }
    let r0 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let value = u.value(r0);
    lambdas
        .iter()
        .map(|&lambda| {
            let convolution = gamma_convolution(u, r0, lambda, table)?;
            Ok(FracDeficit {
                lambda,
                value,
                convolution,
                deficit: value - convolution,
            })
        })
        .collect()
}

/// Exterior bound `h(x) <= h * gamma_lambda(x) + c_star lambda^{2s}`: returns
/// the slack `h * gamma_lambda(x) + c_star lambda^{2s} - h(x)` per `lambda`.
pub fn frac_exterior_check(
    h: &dyn RadialProfile,
    x: &[f64],
    lambdas: &[f64],
    table: &GammaTable,
    c_star: f64,
) -> Result<Vec<f64>> {
    Ok(frac_mean_value_check(h, x, lambdas, table)?
        .into_iter()
        .map(|d| -d.deficit + c_star * d.lambda.powf(2.0 * table.order))
        .collect())
}

// ---------------------------------------------------------------------------
// Euler–Lagrange conditions on particle clouds

#[derive(Debug, Clone, Serialize)]
pub struct ElOptions {
    pub r_check: f64,
    /// Total quasi-random samples, shared among the centres.
    pub m_samples: usize,
    /// Support points at which the conditions are tested.
    pub max_centers: usize,
    /// Mollification radius of the repulsion; 0 uses the exact kernel.
    pub smoothing: f64,
    pub tol_deficit: f64,
    /// Relative to `max(|2E|, 1)`.
    pub tol_oscillation: f64,
    pub tol_level: f64,
}

impl Default for ElOptions {
    fn default() -> Self {
        Self {
            r_check: 0.1,
            m_samples: 2000,
            max_centers: 256,
            smoothing: 0.0,
            tol_deficit: 1e-3,
            tol_oscillation: 1e-2,
            tol_level: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ElReport {
    /// `min (psi(x) - psi(x0))` over sampled `x` in `B_r(x0)`, `x0` in the support.
    pub min_over_ball_deficit: f64,
    /// `max - min` of `psi` over the support points.
    pub support_oscillation: f64,
    /// `|mean psi on support - 2E|`
    pub d2_level_gap: f64,
    pub level: f64,
    pub psi_scale: f64,
    pub r_check: f64,
    pub centers: usize,
    pub samples: usize,
    pub smoothing: f64,
    pub pass_deficit: bool,
    pub pass_oscillation: bool,
    pub pass_level: bool,
}

impl ElReport {
    pub fn passed(&self) -> bool {
        self.pass_deficit && self.pass_oscillation && self.pass_level
    }
}

struct Field<'a> {
    cloud: &'a ParticleCloud,
    kernel: &'a Kernel,
    smooth: Option<MollifiedKernel>,
}

impl Field<'_> {
    /// `psi(x)`, skipping particle `skip` (exact kernel only).
    fn at(&self, x: &[f64], skip: Option<usize>) -> f64 {
        let c = self.cloud;
        let mut acc = 0.0;
        for j in 0..c.len() {
            if Some(j) == skip && self.smooth.is_none() {
                continue;
            }
            let r2: f64 = x.iter().zip(c.position(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            let (v, wa, _) = self.kernel.pair(r2);
            let v = match &self.smooth {
                Some(m) => m.value(r2.sqrt()),
                None if r2 == 0.0 => return f64::INFINITY,
                None => v,
            };
            acc += c.weights()[j] * (v + wa);
        }
        acc
    }
}

/// Sample the Euler–Lagrange conditions of a particle configuration.
pub fn el_check(c: &ParticleCloud, k: &Kernel, opts: &ElOptions) -> Result<ElReport> {
    if c.dim() != k.dim() {
        return Err(Error::InvalidKernel("cloud and kernel dimensions differ".into()));
    }
    if c.dim() > PRIMES.len() {
        return Err(Error::OutOfScope("quasi-random sampling supports N <= 12".into()));
    }
    let smooth = if opts.smoothing > 0.0 {
        Some(MollifiedKernel::new(k.dim(), k.order(), opts.smoothing)?)
    } else {
        None
    };
    let field = Field { cloud: c, kernel: k, smooth };
    let n = c.len();
    let centers: Vec<usize> = if n <= opts.max_centers {
        (0..n).collect()
    } else {
        (0..opts.max_centers).map(|i| i * n / opts.max_centers).collect()
    };
    let per = opts.m_samples.div_ceil(centers.len().max(1));
    let dim = c.dim();
    let results: Vec<(f64, f64)> = centers
        .par_iter()
        .enumerate()
        .map(|(a, &i)| {
            let x0 = c.position(i);
            let psi0 = field.at(x0, Some(i));
            let mut halton = HaltonBall::new(dim, (a * per * 3) as u64);
            let mut y = vec![0.0; dim];
            let mut low = f64::INFINITY;
            for _ in 0..per {
                halton.next_in(x0, opts.r_check, &mut y);
                low = low.min(field.at(&y, None) - psi0);
            }
            (psi0, low)
        })
        .collect();
    let level = 2.0 * total_energy(c, k).total;
    let psi: Vec<f64> = results.iter().map(|r| r.0).collect();
    let max = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = psi.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = psi.iter().sum::<f64>() / psi.len().max(1) as f64;
    let deficit = results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let psi_scale = level.abs().max(1.0);
    let support_oscillation = max - min;
    let d2_level_gap = (mean - level).abs();
    Ok(ElReport {
        min_over_ball_deficit: deficit,
        support_oscillation,
        d2_level_gap,
        level,
        psi_scale,
        r_check: opts.r_check,
        centers: centers.len(),
        samples: per * centers.len(),
        smoothing: opts.smoothing,
        pass_deficit: deficit >= -opts.tol_deficit,
        pass_oscillation: support_oscillation <= opts.tol_oscillation * psi_scale,
        pass_level: d2_level_gap <= opts.tol_level * psi_scale,
    })
}

// ---------------------------------------------------------------------------
// regularity of obstacle solutions

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    /// `max (rho - max(F, 0))`; non-positive when the bound holds.
    pub linf_bound_violation: f64,
    /// `max |rho - Delta W_a * rho|` on nodes three cells inside the contact set.
    pub interior_identity_error: f64,
    /// `||F||_inf`
    pub f_sup: f64,
    /// Density one cell inside the free boundary.
    pub boundary_jump: f64,
    pub tv_norm: f64,
    pub contact_radius: f64,
    /// `sigma_{N-1} r_b^{N-1}`
    pub perimeter_estimate: f64,
    /// `max |psi'| rho` over interior contact nodes.
    pub grad_psi_on_support: f64,
}

/// Largest jump between neighbouring grid values.
pub fn grid_oscillation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
}

pub fn regularity_report(sol: &ObstacleSolution, k: &Kernel) -> Result<RegularityReport> {
    if sol.order != 1.0 || sol.f.iter().any(|v| !v.is_finite()) {
        return Err(Error::OutOfScope("regularity report needs a Newtonian solution with finite F".into()));
    }
    let g = &sol.grid;
    let density = sol.density()?;
    let f_now = assemble_f(&density, k)?;
    let f_sup = sol.f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let linf_bound_violation = sol
        .rho
        .iter()
        .zip(&sol.f)
        .map(|(r, f)| r - f.max(0.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let last = sol.last_contact();
    let mut interior_identity_error = 0.0f64;
    let mut grad_psi_on_support = 0.0f64;
    if let Some(last) = last {
        for i in 0..last.saturating_sub(2) {
            if sol.contact[i..=i + 3].iter().all(|&c| c) {
                interior_identity_error = interior_identity_error.max((sol.rho[i] - f_now[i]).abs());
            }
        }
        for i in 1..last {
            if sol.contact[i] {
                let d = (sol.psi[i + 1] - sol.psi[i - 1]) / (2.0 * g.h);
                grad_psi_on_support = grad_psi_on_support.max(d.abs() * sol.rho[i]);
            }
        }
    }
    let boundary_jump = match last {
        Some(i) if i >= 1 => sol.rho[i - 1],
        Some(i) => sol.rho[i],
        None => 0.0,
    };
    let tv_norm = sol.rho.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let contact_radius = sol.contact_radius();
    let perimeter_estimate = sphere_area(sol.dim) * contact_radius.powi(sol.dim as i32 - 1);
    Ok(RegularityReport {
        linf_bound_violation,
        interior_identity_error,
        f_sup,
        boundary_jump,
        tv_norm,
        contact_radius,
        perimeter_estimate,
        grad_psi_on_support,
    })
}

// ---------------------------------------------------------------------------
// cross-validation between the flow and obstacle solvers

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    /// Quadratic cost of the radial monotone coupling; bounds `d_2` from above.
    pub d2: f64,
    /// `||M - tr(M)/N I||_F / tr(M)` for the second-moment tensor `M` of the
    /// recentred flow cloud.
    pub symmetry_residual: f64,
    pub n: usize,
}

/// Cloud with the flow particles' directions and the density's quantile
/// radii, matched by radial rank.
pub fn obstacle_cloud_along(flow: &ParticleCloud, density: &RadialDensity) -> Result<ParticleCloud> {
    let c = flow.centered();
    let n = c.len();
    let dim = c.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| c.radius(a).total_cmp(&c.radius(b)).then(a.cmp(&b)));
    let mut pos = vec![0.0; n * dim];
    for (rank, &i) in order.iter().enumerate() {
        let q = density.quantile((rank as f64 + 0.5) / n as f64);
        let r = c.radius(i);
        for d in 0..dim {
            pos[i * dim + d] = if r > 0.0 {
                q * c.position(i)[d] / r
            } else if d == 0 {
                q
            } else {
                0.0
            };
        }
    }
    ParticleCloud::new(dim, pos, c.weights().to_vec())
}

pub fn uniqueness_crosscheck(k: &Kernel, flow: &ParticleCloud, obst: &ObstacleSolution) -> Result<CrossCheck> {
    if flow.dim() != k.dim() || obst.dim != k.dim() {
        return Err(Error::InvalidKernel("dimension mismatch in cross-check".into()));
    }
    let c = flow.centered();
    let target = obstacle_cloud_along(&c, &obst.density()?)?;
    let n = c.len();
    let dim = c.dim();
    let mut cost = 0.0;
    for i in 0..n {
        let d2: f64 = c.position(i).iter().zip(target.position(i)).map(|(a, b)| (a - b) * (a - b)).sum();
        cost += c.weights()[i] * d2;
    }
    let mut m = vec![0.0; dim * dim];
    for i in 0..n {
        let x = c.position(i);
        for a in 0..dim {
            for b in 0..dim {
                m[a * dim + b] += c.weights()[i] * x[a] * x[b];
            }
        }
    }
    let tr: f64 = (0..dim).map(|a| m[a * dim + a]).sum();
    let mut dev = 0.0;
    for a in 0..dim {
        for b in 0..dim {
            let iso = if a == b { tr / dim as f64 } else { 0.0 };
            dev += (m[a * dim + b] - iso).powi(2);
        }
    }
    Ok(CrossCheck {
        d2: cost.sqrt(),
        symmetry_residual: dev.sqrt() / tr.max(f64::MIN_POSITIVE),
        n,
    })
}

// ---------------------------------------------------------------------------
// second-moment optimality of the ball

/// Candidate support set of unit volume.
#[derive(Debug, Clone, PartialEq)]
pub enum SupportSet {
    /// Union of centred shells `a <= |x| < b`.
    Radial { dim: usize, shells: Vec<(f64, f64)> },
    /// Disjoint balls of a common radius.
    BallUnion { dim: usize, centers: Vec<Vec<f64>>, radius: f64 },
}

impl SupportSet {
    pub fn ball(dim: usize, radius: f64) -> Self {
        Self::Radial {
            dim,
            shells: vec![(0.0, radius)],
        }
    }

    /// Unit-volume ball.
    pub fn unit_ball(dim: usize) -> Self {
        Self::ball(dim, (1.0 / ball_volume(dim, 1.0)).powf(1.0 / dim as f64))
    }

    pub fn volume(&self) -> f64 {
        match self {
            Self::Radial { dim, shells } => shells
                .iter()
                .map(|&(a, b)| ball_volume(*dim, b) - ball_volume(*dim, a))
                .sum(),
            Self::BallUnion { dim, centers, radius } => centers.len() as f64 * ball_volume(*dim, *radius),
        }
    }

    /// `int_Omega |x - x_c|^2 dx` about the centroid `x_c`.
    pub fn second_moment(&self) -> f64 {
        match self {
            Self::Radial { dim, shells } => {
                let n = *dim as i32;
                shells
                    .iter()
                    .map(|&(a, b)| sphere_area(*dim) * (b.powi(n + 2) - a.powi(n + 2)) / (n + 2) as f64)
                    .sum()
            }
            Self::BallUnion { dim, centers, radius } => {
                let n = *dim as f64;
                let vol = ball_volume(*dim, *radius);
                let k = centers.len() as f64;
                let centroid: Vec<f64> = (0..*dim).map(|d| centers.iter().map(|c| c[d]).sum::<f64>() / k).collect();
                centers
                    .iter()
                    .map(|c| {
                        let off: f64 = c.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum();
                        vol * (n * radius * radius / (n + 2.0) + off)
                    })
                    .sum()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Radial { shells, .. } => {
                if shells.iter().any(|&(a, b)| !(a >= 0.0 && b > a)) {
                    return Err(Error::InvalidMeasure("shells need 0 <= a < b".into()));
                }
            }
            Self::BallUnion { centers, radius, .. } => {
                for (i, a) in centers.iter().enumerate() {
                    for b in &centers[i + 1..] {
                        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                        if d < 2.0 * radius {
                            return Err(Error::InvalidMeasure("balls in a union must be disjoint".into()));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentRanking {
    /// Index of the smallest second moment; ties go to the lower index.
    pub winner: usize,
    pub moments: Vec<f64>,
}

/// Rank unit-volume candidate sets by second moment about their centroid.
pub fn ball_second_moment_optimality(candidates: &[SupportSet]) -> Result<MomentRanking> {
    if candidates.is_empty() {
        return Err(Error::InvalidMeasure("no candidate sets".into()));
    }
    for c in candidates {
        c.validate()?;
        let v = c.volume();
        if (v - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidMeasure(format!("candidate volume {v} is not 1")));
        }
    }
    let moments: Vec<f64> = candidates.iter().map(|c| c.second_moment()).collect();
    let mut winner = 0;
    for (i, &m) in moments.iter().enumerate() {
        if m < moments[winner] {
            winner = i;
        }
    }
    Ok(MomentRanking { winner, moments })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::FnProfile;

    #[test]
    fn halton_points_stay_in_the_ball() {
        let mut h = HaltonBall::new(3, 0);
        let mut y = [0.0; 3];
        for _ in 0..500 {
            h.next_in(&[1.0, 0.0, 0.0], 0.2, &mut y);
            let d = ((y[0] - 1.0).powi(2) + y[1] * y[1] + y[2] * y[2]).sqrt();
            assert!(d <= 0.2 + 1e-15);
        }
    }

    #[test]
    fn newton_norm_matches_quadrature() {
        // N = 3, q = 1: int_{B_r} 1/(4 pi |x|) = r^2 / 2
        assert!((newton_lq_norm(3, 1.0, 0.3).unwrap() - 0.045).abs() < 1e-15);
        let direct = crate::quadrature::adaptive(|t| t * (-t.ln() / (2.0 * std::f64::consts::PI)), 0.0, 0.5, 1e-15, 1e-12).unwrap();
        let v = newton_lq_norm(2, 1.0, 0.5).unwrap();
        assert!((v - 2.0 * std::f64::consts::PI * direct).abs() < 1e-12);
    }

    #[test]
    fn quadratic_mean_value_deficit() {
        for dim in 2..=4 {
            let x = vec![0.3; dim];
            let u = |y: &[f64]| y.iter().map(|v| v * v).sum::<f64>();
            let out = mean_value_check(&u, 2.0 * dim as f64, &x, &[0.1, 0.5], f64::INFINITY).unwrap();
            for d in &out {
                let exact = -(dim as f64) * d.r * d.r / (dim as f64 + 2.0);
                assert!((d.raw - exact).abs() < 1e-12);
                assert!(d.deficit >= 0.0);
                assert!(d.with_constant(2.0) >= d.with_constant(1.0));
            }
        }
    }

    #[test]
    fn ball_beats_shell_and_ties_go_to_first() {
        let ball = SupportSet::unit_ball(3);
        let a = 0.5;
        let b = ((1.0 / ball_volume(3, 1.0)) + a * a * a).cbrt();
        let shell = SupportSet::Radial {
            dim: 3,
            shells: vec![(a, b)],
        };
        assert_eq!(ball_second_moment_optimality(&[shell, ball.clone()]).unwrap().winner, 1);
        assert_eq!(ball_second_moment_optimality(&[ball.clone(), ball]).unwrap().winner, 0);
    }

    #[test]
    fn gamma_convolution_of_constant_is_table_mass() {
        let table = GammaTable::new(2, 0.5).unwrap();
        let one = FnProfile {
            f: |r: f64| if r <= 50.0 { 1.0 } else { 0.0 },
            breakpoints: vec![50.0],
            tail: Tail::Compact { radius: 50.0 },
        };
        let v = gamma_convolution(&one, 0.0, 0.1, &table).unwrap();
        assert!((v - 1.0).abs() < 2e-3, "{v}");
    }
}
