//! Interaction energy of particle clouds, its repulsive/attractive split,
//! potentials `psi = W * mu`, and the dilation identity.
//!
//! Pair sums are evaluated row by row (`psi_i = sum_{j != i} w_j W(x_i - x_j)`)
//! in a fixed index order, so every result is bit-identical for any number of
//! threads.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{Attraction, Kernel};
use crate::measures::ParticleCloud;

/// Rows handled per parallel task.
const ROW_BLOCK: usize = 32;

/// Energy split `E = E_r + E_a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub total: f64,
    pub repulsive: f64,
    pub attractive: f64,
    /// `d/dlambda E[mu^lambda]` at `lambda = 1`; `(2 - N) E_r + 2 E_a` for the
    /// Newtonian kernel with quadratic attraction. NaN when the kernel has no
    /// dilation law (cutoff attraction).
    pub stationarity_residual: f64,
    /// Two particles coincide and `W(0) = +inf`.
    pub infinite: bool,
}

impl EnergyBreakdown {
    fn infinite() -> Self {
        Self {
            total: f64::INFINITY,
            repulsive: f64::INFINITY,
            attractive: f64::NAN,
            stationarity_residual: f64::NAN,
            infinite: true,
        }
    }
}

/// Per-particle potentials and gradients of a cloud acting on itself.
#[derive(Debug, Clone)]
pub struct Interactions {
    /// `sum_{j != i} w_j V_s(x_i - x_j)`
    pub psi_rep: Vec<f64>,
    /// `sum_{j != i} w_j W_a(x_i - x_j)`
    pub psi_att: Vec<f64>,
    /// `grad psi(x_i)`, flat, empty unless requested.
    pub grad: Vec<f64>,
    /// Smallest squared pair distance.
    pub min_dist2: f64,
}

impl Interactions {
    pub fn psi(&self, i: usize) -> f64 {
        self.psi_rep[i] + self.psi_att[i]
    }

    /// Energy split from the row sums.
    pub fn breakdown(&self, c: &ParticleCloud, k: &Kernel) -> EnergyBreakdown {
        if self.min_dist2 == 0.0 {
            return EnergyBreakdown::infinite();
        }
        let w = c.weights();
        let repulsive = 0.5 * w.iter().zip(&self.psi_rep).map(|(a, b)| a * b).sum::<f64>();
        let attractive = 0.5 * w.iter().zip(&self.psi_att).map(|(a, b)| a * b).sum::<f64>();
        EnergyBreakdown {
            total: repulsive + attractive,
            repulsive,
            attractive,
            stationarity_residual: stationarity(c, k, repulsive, attractive),
            infinite: false,
        }
    }
}

fn attraction_degree(k: &Kernel) -> Option<f64> {
    if k.cutoff().is_some() {
        return None;
    }
    match k.attraction() {
        Attraction::Power { q, .. } => Some(q),
        Attraction::Quadratic { .. } => Some(2.0),
        Attraction::None => Some(0.0),
    }
}

fn stationarity(c: &ParticleCloud, k: &Kernel, e_r: f64, e_a: f64) -> f64 {
    let Some(q) = attraction_degree(k) else {
        return f64::NAN;
    };
    // off-diagonal pair mass 1/2 sum_{i != j} w_i w_j
    let pairs = 0.5 * (1.0 - c.weights().iter().map(|w| w * w).sum::<f64>());
    let e_a_homogeneous = e_a - k.offset() * pairs;
    match k.repulsion_degree() {
        Some(p) => p * e_r + q * e_a_homogeneous,
        None => -pairs / (2.0 * std::f64::consts::PI) + q * e_a_homogeneous,
    }
}

/// Inverse-distance repulsion with quadratic attraction: `c / r + k r^2`.
fn inverse_quadratic(k: &Kernel) -> Option<(f64, f64)> {
    if k.cutoff().is_some() || k.offset() != 0.0 || k.repulsion_degree() != Some(-1.0) {
        return None;
    }
    let c = k.v(1.0);
    match k.attraction() {
        Attraction::Quadratic { k } => Some((c, k)),
        Attraction::Power { q, coeff } if q == 2.0 => Some((c, 0.5 * coeff)),
        Attraction::None => Some((c, 0.0)),
        _ => None,
    }
}

/// Row sums for every particle; `forces` also accumulates `grad psi(x_i)`.
pub fn interactions(c: &ParticleCloud, k: &Kernel, forces: bool) -> Interactions {
    assert_eq!(c.dim(), k.dim(), "cloud and kernel dimensions differ");
    let n = c.len();
    let dim = c.dim();
    let mut psi_rep = vec![0.0; n];
    let mut psi_att = vec![0.0; n];
    let mut grad = vec![0.0; n * dim];

    let fast = inverse_quadratic(k);
    let coords: Vec<Vec<f64>> = (0..dim)
        .map(|d| (0..n).map(|i| c.position(i)[d]).collect())
        .collect();
    let w = c.weights();

    let blocks: Vec<f64> = psi_rep
        .par_chunks_mut(ROW_BLOCK)
        .zip(psi_att.par_chunks_mut(ROW_BLOCK))
        .zip(grad.par_chunks_mut(ROW_BLOCK * dim))
        .enumerate()
        .map(|(b, ((rep, att), g))| {
            let mut min_r2 = f64::INFINITY;
            for (off, (r_out, a_out)) in rep.iter_mut().zip(att.iter_mut()).enumerate() {
                let i = b * ROW_BLOCK + off;
                let g_out = if forces { &mut g[off * dim..(off + 1) * dim] } else { &mut [][..] };
                let m = match (fast, dim) {
                    (Some((cc, kk)), 2) => row_fast::<2>(&coords, w, i, cc, kk, r_out, a_out, g_out),
                    (Some((cc, kk)), 3) => row_fast::<3>(&coords, w, i, cc, kk, r_out, a_out, g_out),
                    _ => row_generic(c, k, i, r_out, a_out, g_out),
                };
                min_r2 = min_r2.min(m);
            }
            min_r2
        })
        .collect();
    let min_dist2 = blocks.into_iter().fold(f64::INFINITY, f64::min);
    if !forces {
        grad = Vec::new();
    }
    Interactions {
        psi_rep,
        psi_att,
        grad,
        min_dist2,
    }
}

const LANES: usize = 4;

#[allow(clippy::too_many_arguments)]
#[inline]
fn row_fast<const D: usize>(
    coords: &[Vec<f64>],
    w: &[f64],
    i: usize,
    c: f64,
    k: f64,
    rep: &mut f64,
    att: &mut f64,
    grad: &mut [f64],
) -> f64 {
    let cs: [&[f64]; D] = std::array::from_fn(|d| &coords[d][..]);
    let xi: [f64; D] = std::array::from_fn(|d| cs[d][i]);
    let forces = !grad.is_empty();
    // independent lanes keep the reduction order fixed and vectorisable
    let mut v = [0.0; LANES];
    let mut a = [0.0; LANES];
    let mut g = [[0.0; LANES]; D];
    let mut min_r2 = [f64::INFINITY; LANES];
    let n = w.len();
    for (lo, hi) in [(0, i), (i + 1, n)] {
        let full = lo + (hi - lo) / LANES * LANES;
        let mut j = lo;
        while j < full {
            let mut dx = [[0.0; LANES]; D];
            let mut r2 = [0.0; LANES];
            for d in 0..D {
                for l in 0..LANES {
                    dx[d][l] = xi[d] - cs[d][j + l];
                    r2[l] += dx[d][l] * dx[d][l];
                }
            }
            let mut f = [0.0; LANES];
            for l in 0..LANES {
                let inv = 1.0 / r2[l].sqrt();
                let wj = w[j + l];
                v[l] += wj * inv;
                a[l] += wj * r2[l];
                f[l] = wj * (2.0 * k - c * inv * inv * inv);
                min_r2[l] = min_r2[l].min(r2[l]);
            }
            if forces {
                for d in 0..D {
                    for l in 0..LANES {
                        g[d][l] += f[l] * dx[d][l];
                    }
                }
            }
            j += LANES;
        }
        for (l, jj) in (full..hi).enumerate() {
            let mut dx = [0.0; D];
            let mut r2 = 0.0;
            for d in 0..D {
                dx[d] = xi[d] - cs[d][jj];
                r2 += dx[d] * dx[d];
            }
            let inv = 1.0 / r2.sqrt();
            let wj = w[jj];
            v[l] += wj * inv;
            a[l] += wj * r2;
            if forces {
                let f = wj * (2.0 * k - c * inv * inv * inv);
                for d in 0..D {
                    g[d][l] += f * dx[d];
                }
            }
            min_r2[l] = min_r2[l].min(r2);
        }
    }
    let sum = |x: &[f64; LANES]| (x[0] + x[1]) + (x[2] + x[3]);
    *rep = c * sum(&v);
    *att = k * sum(&a);
    if forces {
        for d in 0..D {
            grad[d] = sum(&g[d]);
        }
    }
    min_r2.iter().copied().fold(f64::INFINITY, f64::min)
}

fn row_generic(
    c: &ParticleCloud,
    k: &Kernel,
    i: usize,
    rep: &mut f64,
    att: &mut f64,
    grad: &mut [f64],
) -> f64 {
    let xi = c.position(i);
    let w = c.weights();
    let forces = !grad.is_empty();
    let mut v = 0.0;
    let mut a = 0.0;
    let mut min_r2 = f64::INFINITY;
    let mut dx = vec![0.0; xi.len()];
    for j in 0..c.len() {
        if j == i {
            continue;
        }
        let mut r2 = 0.0;
        for (d, (p, q)) in dx.iter_mut().zip(xi.iter().zip(c.position(j))) {
            *d = p - q;
            r2 += *d * *d;
        }
        min_r2 = min_r2.min(r2);
        if r2 == 0.0 {
            v = f64::INFINITY;
            continue;
        }
        let (vs, wa, dw_r) = k.pair(r2);
        v += w[j] * vs;
        a += w[j] * wa;
        if forces {
            for (g, d) in grad.iter_mut().zip(&dx) {
                *g += w[j] * dw_r * d;
            }
        }
    }
    *rep = v;
    *att = a;
    min_r2
}

/// `E = 1/2 sum_{i != j} w_i w_j W(x_i - x_j)`; tagged infinite when two
/// particles coincide.
pub fn total_energy(c: &ParticleCloud, k: &Kernel) -> EnergyBreakdown {
    interactions(c, k, false).breakdown(c, k)
}

/// `psi(x) = sum_j w_j W(x - x_j)`; `+inf` when `x` is a particle position.
pub fn potential_at(c: &ParticleCloud, k: &Kernel, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..c.len() {
        let r2: f64 = x.iter().zip(c.position(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        if r2 == 0.0 {
            return f64::INFINITY;
        }
        let (v, wa, _) = k.pair(r2);
        acc += c.weights()[j] * (v + wa);
    }
    acc
}

/// Gradient of `psi` at an arbitrary point.
pub fn potential_gradient(c: &ParticleCloud, k: &Kernel, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    for j in 0..c.len() {
        let p = c.position(j);
        let r2: f64 = x.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
        if r2 == 0.0 {
            continue;
        }
        let (_, _, f) = k.pair(r2);
        for d in 0..x.len() {
            g[d] += c.weights()[j] * f * (x[d] - p[d]);
        }
    }
    g
}

/// Energy of the dilated cloud predicted by homogeneity,
/// `lambda^{2s-N} E_r + lambda^q E_a`.
pub fn dilate_energy(c: &ParticleCloud, k: &Kernel, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::OutOfScope(format!("dilation factor {lambda} must be > 0")));
    }
    let (Some(p), Some(q)) = (k.repulsion_degree(), attraction_degree(k)) else {
        return Err(Error::OutOfScope(
            "dilation identity needs homogeneous repulsion and attraction".into(),
        ));
    };
    let e = total_energy(c, k);
    Ok(lambda.powf(p) * e.repulsive + lambda.powf(q) * e.attractive)
}
