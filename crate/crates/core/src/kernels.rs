//! Interaction kernels `W = V_s + W_a`: the (fractional) fundamental solution,
//! the attractive part, their derivatives, the singular-integral fractional
//! Laplacian of radial profiles, and the mollified kernels `Gamma_lambda`,
//! `gamma_lambda` used by mean-value formulas.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::quadrature::{adaptive, adaptive_pieces, sphere_area, spherical_mean, GaussLegendre};

/// Normalising constant of the Riesz kernel, `(-Delta)^s c|x|^{2s-N} = delta_0`.
pub fn riesz_constant(dim: usize, s: f64) -> f64 {
    let n = dim as f64;
    gamma(n / 2.0 - s) / (4f64.powf(s) * PI.powf(n / 2.0) * gamma(s))
}

/// Constant of the singular-integral form
/// `(-Delta)^s f(x) = C PV int (f(x) - f(y)) / |x - y|^{N+2s} dy`.
pub fn frac_laplacian_constant(dim: usize, s: f64) -> f64 {
    let n = dim as f64;
    s * 4f64.powf(s) * gamma(n / 2.0 + s) / (PI.powf(n / 2.0) * gamma(1.0 - s))
}

/// Newtonian kernel constant for `N >= 3`: unit flux through every sphere.
fn newton_constant(dim: usize) -> f64 {
    1.0 / ((dim as f64 - 2.0) * sphere_area(dim))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Radial fundamental solution of `-Delta` in R^N.
pub fn eval_v(x: &[f64]) -> Result<f64> {
    let r = norm(x);
    if r == 0.0 {
        return Err(Error::SingularPoint("V is singular at the origin"));
    }
    Ok(newtonian_radial(x.len(), r))
}

fn newtonian_radial(dim: usize, r: f64) -> f64 {
    if dim == 2 {
        -(r.ln()) / (2.0 * PI)
    } else {
        newton_constant(dim) * r.powi(2 - dim as i32)
    }
}

/// Riesz kernel `c_{N,s} |x|^{2s-N}`, the fundamental solution of `(-Delta)^s`.
pub fn eval_vs(x: &[f64], s: f64) -> Result<f64> {
    let r = norm(x);
    if r == 0.0 {
        return Err(Error::SingularPoint("V_s is singular at the origin"));
    }
    Ok(riesz_constant(x.len(), s) * r.powf(2.0 * s - x.len() as f64))
}

/// Attractive part of the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Attraction {
    /// `W_a = coeff |x|^q / q`
    Power {
        q: f64,
        #[serde(default = "unit_coeff")]
        coeff: f64,
    },
    /// `W_a = K |x|^2`
    Quadratic {
        #[serde(rename = "K", alias = "k")]
        k: f64,
    },
    None,
}

fn unit_coeff() -> f64 {
    1.0
}

/// JSON form of a kernel: `{"dim": 3, "s": 1.0, "attraction": {...}, "cutoff": null}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub dim: usize,
    pub s: f64,
    pub attraction: Attraction,
    #[serde(default)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Repulsion {
    Log,
    InverseDistance(f64),
    Power { c: f64, p: f64 },
}

/// Interaction potential `W = V_s + W_a` (radial).
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    dim: usize,
    order: f64,
    attraction: Attraction,
    cutoff: Option<f64>,
    offset: f64,
    repulsion: Repulsion,
}

impl Kernel {
    pub fn new(dim: usize, order: f64, attraction: Attraction, cutoff: Option<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidKernel(format!("dimension {dim} < 2")));
        }
        if !(order > 0.0 && order <= 1.0) {
            return Err(Error::InvalidKernel(format!("order s = {order} outside (0, 1]")));
        }
        match attraction {
            Attraction::Power { q, coeff } => {
                if !(q > 0.0 && coeff > 0.0 && q.is_finite() && coeff.is_finite()) {
                    return Err(Error::InvalidKernel(format!(
                        "power attraction needs q > 0 and coeff > 0 (got q = {q}, coeff = {coeff})"
                    )));
                }
                if order < 1.0 && q >= 2.0 * order && cutoff.is_none() {
                    return Err(Error::InvalidKernel(format!(
                        "power attraction with q = {q} >= 2s = {} needs a cutoff radius",
                        2.0 * order
                    )));
                }
            }
            Attraction::Quadratic { k } => {
                if !(k > 0.0 && k.is_finite()) {
                    return Err(Error::InvalidKernel(format!("quadratic K = {k} must be > 0")));
                }
            }
            Attraction::None => {}
        }
        if let Some(c) = cutoff {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidKernel(format!("cutoff radius {c} must be > 0")));
            }
        }
        let repulsion = if order == 1.0 && dim == 2 {
            Repulsion::Log
        } else {
            let c = if order == 1.0 {
                newton_constant(dim)
            } else {
                riesz_constant(dim, order)
            };
            let p = dim as f64 - 2.0 * order;
            if p == 1.0 {
                Repulsion::InverseDistance(c)
            } else {
                Repulsion::Power { c, p }
            }
        };
        let mut kernel = Self {
            dim,
            order,
            attraction,
            cutoff,
            offset: 0.0,
            repulsion,
        };
        kernel.offset = kernel.nonnegativity_offset();
        Ok(kernel)
    }

    pub fn from_spec(spec: &KernelSpec) -> Result<Self> {
        Self::new(spec.dim, spec.s, spec.attraction, spec.cutoff)
    }

    pub fn spec(&self) -> KernelSpec {
        KernelSpec {
            dim: self.dim,
            s: self.order,
            attraction: self.attraction,
            cutoff: self.cutoff,
        }
    }

    pub fn newtonian_quadratic(dim: usize, k: f64) -> Result<Self> {
        Self::new(dim, 1.0, Attraction::Quadratic { k }, None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn attraction(&self) -> Attraction {
        self.attraction
    }

    pub fn cutoff(&self) -> Option<f64> {
        self.cutoff
    }

    /// Constant added to `W_a` so that `W >= 0`; non-zero only in the
    /// logarithmic (N = 2, s = 1) case.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn is_newtonian(&self) -> bool {
        self.order == 1.0
    }

    /// Homogeneity degree of the repulsive part, `2s - N`; `None` for the logarithm.
    pub fn repulsion_degree(&self) -> Option<f64> {
        match self.repulsion {
            Repulsion::Log => None,
            _ => Some(2.0 * self.order - self.dim as f64),
        }
    }

    fn nonnegativity_offset(&self) -> f64 {
        if self.repulsion != Repulsion::Log {
            return 0.0;
        }
        // closed-form critical radius of the uncut kernel
        let r_star = match self.attraction {
            Attraction::Quadratic { k } => (1.0 / (4.0 * PI * k)).sqrt(),
            Attraction::Power { q, coeff } => (1.0 / (2.0 * PI * coeff)).powf(1.0 / q),
            Attraction::None => return 0.0,
        };
        let w_min = match self.cutoff {
            Some(c) if r_star >= 2.0 * c => {
                // the cut-off kernel only: scan the transition region
                let mut best = f64::INFINITY;
                let n = 4000;
                for i in 1..=n {
                    let r = 4.0 * c * i as f64 / n as f64;
                    best = best.min(self.v(r) + self.wa_raw(r));
                }
                best
            }
            _ => self.v(r_star) + self.wa_raw(r_star),
        };
        (-w_min).max(0.0)
    }

    /// Repulsive part `V_s(r)`.
    #[inline]
    pub fn v(&self, r: f64) -> f64 {
        match self.repulsion {
            Repulsion::Log => -(r.ln()) / (2.0 * PI),
            Repulsion::InverseDistance(c) => c / r,
            Repulsion::Power { c, p } => c * r.powf(-p),
        }
    }

    /// `dV_s/dr`.
    #[inline]
    pub fn dv(&self, r: f64) -> f64 {
        match self.repulsion {
            Repulsion::Log => -1.0 / (2.0 * PI * r),
            Repulsion::InverseDistance(c) => -c / (r * r),
            Repulsion::Power { c, p } => -p * c * r.powf(-p - 1.0),
        }
    }

    /// Uncut attraction profile and its first two radial derivatives.
    #[inline]
    fn attraction_profile(&self, r: f64) -> (f64, f64, f64) {
        match self.attraction {
            Attraction::Power { q, coeff } => {
                let rq2 = r.powf(q - 2.0);
                (coeff * rq2 * r * r / q, coeff * rq2 * r, coeff * (q - 1.0) * rq2)
            }
            Attraction::Quadratic { k } => (k * r * r, 2.0 * k * r, 2.0 * k),
            Attraction::None => (0.0, 0.0, 0.0),
        }
    }

    /// C^2 bump: 1 on [0, 2c], 0 beyond 4c, quintic smoothstep in between.
    #[inline]
    fn bump(&self, r: f64) -> (f64, f64, f64) {
        match self.cutoff {
            None => (1.0, 0.0, 0.0),
            Some(c) => {
                if r <= 2.0 * c {
                    (1.0, 0.0, 0.0)
                } else if r >= 4.0 * c {
                    (0.0, 0.0, 0.0)
                } else {
                    let t = (r - 2.0 * c) / (2.0 * c);
                    let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
                    let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t) / (2.0 * c);
                    let dds = 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (4.0 * c * c);
                    (1.0 - s, -ds, -dds)
                }
            }
        }
    }

    fn wa_raw(&self, r: f64) -> f64 {
        let (g, _, _) = self.attraction_profile(r);
        self.bump(r).0 * g
    }

    /// Attractive part `W_a(r)`, including cutoff and offset.
    #[inline]
    pub fn wa(&self, r: f64) -> f64 {
        self.wa_raw(r) + self.offset
    }

    /// `dW_a/dr`.
    #[inline]
    pub fn dwa(&self, r: f64) -> f64 {
        let (g, dg, _) = self.attraction_profile(r);
        let (b, db, _) = self.bump(r);
        db * g + b * dg
    }

    /// Radial Laplacian of `W_a` at radius `r` (`r > 0`, or `r = 0` when finite).
    pub fn lap_wa(&self, r: f64) -> Result<f64> {
        let n = self.dim as f64;
        if self.cutoff.is_none() || r <= 2.0 * self.cutoff.unwrap() {
            return match self.attraction {
                Attraction::Power { q, coeff } => {
                    if r == 0.0 {
                        if q < 2.0 {
                            Err(Error::SingularPoint("Laplacian of |x|^q with q < 2 at the origin"))
                        } else if q == 2.0 {
                            Ok(coeff * n)
                        } else {
                            Ok(0.0)
                        }
                    } else {
                        Ok(coeff * (q + n - 2.0) * r.powf(q - 2.0))
                    }
                }
                Attraction::Quadratic { k } => Ok(2.0 * n * k),
                Attraction::None => Ok(0.0),
            };
        }
        let (g, dg, ddg) = self.attraction_profile(r);
        let (b, db, ddb) = self.bump(r);
        let f1 = db * g + b * dg;
        let f2 = ddb * g + 2.0 * db * dg + b * ddg;
        Ok(f2 + (n - 1.0) * f1 / r)
    }

    #[inline]
    pub fn w(&self, r: f64) -> f64 {
        self.v(r) + self.wa(r)
    }

    #[inline]
    pub fn dw(&self, r: f64) -> f64 {
        self.dv(r) + self.dwa(r)
    }

    /// Pair terms from a squared distance: `(V_s, W_a, W'(r)/r)`.
    #[inline]
    pub fn pair(&self, r2: f64) -> (f64, f64, f64) {
        if self.cutoff.is_none() {
            let (v, dv_r) = match self.repulsion {
                Repulsion::InverseDistance(c) => {
                    let inv = 1.0 / r2.sqrt();
                    (c * inv, -c * inv * inv * inv)
                }
                Repulsion::Log => (-(r2.ln()) / (4.0 * PI), -1.0 / (2.0 * PI * r2)),
                Repulsion::Power { c, p } => {
                    let t = c * r2.powf(-0.5 * p);
                    (t, -p * t / r2)
                }
            };
            let (wa, dwa_r) = match self.attraction {
                Attraction::Quadratic { k } => (k * r2, 2.0 * k),
                Attraction::Power { q, coeff } => {
                    if q == 2.0 {
                        (0.5 * coeff * r2, coeff)
                    } else if q == 4.0 {
                        (0.25 * coeff * r2 * r2, coeff * r2)
                    } else {
                        let t = coeff * r2.powf(0.5 * q - 1.0);
                        (t * r2 / q, t)
                    }
                }
                Attraction::None => (0.0, 0.0),
            };
            (v, wa + self.offset, dv_r + dwa_r)
        } else {
            let r = r2.sqrt();
            (self.v(r), self.wa(r), self.dw(r) / r)
        }
    }
}

/// Closed-form Laplacian of the attractive part at a point.
pub fn laplacian_wa(x: &[f64], k: &Kernel) -> Result<f64> {
    k.lap_wa(norm(x))
}

/// Gradient of `W` at a point, `W'(|x|) x / |x|`.
pub fn grad_w(x: &[f64], k: &Kernel) -> Result<Vec<f64>> {
    let r = norm(x);
    if r == 0.0 {
        return Err(Error::SingularPoint("gradient of W at the origin"));
    }
    let f = k.dw(r) / r;
    Ok(x.iter().map(|v| v * f).collect())
}

/// Behaviour of a radial profile at large radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail {
    /// Identically zero beyond `radius`.
    Compact { radius: f64 },
    /// Equal (or asymptotic) to `coeff * r^{-exponent}` for `r >= start`.
    Power { start: f64, coeff: f64, exponent: f64 },
}

/// A radial function `f(|x|)` on R^N.
pub trait RadialProfile: Sync {
    fn value(&self, r: f64) -> f64;
    /// Radii where the profile loses smoothness.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
    fn tail(&self) -> Tail;
}

/// Closure-backed radial profile.
pub struct FnProfile<F> {
    pub f: F,
    pub breakpoints: Vec<f64>,
    pub tail: Tail,
}

impl<F: Fn(f64) -> f64 + Sync> RadialProfile for FnProfile<F> {
    fn value(&self, r: f64) -> f64 {
        (self.f)(r)
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
    fn tail(&self) -> Tail {
        self.tail
    }
}

/// Options for [`frac_laplacian_radial`].
#[derive(Debug, Clone)]
pub struct FracQuadrature {
    /// Radius of the near field handled by the Taylor correction.
    pub near: f64,
    /// Far-field truncation radius relative to the profile scale.
    pub far_factor: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub angular_nodes: usize,
}

impl Default for FracQuadrature {
    fn default() -> Self {
        Self {
            near: 1e-4,
            far_factor: 1e3,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            angular_nodes: 20,
        }
    }
}

/// `(-Delta)^s f` at radius `r` for a radial profile, as the principal-value
/// singular integral
/// `C sigma int_0^inf (f(x) - M_f(x, rho)) rho^{-1-2s} d rho`
/// where `M_f(x, rho)` is the spherical mean about `x`.
///
/// The near field `rho < near` uses the second-order Taylor correction
/// `(f(x) - M_f(x, near)) near^{-2s} / (2 - 2s)`; the far field is closed
/// analytically from the profile tail.
pub fn frac_laplacian_radial(
    f: &dyn RadialProfile,
    r: f64,
    dim: usize,
    s: f64,
    opts: &FracQuadrature,
) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::InvalidKernel(format!("fractional order {s} outside (0, 1)")));
    }
    let rule = GaussLegendre::new(opts.angular_nodes);
    let mut bps = f.breakpoints();
    let tail = f.tail();
    let (scale, far_radius) = match tail {
        Tail::Compact { radius } => {
            bps.push(radius);
            (radius, r + radius)
        }
        Tail::Power { start, exponent, .. } => {
            if exponent + 2.0 * s <= 0.0 {
                return Err(Error::DivergentIntegral(format!(
                    "profile grows like r^{} which is not integrable against |z|^(-N-2s) with s = {s}",
                    -exponent
                )));
            }
            bps.push(start);
            (start, opts.far_factor * (r + start))
        }
    };
    let fx = f.value(r);
    let mean = |rho: f64| spherical_mean(&|t| f.value(t), r, rho, dim, &bps, &rule);
    let near = opts.near * scale.min(1.0);

    // near field: f(x) - M(rho) ~ c rho^2
    let near_part = (fx - mean(near)) * near.powf(-2.0 * s) / (2.0 - 2.0 * s);

    // mid field over panels split at the kinks of M(rho)
    let mut pts = vec![near, far_radius];
    for &b in &bps {
        for c in [(r - b).abs(), r + b] {
            if c > near && c < far_radius {
                pts.push(c);
            }
        }
    }
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));
    let mut refined = Vec::with_capacity(pts.len() * 4);
    for w in pts.windows(2) {
        refined.push(w[0]);
        let (a, b) = (w[0], w[1]);
        if b / a > 4.0 {
            let k = ((b / a).ln() / 4f64.ln()).ceil() as usize;
            for j in 1..k {
                refined.push(a * (b / a).powf(j as f64 / k as f64));
            }
        }
    }
    refined.push(*pts.last().unwrap());
    let mid = adaptive_pieces(
        |rho| (fx - mean(rho)) * rho.powf(-1.0 - 2.0 * s),
        &refined,
        opts.abs_tol,
        opts.rel_tol,
    )?;

    let far = match tail {
        Tail::Compact { .. } => fx * far_radius.powf(-2.0 * s) / (2.0 * s),
        Tail::Power { coeff, exponent, .. } => {
            fx * far_radius.powf(-2.0 * s) / (2.0 * s)
                - coeff * far_radius.powf(-exponent - 2.0 * s) / (exponent + 2.0 * s)
        }
    };
    Ok(frac_laplacian_constant(dim, s) * sphere_area(dim) * (near_part + mid + far))
}

/// `Gamma_lambda`: the fundamental solution with a paraboloid glued inside
/// `B_lambda` so that it is `C^{1,1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifiedKernel {
    pub dim: usize,
    pub order: f64,
    pub lambda: f64,
    /// Glue coefficients at unit scale: `Gamma_1 = a |x|^2 + b` inside `B_1`.
    pub a: f64,
    pub b: f64,
    inner_a: f64,
    inner_b: f64,
    repulsion: Kernel,
}

impl MollifiedKernel {
    pub fn new(dim: usize, order: f64, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidKernel(format!("lambda = {lambda} must be > 0")));
        }
        let repulsion = Kernel::new(dim, order, Attraction::None, None)?;
        let glue = |l: f64| {
            let a = repulsion.dv(l) / (2.0 * l);
            (a, repulsion.v(l) - a * l * l)
        };
        let (a, b) = glue(1.0);
        let (inner_a, inner_b) = glue(lambda);
        Ok(Self {
            dim,
            order,
            lambda,
            a,
            b,
            inner_a,
            inner_b,
            repulsion,
        })
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.dim, self.order, lambda)
    }

    /// `Gamma_lambda(r)`.
    pub fn value(&self, r: f64) -> f64 {
        if r >= self.lambda {
            self.repulsion.v(r)
        } else {
            self.inner_a * r * r + self.inner_b
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        if r >= self.lambda {
            self.repulsion.dv(r)
        } else {
            2.0 * self.inner_a * r
        }
    }

    /// Mass of `V_s - Gamma_1`, which fixes the tail `gamma_1 ~ C m r^{-N-2s}`.
    fn unit_defect_mass(&self) -> f64 {
        let n = self.dim as f64;
        let s = self.order;
        let c = riesz_constant(self.dim, s);
        sphere_area(self.dim) * (c / (2.0 * s) - self.a / (n + 2.0) - self.b / n)
    }
}

impl RadialProfile for MollifiedKernel {
    fn value(&self, r: f64) -> f64 {
        MollifiedKernel::value(self, r)
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![self.lambda]
    }
    fn tail(&self) -> Tail {
        let p = self.dim as f64 - 2.0 * self.order;
        Tail::Power {
            start: self.lambda,
            coeff: riesz_constant(self.dim, self.order),
            exponent: p,
        }
    }
}

/// `Gamma_lambda` at a point.
pub fn gamma_mollified(k: &MollifiedKernel, x: &[f64]) -> f64 {
    k.value(norm(x))
}

/// `gamma_lambda(x) = (-Delta)^s Gamma_lambda`.
pub fn gamma_density(k: &MollifiedKernel, x: &[f64]) -> Result<f64> {
    gamma_density_radial(k, norm(x))
}

/// Radial form of [`gamma_density`].
pub fn gamma_density_radial(k: &MollifiedKernel, r: f64) -> Result<f64> {
    let lambda = k.lambda;
    if k.order == 1.0 {
        return Ok(if r <= lambda {
            1.0 / crate::quadrature::ball_volume(k.dim, lambda)
        } else {
            0.0
        });
    }
    let unit = if lambda == 1.0 { k.clone() } else { k.with_lambda(1.0)? };
    let g1 = unit_gamma(&unit, r / lambda)?;
    Ok(g1 * lambda.powi(-(k.dim as i32)))
}

fn unit_gamma(unit: &MollifiedKernel, r: f64) -> Result<f64> {
    if r < 1.5 {
        frac_laplacian_radial(unit, r, unit.dim, unit.order, &FracQuadrature::default())
    } else {
        unit_gamma_exterior(unit, r)
    }
}

/// For `|x| > 1`, `(-Delta)^s V_s(x) = 0`, so
/// `gamma_1(x) = C int_{B_1} (V_s - Gamma_1)(y) |x - y|^{-N-2s} dy`.
fn unit_gamma_exterior(unit: &MollifiedKernel, r: f64) -> Result<f64> {
    let dim = unit.dim;
    let s = unit.order;
    let n = dim as f64;
    let c = riesz_constant(dim, s);
    let rule = GaussLegendre::new(32);
    let expo = -n - 2.0 * s;
    let kernel = |t: f64| t.powf(expo);
    // a = u^{1/(2s)} removes the a^{2s-1} endpoint singularity
    let inv = 1.0 / (2.0 * s);
    let integrand = |u: f64| {
        if u <= 0.0 {
            return 0.0;
        }
        let a = u.powf(inv);
        let da = inv * u.powf(inv - 1.0);
        let defect = c * a.powf(2.0 * s - n) - (unit.a * a * a + unit.b);
        let mean = spherical_mean(&kernel, r, a, dim, &[], &rule);
        defect * a.powi(dim as i32 - 1) * da * mean
    };
    let val = adaptive(integrand, 0.0, 1.0, 1e-16, 1e-10)?;
    Ok(frac_laplacian_constant(dim, s) * sphere_area(dim) * val)
}

/// Tabulated `gamma_1` for repeated convolution: linear interpolation on a
/// fine inner grid and a log-spaced outer grid, asymptotic power tail beyond.
#[derive(Debug, Clone)]
pub struct GammaTable {
    pub dim: usize,
    pub order: f64,
    inner_h: f64,
    inner: Vec<f64>,
    outer_r: Vec<f64>,
    outer: Vec<f64>,
    tail_coeff: f64,
}

impl GammaTable {
    pub const INNER_END: f64 = 1.5;
    pub const OUTER_END: f64 = 400.0;

    pub fn new(dim: usize, order: f64) -> Result<Self> {
        let unit = MollifiedKernel::new(dim, order, 1.0)?;
        let n_inner = 300;
        let inner_h = Self::INNER_END / n_inner as f64;
        let inner = (0..=n_inner)
            .map(|i| unit_gamma(&unit, i as f64 * inner_h))
            .collect::<Result<Vec<_>>>()?;
        let n_outer = 160;
        let outer_r: Vec<f64> = (0..=n_outer)
            .map(|i| Self::INNER_END * (Self::OUTER_END / Self::INNER_END).powf(i as f64 / n_outer as f64))
            .collect();
        let outer = outer_r
            .iter()
            .map(|&r| unit_gamma_exterior(&unit, r))
            .collect::<Result<Vec<_>>>()?;
        let tail_coeff = frac_laplacian_constant(dim, order) * unit.unit_defect_mass();
        Ok(Self {
            dim,
            order,
            inner_h,
            inner,
            outer_r,
            outer,
            tail_coeff,
        })
    }

    /// `gamma_1(r)`.
    pub fn unit(&self, r: f64) -> f64 {
        if r < Self::INNER_END {
            let t = r / self.inner_h;
            let i = (t.floor() as usize).min(self.inner.len() - 2);
            let w = t - i as f64;
            (1.0 - w) * self.inner[i] + w * self.inner[i + 1]
        } else if r < Self::OUTER_END {
            // log-log interpolation
            let lr = (r / Self::INNER_END).ln() / (Self::OUTER_END / Self::INNER_END).ln();
            let t = lr * (self.outer_r.len() - 1) as f64;
            let i = (t.floor() as usize).min(self.outer_r.len() - 2);
            let w = t - i as f64;
            (self.outer[i].ln() * (1.0 - w) + self.outer[i + 1].ln() * w).exp()
        } else {
            self.tail_coeff * r.powf(-(self.dim as f64) - 2.0 * self.order)
        }
    }

    /// `gamma_lambda(r) = lambda^{-N} gamma_1(r / lambda)`.
    pub fn scaled(&self, lambda: f64, r: f64) -> f64 {
        self.unit(r / lambda) * lambda.powi(-(self.dim as i32))
    }

    /// Asymptotic coefficient `C` in `gamma_1(r) ~ C r^{-N-2s}`.
    pub fn tail_coeff(&self) -> f64 {
        self.tail_coeff
    }

    /// `int_{R^N} gamma_1`, by quadrature of the table plus the analytic tail.
    pub fn total_mass(&self) -> f64 {
        let n = self.dim as i32;
        let sigma = sphere_area(self.dim);
        let gl = GaussLegendre::new(8);
        let mut acc = 0.0;
        for i in 0..self.inner.len() - 1 {
            let a = i as f64 * self.inner_h;
            acc += gl.integrate(a, a + self.inner_h, |r| self.unit(r) * r.powi(n - 1));
        }
        for w in self.outer_r.windows(2) {
            acc += gl.integrate(w[0], w[1], |r| self.unit(r) * r.powi(n - 1));
        }
        acc += self.tail_coeff * Self::OUTER_END.powf(-2.0 * self.order) / (2.0 * self.order);
        sigma * acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newtonian_values() {
        assert!(eval_v(&[1.0, 0.0]).unwrap().abs() < 1e-15);
        let v1 = eval_v(&[1.0, 0.0, 0.0]).unwrap();
        let v2 = eval_v(&[0.0, 2.0, 0.0]).unwrap();
        assert!((v2 - v1 / 2.0).abs() < 1e-15);
        assert!((v1 - 1.0 / (4.0 * PI)).abs() < 1e-15);
        assert!(matches!(eval_v(&[0.0, 0.0]), Err(Error::SingularPoint(_))));
    }

    #[test]
    fn riesz_constant_matches_newtonian_limit() {
        assert!((riesz_constant(3, 1.0) - 1.0 / (4.0 * PI)).abs() < 1e-14);
        assert!((riesz_constant(2, 0.5) - 1.0 / (2.0 * PI)).abs() < 1e-14);
    }

    #[test]
    fn vs_is_positive_and_homogeneous() {
        let x = [0.3, -0.4];
        let v = eval_vs(&x, 0.5).unwrap();
        let v2 = eval_vs(&[0.6, -0.8], 0.5).unwrap();
        assert!(v > 0.0);
        assert!((v2 - 0.5 * v).abs() < 1e-15);
        assert!(eval_vs(&[0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn attraction_laplacians() {
        let k = Kernel::new(3, 1.0, Attraction::Power { q: 2.0, coeff: 1.0 }, None).unwrap();
        assert!((laplacian_wa(&[0.3, 0.1, 0.2], &k).unwrap() - 3.0).abs() < 1e-14);
        let k = Kernel::newtonian_quadratic(3, 1.0 / 6.0).unwrap();
        assert!((laplacian_wa(&[5.0, 0.0, 0.0], &k).unwrap() - 1.0).abs() < 1e-14);
        let k = Kernel::new(3, 1.0, Attraction::Power { q: 1.0, coeff: 1.0 }, None).unwrap();
        assert!((laplacian_wa(&[0.5, 0.0, 0.0], &k).unwrap() - 4.0).abs() < 1e-14);
        assert!(laplacian_wa(&[0.0, 0.0, 0.0], &k).is_err());
    }

    #[test]
    fn kernel_validation() {
        assert!(Kernel::new(1, 1.0, Attraction::None, None).is_err());
        assert!(Kernel::new(2, 1.5, Attraction::None, None).is_err());
        assert!(Kernel::new(2, 0.5, Attraction::Power { q: 1.5, coeff: 1.0 }, None).is_err());
        assert!(Kernel::new(2, 0.5, Attraction::Power { q: 1.5, coeff: 1.0 }, Some(3.0)).is_ok());
        assert!(Kernel::new(2, 0.5, Attraction::Power { q: 0.5, coeff: 1.0 }, None).is_ok());
    }

    #[test]
    fn log_kernel_is_shifted_nonnegative() {
        // min W = (ln(4 pi K) + 1) / (4 pi) < 0 for small K
        let k = Kernel::newtonian_quadratic(2, 0.01).unwrap();
        assert!(k.offset() > 0.0);
        let min = (1..200000)
            .map(|i| k.w(i as f64 * 1e-4))
            .fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-12 && min < 1e-6, "{min}");
        let k3 = Kernel::newtonian_quadratic(3, 0.25).unwrap();
        assert_eq!(k3.offset(), 0.0);
    }

    #[test]
    fn pair_terms_agree_with_radial_functions() {
        let kernels = [
            Kernel::newtonian_quadratic(3, 0.2).unwrap(),
            Kernel::newtonian_quadratic(2, 0.2).unwrap(),
            Kernel::new(3, 1.0, Attraction::Power { q: 4.0, coeff: 1.0 }, None).unwrap(),
            Kernel::new(2, 0.4, Attraction::Power { q: 0.5, coeff: 2.0 }, None).unwrap(),
            Kernel::new(3, 1.0, Attraction::Power { q: 3.0, coeff: 1.0 }, Some(1.0)).unwrap(),
        ];
        for k in &kernels {
            for &r in &[0.1, 0.7, 2.5, 3.3] {
                let (v, wa, g) = k.pair(r * r);
                assert!((v - k.v(r)).abs() < 1e-12 * v.abs().max(1.0));
                assert!((wa - k.wa(r)).abs() < 1e-12 * wa.abs().max(1.0));
                assert!((g - k.dw(r) / r).abs() < 1e-10 * g.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cutoff_bump_is_c2() {
        let k = Kernel::new(3, 1.0, Attraction::Quadratic { k: 1.0 }, Some(1.0)).unwrap();
        let h = 1e-8;
        for &r in &[2.0, 4.0] {
            let l = k.lap_wa(r - h).unwrap();
            let rr = k.lap_wa(r + h).unwrap();
            assert!((l - rr).abs() < 1e-3, "{r}: {l} vs {rr}");
        }
        assert_eq!(k.wa(5.0), 0.0);
    }

    #[test]
    fn glue_coefficients() {
        let g = MollifiedKernel::new(2, 0.5, 1.0).unwrap();
        let c = riesz_constant(2, 0.5);
        assert!((g.a + c / 2.0).abs() < 1e-15);
        assert!((g.b - 1.5 * c).abs() < 1e-15);
        let g3 = MollifiedKernel::new(3, 1.0, 1.0).unwrap();
        let x = [2.0, 0.0, 0.0];
        assert!((gamma_mollified(&g3, &x) - eval_v(&x).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn newtonian_gamma_is_normalised_indicator() {
        let g = MollifiedKernel::new(3, 1.0, 1.0).unwrap();
        let v = gamma_density(&g, &[0.5, 0.0, 0.0]).unwrap();
        assert!((v - 3.0 / (4.0 * PI)).abs() < 1e-14);
        assert_eq!(gamma_density(&g, &[1.5, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn frac_laplacian_kills_constants() {
        let one = FnProfile {
            f: |_r: f64| 1.0,
            breakpoints: vec![],
            tail: Tail::Power {
                start: 1.0,
                coeff: 1.0,
                exponent: 0.0,
            },
        };
        for &r in &[0.0, 0.4, 2.0] {
            let v = frac_laplacian_radial(&one, r, 2, 0.5, &FracQuadrature::default()).unwrap();
            assert!(v.abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn divergent_tail_is_rejected() {
        let grow = FnProfile {
            f: |r: f64| r * r,
            breakpoints: vec![],
            tail: Tail::Power {
                start: 1.0,
                coeff: 1.0,
                exponent: -2.0,
            },
        };
        assert!(matches!(
            frac_laplacian_radial(&grow, 0.5, 2, 0.5, &FracQuadrature::default()),
            Err(Error::DivergentIntegral(_))
        ));
    }

    fn getoor_profile(s: f64) -> FnProfile<impl Fn(f64) -> f64 + Sync> {
        FnProfile {
            f: move |r: f64| if r < 1.0 { (1.0 - r * r).powf(s) } else { 0.0 },
            breakpoints: vec![1.0],
            tail: Tail::Compact { radius: 1.0 },
        }
    }

    #[test]
    fn getoor_constant_inside_ball() {
        for &(dim, s) in &[(2usize, 0.5), (3, 0.3), (2, 0.8)] {
            let n = dim as f64;
            let exact = 4f64.powf(s) * gamma(1.0 + s) * gamma(n / 2.0 + s) / gamma(n / 2.0);
            for &r in &[0.0, 0.3, 0.7] {
                let v = frac_laplacian_radial(&getoor_profile(s), r, dim, s, &FracQuadrature::default())
                    .unwrap();
                assert!((v / exact - 1.0).abs() < 1e-4, "N={dim} s={s} r={r}: {v} vs {exact}");
            }
        }
    }

    #[test]
    fn unit_gamma_has_unit_mass_and_matching_branches() {
        let t = GammaTable::new(2, 0.5).unwrap();
        assert!((t.total_mass() - 1.0).abs() < 1e-3, "{}", t.total_mass());
        let unit = MollifiedKernel::new(2, 0.5, 1.0).unwrap();
        let pv = frac_laplacian_radial(&unit, 1.4, 2, 0.5, &FracQuadrature::default()).unwrap();
        let direct = unit_gamma_exterior(&unit, 1.4).unwrap();
        assert!((pv / direct - 1.0).abs() < 1e-4, "{pv} vs {direct}");
    }
}
