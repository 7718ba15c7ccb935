//! Particle discretisation of the Wasserstein gradient flow
//! `x_i' = -sum_j w_j grad W(x_i - x_j)`, integrated by explicit Euler with an
//! Armijo-type backtracking line search so that the energy never increases.

use serde::Serialize;

use crate::energy::{interactions, EnergyBreakdown, Interactions};
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::measures::{sample_ball, ParticleCloud};

/// Radius of the ball holding the random initial cloud.
pub const INIT_RADIUS: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub kernel: Kernel,
    pub n: usize,
    pub dt0: f64,
    pub t_max: f64,
    pub tol_velocity: f64,
    pub seed: u64,
    /// Steps bringing two particles closer than this are rejected.
    pub collision_radius: f64,
    /// Hard cap on trial steps (accepted or rejected).
    pub max_trials: usize,
}

impl FlowConfig {
    pub fn new(kernel: Kernel, n: usize) -> Self {
        Self {
            kernel,
            n,
            dt0: 0.1,
            t_max: 100.0,
            tol_velocity: 1e-4,
            seed: 0,
            collision_radius: 1e-6 * INIT_RADIUS,
            max_trials: 100_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n == 0 {
            errs.push("n must be positive".to_string());
        }
        if !(self.dt0 > 0.0 && self.dt0.is_finite()) {
            errs.push(format!("dt0 = {} must be > 0", self.dt0));
        }
        if !(self.tol_velocity > 0.0) {
            errs.push(format!("tol_velocity = {} must be > 0", self.tol_velocity));
        }
        if !(self.t_max > 0.0) {
            errs.push(format!("t_max = {} must be > 0", self.t_max));
        }
        if !(self.collision_radius >= 0.0) {
            errs.push(format!("collision_radius = {} must be >= 0", self.collision_radius));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Seeded uniform cloud in the ball of radius [`INIT_RADIUS`].
    pub fn initial_cloud(&self) -> Result<ParticleCloud> {
        sample_ball(self.kernel.dim(), INIT_RADIUS, self.n, self.seed)
    }
}

/// One accepted state of the flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub t: f64,
    pub energy: EnergyBreakdown,
    pub max_speed: f64,
    /// Step that led to this state (0 for the initial record).
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub records: Vec<TraceRecord>,
    pub final_cloud: ParticleCloud,
    pub converged: bool,
    /// The line search drove the step below `1e-14`.
    pub stalled: bool,
    pub accepted: usize,
    pub rejected: usize,
}

impl FlowTrace {
    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy.total).collect()
    }

    pub fn final_energy(&self) -> EnergyBreakdown {
        self.records.last().expect("trace has an initial record").energy
    }

    /// CSV with columns `t,E,E_r,E_a,max_speed,dt`.
    pub fn write_csv<P: AsRef<std::path::Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "E", "E_r", "E_a", "max_speed", "dt"])?;
        for r in &self.records {
            w.write_record([
                format!("{:e}", r.t),
                format!("{:e}", r.energy.total),
                format!("{:e}", r.energy.repulsive),
                format!("{:e}", r.energy.attractive),
                format!("{:e}", r.max_speed),
                format!("{:e}", r.dt),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn max_speed(it: &Interactions, dim: usize) -> f64 {
    it.grad
        .chunks(dim)
        .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn euler(c: &ParticleCloud, grad: &[f64], dt: f64) -> Vec<f64> {
    c.positions().iter().zip(grad).map(|(x, g)| x - dt * g).collect()
}

fn closest_pair(c: &ParticleCloud, radius: f64) -> Option<(usize, usize)> {
    let r2 = radius * radius;
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            let d2: f64 = c
                .position(i)
                .iter()
                .zip(c.position(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 <= r2 {
                return Some((i, j));
            }
        }
    }
    None
}

/// One explicit Euler step of size `dt`; collisions (pairs at distance
/// `<= collision_radius` after the step) are reported, not resolved.
pub fn step_with(c: &ParticleCloud, k: &Kernel, dt: f64, collision_radius: f64) -> Result<ParticleCloud> {
    if let Some((i, j)) = closest_pair(c, 0.0) {
        return Err(Error::Collision(i, j));
    }
    let it = interactions(c, k, true);
    let next = c.with_positions(euler(c, &it.grad, dt))?;
    if let Some((i, j)) = closest_pair(&next, collision_radius) {
        return Err(Error::Collision(i, j));
    }
    Ok(next)
}

/// One explicit Euler step; only exact coincidences count as collisions.
pub fn step(c: &ParticleCloud, k: &Kernel, dt: f64) -> Result<ParticleCloud> {
    step_with(c, k, dt, 0.0)
}

/// Backtracking gradient flow from `init` until the largest particle speed
/// drops below `tol_velocity` or time reaches `t_max`.
///
/// A trial step is accepted iff it keeps pairs apart by more than the
/// collision radius, strictly decreases the energy, and satisfies
/// `dE <= -dt/2 sum_i w_i |grad psi(x_i)|^2`. Rejection halves `dt`;
/// acceptance multiplies it by 1.2.
pub fn run(cfg: &FlowConfig, init: ParticleCloud) -> Result<FlowTrace> {
    cfg.validate()?;
    let k = &cfg.kernel;
    let dim = init.dim();
    let mut state = init;
    let mut it = interactions(&state, k, true);
    let mut energy = it.breakdown(&state, k);
    if energy.infinite {
        let (i, j) = closest_pair(&state, 0.0).unwrap_or((0, 0));
        return Err(Error::Collision(i, j));
    }
    let mut speed = max_speed(&it, dim);
    let mut records = vec![TraceRecord {
        t: 0.0,
        energy,
        max_speed: speed,
        dt: 0.0,
    }];
    let (mut t, mut dt) = (0.0, cfg.dt0);
    let (mut accepted, mut rejected) = (0, 0);
    let mut converged = false;
    let mut stalled = false;
    let rc2 = cfg.collision_radius * cfg.collision_radius;
    for _ in 0..cfg.max_trials {
        if speed < cfg.tol_velocity {
            converged = true;
            break;
        }
        if t >= cfg.t_max {
            break;
        }
        let slope: f64 = state
            .weights()
            .iter()
            .zip(it.grad.chunks(dim))
            .map(|(w, g)| w * g.iter().map(|x| x * x).sum::<f64>())
            .sum();
        let trial = state.with_positions(euler(&state, &it.grad, dt))?;
        let trial_it = interactions(&trial, k, true);
        let ok = trial_it.min_dist2 > rc2 && {
            let e = trial_it.breakdown(&trial, k);
            !e.infinite && e.total < energy.total && e.total - energy.total <= -0.5 * dt * slope
        };
        if !ok {
            rejected += 1;
            dt *= 0.5;
            if dt < 1e-14 {
                stalled = true;
                break;
            }
            continue;
        }
        accepted += 1;
        t += dt;
        energy = trial_it.breakdown(&trial, k);
        state = trial;
        it = trial_it;
        speed = max_speed(&it, dim);
        records.push(TraceRecord {
            t,
            energy,
            max_speed: speed,
            dt,
        });
        dt *= 1.2;
    }
    if speed < cfg.tol_velocity {
        converged = true;
    }
    Ok(FlowTrace {
        records,
        final_cloud: state,
        converged,
        stalled,
        accepted,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Attraction;

    #[test]
    fn single_particle_is_fixed() {
        let k = Kernel::newtonian_quadratic(3, 1.0).unwrap();
        let c = ParticleCloud::uniform(3, vec![0.2, -0.1, 0.4]).unwrap();
        assert_eq!(step(&c, &k, 0.5).unwrap(), c);
    }

    #[test]
    fn symmetric_pair_stays_symmetric() {
        let k = Kernel::new(2, 1.0, Attraction::Power { q: 2.0, coeff: 1.0 }, None).unwrap();
        let c = ParticleCloud::uniform(2, vec![0.3, 0.1, -0.3, -0.1]).unwrap();
        let next = step(&c, &k, 0.1).unwrap();
        let p = next.positions();
        assert!((p[0] + p[2]).abs() < 1e-15 && (p[1] + p[3]).abs() < 1e-15);
    }

    #[test]
    fn pair_equilibrium_sits_at_kernel_minimum() {
        // N = 3, W = 1/(4 pi r) + r^2/2: W'(L) = 0 at L^3 = 1/(4 pi)
        let k = Kernel::new(3, 1.0, Attraction::Power { q: 2.0, coeff: 1.0 }, None).unwrap();
        let l = (1.0 / (4.0 * std::f64::consts::PI)).powf(1.0 / 3.0);
        assert!(k.dw(l).abs() < 1e-14);
        let c = ParticleCloud::uniform(3, vec![l / 2.0, 0.0, 0.0, -l / 2.0, 0.0, 0.0]).unwrap();
        let mut cfg = FlowConfig::new(k.clone(), 2);
        cfg.tol_velocity = 1e-10;
        let trace = run(&cfg, c).unwrap();
        assert!(trace.converged);
        assert_eq!(trace.accepted, 0);
        let off = ParticleCloud::uniform(3, vec![l, 0.0, 0.0, -l, 0.0, 0.0]).unwrap();
        assert!(step(&off, &k, 0.01).unwrap() != off);
    }

    #[test]
    fn collision_is_reported() {
        let k = Kernel::newtonian_quadratic(3, 1.0).unwrap();
        let c = ParticleCloud::uniform(3, vec![0.0; 6]).unwrap();
        assert!(matches!(step(&c, &k, 0.1), Err(Error::Collision(0, 1))));
    }

    #[test]
    fn small_flow_dissipates_energy() {
        let k = Kernel::newtonian_quadratic(2, 0.25).unwrap();
        let mut cfg = FlowConfig::new(k, 60);
        cfg.t_max = 5.0;
        cfg.seed = 3;
        let init = cfg.initial_cloud().unwrap();
        let c0 = init.center_of_mass();
        let trace = run(&cfg, init).unwrap();
        let e = trace.energies();
        assert!(e.windows(2).all(|w| w[1] < w[0]));
        let c1 = trace.final_cloud.center_of_mass();
        assert!(c0.iter().zip(&c1).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
