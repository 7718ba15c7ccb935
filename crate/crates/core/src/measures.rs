//! Discrete (particle) and radial (grid) probability measures.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::quadrature::{ball_volume, sphere_area};

/// Weighted point cloud in R^N. Positions are stored flat, `dim` entries per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    dim: usize,
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl ParticleCloud {
    pub fn new(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be >= 1".into()));
        }
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidMeasure("cloud must contain at least one particle".into()));
        }
        if positions.len() != n * dim {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates for {n} particles in dimension {dim}",
                positions.len()
            )));
        }
        if let Some(i) = positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure(format!(
                "non-finite coordinate for particle {}",
                i / dim
            )));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidMeasure(format!("weight {i} is not positive")));
        }
        // Naive summation drifts by up to n ulps.
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 + 4.0 * n as f64 * f64::EPSILON {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        Ok(Self {
            dim,
            positions,
            weights,
        })
    }

    /// Equal weights `1/n`.
    pub fn uniform(dim: usize, positions: Vec<f64>) -> Result<Self> {
        if dim == 0 || positions.is_empty() || positions.len() % dim != 0 {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates do not form points in dimension {dim}",
                positions.len()
            )));
        }
        let n = positions.len() / dim;
        Self::new(dim, positions, vec![1.0 / n as f64; n])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when all weights are equal to `1/n` up to rounding.
    pub fn has_uniform_weights(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| (x - w).abs() <= 1e-14 * w.max(1e-300) + 1e-16)
    }

    pub fn center_of_mass(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for (i, w) in self.weights.iter().enumerate() {
            for (ck, xk) in c.iter_mut().zip(self.position(i)) {
                *ck += w * xk;
            }
        }
        c
    }

    pub fn translated(&self, v: &[f64]) -> Self {
        let mut positions = self.positions.clone();
        for p in positions.chunks_mut(self.dim) {
            for (x, d) in p.iter_mut().zip(v) {
                *x += d;
            }
        }
        Self {
            dim: self.dim,
            positions,
            weights: self.weights.clone(),
        }
    }

    /// Translate so the center of mass is the origin.
    pub fn centered(&self) -> Self {
        let c: Vec<f64> = self.center_of_mass().iter().map(|x| -x).collect();
        self.translated(&c)
    }

    /// Push-forward under `x -> lambda x`.
    pub fn dilated(&self, lambda: f64) -> Self {
        Self {
            dim: self.dim,
            positions: self.positions.iter().map(|x| lambda * x).collect(),
            weights: self.weights.clone(),
        }
    }

    /// Replace positions, keeping weights.
    pub fn with_positions(&self, positions: Vec<f64>) -> Result<Self> {
        Self::new(self.dim, positions, self.weights.clone())
    }

    pub fn radius(&self, i: usize) -> f64 {
        self.position(i).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_radius(&self) -> f64 {
        (0..self.len()).map(|i| self.radius(i)).fold(0.0, f64::max)
    }

    /// CSV with columns `x1..xN,weight`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        header.push("weight".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.position(i).iter().map(|x| format!("{x:e}")).collect();
            row.push(format!("{:e}", self.weights[i]));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let dim = header.len().saturating_sub(1);
        if dim == 0 || header.get(dim) != Some("weight") {
            return Err(Error::InvalidMeasure(
                "cloud CSV needs columns x1..xN,weight".into(),
            ));
        }
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidMeasure(format!("row {}: {e}", line + 1)))?;
            if vals.len() != dim + 1 {
                return Err(Error::InvalidMeasure(format!("row {} has {} columns", line + 1, vals.len())));
            }
            positions.extend_from_slice(&vals[..dim]);
            weights.push(vals[dim]);
        }
        Self::new(dim, positions, weights)
    }
}

/// Weighted mean and `int |x|^2 dmu` about the origin.
pub fn moments(c: &ParticleCloud) -> (Vec<f64>, f64) {
    let second = (0..c.len()).map(|i| c.weights[i] * c.radius(i).powi(2)).sum();
    (c.center_of_mass(), second)
}

/// Uniform radial grid `r_i = i h`, `i = 0..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    pub h: f64,
    pub m: usize,
}

impl RadialGrid {
    pub fn new(h: f64, length: f64) -> Result<Self> {
        if !(h > 0.0 && length > h) {
            return Err(Error::InvalidMeasure(format!("grid needs 0 < h < L (h = {h}, L = {length})")));
        }
        let m = (length / h).round() as usize;
        Ok(Self { h, m })
    }

    pub fn len(&self) -> usize {
        self.m + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn length(&self) -> f64 {
        self.m as f64 * self.h
    }

    pub fn r(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn radii(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.r(i)).collect()
    }

    /// Node-centred control shell `[r_i - h/2, r_i + h/2]` clipped to `[0, L]`.
    pub fn shell(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 { 0.0 } else { self.r(i) - 0.5 * self.h };
        let hi = if i == self.m { self.length() } else { self.r(i) + 0.5 * self.h };
        (lo, hi)
    }

    /// `int_{shell_i} |x|^k dx`.
    pub fn shell_moment(&self, dim: usize, i: usize, k: f64) -> f64 {
        let (a, b) = self.shell(i);
        let e = dim as f64 + k;
        sphere_area(dim) * (b.powf(e) - a.powf(e)) / e
    }

    pub fn shell_volume(&self, dim: usize, i: usize) -> f64 {
        let (a, b) = self.shell(i);
        ball_volume(dim, b) - ball_volume(dim, a)
    }

    /// Node index whose control shell contains radius `r`.
    pub fn cell_of(&self, r: f64) -> usize {
        (((r / self.h) + 0.5).floor() as usize).min(self.m)
    }
}

/// Radially symmetric density sampled at grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialDensity {
    pub dim: usize,
    pub grid: RadialGrid,
    pub values: Vec<f64>,
}

impl RadialDensity {
    pub fn new(dim: usize, grid: RadialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} values on a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("density value {i} is negative or non-finite")));
        }
        Ok(Self { dim, grid, values })
    }

    /// Density of `mass / |B_R|` on `B_R`, zero outside.
    pub fn ball(dim: usize, grid: RadialGrid, radius: f64, mass: f64) -> Result<Self> {
        let level = mass / ball_volume(dim, radius);
        let values = grid
            .radii()
            .iter()
            .map(|&r| if r <= radius { level } else { 0.0 })
            .collect();
        Self::new(dim, grid, values)
    }

    /// `int |x|^k rho dx` over node-centred control shells.
    pub fn moment(&self, k: f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.grid.shell_moment(self.dim, i, k))
            .sum()
    }

    pub fn mass(&self) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| v * self.grid.shell_volume(self.dim, i))
            .sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.moment(2.0)
    }

    /// Linear interpolation; zero beyond the grid.
    pub fn value_at(&self, r: f64) -> f64 {
        let t = r / self.grid.h;
        if t >= self.grid.m as f64 {
            return if t == self.grid.m as f64 { self.values[self.grid.m] } else { 0.0 };
        }
        let i = t.floor() as usize;
        let w = t - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    /// Outermost radius whose control shell carries mass.
    pub fn support_radius(&self) -> f64 {
        match self.values.iter().rposition(|&v| v > 0.0) {
            Some(i) => self.grid.shell(i).1,
            None => 0.0,
        }
    }

    /// `L^1(R^N)` distance between two densities on the same grid.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.grid != other.grid || self.dim != other.dim {
            return Err(Error::InvalidMeasure("densities live on different grids".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(i, (a, b))| (a - b).abs() * self.grid.shell_volume(self.dim, i))
            .sum())
    }

    /// Cumulative mass up to the outer edge of each shell.
    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                acc += v * self.grid.shell_volume(self.dim, i);
                acc
            })
            .collect()
    }

    /// Radius enclosing mass fraction `u` of the total (inverse CDF, uniform
    /// in `r^N` inside a shell).
    pub fn quantile(&self, u: f64) -> f64 {
        let cdf = self.cumulative();
        self.quantile_with(&cdf, u)
    }

    fn quantile_with(&self, cdf: &[f64], u: f64) -> f64 {
        let total = *cdf.last().unwrap();
        let target = u.clamp(0.0, 1.0) * total;
        let i = cdf.partition_point(|&c| c < target).min(cdf.len() - 1);
        let before = if i == 0 { 0.0 } else { cdf[i - 1] };
        let cell = cdf[i] - before;
        let (a, b) = self.grid.shell(i);
        let frac = if cell > 0.0 { ((target - before) / cell).clamp(0.0, 1.0) } else { 0.0 };
        let n = self.dim as i32;
        (a.powi(n) + frac * (b.powi(n) - a.powi(n))).powf(1.0 / self.dim as f64)
    }

    /// CSV with columns `r,rho`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["r", "rho"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([format!("{:e}", self.grid.r(i)), format!("{v:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P, dim: usize) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut radii = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| Error::InvalidMeasure("radial CSV needs columns r,rho".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidMeasure(e.to_string()))
            };
            radii.push(parse(0)?);
            values.push(parse(1)?);
        }
        if radii.len() < 2 || radii[0] != 0.0 {
            return Err(Error::InvalidMeasure("radial grid must start at r = 0".into()));
        }
        let h = radii[1];
        for (i, r) in radii.iter().enumerate() {
            if (r - i as f64 * h).abs() > 1e-9 * h.max(*r) {
                return Err(Error::InvalidMeasure("radial grid must be uniform".into()));
            }
        }
        let grid = RadialGrid { h, m: radii.len() - 1 };
        Self::new(dim, grid, values)
    }
}

/// Bin particle mass by radius into node-centred shells and divide by shell
/// volume. The cloud is recentred first.
pub fn radial_project(c: &ParticleCloud, grid: &RadialGrid) -> Result<RadialDensity> {
    let c = c.centered();
    let max_radius = c.max_radius();
    if max_radius > grid.length() {
        return Err(Error::GridTooSmall {
            max_radius,
            grid_end: grid.length(),
        });
    }
    let mut mass = vec![0.0; grid.len()];
    for i in 0..c.len() {
        mass[grid.cell_of(c.radius(i))] += c.weights[i];
    }
    let values = mass
        .iter()
        .enumerate()
        .map(|(i, m)| m / grid.shell_volume(c.dim, i))
        .collect();
    RadialDensity::new(c.dim, grid.clone(), values)
}

/// Uniformly distributed unit vector (normalised Gaussian).
pub fn random_direction<R: Rng>(rng: &mut R, dim: usize, out: &mut [f64]) {
    loop {
        let mut n2 = 0.0;
        for x in out.iter_mut().take(dim) {
            *x = rng.sample(StandardNormal);
            n2 += *x * *x;
        }
        if n2 > 1e-300 {
            let inv = 1.0 / n2.sqrt();
            out.iter_mut().for_each(|x| *x *= inv);
            return;
        }
    }
}

/// `n` equal-weight particles with radii drawn by inverse CDF from `d` and
/// uniform directions; deterministic in `seed`.
pub fn sample_radial(d: &RadialDensity, n: usize, seed: u64) -> Result<ParticleCloud> {
    if n == 0 {
        return Err(Error::InvalidMeasure("cannot sample zero particles".into()));
    }
    let cdf = d.cumulative();
    if !(*cdf.last().unwrap() > 0.0) {
        return Err(Error::InvalidMeasure("density has no mass".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = vec![0.0; n * d.dim];
    for p in positions.chunks_mut(d.dim) {
        let r = d.quantile_with(&cdf, rng.gen::<f64>());
        random_direction(&mut rng, d.dim, p);
        p.iter_mut().for_each(|x| *x *= r);
    }
    ParticleCloud::uniform(d.dim, positions)
}

/// `n` equal-weight particles uniform in the ball `B_R`.
pub fn sample_ball(dim: usize, radius: f64, n: usize, seed: u64) -> Result<ParticleCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = vec![0.0; n * dim];
    for p in positions.chunks_mut(dim) {
        let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
        random_direction(&mut rng, dim, p);
        p.iter_mut().for_each(|x| *x *= r);
    }
    ParticleCloud::uniform(dim, positions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_clouds() {
        assert!(ParticleCloud::new(2, vec![0.0, 0.0], vec![0.5]).is_err());
        assert!(ParticleCloud::new(2, vec![f64::NAN, 0.0], vec![1.0]).is_err());
        assert!(ParticleCloud::new(1, vec![0.0, 1.0], vec![1.5, -0.5]).is_err());
        assert!(ParticleCloud::new(1, vec![], vec![]).is_err());
    }

    #[test]
    fn trivial_moments() {
        let c = ParticleCloud::uniform(3, vec![0.0; 3]).unwrap();
        let (m, s) = moments(&c);
        assert_eq!(m, vec![0.0; 3]);
        assert_eq!(s, 0.0);
        let c = ParticleCloud::uniform(2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let (m, s) = moments(&c);
        assert!(m.iter().all(|x| x.abs() < 1e-15));
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn grid_shells_tile_the_ball() {
        let g = RadialGrid::new(0.01, 2.0).unwrap();
        let total: f64 = (0..g.len()).map(|i| g.shell_volume(3, i)).sum();
        assert!((total - ball_volume(3, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn projection_of_point_mass() {
        let c = ParticleCloud::uniform(3, vec![0.0; 3]).unwrap();
        let g = RadialGrid::new(0.1, 1.0).unwrap();
        let d = radial_project(&c, &g).unwrap();
        assert!(d.values[0] > 0.0 && d.values[1..].iter().all(|&v| v == 0.0));
        assert!((d.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_short_grid() {
        let c = ParticleCloud::uniform(2, vec![3.0, 0.0, -3.0, 0.0]).unwrap();
        let g = RadialGrid::new(0.1, 1.0).unwrap();
        assert!(matches!(radial_project(&c, &g), Err(Error::GridTooSmall { .. })));
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = RadialGrid::new(0.01, 1.0).unwrap();
        let d = RadialDensity::ball(2, g, 0.5, 1.0).unwrap();
        let a = sample_radial(&d, 100, 7).unwrap();
        let b = sample_radial(&d, 100, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.max_radius() <= 0.505 + 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf_of_ball() {
        let g = RadialGrid::new(0.01, 1.0).unwrap();
        let d = RadialDensity::ball(3, g, 0.5, 1.0).unwrap();
        // the grid ball ends at the shell edge 0.505
        let r = d.quantile(0.5);
        assert!((r - 0.505 * 0.5f64.powf(1.0 / 3.0)).abs() < 1e-12, "{r}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample_ball(3, 1.0, 20, 3).unwrap();
        let p = dir.path().join("c.csv");
        c.write_csv(&p).unwrap();
        let back = ParticleCloud::read_csv(&p).unwrap();
        assert_eq!(back.len(), 20);
        for (x, y) in c.positions().iter().zip(back.positions()) {
            assert!((x - y).abs() < 1e-14 * x.abs().max(1.0));
        }
        let g = RadialGrid::new(0.05, 1.0).unwrap();
        let d = RadialDensity::ball(3, g, 0.5, 1.0).unwrap();
        let q = dir.path().join("d.csv");
        d.write_csv(&q).unwrap();
        let back = RadialDensity::read_csv(&q, 3).unwrap();
        assert_eq!(back.grid.m, d.grid.m);
        assert!((back.mass() - d.mass()).abs() < 1e-12);
    }
}
