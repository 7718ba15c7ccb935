//! Exact optimal-transport distances between equal-weight particle clouds:
//! `d_p` for finite `p` by the Hungarian algorithm and the bottleneck
//! distance `d_inf` by threshold search with Hopcroft–Karp matching.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::ParticleCloud;

/// Optimal pairing `i -> permutation[i]` between two clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub permutation: Vec<usize>,
    /// `(1/n) sum |x_i - y_sigma(i)|^p` for the requested `p` (the bottleneck for `p = inf`).
    pub cost_p: f64,
    /// Largest matched distance.
    pub bottleneck: f64,
}

/// Exponent selector for [`dp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl std::str::FromStr for Exponent {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "Inf" => Ok(Self::Infinity),
            t => match t.parse::<f64>() {
                Ok(p) if p >= 1.0 && p.is_finite() => Ok(Self::Finite(p)),
                _ => Err(Error::Config(vec![format!("invalid transport exponent '{s}'")])),
            },
        }
    }
}

fn check(a: &ParticleCloud, b: &ParticleCloud) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::IncompatibleClouds(format!("sizes {} and {}", a.len(), b.len())));
    }
    if a.dim() != b.dim() {
        return Err(Error::IncompatibleClouds(format!(
            "dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    if !a.has_uniform_weights() || !b.has_uniform_weights() {
        return Err(Error::IncompatibleClouds("exact distances need equal weights".into()));
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn distance_matrix(a: &ParticleCloud, b: &ParticleCloud) -> Vec<f64> {
    let n = a.len();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let x = a.position(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = dist(x, b.position(j));
        }
    });
    d
}

/// Evaluate a given pairing: `((1/n) sum d^p, max d)`, summed in index order.
pub fn coupling_cost(a: &ParticleCloud, b: &ParticleCloud, perm: &[usize], p: f64) -> (f64, f64) {
    let n = a.len();
    let mut acc = 0.0;
    let mut max = 0.0f64;
    for (i, &j) in perm.iter().enumerate() {
        let d = dist(a.position(i), b.position(j));
        acc += d.powf(p);
        max = max.max(d);
    }
    (acc / n as f64, max)
}

/// Minimum-cost perfect assignment for a dense `n x n` cost matrix (row major);
/// returns `row -> column`.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    // shortest augmenting path with potentials, 1-based sentinels
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            let row = &cost[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Exact `d_p` for finite `p >= 1`.
pub fn dp(a: &ParticleCloud, b: &ParticleCloud, p: f64) -> Result<(f64, Matching)> {
    check(a, b)?;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::IncompatibleClouds(format!("exponent p = {p} must be finite and >= 1")));
    }
    let n = a.len();
    let d = distance_matrix(a, b);
    let cost: Vec<f64> = if p == 2.0 {
        d.iter().map(|x| x * x).collect()
    } else {
        d.iter().map(|x| x.powf(p)).collect()
    };
    let perm = hungarian(&cost, n);
    let (cost_p, bottleneck) = coupling_cost(a, b, &perm, p);
    Ok((
        cost_p.powf(1.0 / p),
        Matching {
            permutation: perm,
            cost_p,
            bottleneck,
        },
    ))
}

/// Exact quadratic Wasserstein distance.
pub fn d2(a: &ParticleCloud, b: &ParticleCloud) -> Result<(f64, Matching)> {
    dp(a, b, 2.0)
}

/// Hopcroft–Karp maximum matching on the graph `d[i][j] <= t`.
fn perfect_matching(d: &[f64], n: usize, t: f64) -> Option<Vec<usize>> {
    const NIL: usize = usize::MAX;
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| d[i * n + j] <= t).collect())
        .collect();
    let mut match_l = vec![NIL; n];
    let mut match_r = vec![NIL; n];
    let mut layer = vec![0usize; n];
    let mut size = 0;
    loop {
        // BFS layering from free left vertices
        let mut queue = VecDeque::new();
        let mut found = false;
        for i in 0..n {
            if match_l[i] == NIL {
                layer[i] = 0;
                queue.push_back(i);
            } else {
                layer[i] = usize::MAX;
            }
        }
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                let k = match_r[j];
                if k == NIL {
                    found = true;
                } else if layer[k] == usize::MAX {
                    layer[k] = layer[i] + 1;
                    queue.push_back(k);
                }
            }
        }
        if !found {
            break;
        }
        for i in 0..n {
            if match_l[i] == NIL && augment(i, &adj, &mut match_l, &mut match_r, &mut layer) {
                size += 1;
            }
        }
    }
    (size == n).then_some(match_l)
}

fn augment(
    i: usize,
    adj: &[Vec<usize>],
    match_l: &mut [usize],
    match_r: &mut [usize],
    layer: &mut [usize],
) -> bool {
    for &j in &adj[i] {
        let k = match_r[j];
        let ok = k == usize::MAX
            || (layer[k] == layer[i] + 1 && augment(k, adj, match_l, match_r, layer));
        if ok {
            match_l[i] = j;
            match_r[j] = i;
            return true;
        }
    }
    layer[i] = usize::MAX;
    false
}

/// Exact bottleneck distance `d_inf`: the smallest pairwise distance `t`
/// admitting a perfect matching within distance `t`.
pub fn dinf(a: &ParticleCloud, b: &ParticleCloud) -> Result<(f64, Matching)> {
    check(a, b)?;
    let n = a.len();
    let d = distance_matrix(a, b);
    let mut sorted = d.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sorted.dedup();
    // invariant: sorted[hi] feasible; everything below lo infeasible
    let (mut lo, mut hi) = (0usize, sorted.len() - 1);
    let mut best = perfect_matching(&d, n, sorted[hi]).expect("complete graph has a perfect matching");
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        match perfect_matching(&d, n, sorted[mid]) {
            Some(m) => {
                hi = mid;
                best = m;
            }
            None => lo = mid + 1,
        }
    }
    let (_, bottleneck) = coupling_cost(a, b, &best, 1.0);
    Ok((
        sorted[hi],
        Matching {
            permutation: best,
            cost_p: bottleneck,
            bottleneck,
        },
    ))
}

/// `d_p` or `d_inf` by exponent.
pub fn distance(a: &ParticleCloud, b: &ParticleCloud, p: Exponent) -> Result<(f64, Matching)> {
    match p {
        Exponent::Finite(p) => dp(a, b, p),
        Exponent::Infinity => dinf(a, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> ParticleCloud {
        ParticleCloud::uniform(1, xs.to_vec()).unwrap()
    }

    #[test]
    fn identical_clouds_are_at_distance_zero() {
        let a = line(&[0.0, 1.0, 3.0]);
        let (d, m) = d2(&a, &a).unwrap();
        assert_eq!(d, 0.0);
        assert_eq!(m.permutation, vec![0, 1, 2]);
        assert_eq!(dinf(&a, &a).unwrap().0, 0.0);
    }

    #[test]
    fn two_point_example() {
        let a = line(&[0.0, 1.0]);
        let b = line(&[0.9, 2.0]);
        let (d, _) = d2(&a, &b).unwrap();
        assert!((d - ((0.81f64 + 1.0) / 2.0).sqrt()).abs() < 1e-15);
        let (b_inf, m) = dinf(&a, &b).unwrap();
        assert_eq!(b_inf, 1.0);
        assert_eq!(m.permutation, vec![0, 1]);
    }

    #[test]
    fn incompatible_clouds() {
        let a = line(&[0.0, 1.0]);
        let b = line(&[0.0, 1.0, 2.0]);
        assert!(matches!(d2(&a, &b), Err(Error::IncompatibleClouds(_))));
        let w = ParticleCloud::new(1, vec![0.0, 1.0], vec![0.3, 0.7]).unwrap();
        assert!(matches!(dinf(&a, &w), Err(Error::IncompatibleClouds(_))));
    }

    #[test]
    fn hungarian_small_matrix() {
        let cost = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = hungarian(&cost, 3);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i * 3 + j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn exponent_parsing() {
        assert_eq!("inf".parse::<Exponent>().unwrap(), Exponent::Infinity);
        assert_eq!("4".parse::<Exponent>().unwrap(), Exponent::Finite(4.0));
        assert!("0.5".parse::<Exponent>().is_err());
    }
}
